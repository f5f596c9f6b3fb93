//! Adaptive Simpson quadrature.
//!
//! Used by the test suites as an integrator independent of the production
//! quadratures (Gauss-Hermite, trapezoid-in-log); the pricing code itself
//! never calls it.

/// Number of uniform panels the interval is cut into before adaptive
/// refinement starts. Without this, a narrow peak (e.g. a transition density
/// whose standard deviation is a fraction of a percent of the integration
/// range) can fall between the three initial Simpson nodes and the recursion
/// terminates immediately on an all-zero estimate.
const INITIAL_PANELS: usize = 16;

/// Integrate `f` over `[a, b]` with absolute tolerance `tol`: a fixed
/// uniform pre-split into panels, then recursive Simpson subdivision with
/// Richardson correction inside each panel.
///
/// Panics if `tol <= 0`; `a > b` integrates with a sign flip as usual.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    assert!(tol > 0.0, "tolerance must be positive");
    if a == b {
        return 0.0;
    }
    if a > b {
        return -adaptive_simpson(f, b, a, tol);
    }
    let panel_tol = tol / INITIAL_PANELS as f64;
    let width = (b - a) / INITIAL_PANELS as f64;
    let mut total = 0.0;
    for i in 0..INITIAL_PANELS {
        let lo = a + i as f64 * width;
        let hi = if i + 1 == INITIAL_PANELS {
            b
        } else {
            a + (i + 1) as f64 * width
        };
        let flo = f(lo);
        let fhi = f(hi);
        let m = 0.5 * (lo + hi);
        let fm = f(m);
        let whole = simpson(lo, hi, flo, fm, fhi);
        total += recurse(f, lo, hi, flo, fm, fhi, whole, panel_tol, 56);
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        // Richardson extrapolation: Simpson error shrinks 16x per halving.
        left + right + delta / 15.0
    } else {
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
