//! Quadrature kernels for the one-period conditional expectation
//!
//! ```text
//! V(t⁺, x, W, A) = E[ D(t,u) · V(u, X(u), W(u), A) | X(t) = x ]
//! ```
//!
//! evaluated on the whole lattice (the hot path of backward induction) or at
//! a single off-grid state (used for intra-period marks and deltas).
//!
//! Black-Scholes: Gauss-Hermite on the log-return; the risk-factor axis is
//! collapsed because the transition only multiplies wealth. Either the
//! real-world stochastic discount factor `S(t)/S(u)` or the equivalent
//! driftless risk-neutral dynamics can be selected; the two discretizations
//! must agree to quadrature accuracy.
//!
//! Minimal market model: trapezoid over the Y-axis in its natural (log)
//! coordinate against the noncentral chi-squared transition density, with
//! the surviving tail masses outside the truncated node range lumped onto
//! the boundary nodes (the masses come from the analytic distribution
//! function, so truncation never loses probability). The discount factor
//! `e^{-eta dt} Y(t)/Y(u)` times the trapezoid weight `h·y_j` is finite even
//! as `y_j` approaches zero because the `y_j` factors cancel.

use super::grid::{lerp_index, GridSpec, Tensor3, WealthLayout};
use crate::contract::ContractSpec;
use crate::market::{mmm_transition, ModelParams, TransitionKind};
use crate::numerics::gauss_hermite;
use crate::{EngineError, Result};

/// Largest tolerated gap between total quadrature mass and 1, per source
/// node. Beyond this the step refuses to proceed and reports diagnostics.
pub(crate) const MASS_TOLERANCE: f64 = 1e-6;

/// A mass defect counts as boundary-induced when the analytic tail lumps
/// carry at least this fraction of it: the transition then materially
/// overlaps an axis end and the residual defect comes from the lumped-tail
/// boundary condition, not from grid resolution. Truncation-end lumps are
/// ~1e-8 at most, so a genuine resolution failure can never hide behind
/// them.
const BOUNDARY_LUMP_FRACTION: f64 = 0.1;

/// Per-destination contributions below this mass are truncated (their tail
/// probability is folded into the boundary lumps analytically).
const TRUNCATION_MASS: f64 = 1e-13;

/// Which arrangement of the Black-Scholes expectation to discretize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BsmMeasure {
    /// Real-world transition law weighted by the pathwise SDF `S(t)/S(u)`.
    #[default]
    RealWorldSdf,
    /// Driftless (risk-neutral) index dynamics, unit discounting.
    RiskNeutral,
}

/// Aggregated numerical health counters for one backward step.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepDiagnostics {
    /// Worst `|1 - total quadrature mass|` across source nodes.
    pub worst_mass_deficit: f64,
    /// Wealth images clamped at the top of the axis (with non-trivial mass).
    pub wealth_clamps: u64,
}

/// One destination of a discretized transition: quadrature coefficient
/// (weight × density × SDF), destination risk-factor row, and the wealth
/// ratio applied to the source wealth.
struct Contribution {
    dest_row: usize,
    coeff: f64,
    wealth_ratio: f64,
}

/// Discretized transition from one source risk-factor node: all destination
/// contributions plus the probability-mass audit.
struct SourceQuadrature {
    contributions: Vec<Contribution>,
    total_mass: f64,
    /// Probability carried by the analytic tail lumps at the axis ends.
    lump_mass: f64,
}

/// Build the Black-Scholes quadrature (source-independent).
fn bsm_quadrature(
    sigma: f64,
    dt: f64,
    fee_factor: f64,
    n_nodes: usize,
    measure: BsmMeasure,
) -> Result<SourceQuadrature> {
    let gh = gauss_hermite(n_nodes)?;
    let sd = sigma * dt.sqrt();
    let half_var = 0.5 * sd * sd;
    let mut contributions = Vec::with_capacity(n_nodes);
    let mut total_mass = 0.0;
    for (&z, &w) in gh.nodes.iter().zip(gh.weights.iter()) {
        let (coeff, ratio) = match measure {
            BsmMeasure::RealWorldSdf => {
                // Real-world log-return has drift +sigma^2 dt/2; the SDF is
                // the reciprocal of the index ratio.
                let r = (half_var + sd * z).exp();
                (w / r, r)
            }
            BsmMeasure::RiskNeutral => {
                // Driftless index: log-return drift -sigma^2 dt/2, weight 1.
                (w, (-half_var + sd * z).exp())
            }
        };
        total_mass += w;
        contributions.push(Contribution {
            dest_row: 0,
            coeff,
            wealth_ratio: ratio * fee_factor,
        });
    }
    Ok(SourceQuadrature {
        contributions,
        total_mass,
        lump_mass: 0.0,
    })
}

/// Build the MMM quadrature from source node `y_src` over horizon `dt`:
/// trapezoid-in-log across the truncated destination range plus boundary
/// tail lumps.
fn mmm_quadrature(
    params: &crate::market::MmmParams,
    y_axis: &[f64],
    y_src: f64,
    dt: f64,
    fee_factor: f64,
) -> Result<SourceQuadrature> {
    let law = mmm_transition(params, y_src, 0.0, dt)?;
    let TransitionKind::Mmm(tr) = &law.kind else {
        unreachable!("mmm_transition returns an MMM law");
    };
    let n = y_axis.len();
    let decay = (-params.eta * dt).exp();
    let growth = (params.eta * dt).exp();

    // Density at every destination node, then truncate to where the
    // per-node mass is material. The node nearest the conditional mean is
    // force-included so a distribution narrower than one grid cell still
    // anchors somewhere sensible.
    let mut dens = Vec::with_capacity(n);
    for &y in y_axis {
        dens.push(tr.density(y)?);
    }
    let lus: Vec<f64> = y_axis.iter().map(|y| y.ln()).collect();
    let mut js = n;
    let mut je = 0;
    for j in 0..n {
        // Local spacing estimate for the thresholding only.
        let spacing = 0.5 * (lus[(j + 1).min(n - 1)] - lus[j.saturating_sub(1)]);
        if dens[j] * spacing * y_axis[j] > TRUNCATION_MASS {
            js = js.min(j);
            je = je.max(j);
        }
    }
    let anchor = y_axis.partition_point(|&y| y < law.mean).min(n - 1);
    js = js.min(anchor);
    je = je.max(anchor);

    // Trapezoid in u = ln y over [js, je] (one-sided at the range ends, the
    // Jacobian y_j folded into each weight), with the analytic tail masses
    // outside the range lumped onto the end nodes. A one-node range has no
    // interior; the lumps then carry all the mass.
    let mut node_mass = vec![0.0; je - js + 1];
    for j in js..=je {
        let lo = if j == js { lus[js] } else { lus[j - 1] };
        let hi = if j == je { lus[je] } else { lus[j + 1] };
        node_mass[j - js] = 0.5 * (hi - lo) * y_axis[j] * dens[j];
    }
    // Second-order end correction (Gregory weights h·{3/8, 7/6, 23/24, 1, …}):
    // the plain trapezoid carries an O(h²) boundary term where the density
    // is still materially nonzero at a range end — which happens when the
    // distribution runs into the edge of the axis. The finite-difference
    // correction is only meaningful where the integrand's log-slope is
    // resolved by the spacing (node-to-node ratio bounded by ~e); on a
    // steep truncation tail the stencil would inject noise far larger than
    // the boundary term it models, so those ends keep the plain weights.
    // Requires uniform spacing in log-space and enough nodes that the two
    // end stencils do not overlap.
    let m = je - js;
    if m >= 6 {
        let h = (lus[je] - lus[js]) / m as f64;
        let uniform = (js..je).all(|j| (lus[j + 1] - lus[j] - h).abs() <= 1e-9 * h);
        if uniform {
            let f = |j: usize| y_axis[j] * dens[j];
            let factors = [0.75, 7.0 / 6.0, 23.0 / 24.0];
            if f(js) > 0.0 && f(js + 1) <= 3.0 * f(js) {
                for (offset, factor) in factors.iter().enumerate() {
                    node_mass[offset] *= factor;
                }
            }
            if f(je) > 0.0 && f(je - 1) <= 3.0 * f(je) {
                for (offset, factor) in factors.iter().enumerate() {
                    node_mass[m - offset] *= factor;
                }
            }
        }
    }
    let lump_lo = tr.cdf(y_axis[js])?;
    let lump_hi = tr.sf(y_axis[je])?;
    node_mass[0] += lump_lo;
    node_mass[je - js] += lump_hi;

    let mut total_mass = 0.0;
    let mut contributions = Vec::with_capacity(je - js + 1);
    for j in js..=je {
        let mass = node_mass[j - js];
        total_mass += mass;
        if mass == 0.0 {
            continue;
        }
        let sdf = decay * y_src / y_axis[j];
        contributions.push(Contribution {
            dest_row: j,
            coeff: mass * sdf,
            wealth_ratio: growth * (y_axis[j] / y_src) * fee_factor,
        });
    }
    Ok(SourceQuadrature {
        contributions,
        total_mass,
        lump_mass: lump_lo + lump_hi,
    })
}

/// Accumulate `out += coeff * next(W * ratio)` over a full (wealth ×
/// guarantee) slab, using the constant-log-shift fast path when the positive
/// wealth nodes are geometric, and generic per-row interpolation otherwise.
///
/// `out` is the slab at the source risk-factor row; `next` the slab at the
/// destination row. Row 0 is the absorbing W = 0 state.
#[allow(clippy::too_many_arguments)]
fn accumulate_scaled(
    out: &mut [f64],
    next: &[f64],
    wealth_nodes: &[f64],
    layout: &WealthLayout,
    n_a: usize,
    coeff: f64,
    ratio: f64,
    clamps: &mut u64,
) {
    debug_assert!(ratio > 0.0 && coeff >= 0.0);
    if coeff == 0.0 {
        return;
    }
    // W = 0 maps to itself.
    axpy(&mut out[..n_a], &next[..n_a], coeff);

    let n_pos = layout.n_pos;
    if let Some(h) = layout.log_step {
        let delta = ratio.ln() / h;
        let k0 = delta.floor();
        let phi = delta - k0;
        let k0 = k0 as i64;
        // Linear-in-wealth blend weight toward the upper node.
        let f_hi = ((h * phi).exp() - 1.0) / (h.exp() - 1.0);
        let f_lo = 1.0 - f_hi;
        let mut clamped_here = false;
        for jw in 1..=n_pos {
            let s = jw as i64 + k0;
            let o = jw * n_a;
            let out_row = &mut out[o..o + n_a];
            if s <= 0 {
                // Image below the smallest positive node: blend the
                // absorbing row with node 1, linearly in wealth.
                let pos_img = (s - 1) as f64 + phi; // log-position of image
                let w_hi = (h * pos_img).exp();
                blend_axpy(out_row, &next[..n_a], &next[n_a..2 * n_a], coeff, 1.0 - w_hi, w_hi);
            } else if (s as usize) < n_pos {
                let r1 = s as usize * n_a;
                blend_axpy(
                    out_row,
                    &next[r1..r1 + n_a],
                    &next[r1 + n_a..r1 + 2 * n_a],
                    coeff,
                    f_lo,
                    f_hi,
                );
            } else {
                let top = n_pos * n_a;
                axpy(out_row, &next[top..top + n_a], coeff);
                clamped_here = true;
            }
        }
        if clamped_here && coeff > 1e-12 {
            *clamps += 1;
        }
    } else {
        let mut clamped_here = false;
        for jw in 1..=n_pos {
            let image = wealth_nodes[jw] * ratio;
            let (lo, w_hi) = lerp_index(wealth_nodes, image);
            if image > *wealth_nodes.last().expect("nonempty") {
                clamped_here = true;
            }
            let o = jw * n_a;
            let out_row = &mut out[o..o + n_a];
            let r1 = lo * n_a;
            blend_axpy(
                out_row,
                &next[r1..r1 + n_a],
                &next[r1 + n_a..r1 + 2 * n_a],
                coeff,
                1.0 - w_hi,
                w_hi,
            );
        }
        if clamped_here && coeff > 1e-12 {
            *clamps += 1;
        }
    }
}

#[inline]
fn axpy(out: &mut [f64], x: &[f64], a: f64) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn blend_axpy(out: &mut [f64], lo: &[f64], hi: &[f64], coeff: f64, w_lo: f64, w_hi: f64) {
    let a = coeff * w_lo;
    let b = coeff * w_hi;
    for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
        *o += a * l + b * h;
    }
}

/// One backward expectation over the whole lattice: from the value tensor at
/// the later date to the post-withdrawal tensor at the earlier date.
pub(crate) fn backward_slabs(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    next_values: &Tensor3<f64>,
    dt: f64,
    measure: BsmMeasure,
) -> Result<(Tensor3<f64>, StepDiagnostics)> {
    let [n_rf, n_w, n_a] = spec.shape();
    debug_assert_eq!(next_values.dims(), spec.shape());
    let fee_factor = contract.fee_factor(dt);
    let layout = WealthLayout::of(&spec.wealth_nodes);
    let mut out = Tensor3::filled(spec.shape(), 0.0);
    let mut diag = StepDiagnostics::default();
    debug_assert!(n_w == layout.n_pos + 1);

    match model {
        ModelParams::Bsm(p) => {
            let quad = bsm_quadrature(p.sigma, dt, fee_factor, spec.quadrature_nodes, measure)?;
            check_mass(&quad, 0.0, dt, &mut diag)?;
            for i in 0..n_rf {
                let (out_slab, next_slab) = (out.slab_mut(i), next_values.slab(i));
                for c in &quad.contributions {
                    accumulate_scaled(
                        out_slab,
                        next_slab,
                        &spec.wealth_nodes,
                        &layout,
                        n_a,
                        c.coeff,
                        c.wealth_ratio,
                        &mut diag.wealth_clamps,
                    );
                }
            }
        }
        ModelParams::Mmm(p) => {
            for i in 0..n_rf {
                let y_src = spec.risk_factor_nodes[i];
                let quad = mmm_quadrature(p, &spec.risk_factor_nodes, y_src, dt, fee_factor)?;
                check_mass(&quad, y_src, dt, &mut diag)?;
                // Split-borrow: the output slab at the source row accumulates
                // from destination slabs of the (immutable) next tensor.
                let out_slab = out.slab_mut(i);
                for c in &quad.contributions {
                    accumulate_scaled(
                        out_slab,
                        next_values.slab(c.dest_row),
                        &spec.wealth_nodes,
                        &layout,
                        n_a,
                        c.coeff,
                        c.wealth_ratio,
                        &mut diag.wealth_clamps,
                    );
                }
            }
        }
    }
    Ok((out, diag))
}

/// The same conditional expectation for a single (possibly off-grid) state.
/// Used for intra-period marks and finite-difference deltas, where building
/// a full grid would be wasteful.
pub(crate) fn continuation_at(
    model: &ModelParams,
    contract: &ContractSpec,
    spec: &GridSpec,
    next: &super::grid::ValueGrid,
    dt: f64,
    measure: BsmMeasure,
    rf: f64,
    wealth: f64,
    guarantee: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(EngineError::invalid(format!(
            "continuation requires a positive horizon, got {dt}"
        )));
    }
    let fee_factor = contract.fee_factor(dt);
    let quad = match model {
        ModelParams::Bsm(p) => {
            bsm_quadrature(p.sigma, dt, fee_factor, spec.quadrature_nodes, measure)?
        }
        ModelParams::Mmm(p) => {
            mmm_quadrature(p, &spec.risk_factor_nodes, rf, dt, fee_factor)?
        }
    };
    let mut diag = StepDiagnostics::default();
    check_mass(&quad, rf, dt, &mut diag)?;
    let mut value = 0.0;
    for c in &quad.contributions {
        let dest_rf = match model {
            ModelParams::Bsm(_) => rf,
            ModelParams::Mmm(_) => spec.risk_factor_nodes[c.dest_row],
        };
        value += c.coeff
            * super::grid::interpolate_value(
                spec,
                next,
                dest_rf,
                wealth * c.wealth_ratio,
                guarantee,
            );
    }
    Ok(value)
}

fn check_mass(
    quad: &SourceQuadrature,
    source: f64,
    dt: f64,
    diag: &mut StepDiagnostics,
) -> Result<()> {
    let deficit = (1.0 - quad.total_mass).abs();
    diag.worst_mass_deficit = diag.worst_mass_deficit.max(deficit);
    // A transition that materially overlaps an axis end is a boundary row:
    // the residual defect comes from the lumped-tail approximation there,
    // which is the intended boundary condition, so it is recorded but not
    // fatal. An interior transition failing the audit means the grid truly
    // cannot resolve it.
    if deficit > MASS_TOLERANCE && quad.lump_mass < BOUNDARY_LUMP_FRACTION * deficit {
        return Err(EngineError::numerical(format!(
            "quadrature mass deficit {deficit:.3e} exceeds {MASS_TOLERANCE:.0e} \
             (source state {source}, horizon {dt} years, {} destinations): \
             the risk-factor grid does not resolve this transition",
            quad.contributions.len()
        )));
    }
    Ok(())
}
