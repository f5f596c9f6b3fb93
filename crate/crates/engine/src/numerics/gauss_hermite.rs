//! Gauss-Hermite quadrature for standard-normal expectations.
//!
//! Nodes and weights are generated at runtime by Newton iteration on the
//! orthonormal Hermite recurrence (the classical `gauher` scheme). Working
//! with the *orthonormal* polynomials keeps intermediate values of order one
//! even at high degree, where the monic/physicists' recurrences overflow.
//!
//! The rule is returned in "probabilist" form: nodes `z_i` and weights `w_i`
//! such that
//!
//! ```text
//! E[f(Z)] = integral f(z) phi(z) dz ~ sum_i w_i f(z_i),   Z ~ N(0,1),
//! ```
//!
//! i.e. the physicists' nodes are scaled by sqrt(2) and the weights are
//! divided by sqrt(pi), so the weights sum to one. An `n`-point rule is
//! exact for polynomials of degree `2n - 1`.

use crate::{EngineError, Result};

/// A Gauss-Hermite rule in probabilist (unit-weight) form.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    /// Quadrature abscissae, ascending; expectations sample `f` here.
    pub nodes: Vec<f64>,
    /// Positive weights summing to one.
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Approximate `E[f(Z)]` for `Z ~ N(0,1)`.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }

    /// Number of quadrature points.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the rule has no points (never produced by [`gauss_hermite`]).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Build the `n`-point Gauss-Hermite rule.
///
/// Fails for `n == 0` and if Newton iteration stalls (which does not happen
/// for any practical order; the guard exists so the failure would be loud).
/// Rules are memoized per order: callers that price point-by-point (marks,
/// finite-difference deltas) request the same rule millions of times, and
/// the Newton build would otherwise dominate their cost.
pub fn gauss_hermite(n: usize) -> Result<GaussHermite> {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<usize, GaussHermite>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&n) {
        return Ok(rule.clone());
    }
    let rule = build_rule(n)?;
    cache
        .lock()
        .expect("quadrature cache poisoned")
        .insert(n, rule.clone());
    Ok(rule)
}

fn build_rule(n: usize) -> Result<GaussHermite> {
    if n == 0 {
        return Err(EngineError::invalid("Gauss-Hermite order must be >= 1"));
    }
    const EPS: f64 = 1e-14;
    const MAX_ITER: usize = 100;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;

    // Physicists' roots (weight exp(-x^2)), positive half.
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    for i in 0..m {
        // Stieltjes-style initial guesses for successive roots.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            // Evaluate the orthonormal Hermite polynomial of degree n at z
            // by upward recurrence; p1 = H~_n(z), p2 = H~_{n-1}(z).
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2; // derivative via H~_n' = sqrt(2n) H~_{n-1}
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(EngineError::numerical(format!(
                "Gauss-Hermite Newton iteration failed to converge for order {n}"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let weight = 2.0 / (pp * pp);
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0; // middle root is exactly zero by symmetry
    }

    // Convert to probabilist form and sort ascending.
    let sqrt2 = std::f64::consts::SQRT_2;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| (sqrt2 * xi, wi * inv_sqrt_pi))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(GaussHermite {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}
