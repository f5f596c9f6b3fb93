//! Exact-law path simulation for the Monte Carlo oracles.
//!
//! Sampling is exact at every step (lognormal for BSM, noncentral
//! chi-squared for MMM) — no Euler discretization, so the only error in a
//! Monte Carlo estimate is statistical. Each path gets its own counter-mode
//! RNG stream, making results independent of batching and bitwise
//! reproducible for a given seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ModelKind, ModelParams, RiskFactorState};
use super::transition::{bsm_transition, mmm_transition};
use crate::{EngineError, Result};

/// Simulated paths of the model risk factor at fixed observation times.
#[derive(Debug, Clone)]
pub struct PathSet {
    /// Observation times in years; `times[0]` is the initial time.
    pub times: Vec<f64>,
    n_paths: usize,
    /// Row-major `[path][time]` values, including the initial value.
    values: Vec<f64>,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// All values of one path, aligned with `times`.
    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.times.len();
        &self.values[p * w..(p + 1) * w]
    }
}

/// Simulate `n_paths` exact-law paths of the risk factor from `initial`
/// through the given strictly increasing `dates` (years).
pub fn simulate_paths(
    model: &ModelParams,
    initial: &RiskFactorState,
    dates: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    if initial.kind != model.kind() {
        return Err(EngineError::invalid(
            "initial state does not match the model kind".to_string(),
        ));
    }
    if n_paths == 0 {
        return Err(EngineError::invalid("n_paths must be >= 1".to_string()));
    }
    let mut prev = initial.time;
    for (i, d) in dates.iter().enumerate() {
        if !d.is_finite() || *d <= prev {
            return Err(EngineError::invalid(format!(
                "simulation dates must be finite and strictly increasing from {}; \
                 offending entry {i} = {d}",
                initial.time
            )));
        }
        prev = *d;
    }
    if model.kind() == ModelKind::Bsm && initial.value <= 0.0 {
        return Err(EngineError::invalid(
            "BSM simulation requires a positive initial index level".to_string(),
        ));
    }

    let mut times = Vec::with_capacity(dates.len() + 1);
    times.push(initial.time);
    times.extend_from_slice(dates);

    let width = times.len();
    let mut values = vec![0.0f64; n_paths * width];
    for p in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let row = &mut values[p * width..(p + 1) * width];
        row[0] = initial.value;
        let mut current = initial.value;
        let mut t = initial.time;
        for (k, &u) in dates.iter().enumerate() {
            current = match model {
                ModelParams::Bsm(params) => {
                    bsm_transition(params, current, t, u)?.sample(&mut rng)
                }
                ModelParams::Mmm(params) => {
                    mmm_transition(params, current, t, u)?.sample(&mut rng)
                }
            };
            row[k + 1] = current;
            t = u;
        }
    }
    Ok(PathSet {
        times,
        n_paths,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::params::{BsmParams, MmmParams};
    use crate::market::transition::mmm_transition;

    fn bsm_model() -> ModelParams {
        ModelParams::Bsm(BsmParams::new(0.1441).unwrap())
    }

    fn mmm_model() -> ModelParams {
        ModelParams::Mmm(MmmParams::new(2.857, 0.0435).unwrap())
    }

    #[test]
    fn empty_date_list_returns_the_initial_state_only() {
        let init = RiskFactorState::new(ModelKind::Bsm, 2.0, 0.0).unwrap();
        let paths = simulate_paths(&bsm_model(), &init, &[], 1, 1).unwrap();
        assert_eq!(paths.n_times(), 1);
        assert_eq!(paths.path(0), &[2.0]);
    }

    #[test]
    fn rejects_bad_dates_and_kind_mismatch() {
        let init = RiskFactorState::new(ModelKind::Bsm, 1.0, 1.0).unwrap();
        assert!(simulate_paths(&bsm_model(), &init, &[0.5], 1, 1).is_err());
        assert!(simulate_paths(&bsm_model(), &init, &[2.0, 2.0], 1, 1).is_err());
        assert!(simulate_paths(&mmm_model(), &init, &[2.0], 1, 1).is_err());
        assert!(simulate_paths(&bsm_model(), &init, &[2.0], 0, 1).is_err());
    }

    #[test]
    fn equal_seeds_are_bitwise_reproducible() {
        let init = RiskFactorState::new(ModelKind::Mmm, 0.58, 0.0).unwrap();
        let a = simulate_paths(&mmm_model(), &init, &[1.0, 2.0, 5.0], 64, 42).unwrap();
        let b = simulate_paths(&mmm_model(), &init, &[1.0, 2.0, 5.0], 64, 42).unwrap();
        for p in 0..64 {
            assert_eq!(a.path(p), b.path(p));
        }
        let c = simulate_paths(&mmm_model(), &init, &[1.0, 2.0, 5.0], 64, 43).unwrap();
        assert_ne!(a.path(0), c.path(0));
    }

    #[test]
    fn bsm_sample_mean_matches_the_lognormal_moment() {
        let init = RiskFactorState::new(ModelKind::Bsm, 1.0, 0.0).unwrap();
        let n = 200_000;
        let paths = simulate_paths(&bsm_model(), &init, &[1.0], n, 7).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for p in 0..n {
            let v = paths.path(p)[1];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let expect = (0.1441f64 * 0.1441).exp();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn mmm_sample_mean_matches_the_transition_mean_over_two_steps() {
        let params = MmmParams::new(2.857, 0.0435).unwrap();
        let init = RiskFactorState::new(ModelKind::Mmm, 0.58, 0.0).unwrap();
        let n = 1_000_000;
        let paths = simulate_paths(&mmm_model(), &init, &[1.0], n, 11).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for p in 0..n {
            let v = paths.path(p)[1];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let expect = mmm_transition(&params, 0.58, 0.0, 1.0).unwrap().mean;
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }
}
