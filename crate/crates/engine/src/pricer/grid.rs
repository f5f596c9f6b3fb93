//! State-space discretization: axes, value tensors, and interpolation.
//!
//! The value function lives on a (risk-factor × wealth × guarantee) lattice.
//! For the Black-Scholes model the risk-factor axis is collapsed to a single
//! node because the index transition acts multiplicatively on wealth and
//! carries no other state; for the minimal market model the normalized level
//! `Y` is a real state variable and keeps its own axis.

use crate::contract::ContractSpec;
use crate::market::ModelKind;
use crate::{EngineError, Result};

/// Relative slack when locating supposedly-on-grid values (rounding dust).
const AXIS_EPS: f64 = 1e-9;

/// Discretization of the pricing state space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Risk-factor nodes: the Y-grid for the MMM; a single placeholder node
    /// for BSM (the transition is state-independent there).
    pub risk_factor_nodes: Vec<f64>,
    /// Wealth nodes, sorted, starting at exactly 0.
    pub wealth_nodes: Vec<f64>,
    /// Guarantee nodes, sorted, from 0 to the initial guarantee.
    pub guarantee_nodes: Vec<f64>,
    /// Quadrature resolution: Gauss-Hermite node count for BSM; for MMM the
    /// destination count equals the Y-axis length and this field must match.
    pub quadrature_nodes: usize,
    /// Cap on withdrawal candidates per node: guarantee-axis candidates are
    /// subsampled with a uniform stride when the axis is finer than this.
    pub withdrawal_candidates_per_state: usize,
}

impl GridSpec {
    /// Validate axis ordering, required anchor nodes, and counts.
    pub fn validate(&self, contract: &ContractSpec) -> Result<()> {
        if self.risk_factor_nodes.is_empty() {
            return Err(EngineError::invalid("risk-factor axis is empty".to_string()));
        }
        for (name, axis) in [
            ("risk_factor", &self.risk_factor_nodes),
            ("wealth", &self.wealth_nodes),
            ("guarantee", &self.guarantee_nodes),
        ] {
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(EngineError::invalid(format!("{name} axis has a non-finite node")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EngineError::invalid(format!(
                    "{name} axis must be strictly increasing"
                )));
            }
        }
        if self.risk_factor_nodes[0] <= 0.0 {
            return Err(EngineError::invalid(
                "risk-factor nodes must be positive".to_string(),
            ));
        }
        if self.wealth_nodes.len() < 2 || self.wealth_nodes[0] != 0.0 {
            return Err(EngineError::invalid(
                "wealth axis must start at exactly 0 and have at least two nodes".to_string(),
            ));
        }
        if self.guarantee_nodes.is_empty() || self.guarantee_nodes[0] != 0.0 {
            return Err(EngineError::invalid(
                "guarantee axis must start at exactly 0".to_string(),
            ));
        }
        let a_top = *self.guarantee_nodes.last().expect("nonempty");
        if (a_top - contract.a0).abs() > AXIS_EPS * contract.a0.max(1.0) {
            return Err(EngineError::invalid(format!(
                "guarantee axis must end at the initial guarantee {}, got {a_top}",
                contract.a0
            )));
        }
        if self.quadrature_nodes < 8 {
            return Err(EngineError::invalid(format!(
                "quadrature needs at least 8 nodes, got {}",
                self.quadrature_nodes
            )));
        }
        if self.withdrawal_candidates_per_state < 2 {
            return Err(EngineError::invalid(format!(
                "need at least 2 withdrawal candidates per state, got {}",
                self.withdrawal_candidates_per_state
            )));
        }
        Ok(())
    }

    /// Production default resolutions for a model and contract.
    ///
    /// Wealth: 0 plus 201 log-spaced nodes on `[W0/1000, W0*1000]` (spans 30
    /// years of index compounding with headroom, and puts `W0` exactly on a
    /// node). Guarantee: 121 uniform nodes on `[0, A0]` (the annual
    /// contractual amount `A0/30` lands exactly on the lattice). Risk factor:
    /// for MMM, 200 geometric nodes on `[0.01, 20]`; for BSM a single node.
    pub fn default_for(kind: ModelKind, contract: &ContractSpec) -> Self {
        let w0 = contract.w0;
        let mut wealth = Vec::with_capacity(202);
        wealth.push(0.0);
        geometric_into(&mut wealth, w0 * 1e-3, w0 * 1e3, 201);
        let guarantee = uniform(0.0, contract.a0, 121);
        match kind {
            ModelKind::Bsm => GridSpec {
                risk_factor_nodes: vec![1.0],
                wealth_nodes: wealth,
                guarantee_nodes: guarantee,
                quadrature_nodes: 64,
                withdrawal_candidates_per_state: 121,
            },
            ModelKind::Mmm => GridSpec {
                risk_factor_nodes: geometric(0.01, 20.0, 200),
                wealth_nodes: wealth,
                guarantee_nodes: guarantee,
                quadrature_nodes: 200,
                withdrawal_candidates_per_state: 121,
            },
        }
    }

    /// The same spec with every axis at double resolution (for
    /// self-convergence checks). Candidate and quadrature counts are kept,
    /// so withdrawal candidates subsample the finer guarantee axis.
    pub fn doubled(&self) -> Self {
        GridSpec {
            risk_factor_nodes: double_geometric(&self.risk_factor_nodes),
            wealth_nodes: {
                let mut w = vec![0.0];
                let pos = &self.wealth_nodes[1..];
                w.extend(double_geometric(pos));
                w
            },
            guarantee_nodes: double_uniform(&self.guarantee_nodes),
            quadrature_nodes: self.quadrature_nodes,
            withdrawal_candidates_per_state: self.withdrawal_candidates_per_state,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [
            self.risk_factor_nodes.len(),
            self.wealth_nodes.len(),
            self.guarantee_nodes.len(),
        ]
    }
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + i as f64 * step })
        .collect()
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n);
    geometric_into(&mut v, lo, hi, n);
    v
}

fn geometric_into(out: &mut Vec<f64>, lo: f64, hi: f64, n: usize) {
    let step = (hi / lo).ln() / (n - 1) as f64;
    for i in 0..n {
        out.push(if i + 1 == n {
            hi
        } else {
            lo * (step * i as f64).exp()
        });
    }
}

fn double_geometric(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    geometric(nodes[0], nodes[n - 1], 2 * n)
}

fn double_uniform(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    uniform(nodes[0], nodes[n - 1], 2 * n - 1)
}

/// Dense row-major tensor over (risk-factor, wealth, guarantee).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> Tensor3<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Guarantee-contiguous row at fixed (risk factor, wealth).
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[T] {
        let o = self.offset(i, j, 0);
        &self.data[o..o + self.dims[2]]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let o = self.offset(i, j, 0);
        let k = self.dims[2];
        &mut self.data[o..o + k]
    }

    /// (wealth × guarantee) slab at a fixed risk-factor index.
    #[inline]
    pub fn slab(&self, i: usize) -> &[T] {
        let len = self.dims[1] * self.dims[2];
        &self.data[i * len..(i + 1) * len]
    }

    #[inline]
    pub fn slab_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.dims[1] * self.dims[2];
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Which side of the withdrawal a grid represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSide {
    /// Left limit `V(t_n, ·)`: the withdrawal at `t_n` has not happened yet.
    Pre,
    /// Right limit `V(t_n⁺, ·)`: just after the withdrawal.
    Post,
}

/// The value function (and, in dynamic mode, the withdrawal policy) on the
/// lattice at one event date. Immutable once built; freely shareable.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub date_index: usize,
    pub side: GridSide,
    pub values: Tensor3<f64>,
    /// Optimal withdrawal at each node (dynamic strategy only); stored at
    /// reduced precision since it is only read for inspection and export.
    pub policy: Option<Tensor3<f32>>,
}

/// Locate `x` on a sorted axis: returns the left node index and the weight
/// of the RIGHT node, clamping outside the range (weight 0 or 1 at the
/// boundary node).
#[inline]
pub(crate) fn lerp_index(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    if n == 1 || x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    // partition_point gives the first node > x, so `hi` is in [1, n-1].
    let hi = nodes.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let w = (x - nodes[lo]) / (nodes[hi] - nodes[lo]);
    (lo, w)
}

/// Multilinear interpolation of a grid at off-node coordinates, clamping to
/// the bounding box (the degenerate single-node risk-factor axis of BSM
/// grids reads that node directly).
pub fn interpolate_value(spec: &GridSpec, grid: &ValueGrid, rf: f64, wealth: f64, guarantee: f64) -> f64 {
    let (ri, rw) = if spec.risk_factor_nodes.len() == 1 {
        (0, 0.0)
    } else {
        lerp_index(&spec.risk_factor_nodes, rf)
    };
    let (wi, ww) = lerp_index(&spec.wealth_nodes, wealth);
    let (gi, gw) = lerp_index(&spec.guarantee_nodes, guarantee);
    let v = &grid.values;
    let ri1 = (ri + 1).min(spec.risk_factor_nodes.len() - 1);
    // On a degenerate (single-node) guarantee axis gw is 0, so the clamped
    // upper index is never actually weighted.
    let gi1 = (gi + 1).min(spec.guarantee_nodes.len() - 1);
    let mut out = 0.0;
    for (i, wi_rf) in [(ri, 1.0 - rw), (ri1, rw)] {
        if wi_rf == 0.0 {
            continue;
        }
        let mut plane = 0.0;
        for (j, wj) in [(wi, 1.0 - ww), (wi + 1, ww)] {
            if wj == 0.0 {
                continue;
            }
            let row = v.row(i, j);
            plane += wj * ((1.0 - gw) * row[gi] + gw * row[gi1]);
        }
        out += wi_rf * plane;
    }
    out
}

/// Precomputed structure of the positive wealth nodes when they form a
/// geometric sequence: log step and count, enabling constant-shift image
/// lookups inside the quadrature kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WealthLayout {
    /// Uniform log step between consecutive positive nodes, if geometric.
    pub log_step: Option<f64>,
    /// Number of positive nodes.
    pub n_pos: usize,
}

impl WealthLayout {
    pub fn of(wealth_nodes: &[f64]) -> Self {
        let pos = &wealth_nodes[1..];
        let n_pos = pos.len();
        let mut log_step = None;
        if n_pos >= 2 {
            let h = (pos[n_pos - 1] / pos[0]).ln() / (n_pos - 1) as f64;
            let uniform = pos
                .windows(2)
                .all(|w| ((w[1] / w[0]).ln() - h).abs() <= 1e-9 * h.abs().max(1e-12));
            if uniform && h > 0.0 {
                log_step = Some(h);
            }
        }
        WealthLayout { log_step, n_pos }
    }
}
