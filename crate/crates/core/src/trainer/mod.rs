//! Batch training by synchronized value updates.
//!
//! Each batch is linearized around the current values: every output moves by
//! `Σ_τ Σ g·h·Δy` to first order. Minimizing `Σ‖ΔY_τ‖² + (1/α)Σe²` subject to
//! hitting the target residual `ΔL` up to slack `e` gives one `r×r` SPD system
//! for the multipliers `B`, after which each layer's `ΔY` is a single product.

mod fit;
mod oracle;
mod replicated;

pub use fit::{accuracy, fit, fit_with, FitOutcome, Model};
pub use oracle::{qp_oracle, QP_ORACLE_MAX_PARAMS};
pub use replicated::train_batch_replicated;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeState, ForwardTrace};
use crate::error::{Error, Result};
use crate::numerics::{gram, hadamard, matmul_tn, spd_solve, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    Single,
    RandomOutput,
    Replicated,
}

/// How the factor pair (2 in the system's right-hand side, ½ in `ΔY`) is
/// applied. Both give bitwise-identical updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Paired,
    Dropped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub output_mode: OutputMode,
    pub shuffle: bool,
    pub drop_last: bool,
    /// Re-run the forward pass after each update to report `residual_after`.
    pub measure_after: bool,
    pub convention: Convention,
    /// When false, `wall_seconds` is reported as 0 so metrics are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

/// `α = 100·r`.
pub fn default_alpha(batch_size: usize) -> f64 {
    100.0 * batch_size as f64
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: default_alpha(64),
            batch_size: 64,
            epochs: 1,
            seed: 0,
            output_mode: OutputMode::Single,
            shuffle: true,
            drop_last: false,
            measure_after: false,
            convention: Convention::Paired,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            alpha: self.alpha,
            convention: self.convention,
            measure_after: self.measure_after,
        }
    }
}

/// Per-batch knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOptions {
    pub alpha: f64,
    pub convention: Convention,
    pub measure_after: bool,
}

impl BatchOptions {
    pub fn new(alpha: f64) -> Self {
        BatchOptions {
            alpha,
            convention: Convention::Paired,
            measure_after: false,
        }
    }

    pub fn measured(mut self) -> Self {
        self.measure_after = true;
        self
    }

    pub fn with_convention(mut self, convention: Convention) -> Self {
        self.convention = convention;
        self
    }
}

#[derive(Clone, Debug)]
pub struct BatchUpdate {
    /// The multipliers `B` (r×1).
    pub b_vec: Matrix,
    /// One block per layer, shaped like that layer's `Y`.
    pub delta_y: Vec<Matrix>,
    /// Mean squared `ΔL` before the update.
    pub residual_before: f64,
    /// Mean squared `ΔL` after the update, when measured.
    pub residual_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_train_mse: f64,
    pub eval_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

/// `Ω = (H·Hᵀ) ∘ (G·Gᵀ)`, exactly symmetric.
pub fn omega(h: &Matrix, g: &Matrix) -> Result<Matrix> {
    if h.rows() != g.rows() {
        return Err(Error::dim(
            "omega",
            format!("h has {} rows, g has {}", h.rows(), g.rows()),
        ));
    }
    omega_with_hh(&gram(h)?, g)
}

fn omega_with_hh(hh: &Matrix, g: &Matrix) -> Result<Matrix> {
    hadamard(hh, &gram(g)?)
}

/// Solves `(ΣΩ_τ + αI)·B = 2ΔL` (or `= ΔL` under [`Convention::Dropped`]).
pub fn solve_sync(
    omegas: &[Matrix],
    alpha: f64,
    delta_l: &Matrix,
    convention: Convention,
) -> Result<Matrix> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Input(format!("alpha must be > 0, got {alpha}")));
    }
    let r = delta_l.rows();
    if delta_l.cols() != 1 {
        return Err(Error::dim("solve_sync", format!("delta_l is {:?}, expected r×1", delta_l.shape())));
    }
    let mut sys = Matrix::zeros(r, r);
    for (i, o) in omegas.iter().enumerate() {
        if o.shape() != (r, r) {
            return Err(Error::dim(
                "solve_sync",
                format!("omega {i} is {:?}, expected {r}x{r}", o.shape()),
            ));
        }
        sys = sys.add(o)?;
    }
    let sys = sys.add_diagonal(alpha)?;
    let rhs = match convention {
        Convention::Paired => delta_l.scale(2.0),
        Convention::Dropped => delta_l.clone(),
    };
    spd_solve(&sys, &rhs).map_err(|e| match e {
        Error::Singular { pivot, .. } => Error::Singular {
            pivot,
            hint: format!("synchronizing system is not positive definite; increase alpha (now {alpha})"),
        },
        other => other,
    })
}

/// `ΔY = ½·Hᵀ·(G ∘ (B·1ᵀ))` (without the ½ under [`Convention::Dropped`]).
pub fn delta_values(h: &Matrix, g: &Matrix, b_vec: &Matrix, convention: Convention) -> Result<Matrix> {
    let r = h.rows();
    if g.rows() != r || b_vec.shape() != (r, 1) {
        return Err(Error::dim(
            "delta_values",
            format!("h {:?}, g {:?}, b {:?}", h.shape(), g.shape(), b_vec.shape()),
        ));
    }
    let mut weighted = g.clone();
    for i in 0..r {
        let beta = b_vec[(i, 0)];
        for v in weighted.row_mut(i) {
            *v *= beta;
        }
    }
    let dy = matmul_tn(h, &weighted)?;
    Ok(match convention {
        Convention::Paired => dy.scale(0.5),
        Convention::Dropped => dy,
    })
}

/// The linearization of one batch: per-layer `H_τ`, `G_τ` and optionally a
/// precomputed `H_τ·H_τᵀ`.
pub(crate) struct Linearization<'a> {
    pub h: Vec<&'a Matrix>,
    pub g: Vec<Matrix>,
    pub hh: Vec<Option<&'a Matrix>>,
}

impl<'a> Linearization<'a> {
    pub(crate) fn from_trace(trace: &'a ForwardTrace, g: Vec<Matrix>) -> Self {
        let q = trace.layers.len();
        Linearization {
            h: trace.layers.iter().map(|t| &t.h).collect(),
            g,
            hh: vec![None; q],
        }
    }

    /// `B` and every layer's `ΔY`.
    pub(crate) fn direction(
        &self,
        delta_l: &Matrix,
        opts: &BatchOptions,
    ) -> Result<(Matrix, Vec<Matrix>)> {
        let mut omegas = Vec::with_capacity(self.h.len());
        for (tau, (h, g)) in self.h.iter().zip(&self.g).enumerate() {
            let o = match self.hh[tau] {
                Some(hh) => omega_with_hh(hh, g),
                None => omega(h, g),
            };
            omegas.push(o.map_err(|e| e.in_layer(tau + 1))?);
        }
        let b = solve_sync(&omegas, opts.alpha, delta_l, opts.convention)?;
        drop(omegas);
        let dys = self
            .h
            .iter()
            .zip(&self.g)
            .enumerate()
            .map(|(tau, (h, g))| {
                delta_values(h, g, &b, opts.convention).map_err(|e| e.in_layer(tau + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((b, dys))
    }
}

fn mean_square(m: &Matrix) -> f64 {
    m.sum_squares() / m.rows() as f64
}

/// Adds `delta_y` to every layer, or leaves the cascade untouched if any new
/// value (or derived coefficient) would be non-finite.
pub(crate) fn apply_update(cas: &mut CascadeState, delta_y: &[Matrix]) -> Result<()> {
    let values = cas
        .layers()
        .iter()
        .zip(delta_y)
        .enumerate()
        .map(|(tau, (layer, dy))| layer.y().add(dy).map_err(|e| e.in_layer(tau + 1)))
        .collect::<Result<Vec<_>>>()?;
    *cas = cas.replicate(values)?;
    Ok(())
}

/// One synchronized update for an arbitrary output sensitivity `g_q` (r×n_q)
/// and target residual `delta_l` (r×1). `residual` maps a fresh cascade
/// output to the residual used for `residual_after`.
pub(crate) fn linearized_step(
    cas: &mut CascadeState,
    x0: &Matrix,
    trace: &ForwardTrace,
    g_q: &Matrix,
    delta_l: &Matrix,
    opts: &BatchOptions,
    residual: impl Fn(&Matrix) -> Result<Matrix>,
) -> Result<BatchUpdate> {
    let residual_before = mean_square(delta_l);
    let grads = cas.backward(trace, g_q)?;
    let lin = Linearization::from_trace(trace, grads.g);
    let (b_vec, delta_y) = lin.direction(delta_l, opts)?;
    apply_update(cas, &delta_y)?;
    let residual_after = if opts.measure_after {
        Some(mean_square(&residual(&cas.predict(x0)?)?))
    } else {
        None
    };
    Ok(BatchUpdate {
        b_vec,
        delta_y,
        residual_before,
        residual_after,
    })
}

fn check_targets(cas: &CascadeState, x0: &Matrix, l_star: &Matrix, cols: usize) -> Result<()> {
    if l_star.shape() != (x0.rows(), cols) {
        return Err(Error::dim(
            "train batch",
            format!("targets are {:?}, expected {}x{cols}", l_star.shape(), x0.rows()),
        ));
    }
    if cas.n_outputs() != cols {
        return Err(Error::dim(
            "train batch",
            format!("cascade has {} outputs, targets have {cols}", cas.n_outputs()),
        ));
    }
    Ok(())
}

/// Trains a single-output cascade on one batch.
pub fn train_batch_single(
    cas: &mut CascadeState,
    x0: &Matrix,
    l_star: &Matrix,
    opts: &BatchOptions,
) -> Result<BatchUpdate> {
    check_targets(cas, x0, l_star, 1)?;
    let trace = cas.forward(x0)?;
    let delta_l = l_star.sub(&trace.output)?;
    let g_q = Matrix::ones(x0.rows(), 1);
    linearized_step(cas, x0, &trace, &g_q, &delta_l, opts, |out| l_star.sub(out))
}

/// 0/1 matrix with a single 1 per row, at column `selection[i]`.
pub fn selection_matrix(selection: &[usize], s: usize) -> Result<Matrix> {
    crate::data::one_hot(selection, s).map_err(|_| {
        Error::Input(format!("selected output index out of range 0..{s}"))
    })
}

/// `((L* − L) ∘ G_q)·1`.
fn masked_residual(l_star: &Matrix, out: &Matrix, g_q: &Matrix) -> Result<Matrix> {
    let masked = hadamard(&l_star.sub(out)?, g_q)?;
    let sums = masked.row_sums();
    Matrix::from_vec(sums.len(), 1, sums)
}

/// Multi-output training where each row trains only the output named by
/// `selection[i]`.
pub fn train_batch_selected(
    cas: &mut CascadeState,
    x0: &Matrix,
    l_star: &Matrix,
    selection: &[usize],
    opts: &BatchOptions,
) -> Result<BatchUpdate> {
    let s = cas.n_outputs();
    check_targets(cas, x0, l_star, s)?;
    if selection.len() != x0.rows() {
        return Err(Error::dim(
            "train_batch_selected",
            format!("{} selections for {} rows", selection.len(), x0.rows()),
        ));
    }
    let g_q = selection_matrix(selection, s)?;
    let trace = cas.forward(x0)?;
    let delta_l = masked_residual(l_star, &trace.output, &g_q)?;
    linearized_step(cas, x0, &trace, &g_q, &delta_l, opts, |out| {
        masked_residual(l_star, out, &g_q)
    })
}

/// Like [`train_batch_selected`] with one output drawn uniformly per row.
pub fn train_batch_random_output<R: Rng + ?Sized>(
    cas: &mut CascadeState,
    x0: &Matrix,
    l_star: &Matrix,
    opts: &BatchOptions,
    rng: &mut R,
) -> Result<BatchUpdate> {
    let s = cas.n_outputs();
    let selection: Vec<usize> = (0..x0.rows()).map(|_| rng.random_range(0..s)).collect();
    train_batch_selected(cas, x0, l_star, &selection, opts)
}
