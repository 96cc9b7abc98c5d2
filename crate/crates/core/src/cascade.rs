//! Sequential composition of packages.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::package::{KernelConstants, LayerTrace, PackageState, DUP_EPS};

/// Default half-width of the uniform distribution for initial values.
pub const DEFAULT_Y_INIT: f64 = 1.0;

/// Default per-coordinate jitter applied to duplicate sampled points.
pub const DEFAULT_JITTER_EPS: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CascadeState {
    layers: Vec<PackageState>,
    k_const: KernelConstants,
}

/// Per-layer traces of one forward pass plus the final output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub output: Matrix,
}

/// Derivatives of each row's scalar output with respect to every layer's
/// outputs, `g[τ]` shaped like layer τ's output.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub g: Vec<Matrix>,
}

impl CascadeState {
    pub fn new(layers: Vec<PackageState>, k_const: KernelConstants) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("a cascade needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::dim(
                    "CascadeState::new",
                    format!(
                        "layer {} outputs {} values but layer {} takes {}",
                        i + 1,
                        pair[0].n_out(),
                        i + 2,
                        pair[1].n_in()
                    ),
                ));
            }
        }
        Ok(CascadeState { layers, k_const })
    }

    pub fn layers(&self) -> &[PackageState] {
        &self.layers
    }

    pub fn k_const(&self) -> &KernelConstants {
        &self.k_const
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    /// Number of trainable values, `Σ k_τ·n_τ`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.k() * l.n_out()).sum()
    }

    pub(crate) fn check_input(&self, x0: &Matrix) -> Result<()> {
        if x0.cols() != self.n_inputs() {
            return Err(Error::dim(
                "cascade forward",
                format!("batch has {} columns, cascade expects {}", x0.cols(), self.n_inputs()),
            ));
        }
        Ok(())
    }

    /// Runs the batch through every layer, keeping each layer's trace.
    pub fn forward(&self, x0: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x0)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut x = x0.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, trace) = layer.forward(&x, &self.k_const).map_err(|e| e.in_layer(i + 1))?;
            traces.push(trace);
            x = out;
        }
        Ok(ForwardTrace {
            layers: traces,
            output: x,
        })
    }

    /// Propagates `g_q` (derivatives with respect to the final output) back
    /// through the cascade.
    pub fn backward(&self, trace: &ForwardTrace, g_q: &Matrix) -> Result<GradientSet> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::dim(
                "cascade backward",
                format!("{} traces for {} layers", trace.layers.len(), self.layers.len()),
            ));
        }
        if g_q.shape() != trace.output.shape() {
            return Err(Error::dim(
                "cascade backward",
                format!("g_q {:?} vs output {:?}", g_q.shape(), trace.output.shape()),
            ));
        }
        let q = self.layers.len();
        let mut g = vec![g_q.clone()];
        for tau in (1..q).rev() {
            let next = self.layers[tau]
                .backward(&trace.layers[tau], &g[g.len() - 1])
                .map_err(|e| e.in_layer(tau + 1))?;
            g.push(next);
        }
        g.reverse();
        Ok(GradientSet { g })
    }

    /// Forward pass without trace retention.
    pub fn predict(&self, x0: &Matrix) -> Result<Matrix> {
        self.check_input(x0)?;
        let mut x = x0.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.evaluate(&x, &self.k_const).map_err(|e| e.in_layer(i + 1))?;
        }
        Ok(x)
    }

    /// Output of the first `upto` layers.
    pub fn predict_prefix(&self, x0: &Matrix, upto: usize) -> Result<Matrix> {
        self.check_input(x0)?;
        let mut x = x0.clone();
        for (i, layer) in self.layers.iter().take(upto).enumerate() {
            x = layer.evaluate(&x, &self.k_const).map_err(|e| e.in_layer(i + 1))?;
        }
        Ok(x)
    }

    /// Runs `x` (an output of layer `start`, 0-based, or the raw input when
    /// `start` is 0) through layers `start..q`.
    pub fn predict_from(&self, x: &Matrix, start: usize) -> Result<Matrix> {
        let mut x = x.clone();
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            x = layer.evaluate(&x, &self.k_const).map_err(|e| e.in_layer(i + 1))?;
        }
        Ok(x)
    }

    /// Installs new values in layer `tau` (0-based).
    pub fn set_layer_values(&mut self, tau: usize, y: Matrix) -> Result<()> {
        let layer = self
            .layers
            .get_mut(tau)
            .ok_or_else(|| Error::Input(format!("no layer {tau}")))?;
        layer.set_values(y).map_err(|e| e.in_layer(tau + 1))
    }

    /// A cascade with the same constellations and `U` matrices but its own
    /// values.
    pub fn replicate(&self, values: Vec<Matrix>) -> Result<CascadeState> {
        if values.len() != self.layers.len() {
            return Err(Error::dim(
                "CascadeState::replicate",
                format!("{} value blocks for {} layers", values.len(), self.layers.len()),
            ));
        }
        let layers = self
            .layers
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, (l, y))| l.replicate(y).map_err(|e| e.in_layer(i + 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CascadeState {
            layers,
            k_const: self.k_const,
        })
    }
}

/// Shape of one layer: input width, output width and constellation size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub k: usize,
}

#[derive(Clone, Debug)]
pub struct InitOptions {
    pub seed: u64,
    /// One value for every layer, or a single value shared by all.
    pub sigma2: Vec<f64>,
    pub y_init: f64,
    pub jitter_eps: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            seed: 0,
            sigma2: vec![0.0],
            y_init: DEFAULT_Y_INIT,
            jitter_eps: DEFAULT_JITTER_EPS,
        }
    }
}

impl InitOptions {
    fn sigma2_for(&self, tau: usize) -> Result<f64> {
        match self.sigma2.len() {
            0 => Ok(0.0),
            1 => Ok(self.sigma2[0]),
            _ => self.sigma2.get(tau).copied().ok_or_else(|| {
                Error::Config(format!("no sigma2 given for layer {}", tau + 1))
            }),
        }
    }
}

fn min_sq_dist(row: &[f64], chosen: &[Vec<f64>]) -> f64 {
    chosen
        .iter()
        .map(|c| c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Picks `k` mutually distinct rows from `pool` in seeded random order.
/// Duplicates are held back and only used, jittered, if the distinct rows
/// run out.
fn sample_constellation(
    pool: &Matrix,
    k: usize,
    jitter_eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    if pool.rows() < k {
        return Err(Error::Init(format!(
            "sample has {} rows but the constellation needs {k}",
            pool.rows()
        )));
    }
    let mut order: Vec<usize> = (0..pool.rows()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut held_back = Vec::new();
    for &i in &order {
        if chosen.len() == k {
            break;
        }
        let row = pool.row(i);
        if min_sq_dist(row, &chosen) >= DUP_EPS {
            chosen.push(row.to_vec());
        } else {
            held_back.push(i);
        }
    }
    for &i in &held_back {
        if chosen.len() == k {
            break;
        }
        for _ in 0..16 {
            let row: Vec<f64> = pool
                .row(i)
                .iter()
                .map(|v| v + rng.random_range(-jitter_eps..=jitter_eps))
                .collect();
            if min_sq_dist(&row, &chosen) >= DUP_EPS {
                chosen.push(row);
                break;
            }
        }
    }
    if chosen.len() < k {
        return Err(Error::Init(format!(
            "only {} distinct points available for a constellation of {k}",
            chosen.len()
        )));
    }
    Matrix::from_rows(&chosen)
}

/// Builds a cascade layer by layer. Each constellation is a seeded subsample
/// of `sample` propagated through the layers already built; values start
/// i.i.d. uniform in `[-y_init, y_init]`.
pub fn init_cascade(
    specs: &[LayerSpec],
    sample: &Matrix,
    k_const: KernelConstants,
    opts: &InitOptions,
) -> Result<CascadeState> {
    if specs.is_empty() {
        return Err(Error::Input("a cascade needs at least one layer".into()));
    }
    if specs.iter().any(|s| s.n_in == 0 || s.n_out == 0 || s.k == 0) {
        return Err(Error::Config("layer widths and constellation sizes must be >= 1".into()));
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].n_out != pair[1].n_in {
            return Err(Error::Config(format!(
                "layer {} outputs {} values but layer {} takes {}",
                i + 1,
                pair[0].n_out,
                i + 2,
                pair[1].n_in
            )));
        }
    }
    if sample.cols() != specs[0].n_in {
        return Err(Error::dim(
            "init_cascade",
            format!("sample has {} columns, first layer takes {}", sample.cols(), specs[0].n_in),
        ));
    }
    if !(opts.y_init >= 0.0) || !opts.y_init.is_finite() {
        return Err(Error::Config(format!("y_init must be >= 0, got {}", opts.y_init)));
    }
    let mut layers: Vec<PackageState> = Vec::with_capacity(specs.len());
    let mut propagated = sample.clone();
    for (tau, spec) in specs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(tau as u64 + 1);
        let c = sample_constellation(&propagated, spec.k, opts.jitter_eps, &mut rng)
            .map_err(|e| match e {
                Error::Init(m) => Error::Init(format!("layer {}: {m}", tau + 1)),
                other => other,
            })?;
        let y = if opts.y_init > 0.0 {
            Matrix::from_fn(spec.k, spec.n_out, |_, _| {
                rng.random_range(-opts.y_init..=opts.y_init)
            })
        } else {
            Matrix::zeros(spec.k, spec.n_out)
        };
        let layer = PackageState::new(c, y, opts.sigma2_for(tau)?, &k_const)
            .map_err(|e| e.in_layer(tau + 1))?;
        if tau + 1 < specs.len() {
            propagated = layer
                .evaluate(&propagated, &k_const)
                .map_err(|e| e.in_layer(tau + 1))?;
        }
        layers.push(layer);
    }
    CascadeState::new(layers, k_const)
}

/// `s` single-output cascades sharing every constellation and `U` matrix,
/// one per output column.
#[derive(Clone, Debug)]
pub struct ReplicatedCascade {
    slices: Vec<CascadeState>,
}

impl ReplicatedCascade {
    pub fn new(slices: Vec<CascadeState>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Input("no output slices".into()))?;
        for (j, s) in slices.iter().enumerate() {
            if s.n_outputs() != 1 {
                return Err(Error::dim(
                    "ReplicatedCascade::new",
                    format!("slice {j} has {} outputs, expected 1", s.n_outputs()),
                ));
            }
            if s.depth() != first.depth() || s.k_const() != first.k_const() {
                return Err(Error::Input(format!("slice {j} differs in structure")));
            }
            for (a, b) in s.layers().iter().zip(first.layers()) {
                if !a.shares_basis_with(b) && (a.c() != b.c() || a.u() != b.u()) {
                    return Err(Error::Input(format!(
                        "slice {j} does not share constellations with slice 0"
                    )));
                }
            }
        }
        Ok(ReplicatedCascade { slices })
    }

    /// `s` copies of `base` (which must have a single output), all starting
    /// from the same values.
    pub fn from_base(base: &CascadeState, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("replica count must be >= 1".into()));
        }
        let values: Vec<Matrix> = base.layers().iter().map(|l| l.y().clone()).collect();
        let slices = (0..s)
            .map(|_| base.replicate(values.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(slices)
    }

    pub fn slices(&self) -> &[CascadeState] {
        &self.slices
    }

    pub(crate) fn slices_mut(&mut self) -> &mut [CascadeState] {
        &mut self.slices
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.slices[0].n_inputs()
    }

    pub fn param_count(&self) -> usize {
        self.slices.iter().map(CascadeState::param_count).sum()
    }

    /// r×s predictions, column j from slice j. The first layer's kernel is
    /// evaluated once and shared.
    pub fn predict(&self, x0: &Matrix) -> Result<Matrix> {
        let first = &self.slices[0];
        first.check_input(x0)?;
        let k = first.k_const();
        let basis_layer = &first.layers()[0];
        let (_, kernel) = basis_layer
            .theta_and_kernel(x0, k)
            .map_err(|e| e.in_layer(1))?;
        let cols = self
            .slices
            .iter()
            .map(|s| {
                let mut x = crate::numerics::matmul(&kernel, s.layers()[0].lambda())
                    .map_err(|e| e.in_layer(1))?;
                for (i, layer) in s.layers().iter().enumerate().skip(1) {
                    x = layer.evaluate(&x, k).map_err(|e| e.in_layer(i + 1))?;
                }
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::hstack(&cols)
    }
}
