use std::time::Instant;

use super::{
    train_batch_random_output, train_batch_replicated, train_batch_single, EpochStats,
    OutputMode, TrainConfig,
};
use crate::cascade::{CascadeState, ReplicatedCascade};
use crate::data::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seeded_rng;

const SELECT_STREAM: u64 = 0x5e1;

/// A trainable model: one cascade (single or random-output mode) or a set
/// of replicated single-output slices.
#[derive(Clone, Debug)]
pub enum Model {
    Cascade(CascadeState),
    Replicated(ReplicatedCascade),
}

impl Model {
    pub fn predict(&self, x0: &Matrix) -> Result<Matrix> {
        match self {
            Model::Cascade(c) => c.predict(x0),
            Model::Replicated(r) => r.predict(x0),
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            Model::Cascade(c) => c.n_inputs(),
            Model::Replicated(r) => r.n_inputs(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Model::Cascade(c) => c.n_outputs(),
            Model::Replicated(r) => r.n_slices(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Cascade(c) => c.param_count(),
            Model::Replicated(r) => r.param_count(),
        }
    }
}

/// Fraction of rows whose predicted argmax matches the target's argmax.
pub fn accuracy(pred: &Matrix, targets: &Matrix) -> f64 {
    let hits = pred
        .argmax_rows()
        .iter()
        .zip(targets.argmax_rows())
        .filter(|(a, b)| **a == *b)
        .count();
    hits as f64 / pred.rows() as f64
}

/// Stats for every completed epoch, plus the error that stopped training
/// early, if any.
#[derive(Debug)]
pub struct FitOutcome {
    pub stats: Vec<EpochStats>,
    pub error: Option<Error>,
}

impl FitOutcome {
    pub fn into_result(self) -> Result<Vec<EpochStats>> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.stats),
        }
    }
}

pub fn fit(model: &mut Model, data: &Dataset, cfg: &TrainConfig, eval: Option<&Dataset>) -> FitOutcome {
    fit_with(model, data, cfg, eval, |_, _| Ok(()))
}

/// Like [`fit`], calling `on_epoch` after each epoch (e.g. to checkpoint).
pub fn fit_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    eval: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochStats, &Model) -> Result<()>,
) -> FitOutcome {
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut run = || -> Result<()> {
        check_setup(model, data, cfg, eval)?;
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            let mse = run_epoch(model, data, cfg, epoch)?;
            let eval_accuracy = match eval {
                Some(ev) if ev.n_outputs() >= 2 => Some(accuracy(&model.predict(&ev.inputs)?, &ev.targets)),
                _ => None,
            };
            let s = EpochStats {
                epoch: epoch + 1,
                mean_train_mse: mse,
                eval_accuracy,
                wall_seconds: if cfg.record_wall_time {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            on_epoch(&s, model)?;
            stats.push(s);
        }
        Ok(())
    };
    let error = run().err();
    FitOutcome { stats, error }
}

fn check_setup(model: &Model, data: &Dataset, cfg: &TrainConfig, eval: Option<&Dataset>) -> Result<()> {
    cfg.validate()?;
    for (what, ds) in std::iter::once(("training", data)).chain(eval.map(|e| ("eval", e))) {
        if ds.n_inputs() != model.n_inputs() || ds.n_outputs() != model.n_outputs() {
            return Err(Error::Config(format!(
                "{what} data is {}→{} but the model is {}→{}",
                ds.n_inputs(),
                ds.n_outputs(),
                model.n_inputs(),
                model.n_outputs()
            )));
        }
    }
    match (cfg.output_mode, model) {
        (OutputMode::Single, Model::Cascade(c)) if c.n_outputs() == 1 => Ok(()),
        (OutputMode::RandomOutput, Model::Cascade(_)) | (OutputMode::Replicated, Model::Replicated(_)) => Ok(()),
        (mode, _) => Err(Error::Config(format!(
            "output mode {mode:?} does not fit a model with {} outputs of this kind",
            model.n_outputs()
        ))),
    }
}

fn run_epoch(model: &mut Model, data: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let plan = make_batches(data.len(), cfg, epoch);
    let opts = cfg.batch_options();
    let mut rng = seeded_rng(cfg.seed, SELECT_STREAM, epoch as u64);
    let mut total = 0.0;
    let mut batches = 0usize;
    for idx in plan.batches() {
        let x = data.inputs.select_rows(idx)?;
        let t = data.targets.select_rows(idx)?;
        let mse = match model {
            Model::Cascade(c) if cfg.output_mode == OutputMode::RandomOutput => {
                train_batch_random_output(c, &x, &t, &opts, &mut rng)?.residual_before
            }
            Model::Cascade(c) => train_batch_single(c, &x, &t, &opts)?.residual_before,
            Model::Replicated(m) => {
                let results = train_batch_replicated(m, &x, &t, &opts)?;
                let mut sum = 0.0;
                for r in results {
                    sum += r?.residual_before;
                }
                sum / m.n_slices() as f64
            }
        };
        total += mse;
        batches += 1;
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}
