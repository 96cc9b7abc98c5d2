//! The `polycascade` command line: train, eval, predict, gradcheck.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cascade::{init_cascade, ReplicatedCascade};
use crate::data::{
    load_idx, load_matrix, synth_classification, synth_regression, Dataset,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::trainer::{accuracy, fit_with, EpochStats, Model, OutputMode};
use config::{layers_from_dims, parse_list, ModeName, RunConfig};

pub const METRICS_HEADER: &str = "epoch,train_mse,eval_accuracy,wall_seconds";

#[derive(Debug, Parser)]
#[command(name = "polycascade", version, about = "Polyharmonic spline cascades")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a model and train it.
    Train(TrainArgs),
    /// Report accuracy (classification) or RMSE (regression) of a checkpoint.
    Eval(EvalArgs),
    /// Write predictions of a checkpoint as CSV.
    Predict(PredictArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Single,
    Random,
    Replicated,
}

#[derive(Debug, Default, Args)]
pub struct DataArgs {
    /// IDX image file (optionally .gz).
    #[arg(long)]
    pub data_images: Option<PathBuf>,
    /// IDX label file (optionally .gz).
    #[arg(long)]
    pub data_labels: Option<PathBuf>,
    /// Delimited numeric file: inputs then targets on each line.
    #[arg(long)]
    pub data_csv: Option<PathBuf>,
    /// Number of target columns in delimited files.
    #[arg(long)]
    pub csv_outputs: Option<usize>,
    /// Use only the first N rows.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub eval_images: Option<PathBuf>,
    #[arg(long)]
    pub eval_labels: Option<PathBuf>,
    #[arg(long)]
    pub eval_csv: Option<PathBuf>,
    #[arg(long)]
    pub eval_limit: Option<usize>,
    /// Synthetic task (sine, peaks2d, sectorsN) when no data files are given.
    #[arg(long)]
    pub synth: Option<String>,
    #[arg(long)]
    pub synth_points: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Layer widths n0,n1,...,nq (replaces model.layers).
    #[arg(long)]
    pub dims: Option<String>,
    /// Constellation size, one for all layers or one per layer.
    #[arg(long)]
    pub k: Option<String>,
    /// Regularizer σ², one for all layers or one per layer.
    #[arg(long)]
    pub sigma2: Option<String>,
    /// Report wall_seconds as 0 so metrics files are reproducible.
    #[arg(long)]
    pub no_wall_clock: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output file (standard output when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "3,4,3,1")]
    pub dims: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub sigma2: f64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

impl TrainArgs {
    /// Folds command-line overrides into the file configuration.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let d = &mut cfg.data;
        if self.data.data_images.is_some() || self.data.data_csv.is_some() {
            d.images = self.data.data_images.clone();
            d.labels = self.data.data_labels.clone();
            d.csv = self.data.data_csv.clone();
        }
        override_opt(&mut d.csv_outputs, self.data.csv_outputs);
        override_opt(&mut d.train_limit, self.data.limit);
        if self.eval_images.is_some() || self.eval_csv.is_some() {
            d.eval_images = self.eval_images.clone();
            d.eval_labels = self.eval_labels.clone();
            d.eval_csv = self.eval_csv.clone();
        }
        override_opt(&mut d.eval_limit, self.eval_limit);
        if self.synth.is_some() {
            d.synth = self.synth.clone();
        }
        override_opt(&mut d.synth_points, self.synth_points);

        let o = &mut cfg.output;
        if self.checkpoint.is_some() {
            o.checkpoint = self.checkpoint.clone();
        }
        if self.metrics.is_some() {
            o.metrics = self.metrics.clone();
        }

        let t = &mut cfg.train;
        if self.alpha.is_some() {
            t.alpha = self.alpha;
        }
        override_val(&mut t.batch_size, self.batch_size);
        override_val(&mut t.epochs, self.epochs);
        override_val(&mut t.seed, self.seed);
        if let Some(m) = self.mode {
            t.mode = Some(match m {
                ModeArg::Single => ModeName::Single,
                ModeArg::Random => ModeName::Random,
                ModeArg::Replicated => ModeName::Replicated,
            });
        }
        if self.no_wall_clock {
            t.record_wall_time = false;
        }

        if let Some(dims) = &self.dims {
            let dims: Vec<usize> = parse_list(dims, "--dims")?;
            let ks: Vec<usize> = match &self.k {
                Some(k) => parse_list(k, "--k")?,
                None => return Err(Error::Config("--dims needs --k".into())),
            };
            cfg.model.layers = layers_from_dims(&dims, &ks)?;
        } else if self.k.is_some() {
            return Err(Error::Config("--k needs --dims".into()));
        }
        if let Some(s) = &self.sigma2 {
            cfg.model.sigma2 = parse_list(s, "--sigma2")?;
        }
        Ok(())
    }
}

fn override_opt<T: Copy>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn override_val<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn limit(ds: Dataset, n: Option<usize>) -> Result<Dataset> {
    match n {
        Some(n) if n < ds.len() => ds.head(n.max(1)),
        _ => Ok(ds),
    }
}

/// Loads a delimited file whose last `n_out` columns are targets.
fn load_csv(path: &Path, n_out: usize) -> Result<Dataset> {
    let m = load_matrix(path)?;
    if m.cols() <= n_out {
        return Err(Error::Format(format!(
            "{}: {} columns leave no inputs with {n_out} targets",
            path.display(),
            m.cols()
        )));
    }
    let n_in = m.cols() - n_out;
    Dataset::new(m.select_cols(0, n_in)?, m.select_cols(n_in, n_out)?, path.display().to_string())
}

fn load_files(
    images: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    csv: &Option<PathBuf>,
    csv_outputs: usize,
) -> Result<Option<Dataset>> {
    match (images, labels, csv) {
        (Some(i), Some(l), None) => Ok(Some(load_idx(i, l)?)),
        (None, None, Some(c)) => Ok(Some(load_csv(c, csv_outputs)?)),
        (None, None, None) => Ok(None),
        _ => Err(Error::Config(
            "give either an IDX image/label pair or one delimited file".into(),
        )),
    }
}

fn synth(name: &str, points: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if let Some(classes) = name.strip_prefix("sectors") {
        let classes: usize = classes
            .parse()
            .map_err(|_| Error::Config(format!("unknown synthetic task {name:?}")))?;
        synth_classification(points, classes, seed)
    } else {
        synth_regression(name, points, seed, noise)
    }
}

/// Training and optional evaluation sets described by `cfg`.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    let d = &cfg.data;
    let outs = d.csv_outputs.unwrap_or(1);
    let seed = cfg.train.seed;
    let points = d.synth_points.unwrap_or(1000);
    let train = match (load_files(&d.images, &d.labels, &d.csv, outs)?, &d.synth) {
        (Some(ds), _) => ds,
        (None, Some(name)) => synth(name, points, seed, d.synth_noise)?,
        (None, None) => return Err(Error::Config("no training data given".into())),
    };
    let eval = match (load_files(&d.eval_images, &d.eval_labels, &d.eval_csv, outs)?, &d.synth) {
        (Some(ds), _) => Some(ds),
        (None, Some(name)) if d.images.is_none() && d.csv.is_none() => {
            Some(synth(name, points, seed.wrapping_add(1), d.synth_noise)?)
        }
        _ => None,
    };
    let eval = eval.map(|e| limit(e, d.eval_limit)).transpose()?;
    Ok((limit(train, d.train_limit)?, eval))
}

/// Builds a fresh model for `data` as described by `cfg`.
pub fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<Model> {
    let s = data.n_outputs();
    let specs = cfg.layer_specs(data.n_inputs(), s)?;
    let sample = if cfg.model.init_rows > 0 && cfg.model.init_rows < data.len() {
        data.inputs.select_rows(&(0..cfg.model.init_rows).collect::<Vec<_>>())?
    } else {
        data.inputs.clone()
    };
    let base = init_cascade(&specs, &sample, cfg.kernel_constants()?, &cfg.init_options()?)?;
    Ok(match cfg.output_mode(s) {
        OutputMode::Replicated => Model::Replicated(ReplicatedCascade::from_base(&base, s)?),
        _ => Model::Cascade(base),
    })
}

pub fn metrics_line(s: &EpochStats) -> String {
    let acc = s.eval_accuracy.map(|a| a.to_string()).unwrap_or_default();
    format!("{},{},{},{}", s.epoch, s.mean_train_mse, acc, s.wall_seconds)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    args.apply(&mut cfg)?;
    let (train, eval) = load_datasets(&cfg)?;
    let tc = cfg.train_config(train.n_outputs())?;
    let mut model = build_model(&cfg, &train)?;
    println!(
        "trainable parameters: {} ({} rows, {} inputs, {} outputs, mode {:?})",
        model.param_count(),
        train.len(),
        train.n_inputs(),
        train.n_outputs(),
        tc.output_mode
    );

    let mut metrics = match &cfg.output.metrics {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{METRICS_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    if let Some(p) = &cfg.output.checkpoint {
        checkpoint::save(&model, p)?;
    }
    let outcome = fit_with(&mut model, &train, &tc, eval.as_ref(), |s, m| {
        if let Some(w) = metrics.as_mut() {
            writeln!(w, "{}", metrics_line(s))?;
            w.flush()?;
        }
        if let Some(p) = &cfg.output.checkpoint {
            checkpoint::save(m, p)?;
        }
        let acc = s
            .eval_accuracy
            .map(|a| format!(", eval accuracy {:.4}", a))
            .unwrap_or_default();
        println!(
            "epoch {}: train mse {:.6}{acc} ({:.1}s)",
            s.epoch, s.mean_train_mse, s.wall_seconds
        );
        Ok(())
    });
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Dataset for eval/predict, shaped to the model's widths.
fn load_for_model(data: &DataArgs, model: &Model) -> Result<Dataset> {
    let ds = match (&data.data_images, &data.data_labels, &data.data_csv) {
        (Some(i), Some(l), None) => load_idx(i, l)?,
        (None, None, Some(c)) => load_csv(c, data.csv_outputs.unwrap_or(model.n_outputs()))?,
        _ => {
            return Err(Error::Config(
                "give either --data-images with --data-labels or --data-csv".into(),
            ))
        }
    };
    if ds.n_inputs() != model.n_inputs() || ds.n_outputs() != model.n_outputs() {
        return Err(Error::Config(format!(
            "data is {}→{} but the checkpoint is {}→{}",
            ds.n_inputs(),
            ds.n_outputs(),
            model.n_inputs(),
            model.n_outputs()
        )));
    }
    limit(ds, data.limit)
}

/// Accuracy for multi-output models, RMSE for single-output ones.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<(String, f64)> {
    let pred = model.predict(&ds.inputs)?;
    if ds.n_outputs() >= 2 {
        Ok(("accuracy".into(), accuracy(&pred, &ds.targets)))
    } else {
        let mse = pred.sub(&ds.targets)?.sum_squares() / ds.len() as f64;
        Ok(("rmse".into(), mse.sqrt()))
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let ds = load_for_model(&args.data, &model)?;
    let (what, value) = evaluate(&model, &ds)?;
    println!("{what} {value}");
    Ok(())
}

fn write_csv(m: &Matrix, out: &mut impl Write) -> io::Result<()> {
    for i in 0..m.rows() {
        let fields: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let n_in = model.n_inputs();
    let inputs = match (&args.data.data_csv, &args.data.data_images, &args.data.data_labels) {
        (Some(c), None, None) => {
            let m = load_matrix(c)?;
            if m.cols() != n_in && m.cols() != n_in + model.n_outputs() {
                return Err(Error::Config(format!(
                    "{} has {} columns; the checkpoint takes {n_in} inputs",
                    c.display(),
                    m.cols()
                )));
            }
            m.select_cols(0, n_in)?
        }
        _ => load_for_model(&args.data, &model)?.inputs,
    };
    let pred = model.predict(&inputs)?;
    match &args.output {
        Some(p) => write_csv(&pred, &mut BufWriter::new(File::create(p)?))?,
        None => write_csv(&pred, &mut io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let dims: Vec<usize> = parse_list(&args.dims, "--dims")?;
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) || args.k == 0 || args.rows == 0 {
        return Err(Error::Config("gradcheck needs >= 2 positive widths, k >= 1, rows >= 1".into()));
    }
    let (cas, x) = gradcheck::random_problem(&dims, args.k, args.rows, args.seed, args.sigma2)?;
    let report = gradcheck::check_gradients(&cas, &x, args.step)?;
    for l in &report.layers {
        println!(
            "layer {}: max rel error G {:.3e}, dl/dy {:.3e}",
            l.layer, l.g_error, l.dy_error
        );
    }
    if report.passes(args.tolerance) {
        println!("gradcheck passed (tolerance {:e})", args.tolerance);
        Ok(())
    } else {
        let worst: Vec<String> = report
            .layers
            .iter()
            .filter_map(|l| {
                l.worst
                    .as_ref()
                    .filter(|w| w.error >= args.tolerance)
                    .map(|w| {
                        format!(
                            "layer {} {}: analytic {:e}, numeric {:e}, error {:.3e}",
                            l.layer, w.what, w.analytic, w.numeric, w.error
                        )
                    })
            })
            .collect();
        Err(Error::Verification(format!(
            "tolerance {:e} exceeded; worst entries: {}",
            args.tolerance,
            worst.join("; ")
        )))
    }
}
