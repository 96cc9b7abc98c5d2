//! TOML run configuration.
//!
//! ```toml
//! [model]
//! layers = [{ k = 16, n = 8 }, { k = 16, n = 8 }, { k = 16 }]
//! sigma2 = [1e-3]          # one value, or one per layer
//!
//! [train]
//! batch_size = 64          # alpha defaults to 100·batch_size
//! epochs = 10
//! mode = "replicated"      # single | random | replicated
//!
//! [data]
//! images = "train-images-idx3-ubyte"
//! labels = "train-labels-idx1-ubyte"
//!
//! [output]
//! metrics = "metrics.csv"
//! checkpoint = "model.ckpt"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cascade::{InitOptions, LayerSpec, DEFAULT_JITTER_EPS, DEFAULT_Y_INIT};
use crate::error::{Error, Result};
use crate::package::{KernelConstants, DEFAULT_M_FLOOR};
use crate::trainer::{default_alpha, Convention, OutputMode, TrainConfig};

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    /// Constellation size.
    pub k: usize,
    /// Output width; may be omitted on the last layer, where it follows from
    /// the data and the output mode.
    pub n: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Vec<LayerEntry>,
    pub b: f64,
    pub c_offset: f64,
    pub m_floor: f64,
    pub sigma2: Vec<f64>,
    pub y_init: f64,
    pub jitter_eps: f64,
    /// Training rows used to sample constellations (0 means all).
    pub init_rows: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let k = KernelConstants::default();
        ModelSection {
            layers: Vec::new(),
            b: k.b,
            c_offset: k.c_offset,
            m_floor: DEFAULT_M_FLOOR,
            sigma2: vec![1e-3],
            y_init: DEFAULT_Y_INIT,
            jitter_eps: DEFAULT_JITTER_EPS,
            init_rows: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Single,
    #[serde(alias = "random_output")]
    Random,
    Replicated,
}

impl From<ModeName> for OutputMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Single => OutputMode::Single,
            ModeName::Random => OutputMode::RandomOutput,
            ModeName::Replicated => OutputMode::Replicated,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Defaults to `single` for one output and `replicated` otherwise.
    pub mode: Option<ModeName>,
    pub shuffle: bool,
    pub drop_last: bool,
    pub measure_after: bool,
    pub record_wall_time: bool,
    pub convention: Convention,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            alpha: None,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            mode: None,
            shuffle: t.shuffle,
            drop_last: t.drop_last,
            measure_after: t.measure_after,
            record_wall_time: t.record_wall_time,
            convention: t.convention,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Target columns in delimited files (inputs are the remaining columns).
    pub csv_outputs: Option<usize>,
    pub eval_images: Option<PathBuf>,
    pub eval_labels: Option<PathBuf>,
    pub eval_csv: Option<PathBuf>,
    /// Synthetic task name (`sine`, `peaks2d`, `sectors3`) used when no
    /// files are given.
    pub synth: Option<String>,
    pub synth_points: Option<usize>,
    pub synth_noise: f64,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    pub fn kernel_constants(&self) -> Result<KernelConstants> {
        KernelConstants::new(self.model.b, self.model.c_offset, self.model.m_floor)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Mode for a dataset with `s` target columns.
    pub fn output_mode(&self, s: usize) -> OutputMode {
        match self.train.mode {
            Some(m) => m.into(),
            None if s == 1 => OutputMode::Single,
            None => OutputMode::Replicated,
        }
    }

    pub fn train_config(&self, s: usize) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            alpha: t.alpha.unwrap_or_else(|| default_alpha(t.batch_size)),
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            output_mode: self.output_mode(s),
            shuffle: t.shuffle,
            drop_last: t.drop_last,
            measure_after: t.measure_after,
            convention: t.convention,
            record_wall_time: t.record_wall_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Layer shapes for `n0` inputs and `s` targets. In replicated mode each
    /// slice has a single output, so the last layer is one wide.
    pub fn layer_specs(&self, n0: usize, s: usize) -> Result<Vec<LayerSpec>> {
        let layers = &self.model.layers;
        if layers.is_empty() {
            return Err(Error::Config("model.layers is empty".into()));
        }
        let out_width = match self.output_mode(s) {
            OutputMode::Replicated | OutputMode::Single => 1,
            OutputMode::RandomOutput => s,
        };
        if self.output_mode(s) == OutputMode::Single && s != 1 {
            return Err(Error::Config(format!("single mode needs one target column, data has {s}")));
        }
        let mut specs = Vec::with_capacity(layers.len());
        let mut n_in = n0;
        for (i, l) in layers.iter().enumerate() {
            let last = i + 1 == layers.len();
            let n_out = match (l.n, last) {
                (Some(n), true) if n != out_width => {
                    return Err(Error::Config(format!(
                        "last layer has n = {n} but this mode needs {out_width}"
                    )))
                }
                (Some(n), _) => n,
                (None, true) => out_width,
                (None, false) => {
                    return Err(Error::Config(format!("layer {} is missing its width n", i + 1)))
                }
            };
            if l.k == 0 || n_out == 0 {
                return Err(Error::Config(format!("layer {}: k and n must be >= 1", i + 1)));
            }
            specs.push(LayerSpec { n_in, n_out, k: l.k });
            n_in = n_out;
        }
        Ok(specs)
    }

    pub fn init_options(&self) -> Result<InitOptions> {
        let m = &self.model;
        if m.sigma2.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("sigma2 values must be >= 0".into()));
        }
        if m.sigma2.len() > 1 && m.sigma2.len() != m.layers.len() {
            return Err(Error::Config(format!(
                "{} sigma2 values for {} layers",
                m.sigma2.len(),
                m.layers.len()
            )));
        }
        Ok(InitOptions {
            seed: self.train.seed,
            sigma2: m.sigma2.clone(),
            y_init: m.y_init,
            jitter_eps: m.jitter_eps,
        })
    }
}

/// Parses `"1,8,8,1"`-style lists.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{what}: cannot parse {s:?}")))
        })
        .collect()
}

/// Layer entries from `--dims n0,n1,...,nq` and `--k k` (or one `k` per layer).
pub fn layers_from_dims(dims: &[usize], ks: &[usize]) -> Result<Vec<LayerEntry>> {
    if dims.len() < 2 {
        return Err(Error::Config("--dims needs at least an input and an output width".into()));
    }
    let q = dims.len() - 1;
    if ks.len() != 1 && ks.len() != q {
        return Err(Error::Config(format!("{} constellation sizes for {q} layers", ks.len())));
    }
    Ok((0..q)
        .map(|i| LayerEntry {
            k: if ks.len() == 1 { ks[0] } else { ks[i] },
            n: Some(dims[i + 1]),
        })
        .collect())
}
