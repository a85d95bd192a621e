//! Run configuration files.
//!
//! A config file is plain text, one `key = value` per line. Blank lines and
//! lines starting with `#` are ignored, whitespace around keys and values is
//! trimmed, and a key may appear at most once. Unknown keys are errors.
//! `--override key=value` flags are applied after the file and may replace
//! any key.
//!
//! | key             | default        | meaning                                         |
//! |-----------------|----------------|-------------------------------------------------|
//! | dataset         | (none)         | UTF-8 text corpus                               |
//! | rotation        | 0              | left rotation applied before the split          |
//! | test_len        | 11100          | trailing tokens held out for evaluation         |
//! | run_name        | run            | run directory name under the output root        |
//! | output_dir      | (none)         | explicit run directory, overrides the above     |
//! | scheme          | 1              | 1..=4                                           |
//! | num_layers      | 1              | stacked LSTM layers                             |
//! | hidden_size     | 512            | LSTM width                                      |
//! | dense_size      | 1024           | width of the leaky-ReLU layer                   |
//! | leakiness       | 0.01           | leaky-ReLU slope                                |
//! | init            | default        | `default` (orthogonal/Glorot) or `zeros`        |
//! | k1              | 40             | tokens each lane advances per batch             |
//! | k2              | 100            | unrolled sequence length                        |
//! | loss_window     | auto           | `k3`, or `auto` for the scheme's own choice     |
//! | decay           | none           | `none`, `linear` or `exponential`               |
//! | lanes           | 64             | sequences per batch                             |
//! | total_batches   | 12800          |                                                 |
//! | learning_rate   | 0.001          | Adam step size                                  |
//! | beta1, beta2    | 0.9, 0.999     |                                                 |
//! | epsilon         | 1e-8           |                                                 |
//! | clip            | 50             | elementwise gradient clip                       |
//! | cell_clip       | none           | per-step clip on gate gradients                 |
//! | seed            | 0              | master seed                                     |
//! | precision       | 64             | `32` or `64`                                    |
//! | eval_points     | 40             | log-spaced evaluation points                    |
//! | sampling_mode   | multinomial    | `greedy` or `multinomial`                       |
//! | bench_warmup    | 5              | discarded benchmark rounds                      |
//! | bench_iters     | 20             | timed benchmark rounds, at least 5              |
//! | bench_tokens    | 100            | tokens drawn per sampling round                 |
//! | bench_schemes   | 1,2,3,4        |                                                 |
//! | bench_archs     | 1x128          | comma-separated `layers`x`hidden` pairs         |
//! | gradcheck_cases | 20             | random tiny models checked by `gradcheck`       |

use std::collections::HashSet;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use charrnn::bptt::Decay;
use charrnn::data::{DEFAULT_LANES, DEFAULT_TEST_LEN};
use charrnn::eval::MIN_BENCH_ITERS;
use charrnn::model::{DEFAULT_DENSE_SIZE, DEFAULT_LEAKINESS};
use charrnn::numerics::Precision;
use charrnn::optim::AdamConfig;
use charrnn::schemes::{DrawMode, SchemeId, TrainConfig, DEFAULT_CLIP, DEFAULT_TOTAL_BATCHES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Default,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub rotation: usize,
    pub test_len: usize,
    pub run_name: String,
    pub output_dir: Option<PathBuf>,
    pub scheme: SchemeId,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub dense_size: usize,
    pub leakiness: f64,
    pub init: InitMode,
    pub k1: usize,
    pub k2: usize,
    pub loss_window: Option<usize>,
    pub decay: Decay,
    pub lanes: usize,
    pub total_batches: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
    pub cell_clip: Option<f64>,
    pub seed: u64,
    pub precision: Precision,
    pub eval_points: usize,
    pub sampling_mode: DrawMode,
    pub bench_warmup: usize,
    pub bench_iters: usize,
    pub bench_tokens: usize,
    pub bench_schemes: Vec<SchemeId>,
    pub bench_archs: Vec<(usize, usize)>,
    pub gradcheck_cases: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            dataset: None,
            rotation: 0,
            test_len: DEFAULT_TEST_LEN,
            run_name: "run".into(),
            output_dir: None,
            scheme: SchemeId::Scheme1,
            num_layers: 1,
            hidden_size: 512,
            dense_size: DEFAULT_DENSE_SIZE,
            leakiness: DEFAULT_LEAKINESS,
            init: InitMode::Default,
            k1: 40,
            k2: 100,
            loss_window: None,
            decay: Decay::None,
            lanes: DEFAULT_LANES,
            total_batches: DEFAULT_TOTAL_BATCHES,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            clip: DEFAULT_CLIP,
            cell_clip: None,
            seed: 0,
            precision: Precision::F64,
            eval_points: 40,
            sampling_mode: DrawMode::Multinomial,
            bench_warmup: 5,
            bench_iters: 20,
            bench_tokens: 100,
            bench_schemes: SchemeId::ALL.to_vec(),
            bench_archs: vec![(1, 128)],
            gradcheck_cases: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn parse_scheme(key: &str, value: &str) -> Result<SchemeId, ConfigError> {
    value
        .parse::<u8>()
        .ok()
        .and_then(SchemeId::from_number)
        .ok_or_else(|| bad(key, value, "expected 1, 2, 3 or 4"))
}

fn decay_name(d: Decay) -> &'static str {
    match d {
        Decay::None => "none",
        Decay::Linear => "linear",
        Decay::Exponential => "exponential",
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 33] = [
        "dataset",
        "rotation",
        "test_len",
        "run_name",
        "output_dir",
        "scheme",
        "num_layers",
        "hidden_size",
        "dense_size",
        "leakiness",
        "init",
        "k1",
        "k2",
        "loss_window",
        "decay",
        "lanes",
        "total_batches",
        "learning_rate",
        "beta1",
        "beta2",
        "epsilon",
        "clip",
        "cell_clip",
        "seed",
        "precision",
        "eval_points",
        "sampling_mode",
        "bench_warmup",
        "bench_iters",
        "bench_tokens",
        "bench_schemes",
        "bench_archs",
        "gradcheck_cases",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "rotation" => self.rotation = parse(key, value)?,
            "test_len" => self.test_len = parse(key, value)?,
            "run_name" => {
                if value.is_empty() || value.contains(['/', '\\']) || value == "." || value == ".."
                {
                    return Err(bad(key, value, "must be a plain directory name"));
                }
                self.run_name = value.into();
            }
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "scheme" => self.scheme = parse_scheme(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "dense_size" => self.dense_size = parse(key, value)?,
            "leakiness" => self.leakiness = parse(key, value)?,
            "init" => {
                self.init = match value {
                    "default" => InitMode::Default,
                    "zeros" => InitMode::Zeros,
                    _ => return Err(bad(key, value, "expected default or zeros")),
                }
            }
            "k1" => self.k1 = parse(key, value)?,
            "k2" => self.k2 = parse(key, value)?,
            "loss_window" => {
                self.loss_window = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "decay" => {
                self.decay = match value {
                    "none" => Decay::None,
                    "linear" => Decay::Linear,
                    "exponential" => Decay::Exponential,
                    _ => return Err(bad(key, value, "expected none, linear or exponential")),
                }
            }
            "lanes" => self.lanes = parse(key, value)?,
            "total_batches" => self.total_batches = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "cell_clip" => {
                self.cell_clip = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "precision" => {
                self.precision = value
                    .parse::<u32>()
                    .ok()
                    .and_then(Precision::from_bits)
                    .ok_or_else(|| bad(key, value, "expected 32 or 64"))?
            }
            "eval_points" => self.eval_points = parse(key, value)?,
            "sampling_mode" => {
                self.sampling_mode = value
                    .parse()
                    .map_err(|_| bad(key, value, "expected greedy or multinomial"))?
            }
            "bench_warmup" => self.bench_warmup = parse(key, value)?,
            "bench_iters" => self.bench_iters = parse(key, value)?,
            "bench_tokens" => self.bench_tokens = parse(key, value)?,
            "bench_schemes" => {
                self.bench_schemes = value
                    .split(',')
                    .map(|s| parse_scheme(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "bench_archs" => {
                self.bench_archs = value
                    .split(',')
                    .map(|pair| {
                        let (r, g) = pair
                            .trim()
                            .split_once('x')
                            .ok_or_else(|| bad(key, value, "expected LAYERSxHIDDEN pairs"))?;
                        Ok((parse(key, r)?, parse(key, g)?))
                    })
                    .collect::<Result<_, ConfigError>>()?
            }
            "gradcheck_cases" => self.gradcheck_cases = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_pair(line).ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.into()));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, value) = split_pair(pair).ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.into(),
        })?;
        self.set(key, value)
    }

    /// Every key with its current value, in documentation order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let schemes: Vec<String> = self
            .bench_schemes
            .iter()
            .map(|s| s.number().to_string())
            .collect();
        let archs: Vec<String> = self
            .bench_archs
            .iter()
            .map(|(r, g)| format!("{r}x{g}"))
            .collect();
        let mut out = Vec::new();
        if let Some(d) = opt_path(&self.dataset) {
            out.push(("dataset", d));
        }
        out.push(("rotation", self.rotation.to_string()));
        out.push(("test_len", self.test_len.to_string()));
        out.push(("run_name", self.run_name.clone()));
        if let Some(d) = opt_path(&self.output_dir) {
            out.push(("output_dir", d));
        }
        out.extend([
            ("scheme", self.scheme.number().to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("dense_size", self.dense_size.to_string()),
            ("leakiness", format!("{:?}", self.leakiness)),
            (
                "init",
                match self.init {
                    InitMode::Default => "default",
                    InitMode::Zeros => "zeros",
                }
                .to_string(),
            ),
            ("k1", self.k1.to_string()),
            ("k2", self.k2.to_string()),
            (
                "loss_window",
                self.loss_window
                    .map_or("auto".to_string(), |w| w.to_string()),
            ),
            ("decay", decay_name(self.decay).to_string()),
            ("lanes", self.lanes.to_string()),
            ("total_batches", self.total_batches.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("epsilon", format!("{:?}", self.epsilon)),
            ("clip", format!("{:?}", self.clip)),
            (
                "cell_clip",
                self.cell_clip
                    .map_or("none".to_string(), |c| format!("{c:?}")),
            ),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("eval_points", self.eval_points.to_string()),
            ("sampling_mode", self.sampling_mode.to_string()),
            ("bench_warmup", self.bench_warmup.to_string()),
            ("bench_iters", self.bench_iters.to_string()),
            ("bench_tokens", self.bench_tokens.to_string()),
            ("bench_schemes", schemes.join(",")),
            ("bench_archs", archs.join(",")),
            ("gradcheck_cases", self.gradcheck_cases.to_string()),
        ]);
        out
    }

    /// The resolved configuration as a config file.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.scheme, self.k1, self.k2);
        t.lanes = self.lanes;
        t.total_batches = self.total_batches;
        t.adam = AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        };
        t.clip = self.clip;
        t.cell_clip = self.cell_clip;
        t.loss_window = self.loss_window;
        t.decay = self.decay;
        t.seed = self.seed;
        t.precision = self.precision;
        t
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("dense_size", self.dense_size),
            ("eval_points", self.eval_points),
            ("bench_tokens", self.bench_tokens),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.leakiness >= 0.0 && self.leakiness.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "leakiness must be finite and >= 0, got {}",
                self.leakiness
            )));
        }
        if self.bench_iters < MIN_BENCH_ITERS {
            return Err(ConfigError::Invalid(format!(
                "bench_iters must be at least {MIN_BENCH_ITERS}, got {}",
                self.bench_iters
            )));
        }
        if self.bench_schemes.is_empty() || self.bench_archs.is_empty() {
            return Err(ConfigError::Invalid(
                "bench_schemes and bench_archs must not be empty".into(),
            ));
        }
        if self.bench_archs.iter().any(|&(r, g)| r == 0 || g == 0) {
            return Err(ConfigError::Invalid(
                "bench_archs entries must be at least 1x1".into(),
            ));
        }
        Ok(())
    }
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k, v.trim()))
}
