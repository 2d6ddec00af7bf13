//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::diffcore::Precision;
use crate::error::{Error, Result};
use crate::orderhead::GateActivation;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch at which the learning rate drops 10x; `None` means `epochs / 2`.
    pub lr_decay_epoch: Option<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Snippets per tuple.
    pub n: usize,
    /// Frame-sets per snippet.
    pub m: usize,
    /// Snippet length in frames.
    pub l: usize,
    /// Gap between snippets in frames.
    pub p: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_g: f64,
    pub lambda_o: f64,
    pub p_r: f64,
    pub p_m: f64,
    /// Encoder output width.
    pub feature_dim: usize,
    /// Graph convolution output width.
    pub gcn_dim: usize,
    /// Projection head width; `None` means `gcn_dim`.
    pub proj_dim: Option<usize>,
    pub gate: GateActivation,
    pub directed: bool,
    pub gcn_bias: bool,
    pub random_offset: bool,
    pub val_fraction: f64,
    pub precision: Precision,
    pub threads: usize,
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            lr: 0.001,
            lr_decay_epoch: None,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 7,
            n: 3,
            m: 4,
            l: 16,
            p: 8,
            tau: 0.5,
            alpha: 1.0,
            beta: 1.0,
            lambda_g: 1.0,
            lambda_o: 1.0,
            p_r: 0.2,
            p_m: 0.1,
            feature_dim: 32,
            gcn_dim: 32,
            proj_dim: None,
            gate: GateActivation::Relu,
            directed: false,
            gcn_bias: false,
            random_offset: false,
            val_fraction: 0.1,
            precision: Precision::F64,
            threads: 1,
            data: None,
        }
    }
}

/// Every accepted key with a one-line description, in canonical order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("epochs", "number of training epochs"),
    ("batch_size", "videos per SGD step"),
    ("lr", "initial learning rate"),
    ("lr_decay_epoch", "epoch of the 10x learning-rate drop (default epochs/2)"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 penalty on weights (not biases)"),
    ("seed", "global random seed"),
    ("n", "snippets per tuple"),
    ("m", "frame-sets per snippet"),
    ("l", "snippet length in frames"),
    ("p", "interval between snippets in frames"),
    ("tau", "contrastive temperature"),
    ("alpha", "weight of the intra-snippet graph losses"),
    ("beta", "weight of the inter-snippet graph loss"),
    ("lambda_g", "weight of the graph contrastive loss"),
    ("lambda_o", "weight of the order prediction loss"),
    ("p_r", "edge removal probability for view 1"),
    ("p_m", "feature mask probability for view 1"),
    ("feature_dim", "encoder output width"),
    ("gcn_dim", "graph convolution output width"),
    ("proj_dim", "projection head width (default gcn_dim)"),
    ("gate", "gate activation: relu or sigmoid"),
    ("directed", "use forward-only temporal edges"),
    ("gcn_bias", "add a bias to the graph convolution"),
    ("random_offset", "draw a random snippet start offset"),
    ("val_fraction", "fraction of videos held out for validation"),
    ("precision", "storage precision: 64 or 32"),
    ("threads", "worker threads for the per-sample passes"),
    ("data", "dataset directory"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {value}: expected true or false"))),
    }
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = parse_optional(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "l" => self.l = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "lambda_g" => self.lambda_g = parse(key, value)?,
            "lambda_o" => self.lambda_o = parse(key, value)?,
            "p_r" => self.p_r = parse(key, value)?,
            "p_m" => self.p_m = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "gcn_dim" => self.gcn_dim = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse_optional(key, value)?,
            "gate" => {
                self.gate = match value {
                    "relu" => GateActivation::Relu,
                    "sigmoid" => GateActivation::Sigmoid,
                    _ => return Err(Error::Config(format!("gate = {value}: expected relu or sigmoid"))),
                }
            }
            "directed" => self.directed = parse_bool(key, value)?,
            "gcn_bias" => self.gcn_bias = parse_bool(key, value)?,
            "random_offset" => self.random_offset = parse_bool(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "64" => Precision::F64,
                    "32" => Precision::F32,
                    _ => return Err(Error::Config(format!("precision = {value}: expected 64 or 32"))),
                }
            }
            "threads" => self.threads = parse(key, value)?,
            "data" => {
                self.data = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        Some(match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay_epoch" => opt(self.lr_decay_epoch),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "seed" => self.seed.to_string(),
            "n" => self.n.to_string(),
            "m" => self.m.to_string(),
            "l" => self.l.to_string(),
            "p" => self.p.to_string(),
            "tau" => self.tau.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "lambda_g" => self.lambda_g.to_string(),
            "lambda_o" => self.lambda_o.to_string(),
            "p_r" => self.p_r.to_string(),
            "p_m" => self.p_m.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "gcn_dim" => self.gcn_dim.to_string(),
            "proj_dim" => opt(self.proj_dim),
            "gate" => match self.gate {
                GateActivation::Relu => "relu".into(),
                GateActivation::Sigmoid => "sigmoid".into(),
            },
            "directed" => self.directed.to_string(),
            "gcn_bias" => self.gcn_bias.to_string(),
            "random_offset" => self.random_offset.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "precision" => match self.precision {
                Precision::F64 => "64".into(),
                Precision::F32 => "32".into(),
            },
            "threads" => self.threads.to_string(),
            "data" => self
                .data
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            _ => return None,
        })
    }

    pub fn decay_epoch(&self) -> usize {
        self.lr_decay_epoch.unwrap_or(self.epochs / 2)
    }

    pub fn projection_dim(&self) -> usize {
        self.proj_dim.unwrap_or(self.gcn_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n", self.n),
            ("m", self.m),
            ("l", self.l),
            ("feature_dim", self.feature_dim),
            ("gcn_dim", self.gcn_dim),
            ("projection width", self.projection_dim()),
            ("threads", self.threads),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.l.is_multiple_of(self.m) {
            return bad(format!("m = {} does not divide l = {}", self.m, self.l));
        }
        if !self.gcn_dim.is_multiple_of(2) {
            return bad(format!("gcn_dim = {} must be even for the order head", self.gcn_dim));
        }
        if self.n > 8 {
            return bad(format!("n = {} gives too many order classes", self.n));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_g", self.lambda_g),
            ("lambda_o", self.lambda_o),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for (name, v) in [("p_r", self.p_r), ("p_m", self.p_m)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    /// `key = value` lines for every key, in canonical order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, _) in CONFIG_KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        CONFIG_KEYS
            .iter()
            .map(|(k, _)| (*k, self.get(k).expect("listed key")))
            .collect()
    }
}

/// Parses `key = value` lines onto `base`. Blank lines and `#` comments
/// are skipped; unknown keys are rejected.
pub fn parse_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        cfg.set(key.trim(), value)
            .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
    }
    Ok(cfg)
}

/// Keys present in a config text, for precedence decisions.
pub fn keys_in(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let l = l.split('#').next()?.trim();
            l.split_once('=').map(|(k, _)| k.trim().to_string())
        })
        .collect()
}
