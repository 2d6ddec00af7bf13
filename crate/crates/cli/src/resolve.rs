//! Config resolution: flag > file > environment > default.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use tcgl_core::config::{keys_in, parse_config, TrainConfig, CONFIG_KEYS};
use tcgl_core::sampler::{Dataset, DatasetSpec};
use tcgl_core::trainer::{load_checkpoint, Checkpoint, BEST_DIR, LAST_DIR};

use crate::Failure;

pub const SEED_ENV: &str = "TCGL_SEED";

pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn train_config(m: &ArgMatches) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::default();
    let mut file_keys = Vec::new();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{path}: {e}")))?;
        cfg = parse_config(&text, cfg).map_err(|e| Failure::Validation(format!("{path}: {e}")))?;
        file_keys = keys_in(&text);
    }
    if !file_keys.iter().any(|k| k == "seed") {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    for (key, _) in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_flag<T: std::str::FromStr>(m: &ArgMatches, name: &str) -> Result<Option<T>, Failure> {
    match m.get_one::<String>(name) {
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Failure::Validation(format!("--{name}: cannot parse {v:?}"))),
        None => Ok(None),
    }
}

/// The dataset a config trains on; without a `data` path it is the default
/// synthetic set drawn with the config seed.
pub fn dataset_for(cfg: &TrainConfig) -> Result<Dataset, Failure> {
    match &cfg.data {
        Some(dir) => Ok(Dataset::read(dir)?),
        None => Ok(Dataset::generate(&DatasetSpec {
            seed: cfg.seed,
            ..DatasetSpec::default()
        })?),
    }
}

/// Accepts either a checkpoint directory or a training output directory.
pub fn checkpoint_dir(path: &Path, which: &str) -> PathBuf {
    let sub = if which == "best" { BEST_DIR } else { LAST_DIR };
    let nested = path.join(sub);
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub fn checkpoint(m: &ArgMatches) -> Result<Checkpoint, Failure> {
    let path = PathBuf::from(m.get_one::<String>("ckpt").expect("required"));
    let which = m.get_one::<String>("which").map(String::as_str).unwrap_or("last");
    let dir = checkpoint_dir(&path, which);
    if !dir.is_dir() {
        return Err(Failure::Validation(format!("{}: no such checkpoint", dir.display())));
    }
    let mut ck = load_checkpoint(&dir)?;
    if let Some(threads) = parse_flag::<usize>(m, "threads")? {
        ck.config.set("threads", &threads.to_string())?;
    }
    if let Some(data) = m.get_one::<String>("data") {
        ck.config.data = Some(PathBuf::from(data));
    }
    Ok(ck)
}
