//! SGD training loop, data split, validation and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::diffcore::{Precision, Tensor};
use crate::encoder::FrameStats;
use crate::error::{Error, Result};
use crate::model::{evaluate_sample, sample_gradients, SampleOutcome, TcglParams};
use crate::sampler::{draw_permutation, required_frames, Dataset};
use crate::store::{Archive, Dtype};

pub const METRICS_HEADER: &str = "epoch,total_loss,graph_loss,order_loss,train_acc,val_acc";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const CONFIG_FILE: &str = "config.cfg";
pub const LAST_DIR: &str = "last";
pub const BEST_DIR: &str = "best";
const CHECKPOINT_KIND: &str = "checkpoint";
const SPLIT_STREAM: u64 = u64::MAX;

/// One classical momentum step on a single tensor:
/// `v ← μ v + g + wd·p`, `p ← p − lr·v`.
pub fn sgd_update(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::ShapeMismatch {
            op: "sgd",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    for ((p, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Weight decay applies to tensors whose name ends in `.weight`.
pub fn is_weight(name: &str) -> bool {
    name.ends_with(".weight")
}

/// Applies one step to every parameter. Nothing changes if any gradient
/// is non-finite.
pub fn sgd_step(
    params: &mut TcglParams,
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let names = params.names();
    if grads.len() != names.len() || velocity.len() != names.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} gradients and {} velocity buffers",
            names.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if let Some((name, _)) = names.iter().zip(grads).find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }
    for (((name, p), g), v) in params.named_mut().into_iter().zip(grads).zip(velocity.iter_mut()) {
        let wd = if is_weight(&name) { weight_decay } else { 0.0 };
        sgd_update(p, g, v, lr, momentum, wd)?;
    }
    Ok(())
}

/// Deterministic held-out split: videos ranked by a seeded hash, the first
/// `round(len · val_fraction)` form the validation set. Both lists ascend.
pub fn split_indices(len: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut keyed: Vec<(u64, usize)> = (0..len).map(|i| (rng.gen::<u64>(), i)).collect();
    keyed.sort_unstable();
    let k = ((len as f64 * val_fraction).round() as usize).min(len.saturating_sub(1));
    let mut val: Vec<usize> = keyed[..k].iter().map(|&(_, i)| i).collect();
    let mut train: Vec<usize> = keyed[k..].iter().map(|&(_, i)| i).collect();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Fixed permutation and corruption seed for evaluating video `index`.
pub fn eval_draw(seed: u64, index: usize, n: usize) -> (usize, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + index as u64);
    (draw_permutation(n, &mut rng), rng.gen())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitScore {
    pub loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Mean total loss and order accuracy over `indices`.
pub fn score_split(
    params: &TcglParams,
    cfg: &TrainConfig,
    stats: &[FrameStats],
    indices: &[usize],
) -> Result<SplitScore> {
    let outcomes = parallel_map(indices, cfg.threads, |&i| {
        let (perm, seed) = eval_draw(cfg.seed, i, cfg.n);
        evaluate_sample(params, cfg, &stats[i], perm, seed)
    })?;
    let count = outcomes.len();
    if count == 0 {
        return Ok(SplitScore {
            loss: f64::NAN,
            accuracy: f64::NAN,
            count,
        });
    }
    let loss = outcomes.iter().map(|o| o.total).sum::<f64>() / count as f64;
    let correct = outcomes.iter().filter(|o| o.correct()).count();
    Ok(SplitScore {
        loss,
        accuracy: correct as f64 / count as f64,
        count,
    })
}

/// Maps `f` over `items` on up to `threads` scoped workers, keeping order.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total_loss: f64,
    pub graph_loss: f64,
    pub order_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

impl EpochMetrics {
    const WIDTH: usize = 7;

    fn to_row(self) -> [f64; Self::WIDTH] {
        [
            self.epoch as f64,
            self.total_loss,
            self.graph_loss,
            self.order_loss,
            self.train_acc,
            self.val_acc,
            self.val_loss,
        ]
    }

    fn from_row(r: &[f64]) -> Self {
        EpochMetrics {
            epoch: r[0] as usize,
            total_loss: r[1],
            graph_loss: r[2],
            order_loss: r[3],
            train_acc: r[4],
            val_acc: r[5],
            val_loss: r[6],
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.total_loss, self.graph_loss, self.order_loss, self.train_acc, self.val_acc
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in history {
        let _ = writeln!(s, "{}", m.csv_row());
    }
    s
}

/// Exact position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn encode(&self) -> String {
        let seed: String = self.seed.iter().map(|b| format!("{b:02x}")).collect();
        format!("{seed} {} {}", self.stream, self.word_pos)
    }

    fn decode(s: &str) -> Result<Self> {
        let bad = || Error::format("checkpoint", format!("malformed rng state `{s}`"));
        let f: Vec<&str> = s.split(' ').collect();
        if f.len() != 3 || f[0].len() != 64 || !f[0].is_ascii() {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&f[0][2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(RngState {
            seed,
            stream: f[1].parse().map_err(|_| bad())?,
            word_pos: f[2].parse().map_err(|_| bad())?,
        })
    }
}

/// Complete training state after `epoch` finished epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub channels: usize,
    pub epoch: usize,
    pub params: TcglParams,
    /// Aligned with [`TcglParams::named`].
    pub velocity: Vec<Tensor>,
    pub rng: RngState,
    /// Epoch and validation loss of the best model so far.
    pub best: Option<(usize, f64)>,
    pub history: Vec<EpochMetrics>,
    /// Mean batch loss of every SGD step so far.
    pub trace: Vec<f64>,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(CHECKPOINT_KIND);
        a.push_meta("epoch", self.epoch);
        a.push_meta("channels", self.channels);
        a.push_meta("rng", self.rng.encode());
        if let Some((epoch, loss)) = self.best {
            a.push_meta("best_epoch", epoch);
            a.push_meta("best_val_loss", format!("{:016x}", loss.to_bits()));
        }
        for (k, v) in self.config.pairs() {
            a.push_meta(&format!("config.{k}"), v);
        }
        let dtype = match self.config.precision {
            Precision::F64 => Dtype::F64,
            Precision::F32 => Dtype::F32,
        };
        for (name, t) in self.params.named() {
            a.push_tensor(&name, dtype, t.clone());
        }
        for ((name, _), v) in self.params.named().into_iter().zip(&self.velocity) {
            a.push_tensor(&format!("velocity.{name}"), dtype, v.clone());
        }
        let rows: Vec<f64> = self.history.iter().flat_map(|m| m.to_row()).collect();
        if !rows.is_empty() {
            let h = Tensor::matrix(self.history.len(), EpochMetrics::WIDTH, rows).expect("row width");
            a.push_tensor("history", Dtype::F64, h);
        }
        if !self.trace.is_empty() {
            a.push_tensor("trace", Dtype::F64, Tensor::vector(self.trace.clone()));
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != CHECKPOINT_KIND {
            return Err(Error::format("checkpoint", format!("archive holds a `{}`", a.kind)));
        }
        let mut config = TrainConfig::default();
        for (k, v) in &a.meta {
            if let Some(key) = k.strip_prefix("config.") {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        let channels: usize = a.meta_parse("channels")?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = TcglParams::init(&config, channels, &mut rng)?;
        let names = params.names();
        let owned = names
            .iter()
            .map(|n| Ok((n.clone(), a.tensor(n)?.tensor.clone())))
            .collect::<Result<Vec<_>>>()?;
        params.assign(&owned)?;
        let velocity = names
            .iter()
            .zip(&owned)
            .map(|(n, (_, p))| {
                let v = a.tensor(&format!("velocity.{n}"))?.tensor.clone();
                if v.shape() != p.shape() {
                    return Err(Error::format("checkpoint", format!("velocity of {n} has the wrong shape")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = 2 * names.len()
            + usize::from(a.tensor("history").is_ok())
            + usize::from(a.tensor("trace").is_ok());
        if a.tensors.len() != expected {
            return Err(Error::format("checkpoint", "unexpected extra tensors"));
        }
        let best = match a.meta("best_epoch") {
            Ok(_) => {
                let bits = u64::from_str_radix(a.meta("best_val_loss")?, 16)
                    .map_err(|_| Error::format("checkpoint", "malformed best_val_loss"))?;
                Some((a.meta_parse("best_epoch")?, f64::from_bits(bits)))
            }
            Err(_) => None,
        };
        let history = match a.tensor("history") {
            Ok(t) => {
                if t.tensor.rank() != 2 || t.tensor.cols() != EpochMetrics::WIDTH {
                    return Err(Error::format("checkpoint", "malformed history"));
                }
                t.tensor.data().chunks(EpochMetrics::WIDTH).map(EpochMetrics::from_row).collect()
            }
            Err(_) => Vec::new(),
        };
        let trace = a.tensor("trace").map(|t| t.tensor.data().to_vec()).unwrap_or_default();
        Ok(Checkpoint {
            config,
            channels,
            epoch: a.meta_parse("epoch")?,
            params,
            velocity,
            rng: RngState::decode(a.meta("rng")?)?,
            best,
            history,
            trace,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    ckpt.to_archive().write(dir)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::from_archive(&Archive::read(dir)?)
}

/// Checks that every video in `dataset` fits the model described by `cfg`.
pub fn check_dataset(cfg: &TrainConfig, dataset: &Dataset) -> Result<usize> {
    let first = dataset
        .videos
        .first()
        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
    let channels = first.channels();
    let need = required_frames(cfg.l, cfg.p, cfg.n);
    for (i, v) in dataset.videos.iter().enumerate() {
        if v.channels() != channels {
            return Err(Error::Config(format!(
                "video {i} has {} channels, expected {channels}",
                v.channels()
            )));
        }
        if v.frames() < need {
            return Err(Error::VideoTooShort {
                frames: v.frames(),
                required: need,
            });
        }
    }
    Ok(channels)
}

pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochMetrics);

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where metrics, config and checkpoints go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Best-so-far state saved alongside `resume`.
    pub resume_best: Option<Checkpoint>,
    /// Stop after this many total epochs, as if interrupted.
    pub stop_after: Option<usize>,
    pub on_epoch: Option<EpochHook<'a>>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest validation loss state.
    pub best: Checkpoint,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_outputs(dir: &Path, last: &Checkpoint, best: &Checkpoint, best_changed: bool) -> Result<()> {
    write_text(&dir.join(METRICS_FILE), &metrics_csv(&last.history))?;
    let mut trace = String::from("step,loss\n");
    for (i, l) in last.trace.iter().enumerate() {
        let _ = writeln!(trace, "{},{l}", i + 1);
    }
    write_text(&dir.join(TRACE_FILE), &trace)?;
    save_checkpoint(last, &dir.join(LAST_DIR))?;
    if best_changed {
        save_checkpoint(best, &dir.join(BEST_DIR))?;
    }
    Ok(())
}

fn seeded_init(cfg: &TrainConfig, channels: usize) -> Result<(TcglParams, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = TcglParams::init(cfg, channels, &mut rng)?;
    Ok((params, rng))
}

/// The parameters a fresh run with `cfg` starts from.
pub fn initial_params(cfg: &TrainConfig, channels: usize) -> Result<TcglParams> {
    Ok(seeded_init(cfg, channels)?.0)
}

/// Trains on `dataset` from scratch or from `opts.resume`.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, mut opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let channels = check_dataset(cfg, dataset)?;
    let stats: Vec<FrameStats> = dataset.videos.iter().map(FrameStats::of).collect();
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::Config("no training videos after the split".into()));
    }

    let (mut state, mut rng) = match opts.resume.take() {
        Some(ck) => {
            if ck.config != *cfg {
                return Err(Error::Config("resume config differs from the checkpoint config".into()));
            }
            if ck.channels != channels {
                return Err(Error::Config(format!(
                    "checkpoint expects {} channels, dataset has {channels}",
                    ck.channels
                )));
            }
            let rng = ck.rng.restore();
            (ck, rng)
        }
        None => {
            let (params, rng) = seeded_init(cfg, channels)?;
            let velocity = params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            let ck = Checkpoint {
                config: cfg.clone(),
                channels,
                epoch: 0,
                params,
                velocity,
                rng: RngState::capture(&rng),
                best: None,
                history: Vec::new(),
                trace: Vec::new(),
            };
            (ck, rng)
        }
    };
    let mut best_state = match opts.resume_best.take() {
        Some(b) if b.config == *cfg && b.epoch <= state.epoch => b,
        Some(_) => return Err(Error::Config("best checkpoint does not belong to this run".into())),
        None => state.clone(),
    };

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    }

    let end = opts.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    while state.epoch < end {
        let lr = if state.epoch >= cfg.decay_epoch() { cfg.lr * 0.1 } else { cfg.lr };
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_graph, mut sum_order, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let jobs: Vec<(usize, usize, u64)> = batch
                .iter()
                .map(|&i| (i, draw_permutation(cfg.n, &mut rng), rng.gen::<u64>()))
                .collect();
            let params = &state.params;
            let results: Vec<(SampleOutcome, Vec<Tensor>)> = parallel_map(&jobs, cfg.threads, |&(i, perm, seed)| {
                sample_gradients(params, cfg, &stats[i], perm, seed)
            })?;
            let mut grads: Vec<Tensor> = results[0].1.iter().map(|g| Tensor::zeros(g.shape())).collect();
            let mut batch_loss = 0.0;
            for (out, g) in &results {
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b;
                    }
                }
                batch_loss += out.total;
                sum_total += out.total;
                sum_graph += out.graph;
                sum_order += out.order;
                correct += usize::from(out.correct());
            }
            let scale = 1.0 / results.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v = cfg.precision.round(*v * scale);
                }
            }
            sgd_step(&mut state.params, &grads, &mut state.velocity, lr, cfg.momentum, cfg.weight_decay)?;
            state.params.round_to(cfg.precision);
            for v in &mut state.velocity {
                for x in v.data_mut() {
                    *x = cfg.precision.round(*x);
                }
            }
            state.trace.push(batch_loss * scale);
        }

        let val = score_split(&state.params, cfg, &stats, &val_idx)?;
        let seen = order.len() as f64;
        let metrics = EpochMetrics {
            epoch: state.epoch + 1,
            total_loss: sum_total / seen,
            graph_loss: sum_graph / seen,
            order_loss: sum_order / seen,
            train_acc: correct as f64 / seen,
            val_acc: val.accuracy,
            val_loss: val.loss,
        };
        state.epoch += 1;
        state.history.push(metrics);
        state.rng = RngState::capture(&rng);
        // Without a validation set, selection falls back to training loss.
        let score = if val.count > 0 { val.loss } else { metrics.total_loss };
        let improved = state.best.is_none_or(|(_, b)| score < b);
        if improved {
            state.best = Some((state.epoch, score));
            best_state = state.clone();
        } else {
            best_state.best = state.best;
        }
        if let Some(dir) = &opts.out_dir {
            write_outputs(dir, &state, &best_state, improved)?;
        }
        if let Some(hook) = opts.on_epoch.as_mut() {
            hook(&metrics);
        }
    }
    if state.best.is_none() {
        best_state = state.clone();
    }
    Ok(TrainOutcome {
        last: state,
        best: best_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::DatasetSpec;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 4,
            l: 4,
            p: 2,
            m: 2,
            feature_dim: 8,
            gcn_dim: 8,
            lr: 0.01,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Dataset {
        Dataset::generate(&DatasetSpec {
            videos: 12,
            classes: 3,
            frames: 16,
            height: 4,
            width: 4,
            ..DatasetSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut v = Tensor::zeros(&[2]);
        sgd_update(&mut p, &Tensor::zeros(&[2]), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = Tensor::vector(vec![2.0]);
        let mut v = Tensor::zeros(&[1]);
        sgd_update(&mut p, &Tensor::vector(vec![0.5]), &mut v, 0.1, 0.9, 0.01).unwrap();
        assert_eq!(p.data()[0], 2.0 - 0.1 * (0.5 + 0.01 * 2.0));
    }

    #[test]
    fn quadratic_matches_scalar_recurrence() {
        // f(x) = 1.5 x^2, grad 3x.
        let (lr, mu, wd) = (0.05, 0.9, 0.001);
        let mut p = Tensor::vector(vec![1.3]);
        let mut v = Tensor::zeros(&[1]);
        let (mut x, mut vel) = (1.3f64, 0.0f64);
        for _ in 0..2 {
            let g = Tensor::vector(vec![3.0 * p.data()[0]]);
            sgd_update(&mut p, &g, &mut v, lr, mu, wd).unwrap();
            vel = mu * vel + 3.0 * x + wd * x;
            x -= lr * vel;
        }
        assert!((p.data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = TcglParams::init(&cfg, 1, &mut rng).unwrap();
        let before = params.clone();
        let mut grads: Vec<Tensor> = params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let mut vel = grads.clone();
        let last = grads.len() - 1;
        grads[last].data_mut()[0] = f64::NAN;
        let err = sgd_step(&mut params, &grads, &mut vel, 0.1, 0.9, 0.1).unwrap_err();
        assert!(err.to_string().contains("order.out.bias"), "{err}");
        assert_eq!(params, before);
    }

    #[test]
    fn weight_decay_skips_biases() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = TcglParams::init(&cfg, 1, &mut rng).unwrap();
        let before = params.clone();
        let grads: Vec<Tensor> = params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let mut vel = grads.clone();
        sgd_step(&mut params, &grads, &mut vel, 0.1, 0.9, 0.5).unwrap();
        for ((name, a), (_, b)) in params.named().into_iter().zip(before.named()) {
            if is_weight(&name) {
                assert_ne!(a, b, "{name}");
            } else {
                assert_eq!(a, b, "{name}");
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (t, v) = split_indices(200, 0.1, 7);
        assert_eq!((t.len(), v.len()), (180, 20));
        assert_eq!(split_indices(200, 0.1, 7), (t.clone(), v.clone()));
        assert_ne!(split_indices(200, 0.1, 8).1, v);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert_eq!(split_indices(5, 0.0, 1).1.len(), 0);
    }

    #[test]
    fn rng_state_round_trips_mid_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..17 {
            rng.gen::<u32>();
        }
        let s = RngState::capture(&rng);
        assert_eq!(RngState::decode(&s.encode()).unwrap(), s);
        let mut back = s.restore();
        assert_eq!(back.gen::<u64>(), rng.gen::<u64>());
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let cfg = tiny_cfg();
        let data = tiny_data();
        let a = train(&cfg, &data, TrainOptions::default()).unwrap();
        let b = train(&cfg, &data, TrainOptions::default()).unwrap();
        assert_eq!(a.last.trace, b.last.trace);
        assert_eq!(a.last.history, b.last.history);
        assert_eq!(a.last.trace.len(), 4 * 3);
        let threaded = TrainConfig { threads: 3, ..cfg };
        let c = train(&threaded, &data, TrainOptions::default()).unwrap();
        assert_eq!(a.last.trace, c.last.trace);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let cfg = tiny_cfg();
        let data = tiny_data();
        let full = train(&cfg, &data, TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let half = train(
            &cfg,
            &data,
            TrainOptions {
                out_dir: Some(dir.path().to_path_buf()),
                stop_after: Some(2),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert_eq!(half.last.epoch, 2);
        let ck = load_checkpoint(&dir.path().join(LAST_DIR)).unwrap();
        assert_eq!(ck, half.last);
        let best = load_checkpoint(&dir.path().join(BEST_DIR)).unwrap();
        assert_eq!(best, half.best);
        let resumed = train(
            &cfg,
            &data,
            TrainOptions {
                resume: Some(ck),
                resume_best: Some(best),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.last.trace, full.last.trace);
        assert_eq!(resumed.last.params, full.last.params);
        assert_eq!(resumed.best, full.best);
    }

    #[test]
    fn zero_loss_weights_freeze_parameters() {
        let cfg = TrainConfig {
            lambda_g: 0.0,
            lambda_o: 0.0,
            weight_decay: 0.0,
            epochs: 2,
            ..tiny_cfg()
        };
        let data = tiny_data();
        let out = train(&cfg, &data, TrainOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = TcglParams::init(&cfg, 1, &mut rng).unwrap();
        assert_eq!(out.last.params, init);
    }

    #[test]
    fn f32_checkpoint_round_trips() {
        let cfg = TrainConfig {
            precision: Precision::F32,
            epochs: 1,
            ..tiny_cfg()
        };
        let out = train(&cfg, &tiny_data(), TrainOptions::default()).unwrap();
        let a = out.last.to_archive();
        assert!(a.tensors.iter().take(4).all(|t| t.dtype == Dtype::F32));
        let (m, b) = a.encode().unwrap();
        let back = Checkpoint::from_archive(&Archive::decode(&m, &b).unwrap()).unwrap();
        assert_eq!(back, out.last);
    }

    #[test]
    fn writes_declared_outputs_only() {
        let cfg = TrainConfig { epochs: 2, ..tiny_cfg() };
        let dir = tempfile::tempdir().unwrap();
        train(
            &cfg,
            &tiny_data(),
            TrainOptions {
                out_dir: Some(dir.path().to_path_buf()),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, vec![BEST_DIR, CONFIG_FILE, LAST_DIR, METRICS_FILE, TRACE_FILE]);
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn resume_rejects_changed_config() {
        let cfg = tiny_cfg();
        let data = tiny_data();
        let out = train(&cfg, &data, TrainOptions { stop_after: Some(1), ..TrainOptions::default() }).unwrap();
        let other = TrainConfig { lr: 0.5, ..cfg };
        assert!(train(&other, &data, TrainOptions { resume: Some(out.last), ..TrainOptions::default() }).is_err());
    }
}
