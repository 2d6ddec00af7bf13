//! Nearest-neighbour retrieval, order-prediction evaluation, and the
//! verification suites (gradient checks, contrastive oracle, view
//! statistics, determinism).

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::contrast::{
    graph_loss, graph_loss_on, pairwise_loss, ProjectionParams, ProjectionVars,
};
use crate::diffcore::{
    check_against, sweep_on, CheckOptions, Fault, GradCheck, Precision, Tape, Tensor, Var,
    NAMED_OPS,
};
use crate::encoder::{encode_on, EncoderParams, EncoderVars, FrameStats};
use crate::error::{Error, Result};
use crate::model::{embed, objective_on, TcglParams};
use crate::orderhead::{order_logits_on, order_loss_on, GateActivation, OrderHeadParams};
use crate::sampler::{Dataset, DatasetSpec};
use crate::store::{Archive, Dtype};
use crate::tgraph::{
    build_chain_graph, chain_adjacency, draw_corruption, gcn_on, generate_view, GcnParams,
    GraphKind,
};
use crate::trainer::{
    check_dataset, score_split, split_indices, train, Checkpoint, SplitScore, TrainOptions,
};

/// Retrieval depths reported by default.
pub const RETRIEVAL_KS: [usize; 5] = [1, 5, 10, 20, 50];
const GALLERY_KIND: &str = "gallery";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One embedding per video with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGallery {
    embeddings: Tensor,
    labels: Vec<usize>,
    split: Split,
}

impl EmbeddingGallery {
    pub fn new(embeddings: Tensor, labels: Vec<usize>, split: Split) -> Result<Self> {
        if embeddings.rank() != 2 || embeddings.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "gallery of shape {:?} needs one label per row, got {}",
                embeddings.shape(),
                labels.len()
            )));
        }
        if !embeddings.is_finite() {
            return Err(Error::invalid("gallery embeddings must be finite"));
        }
        Ok(EmbeddingGallery {
            embeddings,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(GALLERY_KIND);
        a.push_meta("split", self.split.name());
        a.push_tensor("embeddings", Dtype::F64, self.embeddings.clone());
        let labels = self.labels.iter().map(|&l| l as f64).collect();
        a.push_tensor("labels", Dtype::F64, Tensor::vector(labels));
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != GALLERY_KIND {
            return Err(Error::format("gallery", format!("archive holds a `{}`", a.kind)));
        }
        let split = match a.meta("split")? {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(Error::format("gallery", format!("unknown split `{other}`"))),
        };
        let labels = a
            .tensor("labels")?
            .tensor
            .data()
            .iter()
            .map(|&l| {
                if l >= 0.0 && l.fract() == 0.0 && l < u32::MAX as f64 {
                    Ok(l as usize)
                } else {
                    Err(Error::format("gallery", format!("invalid label {l}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingGallery::new(a.tensor("embeddings")?.tensor.clone(), labels, split)
            .map_err(|e| Error::format("gallery", e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.to_archive().write(dir)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::from_archive(&Archive::read(dir)?)
    }
}

/// Embeds the videos at `indices`.
pub fn build_gallery(
    params: &TcglParams,
    cfg: &TrainConfig,
    dataset: &Dataset,
    indices: &[usize],
    split: Split,
    backbone_only: bool,
) -> Result<EmbeddingGallery> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot build an empty gallery"));
    }
    let labels = dataset.labels();
    let mut rows = Vec::new();
    let mut dim = 0;
    for &i in indices {
        let video = dataset
            .videos
            .get(i)
            .ok_or_else(|| Error::invalid(format!("video {i} out of range")))?;
        let e = embed(params, cfg, &FrameStats::of(video), backbone_only)?;
        dim = e.len();
        rows.extend(e);
    }
    let embeddings = Tensor::matrix(indices.len(), dim, rows)?;
    EmbeddingGallery::new(embeddings, indices.iter().map(|&i| labels[i]).collect(), split)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `1 − ⟨q̂, ĝ⟩`. A zero gallery vector sits at distance 1 from everything.
pub fn cosine_distance(q: &[f64], g: &[f64]) -> f64 {
    let (nq, ng) = (norm(q), norm(g));
    if nq == 0.0 || ng == 0.0 {
        return 1.0;
    }
    1.0 - q.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / (nq * ng)
}

/// Indices of the `k` nearest gallery rows, closest first, ties by index.
pub fn retrieve(query: &[f64], gallery: &EmbeddingGallery, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > gallery.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 1..={} (gallery size)",
            gallery.len()
        )));
    }
    if query.len() != gallery.dim() {
        return Err(Error::ShapeMismatch {
            op: "retrieve",
            lhs: vec![query.len()],
            rhs: vec![gallery.dim()],
        });
    }
    if !query.iter().all(|v| v.is_finite()) || norm(query) == 0.0 {
        return Err(Error::invalid("query must be finite with non-zero norm"));
    }
    let mut ranked: Vec<(f64, usize)> = (0..gallery.len())
        .map(|i| (cosine_distance(query, gallery.row(i)), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Fraction of queries whose class appears among their `k` nearest
/// gallery neighbours.
pub fn topk_accuracy(queries: &EmbeddingGallery, gallery: &EmbeddingGallery, k: usize) -> Result<f64> {
    Ok(topk_accuracies(queries, gallery, &[k])?[0])
}

/// [`topk_accuracy`] for several `k` from one ranking per query.
pub fn topk_accuracies(
    queries: &EmbeddingGallery,
    gallery: &EmbeddingGallery,
    ks: &[usize],
) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::invalid("empty query set"));
    }
    let kmax = ks.iter().copied().max().ok_or_else(|| Error::invalid("no k given"))?;
    let mut hits = vec![0usize; ks.len()];
    for q in 0..queries.len() {
        let nn = retrieve(queries.row(q), gallery, kmax)?;
        let label = queries.labels()[q];
        let first_hit = nn.iter().position(|&g| gallery.labels()[g] == label);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if first_hit.is_some_and(|p| p < k) {
                *h += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| h as f64 / queries.len() as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub ks: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub queries: usize,
    pub gallery: usize,
}

impl RetrievalReport {
    pub fn compute(queries: &EmbeddingGallery, gallery: &EmbeddingGallery, ks: &[usize]) -> Result<Self> {
        Ok(RetrievalReport {
            ks: ks.to_vec(),
            accuracy: topk_accuracies(queries, gallery, ks)?,
            queries: queries.len(),
            gallery: gallery.len(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "retrieval: {} queries against {} gallery videos (cosine distance)\n",
            self.queries, self.gallery
        );
        for (k, a) in self.ks.iter().zip(&self.accuracy) {
            let _ = writeln!(s, "  top-{k:<3} {:6.2}%", 100.0 * a);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let header: Vec<String> = self.ks.iter().map(|k| format!("top{k}")).collect();
        let row: Vec<String> = self.accuracy.iter().map(|a| a.to_string()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Order accuracy and loss of a checkpoint on the held-out split of
/// `dataset`, using the same per-video draws as training validation.
pub fn eval_order(ckpt: &Checkpoint, dataset: &Dataset) -> Result<SplitScore> {
    let cfg = &ckpt.config;
    let channels = check_dataset(cfg, dataset)?;
    if channels != ckpt.channels {
        return Err(Error::Config(format!(
            "checkpoint expects {} channels, dataset has {channels}",
            ckpt.channels
        )));
    }
    let stats: Vec<FrameStats> = dataset.videos.iter().map(FrameStats::of).collect();
    let (_, val) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    if val.is_empty() {
        return Err(Error::Config("the configured split has no held-out videos".into()));
    }
    score_split(&ckpt.params, cfg, &stats, &val)
}

fn oracle_project(x: &[f64], p: &ProjectionParams) -> Vec<f64> {
    let (d_in, d) = (p.w1.shape()[0], p.w1.shape()[1]);
    let mut h = vec![0.0; d];
    for j in 0..d {
        let mut acc = p.b1.data()[j];
        for i in 0..d_in {
            acc += x[i] * p.w1.at(i, j);
        }
        h[j] = if acc > 0.0 { acc } else { 0.0 };
    }
    let d_out = p.w2.shape()[1];
    let mut out = vec![0.0; d_out];
    for j in 0..d_out {
        let mut acc = p.b2.data()[j];
        for i in 0..d {
            acc += h[i] * p.w2.at(i, j);
        }
        out[j] = acc;
    }
    out
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Brute-force `ℓ(u_i, v_i)` with explicit loops over every negative.
pub fn oracle_pairwise_loss(u: &Tensor, v: &Tensor, i: usize, proj: &ProjectionParams, tau: f64) -> f64 {
    let n = u.rows();
    let gu: Vec<Vec<f64>> = (0..n).map(|k| oracle_project(u.row(k), proj)).collect();
    let gv: Vec<Vec<f64>> = (0..n).map(|k| oracle_project(v.row(k), proj)).collect();
    let positive = (oracle_cosine(&gu[i], &gv[i]) / tau).exp();
    let mut denom = 0.0;
    for k in 0..n {
        denom += (oracle_cosine(&gu[i], &gv[k]) / tau).exp();
    }
    for k in 0..n {
        if k != i {
            denom += (oracle_cosine(&gu[i], &gu[k]) / tau).exp();
        }
    }
    -(positive / denom).ln()
}

/// Brute-force graph loss averaging both directions over all nodes.
pub fn oracle_graph_loss(u: &Tensor, v: &Tensor, proj: &ProjectionParams, tau: f64) -> f64 {
    let n = u.rows();
    let mut total = 0.0;
    for i in 0..n {
        total += oracle_pairwise_loss(u, v, i, proj, tau);
        total += oracle_pairwise_loss(v, u, i, proj, tau);
    }
    total / (2.0 * n as f64)
}

/// Deliberate defects for checking that the suites catch them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// ReLU backward passes every gradient through.
    pub relu_backward: bool,
    /// Corruption treats `p_r`, `p_m` as keep probabilities.
    pub keep_probability: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub module: &'static str,
    pub operation: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<12} {:<9} {:<28} measured {:.3e} (limit {:.1e}){}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.module,
                c.operation,
                c.measured,
                c.threshold,
                if c.detail.is_empty() { String::new() } else { format!("  {}", c.detail) }
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.checks.len());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("suite,module,operation,measured,threshold,passed\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.suite, c.module, c.operation, c.measured, c.threshold, c.passed
            );
        }
        s
    }
}

type Probe = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn away_from_kinks(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Scalar probe of a named op: a fixed weighted sum of its output.
fn op_probe(op: &'static str, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Probe) {
    let inputs = match op {
        "matmul" => vec![away_from_kinks(rng, &[3, 4]), away_from_kinks(rng, &[4, 2])],
        "add" | "hadamard" => vec![away_from_kinks(rng, &[3, 4]), away_from_kinks(rng, &[3, 4])],
        "add_bias" => vec![away_from_kinks(rng, &[3, 4]), away_from_kinks(rng, &[4])],
        "concat_cols" => vec![away_from_kinks(rng, &[3, 2]), away_from_kinks(rng, &[3, 3])],
        "concat" | "stack_rows" => vec![away_from_kinks(rng, &[4]), away_from_kinks(rng, &[4])],
        "log" => vec![away_from_kinks(rng, &[3, 4]).map(f64::abs)],
        "diag" => vec![away_from_kinks(rng, &[4, 4])],
        _ => vec![away_from_kinks(rng, &[3, 4])],
    };
    let weights = away_from_kinks(rng, &[16]);
    let f: Probe = Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.apply(op, v)?;
        let shape = t.value(y).shape().to_vec();
        let n: usize = shape.iter().product();
        let w: Vec<f64> = weights.data().iter().cycle().take(n).copied().collect();
        let w = t.constant(Tensor::new(shape, w)?);
        let z = t.hadamard(y, w)?;
        Ok(t.sum(z))
    });
    (inputs, f)
}

fn gradient_case(
    out: &mut Vec<CheckResult>,
    module: &'static str,
    operation: &str,
    f: &Probe,
    inputs: &[Tensor],
    faults: Faults,
) {
    let fault = faults.relu_backward.then_some(Fault::ReluPassThrough);
    let mut tape = Tape::new();
    if let Some(fl) = fault {
        tape.inject_fault(fl);
    }
    let f64_result = check_against(f, inputs, CheckOptions::default(), tape);
    let f32_inputs: Vec<Tensor> = inputs
        .iter()
        .map(|t| t.map(|v| Precision::F32.round(v)))
        .collect();
    let f32_result = sweep_on(f, &f32_inputs, &[1e-2, 3e-3, 1e-3], CheckOptions::f32(), fault);
    for (label, result, limit) in [("f64", f64_result, 1e-4), ("f32", f32_result, 5e-2)] {
        out.push(grad_result(module, format!("{operation} [{label}]"), result, limit));
    }
}

fn grad_result(module: &'static str, operation: String, r: Result<GradCheck>, limit: f64) -> CheckResult {
    match r {
        Ok(g) => CheckResult {
            suite: "gradient",
            module,
            operation,
            measured: g.max_rel_error,
            threshold: limit,
            passed: g.max_rel_error < limit,
            detail: match (g.max_rel_error < limit, g.worst) {
                (false, Some((i, j))) => format!("worst at input {i}, coordinate {j}"),
                _ => String::new(),
            },
        },
        Err(e) => CheckResult {
            suite: "gradient",
            module,
            operation,
            measured: f64::INFINITY,
            threshold: limit,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// A configuration small enough for exhaustive finite differences.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        l: 4,
        p: 1,
        m: 2,
        feature_dim: 4,
        gcn_dim: 4,
        proj_dim: Some(4),
        ..TrainConfig::default()
    }
}

/// Finite-difference checks on every named op, each parameterised op, each
/// module's differentiable path, and the full objective, at 64 and 32 bits.
pub fn gradient_suite(faults: Faults) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6721);
    for &op in NAMED_OPS {
        let (inputs, f) = op_probe(op, &mut rng);
        gradient_case(&mut out, "diffcore", op, &f, &inputs, faults);
    }

    let x = away_from_kinks(&mut rng, &[3, 5]);
    let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
    let f: Probe = Box::new(move |t, v| {
        let s = t.scale(v[0], -0.7);
        let r = t.row(s, 1)?;
        let l = t.logsumexp_rows(v[0], &mask)?;
        let a = t.sum(l);
        let b = t.pick(r, 3)?;
        let n = t.neg(b);
        let tr = t.transpose(v[0])?;
        let c = t.row(tr, 2)?;
        let c = t.l2_normalize(c);
        let c = t.sum(c);
        let d = t.sub(a, n)?;
        t.add(d, c)
    });
    gradient_case(&mut out, "diffcore", "scale/row/pick/masked logsumexp", &f, &[x], faults);

    let cfg = toy_config();
    let stats = toy_stats(&cfg);
    let mut prng = ChaCha8Rng::seed_from_u64(0x51);
    let enc = EncoderParams::init(2 * cfg.l / cfg.m, 4, &mut prng);
    let windows = toy_windows(&stats, &cfg);
    let f: Probe = Box::new(move |t, v| {
        let x = t.constant(windows.clone());
        let h = encode_on(t, x, &EncoderVars { weight: v[0], bias: v[1] })?;
        let h = t.hadamard(h, h)?;
        Ok(t.sum(h))
    });
    gradient_case(&mut out, "encoder", "encode", &f, &[enc.weight.clone(), enc.bias.clone()], faults);

    let gcn = GcnParams::init(4, 4, true, &mut prng);
    let feats = away_from_kinks(&mut prng, &[4, 4]);
    let adj = chain_adjacency(4, false);
    let f: Probe = Box::new(move |t, v| {
        let h = gcn_on(t, v[0], &adj, &crate::tgraph::GcnVars { weight: v[1], bias: Some(v[2]) })?;
        let w = t.constant(Tensor::filled(&[4, 4], 0.3));
        let h = t.hadamard(h, w)?;
        let h = t.exp(h);
        Ok(t.sum(h))
    });
    let bias = gcn.bias.clone().expect("with bias");
    gradient_case(&mut out, "tgraph", "gcn", &f, &[feats, gcn.weight.clone(), bias], faults);

    let proj = ProjectionParams::init(4, 4, &mut prng);
    let u = away_from_kinks(&mut prng, &[4, 4]);
    let v = away_from_kinks(&mut prng, &[4, 4]);
    let f: Probe = Box::new(|t, x| {
        let pv = ProjectionVars { w1: x[2], b1: x[3], w2: x[4], b2: x[5] };
        graph_loss_on(t, x[0], x[1], &pv, 0.5)
    });
    let inputs = [u, v, proj.w1.clone(), proj.b1.clone(), proj.w2.clone(), proj.b2.clone()];
    gradient_case(&mut out, "contrast", "graph_loss", &f, &inputs, faults);

    let head = OrderHeadParams::init(3, 4, &mut prng).expect("even width");
    let feats: Vec<Tensor> = (0..3).map(|_| away_from_kinks(&mut prng, &[4])).collect();
    for gate in [GateActivation::Relu, GateActivation::Sigmoid] {
        let f: Probe = Box::new(move |t, x| {
            let hv = crate::orderhead::OrderHeadVars {
                fuse_w: x[3],
                fuse_b: x[4],
                excite_w: x[5],
                excite_b: x[6],
                hidden_w: x[7],
                hidden_b: x[8],
                out_w: x[9],
                out_b: x[10],
            };
            let logits = order_logits_on(t, &x[..3], &hv, gate)?;
            order_loss_on(t, logits, 4)
        });
        let mut inputs = feats.clone();
        inputs.extend(head.named().iter().map(|(_, t)| (*t).clone()));
        let name = format!("order_loss ({gate:?} gate)");
        gradient_case(&mut out, "orderhead", &name, &f, &inputs, faults);
    }

    let mut mrng = ChaCha8Rng::seed_from_u64(0x77);
    let params = TcglParams::init(&cfg, 1, &mut mrng).expect("toy config is valid");
    let inputs: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let f: Probe = Box::new(move |t, v| {
        let vars = params.vars_from(v);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Ok(objective_on(t, &params, &vars, &cfg, &stats, 3, &mut rng)?.total)
    });
    gradient_case(&mut out, "model", "total objective", &f, &inputs, faults);
    out
}

fn toy_stats(cfg: &TrainConfig) -> FrameStats {
    let frames = crate::sampler::required_frames(cfg.l, cfg.p, cfg.n);
    let label = crate::sampler::SyntheticLabel::for_class(2);
    let v = crate::sampler::gen_synthetic_video(5, &label, frames, 1, 4, 4).expect("valid size");
    FrameStats::of(&v)
}

fn toy_windows(stats: &FrameStats, cfg: &TrainConfig) -> Tensor {
    let len = cfg.l / cfg.m;
    let rows: Vec<f64> = (0..3)
        .flat_map(|j| stats.window(j * len, len).expect("inside").to_vec())
        .collect();
    Tensor::matrix(3, 2 * len, rows).expect("window rows")
}

/// The contrastive losses against [`oracle_graph_loss`] and
/// [`oracle_pairwise_loss`] on `cases` random graphs with 2 to 8 nodes.
pub fn oracle_suite(cases: usize, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_graph: f64 = 0.0;
    let mut worst_pair: f64 = 0.0;
    let mut failure = String::new();
    for case in 0..cases {
        let n = rng.gen_range(2..=8);
        let f = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=6);
        let tau = rng.gen_range(0.1..1.0);
        let u = Tensor::new(vec![n, f], (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape");
        let v = Tensor::new(vec![n, f], (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape");
        let proj = ProjectionParams::init(f, d, &mut rng);
        match graph_loss(&u, &v, &proj, tau) {
            Ok(got) => worst_graph = worst_graph.max((got - oracle_graph_loss(&u, &v, &proj, tau)).abs()),
            Err(e) => failure = format!("case {case}: {e}"),
        }
        for i in 0..n {
            match pairwise_loss(&u, &v, i, &proj, tau) {
                Ok(got) => {
                    worst_pair = worst_pair.max((got - oracle_pairwise_loss(&u, &v, i, &proj, tau)).abs())
                }
                Err(e) => failure = format!("case {case}: {e}"),
            }
        }
    }
    let ok = failure.is_empty();
    let mk = |operation: &str, measured: f64| CheckResult {
        suite: "oracle",
        module: "contrast",
        operation: operation.to_string(),
        measured,
        threshold: 1e-10,
        passed: ok && measured < 1e-10,
        detail: failure.clone(),
    };
    vec![
        mk(&format!("pairwise loss, {cases} cases"), worst_pair),
        mk(&format!("graph loss, {cases} cases"), worst_graph),
    ]
}

/// Monte Carlo rates of edge removal and feature masking over `draws`
/// corruptions of a chain graph, and exactness of the clean view.
pub fn view_statistics_suite(draws: usize, p_r: f64, p_m: f64, faults: Faults, seed: u64) -> Vec<CheckResult> {
    let (nodes, features) = (4, 32);
    let adjacency = chain_adjacency(nodes, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q_r, q_m) = if faults.keep_probability { (1.0 - p_r, 1.0 - p_m) } else { (p_r, p_m) };
    let (mut removed, mut edges, mut masked) = (0usize, 0usize, 0usize);
    for _ in 0..draws {
        let c = draw_corruption(&adjacency, features, q_r, q_m, &mut rng).expect("valid probabilities");
        removed += c.edges_removed;
        edges += c.edges_before;
        masked += c.masked_columns();
    }
    let removal_rate = removed as f64 / edges as f64;
    let mask_rate = masked as f64 / (draws * features) as f64;

    let mut identical = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let x = Tensor::new(vec![n, 5], (0..n * 5).map(|_| rng.gen_range(-2.0..2.0)).collect()).expect("shape");
        let g = build_chain_graph(x, GraphKind::Inter).expect("valid graph");
        let view = generate_view(&g, 0.0, 0.0, 2, &mut rng).expect("valid probabilities");
        let same_bits = |a: &Tensor, b: &Tensor| {
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        identical &= same_bits(&view.features, &g.features) && same_bits(&view.adjacency, &g.adjacency);
    }
    let rate = |operation: String, measured: f64, nominal: f64| CheckResult {
        suite: "views",
        module: "tgraph",
        operation,
        measured: (measured - nominal).abs(),
        threshold: 0.02,
        passed: (measured - nominal).abs() <= 0.02,
        detail: format!("rate {measured:.4} vs nominal {nominal}"),
    };
    vec![
        rate(format!("edge removal, {draws} draws"), removal_rate, p_r),
        rate(format!("feature masking, {draws} draws"), mask_rate, p_m),
        CheckResult {
            suite: "views",
            module: "tgraph",
            operation: "clean view is an exact copy".into(),
            measured: if identical { 0.0 } else { 1.0 },
            threshold: 0.5,
            passed: identical,
            detail: String::new(),
        },
    ]
}

/// Two short trainings with one seed must give bit-identical traces, also
/// across worker counts.
pub fn determinism_suite() -> Vec<CheckResult> {
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 0.01,
        ..toy_config()
    };
    let spec = DatasetSpec {
        videos: 8,
        classes: 2,
        frames: 16,
        height: 4,
        width: 4,
        ..DatasetSpec::default()
    };
    let run = |cfg: &TrainConfig| -> Result<Vec<f64>> {
        let data = Dataset::generate(&spec)?;
        Ok(train(cfg, &data, TrainOptions::default())?.last.trace)
    };
    let compare = |a: Result<Vec<f64>>, b: Result<Vec<f64>>, operation: &str| {
        let (passed, detail) = match (a, b) {
            (Ok(a), Ok(b)) => {
                let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
                (same, if same { String::new() } else { "traces differ".into() })
            }
            (Err(e), _) | (_, Err(e)) => (false, e.to_string()),
        };
        CheckResult {
            suite: "determinism",
            module: "trainer",
            operation: operation.into(),
            measured: if passed { 0.0 } else { 1.0 },
            threshold: 0.5,
            passed,
            detail,
        }
    };
    let threaded = TrainConfig { threads: 3, ..cfg.clone() };
    vec![
        compare(run(&cfg), run(&cfg), "same seed, same trace"),
        compare(run(&cfg), run(&threaded), "1 vs 3 workers, same trace"),
    ]
}

/// Every suite with the release settings.
pub fn verify_all(faults: Faults) -> VerifyReport {
    let mut checks = gradient_suite(faults);
    checks.extend(oracle_suite(100, 0x0c1e));
    checks.extend(view_statistics_suite(10_000, 0.2, 0.1, faults, 0x5eed));
    checks.extend(determinism_suite());
    VerifyReport { checks }
}
