//! The full per-video objective: encoders, inter/intra graphs, both
//! contrastive views, and the order head, on one tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::contrast::{graph_loss_on, total_graph_loss_on, ProjectionParams, ProjectionVars};
use crate::diffcore::{Fault, Gradients, Precision, Tape, Tensor, Var};
use crate::encoder::{encode_on, pooled_dim, stats_matrix, EncoderParams, EncoderVars, FrameStats};
use crate::error::{Error, Result};
use crate::orderhead::{
    argmax, order_logits_on, order_loss_on, total_loss_on, OrderHeadParams, OrderHeadVars,
};
use crate::sampler::{factorial, permutation_from_index, random_offset, snippet_starts};
use crate::tgraph::{apply_mask_on, chain_adjacency, draw_corruption, gcn_on, GcnParams, GcnVars};

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TcglParams {
    pub snippet_encoder: EncoderParams,
    pub frameset_encoder: EncoderParams,
    pub gcn_inter: GcnParams,
    pub gcn_intra: GcnParams,
    pub proj_inter: ProjectionParams,
    pub proj_intra: ProjectionParams,
    pub order_head: OrderHeadParams,
}

#[derive(Clone, Debug)]
pub struct TcglVars {
    pub snippet_encoder: EncoderVars,
    pub frameset_encoder: EncoderVars,
    pub gcn_inter: GcnVars,
    pub gcn_intra: GcnVars,
    pub proj_inter: ProjectionVars,
    pub proj_intra: ProjectionVars,
    pub order_head: OrderHeadVars,
}

impl TcglParams {
    /// Fresh parameters for videos with `channels` channels.
    pub fn init(cfg: &TrainConfig, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(Error::invalid("videos need at least one channel"));
        }
        let f = cfg.feature_dim;
        let mut params = TcglParams {
            snippet_encoder: EncoderParams::init(pooled_dim(cfg.l, channels), f, rng),
            frameset_encoder: EncoderParams::init(pooled_dim(cfg.l / cfg.m, channels), f, rng),
            gcn_inter: GcnParams::init(f, cfg.gcn_dim, cfg.gcn_bias, rng),
            gcn_intra: GcnParams::init(f, cfg.gcn_dim, cfg.gcn_bias, rng),
            proj_inter: ProjectionParams::init(cfg.gcn_dim, cfg.projection_dim(), rng),
            proj_intra: ProjectionParams::init(cfg.gcn_dim, cfg.projection_dim(), rng),
            order_head: OrderHeadParams::init(cfg.n, cfg.gcn_dim, rng)?,
        };
        params.round_to(cfg.precision);
        Ok(params)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        prefixed(&mut out, "encoder.snippet", self.snippet_encoder.named());
        prefixed(&mut out, "encoder.frameset", self.frameset_encoder.named());
        prefixed(&mut out, "gcn.inter", self.gcn_inter.named());
        prefixed(&mut out, "gcn.intra", self.gcn_intra.named());
        prefixed(&mut out, "proj.inter", self.proj_inter.named());
        prefixed(&mut out, "proj.intra", self.proj_intra.named());
        prefixed(&mut out, "order", self.order_head.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        prefixed(&mut out, "encoder.snippet", self.snippet_encoder.named_mut());
        prefixed(&mut out, "encoder.frameset", self.frameset_encoder.named_mut());
        prefixed(&mut out, "gcn.inter", self.gcn_inter.named_mut());
        prefixed(&mut out, "gcn.intra", self.gcn_intra.named_mut());
        prefixed(&mut out, "proj.inter", self.proj_inter.named_mut());
        prefixed(&mut out, "proj.intra", self.proj_intra.named_mut());
        prefixed(&mut out, "order", self.order_head.named_mut());
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Binds every tensor as a trainable leaf; the returned list follows
    /// [`TcglParams::named`].
    pub fn bind(&self, tape: &mut Tape) -> (TcglVars, Vec<Var>) {
        let list: Vec<Var> = self
            .named()
            .into_iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect();
        (self.vars_from(&list), list)
    }

    /// Structured handles for leaves already on a tape, given in
    /// [`TcglParams::named`] order.
    pub fn vars_from(&self, list: &[Var]) -> TcglVars {
        assert_eq!(list.len(), self.named().len(), "one handle per tensor");
        let mut it = list.iter().copied();
        let mut next = || it.next().expect("length checked");
        let snippet_encoder = EncoderVars { weight: next(), bias: next() };
        let frameset_encoder = EncoderVars { weight: next(), bias: next() };
        let gcn_inter = GcnVars {
            weight: next(),
            bias: self.gcn_inter.bias.as_ref().map(|_| next()),
        };
        let gcn_intra = GcnVars {
            weight: next(),
            bias: self.gcn_intra.bias.as_ref().map(|_| next()),
        };
        let mut proj = || ProjectionVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let proj_inter = proj();
        let proj_intra = proj();
        let order_head = OrderHeadVars {
            fuse_w: next(),
            fuse_b: next(),
            excite_w: next(),
            excite_b: next(),
            hidden_w: next(),
            hidden_b: next(),
            out_w: next(),
            out_b: next(),
        };
        TcglVars {
            snippet_encoder,
            frameset_encoder,
            gcn_inter,
            gcn_intra,
            proj_inter,
            proj_intra,
            order_head,
        }
    }

    /// Replaces every tensor from `(name, tensor)` pairs. Names and shapes
    /// must match exactly.
    pub fn assign(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != tensors.len() {
            return Err(Error::format(
                "parameters",
                format!("expected {} tensors, found {}", slots.len(), tensors.len()),
            ));
        }
        for ((name, slot), (src_name, src)) in slots.iter_mut().zip(tensors) {
            if name != src_name || slot.shape() != src.shape() {
                return Err(Error::format(
                    "parameters",
                    format!(
                        "expected {name} {:?}, found {src_name} {:?}",
                        slot.shape(),
                        src.shape()
                    ),
                ));
            }
            **slot = src.clone();
        }
        Ok(())
    }

    pub fn round_to(&mut self, precision: Precision) {
        if precision == Precision::F64 {
            return;
        }
        for (_, t) in self.named_mut() {
            for v in t.data_mut() {
                *v = precision.round(*v);
            }
        }
    }
}

fn prefixed<T>(
    out: &mut Vec<(String, T)>,
    prefix: &str,
    items: impl IntoIterator<Item = (&'static str, T)>,
) {
    out.extend(items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
}

/// Handles of one sample's objective terms on the tape.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    pub graph: Var,
    pub order: Var,
    pub inter: Var,
    pub intra: Vec<Var>,
    pub logits: Var,
}

fn check_video(cfg: &TrainConfig, stats: &FrameStats, offset: usize) -> Result<Vec<usize>> {
    snippet_starts(stats.frames(), cfg.l, cfg.p, cfg.n, offset)
}

/// Encodes the `n` snippets (chronological) and their frame-sets.
fn encode_tuple(
    tape: &mut Tape,
    vars: &TcglVars,
    cfg: &TrainConfig,
    stats: &FrameStats,
    starts: &[usize],
    snippet_dim: usize,
    frameset_dim: usize,
) -> Result<(Var, Vec<Var>)> {
    let windows = starts
        .iter()
        .map(|&s| stats.window(s, cfg.l))
        .collect::<Result<Vec<_>>>()?;
    let x = stats_matrix(tape, &windows, snippet_dim)?;
    let x_inter = encode_on(tape, x, &vars.snippet_encoder)?;
    let len = cfg.l / cfg.m;
    let mut x_intra = Vec::with_capacity(starts.len());
    for &s in starts {
        let windows = (0..cfg.m)
            .map(|j| stats.window(s + j * len, len))
            .collect::<Result<Vec<_>>>()?;
        let x = stats_matrix(tape, &windows, frameset_dim)?;
        x_intra.push(encode_on(tape, x, &vars.frameset_encoder)?);
    }
    Ok((x_inter, x_intra))
}

/// Both views of one graph through `gcn`; returns `(U, V)`.
fn two_views(
    tape: &mut Tape,
    x: Var,
    gcn: &GcnVars,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Var, Var)> {
    let shape = tape.value(x).shape().to_vec();
    let adjacency = chain_adjacency(shape[0], cfg.directed);
    let c1 = draw_corruption(&adjacency, shape[1], cfg.p_r, cfg.p_m, rng)?;
    let c2 = draw_corruption(&adjacency, shape[1], 0.0, 0.0, rng)?;
    let x1 = apply_mask_on(tape, x, &c1)?;
    let u = gcn_on(tape, x1, &c1.adjacency, gcn)?;
    let x2 = apply_mask_on(tape, x, &c2)?;
    let v = gcn_on(tape, x2, &c2.adjacency, gcn)?;
    Ok((u, v))
}

/// Builds `J = λ_g J_g + λ_o J_o` for one video shuffled by `permutation`.
///
/// `rng` supplies the optional snippet offset and the view corruptions.
pub fn objective_on(
    tape: &mut Tape,
    params: &TcglParams,
    vars: &TcglVars,
    cfg: &TrainConfig,
    stats: &FrameStats,
    permutation: usize,
    rng: &mut impl Rng,
) -> Result<Objective> {
    if permutation >= factorial(cfg.n) {
        return Err(Error::invalid(format!(
            "permutation {permutation} out of range for n = {}",
            cfg.n
        )));
    }
    let offset = if cfg.random_offset {
        random_offset(stats.frames(), cfg.l, cfg.p, cfg.n, rng)?
    } else {
        0
    };
    let starts = check_video(cfg, stats, offset)?;
    let (x_inter, x_intra) = encode_tuple(
        tape,
        vars,
        cfg,
        stats,
        &starts,
        params.snippet_encoder.pooled_dim(),
        params.frameset_encoder.pooled_dim(),
    )?;

    let (u, v) = two_views(tape, x_inter, &vars.gcn_inter, cfg, rng)?;
    let inter = graph_loss_on(tape, u, v, &vars.proj_inter, cfg.tau)?;
    let mut intra = Vec::with_capacity(x_intra.len());
    for x in x_intra {
        let (ui, vi) = two_views(tape, x, &vars.gcn_intra, cfg, rng)?;
        intra.push(graph_loss_on(tape, ui, vi, &vars.proj_intra, cfg.tau)?);
    }
    let graph = total_graph_loss_on(tape, &intra, inter, cfg.alpha, cfg.beta)?;

    let order = permutation_from_index(cfg.n, permutation)?;
    let features = order
        .iter()
        .map(|&k| tape.row(v, k))
        .collect::<Result<Vec<_>>>()?;
    let logits = order_logits_on(tape, &features, &vars.order_head, cfg.gate)?;
    let order_loss = order_loss_on(tape, logits, permutation)?;
    let total = total_loss_on(tape, graph, order_loss, cfg.lambda_g, cfg.lambda_o)?;
    Ok(Objective {
        total,
        graph,
        order: order_loss,
        inter,
        intra,
        logits,
    })
}

/// Scalar outcome of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub total: f64,
    pub graph: f64,
    pub order: f64,
    pub predicted: usize,
    pub label: usize,
}

impl SampleOutcome {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

fn outcome(tape: &Tape, obj: &Objective, label: usize) -> SampleOutcome {
    SampleOutcome {
        total: tape.value(obj.total).item(),
        graph: tape.value(obj.graph).item(),
        order: tape.value(obj.order).item(),
        predicted: argmax(tape.value(obj.logits).data()),
        label,
    }
}

/// Forward and backward for one sample whose randomness is `seed`.
/// Gradients follow [`TcglParams::named`].
pub fn sample_gradients(
    params: &TcglParams,
    cfg: &TrainConfig,
    stats: &FrameStats,
    permutation: usize,
    seed: u64,
) -> Result<(SampleOutcome, Vec<Tensor>)> {
    sample_gradients_with(params, cfg, stats, permutation, seed, None)
}

#[doc(hidden)]
pub fn sample_gradients_with(
    params: &TcglParams,
    cfg: &TrainConfig,
    stats: &FrameStats,
    permutation: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<(SampleOutcome, Vec<Tensor>)> {
    let mut tape = Tape::with_precision(cfg.precision);
    if let Some(f) = fault {
        tape.inject_fault(f);
    }
    let (vars, list) = params.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = objective_on(&mut tape, params, &vars, cfg, stats, permutation, &mut rng)?;
    let out = outcome(&tape, &obj, permutation);
    let mut grads: Gradients = tape.backward(obj.total)?;
    let list = list
        .into_iter()
        .map(|v| grads.take(v).expect("every parameter is a trainable leaf"))
        .collect();
    Ok((out, list))
}

/// Forward only.
pub fn evaluate_sample(
    params: &TcglParams,
    cfg: &TrainConfig,
    stats: &FrameStats,
    permutation: usize,
    seed: u64,
) -> Result<SampleOutcome> {
    let mut tape = Tape::with_precision(cfg.precision);
    let (vars, _) = params.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = objective_on(&mut tape, params, &vars, cfg, stats, permutation, &mut rng)?;
    Ok(outcome(&tape, &obj, permutation))
}

/// Retrieval feature of a video: the chronologically middle snippet's
/// encoding, optionally passed through the inter-snippet convolution as a
/// single-node graph.
pub fn embed(params: &TcglParams, cfg: &TrainConfig, stats: &FrameStats, backbone_only: bool) -> Result<Vec<f64>> {
    let starts = check_video(cfg, stats, 0)?;
    let mid = starts[starts.len() / 2];
    let mut tape = Tape::with_precision(cfg.precision);
    let (vars, _) = params.bind(&mut tape);
    let w = stats.window(mid, cfg.l)?;
    let x = stats_matrix(&mut tape, &[w], params.snippet_encoder.pooled_dim())?;
    let mut h = encode_on(&mut tape, x, &vars.snippet_encoder)?;
    if !backbone_only {
        h = gcn_on(&mut tape, h, &Tensor::zeros(&[1, 1]), &vars.gcn_inter)?;
    }
    Ok(tape.value(h).data().to_vec())
}
