//! Node-level contrastive objective between two views of a graph.
//!
//! For a positive pair `(u_i, v_i)` the loss is the negative log of
//!
//! ```text
//!                 e^{φ(u_i,v_i)/τ}
//! ─────────────────────────────────────────────────────────────
//! e^{φ(u_i,v_i)/τ} + Σ_{k≠i} e^{φ(u_i,v_k)/τ} + Σ_{k≠i} e^{φ(u_i,u_k)/τ}
//! ```
//!
//! where `φ(u, v)` is the cosine similarity of the projected embeddings
//! `g(u)`, `g(v)`. The per-graph loss averages both directions over all nodes.

use rand::Rng;

use crate::diffcore::{row_norm, Tape, Tensor, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::nn::{eval_constant, fan_in_uniform, linear};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastConfig {
    pub tau: f64,
    /// Weight of the intra-snippet losses.
    pub alpha: f64,
    /// Weight of the inter-snippet loss.
    pub beta: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            tau: 0.5,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Two-layer perceptron `g(x) = relu(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl ProjectionParams {
    pub fn init(in_dim: usize, proj_dim: usize, rng: &mut impl Rng) -> Self {
        ProjectionParams {
            w1: fan_in_uniform(rng, &[in_dim, proj_dim], in_dim),
            b1: fan_in_uniform(rng, &[proj_dim], in_dim),
            w2: fan_in_uniform(rng, &[proj_dim, proj_dim], proj_dim),
            b2: fan_in_uniform(rng, &[proj_dim], proj_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("w1.weight", &self.w1),
            ("b1.bias", &self.b1),
            ("w2.weight", &self.w2),
            ("b2.bias", &self.b2),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("w1.weight", &mut self.w1),
            ("b1.bias", &mut self.b1),
            ("w2.weight", &mut self.w2),
            ("b2.bias", &mut self.b2),
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> ProjectionVars {
        ProjectionVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }

    /// `g(x)` for a single embedding, evaluated without a tape.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xt = Tensor::vector(x.to_vec());
        let out = eval_constant(&[&xt, &self.w1, &self.b1, &self.w2, &self.b2], |t, v| {
            let vars = ProjectionVars {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            project_on(t, v[0], &vars)
        })?;
        Ok(out.into_data())
    }
}

impl ProjectionVars {
    pub fn vars(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

pub fn project_on(tape: &mut Tape, x: Var, vars: &ProjectionVars) -> Result<Var> {
    let h = linear(tape, x, vars.w1, vars.b1)?;
    let h = tape.relu(h);
    linear(tape, h, vars.w2, vars.b2)
}

/// Cosine similarity of `g(u)` and `g(v)`, in `[-1, 1]`.
pub fn relation(u: &[f64], v: &[f64], proj: &ProjectionParams) -> Result<f64> {
    if u.len() != proj.in_dim() || v.len() != proj.in_dim() {
        return Err(Error::ShapeMismatch {
            op: "relation",
            lhs: vec![u.len(), v.len()],
            rhs: vec![proj.in_dim()],
        });
    }
    let gu = proj.project(u)?;
    let gv = proj.project(v)?;
    let (nu, nv) = (row_norm(&gu), row_norm(&gv));
    Ok(gu.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>() / (nu * nv))
}

/// True when `g(u)` is so small that its normalization is dominated by the
/// epsilon guard.
pub fn is_degenerate(u: &[f64], proj: &ProjectionParams) -> Result<bool> {
    let gu = proj.project(u)?;
    Ok(gu.iter().map(|x| x * x).sum::<f64>().sqrt() <= NORM_EPS)
}

/// Per-node losses `ℓ(p_i, q_i)` for row-normalized projections `p`, `q`
/// (`[N, d]` each). Returns an `[N]` vector.
fn directional_losses(tape: &mut Tape, p: Var, q: Var, tau: f64) -> Result<Var> {
    let n = tape.value(p).shape()[0];
    let qt = tape.transpose(q)?;
    let pq = tape.matmul(p, qt)?;
    let s_pq = tape.scale(pq, 1.0 / tau);
    let pt = tape.transpose(p)?;
    let pp = tape.matmul(p, pt)?;
    let s_pp = tape.scale(pp, 1.0 / tau);
    let joined = tape.concat_cols(s_pq, s_pp)?;
    // Inter-view block: every k. Intra-view block: k != i.
    let mut mask = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        mask.extend(std::iter::repeat_n(true, n));
        mask.extend((0..n).map(|k| k != i));
    }
    let lse = tape.logsumexp_rows(joined, &mask)?;
    let pos = tape.diag(s_pq)?;
    tape.sub(lse, pos)
}

fn check_pair(tape: &Tape, u: Var, v: Var) -> Result<()> {
    let (su, sv) = (tape.value(u).shape(), tape.value(v).shape());
    if su != sv || su.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "graph_loss",
            lhs: su.to_vec(),
            rhs: sv.to_vec(),
        });
    }
    Ok(())
}

fn normalized_projections(
    tape: &mut Tape,
    u: Var,
    v: Var,
    proj: &ProjectionVars,
) -> Result<(Var, Var)> {
    check_pair(tape, u, v)?;
    let gu = project_on(tape, u, proj)?;
    let gv = project_on(tape, v, proj)?;
    Ok((tape.l2_normalize(gu), tape.l2_normalize(gv)))
}

/// `ℓ(u_i, v_i)` for view embeddings `u`, `v` (`[N, F_out]`).
pub fn pairwise_loss_on(
    tape: &mut Tape,
    u: Var,
    v: Var,
    i: usize,
    proj: &ProjectionVars,
    tau: f64,
) -> Result<Var> {
    let (p, q) = normalized_projections(tape, u, v, proj)?;
    let l = directional_losses(tape, p, q, tau)?;
    tape.pick(l, i)
}

/// `1/(2N) Σ_i [ℓ(u_i, v_i) + ℓ(v_i, u_i)]`.
pub fn graph_loss_on(
    tape: &mut Tape,
    u: Var,
    v: Var,
    proj: &ProjectionVars,
    tau: f64,
) -> Result<Var> {
    let (p, q) = normalized_projections(tape, u, v, proj)?;
    let n = tape.value(p).shape()[0];
    let l_uv = directional_losses(tape, p, q, tau)?;
    let l_vu = directional_losses(tape, q, p, tau)?;
    let a = tape.sum(l_uv);
    let b = tape.sum(l_vu);
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 1.0 / (2.0 * n as f64)))
}

fn check_embeddings(u: &Tensor, v: &Tensor) -> Result<()> {
    if u.rank() != 2 || u.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op: "graph_loss",
            lhs: u.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    Ok(())
}

fn with_projection<F>(u: &Tensor, v: &Tensor, proj: &ProjectionParams, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, Var, Var, &ProjectionVars) -> Result<Var>,
{
    check_embeddings(u, v)?;
    let out = eval_constant(&[u, v, &proj.w1, &proj.b1, &proj.w2, &proj.b2], |t, x| {
        let vars = ProjectionVars {
            w1: x[2],
            b1: x[3],
            w2: x[4],
            b2: x[5],
        };
        f(t, x[0], x[1], &vars)
    })?;
    Ok(out.item())
}

pub fn pairwise_loss(
    u: &Tensor,
    v: &Tensor,
    i: usize,
    proj: &ProjectionParams,
    tau: f64,
) -> Result<f64> {
    if u.rank() == 2 && i >= u.shape()[0] {
        return Err(Error::invalid(format!("node {i} out of range for {} nodes", u.shape()[0])));
    }
    with_projection(u, v, proj, |t, a, b, p| pairwise_loss_on(t, a, b, i, p, tau))
}

pub fn graph_loss(u: &Tensor, v: &Tensor, proj: &ProjectionParams, tau: f64) -> Result<f64> {
    with_projection(u, v, proj, |t, a, b, p| graph_loss_on(t, a, b, p, tau))
}

/// `α Σ_k J_intra^k + β J_inter`.
pub fn total_graph_loss(intra: &[f64], inter: f64, alpha: f64, beta: f64) -> f64 {
    alpha * intra.iter().sum::<f64>() + beta * inter
}

pub fn total_graph_loss_on(
    tape: &mut Tape,
    intra: &[Var],
    inter: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let weighted_inter = tape.scale(inter, beta);
    if intra.is_empty() {
        return Ok(weighted_inter);
    }
    let s = tape.concat(intra)?;
    let s = tape.sum(s);
    let weighted_intra = tape.scale(s, alpha);
    tape.add(weighted_intra, weighted_inter)
}
