//! Adaptive snippet order prediction: fuse the shuffled snippet features,
//! derive a channel gate from the fused context, recalibrate every snippet
//! with it, and classify the permutation.

use rand::Rng;

use crate::diffcore::{softmax_row, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{eval_constant, fan_in_uniform, linear};
use crate::sampler::factorial;

/// Probability floor used when reporting `-log p`.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateActivation {
    #[default]
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderHeadParams {
    /// `[n*c, c_con]`
    pub fuse_w: Tensor,
    pub fuse_b: Tensor,
    /// `[c_con, c]`
    pub excite_w: Tensor,
    pub excite_b: Tensor,
    /// `[n*c, n*c/2]`
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    /// `[n*c/2, n!]`
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct OrderHeadVars {
    pub fuse_w: Var,
    pub fuse_b: Var,
    pub excite_w: Var,
    pub excite_b: Var,
    pub hidden_w: Var,
    pub hidden_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// Width of the fused representation: total input width over `2n`.
pub fn fused_dim(n: usize, c: usize) -> Result<usize> {
    if n == 0 || c == 0 {
        return Err(Error::invalid("order head needs at least one snippet and one channel"));
    }
    if !c.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "snippet feature width {c} must be even so that n*c/(2n) is whole"
        )));
    }
    Ok(n * c / (2 * n))
}

impl OrderHeadParams {
    pub fn init(n: usize, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let c_con = fused_dim(n, c)?;
        let joint = n * c;
        let hidden = joint / 2;
        let classes = factorial(n);
        Ok(OrderHeadParams {
            fuse_w: fan_in_uniform(rng, &[joint, c_con], joint),
            fuse_b: fan_in_uniform(rng, &[c_con], joint),
            excite_w: fan_in_uniform(rng, &[c_con, c], c_con),
            excite_b: fan_in_uniform(rng, &[c], c_con),
            hidden_w: fan_in_uniform(rng, &[joint, hidden], joint),
            hidden_b: fan_in_uniform(rng, &[hidden], joint),
            out_w: fan_in_uniform(rng, &[hidden, classes], hidden),
            out_b: fan_in_uniform(rng, &[classes], hidden),
        })
    }

    pub fn channels(&self) -> usize {
        self.excite_w.shape()[1]
    }

    pub fn snippets(&self) -> usize {
        self.fuse_w.shape()[0] / self.channels()
    }

    pub fn classes(&self) -> usize {
        self.out_w.shape()[1]
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("fuse.weight", &self.fuse_w),
            ("fuse.bias", &self.fuse_b),
            ("excite.weight", &self.excite_w),
            ("excite.bias", &self.excite_b),
            ("hidden.weight", &self.hidden_w),
            ("hidden.bias", &self.hidden_b),
            ("out.weight", &self.out_w),
            ("out.bias", &self.out_b),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 8] {
        [
            ("fuse.weight", &mut self.fuse_w),
            ("fuse.bias", &mut self.fuse_b),
            ("excite.weight", &mut self.excite_w),
            ("excite.bias", &mut self.excite_b),
            ("hidden.weight", &mut self.hidden_w),
            ("hidden.bias", &mut self.hidden_b),
            ("out.weight", &mut self.out_w),
            ("out.bias", &mut self.out_b),
        ]
    }

    pub fn bind(&self, tape: &mut Tape) -> OrderHeadVars {
        let [a, b, c, d, e, f, g, h] = self.named().map(|(_, t)| tape.param(t.clone()));
        OrderHeadVars {
            fuse_w: a,
            fuse_b: b,
            excite_w: c,
            excite_b: d,
            hidden_w: e,
            hidden_b: f,
            out_w: g,
            out_b: h,
        }
    }

    fn bind_constant(&self, tape: &mut Tape) -> OrderHeadVars {
        let [a, b, c, d, e, f, g, h] = self.named().map(|(_, t)| tape.constant(t.clone()));
        OrderHeadVars {
            fuse_w: a,
            fuse_b: b,
            excite_w: c,
            excite_b: d,
            hidden_w: e,
            hidden_b: f,
            out_w: g,
            out_b: h,
        }
    }
}

impl OrderHeadVars {
    pub fn vars(&self) -> [Var; 8] {
        [
            self.fuse_w,
            self.fuse_b,
            self.excite_w,
            self.excite_b,
            self.hidden_w,
            self.hidden_b,
            self.out_w,
            self.out_b,
        ]
    }
}

fn check_features(tape: &Tape, features: &[Var]) -> Result<usize> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("order head needs at least one snippet feature"))?;
    let c = tape.value(*first).shape().to_vec();
    for f in features {
        let s = tape.value(*f).shape();
        if s != c.as_slice() || s.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                lhs: c,
                rhs: s.to_vec(),
            });
        }
    }
    Ok(c[0])
}

/// `Z = W_s [f_1, ..., f_n] + b_s`.
pub fn fuse_on(tape: &mut Tape, features: &[Var], vars: &OrderHeadVars) -> Result<Var> {
    check_features(tape, features)?;
    let joint = tape.concat(features)?;
    linear(tape, joint, vars.fuse_w, vars.fuse_b)
}

/// `E = W_e Z + b_e`.
pub fn excite_on(tape: &mut Tape, z: Var, vars: &OrderHeadVars) -> Result<Var> {
    linear(tape, z, vars.excite_w, vars.excite_b)
}

/// `gate(E) ⊙ f_k`.
pub fn recalibrate_on(tape: &mut Tape, e: Var, f: Var, gate: GateActivation) -> Result<Var> {
    let g = match gate {
        GateActivation::Relu => tape.relu(e),
        GateActivation::Sigmoid => tape.sigmoid(e),
    };
    tape.hadamard(g, f)
}

/// Logits over the `n!` orders for features in shuffled order.
pub fn order_logits_on(
    tape: &mut Tape,
    features: &[Var],
    vars: &OrderHeadVars,
    gate: GateActivation,
) -> Result<Var> {
    let z = fuse_on(tape, features, vars)?;
    let e = excite_on(tape, z, vars)?;
    let refined = features
        .iter()
        .map(|&f| recalibrate_on(tape, e, f, gate))
        .collect::<Result<Vec<_>>>()?;
    let joint = tape.concat(&refined)?;
    let h = linear(tape, joint, vars.hidden_w, vars.hidden_b)?;
    let h = tape.relu(h);
    linear(tape, h, vars.out_w, vars.out_b)
}

/// Cross-entropy `-log softmax(logits)[label]`.
pub fn order_loss_on(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let classes = tape.value(logits).len();
    if label >= classes {
        return Err(Error::invalid(format!("order label {label} out of range for {classes} classes")));
    }
    let lp = tape.log_softmax(logits);
    let picked = tape.pick(lp, label)?;
    Ok(tape.neg(picked))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderPrediction {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl OrderPrediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        let probabilities = softmax_row(logits);
        let predicted = argmax(&probabilities);
        OrderPrediction {
            probabilities,
            predicted,
        }
    }

    pub fn classes(&self) -> usize {
        self.probabilities.len()
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn fuse(features: &[Tensor], params: &OrderHeadParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind_constant(&mut tape);
    let fs: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
    let z = fuse_on(&mut tape, &fs, &vars)?;
    Ok(tape.value(z).clone())
}

pub fn recalibrate(e: &Tensor, f: &Tensor, gate: GateActivation) -> Result<Tensor> {
    eval_constant(&[e, f], |t, v| recalibrate_on(t, v[0], v[1], gate))
}

pub fn predict_order(
    features: &[Tensor],
    params: &OrderHeadParams,
    gate: GateActivation,
) -> Result<OrderPrediction> {
    let mut tape = Tape::new();
    let vars = params.bind_constant(&mut tape);
    let fs: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
    let logits = order_logits_on(&mut tape, &fs, &vars, gate)?;
    Ok(OrderPrediction::from_logits(tape.value(logits).data()))
}

/// `-log p_label`, with `p_label` clamped at [`PROB_CLAMP`].
pub fn order_loss(pred: &OrderPrediction, label: usize) -> Result<f64> {
    let p = pred.probabilities.get(label).ok_or_else(|| {
        Error::invalid(format!(
            "order label {label} out of range for {} classes",
            pred.classes()
        ))
    })?;
    Ok(-p.max(PROB_CLAMP).ln())
}

/// `λ_g J_g + λ_o J_o`.
pub fn total_loss(graph: f64, order: f64, lambda_g: f64, lambda_o: f64) -> f64 {
    lambda_g * graph + lambda_o * order
}

pub fn total_loss_on(tape: &mut Tape, graph: Var, order: Var, lambda_g: f64, lambda_o: f64) -> Result<Var> {
    let g = tape.scale(graph, lambda_g);
    let o = tape.scale(order, lambda_o);
    tape.add(g, o)
}
