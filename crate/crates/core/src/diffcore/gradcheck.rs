use super::tape::{Precision, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    pub precision: Precision,
    /// Lower bound on the denominator of the relative error, so that
    /// coordinates with near-zero gradient are compared absolutely.
    pub floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-5,
            precision: Precision::F64,
            floor: 1e-4,
        }
    }
}

impl CheckOptions {
    pub fn f32() -> Self {
        CheckOptions {
            eps: 1e-2,
            precision: Precision::F32,
            floor: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the maximum was reached.
    pub worst: Option<(usize, usize)>,
    pub eps: f64,
    pub coordinates: usize,
}

/// Evaluates `f` on a fresh tape with `inputs` as trainable leaves.
pub fn eval_scalar<F>(f: &F, inputs: &[Tensor], precision: Precision) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_precision(precision);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Analytic gradients of `f` at `inputs`.
pub fn analytic_grads<F>(f: &F, inputs: &[Tensor], precision: Precision) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    analytic_grads_on(Tape::with_precision(precision), f, inputs)
}

pub(crate) fn analytic_grads_on<F>(mut tape: Tape, f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .map(|v| grads.take(*v).expect("every param leaf has a gradient"))
        .collect())
}

/// Maximum relative error between the reverse-mode gradient of `f` and a
/// central difference, over every coordinate of every input.
///
/// Relative error at a coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], opts: CheckOptions) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_against(&f, inputs, opts, Tape::with_precision(opts.precision))
}

pub(crate) fn check_against<F>(
    f: &F,
    inputs: &[Tensor],
    opts: CheckOptions,
    tape: Tape,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {}", opts.eps)));
    }
    let analytic = analytic_grads_on(tape, f, inputs)?;
    let p = opts.precision;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        eps: opts.eps,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x0 = input.data()[j];
            let hi = p.round(x0 + opts.eps);
            let lo = p.round(x0 - opts.eps);
            probe[i].data_mut()[j] = hi;
            let f_hi = eval_scalar(f, &probe, p)?;
            probe[i].data_mut()[j] = lo;
            let f_lo = eval_scalar(f, &probe, p)?;
            probe[i].data_mut()[j] = x0;
            if !f_hi.is_finite() || !f_lo.is_finite() {
                return Err(Error::NonFinite { input: i, index: j });
            }
            let numeric = (f_hi - f_lo) / (hi - lo);
            let a = analytic[i].data()[j];
            if !a.is_finite() {
                return Err(Error::NonFinite { input: i, index: j });
            }
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let err = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Runs [`finite_diff_check`] for each epsilon and keeps the best result.
pub fn finite_diff_sweep<F>(
    f: F,
    inputs: &[Tensor],
    eps_list: &[f64],
    base: CheckOptions,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    sweep_on(&f, inputs, eps_list, base, None)
}

pub(crate) fn sweep_on<F>(
    f: &F,
    inputs: &[Tensor],
    eps_list: &[f64],
    base: CheckOptions,
    fault: Option<super::tape::Fault>,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut best: Option<GradCheck> = None;
    for &eps in eps_list {
        let mut tape = Tape::with_precision(base.precision);
        if let Some(fault) = fault {
            tape.inject_fault(fault);
        }
        let r = check_against(f, inputs, CheckOptions { eps, ..base }, tape)?;
        if best.as_ref().is_none_or(|b| r.max_rel_error < b.max_rel_error) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::invalid("empty epsilon sweep"))
}
