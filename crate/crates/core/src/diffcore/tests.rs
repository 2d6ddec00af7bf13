use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    // Keep away from the ReLU kink.
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
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn relu_forward() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![-1.0, 2.0]));
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let i = t.constant(Tensor::identity(4));
    let y = t.matmul(xv, i).unwrap();
    assert_eq!(t.value(y), &x);
}

#[test]
fn l2_normalize_3_4_5() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(vec![3.0, 4.0]));
    let y = t.l2_normalize(x);
    let d = t.value(y).data();
    assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
}

#[test]
fn matmul_shape_mismatch_names_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn unknown_op_rejected() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::scalar(1.0));
    assert!(t.apply("conv3d", &[a]).is_err());
}

#[test]
fn square_derivative() {
    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(3.0));
    let y = t.hadamard(x, x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 6.0);
}

#[test]
fn mean_gradient() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 5.0]));
    let m = t.mean(x);
    let g = t.backward(m).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn unused_leaf_gets_zeros() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    let unused = t.param(Tensor::vector(vec![7.0, 8.0, 9.0]));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn constants_are_not_recorded_for_grad() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::vector(vec![1.0]));
    let b = t.exp(a);
    assert!(!t.requires_grad(b));
    let p = t.param(Tensor::vector(vec![1.0]));
    let c = t.add(b, p).unwrap();
    assert!(t.requires_grad(c));
}

#[test]
fn log_rejects_non_positive() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(t.log(a).is_err());
}

#[test]
fn fd_relu_positive_and_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[6]).map(f64::abs);
    let r = finite_diff_check(
        |t, v| {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        },
        std::slice::from_ref(&x),
        CheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");

    let x = rand_tensor(&mut rng, &[6]);
    let r = finite_diff_check(
        |t, v| {
            let y = t.hadamard(v[0], v[0])?;
            Ok(t.sum(y))
        },
        &[x],
        CheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn fd_reports_non_finite_coordinate() {
    let x = Tensor::vector(vec![1.0, 1e-7]);
    let err = finite_diff_check(
        |t, v| {
            let y = t.log(v[0])?;
            Ok(t.sum(y))
        },
        &[x],
        CheckOptions {
            eps: 1e-3,
            ..CheckOptions::default()
        },
    )
    .unwrap_err();
    // x - eps goes negative at coordinate 1, which log rejects.
    assert!(matches!(err, Error::InvalidArgument(_)), "{err:?}");
}

#[test]
fn injected_relu_fault_is_detected() {
    let x = Tensor::vector(vec![-0.5, 0.7, -1.2]);
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.relu(v[0]);
        Ok(t.sum(y))
    };
    let good = sweep_on(&f, std::slice::from_ref(&x), &[1e-5], CheckOptions::default(), None).unwrap();
    let bad = sweep_on(
        &f,
        &[x],
        &[1e-5],
        CheckOptions::default(),
        Some(Fault::ReluPassThrough),
    )
    .unwrap();
    assert!(good.max_rel_error < 1e-6);
    assert!(bad.max_rel_error > 0.5);
}

/// Scalar-valued probe for each supported op, fed random inputs.
fn probe(op: &str) -> (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(op.len() as u64 * 31 + op.as_bytes()[0] as u64);
    let weights = rand_tensor(&mut rng, &[3, 4]);
    let wrap = move |op: &'static str| -> Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>> {
        let w = weights.clone();
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let y = t.apply(op, v)?;
            // Weighted sum so that every output coordinate matters.
            let shape = t.value(y).shape().to_vec();
            let n: usize = shape.iter().product();
            let wv: Vec<f64> = w.data().iter().cycle().take(n).copied().collect();
            let wt = t.constant(Tensor::new(shape, wv)?);
            let z = t.hadamard(y, wt)?;
            Ok(t.sum(z))
        })
    };
    let inputs = match op {
        "matmul" => vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2])],
        "add" | "hadamard" => vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[3, 4])],
        "add_bias" => vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4])],
        "concat_cols" => vec![rand_tensor(&mut rng, &[3, 2]), rand_tensor(&mut rng, &[3, 3])],
        "concat" | "stack_rows" => vec![rand_tensor(&mut rng, &[4]), rand_tensor(&mut rng, &[4])],
        "log" => vec![rand_tensor(&mut rng, &[3, 4]).map(f64::abs)],
        "diag" => vec![rand_tensor(&mut rng, &[4, 4])],
        _ => vec![rand_tensor(&mut rng, &[3, 4])],
    };
    let name: &'static str = Box::leak(op.to_string().into_boxed_str());
    (inputs, wrap(name))
}


#[test]
fn every_op_passes_gradcheck() {
    for op in NAMED_OPS {
        let (inputs, f) = probe(op);
        let r = finite_diff_check(f, &inputs, CheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{op}: {r:?}");
    }
}

#[test]
fn parameterised_ops_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[3, 5]);
    let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
    let r = finite_diff_check(
        |t, v| {
            let s = t.scale(v[0], -0.7);
            let r1 = t.row(s, 1)?;
            let l = t.logsumexp_rows(v[0], &mask)?;
            let a = t.sum(l);
            let b = t.pick(r1, 3)?;
            let s2 = t.sub(a, b)?;
            Ok(s2)
        },
        &[x],
        CheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn f32_precision_gradcheck_is_looser_but_sane() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let w = rand_tensor(&mut rng, &[4, 2]);
    let r = finite_diff_sweep(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.relu(h);
            let h = t.log_softmax(h);
            Ok(t.mean(h))
        },
        &[x, w],
        &[1e-2, 1e-3],
        CheckOptions::f32(),
    )
    .unwrap();
    assert!(r.max_rel_error < 5e-2, "{r:?}");
}

#[test]
fn f32_values_are_representable() {
    let mut t = Tape::with_precision(Precision::F32);
    let x = t.param(Tensor::vector(vec![0.1, 1.0 / 3.0]));
    let y = t.exp(x);
    for &v in t.value(y).data() {
        assert_eq!(v, v as f32 as f64);
    }
}

proptest! {
    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3]);
        let w = rand_tensor(&mut rng, &[3, 3]);
        let l1 = |t: &mut Tape, v: &[Var]| -> crate::Result<Var> {
            let h = t.matmul(v[0], v[1])?;
            let h = t.relu(h);
            Ok(t.sum(h))
        };
        let l2 = |t: &mut Tape, v: &[Var]| -> crate::Result<Var> {
            let h = t.l2_normalize(v[0]);
            let h = t.softmax(h);
            let h = t.matmul(h, v[1])?;
            Ok(t.mean(h))
        };
        let both = |t: &mut Tape, v: &[Var]| -> crate::Result<Var> {
            let a = l1(t, v)?;
            let b = l2(t, v)?;
            t.add(a, b)
        };
        let inputs = [x, w];
        let g1 = analytic_grads(&l1, &inputs, Precision::F64).unwrap();
        let g2 = analytic_grads(&l2, &inputs, Precision::F64).unwrap();
        let g = analytic_grads(&both, &inputs, Precision::F64).unwrap();
        for k in 0..2 {
            for ((a, b), c) in g1[k].data().iter().zip(g2[k].data()).zip(g[k].data()) {
                prop_assert!((a + b - c).abs() <= 1e-12 * (1.0 + c.abs()));
            }
        }
    }

    #[test]
    fn forward_is_bit_identical(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let run = || {
            let mut t = Tape::new();
            let v = t.param(x.clone());
            let y = t.l2_normalize(v);
            let y = t.log_softmax(y);
            let s = t.sum(y);
            let g = t.backward(s).unwrap();
            (t.value(s).item().to_bits(), g.get(v).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn elementwise_ops_gradcheck(seed in any::<u64>(), which in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3]);
        let op = ["relu", "sigmoid", "exp", "softmax", "l2_normalize"][which];
        let r = finite_diff_check(
            |t, v| {
                let y = t.apply(op, v)?;
                let y2 = t.hadamard(y, y)?;
                Ok(t.sum(y2))
            },
            &[x],
            CheckOptions::default(),
        ).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{} {:?}", op, r);
    }
}
