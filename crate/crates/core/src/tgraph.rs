//! Chronological chain graphs over snippets (inter) and frame-sets (intra),
//! stochastic view corruption, and the one-layer graph convolution.

use rand::Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{eval_constant, fan_in_uniform};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Inter,
    /// Graph over the frame-sets of chronological snippet `k`.
    Intra(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    /// `[N, F]`, row `i` is the chronologically `i`-th node.
    pub features: Tensor,
    /// `[N, N]` 0/1.
    pub adjacency: Tensor,
    pub kind: GraphKind,
}

/// Chain adjacency `0 - 1 - ... - (n-1)`. The directed variant keeps only
/// the forward edges `i -> i+1`.
pub fn chain_adjacency(n: usize, directed: bool) -> Tensor {
    let mut a = Tensor::zeros(&[n.max(1), n.max(1)]);
    for i in 0..n.saturating_sub(1) {
        a.data_mut()[i * n + i + 1] = 1.0;
        if !directed {
            a.data_mut()[(i + 1) * n + i] = 1.0;
        }
    }
    a
}

pub fn build_chain_graph(features: Tensor, kind: GraphKind) -> Result<TemporalGraph> {
    if features.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: features.shape().to_vec(),
            reason: "node features must be an [N, F] matrix".into(),
        });
    }
    let n = features.shape()[0];
    Ok(TemporalGraph {
        adjacency: chain_adjacency(n, false),
        features,
        kind,
    })
}

/// Edge-removal and feature-mask draw for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewCorruption {
    /// Reduced adjacency `A ∘ R`.
    pub adjacency: Tensor,
    /// `true` keeps the feature column.
    pub feature_mask: Vec<bool>,
    /// Edges present in the source graph.
    pub edges_before: usize,
    pub edges_removed: usize,
}

impl ViewCorruption {
    pub fn masked_columns(&self) -> usize {
        self.feature_mask.iter().filter(|&&k| !k).count()
    }

    /// `[rows, F]` 0/1 matrix that applies the feature mask to every node.
    pub fn mask_matrix(&self, rows: usize) -> Tensor {
        let f = self.feature_mask.len();
        let row: Vec<f64> = self
            .feature_mask
            .iter()
            .map(|&k| if k { 1.0 } else { 0.0 })
            .collect();
        let data = row.iter().copied().cycle().take(rows * f).collect();
        Tensor::matrix(rows, f, data).expect("mask shape")
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// Removes each edge with probability `p_r` and masks each feature column
/// with probability `p_m`.
///
/// Undirected edges use one draw for both entries. The number of draws is
/// independent of the probabilities, so view 1 and view 2 consume the RNG
/// identically.
pub fn draw_corruption(
    adjacency: &Tensor,
    feature_dim: usize,
    p_r: f64,
    p_m: f64,
    rng: &mut impl Rng,
) -> Result<ViewCorruption> {
    check_probability("p_r", p_r)?;
    check_probability("p_m", p_m)?;
    let n = adjacency.shape()[0];
    let mut reduced = adjacency.clone();
    let mut edges_before = 0;
    let mut edges_removed = 0;
    for i in 0..n {
        for j in 0..n {
            let a_ij = adjacency.at(i, j) != 0.0;
            // Symmetric pairs are decided when visiting the upper triangle.
            if !a_ij || (j < i && adjacency.at(j, i) != 0.0) {
                continue;
            }
            edges_before += 1;
            if rng.gen::<f64>() < p_r {
                edges_removed += 1;
                reduced.data_mut()[i * n + j] = 0.0;
                if adjacency.at(j, i) != 0.0 {
                    reduced.data_mut()[j * n + i] = 0.0;
                }
            }
        }
    }
    let feature_mask = (0..feature_dim).map(|_| rng.gen::<f64>() >= p_m).collect();
    Ok(ViewCorruption {
        adjacency: reduced,
        feature_mask,
        edges_before,
        edges_removed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphView {
    pub features: Tensor,
    pub adjacency: Tensor,
    pub corruption: ViewCorruption,
    pub kind: GraphKind,
    /// 1 for the corrupted view, 2 for the clean one.
    pub view_index: u8,
}

pub fn generate_view(
    graph: &TemporalGraph,
    p_r: f64,
    p_m: f64,
    view_index: u8,
    rng: &mut impl Rng,
) -> Result<GraphView> {
    let n = graph.features.shape()[0];
    let f = graph.features.shape()[1];
    let corruption = draw_corruption(&graph.adjacency, f, p_r, p_m, rng)?;
    let mask = corruption.mask_matrix(n);
    let data = graph
        .features
        .data()
        .iter()
        .zip(mask.data())
        .map(|(x, m)| x * m)
        .collect();
    Ok(GraphView {
        features: Tensor::matrix(n, f, data)?,
        adjacency: corruption.adjacency.clone(),
        corruption,
        kind: graph.kind,
        view_index,
    })
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the row degrees of `A + I`.
pub fn normalized_adjacency(adjacency: &Tensor) -> Tensor {
    let n = adjacency.shape()[0];
    let mut a = adjacency.clone();
    for i in 0..n {
        a.data_mut()[i * n + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a.data_mut()[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    /// `[F, F_out]`.
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct GcnVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl GcnParams {
    pub fn init(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        GcnParams {
            weight: fan_in_uniform(rng, &[in_dim, out_dim], in_dim),
            bias: with_bias.then(|| Tensor::zeros(&[out_dim])),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![("weight", &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias", b));
        }
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = vec![("weight", &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias", b));
        }
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> GcnVars {
        GcnVars {
            weight: tape.param(self.weight.clone()),
            bias: self.bias.as_ref().map(|b| tape.param(b.clone())),
        }
    }
}

impl GcnVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        v
    }
}

/// Masks the node features of `x` (`[N, F]`) with the view's feature mask.
pub fn apply_mask_on(tape: &mut Tape, x: Var, corruption: &ViewCorruption) -> Result<Var> {
    let rows = tape.value(x).shape()[0];
    let m = tape.constant(corruption.mask_matrix(rows));
    tape.hadamard(x, m)
}

/// `relu(Â X W [+ b])` for already masked features `x`.
pub fn gcn_on(tape: &mut Tape, x: Var, adjacency: &Tensor, vars: &GcnVars) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    if adjacency.rank() != 2 || adjacency.shape() != [xs[0], xs[0]] {
        return Err(Error::ShapeMismatch {
            op: "gcn",
            lhs: adjacency.shape().to_vec(),
            rhs: xs,
        });
    }
    let a = tape.constant(normalized_adjacency(adjacency));
    let ax = tape.matmul(a, x)?;
    let mut h = tape.matmul(ax, vars.weight)?;
    if let Some(b) = vars.bias {
        h = tape.add_bias(h, b)?;
    }
    Ok(tape.relu(h))
}

pub fn gcn_forward(view: &GraphView, params: &GcnParams) -> Result<Tensor> {
    let mut inputs = vec![&view.features, &params.weight];
    if let Some(b) = &params.bias {
        inputs.push(b);
    }
    eval_constant(&inputs, |t, v| {
        let vars = GcnVars {
            weight: v[1],
            bias: v.get(2).copied(),
        };
        gcn_on(t, v[0], &view.adjacency, &vars)
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::{finite_diff_check, CheckOptions};
    use crate::sampler::permutation_from_index;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let d = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(r, c, d).unwrap()
    }

    #[test]
    fn chain_adjacency_examples() {
        assert_eq!(
            chain_adjacency(3, false).data(),
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(chain_adjacency(1, false).data(), &[0.0]);
        let a4 = chain_adjacency(4, false);
        assert_eq!(a4.data().iter().sum::<f64>() / 2.0, 3.0);
        let d = chain_adjacency(3, true);
        assert_eq!(d.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn chain_graph_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..7 {
            let g = build_chain_graph(random_matrix(&mut rng, n, 3), GraphKind::Inter).unwrap();
            for i in 0..n {
                assert_eq!(g.adjacency.at(i, i), 0.0);
                for j in 0..n {
                    assert_eq!(g.adjacency.at(i, j), g.adjacency.at(j, i));
                    let expect = if i.abs_diff(j) == 1 { 1.0 } else { 0.0 };
                    assert_eq!(g.adjacency.at(i, j), expect);
                }
            }
        }
        assert!(build_chain_graph(Tensor::vector(vec![1.0]), GraphKind::Inter).is_err());
    }

    #[test]
    fn view_two_is_exact_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = build_chain_graph(random_matrix(&mut rng, 4, 6), GraphKind::Intra(0)).unwrap();
        let v = generate_view(&g, 0.0, 0.0, 2, &mut rng).unwrap();
        assert_eq!(v.features, g.features);
        assert_eq!(v.adjacency, g.adjacency);
    }

    #[test]
    fn full_removal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = build_chain_graph(random_matrix(&mut rng, 5, 3), GraphKind::Inter).unwrap();
        let v = generate_view(&g, 1.0, 0.0, 1, &mut rng).unwrap();
        assert!(v.adjacency.data().iter().all(|&a| a == 0.0));
        assert!(generate_view(&g, 1.5, 0.0, 1, &mut rng).is_err());
        assert!(generate_view(&g, 0.0, -0.1, 1, &mut rng).is_err());
    }

    #[test]
    fn corruption_rates_match_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = chain_adjacency(3, false);
        let (mut edges, mut removed, mut cols, mut masked) = (0, 0, 0, 0);
        for _ in 0..10_000 {
            let c = draw_corruption(&a, 32, 0.2, 0.1, &mut rng).unwrap();
            edges += c.edges_before;
            removed += c.edges_removed;
            cols += c.feature_mask.len();
            masked += c.masked_columns();
        }
        let r = removed as f64 / edges as f64;
        let m = masked as f64 / cols as f64;
        assert!((r - 0.2).abs() < 0.02, "{r}");
        assert!((m - 0.1).abs() < 0.02, "{m}");
    }

    #[test]
    fn single_node_gcn_is_relu_xw() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = build_chain_graph(random_matrix(&mut rng, 1, 4), GraphKind::Inter).unwrap();
        let p = GcnParams::init(4, 3, false, &mut rng);
        let v = generate_view(&g, 0.0, 0.0, 2, &mut rng).unwrap();
        let out = gcn_forward(&v, &p).unwrap();
        for j in 0..3 {
            let xw: f64 = (0..4).map(|k| g.features.at(0, k) * p.weight.at(k, j)).sum();
            assert!((out.at(0, j) - xw.max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_features_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = build_chain_graph(Tensor::zeros(&[3, 4]), GraphKind::Inter).unwrap();
        let p = GcnParams::init(4, 3, false, &mut rng);
        let v = generate_view(&g, 0.0, 0.0, 2, &mut rng).unwrap();
        assert!(gcn_forward(&v, &p).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chain_of_three_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 3, 4);
        let g = build_chain_graph(x.clone(), GraphKind::Inter).unwrap();
        let p = GcnParams::init(4, 5, false, &mut rng);
        let v = generate_view(&g, 0.0, 0.0, 2, &mut rng).unwrap();
        let out = gcn_forward(&v, &p).unwrap();
        // Degrees of A + I for the 3-chain are (2, 3, 2).
        let s2 = 1.0 / 2.0f64.sqrt();
        let s3 = 1.0 / 3.0f64.sqrt();
        let d = [s2, s3, s2];
        let a_hat = [[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..3 {
                    let coef = d[i] * a_hat[i][k] * d[k];
                    for f in 0..4 {
                        acc += coef * x.at(k, f) * p.weight.at(f, j);
                    }
                }
                assert!((out.at(i, j) - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_rejects_mismatched_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = build_chain_graph(random_matrix(&mut rng, 3, 4), GraphKind::Inter).unwrap();
        let v = generate_view(&g, 0.0, 0.0, 2, &mut rng).unwrap();
        let p = GcnParams::init(5, 3, false, &mut rng);
        assert!(gcn_forward(&v, &p).is_err());
    }

    proptest! {
        #[test]
        fn views_are_symmetric_and_column_masked(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = build_chain_graph(random_matrix(&mut rng, n, 6), GraphKind::Inter).unwrap();
            let v = generate_view(&g, 0.5, 0.5, 1, &mut rng).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(v.adjacency.at(i, j), v.adjacency.at(j, i));
                    prop_assert!(v.adjacency.at(i, j) <= g.adjacency.at(i, j));
                }
            }
            for (col, &keep) in v.corruption.feature_mask.iter().enumerate() {
                for i in 0..n {
                    let expect = if keep { g.features.at(i, col) } else { 0.0 };
                    prop_assert_eq!(v.features.at(i, col), expect);
                }
            }
        }

        #[test]
        fn gcn_gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, n, 3);
            let w = random_matrix(&mut rng, 3, 2);
            let c = draw_corruption(&chain_adjacency(n, false), 3, 0.3, 0.3, &mut rng).unwrap();
            let r = finite_diff_check(
                |t, v| {
                    let xm = apply_mask_on(t, v[0], &c)?;
                    let h = gcn_on(t, xm, &c.adjacency, &GcnVars { weight: v[1], bias: None })?;
                    let h2 = t.hadamard(h, h)?;
                    Ok(t.sum(h2))
                },
                &[x, w],
                CheckOptions::default(),
            ).unwrap();
            prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
        }

        #[test]
        fn gcn_is_permutation_equivariant(seed in any::<u64>(), perm_id in 0usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let x = random_matrix(&mut rng, n, 3);
            let mut a = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(0.5) {
                        a.data_mut()[i * n + j] = 1.0;
                        a.data_mut()[j * n + i] = 1.0;
                    }
                }
            }
            let p = GcnParams::init(3, 2, false, &mut rng);
            let perm = permutation_from_index(n, perm_id).unwrap();
            let mut xp = Tensor::zeros(&[n, 3]);
            let mut ap = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for f in 0..3 {
                    xp.data_mut()[i * 3 + f] = x.at(perm[i], f);
                }
                for j in 0..n {
                    ap.data_mut()[i * n + j] = a.at(perm[i], perm[j]);
                }
            }
            let view = |x: Tensor, a: Tensor| GraphView {
                corruption: ViewCorruption {
                    adjacency: a.clone(),
                    feature_mask: vec![true; 3],
                    edges_before: 0,
                    edges_removed: 0,
                },
                features: x,
                adjacency: a,
                kind: GraphKind::Inter,
                view_index: 2,
            };
            let out = gcn_forward(&view(x, a), &p).unwrap();
            let outp = gcn_forward(&view(xp, ap), &p).unwrap();
            for i in 0..n {
                for j in 0..2 {
                    prop_assert!((outp.at(i, j) - out.at(perm[i], j)).abs() < 1e-12);
                }
            }
        }
    }
}
