//! Release acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcgl_core::config::TrainConfig;
use tcgl_core::contrast::{graph_loss, pairwise_loss, ProjectionParams};
use tcgl_core::diffcore::Tensor;
use tcgl_core::evalkit::{build_gallery, gradient_suite, Faults, RetrievalReport, Split, RETRIEVAL_KS};
use tcgl_core::sampler::{Dataset, DatasetSpec};
use tcgl_core::tgraph::{build_chain_graph, generate_view, GraphKind};
use tcgl_core::trainer::{initial_params, load_checkpoint, train, TrainOptions, TrainOutcome, LAST_DIR};

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn line(id: usize, name: &'static str, passed: bool, detail: String) -> Line {
    let l = Line { id, name, passed, detail };
    println!(
        "{} criterion {} ({}): {}",
        if l.passed { "PASS" } else { "FAIL" },
        l.id,
        l.name,
        l.detail
    );
    l
}

fn gradient_integrity() -> Line {
    let start = Instant::now();
    let checks = gradient_suite(Faults::default());
    let secs = start.elapsed().as_secs_f64();
    let worst = |tag: &str| {
        checks
            .iter()
            .filter(|c| c.operation.ends_with(tag))
            .map(|c| c.measured)
            .fold(0.0f64, f64::max)
    };
    let (w64, w32) = (worst("[f64]"), worst("[f32]"));
    let all_ok = checks.iter().all(|c| c.passed);
    let failing: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.operation.clone()).collect();
    line(
        1,
        "gradient integrity",
        all_ok && w64 < 1e-4 && w32 < 5e-2 && secs < 120.0,
        format!(
            "{} checks, worst rel err {w64:.2e} at 64-bit (< 1e-4), {w32:.2e} at 32-bit (< 5e-2), {secs:.1}s (< 120s){}",
            checks.len(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )
}

fn project(x: &[f64], p: &ProjectionParams) -> Vec<f64> {
    let (din, d) = (p.w1.shape()[0], p.w1.shape()[1]);
    let hidden: Vec<f64> = (0..d)
        .map(|j| {
            let s: f64 = p.b1.data()[j] + (0..din).map(|i| x[i] * p.w1.data()[i * d + j]).sum::<f64>();
            s.max(0.0)
        })
        .collect();
    let dout = p.w2.shape()[1];
    (0..dout)
        .map(|j| p.b2.data()[j] + (0..d).map(|i| hidden[i] * p.w2.data()[i * dout + j]).sum::<f64>())
        .collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Loss of anchor `a[i]` with positive `b[i]` and negatives `b[k]`, `a[k]` for `k != i`.
fn brute_pairwise(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, tau: f64) -> f64 {
    let pos = (cos(&a[i], &b[i]) / tau).exp();
    let mut neg = 0.0;
    for k in 0..a.len() {
        if k != i {
            neg += (cos(&a[i], &b[k]) / tau).exp() + (cos(&a[i], &a[k]) / tau).exp();
        }
    }
    -(pos / (pos + neg)).ln()
}

fn contrastive_oracle() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut cases, mut nodes_seen) = (0.0f64, 0, [false; 9]);
    let mut error = None;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        nodes_seen[n] = true;
        let f = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=6);
        let tau = rng.gen_range(0.1..1.0);
        let mat = |rng: &mut ChaCha8Rng| {
            Tensor::new(vec![n, f], (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let (u, v) = (mat(&mut rng), mat(&mut rng));
        let proj = ProjectionParams::init(f, d, &mut rng);
        let gu: Vec<Vec<f64>> = (0..n).map(|i| project(u.row(i), &proj)).collect();
        let gv: Vec<Vec<f64>> = (0..n).map(|i| project(v.row(i), &proj)).collect();
        let mut total = 0.0;
        for i in 0..n {
            let fwd = brute_pairwise(&gu, &gv, i, tau);
            total += fwd + brute_pairwise(&gv, &gu, i, tau);
            match pairwise_loss(&u, &v, i, &proj, tau) {
                Ok(got) => worst = worst.max((got - fwd).abs()),
                Err(e) => error = Some(e.to_string()),
            }
        }
        match graph_loss(&u, &v, &proj, tau) {
            Ok(got) => worst = worst.max((got - total / (2.0 * n as f64)).abs()),
            Err(e) => error = Some(e.to_string()),
        }
        cases += 1;
    }
    let covered = (2..=8).all(|n| nodes_seen[n]);
    line(
        2,
        "contrastive oracle",
        error.is_none() && covered && worst < 1e-10,
        format!(
            "{cases} cases, N in 2..=8 covered: {covered}, max |diff| {worst:.2e} (< 1e-10){}",
            error.map(|e| format!(", error {e}")).unwrap_or_default()
        ),
    )
}

fn view_statistics() -> Line {
    let (p_r, p_m, draws, nodes, f) = (0.2, 0.1, 10_000, 4, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = Tensor::new(vec![nodes, f], (0..nodes * f).map(|i| 1.0 + i as f64).collect()).unwrap();
    let g = build_chain_graph(x, GraphKind::Inter).unwrap();
    let edges = |a: &Tensor| (0..nodes).flat_map(|i| (i + 1..nodes).map(move |j| (i, j))).filter(|&(i, j)| a.at(i, j) != 0.0).count();
    let source_edges = edges(&g.adjacency);
    let (mut kept, mut masked) = (0usize, 0usize);
    for _ in 0..draws {
        let view = generate_view(&g, p_r, p_m, 1, &mut rng).unwrap();
        kept += edges(&view.adjacency);
        masked += (0..f).filter(|&c| (0..nodes).all(|r| view.features.at(r, c) == 0.0)).count();
    }
    let removal = 1.0 - kept as f64 / (draws * source_edges) as f64;
    let masking = masked as f64 / (draws * f) as f64;

    let mut identical = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let x = Tensor::new(vec![n, 6], (0..n * 6).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let g = build_chain_graph(x, GraphKind::Intra(0)).unwrap();
        let v = generate_view(&g, 0.0, 0.0, 2, &mut rng).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        identical &= v.features.shape() == g.features.shape()
            && bits(&v.features) == bits(&g.features)
            && bits(&v.adjacency) == bits(&g.adjacency);
    }
    line(
        3,
        "view corruption statistics",
        (removal - p_r).abs() <= 0.02 && (masking - p_m).abs() <= 0.02 && identical,
        format!(
            "edge removal {removal:.4} vs {p_r}, feature masking {masking:.4} vs {p_m} (±0.02) over {draws} draws; clean view bit-identical: {identical}"
        ),
    )
}

fn learnability(run: &TrainOutcome, secs: f64) -> Line {
    let h = &run.last.history;
    let reached = h.iter().find(|e| e.train_acc >= 0.9).map(|e| e.epoch);
    let last = h.last().expect("trained");
    line(
        4,
        "desk-scale learnability",
        h.len() <= 200 && reached.is_some() && last.val_acc >= 0.5 && secs < 600.0,
        format!(
            "train acc >= 0.90 first at epoch {} (final {:.3}), held-out acc {:.3} (>= 0.50, chance 0.167), {} epochs in {secs:.1}s (< 600s)",
            reached.map_or("never".to_string(), |e| e.to_string()),
            last.train_acc,
            last.val_acc,
            h.len()
        ),
    )
}

fn ablation(full: &TrainOutcome, ablated: &TrainOutcome, held_out: usize) -> Line {
    let acc = |r: &TrainOutcome| r.last.history.last().expect("trained").val_acc;
    let (a, b) = (acc(full), acc(ablated));
    let correct = |x: f64| (x * held_out as f64).round() as i64;
    line(
        5,
        "ablation direction",
        correct(a) >= correct(b) - 1,
        format!(
            "held-out acc alpha=beta=1: {a:.3} ({} of {held_out}), alpha=beta=0: {b:.3} ({} of {held_out}); ties within one sample allowed",
            correct(a),
            correct(b)
        ),
    )
}

fn retrieval(cfg: &TrainConfig, data: &Dataset, run: &TrainOutcome) -> Line {
    let queries = Dataset::generate(&DatasetSpec {
        videos: 1000,
        seed: 8,
        ..DatasetSpec::default()
    })
    .unwrap();
    let gi: Vec<usize> = (0..data.len()).collect();
    let qi: Vec<usize> = (0..queries.len()).collect();
    let score = |params| {
        let g = build_gallery(params, cfg, data, &gi, Split::Train, false).unwrap();
        let q = build_gallery(params, cfg, &queries, &qi, Split::Test, false).unwrap();
        RetrievalReport::compute(&q, &g, &RETRIEVAL_KS).unwrap().accuracy
    };
    let trained = score(&run.last.params);
    let baseline = score(&initial_params(cfg, 1).unwrap());
    let monotone = |a: &[f64]| a.windows(2).all(|w| w[0] <= w[1]);
    let ratio = trained[0] / baseline[0];
    line(
        6,
        "retrieval sanity",
        ratio >= 2.0 && monotone(&trained) && monotone(&baseline),
        format!(
            "top-1 trained {:.3} vs random init {:.3}, ratio {ratio:.2} (>= 2); top-k at k=1,5,10,20,50 trained {trained:?} baseline {baseline:?}, monotone: {}",
            trained[0],
            baseline[0],
            monotone(&trained) && monotone(&baseline)
        ),
    )
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn determinism(data: &Dataset) -> Line {
    let cfg = TrainConfig { epochs: 6, ..TrainConfig::default() };
    let a = train(&cfg, data, TrainOptions::default()).unwrap();
    let b = train(&cfg, data, TrainOptions::default()).unwrap();
    let same_seed = bits(&a.last.trace) == bits(&b.last.trace);

    let dir = tempfile::tempdir().unwrap();
    train(
        &cfg,
        data,
        TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            stop_after: Some(3),
            ..Default::default()
        },
    )
    .unwrap();
    let saved = load_checkpoint(&dir.path().join(LAST_DIR)).unwrap();
    let best = load_checkpoint(&dir.path().join("best")).ok();
    let resumed = train(
        &cfg,
        data,
        TrainOptions {
            resume: Some(saved),
            resume_best: best,
            ..Default::default()
        },
    )
    .unwrap();
    let resume_same = bits(&resumed.last.trace) == bits(&a.last.trace);
    let params_same = a
        .last
        .params
        .named()
        .iter()
        .zip(resumed.last.params.named())
        .all(|((_, x), (_, y))| bits(x.data()) == bits(y.data()));
    line(
        7,
        "determinism and persistence",
        same_seed && resume_same && params_same,
        format!(
            "{} trace steps; same seed bit-identical: {same_seed}; resume after epoch 3 of 6 bit-identical trace: {resume_same}, parameters: {params_same}",
            a.last.trace.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut lines = vec![gradient_integrity(), contrastive_oracle(), view_statistics()];

    let data = Dataset::generate(&DatasetSpec::default()).unwrap();
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let full = train(&cfg, &data, TrainOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    lines.push(learnability(&full, secs));

    let ablated_cfg = TrainConfig { alpha: 0.0, beta: 0.0, ..TrainConfig::default() };
    let ablated = train(&ablated_cfg, &data, TrainOptions::default()).unwrap();
    let held_out = tcgl_core::trainer::split_indices(data.len(), cfg.val_fraction, cfg.seed).1.len();
    lines.push(ablation(&full, &ablated, held_out));
    lines.push(retrieval(&cfg, &data, &full));
    lines.push(determinism(&data));

    let failed: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        lines.len() - failed.len(),
        lines.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
