use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use tcgl_core::evalkit::{
    build_gallery, cosine_distance, eval_order as score_checkpoint, retrieve as nearest, verify_all, EmbeddingGallery,
    Faults, RetrievalReport, Split,
};
use tcgl_core::sampler::{Dataset, DatasetSpec};
use tcgl_core::trainer::{
    initial_params, load_checkpoint, train as run_training, EpochMetrics, TrainOptions, BEST_DIR, CONFIG_FILE,
    LAST_DIR,
};

use crate::resolve::{checkpoint, dataset_for, env_seed, parse_flag, train_config};
use crate::Failure;

fn out_dir(m: &ArgMatches) -> Option<PathBuf> {
    m.get_one::<String>("out").map(PathBuf::from)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn echo(text: &str) {
    println!("# resolved configuration");
    print!("{text}");
}

pub fn gen_data(m: &ArgMatches) -> Result<(), Failure> {
    let out = out_dir(m).expect("required");
    let d = DatasetSpec::default();
    let seed = match parse_flag::<u64>(m, "seed")? {
        Some(s) => s,
        None => env_seed()?.unwrap_or(d.seed),
    };
    let spec = DatasetSpec {
        videos: parse_flag(m, "videos")?.unwrap_or(d.videos),
        classes: parse_flag(m, "classes")?.unwrap_or(d.classes),
        seed,
        frames: parse_flag(m, "frames")?.unwrap_or(d.frames),
        channels: parse_flag(m, "channels")?.unwrap_or(d.channels),
        height: parse_flag(m, "height")?.unwrap_or(d.height),
        width: parse_flag(m, "width")?.unwrap_or(d.width),
    };
    let text = format!(
        "videos = {}\nclasses = {}\nseed = {}\nframes = {}\nchannels = {}\nheight = {}\nwidth = {}\n",
        spec.videos, spec.classes, spec.seed, spec.frames, spec.channels, spec.height, spec.width
    );
    echo(&text);
    let dataset = Dataset::generate(&spec)?;
    dataset.write(&out)?;
    write(&out, CONFIG_FILE, &text)?;
    println!("wrote {} videos to {}", dataset.len(), out.display());
    Ok(())
}

pub fn train(m: &ArgMatches) -> Result<(), Failure> {
    let out = out_dir(m).expect("required");
    let cfg = train_config(m)?;
    echo(&cfg.to_text());
    let dataset = dataset_for(&cfg)?;
    let (resume, resume_best) = if m.get_flag("resume") {
        let last = out.join(LAST_DIR);
        if !last.is_dir() {
            return Err(Failure::Validation(format!("--resume: {} does not exist", last.display())));
        }
        let best = out.join(BEST_DIR);
        let best = if best.is_dir() { Some(load_checkpoint(&best)?) } else { None };
        (Some(load_checkpoint(&last)?), best)
    } else {
        (None, None)
    };
    let mut progress = |e: &EpochMetrics| {
        println!(
            "epoch {:>4}  loss {:.5}  graph {:.5}  order {:.5}  train_acc {:.3}  val_acc {:.3}",
            e.epoch, e.total_loss, e.graph_loss, e.order_loss, e.train_acc, e.val_acc
        );
    };
    let outcome = run_training(
        &cfg,
        &dataset,
        TrainOptions {
            out_dir: Some(out.clone()),
            resume,
            resume_best,
            stop_after: m.get_one::<usize>("stop_after").copied(),
            on_epoch: Some(&mut progress),
        },
    )?;
    match outcome.best.best {
        Some((epoch, loss)) => println!("best epoch {epoch} (selection loss {loss:.6})"),
        None => println!("no epoch completed"),
    }
    println!("outputs in {}", out.display());
    Ok(())
}

pub fn eval_order(m: &ArgMatches) -> Result<(), Failure> {
    let ck = checkpoint(m)?;
    echo(&ck.config.to_text());
    let dataset = dataset_for(&ck.config)?;
    let score = score_checkpoint(&ck, &dataset)?;
    let text = format!(
        "epoch {}\nval_acc {}\nval_loss {}\nvideos {}\n",
        ck.epoch, score.accuracy, score.loss, score.count
    );
    print!("{text}");
    if let Some(out) = out_dir(m) {
        write(&out, CONFIG_FILE, &ck.config.to_text())?;
        write(&out, "eval_order.txt", &text)?;
    }
    Ok(())
}

fn parse_ks(list: &str, gallery: usize) -> Result<Vec<usize>, Failure> {
    let mut ks = Vec::new();
    for part in list.split(',') {
        let k: usize = part
            .trim()
            .parse()
            .map_err(|_| Failure::Validation(format!("--k: {part:?} is not a positive integer")))?;
        if k == 0 || k > gallery {
            return Err(Failure::Validation(format!("--k: {k} must lie in 1..={gallery}")));
        }
        ks.push(k);
    }
    Ok(ks)
}

fn neighbours_csv(queries: &EmbeddingGallery, gallery: &EmbeddingGallery, k: usize) -> Result<String, Failure> {
    let mut s = String::from("query,query_label,rank,gallery_index,gallery_label,distance\n");
    for q in 0..queries.len() {
        let row = queries.row(q);
        for (rank, g) in nearest(row, gallery, k)?.into_iter().enumerate() {
            let _ = writeln!(
                s,
                "{q},{},{},{g},{},{}",
                queries.labels()[q],
                rank + 1,
                gallery.labels()[g],
                cosine_distance(row, gallery.row(g))
            );
        }
    }
    Ok(s)
}

pub fn retrieve(m: &ArgMatches) -> Result<(), Failure> {
    let out = out_dir(m).expect("required");
    let ck = checkpoint(m)?;
    let cfg = &ck.config;
    let data = dataset_for(cfg)?;
    let queries = match m.get_one::<String>("queries") {
        Some(dir) => Dataset::read(Path::new(dir))?,
        None => {
            let first = data
                .videos
                .first()
                .ok_or_else(|| Failure::Validation("gallery dataset is empty".into()))?;
            Dataset::generate(&DatasetSpec {
                videos: parse_flag(m, "query_videos")?.unwrap_or(1000),
                classes: data.labels().into_iter().max().map_or(1, |c| c + 1),
                seed: parse_flag(m, "query_seed")?.unwrap_or(cfg.seed.wrapping_add(1)),
                frames: first.frames(),
                channels: first.channels(),
                height: first.height(),
                width: first.width(),
            })?
        }
    };
    let backbone_only = m.get_flag("backbone_only");
    let ks = parse_ks(m.get_one::<String>("k").expect("defaulted"), data.len())?;
    let mut settings = cfg.to_text();
    let _ = writeln!(
        settings,
        "# retrieve: gallery {} videos, queries {} videos, k {:?}, backbone_only {backbone_only}",
        data.len(),
        queries.len(),
        ks
    );
    echo(&settings);

    let gallery_idx: Vec<usize> = (0..data.len()).collect();
    let query_idx: Vec<usize> = (0..queries.len()).collect();
    let gallery = build_gallery(&ck.params, cfg, &data, &gallery_idx, Split::Train, backbone_only)?;
    let query_set = build_gallery(&ck.params, cfg, &queries, &query_idx, Split::Test, backbone_only)?;
    let report = RetrievalReport::compute(&query_set, &gallery, &ks)?;
    let mut text = report.to_text();

    write(&out, CONFIG_FILE, &settings)?;
    write(&out, "retrieval.csv", &report.to_csv())?;
    if m.get_flag("baseline") {
        let init = initial_params(cfg, ck.channels)?;
        let g0 = build_gallery(&init, cfg, &data, &gallery_idx, Split::Train, backbone_only)?;
        let q0 = build_gallery(&init, cfg, &queries, &query_idx, Split::Test, backbone_only)?;
        let base = RetrievalReport::compute(&q0, &g0, &ks)?;
        text.push_str("untrained baseline\n");
        text.push_str(&base.to_text());
        write(&out, "baseline.csv", &base.to_csv())?;
    }
    let max_k = ks.iter().copied().max().unwrap_or(1);
    write(&out, "neighbors.csv", &neighbours_csv(&query_set, &gallery, max_k)?)?;
    write(&out, "retrieval.txt", &text)?;
    gallery.write(&out.join("gallery"))?;
    query_set.write(&out.join("queries"))?;
    print!("{text}");
    Ok(())
}

pub fn gradcheck(m: &ArgMatches) -> Result<(), Failure> {
    let report = verify_all(Faults::default());
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = out_dir(m) {
        write(&out, "gradcheck.txt", &text)?;
        write(&out, "gradcheck.csv", &report.to_csv())?;
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} checks failed", report.checks.len())));
    }
    println!("all {} checks passed", report.checks.len());
    Ok(())
}
