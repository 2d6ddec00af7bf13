//! `tcgl` command-line driver.

mod commands;
mod resolve;

use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use tcgl_core::config::CONFIG_KEYS;

/// Exit status for bad arguments, configs or inputs.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit status for failures after the inputs were accepted.
pub const EXIT_RUNTIME: u8 = 2;

pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<tcgl_core::Error> for Failure {
    fn from(e: tcgl_core::Error) -> Self {
        use tcgl_core::Error as E;
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::VideoTooShort { .. } => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn flag(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("VALUE").help(help)
}

fn ckpt_args(cmd: Command) -> Command {
    cmd.arg(
        Arg::new("ckpt")
            .long("ckpt")
            .value_name("DIR")
            .required(true)
            .help("checkpoint directory, or a training output directory"),
    )
    .arg(
        Arg::new("which")
            .long("which")
            .value_name("last|best")
            .default_value("last")
            .value_parser(["last", "best"])
            .help("checkpoint to use when --ckpt is a training output directory"),
    )
    .arg(flag("data", "dataset directory (default: the checkpoint's dataset)"))
    .arg(flag("threads", "worker threads"))
}

fn cli() -> Command {
    let mut train = Command::new("train")
        .about("Train a model; writes metrics, trace, config and checkpoints to --out")
        .allow_negative_numbers(true)
        .arg(Arg::new("out").long("out").value_name("DIR").required(true).help("output directory"))
        .arg(Arg::new("config").long("config").value_name("FILE").help("key = value config file"))
        .arg(
            Arg::new("resume")
                .long("resume")
                .action(ArgAction::SetTrue)
                .help("continue from the last checkpoint in --out"),
        )
        .arg(
            Arg::new("stop_after")
                .long("stop-after")
                .value_name("EPOCHS")
                .value_parser(clap::value_parser!(usize))
                .help("stop once this many epochs are done"),
        );
    for (key, help) in CONFIG_KEYS {
        let mut arg = Arg::new(*key).long(*key).value_name("VALUE").help(*help);
        let dashed = key.replace('_', "-");
        if dashed != *key {
            arg = arg.alias(dashed);
        }
        train = train.arg(arg);
    }

    Command::new("tcgl")
        .about("Temporal contrastive graph learning on synthetic video")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("gen-data")
                .about("Generate a synthetic video dataset")
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).help("output directory"))
                .arg(flag("videos", "number of videos [default: 200]"))
                .arg(flag("classes", "number of classes [default: 10]"))
                .arg(flag("seed", "generator seed [default: $TCGL_SEED or 7]"))
                .arg(flag("frames", "frames per video [default: 64]"))
                .arg(flag("channels", "channels per frame [default: 1]"))
                .arg(flag("height", "frame height [default: 16]"))
                .arg(flag("width", "frame width [default: 16]")),
        )
        .subcommand(train)
        .subcommand(
            ckpt_args(Command::new("eval-order").about("Order-prediction accuracy on the held-out split"))
                .arg(Arg::new("out").long("out").value_name("DIR").help("also write the result here")),
        )
        .subcommand(
            ckpt_args(Command::new("retrieve").about("Nearest-neighbour class retrieval with cosine distance"))
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).help("output directory"))
                .arg(flag("queries", "query dataset directory (default: freshly generated)"))
                .arg(flag("query_videos", "videos in the generated query set [default: 1000]").alias("query-videos"))
                .arg(flag("query_seed", "seed of the generated query set [default: seed + 1]").alias("query-seed"))
                .arg(
                    Arg::new("k")
                        .long("k")
                        .value_name("LIST")
                        .default_value("1,5,10,20,50")
                        .help("comma-separated neighbour counts"),
                )
                .arg(
                    Arg::new("backbone_only")
                        .long("backbone-only")
                        .action(ArgAction::SetTrue)
                        .help("embed with the encoder alone, skipping the graph convolution"),
                )
                .arg(
                    Arg::new("baseline")
                        .long("baseline")
                        .action(ArgAction::SetTrue)
                        .help("also score the untrained initial parameters"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Run the gradient, oracle, view-statistics and determinism checks")
                .arg(Arg::new("out").long("out").value_name("DIR").help("write the report here")),
        )
}

fn dispatch(m: &ArgMatches) -> Result<(), Failure> {
    match m.subcommand() {
        Some(("gen-data", sub)) => commands::gen_data(sub),
        Some(("train", sub)) => commands::train(sub),
        Some(("eval-order", sub)) => commands::eval_order(sub),
        Some(("retrieve", sub)) => commands::retrieve(sub),
        Some(("gradcheck", sub)) => commands::gradcheck(sub),
        _ => Err(Failure::Validation("missing subcommand".into())),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
