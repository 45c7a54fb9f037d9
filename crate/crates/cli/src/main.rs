use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use zsd_cli::commands::{self, SweepParam, FINAL_CHECKPOINT};
use zsd_cli::RunConfig;
use zsd_core::inference::Mode;

#[derive(Parser)]
#[command(name = "zsd", version, about = "Zero-shot detection head on a synthetic region benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set model.beta=0`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// paths.data_dir
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// paths.run_dir
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    /// trainer.epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// trainer.batch_size
    #[arg(long)]
    batch_size: Option<usize>,
    /// trainer.learning_rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// trainer.momentum
    #[arg(long)]
    momentum: Option<f64>,
    /// trainer.seed
    #[arg(long)]
    seed: Option<u64>,
    /// model.lambda
    #[arg(long)]
    lambda: Option<f64>,
    /// model.beta
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate embeddings and every data split.
    GenData {
        #[command(flatten)]
        common: Common,
        /// synth.seed
        #[arg(long)]
        seed: Option<u64>,
        /// synth.n_seen
        #[arg(long)]
        n_seen: Option<usize>,
        /// synth.n_unseen
        #[arg(long)]
        n_unseen: Option<usize>,
        /// synth.train_images
        #[arg(long)]
        train_images: Option<usize>,
        /// synth.test_images
        #[arg(long)]
        test_images: Option<usize>,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Train the head on the train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Detect on a test split and score the detections.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <run_dir>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        /// Output directory; defaults to <run_dir>/eval.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score an existing detections file instead of running the model.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Train and evaluate once per value of lambda or beta.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0])]
        values: Vec<f64>,
        /// Run arms on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Print the class similarity matrix as JSON.
    InspectSim {
        #[command(flatten)]
        common: Common,
        /// inference.similarity_temperature
        #[arg(long)]
        similarity_temperature: Option<f64>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Seen,
    Zsd,
    Gzsd,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Lambda,
    Beta,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_overrides(&common.set)?;
    if let Some(d) = &common.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &common.run_dir {
        cfg.paths.run_dir = d.clone();
    }
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) {
    let t = &mut cfg.trainer;
    t.epochs = f.epochs.unwrap_or(t.epochs);
    t.batch_size = f.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = f.learning_rate.unwrap_or(t.learning_rate);
    t.momentum = f.momentum.unwrap_or(t.momentum);
    t.seed = f.seed.unwrap_or(t.seed);
    cfg.model.lambda = f.lambda.unwrap_or(cfg.model.lambda);
    cfg.model.beta = f.beta.unwrap_or(cfg.model.beta);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            seed,
            n_seen,
            n_unseen,
            train_images,
            test_images,
            force,
        } => {
            let mut cfg = resolve(&common)?;
            let s = &mut cfg.synth;
            s.seed = seed.unwrap_or(s.seed);
            s.n_seen = n_seen.unwrap_or(s.n_seen);
            s.n_unseen = n_unseen.unwrap_or(s.n_unseen);
            s.train_images = train_images.unwrap_or(s.train_images);
            s.test_images = test_images.unwrap_or(s.test_images);
            for f in commands::gen_data(&cfg, force)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Train { common, train } => {
            let mut cfg = resolve(&common)?;
            apply_train_flags(&mut cfg, &train);
            let out = commands::train_cmd(&cfg)?;
            println!(
                "trained {} epochs ({} steps), final epoch loss {:.6}; checkpoint {}",
                out.summary.epochs,
                out.summary.steps,
                out.summary.final_epoch_loss,
                out.checkpoint.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            mode,
            out,
            detections,
        } => {
            let cfg = resolve(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.run_dir.join(FINAL_CHECKPOINT));
            let out = out.unwrap_or_else(|| cfg.paths.run_dir.join("eval"));
            let modes = match mode {
                ModeArg::Seen => vec![Mode::Seen],
                ModeArg::Zsd => vec![Mode::Zsd],
                ModeArg::Gzsd => vec![Mode::Gzsd],
                ModeArg::All => Mode::ALL.to_vec(),
            };
            for r in commands::eval_cmd(&cfg, &checkpoint, &modes, &out, detections.as_deref())? {
                let m = r.primary();
                print!("{}: mAP@{} {:.4}, Recall@100 {:.4}", r.mode, m.iou_threshold, m.map, m.recall_at_100);
                if let (Some(s), Some(u), Some(h)) = (m.map_seen, m.map_unseen, m.harmonic_mean) {
                    print!(" (seen {s:.4}, unseen {u:.4}, HM {h:.4})");
                }
                println!();
            }
            println!("reports in {}", out.display());
        }
        Command::Sweep {
            common,
            train,
            param,
            values,
            parallel,
        } => {
            let mut cfg = resolve(&common)?;
            apply_train_flags(&mut cfg, &train);
            let p = match param {
                ParamArg::Lambda => SweepParam::Lambda,
                ParamArg::Beta => SweepParam::Beta,
            };
            let r = commands::sweep_cmd(&cfg, p, &values, parallel)?;
            for (z, g) in r.zsd.iter().zip(&r.gzsd) {
                println!(
                    "{}={}: ZSD mAP {:.4} | GZSD seen {:.4} unseen {:.4} HM {:.4}",
                    p.name(),
                    z.value,
                    z.map,
                    g.map_seen,
                    g.map_unseen,
                    g.harmonic_mean
                );
            }
        }
        Command::InspectSim {
            common,
            similarity_temperature,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(t) = similarity_temperature {
                cfg.inference.similarity_temperature = t;
            }
            let json = commands::inspect_sim_cmd(&cfg)?;
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
