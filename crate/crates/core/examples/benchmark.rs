//! Trains on the default synthetic benchmark and prints metrics for every mode.
//!
//! `cargo run --release -p zsd-core --example benchmark -- [seed] [lambda] [beta]`
//!
//! `ZSD_EXPERIMENT` may hold a JSON experiment config to start from.

use std::time::Instant;

use zsd_core::experiment::{evaluate_model, evaluate_random, initial_params, run_pipeline, ExperimentConfig};
use zsd_core::inference::Mode;
use zsd_core::synthdata::{Split, SynthBenchmark};

fn main() -> zsd_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut exp: ExperimentConfig = match std::env::var("ZSD_EXPERIMENT") {
        Ok(json) => serde_json::from_str(&json).expect("ZSD_EXPERIMENT must be an experiment config in JSON"),
        Err(_) => ExperimentConfig::default(),
    };
    if let Some(s) = args.first() {
        let seed: u64 = s.parse().expect("seed");
        exp.synth.seed = seed;
        exp.trainer.seed = seed;
    }
    if let Some(l) = args.get(1) {
        exp.model.lambda = l.parse().expect("lambda");
    }
    if let Some(b) = args.get(2) {
        exp.model.beta = b.parse().expect("beta");
    }
    let bench = SynthBenchmark::generate(&exp.synth)?;
    let start = Instant::now();
    let r = run_pipeline(&exp, &bench, &[0.5])?;
    println!("trained in {:.1}s, final epoch loss {:.4}", start.elapsed().as_secs_f64(), r.final_epoch_loss);
    for mode in Mode::ALL {
        println!("{mode:>5}: {:?}", r.report(mode).primary());
    }
    let untrained = initial_params(&exp.model, &exp.trainer, &bench.embeddings.table, &bench.embeddings.vocabulary)?;
    let u = evaluate_model(&exp, &untrained, &bench.embeddings.table, bench.split(Split::TestZsd), Mode::Zsd, &[0.5])?;
    let rnd = evaluate_random(&exp, bench.split(Split::TestZsd), Mode::Zsd, &[0.5])?;
    println!("zsd untrained map {:.4}, random map {:.4}", u.primary().map, rnd.primary().map);
    Ok(())
}
