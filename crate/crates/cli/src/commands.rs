//! Subcommand implementations. Each takes a fully resolved [`RunConfig`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use zsd_core::eval::{build_report, EvalReport, GroundTruthSet};
use zsd_core::experiment::{eval_split, initial_params, similarity_for};
use zsd_core::inference::{detect_all, detections_from_jsonl, detections_to_jsonl, Mode};
use zsd_core::model::{Checkpoint, ModelParams};
use zsd_core::semantics::{load_embeddings, ClassVocabulary, SemanticTable};
use zsd_core::synthdata::{generate_embeddings, generate_scene, FeatureWorld, Split, SynthDataset};
use zsd_core::trainer::{train, StepRecord, TrainObserver, TrainSummary};
use zsd_core::ZsdError;

use crate::config::RunConfig;

pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const SYNTH_CONFIG_FILE: &str = "synth.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
pub const LAST_GOOD_CHECKPOINT: &str = "checkpoint_last_good.json";

pub fn split_file(data_dir: &Path, split: Split) -> PathBuf {
    data_dir.join(format!("{split}.jsonl"))
}

fn data_files(data_dir: &Path) -> Vec<PathBuf> {
    let mut v = vec![
        data_dir.join(VOCABULARY_FILE),
        data_dir.join(EMBEDDINGS_FILE),
        data_dir.join(SYNTH_CONFIG_FILE),
    ];
    v.extend(Split::ALL.iter().map(|&s| split_file(data_dir, s)));
    v
}

/// Writes the vocabulary, embeddings and every split. Returns the files written.
pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<Vec<PathBuf>> {
    let synth = &cfg.synth;
    synth.validate()?;
    let dir = &cfg.paths.data_dir;
    let files = data_files(dir);
    if !force {
        if let Some(existing) = files.iter().find(|f| f.exists()) {
            bail!("{} already exists; pass --force to overwrite", existing.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let emb = generate_embeddings(synth, synth.seed)?;
    let vocab = &emb.vocabulary;
    let world = FeatureWorld::new(synth, &emb.table, vocab)?;
    fs::write(&files[0], serde_json::to_string_pretty(vocab)? + "\n")?;
    fs::write(&files[1], emb.table.to_csv(vocab)?)?;
    fs::write(&files[2], toml::to_string_pretty(synth)?)?;
    for split in Split::ALL {
        let ds = generate_scene(synth, &world, vocab, split, synth.seed)?;
        fs::write(split_file(dir, split), ds.to_jsonl()?)?;
    }
    Ok(files)
}

/// Vocabulary and embedding table from a data directory.
pub fn load_semantics(data_dir: &Path) -> Result<(ClassVocabulary, SemanticTable)> {
    let vpath = data_dir.join(VOCABULARY_FILE);
    let vocab: ClassVocabulary = serde_json::from_str(
        &fs::read_to_string(&vpath).with_context(|| format!("reading {} (run gen-data first)", vpath.display()))?,
    )
    .with_context(|| format!("parsing {}", vpath.display()))?;
    let table = load_embeddings(data_dir.join(EMBEDDINGS_FILE), &vocab)
        .with_context(|| format!("loading embeddings from {}", data_dir.display()))?;
    Ok((vocab, table))
}

pub fn load_split(data_dir: &Path, split: Split, vocab: &ClassVocabulary) -> Result<SynthDataset> {
    let path = split_file(data_dir, split);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    SynthDataset::from_jsonl(&text, split, vocab).with_context(|| format!("parsing {}", path.display()))
}

struct FileObserver {
    log: BufWriter<File>,
    checkpoint_dir: PathBuf,
    every: usize,
    cfg: RunConfig,
    vocab: ClassVocabulary,
}

impl TrainObserver for FileObserver {
    fn on_step(&mut self, record: &StepRecord) -> zsd_core::Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, step: u64, params: &ModelParams) -> zsd_core::Result<()> {
        self.log.flush()?;
        if self.every > 0 && epoch.is_multiple_of(self.every) {
            fs::create_dir_all(&self.checkpoint_dir)?;
            checkpoint(&self.cfg, &self.vocab, step, params).save(self.checkpoint_dir.join(format!("epoch_{epoch:04}.json")))?;
        }
        Ok(())
    }
}

fn checkpoint(cfg: &RunConfig, vocab: &ClassVocabulary, step: u64, params: &ModelParams) -> Checkpoint {
    Checkpoint::new(cfg.trainer.seed, step, cfg.model.clone(), vocab.clone(), params.clone())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub summary: TrainSummary,
}

/// Trains on the train split, logging every step and checkpointing per
/// `trainer.checkpoint_every`. If training diverges, the last finite weights
/// are saved to [`LAST_GOOD_CHECKPOINT`] and the error is returned.
pub fn train_cmd(cfg: &RunConfig) -> Result<TrainOutcome> {
    let exp = cfg.experiment();
    exp.model.validate()?;
    exp.trainer.validate()?;
    let (vocab, table) = load_semantics(&cfg.paths.data_dir)?;
    let train_set = load_split(&cfg.paths.data_dir, Split::Train, &vocab)?;
    let regions = train_set.regions()?;
    if regions.features.cols() != cfg.model.region_dim || table.dim() != cfg.model.semantic_dim {
        bail!(
            "model dims (region {}, semantic {}) do not match data (region {}, semantic {})",
            cfg.model.region_dim,
            cfg.model.semantic_dim,
            regions.features.cols(),
            table.dim()
        );
    }
    let sim = similarity_for(&exp, &table, &vocab)?;
    let run_dir = &cfg.paths.run_dir;
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut observer = FileObserver {
        log: BufWriter::new(File::create(run_dir.join(TRAIN_LOG_FILE))?),
        checkpoint_dir: run_dir.join("checkpoints"),
        every: cfg.trainer.checkpoint_every,
        cfg: cfg.clone(),
        vocab: vocab.clone(),
    };
    let mut params = initial_params(&exp.model, &exp.trainer, &table, &vocab)?;
    let result = train(&mut params, &exp.model, &exp.trainer, &regions, &table, &sim, &vocab, &mut observer);
    observer.log.flush()?;
    match result {
        Ok(summary) => {
            let path = run_dir.join(FINAL_CHECKPOINT);
            checkpoint(cfg, &vocab, summary.steps, &params).save(&path)?;
            Ok(TrainOutcome { checkpoint: path, summary })
        }
        Err(e) => {
            let path = run_dir.join(LAST_GOOD_CHECKPOINT);
            checkpoint(cfg, &vocab, 0, &params).save(&path)?;
            Err(anyhow::Error::new(e).context(format!("training aborted; last finite weights saved to {}", path.display())))
        }
    }
}

fn write_per_class_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &report.per_class {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs detection (or reads `detections`) on the mode's test split and writes
/// `detections_<mode>.jsonl`, `report_<mode>.json` and `per_class_<mode>.csv`
/// into `out_dir`.
pub fn eval_cmd(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    modes: &[Mode],
    out_dir: &Path,
    detections: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    let ck = Checkpoint::load(checkpoint_path).with_context(|| format!("loading {}", checkpoint_path.display()))?;
    let (vocab, table) = load_semantics(&cfg.paths.data_dir)?;
    if ck.vocabulary != vocab {
        return Err(ZsdError::VocabularyMismatch(format!(
            "checkpoint classes {:?} differ from dataset classes {:?}",
            ck.vocabulary.names(),
            vocab.names()
        ))
        .into());
    }
    let mut exp = cfg.experiment();
    exp.model = ck.config.clone();
    let sim = similarity_for(&exp, &table, &vocab)?;
    fs::create_dir_all(out_dir)?;
    let thresholds = cfg.eval.thresholds();
    let mut reports = Vec::new();
    for &mode in modes {
        let ds = load_split(&cfg.paths.data_dir, eval_split(mode), &vocab)?;
        let dets = match detections {
            Some(p) => detections_from_jsonl(&fs::read_to_string(p)?, &vocab, mode)?,
            None => detect_all(&ck.params, &ck.config, &ds.images, &table, &sim, &vocab, mode, &exp.inference)?,
        };
        fs::write(out_dir.join(format!("detections_{mode}.jsonl")), detections_to_jsonl(&dets, &vocab)?)?;
        let report = build_report(&dets, &GroundTruthSet::from_dataset(&ds), &vocab, &thresholds, mode)?;
        fs::write(out_dir.join(format!("report_{mode}.json")), serde_json::to_string_pretty(&report)? + "\n")?;
        write_per_class_csv(&out_dir.join(format!("per_class_{mode}.csv")), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZsdRow {
    pub value: f64,
    pub map: f64,
    pub recall_at_100: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GzsdRow {
    pub value: f64,
    pub map_seen: f64,
    pub map_unseen: f64,
    pub harmonic_mean: f64,
    pub recall_at_100: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub zsd: Vec<ZsdRow>,
    pub gzsd: Vec<GzsdRow>,
}

/// Trains one model per value with the data and trainer seeds held fixed,
/// then evaluates ZSD and GZSD at `eval.primary_iou`. Writes
/// `sweep_<param>_zsd.csv` and `sweep_<param>_gzsd.csv` into the run dir.
pub fn sweep_cmd(cfg: &RunConfig, param: SweepParam, values: &[f64], parallel: bool) -> Result<SweepResult> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let (vocab, table) = load_semantics(&cfg.paths.data_dir)?;
    let train_set = load_split(&cfg.paths.data_dir, Split::Train, &vocab)?;
    let zsd_set = load_split(&cfg.paths.data_dir, Split::TestZsd, &vocab)?;
    let gzsd_set = load_split(&cfg.paths.data_dir, Split::TestGzsd, &vocab)?;
    let regions = train_set.regions()?;

    let arm = |value: f64| -> Result<(ZsdRow, GzsdRow)> {
        let mut exp = cfg.experiment();
        match param {
            SweepParam::Lambda => exp.model.lambda = value,
            SweepParam::Beta => exp.model.beta = value,
        }
        exp.model.validate()?;
        let sim = similarity_for(&exp, &table, &vocab)?;
        let mut params = initial_params(&exp.model, &exp.trainer, &table, &vocab)?;
        train(&mut params, &exp.model, &exp.trainer, &regions, &table, &sim, &vocab, &mut zsd_core::trainer::Silent)?;
        let thr = [cfg.eval.primary_iou];
        let report = |ds: &SynthDataset, mode| -> Result<EvalReport> {
            let d = detect_all(&params, &exp.model, &ds.images, &table, &sim, &vocab, mode, &exp.inference)?;
            Ok(build_report(&d, &GroundTruthSet::from_dataset(ds), &vocab, &thr, mode)?)
        };
        let z = report(&zsd_set, Mode::Zsd)?;
        let g = report(&gzsd_set, Mode::Gzsd)?;
        let (zm, gm) = (z.primary(), g.primary());
        Ok((
            ZsdRow {
                value,
                map: zm.map,
                recall_at_100: zm.recall_at_100,
            },
            GzsdRow {
                value,
                map_seen: gm.map_seen.unwrap_or(0.0),
                map_unseen: gm.map_unseen.unwrap_or(0.0),
                harmonic_mean: gm.harmonic_mean.unwrap_or(0.0),
                recall_at_100: gm.recall_at_100,
            },
        ))
    };

    let rows: Vec<(ZsdRow, GzsdRow)> = if parallel {
        thread::scope(|s| {
            let handles: Vec<_> = values.iter().map(|&v| s.spawn(move || arm(v))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        values.iter().map(|&v| arm(v)).collect::<Result<Vec<_>>>()?
    };
    let (zsd, gzsd): (Vec<ZsdRow>, Vec<GzsdRow>) = rows.into_iter().unzip();

    fs::create_dir_all(&cfg.paths.run_dir)?;
    let name = param.name();
    let mut w = csv::Writer::from_path(cfg.paths.run_dir.join(format!("sweep_{name}_zsd.csv")))?;
    zsd.iter().try_for_each(|r| w.serialize(r))?;
    w.flush()?;
    let mut w = csv::Writer::from_path(cfg.paths.run_dir.join(format!("sweep_{name}_gzsd.csv")))?;
    gzsd.iter().try_for_each(|r| w.serialize(r))?;
    w.flush()?;
    Ok(SweepResult { zsd, gzsd })
}

/// The similarity matrix of the data directory's embeddings, as pretty JSON.
pub fn inspect_sim_cmd(cfg: &RunConfig) -> Result<String> {
    let (vocab, table) = load_semantics(&cfg.paths.data_dir)?;
    let sim = similarity_for(&cfg.experiment(), &table, &vocab)?;
    Ok(serde_json::to_string_pretty(&sim.export(&vocab))? + "\n")
}
