//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zsd_core::eval::{build_report, harmonic_mean, EvalReport, GroundTruthSet};
use zsd_core::experiment::{evaluate_model, evaluate_random, initial_params, run_pipeline, ExperimentConfig, PipelineResult};
use zsd_core::geometry::{decode_offsets, encode_offsets, iou, nms, BBox};
use zsd_core::inference::{Detection, Mode};
use zsd_core::losses::{region_contrastive_loss, seen_classification_loss, smooth_l1};
use zsd_core::model::{ModelConfig, ModelParams};
use zsd_core::numerics::{finite_diff_check, GradCheckConfig, Matrix, Probe};
use zsd_core::semantics::{build_similarity_matrix, ClassVocabulary, SemanticTable};
use zsd_core::synthdata::{GroundTruth, RegionBatch, Split, SynthBenchmark};
use zsd_core::trainer::{evaluate_batch, LossWeights};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn vocab(ns: usize, nu: usize) -> ClassVocabulary {
    ClassVocabulary::new(
        (0..ns).map(|i| format!("s{i}")).collect(),
        (0..nu).map(|i| format!("u{i}")).collect(),
    )
    .unwrap()
}

fn random_table<R: Rng>(v: &ClassVocabulary, dim: usize, rng: &mut R) -> SemanticTable {
    let data = (0..v.n_foreground() * dim).map(|_| gauss(rng)).collect();
    SemanticTable::from_matrix(Matrix::from_vec(v.n_foreground(), dim, data).unwrap(), &v.names()[1..]).unwrap()
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let v = vocab(4, 3);
    let config = ModelConfig {
        region_dim: 10,
        semantic_dim: 6,
        embed_dim: 8,
        head_hidden: 8,
        contrastive_dim: 5,
        ..ModelConfig::default()
    };
    let objectives = [
        ("seen-cls", LossWeights::only_cls_seen()),
        ("unseen-cls", LossWeights::only_cls_unseen()),
        ("contrastive", LossWeights::only_contrastive()),
        ("regression", LossWeights::only_reg()),
        ("total", LossWeights::objective(&config)),
    ];
    let mut worst: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let (mut checked, mut skipped) = (0usize, 0usize);
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let table = random_table(&v, config.semantic_dim, &mut rng);
        let sim = build_similarity_matrix(&table, &v, 1.0).unwrap();
        let params = ModelParams::init(&config, &table, &v, &mut rng).unwrap();
        let n = 12;
        let mut labels: Vec<usize> = (0..n).map(|i| i % (v.n_seen() + 1)).collect();
        labels.shuffle(&mut rng);
        let features = Matrix::from_vec(n, config.region_dim, (0..n * config.region_dim).map(|_| gauss(&mut rng)).collect()).unwrap();
        let mut targets = Matrix::zeros(n, 4);
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                for k in 0..4 {
                    targets.set(i, k, 0.3 * gauss(&mut rng));
                }
            }
        }
        let batch = RegionBatch {
            features,
            labels,
            boxes: vec![BBox::new(50.0, 50.0, 20.0, 20.0); n],
            gt_boxes: vec![None; n],
            targets,
        };
        for (name, w) in objectives {
            let eval = |p: &ModelParams| evaluate_batch(p, &config, &batch, &table, &sim, &v, w).unwrap();
            let analytic = eval(&params).gradients;
            let report = finite_diff_check(
                &params,
                &analytic,
                |p| {
                    let e = eval(p);
                    Probe {
                        loss: e.objective,
                        pattern: e.activation_pattern,
                    }
                },
                &GradCheckConfig {
                    seed,
                    ..GradCheckConfig::default()
                },
            );
            checked += report.checked;
            skipped += report.skipped_kinks;
            for (group, range) in params.group_ranges() {
                let (_, err) = report.summarize(range);
                let e = worst.entry((name, group)).or_insert(0.0);
                *e = e.max(err);
            }
        }
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, &e)| e.is_nan() || e > 1e-4)
        .map(|((o, g), e)| format!("{o}/{g}={e:.2e}"))
        .collect();
    let skip_ok = skipped * 20 < checked;
    check(
        failing.is_empty() && skip_ok && elapsed < Duration::from_secs(30),
        format!(
            "max rel err {max:.2e} over 5 objectives x 7 groups x 3 batches ({checked} coords, {skipped} kink skips, {:.1}s){}",
            elapsed.as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!("; over tolerance: {}", failing.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

fn closed_forms() -> Outcome {
    let mut errs = Vec::new();
    for ns in [1usize, 4, 16] {
        let (l, _) = seen_classification_loss(&Matrix::zeros(5, ns + 1), &[0, 1, ns, 1, 0]).unwrap();
        let e = (l - ((ns + 1) as f64).ln()).abs();
        if e > 1e-9 {
            errs.push(format!("uniform CE n_s={ns} off by {e:.1e}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for labels in [vec![1usize, 1, 2, 2, 0, 3], vec![1, 1, 1, 1], vec![0, 0, 2, 2, 2, 1, 1, 4, 5]] {
        let raw: Vec<f64> = (0..7).map(|_| gauss(&mut rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let row: Vec<f64> = raw.iter().map(|x| x / norm).collect();
        let z = Matrix::from_rows(&vec![row; labels.len()]).unwrap();
        for include_bg in [true, false] {
            let members = labels.iter().filter(|&&l| include_bg || l != 0).count();
            let (l, _) = region_contrastive_loss(&z, &labels, 0.1, include_bg).unwrap();
            let e = (l - ((members - 1) as f64).ln()).abs();
            if e > 1e-9 {
                errs.push(format!("identical-embedding contrastive {labels:?} bg={include_bg} off by {e:.1e}"));
            }
        }
    }
    if smooth_l1(0.5) != 0.125 || smooth_l1(2.0) != 1.5 || smooth_l1(-0.5) != 0.125 || smooth_l1(-2.0) != 1.5 {
        errs.push("smooth-l1 values".into());
    }
    check(
        errs.is_empty(),
        if errs.is_empty() {
            "uniform CE = ln(n_s+1), identical-embedding contrastive = ln(N_p+N_n), smooth-l1(0.5)=0.125, (2.0)=1.5".into()
        } else {
            errs.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 3

fn similarity_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for trial in 0..300 {
        let v = vocab(rng.random_range(1..10), rng.random_range(1..6));
        let table = random_table(&v, rng.random_range(2..9), &mut rng);
        let temp = if trial % 2 == 0 { 1.0 } else { rng.random_range(0.05..3.0) };
        let s = build_similarity_matrix(&table, &v, temp).unwrap();
        for c in 0..v.n_classes() {
            let row = s.row(c);
            let sum: f64 = row.iter().sum();
            let want = if c == 0 { 0.0 } else { 1.0 };
            worst = worst.max((sum - want).abs());
            if c == 0 && row.iter().any(|&x| x != 0.0) {
                bad.push(format!("trial {trial}: background row not zero"));
            }
            if let Some(off) = v.unseen_offset(c) {
                let one_hot = row.iter().enumerate().all(|(j, &x)| x == if j == off { 1.0 } else { 0.0 });
                if !one_hot {
                    bad.push(format!("trial {trial}: unseen row {c} not one-hot"));
                }
            }
        }
    }
    check(
        worst <= 1e-9 && bad.is_empty(),
        format!("300 random vocabularies, max row-sum error {worst:.1e}{}", if bad.is_empty() { String::new() } else { format!("; {}", bad.join(", ")) }),
    )
}

// ---------------------------------------------------------------- 4

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x - a.w / 2.0, a.y - a.h / 2.0, a.x + a.w / 2.0, a.y + a.h / 2.0);
    let (bx1, by1, bx2, by2) = (b.x - b.w / 2.0, b.y - b.h / 2.0, b.x + b.w / 2.0, b.y + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Greedy matching of score-ordered detections: each takes the unmatched
/// same-class ground truth of highest IoU (lowest index on ties) if it clears
/// the threshold.
fn oracle_match(dets: &[&Detection], gts: &[GroundTruth], thr: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for d in dets {
        let mut pick = None;
        let mut best = -1.0;
        for (k, g) in gts.iter().enumerate() {
            if used[k] || g.label != d.class {
                continue;
            }
            let o = oracle_iou(&d.bbox, &g.bbox);
            if o >= thr && o > best {
                best = o;
                pick = Some(k);
            }
        }
        if let Some(k) = pick {
            used[k] = true;
        }
        out.push(pick.is_some());
    }
    out
}

fn oracle_ap(flags: &[bool], n_gt: usize) -> f64 {
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / n_gt as f64);
    }
    let mut total = 0.0;
    for level in 0..=10 {
        let r = level as f64 / 10.0;
        let mut p: f64 = 0.0;
        for k in 0..flags.len() {
            if rec[k] >= r {
                p = p.max(prec[k]);
            }
        }
        total += p;
    }
    total / 11.0
}

fn by_score(a: &&Detection, b: &&Detection) -> std::cmp::Ordering {
    b.score.partial_cmp(&a.score).unwrap()
}

fn grid_box<R: Rng>(rng: &mut R) -> BBox {
    let x1 = rng.random_range(0..12) as f64;
    let y1 = rng.random_range(0..12) as f64;
    let w = rng.random_range(2..9) as f64;
    let h = rng.random_range(2..9) as f64;
    BBox::from_corners(x1, y1, x1 + w, y1 + h)
}

fn metric_oracles() -> Outcome {
    let v = vocab(2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    let mut nontrivial = 0;
    for trial in 0..200 {
        let mut gts = GroundTruthSet::default();
        let mut dets = Vec::new();
        for img in 0..rng.random_range(1..4) {
            let id = format!("img{img}");
            let g: Vec<GroundTruth> = (0..rng.random_range(0..5))
                .map(|_| GroundTruth {
                    bbox: grid_box(&mut rng),
                    label: rng.random_range(1..3),
                })
                .collect();
            for _ in 0..rng.random_range(0..7) {
                let bbox = match g.get(rng.random_range(0..g.len().max(1) * 2)) {
                    Some(t) => BBox::new(
                        t.bbox.x + rng.random_range(-1..=1) as f64,
                        t.bbox.y + rng.random_range(-1..=1) as f64,
                        t.bbox.w,
                        t.bbox.h,
                    ),
                    None => grid_box(&mut rng),
                };
                dets.push(Detection {
                    image_id: id.clone(),
                    bbox,
                    class: rng.random_range(1..3),
                    score: rng.random_range(0.0..1.0),
                    mode: Mode::Seen,
                });
            }
            gts.images.insert(id, g);
        }
        let report = build_report(&dets, &gts, &v, &[0.5], Mode::Seen).unwrap();
        let m = report.primary();

        let mut aps = Vec::new();
        for class in 1..=2 {
            let n_gt = gts.images.values().flatten().filter(|g| g.label == class).count();
            let mut flags_scored: Vec<(f64, bool)> = Vec::new();
            for (id, g) in &gts.images {
                let mut mine: Vec<&Detection> = dets.iter().filter(|d| &d.image_id == id && d.class == class).collect();
                mine.sort_by(by_score);
                let f = oracle_match(&mine, g, 0.5);
                flags_scored.extend(mine.iter().map(|d| d.score).zip(f));
            }
            flags_scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let flags: Vec<bool> = flags_scored.iter().map(|x| x.1).collect();
            let got = report.per_class.iter().find(|c| c.class == v.name(class)).unwrap();
            if n_gt == 0 {
                if !got.no_ground_truth {
                    mismatches.push(format!("trial {trial} class {class}: missing no-ground-truth flag"));
                }
                continue;
            }
            let ap = oracle_ap(&flags, n_gt);
            if ap > 0.0 && ap < 1.0 {
                nontrivial += 1;
            }
            if got.ap != ap {
                mismatches.push(format!("trial {trial} class {class}: AP {} vs oracle {ap}", got.ap));
            }
            aps.push(ap);
        }
        let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
        if m.map != map {
            mismatches.push(format!("trial {trial}: mAP {} vs oracle {map}", m.map));
        }

        let total: usize = gts.images.values().map(Vec::len).sum();
        let mut hit = 0;
        for (id, g) in &gts.images {
            let mut mine: Vec<&Detection> = dets.iter().filter(|d| &d.image_id == id).collect();
            mine.sort_by(by_score);
            mine.truncate(100);
            hit += oracle_match(&mine, g, 0.5).iter().filter(|&&f| f).count();
        }
        let recall = if total == 0 { 0.0 } else { hit as f64 / total as f64 };
        if m.recall_at_100 != recall {
            mismatches.push(format!("trial {trial}: Recall@100 {} vs oracle {recall}", m.recall_at_100));
        }
    }
    let hm = 100.0 * harmonic_mean(0.632, 0.465);
    let hm_ok = (hm - 53.6).abs() <= 0.05;
    if !hm_ok {
        mismatches.push(format!("HM(63.2, 46.5) = {hm:.3}"));
    }
    check(
        mismatches.is_empty(),
        format!(
            "200 random instances match the brute-force AP/mAP/Recall@100 exactly ({nontrivial} fractional APs); HM(63.2, 46.5) = {hm:.2}{}",
            if mismatches.is_empty() { String::new() } else { format!("; {}", mismatches[..mismatches.len().min(5)].join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- 5

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // sizes within 2..100 keep every log size ratio inside the decoder's clamp
    let rand_box = |rng: &mut ChaCha8Rng| {
        BBox::new(
            rng.random_range(-50.0..150.0),
            rng.random_range(-50.0..150.0),
            rng.random_range(2.0..100.0),
            rng.random_range(2.0..100.0),
        )
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = rand_box(&mut rng);
        let g = rand_box(&mut rng);
        let d = decode_offsets(&p, &encode_offsets(&p, &g));
        for (a, b) in [(d.x, g.x), (d.y, g.y), (d.w, g.w), (d.h, g.h)] {
            worst = worst.max((a - b).abs());
        }
    }
    let p = BBox::new(0.0, 0.0, 1.0, 1.0);
    let clamped = decode_offsets(&p, &encode_offsets(&p, &BBox::new(0.0, 0.0, 1e4, 1e-4)));
    let clamp_ok = (clamped.w - 4f64.exp()).abs() < 1e-12 && (clamped.h - (-4f64).exp()).abs() < 1e-12;
    let mut violations = 0;
    for trial in 0..2_000 {
        let thr = [0.3, 0.5, 0.7][trial % 3];
        let n = rng.random_range(1..30);
        let dets: Vec<(BBox, f64)> = (0..n)
            .map(|_| {
                let b = BBox::new(
                    rng.random_range(0.0..40.0),
                    rng.random_range(0.0..40.0),
                    rng.random_range(5.0..30.0),
                    rng.random_range(5.0..30.0),
                );
                (b, rng.random_range(0.0..1.0))
            })
            .collect();
        let kept = nms(&dets, thr);
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                if iou(&dets[a].0, &dets[b].0) > thr {
                    violations += 1;
                }
            }
        }
    }
    check(
        worst <= 1e-9 && violations == 0 && clamp_ok,
        format!("10^4 round trips, max abs error {worst:.1e}; extreme ratios clamp to e^±4: {clamp_ok}; 2000 NMS sets, {violations} kept pairs above threshold"),
    )
}

// ---------------------------------------------------------------- 6-8

const SEEDS: [u64; 3] = [0, 1, 2];

/// Lower bound on default-config ZSD mAP@0.5, calibrated from seeds 0-2
/// (observed 0.85, 0.71, 0.55) with headroom for platform float differences.
const ZSD_MAP_FLOOR: f64 = 0.45;

fn experiment(seed: u64, lambda: Option<f64>, beta: Option<f64>) -> ExperimentConfig {
    let mut e = ExperimentConfig::default();
    e.synth.seed = seed;
    e.trainer.seed = seed;
    if let Some(l) = lambda {
        e.model.lambda = l;
    }
    if let Some(b) = beta {
        e.model.beta = b;
    }
    e
}

struct Arm {
    result: PipelineResult,
    elapsed: Duration,
}

fn run_arm(seed: u64, lambda: Option<f64>, beta: Option<f64>) -> Arm {
    let exp = experiment(seed, lambda, beta);
    let start = Instant::now();
    let bench = SynthBenchmark::generate(&exp.synth).unwrap();
    let result = run_pipeline(&exp, &bench, &[0.5]).unwrap();
    Arm {
        result,
        elapsed: start.elapsed(),
    }
}

fn end_to_end(full: &[Arm]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (&seed, arm) in SEEDS.iter().zip(full) {
        let exp = experiment(seed, None, None);
        let bench = SynthBenchmark::generate(&exp.synth).unwrap();
        let table = &bench.embeddings.table;
        let untrained = initial_params(&exp.model, &exp.trainer, table, &bench.embeddings.vocabulary).unwrap();
        let test = bench.split(Split::TestZsd);
        let u = evaluate_model(&exp, &untrained, table, test, Mode::Zsd, &[0.5]).unwrap().primary().map;
        let r = evaluate_random(&exp, test, Mode::Zsd, &[0.5]).unwrap().primary().map;
        let seen = arm.result.seen.primary().map;
        let zsd = arm.result.zsd.primary().map;
        let pass = seen >= 0.85
            && zsd >= 3.0 * u
            && zsd >= 2.0 * r
            && zsd >= ZSD_MAP_FLOOR
            && arm.elapsed < Duration::from_secs(180);
        ok &= pass;
        lines.push(format!(
            "seed {seed}: seen {seen:.3}, zsd {zsd:.3} (untrained {u:.3}, random {r:.3}), {:.1}s",
            arm.elapsed.as_secs_f64()
        ));
    }
    check(ok, lines.join("; "))
}

fn ablation(full: &[Arm], no_unseen_cls: &[Arm], no_contrastive: &[Arm]) -> Outcome {
    let gzsd_u = |a: &Arm| a.result.gzsd.primary().map_unseen.unwrap();
    let zsd = |a: &Arm| a.result.zsd.primary().map;
    let mut lam_wins = 0;
    let mut beta_wins = 0;
    let mut lines = Vec::new();
    for i in 0..SEEDS.len() {
        let (f_g, l_g) = (gzsd_u(&full[i]), gzsd_u(&no_unseen_cls[i]));
        let (f_z, b_z) = (zsd(&full[i]), zsd(&no_contrastive[i]));
        lam_wins += usize::from(f_g > l_g);
        beta_wins += usize::from(f_z > b_z);
        lines.push(format!(
            "seed {}: GZSD-unseen full {f_g:.3} vs lambda=0 {l_g:.3}, ZSD full {f_z:.3} vs beta=0 {b_z:.3}",
            SEEDS[i]
        ));
    }
    let majority = SEEDS.len() / 2 + 1;
    check(
        lam_wins >= majority && beta_wins >= majority,
        format!(
            "unseen-alignment arm {lam_wins}/3, contrastive arm {beta_wins}/3 (need {majority}); {}",
            lines.join("; ")
        ),
    )
}

fn reports(r: &PipelineResult) -> [&EvalReport; 3] {
    [&r.seen, &r.zsd, &r.gzsd]
}

fn determinism(first: &Arm) -> Outcome {
    let again = run_arm(SEEDS[0], None, None);
    let same = reports(&first.result) == reports(&again.result);
    let json = |r: &PipelineResult| serde_json::to_string(&reports(r)).unwrap();
    let bytes = json(&first.result) == json(&again.result);
    check(
        same && bytes && first.result.final_epoch_loss.to_bits() == again.result.final_epoch_loss.to_bits(),
        format!("rerun of seed {} gives identical reports (serialized bytes equal: {bytes})", SEEDS[0]),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, start: Instant, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id}] {name} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    report("1", "gradient correctness", t, gradient_correctness());
    let t = Instant::now();
    report("2", "loss closed forms", t, closed_forms());
    let t = Instant::now();
    report("3", "similarity structure", t, similarity_structure());
    let t = Instant::now();
    report("4", "metric oracle equivalence", t, metric_oracles());
    let t = Instant::now();
    report("5", "geometry round trip and NMS", t, geometry());

    let t = Instant::now();
    let full: Vec<Arm> = SEEDS.iter().map(|&s| run_arm(s, None, None)).collect();
    report("6", "end-to-end synthetic ZSD", t, end_to_end(&full));
    let t = Instant::now();
    let no_unseen_cls: Vec<Arm> = SEEDS.iter().map(|&s| run_arm(s, Some(0.0), None)).collect();
    let no_contrastive: Vec<Arm> = SEEDS.iter().map(|&s| run_arm(s, None, Some(0.0))).collect();
    report("7", "ablation direction", t, ablation(&full, &no_unseen_cls, &no_contrastive));
    let t = Instant::now();
    report("8", "determinism", t, determinism(&full[0]));

    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
