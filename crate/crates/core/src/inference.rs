//! Test-time detection: score fusion, label-space restriction, box decoding
//! and class-wise suppression. Also hosts two comparison baselines.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, ZsdError};
use crate::geometry::{decode_offsets, nms, BBox, OffsetTarget};
use crate::losses::{seen_classification_loss, softmax};
use crate::model::{assemble_class_matrix, forward_infer, ModelConfig, ModelParams};
use crate::numerics::{dot, Matrix};
use crate::semantics::{cosine_similarity, ClassVocabulary, Role, SemanticTable, SimilarityMatrix};
use crate::synthdata::{mix_seed, ImageRecord, RegionBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Seen,
    Zsd,
    Gzsd,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Seen, Mode::Zsd, Mode::Gzsd];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Seen => "seen",
            Mode::Zsd => "zsd",
            Mode::Gzsd => "gzsd",
        }
    }

    /// Whether `class` may be emitted in this mode.
    pub fn admits(self, vocab: &ClassVocabulary, class: usize) -> bool {
        match (self, vocab.role(class)) {
            (_, Role::Background) => false,
            (Mode::Seen, r) => r == Role::Seen,
            (Mode::Zsd, r) => r == Role::Unseen,
            (Mode::Gzsd, _) => true,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ZsdError;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ZsdError::InvalidConfig(format!("unknown mode `{s}` (expected seen, zsd or gzsd)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub score_threshold: f64,
    pub nms_threshold: f64,
    /// Temperature of the seen-row softmax in the similarity matrix.
    pub similarity_temperature: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_threshold: 0.5,
            similarity_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
    pub mode: Mode,
}

/// `(o_u S^T) ⊙ o_s` over every class.
pub fn fuse_scores(seen_probs: &[f64], unseen_probs: &[f64], similarity: &SimilarityMatrix) -> Result<Vec<f64>> {
    if seen_probs.len() != similarity.n_classes() {
        return Err(shape_err("fuse_scores seen probabilities", similarity.n_classes(), seen_probs.len()));
    }
    if unseen_probs.len() != similarity.n_unseen() {
        return Err(shape_err("fuse_scores unseen probabilities", similarity.n_unseen(), unseen_probs.len()));
    }
    Ok(seen_probs
        .iter()
        .enumerate()
        .map(|(c, p)| dot(unseen_probs, similarity.row(c)) * p)
        .collect())
}

/// Highest-scoring admissible class; ties go to the lower index.
fn best_class(scores: &[f64], vocab: &ClassVocabulary, mode: Mode) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (c, &s) in scores.iter().enumerate() {
        if mode.admits(vocab, c) && best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best
}

/// Sorts by score descending; ties keep candidate order.
fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// One candidate per proposal (argmax class and its decoded box), before
/// thresholding and suppression.
fn candidates(
    image_id: &str,
    proposals: &[BBox],
    scores: &Matrix,
    offsets: Option<&Matrix>,
    vocab: &ClassVocabulary,
    mode: Mode,
) -> Vec<Detection> {
    proposals
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let (class, score) = best_class(scores.row(i), vocab, mode)?;
            let bbox = match offsets {
                Some(o) => {
                    let r = o.row(i);
                    decode_offsets(b, &OffsetTarget { tx: r[0], ty: r[1], tw: r[2], th: r[3] })
                }
                None => *b,
            };
            Some(Detection {
                image_id: image_id.to_string(),
                bbox,
                class,
                score,
                mode,
            })
        })
        .collect()
}

/// Score threshold, class-wise NMS, then a global score sort.
pub fn postprocess(mut cands: Vec<Detection>, config: &InferenceConfig) -> Vec<Detection> {
    cands.retain(|d| d.score >= config.score_threshold);
    sort_detections(&mut cands);
    let mut classes: Vec<usize> = cands.iter().map(|d| d.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut kept = Vec::with_capacity(cands.len());
    for c in classes {
        let group: Vec<&Detection> = cands.iter().filter(|d| d.class == c).collect();
        let scored: Vec<(BBox, f64)> = group.iter().map(|d| (d.bbox, d.score)).collect();
        kept.extend(nms(&scored, config.nms_threshold).into_iter().map(|k| group[k].clone()));
    }
    sort_detections(&mut kept);
    kept
}

/// Fused score matrix (`n_proposals x n_classes`) and offsets for a set of proposals.
pub fn score_regions(
    params: &ModelParams,
    config: &ModelConfig,
    features: &Matrix,
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
) -> Result<(Matrix, Matrix)> {
    let classes = assemble_class_matrix(table, &params.background)?;
    let out = forward_infer(params, config, features, &classes, vocab)?;
    let mut fused = Matrix::zeros(features.rows(), vocab.n_classes());
    for i in 0..features.rows() {
        let f = fuse_scores(out.seen_probs.row(i), out.unseen_probs.row(i), similarity)?;
        fused.row_mut(i).copy_from_slice(&f);
    }
    Ok((fused, out.offsets))
}

fn image_features(image: &ImageRecord) -> Result<Matrix> {
    let rows: Vec<&[f64]> = image.proposals.iter().map(|p| p.feature.as_slice()).collect();
    Matrix::from_rows(&rows)
}

#[allow(clippy::too_many_arguments)]
pub fn detect(
    params: &ModelParams,
    config: &ModelConfig,
    image: &ImageRecord,
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
    mode: Mode,
    inference: &InferenceConfig,
) -> Result<Vec<Detection>> {
    if image.proposals.is_empty() {
        return Ok(Vec::new());
    }
    let (scores, offsets) = score_regions(params, config, &image_features(image)?, table, similarity, vocab)?;
    let boxes: Vec<BBox> = image.proposals.iter().map(|p| p.bbox).collect();
    Ok(postprocess(
        candidates(&image.image_id, &boxes, &scores, Some(&offsets), vocab, mode),
        inference,
    ))
}

/// Pre-suppression candidates; exposed for checking label-space properties.
#[allow(clippy::too_many_arguments)]
pub fn detect_candidates(
    params: &ModelParams,
    config: &ModelConfig,
    image: &ImageRecord,
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
    mode: Mode,
) -> Result<Vec<Detection>> {
    if image.proposals.is_empty() {
        return Ok(Vec::new());
    }
    let (scores, offsets) = score_regions(params, config, &image_features(image)?, table, similarity, vocab)?;
    let boxes: Vec<BBox> = image.proposals.iter().map(|p| p.bbox).collect();
    Ok(candidates(&image.image_id, &boxes, &scores, Some(&offsets), vocab, mode))
}

/// Detections for every image in a split.
#[allow(clippy::too_many_arguments)]
pub fn detect_all(
    params: &ModelParams,
    config: &ModelConfig,
    images: &[ImageRecord],
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
    mode: Mode,
    inference: &InferenceConfig,
) -> Result<Vec<Detection>> {
    let mut all = Vec::new();
    for img in images {
        all.extend(detect(params, config, img, table, similarity, vocab, mode, inference)?);
    }
    Ok(all)
}

/// Uniform random class scores on the raw proposal boxes: a chance-level reference.
pub fn detect_random(
    images: &[ImageRecord],
    vocab: &ClassVocabulary,
    mode: Mode,
    inference: &InferenceConfig,
    seed: u64,
) -> Vec<Detection> {
    let mut all = Vec::new();
    for (k, img) in images.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
        let mut scores = Matrix::zeros(img.proposals.len(), vocab.n_classes());
        scores.data_mut().iter_mut().for_each(|v| *v = rng.random::<f64>());
        let boxes: Vec<BBox> = img.proposals.iter().map(|p| p.bbox).collect();
        all.extend(postprocess(candidates(&img.image_id, &boxes, &scores, None, vocab, mode), inference));
    }
    all
}

/// Linear map from region features into the class-embedding space, trained
/// on seen classes only and transferred to unseen classes by cosine
/// compatibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConseProjection {
    /// `semantic_dim x region_dim`.
    pub weights: Matrix,
}

impl ConseProjection {
    pub fn project(&self, feature: &[f64]) -> Vec<f64> {
        self.weights.row_iter().map(|w| dot(w, feature)).collect()
    }

    /// Cross-entropy over seen classes with logits `(W f) · a_j`, trained by
    /// full-batch gradient descent on foreground regions.
    pub fn train(
        regions: &RegionBatch,
        table: &SemanticTable,
        vocab: &ClassVocabulary,
        iterations: usize,
        learning_rate: f64,
    ) -> Result<Self> {
        let fg: Vec<usize> = (0..regions.len()).filter(|&i| regions.labels[i] != 0).collect();
        let x = regions.features.select_rows(&fg);
        let labels: Vec<usize> = fg.iter().map(|&i| regions.labels[i] - 1).collect();
        let seen: Vec<&[f64]> = vocab.seen_range().map(|c| table.class_embedding(c)).collect();
        let a = Matrix::from_rows(&seen)?; // n_seen x d_c
        let mut w = Matrix::zeros(table.dim(), x.cols());
        for _ in 0..iterations {
            let projected = x.matmul_t(&w)?; // n x d_c
            let logits = projected.matmul_t(&a)?; // n x n_seen
            let (_, d_logits) = seen_classification_loss(&logits, &labels)?;
            let d_proj = d_logits.matmul(&a)?; // n x d_c
            let grad = d_proj.transpose().matmul(&x)?; // d_c x d_r
            for (wv, g) in w.data_mut().iter_mut().zip(grad.data()) {
                *wv -= learning_rate * g;
            }
        }
        w.ensure_finite("projection weights")?;
        Ok(Self { weights: w })
    }
}

/// Unseen class whose embedding has the highest cosine with the projected
/// feature, per region. Ties go to the lower class index.
pub fn conse_baseline_predict(
    projection: &ConseProjection,
    features: &Matrix,
    table: &SemanticTable,
    vocab: &ClassVocabulary,
) -> Result<Vec<usize>> {
    if projection.weights.cols() != features.cols() {
        return Err(shape_err("conse projection input", projection.weights.cols(), features.cols()));
    }
    features
        .row_iter()
        .map(|f| {
            let p = projection.project(f);
            let mut best = (vocab.unseen_range().start, f64::NEG_INFINITY);
            for u in vocab.unseen_range() {
                let c = cosine_similarity(&p, table.class_embedding(u))?;
                if c > best.1 {
                    best = (u, c);
                }
            }
            Ok(best.0)
        })
        .collect()
}

/// Softmax-normalized seen-class posterior of the projection; handy for inspection.
pub fn conse_seen_posterior(projection: &ConseProjection, feature: &[f64], table: &SemanticTable, vocab: &ClassVocabulary) -> Vec<f64> {
    let p = projection.project(feature);
    let logits: Vec<f64> = vocab.seen_range().map(|c| dot(&p, table.class_embedding(c))).collect();
    softmax(&logits)
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    image_id: String,
    class_name: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: BBox,
}

/// JSON-lines export, one detection per line.
pub fn detections_to_jsonl(dets: &[Detection], vocab: &ClassVocabulary) -> Result<String> {
    let mut out = String::new();
    for d in dets {
        out.push_str(&serde_json::to_string(&DetectionLine {
            image_id: d.image_id.clone(),
            class_name: vocab.name(d.class).to_string(),
            score: d.score,
            bbox: d.bbox,
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn detections_from_jsonl(text: &str, vocab: &ClassVocabulary, mode: Mode) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: DetectionLine = serde_json::from_str(line).map_err(|e| ZsdError::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        let class = vocab
            .index_of(&d.class_name)
            .filter(|&c| c != 0)
            .ok_or_else(|| ZsdError::UnknownClass(d.class_name.clone()))?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(ZsdError::InvalidProbability(d.score));
        }
        dets.push(Detection {
            image_id: d.image_id,
            bbox: d.bbox,
            class,
            score: d.score,
            mode,
        });
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::build_similarity_matrix;
    use crate::synthdata::{SynthBenchmark, SynthConfig};
    use proptest::prelude::*;

    fn one_one() -> (ClassVocabulary, SimilarityMatrix) {
        let v = ClassVocabulary::new(vec!["a"], vec!["b"]).unwrap();
        let s = SimilarityMatrix::from_matrix(Matrix::from_rows(&[&[0.0][..], &[1.0], &[1.0]]).unwrap(), &v).unwrap();
        (v, s)
    }

    #[test]
    fn fuse_small_example() {
        let (_, s) = one_one();
        let f = fuse_scores(&[0.2, 0.3, 0.4], &[0.5], &s).unwrap();
        let expected = [0.0, 0.15, 0.2];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_one_hot_unseen_rows_and_zero_background() {
        let v = ClassVocabulary::new(vec!["a", "b"], vec!["c", "d"]).unwrap();
        let t = SemanticTable::from_matrix(
            Matrix::from_rows(&[&[1.0, 0.0][..], &[0.0, 1.0], &[1.0, 1.0], &[1.0, -1.0]]).unwrap(),
            &v.names()[1..],
        )
        .unwrap();
        let s = build_similarity_matrix(&t, &v, 1.0).unwrap();
        let os = [0.1, 0.2, 0.3, 0.25, 0.15];
        let ou = [0.6, 0.8];
        let f = fuse_scores(&os, &ou, &s).unwrap();
        assert_eq!(f[0], 0.0);
        assert!((f[3] - 0.6 * 0.25).abs() < 1e-15);
        assert!((f[4] - 0.8 * 0.15).abs() < 1e-15);
        assert_eq!(fuse_scores(&os, &[0.0, 0.0], &s).unwrap(), vec![0.0; 5]);
        assert!(fuse_scores(&os[..4], &ou, &s).is_err());
    }

    proptest! {
        #[test]
        fn fuse_is_monotone(os in prop::collection::vec(0.0..1.0f64, 3), ou in 0.0..1.0f64, bump in 0.0..0.5f64, k in 0usize..3) {
            let (_, s) = one_one();
            let base = fuse_scores(&os, &[ou], &s).unwrap();
            let up_u = fuse_scores(&os, &[ou + bump], &s).unwrap();
            let mut os2 = os.clone();
            os2[k] += bump;
            let up_s = fuse_scores(&os2, &[ou], &s).unwrap();
            for c in 0..3 {
                prop_assert!(up_u[c] >= base[c]);
                prop_assert!(up_s[c] >= base[c]);
            }
        }
    }

    fn det(bbox: BBox, class: usize, score: f64) -> Detection {
        Detection {
            image_id: "i".into(),
            bbox,
            class,
            score,
            mode: Mode::Gzsd,
        }
    }

    #[test]
    fn postprocess_suppresses_per_class_and_sorts() {
        let cfg = InferenceConfig::default();
        let a = BBox::new(50.0, 50.0, 20.0, 20.0);
        let a2 = BBox::new(51.0, 50.0, 20.0, 20.0);
        let out = postprocess(
            vec![det(a, 1, 0.6), det(a2, 1, 0.9), det(a, 2, 0.7), det(a, 3, 0.01)],
            &cfg,
        );
        let got: Vec<(usize, f64)> = out.iter().map(|d| (d.class, d.score)).collect();
        assert_eq!(got, vec![(1, 0.9), (2, 0.7)]);
    }

    fn trained_free_setup() -> (SynthBenchmark, ModelConfig, ModelParams, SimilarityMatrix) {
        let bench = SynthBenchmark::generate(&SynthConfig {
            train_images: 5,
            test_images: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig::default();
        let params = ModelParams::init(
            &cfg,
            &bench.embeddings.table,
            &bench.embeddings.vocabulary,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let sim = build_similarity_matrix(&bench.embeddings.table, &bench.embeddings.vocabulary, 1.0).unwrap();
        (bench, cfg, params, sim)
    }

    #[test]
    fn detections_respect_mode_and_order() {
        let (b, cfg, p, s) = trained_free_setup();
        let v = &b.embeddings.vocabulary;
        let inf = InferenceConfig {
            score_threshold: 0.0,
            ..InferenceConfig::default()
        };
        for mode in Mode::ALL {
            for img in &b.test_gzsd.images {
                let d = detect(&p, &cfg, img, &b.embeddings.table, &s, v, mode, &inf).unwrap();
                assert!(!d.is_empty());
                assert!(d.iter().all(|x| mode.admits(v, x.class) && x.class != 0));
                assert!(d.windows(2).all(|w| w[0].score >= w[1].score));
                assert!(d.iter().all(|x| (0.0..=1.0).contains(&x.score)));
            }
        }
        let mut empty = b.test_gzsd.images[0].clone();
        empty.proposals.clear();
        assert!(detect(&p, &cfg, &empty, &b.embeddings.table, &s, v, Mode::Zsd, &inf).unwrap().is_empty());
    }

    #[test]
    fn zsd_candidates_cover_gzsd_unseen_candidates() {
        let (b, cfg, p, s) = trained_free_setup();
        let v = &b.embeddings.vocabulary;
        for img in &b.test_gzsd.images {
            let z = detect_candidates(&p, &cfg, img, &b.embeddings.table, &s, v, Mode::Zsd).unwrap();
            let g = detect_candidates(&p, &cfg, img, &b.embeddings.table, &s, v, Mode::Gzsd).unwrap();
            for d in g.iter().filter(|d| v.role(d.class) == Role::Unseen) {
                assert!(z.iter().any(|x| x.class == d.class && x.bbox == d.bbox && x.score == d.score));
            }
        }
    }

    #[test]
    fn detection_jsonl_round_trip() {
        let (b, cfg, p, s) = trained_free_setup();
        let v = &b.embeddings.vocabulary;
        let dets = detect_all(&p, &cfg, &b.test_zsd.images, &b.embeddings.table, &s, v, Mode::Zsd, &InferenceConfig::default()).unwrap();
        let text = detections_to_jsonl(&dets, v).unwrap();
        assert_eq!(detections_from_jsonl(&text, v, Mode::Zsd).unwrap(), dets);
        let bad = text.replacen("unseen_", "nothing_", 1);
        if !dets.is_empty() {
            assert!(matches!(detections_from_jsonl(&bad, v, Mode::Zsd), Err(ZsdError::UnknownClass(_))));
        }
    }

    #[test]
    fn random_baseline_is_seeded() {
        let (b, ..) = trained_free_setup();
        let v = &b.embeddings.vocabulary;
        let cfg = InferenceConfig::default();
        let a = detect_random(&b.test_zsd.images, v, Mode::Zsd, &cfg, 3);
        assert_eq!(a, detect_random(&b.test_zsd.images, v, Mode::Zsd, &cfg, 3));
        assert!(a.iter().all(|d| v.role(d.class) == Role::Unseen));
    }

    fn vocab_2_3() -> (ClassVocabulary, SemanticTable) {
        let v = ClassVocabulary::new(vec!["s0", "s1"], vec!["u0", "u1", "u2"]).unwrap();
        let t = SemanticTable::from_matrix(
            Matrix::from_rows(&[
                &[1.0, 0.0, 0.0][..],
                &[0.0, 1.0, 0.0],
                &[0.0, 0.0, 1.0],
                &[1.0, 1.0, 0.0],
                &[1.0, -1.0, 0.0],
            ])
            .unwrap(),
            &v.names()[1..],
        )
        .unwrap();
        (v, t)
    }

    #[test]
    fn conse_picks_matching_embedding_and_breaks_ties_low() {
        let (v, t) = vocab_2_3();
        let proj = ConseProjection {
            weights: Matrix::identity(3),
        };
        let f = Matrix::from_rows(&[&[0.0, 0.0, 2.0][..], &[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]).unwrap();
        let p = conse_baseline_predict(&proj, &f, &t, &v).unwrap();
        // third row is equidistant from u1 and u2
        assert_eq!(p, vec![3, 4, 4]);
    }

    proptest! {
        #[test]
        fn conse_matches_exhaustive_scan(w in prop::collection::vec(-1.0..1.0f64, 9), f in prop::collection::vec(-1.0..1.0f64, 3)) {
            let (v, t) = vocab_2_3();
            let proj = ConseProjection { weights: Matrix::from_vec(3, 3, w).unwrap() };
            let p = proj.project(&f);
            prop_assume!(p.iter().any(|x| x.abs() > 1e-9));
            let got = conse_baseline_predict(&proj, &Matrix::from_rows(&[&f[..]]).unwrap(), &t, &v).unwrap()[0];
            let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let cos: Vec<f64> = v.unseen_range().map(|u| {
                let a = t.class_embedding(u);
                p.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() / (norm(&p) * norm(a))
            }).collect();
            let best = cos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((cos[got - v.unseen_range().start] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn conse_projection_learns_seen_classes() {
        let bench = SynthBenchmark::generate(&SynthConfig {
            train_images: 60,
            ..SynthConfig::default()
        })
        .unwrap();
        let v = &bench.embeddings.vocabulary;
        let t = &bench.embeddings.table;
        let regions = bench.train.regions().unwrap();
        let proj = ConseProjection::train(&regions, t, v, 200, 0.05).unwrap();
        let fg: Vec<usize> = (0..regions.len()).filter(|&i| regions.labels[i] != 0).collect();
        let correct = fg
            .iter()
            .filter(|&&i| {
                let post = conse_seen_posterior(&proj, regions.features.row(i), t, v);
                let arg = (0..post.len()).max_by(|&a, &b| post[a].total_cmp(&post[b])).unwrap();
                arg + 1 == regions.labels[i]
            })
            .count();
        assert!(correct as f64 > 0.5 * fg.len() as f64, "{correct}/{}", fg.len());
    }
}
