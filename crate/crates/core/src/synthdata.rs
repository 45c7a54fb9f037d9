//! Seeded synthetic stand-in for the backbone and proposal network.
//!
//! Class prototypes in feature space are a fixed linear image of the class
//! embeddings, so unseen classes (mixtures of seen embeddings) land near
//! their seen parents. Proposals are jittered ground-truth boxes plus
//! background boxes; a proposal's feature blends its best-overlapping
//! object's prototype with a background prototype in proportion to the
//! overlap, plus a linear code of its box offsets and isotropic noise.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZsdError};
use crate::geometry::{decode_offsets, encode_offsets, iou, BBox, OffsetTarget};
use crate::numerics::{axpy, Matrix};
use crate::semantics::{ClassVocabulary, Role, SemanticTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub semantic_dim: usize,
    pub region_dim: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub proposals_per_image: usize,
    /// Standard deviation of per-coordinate feature noise.
    pub feature_noise: f64,
    /// Norm of the random perturbation added to each unseen embedding's
    /// mixture of seen parents.
    pub embedding_noise: f64,
    /// Each unseen class mixes between 1 and this many seen parents.
    pub max_parents: usize,
    /// Relative std of proposal center shift and log-size change.
    pub jitter: f64,
    pub label_iou: f64,
    /// Number of distinct background appearance prototypes.
    pub background_modes: usize,
    /// Rank of the class-independent nuisance subspace.
    pub nuisance_rank: usize,
    /// Std of the per-image nuisance offset shared by all of its proposals.
    pub image_nuisance: f64,
    /// Std of the per-object nuisance offset, scaled by proposal overlap.
    pub object_nuisance: f64,
    pub image_size: f64,
    pub min_box: f64,
    pub max_box: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_seen: 16,
            n_unseen: 4,
            semantic_dim: 16,
            region_dim: 32,
            train_images: 200,
            test_images: 50,
            min_objects: 1,
            max_objects: 3,
            proposals_per_image: 8,
            feature_noise: 0.5,
            embedding_noise: 0.3,
            max_parents: 3,
            jitter: 0.1,
            label_iou: 0.5,
            background_modes: 8,
            nuisance_rank: 4,
            image_nuisance: 0.0,
            object_nuisance: 0.0,
            image_size: 100.0,
            min_box: 10.0,
            max_box: 40.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ZsdError::InvalidConfig(m.to_string()));
        if self.n_seen == 0 {
            return bad("n_seen must be positive");
        }
        if self.n_unseen == 0 {
            return bad("n_unseen must be positive: zero-shot detection needs unseen classes");
        }
        if self.semantic_dim < 2 || self.region_dim == 0 {
            return bad("semantic_dim must be >= 2 and region_dim positive");
        }
        if self.train_images == 0 || self.test_images == 0 || self.proposals_per_image == 0 {
            return bad("image and proposal counts must be positive");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object range must satisfy 1 <= min_objects <= max_objects");
        }
        if self.max_objects > self.proposals_per_image {
            return bad("max_objects cannot exceed proposals_per_image");
        }
        if self.max_parents == 0 || self.max_parents > self.n_seen {
            return bad("max_parents must lie in 1..=n_seen");
        }
        if !(self.feature_noise >= 0.0
            && self.embedding_noise >= 0.0
            && self.jitter >= 0.0
            && self.image_nuisance >= 0.0
            && self.object_nuisance >= 0.0)
        {
            return bad("noise and jitter scales must be non-negative");
        }
        if !(self.label_iou > 0.0 && self.label_iou <= 1.0) {
            return bad("label_iou must lie in (0, 1]");
        }
        if self.background_modes == 0 {
            return bad("background_modes must be positive");
        }
        if !(self.min_box > 0.0 && self.min_box <= self.max_box && self.max_box < self.image_size) {
            return bad("box size range must satisfy 0 < min_box <= max_box < image_size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Seen objects only; the training set.
    Train,
    /// Held-out images with seen objects only.
    TestSeen,
    /// Unseen objects only.
    TestZsd,
    /// Seen and unseen objects.
    TestGzsd,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::TestSeen, Split::TestZsd, Split::TestGzsd];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestSeen => "test_seen",
            Split::TestZsd => "test_zsd",
            Split::TestGzsd => "test_gzsd",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::TestSeen => 2,
            Split::TestZsd => 3,
            Split::TestGzsd => 4,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ZsdError;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| ZsdError::InvalidSplit(s.to_string()))
    }
}

/// SplitMix64 finalizer, used to derive independent seeds per stream and image.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g * std
        })
        .collect()
}

/// Class embeddings plus the seen parents each unseen class was mixed from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vocabulary: ClassVocabulary,
    pub table: SemanticTable,
    /// For each unseen class (in order), `(seen class index, mixture weight)`.
    pub parents: Vec<Vec<(usize, f64)>>,
}

pub fn synthetic_vocabulary(n_seen: usize, n_unseen: usize) -> ClassVocabulary {
    ClassVocabulary::new(
        (0..n_seen).map(|i| format!("seen_{i:02}")).collect(),
        (0..n_unseen).map(|i| format!("unseen_{i:02}")).collect(),
    )
    .expect("generated names are unique")
}

/// Random unit seen embeddings; each unseen embedding is a convex mixture of
/// 1..=`max_parents` distinct seen embeddings plus a perturbation of norm
/// about `embedding_noise`, renormalized.
pub fn generate_embeddings(config: &SynthConfig, seed: u64) -> Result<EmbeddingSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE3B));
    let d = config.semantic_dim;
    let vocabulary = synthetic_vocabulary(config.n_seen, config.n_unseen);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(vocabulary.n_foreground());
    for _ in 0..config.n_seen {
        rows.push(gaussian_vec(&mut rng, d, 1.0));
    }
    normalize_all(&mut rows);
    let seen_rows = rows.clone();
    let seen_ids: Vec<usize> = vocabulary.seen_range().collect();
    let mut parents = Vec::with_capacity(config.n_unseen);
    for _ in 0..config.n_unseen {
        let k = rng.random_range(1..=config.max_parents);
        let chosen: Vec<usize> = seen_ids.choose_multiple(&mut rng, k).copied().collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut v = vec![0.0; d];
        let mut mix = Vec::with_capacity(k);
        for (&c, &w) in chosen.iter().zip(&raw) {
            let w = w / total;
            axpy(w, &seen_rows[c - 1][..], &mut v);
            mix.push((c, w));
        }
        let noise = gaussian_vec(&mut rng, d, config.embedding_noise / (d as f64).sqrt());
        axpy(1.0, &noise, &mut v);
        rows.push(v);
        parents.push(mix);
    }
    let names = vocabulary.names()[1..].to_vec();
    let table = SemanticTable::from_matrix(Matrix::from_rows(&rows)?, &names)?;
    Ok(EmbeddingSet {
        vocabulary,
        table,
        parents,
    })
}

fn normalize_all(rows: &mut [Vec<f64>]) {
    for r in rows {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
}

/// Fixed maps from semantics and box geometry to region features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWorld {
    /// `n_classes x region_dim`; row 0 is unused (background has its own modes).
    pub prototypes: Matrix,
    /// `background_modes x region_dim`.
    pub background: Matrix,
    /// `region_dim x 4` code of the offsets from a proposal to its object.
    pub offset_code: Matrix,
    /// `nuisance_rank x region_dim`, unit-norm rows.
    pub nuisance_basis: Matrix,
}

impl FeatureWorld {
    /// Class prototypes are `G a_y` for one Gaussian `G` shared by every class.
    pub fn new(config: &SynthConfig, table: &SemanticTable, vocab: &ClassVocabulary) -> Result<Self> {
        config.validate()?;
        table.check_vocab(vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xF3A7));
        let (dr, dc) = (config.region_dim, table.dim());
        let projection = Matrix::from_vec(dr, dc, gaussian_vec(&mut rng, dr * dc, 1.0))?;
        let mut prototypes = Matrix::zeros(vocab.n_classes(), dr);
        for c in 1..vocab.n_classes() {
            for r in 0..dr {
                let v: f64 = projection.row(r).iter().zip(table.class_embedding(c)).map(|(g, a)| g * a).sum();
                prototypes.set(c, r, v);
            }
        }
        let background = Matrix::from_vec(
            config.background_modes,
            dr,
            gaussian_vec(&mut rng, config.background_modes * dr, 1.0),
        )?;
        let offset_code = Matrix::from_vec(dr, 4, gaussian_vec(&mut rng, dr * 4, 2.0))?;
        let mut basis: Vec<Vec<f64>> = (0..config.nuisance_rank).map(|_| gaussian_vec(&mut rng, dr, 1.0)).collect();
        normalize_all(&mut basis);
        let nuisance_basis = Matrix::from_vec(config.nuisance_rank, dr, basis.concat())?;
        Ok(Self {
            prototypes,
            background,
            offset_code,
            nuisance_basis,
        })
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        self.prototypes.row(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub feature: Vec<f64>,
    pub label: usize,
    /// Offsets to the matched object; only for foreground proposals.
    pub target: Option<OffsetTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub gts: Vec<GroundTruth>,
    pub proposals: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub split: Split,
    pub vocabulary: ClassVocabulary,
    pub images: Vec<ImageRecord>,
}

/// Index of the highest-IoU ground truth (first on ties) and that IoU.
pub fn best_match(proposal: &BBox, gts: &[GroundTruth]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in gts.iter().enumerate() {
        let v = iou(proposal, &g.bbox);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best
}

fn random_box(config: &SynthConfig, rng: &mut impl Rng) -> BBox {
    let w = rng.random_range(config.min_box..=config.max_box);
    let h = rng.random_range(config.min_box..=config.max_box);
    BBox::new(
        rng.random_range(w / 2.0..=config.image_size - w / 2.0),
        rng.random_range(h / 2.0..=config.image_size - h / 2.0),
        w,
        h,
    )
}

fn jittered(gt: &BBox, scale: f64, rng: &mut impl Rng) -> BBox {
    if scale == 0.0 {
        return *gt;
    }
    let n = gaussian_vec(rng, 4, scale);
    BBox::new(
        gt.x + n[0] * gt.w,
        gt.y + n[1] * gt.h,
        gt.w * n[2].exp(),
        gt.h * n[3].exp(),
    )
}

fn class_pool(split: Split, vocab: &ClassVocabulary) -> (Vec<usize>, Vec<usize>) {
    let seen: Vec<usize> = vocab.seen_range().collect();
    let unseen: Vec<usize> = vocab.unseen_range().collect();
    match split {
        Split::Train | Split::TestSeen => (seen, Vec::new()),
        Split::TestZsd => (unseen, Vec::new()),
        Split::TestGzsd => (seen, unseen),
    }
}

/// Number of tries to place a background proposal away from every object.
const BACKGROUND_TRIES: usize = 50;
/// Extra proposals are jittered this much more than the first one per object.
const EXTRA_JITTER: f64 = 2.5;

/// Generates one split. Each image draws from its own seed so images can be
/// generated independently.
pub fn generate_scene(
    config: &SynthConfig,
    world: &FeatureWorld,
    vocab: &ClassVocabulary,
    split: Split,
    seed: u64,
) -> Result<SynthDataset> {
    config.validate()?;
    if world.prototypes.rows() != vocab.n_classes() || world.prototypes.cols() != config.region_dim {
        return Err(ZsdError::VocabularyMismatch("feature world does not match vocabulary".into()));
    }
    let n_images = match split {
        Split::Train => config.train_images,
        _ => config.test_images,
    };
    let split_seed = mix_seed(seed, split.stream());
    let images = (0..n_images)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(split_seed, k as u64));
            generate_image(config, world, vocab, split, format!("{split}_{k:05}"), &mut rng)
        })
        .collect();
    Ok(SynthDataset {
        split,
        vocabulary: vocab.clone(),
        images,
    })
}

fn generate_image(
    config: &SynthConfig,
    world: &FeatureWorld,
    vocab: &ClassVocabulary,
    split: Split,
    image_id: String,
    rng: &mut ChaCha8Rng,
) -> ImageRecord {
    let (primary, secondary) = class_pool(split, vocab);
    let n_obj = rng.random_range(config.min_objects..=config.max_objects);
    let gts: Vec<GroundTruth> = (0..n_obj)
        .map(|_| {
            // mixed split: seen and unseen objects equally likely
            let pool = if !secondary.is_empty() && rng.random_bool(0.5) {
                &secondary
            } else {
                &primary
            };
            GroundTruth {
                bbox: random_box(config, rng),
                label: *pool.choose(rng).expect("non-empty class pool"),
            }
        })
        .collect();

    let mut boxes: Vec<BBox> = gts.iter().map(|g| jittered(&g.bbox, config.jitter, rng)).collect();
    while boxes.len() < config.proposals_per_image {
        if rng.random_bool(0.5) {
            let g = &gts[rng.random_range(0..gts.len())];
            boxes.push(jittered(&g.bbox, config.jitter * EXTRA_JITTER, rng));
        } else {
            let mut b = random_box(config, rng);
            for _ in 0..BACKGROUND_TRIES {
                if best_match(&b, &gts).is_none_or(|(_, v)| v < 0.6 * config.label_iou) {
                    break;
                }
                b = random_box(config, rng);
            }
            boxes.push(b);
        }
    }

    let nuisance = |rng: &mut ChaCha8Rng, std: f64| {
        let mut v = vec![0.0; config.region_dim];
        for (row, z) in world.nuisance_basis.row_iter().zip(gaussian_vec(rng, config.nuisance_rank, std)) {
            axpy(z, row, &mut v);
        }
        v
    };
    let image_offset = nuisance(rng, config.image_nuisance);
    let object_offsets: Vec<Vec<f64>> = gts.iter().map(|_| nuisance(rng, config.object_nuisance)).collect();

    let proposals = boxes
        .into_iter()
        .map(|b| {
            let (k, overlap) = best_match(&b, &gts).expect("at least one object");
            let fg = overlap >= config.label_iou;
            let mode = rng.random_range(0..world.background.rows());
            let mut feature = world.background.row(mode).to_vec();
            if overlap > 0.0 {
                feature.iter_mut().for_each(|v| *v *= 1.0 - overlap);
                axpy(overlap, world.prototype(gts[k].label), &mut feature);
                axpy(overlap, &object_offsets[k], &mut feature);
                let t = encode_offsets(&b, &gts[k].bbox).to_array();
                for (r, f) in feature.iter_mut().enumerate() {
                    *f += world.offset_code.row(r).iter().zip(&t).map(|(c, x)| c * x).sum::<f64>();
                }
            }
            axpy(1.0, &image_offset, &mut feature);
            let noise = gaussian_vec(rng, config.region_dim, config.feature_noise);
            axpy(1.0, &noise, &mut feature);
            Proposal {
                bbox: b,
                feature,
                label: if fg { gts[k].label } else { 0 },
                target: fg.then(|| encode_offsets(&b, &gts[k].bbox)),
            }
        })
        .collect();

    ImageRecord {
        image_id,
        gts,
        proposals,
    }
}

/// On-disk image line; labels are class names.
#[derive(Serialize, Deserialize)]
struct ImageLine {
    image_id: String,
    gts: Vec<GtLine>,
    proposals: Vec<ProposalLine>,
}

#[derive(Serialize, Deserialize)]
struct GtLine {
    #[serde(rename = "box")]
    bbox: BBox,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct ProposalLine {
    #[serde(rename = "box")]
    bbox: BBox,
    feature: Vec<f64>,
    label: String,
    target: Option<OffsetTarget>,
}

impl SynthDataset {
    /// JSON-lines, one image per line, labels written as class names.
    pub fn to_jsonl(&self) -> Result<String> {
        let v = &self.vocabulary;
        let mut out = String::new();
        for img in &self.images {
            let line = ImageLine {
                image_id: img.image_id.clone(),
                gts: img
                    .gts
                    .iter()
                    .map(|g| GtLine {
                        bbox: g.bbox,
                        label: v.name(g.label).to_string(),
                    })
                    .collect(),
                proposals: img
                    .proposals
                    .iter()
                    .map(|p| ProposalLine {
                        bbox: p.bbox,
                        feature: p.feature.clone(),
                        label: v.name(p.label).to_string(),
                        target: p.target,
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, split: Split, vocabulary: &ClassVocabulary) -> Result<Self> {
        let lookup = |name: &str| {
            vocabulary
                .index_of(name)
                .ok_or_else(|| ZsdError::UnknownClass(name.to_string()))
        };
        let mut images = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ImageLine = serde_json::from_str(line).map_err(|e| ZsdError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            let gts = rec
                .gts
                .into_iter()
                .map(|g| {
                    let label = lookup(&g.label)?;
                    if label == 0 {
                        return Err(ZsdError::Parse {
                            line: lineno + 1,
                            message: "ground truth labelled as background".into(),
                        });
                    }
                    Ok(GroundTruth { bbox: g.bbox, label })
                })
                .collect::<Result<Vec<_>>>()?;
            let proposals = rec
                .proposals
                .into_iter()
                .map(|p| {
                    Ok(Proposal {
                        bbox: p.bbox,
                        feature: p.feature,
                        label: lookup(&p.label)?,
                        target: p.target,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            images.push(ImageRecord {
                image_id: rec.image_id,
                gts,
                proposals,
            });
        }
        Ok(Self {
            split,
            vocabulary: vocabulary.clone(),
            images,
        })
    }

    pub fn num_proposals(&self) -> usize {
        self.images.iter().map(|i| i.proposals.len()).sum()
    }

    /// Flattens every proposal into one region table.
    pub fn regions(&self) -> Result<RegionBatch> {
        let rows: Vec<(&ImageRecord, &Proposal)> = self
            .images
            .iter()
            .flat_map(|img| img.proposals.iter().map(move |p| (img, p)))
            .collect();
        let dim = rows.first().map_or(0, |(_, p)| p.feature.len());
        let mut features = Matrix::zeros(rows.len(), dim);
        let mut targets = Matrix::zeros(rows.len(), 4);
        let mut labels = Vec::with_capacity(rows.len());
        let mut boxes = Vec::with_capacity(rows.len());
        let mut gt_boxes = Vec::with_capacity(rows.len());
        for (i, (_, p)) in rows.iter().enumerate() {
            if p.feature.len() != dim {
                return Err(crate::error::shape_err("proposal feature", dim, p.feature.len()));
            }
            features.row_mut(i).copy_from_slice(&p.feature);
            labels.push(p.label);
            boxes.push(p.bbox);
            match (p.label, p.target) {
                (0, _) => gt_boxes.push(None),
                (_, Some(t)) => {
                    targets.row_mut(i).copy_from_slice(&t.to_array());
                    gt_boxes.push(Some(decode_offsets(&p.bbox, &t)));
                }
                (_, None) => {
                    return Err(ZsdError::Parse {
                        line: i + 1,
                        message: "foreground proposal without regression target".into(),
                    })
                }
            }
        }
        Ok(RegionBatch {
            features,
            labels,
            boxes,
            gt_boxes,
            targets,
        })
    }

    /// Classes present in the ground truth, by role.
    pub fn roles_present(&self) -> Vec<Role> {
        let mut roles: Vec<Role> = self
            .images
            .iter()
            .flat_map(|i| i.gts.iter().map(|g| self.vocabulary.role(g.label)))
            .collect();
        roles.sort_by_key(|r| *r as u8);
        roles.dedup();
        roles
    }
}

/// A set of region proposals with their supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub boxes: Vec<BBox>,
    /// Matched ground-truth box for foreground regions.
    pub gt_boxes: Vec<Option<BBox>>,
    /// `n x 4`; rows of background regions are zero.
    pub targets: Matrix,
}

impl RegionBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> RegionBatch {
        RegionBatch {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            boxes: idx.iter().map(|&i| self.boxes[i]).collect(),
            gt_boxes: idx.iter().map(|&i| self.gt_boxes[i]).collect(),
            targets: self.targets.select_rows(idx),
        }
    }
}

/// Shuffled minibatches for one epoch. The order depends only on `(seed, epoch)`.
pub fn batch_iterator(
    regions: &RegionBatch,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = RegionBatch> + '_ {
    let mut order: Vec<usize> = (0..regions.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));
    order.shuffle(&mut rng);
    let size = batch_size.max(1);
    let chunks: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |c| regions.select(&c))
}

/// Embeddings, feature world and all four splits from one config.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub embeddings: EmbeddingSet,
    pub world: FeatureWorld,
    pub train: SynthDataset,
    pub test_seen: SynthDataset,
    pub test_zsd: SynthDataset,
    pub test_gzsd: SynthDataset,
}

impl SynthBenchmark {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        let embeddings = generate_embeddings(config, config.seed)?;
        let vocab = &embeddings.vocabulary;
        let world = FeatureWorld::new(config, &embeddings.table, vocab)?;
        let gen = |split| generate_scene(config, &world, vocab, split, config.seed);
        Ok(Self {
            train: gen(Split::Train)?,
            test_seen: gen(Split::TestSeen)?,
            test_zsd: gen(Split::TestZsd)?,
            test_gzsd: gen(Split::TestGzsd)?,
            embeddings,
            world,
        })
    }

    pub fn split(&self, split: Split) -> &SynthDataset {
        match split {
            Split::Train => &self.train,
            Split::TestSeen => &self.test_seen,
            Split::TestZsd => &self.test_zsd,
            Split::TestGzsd => &self.test_gzsd,
        }
    }
}
