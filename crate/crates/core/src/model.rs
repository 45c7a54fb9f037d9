//! The detection head: visual and semantic mapping networks, the two
//! consistency heads, the contrastive embedding head, the class-agnostic box
//! regressor and the trainable background embedding.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::Hasher;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, ZsdError};
use crate::losses::softmax;
use crate::numerics::{axpy, dot, Activation, AffineLayer, Matrix, Mlp, MlpCache, Parameters};
use crate::semantics::{ClassVocabulary, SemanticTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Region feature dimension.
    pub region_dim: usize,
    /// Class embedding dimension.
    pub semantic_dim: usize,
    /// Shared visual-semantic space.
    pub embed_dim: usize,
    /// Hidden width of both consistency heads.
    pub head_hidden: usize,
    /// Output width of the contrastive embedding head.
    pub contrastive_dim: usize,
    /// Activation of the contrastive embedding head, applied before normalization.
    pub contrastive_activation: Activation,
    pub temperature: f64,
    pub lambda: f64,
    pub beta: f64,
    pub include_background_in_contrastive: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            region_dim: 32,
            semantic_dim: 16,
            embed_dim: 64,
            head_hidden: 64,
            contrastive_dim: 32,
            contrastive_activation: Activation::Identity,
            temperature: 0.1,
            lambda: 0.2,
            beta: 0.5,
            include_background_in_contrastive: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.region_dim,
            self.semantic_dim,
            self.embed_dim,
            self.head_hidden,
            self.contrastive_dim,
        ];
        if dims.contains(&0) {
            return Err(ZsdError::InvalidConfig("model dimensions must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(ZsdError::InvalidTemperature(self.temperature));
        }
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return Err(ZsdError::InvalidConfig("lambda and beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// All trainable weights. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub visual_map: Mlp,
    pub semantic_map: Mlp,
    pub seen_head: Mlp,
    pub unseen_head: Mlp,
    pub embed_head: Mlp,
    pub regressor: AffineLayer,
    pub background: Vec<f64>,
}

/// Named blocks of [`ModelParams`] tensors, in `Parameters` order.
pub const PARAM_GROUPS: [&str; 7] = [
    "visual_map",
    "semantic_map",
    "seen_head",
    "unseen_head",
    "embed_head",
    "regressor",
    "background",
];

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(
        config: &ModelConfig,
        table: &SemanticTable,
        vocab: &ClassVocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        table.check_vocab(vocab)?;
        if table.dim() != config.semantic_dim {
            return Err(shape_err("ModelParams::init semantic_dim", config.semantic_dim, table.dim()));
        }
        use Activation::{Identity, Relu, Sigmoid};
        let c = config;
        let visual_map = Mlp::glorot(&[c.region_dim, c.embed_dim], &[Relu], rng)?;
        let semantic_map = Mlp::glorot(&[c.semantic_dim, c.embed_dim], &[Relu], rng)?;
        let seen_head = Mlp::glorot(&[c.embed_dim, c.head_hidden, 1], &[Relu, Identity], rng)?;
        let unseen_head = Mlp::glorot(&[c.embed_dim, c.head_hidden, 1], &[Relu, Sigmoid], rng)?;
        let embed_head = Mlp::glorot(&[c.embed_dim, c.contrastive_dim], &[c.contrastive_activation], rng)?;
        let regressor = AffineLayer::glorot(c.region_dim, 4, Identity, rng);

        let mut background = vec![0.0; c.semantic_dim];
        for class in vocab.seen_range() {
            axpy(1.0 / vocab.n_seen().max(1) as f64, table.class_embedding(class), &mut background);
        }
        for v in &mut background {
            *v += rng.random_range(-0.01..0.01);
        }
        Ok(Self {
            visual_map,
            semantic_map,
            seen_head,
            unseen_head,
            embed_head,
            regressor,
            background,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            visual_map: self.visual_map.zeros_like(),
            semantic_map: self.semantic_map.zeros_like(),
            seen_head: self.seen_head.zeros_like(),
            unseen_head: self.unseen_head.zeros_like(),
            embed_head: self.embed_head.zeros_like(),
            regressor: self.regressor.zeros_like(),
            background: vec![0.0; self.background.len()],
        }
    }

    /// Tensor index ranges of each entry of [`PARAM_GROUPS`].
    pub fn group_ranges(&self) -> Vec<(&'static str, Range<usize>)> {
        let counts = [
            self.visual_map.tensors().len(),
            self.semantic_map.tensors().len(),
            self.seen_head.tensors().len(),
            self.unseen_head.tensors().len(),
            self.embed_head.tensors().len(),
            2,
            1,
        ];
        let mut start = 0;
        PARAM_GROUPS
            .iter()
            .zip(counts)
            .map(|(&name, n)| {
                let r = start..start + n;
                start += n;
                (name, r)
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_dims(&self, config: &ModelConfig) -> Result<()> {
        let c = config;
        let ok = self.visual_map.input_dim() == c.region_dim
            && self.visual_map.output_dim() == self.semantic_map.output_dim()
            && self.semantic_map.input_dim() == c.semantic_dim
            && self.seen_head.input_dim() == self.visual_map.output_dim()
            && self.unseen_head.input_dim() == self.visual_map.output_dim()
            && self.seen_head.output_dim() == 1
            && self.unseen_head.output_dim() == 1
            && self.embed_head.input_dim() == self.visual_map.output_dim()
            && self.regressor.in_dim() == c.region_dim
            && self.regressor.out_dim() == 4
            && self.background.len() == c.semantic_dim;
        if ok {
            Ok(())
        } else {
            Err(shape_err("ModelParams", "dimensions matching the model config", "mismatch"))
        }
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.visual_map.tensors();
        v.extend(self.semantic_map.tensors());
        v.extend(self.seen_head.tensors());
        v.extend(self.unseen_head.tensors());
        v.extend(self.embed_head.tensors());
        v.extend(self.regressor.tensors());
        v.push(&self.background);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.visual_map.tensors_mut();
        v.extend(self.semantic_map.tensors_mut());
        v.extend(self.seen_head.tensors_mut());
        v.extend(self.unseen_head.tensors_mut());
        v.extend(self.embed_head.tensors_mut());
        v.extend(self.regressor.tensors_mut());
        v.push(&mut self.background);
        v
    }
}

/// Full class embedding matrix: the current background vector followed by the table rows.
pub fn assemble_class_matrix(table: &SemanticTable, background: &[f64]) -> Result<Matrix> {
    if background.len() != table.dim() {
        return Err(shape_err("assemble_class_matrix", table.dim(), background.len()));
    }
    let mut data = Vec::with_capacity((table.len() + 1) * table.dim());
    data.extend_from_slice(background);
    data.extend_from_slice(table.matrix().data());
    Matrix::from_vec(table.len() + 1, table.dim(), data)
}

/// Builds the `(n_regions * classes.len()) x d` matrix of fused pairs, row `i * k + j`.
fn fuse_pairs(visual: &Matrix, mapped_classes: &Matrix, classes: Range<usize>) -> Matrix {
    let k = classes.len();
    let d = visual.cols();
    let mut out = Matrix::zeros(visual.rows() * k, d);
    for i in 0..visual.rows() {
        let p = visual.row(i);
        for (j, c) in classes.clone().enumerate() {
            let a = mapped_classes.row(c);
            out.row_mut(i * k + j)
                .iter_mut()
                .zip(p.iter().zip(a))
                .for_each(|(o, (x, y))| *o = x * y);
        }
    }
    out
}

/// Scatters gradients of fused pairs back onto the visual and class sides.
fn unfuse_pairs(
    d_pairs: &Matrix,
    visual: &Matrix,
    mapped_classes: &Matrix,
    classes: Range<usize>,
    d_visual: &mut Matrix,
    d_classes: &mut Matrix,
) {
    let k = classes.len();
    for i in 0..visual.rows() {
        for (j, c) in classes.clone().enumerate() {
            let g = d_pairs.row(i * k + j);
            for ((dv, gi), a) in d_visual.row_mut(i).iter_mut().zip(g).zip(mapped_classes.row(c)) {
                *dv += gi * a;
            }
            for ((dc, gi), p) in d_classes.row_mut(c).iter_mut().zip(g).zip(visual.row(i)) {
                *dc += gi * p;
            }
        }
    }
}

fn reshape_scores(scores: Matrix, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, scores.into_vec()).expect("one score per region-class pair")
}

fn check_inputs(
    params: &ModelParams,
    config: &ModelConfig,
    features: &Matrix,
    classes: &Matrix,
    vocab: &ClassVocabulary,
) -> Result<()> {
    params.check_dims(config)?;
    if features.cols() != config.region_dim {
        return Err(shape_err("region features", config.region_dim, features.cols()));
    }
    if classes.shape() != (vocab.n_classes(), config.semantic_dim) {
        return Err(shape_err(
            "class matrix",
            format!("{}x{}", vocab.n_classes(), config.semantic_dim),
            format!("{}x{}", classes.rows(), classes.cols()),
        ));
    }
    features.ensure_finite("region features")
}

pub struct TrainCache {
    visual: Matrix,
    mapped_classes: Matrix,
    visual_cache: MlpCache,
    semantic_cache: MlpCache,
    seen_cache: MlpCache,
    unseen_cache: MlpCache,
    embed_cache: MlpCache,
    embed_norms: Vec<f64>,
    regressor_cache: crate::numerics::LayerCache,
}

impl TrainCache {
    /// Hash of every ReLU on/off state visited by the forward pass.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in [
            &self.visual_cache,
            &self.semantic_cache,
            &self.seen_cache,
            &self.unseen_cache,
            &self.embed_cache,
        ] {
            c.hash_relu_pattern(&mut h);
        }
        h.finish()
    }
}

pub struct TrainForwardOutput {
    /// `n_regions x (n_seen + 1)` raw scores over background and seen classes.
    pub seen_logits: Matrix,
    /// `n_regions x n_unseen` sigmoid outputs.
    pub unseen_probs: Matrix,
    /// `n_regions x contrastive_dim`, unit rows.
    pub embeddings: Matrix,
    /// `n_regions x 4` predicted offsets.
    pub offsets: Matrix,
    pub cache: TrainCache,
}

fn normalize_rows(h: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut z = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let n = dot(row, row).sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(ZsdError::NonFinite("contrastive embedding norm"));
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((z, norms))
}

pub fn forward_train(
    params: &ModelParams,
    config: &ModelConfig,
    features: &Matrix,
    classes: &Matrix,
    vocab: &ClassVocabulary,
) -> Result<TrainForwardOutput> {
    check_inputs(params, config, features, classes, vocab)?;
    let n = features.rows();
    let (visual, visual_cache) = params.visual_map.forward(features)?;
    let (mapped_classes, semantic_cache) = params.semantic_map.forward(classes)?;

    let seen_cols = 0..vocab.n_seen() + 1;
    let (seen_scores, seen_cache) = params
        .seen_head
        .forward(&fuse_pairs(&visual, &mapped_classes, seen_cols.clone()))?;
    let seen_logits = reshape_scores(seen_scores, n, seen_cols.len());

    let (unseen_scores, unseen_cache) = params
        .unseen_head
        .forward(&fuse_pairs(&visual, &mapped_classes, vocab.unseen_range()))?;
    let unseen_probs = reshape_scores(unseen_scores, n, vocab.n_unseen());

    let (raw_embed, embed_cache) = params.embed_head.forward(&visual)?;
    let (embeddings, embed_norms) = normalize_rows(&raw_embed)?;
    let (offsets, regressor_cache) = params.regressor.forward(features)?;

    for (m, what) in [
        (&seen_logits, "seen logits"),
        (&unseen_probs, "unseen probabilities"),
        (&offsets, "box offsets"),
    ] {
        m.ensure_finite(what)?;
    }

    Ok(TrainForwardOutput {
        seen_logits,
        unseen_probs,
        embeddings,
        offsets,
        cache: TrainCache {
            visual,
            mapped_classes,
            visual_cache,
            semantic_cache,
            seen_cache,
            unseen_cache,
            embed_cache,
            embed_norms,
            regressor_cache,
        },
    })
}

/// Upstream gradients for each output of [`forward_train`].
pub struct OutputGradients<'a> {
    pub seen_logits: &'a Matrix,
    pub unseen_probs: &'a Matrix,
    pub embeddings: &'a Matrix,
    pub offsets: &'a Matrix,
}

/// Backpropagates output gradients into a gradient-valued [`ModelParams`].
pub fn backward(
    params: &ModelParams,
    out: &TrainForwardOutput,
    grads: OutputGradients<'_>,
    vocab: &ClassVocabulary,
) -> Result<ModelParams> {
    let cache = &out.cache;
    let n = cache.visual.rows();
    let mut d_visual = Matrix::zeros(n, cache.visual.cols());
    let mut d_classes = Matrix::zeros(cache.mapped_classes.rows(), cache.mapped_classes.cols());

    let seen_cols = 0..vocab.n_seen() + 1;
    if grads.seen_logits.shape() != (n, seen_cols.len()) {
        return Err(shape_err("dL/d seen logits", format!("{n}x{}", seen_cols.len()), format!("{:?}", grads.seen_logits.shape())));
    }
    let d_seen = Matrix::from_vec(n * seen_cols.len(), 1, grads.seen_logits.data().to_vec())?;
    let (d_pairs, seen_head) = params.seen_head.backward(&cache.seen_cache, &d_seen)?;
    unfuse_pairs(&d_pairs, &cache.visual, &cache.mapped_classes, seen_cols, &mut d_visual, &mut d_classes);

    if grads.unseen_probs.shape() != (n, vocab.n_unseen()) {
        return Err(shape_err("dL/d unseen probs", format!("{n}x{}", vocab.n_unseen()), format!("{:?}", grads.unseen_probs.shape())));
    }
    let d_unseen = Matrix::from_vec(n * vocab.n_unseen(), 1, grads.unseen_probs.data().to_vec())?;
    let (d_pairs, unseen_head) = params.unseen_head.backward(&cache.unseen_cache, &d_unseen)?;
    unfuse_pairs(&d_pairs, &cache.visual, &cache.mapped_classes, vocab.unseen_range(), &mut d_visual, &mut d_classes);

    // z = h / |h|  =>  dh = (dz - z (z . dz)) / |h|
    let z = &out.embeddings;
    if grads.embeddings.shape() != z.shape() {
        return Err(shape_err("dL/dz", format!("{:?}", z.shape()), format!("{:?}", grads.embeddings.shape())));
    }
    let mut d_raw = grads.embeddings.clone();
    for r in 0..n {
        let proj = dot(z.row(r), grads.embeddings.row(r));
        let inv = 1.0 / cache.embed_norms[r];
        for (d, zv) in d_raw.row_mut(r).iter_mut().zip(z.row(r)) {
            *d = (*d - zv * proj) * inv;
        }
    }
    let (d_vis_embed, embed_head) = params.embed_head.backward(&cache.embed_cache, &d_raw)?;
    d_visual.add_assign(&d_vis_embed)?;

    let (_, visual_map) = params.visual_map.backward(&cache.visual_cache, &d_visual)?;
    let (d_class_input, semantic_map) = params.semantic_map.backward(&cache.semantic_cache, &d_classes)?;
    let (_, regressor) = params.regressor.backward(&cache.regressor_cache, grads.offsets)?;

    Ok(ModelParams {
        visual_map,
        semantic_map,
        seen_head,
        unseen_head,
        embed_head,
        regressor,
        background: d_class_input.row(0).to_vec(),
    })
}

/// Test-time scores for a batch of regions.
#[derive(Debug, Clone)]
pub struct InferenceOutput {
    /// `n_regions x n_classes`, softmax over every class (background, seen, unseen).
    pub seen_probs: Matrix,
    /// `n_regions x n_unseen` sigmoid outputs of the unseen head.
    pub unseen_probs: Matrix,
    pub offsets: Matrix,
}

pub fn forward_infer(
    params: &ModelParams,
    config: &ModelConfig,
    features: &Matrix,
    classes: &Matrix,
    vocab: &ClassVocabulary,
) -> Result<InferenceOutput> {
    check_inputs(params, config, features, classes, vocab)?;
    let n = features.rows();
    let (visual, _) = params.visual_map.forward(features)?;
    let (mapped, _) = params.semantic_map.forward(classes)?;
    let (scores, _) = params
        .seen_head
        .forward(&fuse_pairs(&visual, &mapped, 0..vocab.n_classes()))?;
    let mut seen_probs = reshape_scores(scores, n, vocab.n_classes());
    for r in 0..n {
        let p = softmax(seen_probs.row(r));
        seen_probs.row_mut(r).copy_from_slice(&p);
    }
    let (unseen, _) = params
        .unseen_head
        .forward(&fuse_pairs(&visual, &mapped, vocab.unseen_range()))?;
    let unseen_probs = reshape_scores(unseen, n, vocab.n_unseen());
    let (offsets, _) = params.regressor.forward(features)?;
    seen_probs.ensure_finite("seen probabilities")?;
    unseen_probs.ensure_finite("unseen probabilities")?;
    Ok(InferenceOutput {
        seen_probs,
        unseen_probs,
        offsets,
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub config: ModelConfig,
    pub vocabulary: ClassVocabulary,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(seed: u64, step: u64, config: ModelConfig, vocabulary: ClassVocabulary, params: ModelParams) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            seed,
            step,
            config,
            vocabulary,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates shapes, finiteness and version.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(ZsdError::CheckpointVersion(ck.version));
        }
        let p = &ck.params;
        for mlp in [&p.visual_map, &p.semantic_map, &p.seen_head, &p.unseen_head, &p.embed_head] {
            Mlp::new(mlp.layers.clone())?;
            for l in &mlp.layers {
                validate_layer(l)?;
            }
        }
        validate_layer(&p.regressor)?;
        p.check_dims(&ck.config)?;
        if !p.is_finite() {
            return Err(ZsdError::NonFinite("checkpoint parameters"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn validate_layer(l: &AffineLayer) -> Result<()> {
    let (r, c) = l.weights.shape();
    Matrix::from_vec(r, c, l.weights.data().to_vec())?;
    if l.bias.len() != r {
        return Err(shape_err("checkpoint bias", r, l.bias.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SgdState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(ns: usize, nu: usize) -> (ModelConfig, ClassVocabulary, SemanticTable, ModelParams) {
        let config = ModelConfig {
            region_dim: 6,
            semantic_dim: 4,
            embed_dim: 8,
            head_hidden: 5,
            contrastive_dim: 3,
            ..ModelConfig::default()
        };
        let vocab = ClassVocabulary::new(
            (0..ns).map(|i| format!("s{i}")).collect(),
            (0..nu).map(|i| format!("u{i}")).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..ns + nu)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let table = SemanticTable::from_matrix(Matrix::from_rows(&rows).unwrap(), &vocab.names()[1..]).unwrap();
        let params = ModelParams::init(&config, &table, &vocab, &mut rng).unwrap();
        (config, vocab, table, params)
    }

    fn features(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn class_matrix_layout() {
        let (_, vocab, table, mut params) = setup(1, 1);
        let a = assemble_class_matrix(&table, &params.background).unwrap();
        assert_eq!(a.rows(), vocab.n_classes());
        assert_eq!(a.row(0), params.background.as_slice());
        assert_eq!(a.row(1), table.class_embedding(1));
        assert_eq!(a.row(2), table.class_embedding(2));

        let mut grads = params.zeros_like();
        grads.background.iter_mut().for_each(|g| *g = 1.0);
        SgdState::new(0.5, 0.0).step(&mut params, &grads).unwrap();
        let a2 = assemble_class_matrix(&table, &params.background).unwrap();
        assert_eq!(a2.get(0, 0), a.get(0, 0) - 0.5);
    }

    #[test]
    fn voc_class_matrix_has_21_rows() {
        let vocab = ClassVocabulary::pascal_voc();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        let table = SemanticTable::from_matrix(Matrix::from_rows(&rows).unwrap(), &vocab.names()[1..]).unwrap();
        assert_eq!(assemble_class_matrix(&table, &[0.0, 0.0]).unwrap().rows(), 21);
    }

    #[test]
    fn train_forward_shapes_and_norms() {
        let (config, vocab, table, params) = setup(2, 2);
        let a = assemble_class_matrix(&table, &params.background).unwrap();
        let out = forward_train(&params, &config, &features(1, 6, 1), &a, &vocab).unwrap();
        assert_eq!(out.seen_logits.shape(), (1, 3));
        assert_eq!(out.unseen_probs.shape(), (1, 2));
        assert_eq!(out.offsets.shape(), (1, 4));

        let f = features(9, 6, 2);
        let out = forward_train(&params, &config, &f, &a, &vocab).unwrap();
        for row in out.embeddings.row_iter() {
            assert!((dot(row, row).sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(out.unseen_probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn duplicate_and_permuted_regions() {
        let (config, vocab, table, params) = setup(2, 2);
        let a = assemble_class_matrix(&table, &params.background).unwrap();
        let f = features(4, 6, 3);
        let dup = f.select_rows(&[0, 0, 1]);
        let out = forward_train(&params, &config, &dup, &a, &vocab).unwrap();
        assert_eq!(out.seen_logits.row(0), out.seen_logits.row(1));
        assert_eq!(out.embeddings.row(0), out.embeddings.row(1));

        let perm = [2, 0, 3, 1];
        let base = forward_infer(&params, &config, &f, &a, &vocab).unwrap();
        let moved = forward_infer(&params, &config, &f.select_rows(&perm), &a, &vocab).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(moved.seen_probs.row(k), base.seen_probs.row(p));
            assert_eq!(moved.unseen_probs.row(k), base.unseen_probs.row(p));
            assert_eq!(moved.offsets.row(k), base.offsets.row(p));
        }
    }

    #[test]
    fn inference_outputs_and_consistency_with_training_logits() {
        let (config, vocab, table, params) = setup(2, 3);
        let a = assemble_class_matrix(&table, &params.background).unwrap();
        let f = features(5, 6, 4);
        let inf = forward_infer(&params, &config, &f, &a, &vocab).unwrap();
        assert_eq!(inf.seen_probs.shape(), (5, vocab.n_classes()));
        for row in inf.seen_probs.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(inf.unseen_probs.data().iter().all(|&p| p > 0.0 && p < 1.0));

        // the training logits over background+seen are the leading inference logits
        let tr = forward_train(&params, &config, &f, &a, &vocab).unwrap();
        let (visual, _) = params.visual_map.forward(&f).unwrap();
        let (mapped, _) = params.semantic_map.forward(&a).unwrap();
        let (all, _) = params.seen_head.forward(&fuse_pairs(&visual, &mapped, 0..vocab.n_classes())).unwrap();
        for i in 0..5 {
            for j in 0..=vocab.n_seen() {
                assert_eq!(tr.seen_logits.get(i, j), all.get(i * vocab.n_classes() + j, 0));
            }
        }
        let single = forward_infer(&params, &config, &f.select_rows(&[0]), &a, &vocab).unwrap();
        assert_eq!(single.seen_probs.shape(), (1, vocab.n_classes()));
        assert_eq!(single.unseen_probs.shape(), (1, 3));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (config, vocab, table, params) = setup(2, 2);
        let a = assemble_class_matrix(&table, &params.background).unwrap();
        assert!(forward_train(&params, &config, &features(2, 5, 0), &a, &vocab).is_err());
        let mut f = features(2, 6, 0);
        f.set(0, 0, f64::NAN);
        assert!(matches!(forward_infer(&params, &config, &f, &a, &vocab), Err(ZsdError::NonFinite(_))));
        assert!(assemble_class_matrix(&table, &[0.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (config, vocab, _, params) = setup(2, 2);
        let ck = Checkpoint::new(42, 10, config, vocab, params);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |p: &ModelParams| -> Vec<u64> { p.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&back.params), bits(&ck.params));

        let mut bad = ck.clone();
        bad.version = 99;
        assert!(matches!(Checkpoint::from_json(&bad.to_json().unwrap()), Err(ZsdError::CheckpointVersion(99))));
    }
}
