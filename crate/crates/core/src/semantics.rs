//! Class vocabulary, semantic embedding tables and the seen-to-unseen
//! similarity matrix used as soft supervision for the unseen path.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZsdError};
use crate::numerics::Matrix;

pub const BACKGROUND: &str = "background";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Background,
    Seen,
    Unseen,
}

/// Ordered label space: background at 0, then the seen block, then the unseen block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRecord", into = "VocabularyRecord")]
pub struct ClassVocabulary {
    names: Vec<String>,
    n_seen: usize,
    n_unseen: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRecord {
    seen: Vec<String>,
    unseen: Vec<String>,
}

impl TryFrom<VocabularyRecord> for ClassVocabulary {
    type Error = ZsdError;
    fn try_from(r: VocabularyRecord) -> Result<Self> {
        ClassVocabulary::new(r.seen, r.unseen)
    }
}

impl From<ClassVocabulary> for VocabularyRecord {
    fn from(v: ClassVocabulary) -> Self {
        VocabularyRecord {
            seen: v.seen_names().to_vec(),
            unseen: v.unseen_names().to_vec(),
        }
    }
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(seen: Vec<S>, unseen: Vec<S>) -> Result<Self> {
        let mut names = vec![BACKGROUND.to_string()];
        let n_seen = seen.len();
        let n_unseen = unseen.len();
        names.extend(seen.into_iter().map(Into::into));
        names.extend(unseen.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(ZsdError::InvalidConfig("empty class name".into()));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(ZsdError::DuplicateClass(n.clone()));
            }
        }
        Ok(Self {
            names,
            n_seen,
            n_unseen,
            index,
        })
    }

    /// The 16 seen / 4 unseen split of the 20 PASCAL VOC classes commonly used
    /// for zero-shot detection (car, dog, sofa and train held out).
    pub fn pascal_voc() -> Self {
        const UNSEEN: [&str; 4] = ["car", "dog", "sofa", "train"];
        const ALL: [&str; 20] = [
            "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
            "diningtable", "dog", "horse", "motorbike", "person", "pottedplant", "sheep", "sofa",
            "train", "tvmonitor",
        ];
        let seen: Vec<&str> = ALL.iter().copied().filter(|c| !UNSEEN.contains(c)).collect();
        Self::new(seen, UNSEEN.to_vec()).expect("static names are unique")
    }

    #[inline]
    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    #[inline]
    pub fn n_unseen(&self) -> usize {
        self.n_unseen
    }

    /// `n_seen + n_unseen + 1`.
    #[inline]
    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn n_foreground(&self) -> usize {
        self.n_seen + self.n_unseen
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn seen_names(&self) -> &[String] {
        &self.names[self.seen_range()]
    }

    pub fn unseen_names(&self) -> &[String] {
        &self.names[self.unseen_range()]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Class indices of the seen block.
    pub fn seen_range(&self) -> Range<usize> {
        1..1 + self.n_seen
    }

    /// Class indices of the unseen block.
    pub fn unseen_range(&self) -> Range<usize> {
        1 + self.n_seen..self.names.len()
    }

    pub fn role(&self, class: usize) -> Role {
        if class == 0 {
            Role::Background
        } else if class <= self.n_seen {
            Role::Seen
        } else {
            Role::Unseen
        }
    }

    /// Position of an unseen class inside the unseen block.
    pub fn unseen_offset(&self, class: usize) -> Option<usize> {
        (self.role(class) == Role::Unseen).then(|| class - 1 - self.n_seen)
    }
}

/// Foreground class embeddings, one unit-norm row per class in vocabulary order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTable {
    embeddings: Matrix,
}

impl SemanticTable {
    /// Normalizes each row to unit ℓ2 norm. `names` label rows for error messages.
    pub fn from_matrix(mut embeddings: Matrix, names: &[String]) -> Result<Self> {
        for r in 0..embeddings.rows() {
            let row = embeddings.row_mut(r);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ZsdError::NonFinite("semantic embedding"));
            }
            let n = crate::numerics::matrix_norm(row);
            if n == 0.0 {
                let name = names.get(r).cloned().unwrap_or_else(|| format!("row {r}"));
                return Err(ZsdError::ZeroNorm(name));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Self { embeddings })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn matrix(&self) -> &Matrix {
        &self.embeddings
    }

    /// Embedding of foreground class `class` (vocabulary index, so 1-based).
    pub fn class_embedding(&self, class: usize) -> &[f64] {
        self.embeddings.row(class - 1)
    }

    pub fn check_vocab(&self, vocab: &ClassVocabulary) -> Result<()> {
        if self.len() != vocab.n_foreground() {
            return Err(ZsdError::VocabularyMismatch(format!(
                "table has {} rows, vocabulary has {} foreground classes",
                self.len(),
                vocab.n_foreground()
            )));
        }
        Ok(())
    }

    /// Renders the table as the embedding CSV format, one row per foreground class.
    pub fn to_csv(&self, vocab: &ClassVocabulary) -> Result<String> {
        self.check_vocab(vocab)?;
        let mut out = String::new();
        for (i, row) in self.embeddings.row_iter().enumerate() {
            out.push_str(vocab.name(i + 1));
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Parses `class_name,v1,...,vd` rows (`#` comments and blank lines allowed)
/// and builds a table in vocabulary order. Rows for classes outside the
/// vocabulary are ignored.
pub fn parse_embeddings(text: &str, vocab: &ClassVocabulary) -> Result<SemanticTable> {
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default().trim().to_string();
        let values = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| ZsdError::Parse {
                    line: lineno + 1,
                    message: format!("`{}`: {e}", f.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(ZsdError::Parse {
                line: lineno + 1,
                message: "row has no values".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(ZsdError::DimensionMismatch {
                    class: name,
                    expected: d,
                    found: values.len(),
                })
            }
            _ => {}
        }
        if rows.contains_key(&name) {
            return Err(ZsdError::DuplicateClass(name));
        }
        rows.insert(name, values);
    }
    let fg: Vec<String> = vocab.names()[1..].to_vec();
    let mut ordered = Vec::with_capacity(fg.len());
    for name in &fg {
        match rows.remove(name) {
            Some(v) => ordered.push(v),
            None => return Err(ZsdError::MissingClass(name.clone())),
        }
    }
    SemanticTable::from_matrix(Matrix::from_rows(&ordered)?, &fg)
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &ClassVocabulary) -> Result<SemanticTable> {
    parse_embeddings(&fs::read_to_string(path)?, vocab)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(crate::error::shape_err("cosine_similarity", u.len(), v.len()));
    }
    let nu = crate::numerics::matrix_norm(u);
    let nv = crate::numerics::matrix_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(ZsdError::ZeroNorm("cosine_similarity input".into()));
    }
    let c = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    Ok(c.clamp(-1.0, 1.0))
}

/// `n_classes x n_unseen` distribution over unseen classes for every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    values: Matrix,
}

impl SimilarityMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn row(&self, class: usize) -> &[f64] {
        self.values.row(class)
    }

    pub fn n_unseen(&self) -> usize {
        self.values.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.values.rows()
    }

    /// Wraps a raw matrix, checking only shape. Used by tests and callers
    /// that construct supervision by hand.
    pub fn from_matrix(values: Matrix, vocab: &ClassVocabulary) -> Result<Self> {
        if values.shape() != (vocab.n_classes(), vocab.n_unseen()) {
            return Err(crate::error::shape_err(
                "SimilarityMatrix",
                format!("{}x{}", vocab.n_classes(), vocab.n_unseen()),
                format!("{}x{}", values.rows(), values.cols()),
            ));
        }
        Ok(Self { values })
    }

    pub fn export(&self, vocab: &ClassVocabulary) -> SimilarityExport {
        SimilarityExport {
            unseen_classes: vocab.unseen_names().to_vec(),
            rows: (0..self.n_classes())
                .map(|c| SimilarityRow {
                    class: vocab.name(c).to_string(),
                    role: vocab.role(c),
                    values: self.row(c).to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityExport {
    pub unseen_classes: Vec<String>,
    pub rows: Vec<SimilarityRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub class: String,
    pub role: Role,
    pub values: Vec<f64>,
}

/// Seen rows: softmax over unseen classes of `cos(a_seen, a_unseen) / temperature`.
/// Unseen rows: one-hot at the class itself. Background row: zeros.
pub fn build_similarity_matrix(
    table: &SemanticTable,
    vocab: &ClassVocabulary,
    temperature: f64,
) -> Result<SimilarityMatrix> {
    table.check_vocab(vocab)?;
    if !(temperature > 0.0) {
        return Err(ZsdError::InvalidTemperature(temperature));
    }
    let n_u = vocab.n_unseen();
    let mut s = Matrix::zeros(vocab.n_classes(), n_u);
    for i in vocab.seen_range() {
        let a = table.class_embedding(i);
        let logits = vocab
            .unseen_range()
            .map(|j| cosine_similarity(a, table.class_embedding(j)).map(|c| c / temperature))
            .collect::<Result<Vec<f64>>>()?;
        s.row_mut(i).copy_from_slice(&crate::losses::softmax(&logits));
    }
    for (k, i) in vocab.unseen_range().enumerate() {
        s.set(i, k, 1.0);
    }
    Ok(SimilarityMatrix { values: s })
}
