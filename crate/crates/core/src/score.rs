//! Pairwise embedding scoring.
//!
//! [`PldaModel`] is a two-covariance PLDA: an embedding is a class center
//! drawn from `N(mu, B)` plus within-class noise from `N(0, W)`. Training
//! is closed-form moment estimation (no EM), so it is deterministic.
//! [`PldaScorer::score`] returns the log-likelihood ratio of the same-class
//! hypothesis (joint cross-covariance `B`) against the different-class
//! hypothesis (cross-covariance `0`); higher means more similar.
//!
//! [`CosineScorer`] is the model-free fallback used when no PLDA model has
//! been trained.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{DiarError, Result};

/// Anything that turns two embeddings into a similarity (higher = closer).
pub trait Scorer: Sync {
    fn score(&self, a: &[f64], b: &[f64]) -> Result<f64>;
}

/// Cosine of the angle between two vectors, in `[-1, 1]`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DiarError::ShapeMismatch {
            what: "cosine arguments",
            expected: a.len(),
            got: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(DiarError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CosineScorer;

impl Scorer for CosineScorer {
    fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        cosine_score(a, b)
    }
}

/// Scale a vector to unit Euclidean norm. Zero vectors are left untouched.
pub fn length_normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Two-covariance PLDA parameters.
#[derive(Debug, Clone)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
}

impl PldaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Closed-form moment estimation of a [`PldaModel`].
///
/// `within` is the pooled within-class covariance, `between` the covariance
/// of the class means around the global mean. Both get a ridge of
/// `1e-6 * trace(total)/dim` so degenerate data still produces an
/// invertible model; when there are fewer samples than dimensions the
/// ridge is strengthened by 1000x.
pub fn train_plda(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<PldaModel> {
    if embeddings.is_empty() {
        return Err(DiarError::EmptyInput("training embeddings"));
    }
    if embeddings.len() != labels.len() {
        return Err(DiarError::ShapeMismatch {
            what: "training labels",
            expected: embeddings.len(),
            got: labels.len(),
        });
    }
    let dim = embeddings[0].len();
    for e in embeddings {
        if e.len() != dim {
            return Err(DiarError::ShapeMismatch {
                what: "training embedding",
                expected: dim,
                got: e.len(),
            });
        }
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<&Vec<f64>>> = Default::default();
    for (e, &l) in embeddings.iter().zip(labels) {
        by_class.entry(l).or_default().push(e);
    }
    if by_class.len() < 2 {
        return Err(DiarError::Config(format!(
            "PLDA training needs at least 2 classes, got {}",
            by_class.len()
        )));
    }
    for (label, members) in &by_class {
        if members.len() < 2 {
            return Err(DiarError::DegenerateClass(label.to_string()));
        }
    }

    let n = embeddings.len() as f64;
    let mut mean = DVector::zeros(dim);
    for e in embeddings {
        mean += DVector::from_column_slice(e);
    }
    mean /= n;

    let mut within = DMatrix::zeros(dim, dim);
    let mut between = DMatrix::zeros(dim, dim);
    for members in by_class.values() {
        let mut class_mean = DVector::zeros(dim);
        for e in members.iter() {
            class_mean += DVector::from_column_slice(e);
        }
        class_mean /= members.len() as f64;
        for e in members.iter() {
            let d = DVector::from_column_slice(e) - &class_mean;
            within += &d * d.transpose();
        }
        let d = &class_mean - &mean;
        between += &d * d.transpose();
    }
    within /= n;
    between /= by_class.len() as f64;

    let mut ridge = 1e-6 * ((within.trace() + between.trace()) / dim as f64).max(1e-12);
    if dim > embeddings.len() {
        log::warn!(
            "PLDA: {dim} dimensions but only {} samples; strengthening ridge",
            embeddings.len()
        );
        ridge *= 1e3;
    }
    for i in 0..dim {
        within[(i, i)] += ridge;
        between[(i, i)] += ridge;
    }
    Ok(PldaModel {
        mean,
        between,
        within,
    })
}

/// Precomputed factorizations for repeated PLDA scoring.
pub struct PldaScorer {
    mean: DVector<f64>,
    chol_total: Cholesky<f64, Dyn>,
    chol_total_plus_b: Cholesky<f64, Dyn>,
    chol_within: Cholesky<f64, Dyn>,
    /// `2 logdet(T) - logdet(T+B) - logdet(W)` with `T = B + W`.
    logdet_term: f64,
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| DiarError::Config(format!("{what} is not positive definite")))
}

fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let total = &model.between + &model.within;
        let total_plus_b = &total + &model.between;
        let chol_total = cholesky(total, "PLDA total covariance")?;
        let chol_total_plus_b = cholesky(total_plus_b, "PLDA same-class covariance")?;
        let chol_within = cholesky(model.within.clone(), "PLDA within-class covariance")?;
        let logdet_term =
            2.0 * logdet(&chol_total) - logdet(&chol_total_plus_b) - logdet(&chol_within);
        Ok(PldaScorer {
            mean: model.mean.clone(),
            chol_total,
            chol_total_plus_b,
            chol_within,
            logdet_term,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn quad(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    v.dot(&chol.solve(v))
}

impl Scorer for PldaScorer {
    /// Same-class vs different-class log-likelihood ratio for `(a, b)`.
    ///
    /// Evaluated through the sum/difference decomposition of the joint
    /// covariance: with `u = a + b` and `v = a - b` (both centered), the
    /// same-class quadratic form splits over `T + B` and `W`. Swapping the
    /// arguments flips the sign of `v` only, so the score is symmetric.
    fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.dim() || b.len() != self.dim() {
            return Err(DiarError::ShapeMismatch {
                what: "plda arguments",
                expected: self.dim(),
                got: if a.len() != self.dim() { a.len() } else { b.len() },
            });
        }
        let ca = DVector::from_column_slice(a) - &self.mean;
        let cb = DVector::from_column_slice(b) - &self.mean;
        let q_diff = quad(&self.chol_total, &ca) + quad(&self.chol_total, &cb);
        let sum = &ca + &cb;
        let diff = &ca - &cb;
        let q_same =
            0.5 * quad(&self.chol_total_plus_b, &sum) + 0.5 * quad(&self.chol_within, &diff);
        Ok(0.5 * (q_diff - q_same) + 0.5 * self.logdet_term)
    }
}

const PLDA_MAGIC: &[u8; 10] = b"DIAR-PLDA1";

/// Serialize a model: magic, `u32` dim, then `mean`, `between`, `within`
/// row-major as little-endian `f64`.
pub fn save_plda(path: impl AsRef<Path>, model: &PldaModel) -> Result<()> {
    let path = path.as_ref();
    let dim = model.dim();
    let mut bytes = Vec::with_capacity(10 + 4 + 8 * (dim + 2 * dim * dim));
    bytes.extend_from_slice(PLDA_MAGIC);
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in model.mean.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for m in [&model.between, &model.within] {
        for i in 0..dim {
            for j in 0..dim {
                bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| DiarError::io(path, e))
}

pub fn load_plda(path: impl AsRef<Path>) -> Result<PldaModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DiarError::io(path, e))?;
    let bad = |detail: String| DiarError::Format {
        what: "plda model",
        detail: format!("{}: {detail}", path.display()),
    };
    if bytes.len() < 14 || &bytes[..10] != PLDA_MAGIC {
        return Err(bad("missing DIAR-PLDA1 magic".into()));
    }
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = 14 + 8 * (dim + 2 * dim * dim);
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for dim {dim}, got {}",
            bytes.len()
        )));
    }
    let mut floats = bytes[14..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mean = DVector::from_iterator(dim, floats.by_ref().take(dim));
    let mut read_matrix = || {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = floats.next().unwrap();
            }
        }
        m
    };
    let between = read_matrix();
    let within = read_matrix();
    for (name, m) in [("between", &between), ("within", &within)] {
        let scale = 1.0 + m.amax();
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                    return Err(bad(format!("{name} covariance is not symmetric")));
                }
            }
        }
    }
    Ok(PldaModel {
        mean,
        between,
        within,
    })
}
