//! Window-level embeddings.
//!
//! The built-in extractor is statistics pooling: per-column mean and
//! population standard deviation over the analysis window, concatenated.
//! It is deterministic and cheap, which keeps the whole pipeline testable;
//! neural embeddings (x-vector, wav2vec) computed elsewhere are ingested
//! through the same text format this module writes:
//!
//! ```text
//! #DIAR-EMB v1 n=200 shift=1 shift_ms=10 dim=78
//! <center_frame> <v_1> <v_2> ... <v_dim>
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::features::FeatureMatrix;
use crate::par::*;
use crate::{DiarError, Result};

/// One fixed-dimensional vector with its timing anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    /// Frame index (in the original, pre-VAD frame timeline) of the window
    /// center.
    pub center_frame: usize,
}

/// Ordered window embeddings with the geometry that produced them.
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub embeddings: Vec<Embedding>,
    /// Analysis window length in frames.
    pub window_len: usize,
    /// Window shift in frames.
    pub shift: usize,
    /// Frame shift in milliseconds (time scale for `center_frame`).
    pub shift_ms: f64,
    pub dim: usize,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Center time of embedding `i` in seconds.
    pub fn center_time(&self, i: usize) -> f64 {
        self.embeddings[i].center_frame as f64 * self.shift_ms / 1000.0
    }

    fn validate(&self) -> Result<()> {
        for e in &self.embeddings {
            if e.values.len() != self.dim {
                return Err(DiarError::Format {
                    what: "embedding sequence",
                    detail: format!("row has dim {}, expected {}", e.values.len(), self.dim),
                });
            }
        }
        for pair in self.embeddings.windows(2) {
            if pair[1].center_frame <= pair[0].center_frame {
                return Err(DiarError::Format {
                    what: "embedding sequence",
                    detail: format!(
                        "center frames not strictly increasing at {} -> {}",
                        pair[0].center_frame, pair[1].center_frame
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Mean and population standard deviation per column, concatenated.
/// `data` is a row-major window of `data.len() / cols` rows.
pub fn stats_embedding(data: &[f64], cols: usize) -> Result<Vec<f64>> {
    assert!(cols > 0 && data.len() % cols == 0, "window shape");
    let n = data.len() / cols;
    if n < 2 {
        return Err(DiarError::TooShort {
            what: "analysis window",
            needed: 2,
            got: n,
        });
    }
    Ok(stats_pool(data, cols))
}

pub(crate) fn stats_pool(data: &[f64], cols: usize) -> Vec<f64> {
    let n = data.len() / cols;
    let mut mean = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let mut out = mean;
    out.extend(var.into_iter().map(|s| (s / n as f64).sqrt()));
    out
}

/// Extract embeddings from every window of `n` rows, shifted by `shift`.
///
/// `index_map`, when given, translates row indices into original frame
/// indices (the map produced by voiced-frame selection); window centers are
/// reported through it.
pub fn sliding_embeddings(
    feats: &FeatureMatrix,
    n: usize,
    shift: usize,
    index_map: Option<&[usize]>,
) -> Result<EmbeddingSequence> {
    if n < 2 || shift == 0 {
        return Err(DiarError::Config(format!(
            "need window >= 2 frames and shift >= 1, got {n}/{shift}"
        )));
    }
    if feats.rows() < n {
        return Err(DiarError::TooShort {
            what: "feature matrix",
            needed: n,
            got: feats.rows(),
        });
    }
    if let Some(map) = index_map {
        if map.len() != feats.rows() {
            return Err(DiarError::ShapeMismatch {
                what: "index map",
                expected: feats.rows(),
                got: map.len(),
            });
        }
    }
    let count = (feats.rows() - n) / shift + 1;
    let cols = feats.cols();
    let embeddings: Vec<Embedding> = (0..count)
        .maybe_into_par_iter()
        .map(|w| {
            let start = w * shift;
            let center = start + n / 2;
            Embedding {
                values: stats_pool(feats.window(start, n), cols),
                center_frame: index_map.map_or(center, |m| m[center]),
            }
        })
        .collect();
    let seq = EmbeddingSequence {
        embeddings,
        window_len: n,
        shift,
        shift_ms: f64::from(feats.shift_ms),
        dim: 2 * cols,
    };
    seq.validate()?;
    Ok(seq)
}

fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn embeddings_to_string(seq: &EmbeddingSequence) -> String {
    let mut out = format!(
        "#DIAR-EMB v1 n={} shift={} shift_ms={} dim={}\n",
        seq.window_len,
        seq.shift,
        format_float(seq.shift_ms),
        seq.dim
    );
    for e in &seq.embeddings {
        let _ = write!(out, "{}", e.center_frame);
        for v in &e.values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(path: impl AsRef<Path>, seq: &EmbeddingSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, embeddings_to_string(seq)).map_err(|e| DiarError::io(path, e))
}

/// Parse the embedding text format, validating dimensions and timing.
pub fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingSequence> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DiarError::EmptyInput("embedding file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#DIAR-EMB") || fields.next() != Some("v1") {
        return Err(DiarError::Format {
            what: "embedding file",
            detail: format!("{}: bad header {header:?}", origin.display()),
        });
    }
    let mut n = None;
    let mut shift = None;
    let mut shift_ms = None;
    let mut dim = None;
    for field in fields {
        let (key, value) = field.split_once('=').ok_or_else(|| DiarError::Format {
            what: "embedding file",
            detail: format!("{}: bad header field {field:?}", origin.display()),
        })?;
        match key {
            "n" => n = value.parse::<usize>().ok(),
            "shift" => shift = value.parse::<usize>().ok(),
            "shift_ms" => shift_ms = value.parse::<f64>().ok(),
            "dim" => dim = value.parse::<usize>().ok(),
            other => {
                log::warn!("{}: ignoring header field {other:?}", origin.display());
            }
        }
    }
    let missing = |what: &str| DiarError::Format {
        what: "embedding file",
        detail: format!("{}: header missing or bad {what}", origin.display()),
    };
    let dim = dim.ok_or_else(|| missing("dim"))?;
    let window_len = n.ok_or_else(|| missing("n"))?;
    let shift = shift.ok_or_else(|| missing("shift"))?;
    let shift_ms = shift_ms.ok_or_else(|| missing("shift_ms"))?;
    let mut embeddings = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let center: usize = parts.next().unwrap().parse().map_err(|_| DiarError::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            detail: "center frame index is not an integer".into(),
        })?;
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| DiarError::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                detail: "non-numeric embedding value".into(),
            })?;
        if values.len() != dim {
            return Err(DiarError::Format {
                what: "embedding file",
                detail: format!(
                    "{}:{}: row has dim {}, header says {}",
                    origin.display(),
                    lineno + 1,
                    values.len(),
                    dim
                ),
            });
        }
        embeddings.push(Embedding {
            values,
            center_frame: center,
        });
    }
    if embeddings.is_empty() {
        return Err(DiarError::EmptyInput("embedding file"));
    }
    let seq = EmbeddingSequence {
        embeddings,
        window_len,
        shift,
        shift_ms,
        dim,
    };
    seq.validate()?;
    Ok(seq)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DiarError::io(path, e))?;
    parse_embeddings(&text, path)
}
