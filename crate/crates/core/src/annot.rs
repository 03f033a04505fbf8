//! Timed label annotations and RTTM serialization.
//!
//! An [`Annotation`] is the exchange value of the whole toolkit: the
//! generator writes reference annotations, the diarization pipelines emit
//! hypothesis annotations, and the scorer consumes both. On disk they are
//! NIST-style RTTM: one `SPEAKER` line per turn,
//!
//! ```text
//! SPEAKER <file> <chan> <onset> <dur> <NA> <NA> <label> <NA> <NA>
//! ```
//!
//! with onset/duration in decimal seconds. Times are quantized to 1 ms on
//! write, so `write -> parse -> write` is byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{DiarError, Result};

/// Reserved label for non-speech regions. Carried through annotations but
/// excluded from the speech-label set by the scoring module.
pub const SILENCE_LABEL: &str = "sil";

/// A single labeled time segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

impl Turn {
    pub fn new(onset: f64, duration: f64, label: impl Into<String>) -> Result<Self> {
        if !onset.is_finite() || onset < 0.0 {
            return Err(DiarError::Format {
                what: "turn",
                detail: format!("onset {onset} must be finite and non-negative"),
            });
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(DiarError::Format {
                what: "turn",
                detail: format!("duration {duration} must be positive"),
            });
        }
        Ok(Turn {
            onset,
            duration,
            label: label.into(),
        })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn is_speech(&self) -> bool {
        self.label != SILENCE_LABEL
    }
}

/// Ordered list of labeled turns for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    utterance_id: String,
    turns: Vec<Turn>,
}

impl Annotation {
    /// Build from unordered turns. Sorts by onset and rejects overlapping
    /// turns that share a label.
    pub fn from_turns(utterance_id: impl Into<String>, mut turns: Vec<Turn>) -> Result<Self> {
        turns.sort_by(|a, b| {
            a.onset
                .total_cmp(&b.onset)
                .then_with(|| a.label.cmp(&b.label))
        });
        let mut last_end: BTreeMap<&str, f64> = BTreeMap::new();
        for turn in &turns {
            if let Some(&end) = last_end.get(turn.label.as_str()) {
                if turn.onset < end - 1e-9 {
                    return Err(DiarError::Format {
                        what: "annotation",
                        detail: format!(
                            "turns with label {:?} overlap at {:.3}s",
                            turn.label, turn.onset
                        ),
                    });
                }
            }
            let entry = last_end.entry(turn.label.as_str()).or_insert(0.0);
            *entry = entry.max(turn.end());
        }
        Ok(Annotation {
            utterance_id: utterance_id.into(),
            turns,
        })
    }

    pub fn empty(utterance_id: impl Into<String>) -> Self {
        Annotation {
            utterance_id: utterance_id.into(),
            turns: Vec::new(),
        }
    }

    /// Run-length encode per-frame labels into turns. Frame `i` nominally
    /// covers `[i*shift_ms, (i+1)*shift_ms)`; the final run is extended to
    /// `total_duration` so the annotation tiles the utterance exactly.
    pub fn from_frame_labels<S: AsRef<str>>(
        utterance_id: impl Into<String>,
        labels: &[S],
        shift_ms: u32,
        total_duration: f64,
    ) -> Result<Self> {
        let mut turns = Vec::new();
        let step = f64::from(shift_ms) / 1000.0;
        let mut run_start = 0usize;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i].as_ref() != labels[run_start].as_ref() {
                let onset = run_start as f64 * step;
                let end = if i == labels.len() {
                    total_duration.max(i as f64 * step)
                } else {
                    i as f64 * step
                };
                turns.push(Turn::new(onset, end - onset, labels[run_start].as_ref())?);
                run_start = i;
            }
        }
        Annotation::from_turns(utterance_id, turns)
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn speech_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.is_speech())
    }

    /// End time of the last turn (0 when empty).
    pub fn end(&self) -> f64 {
        self.turns.iter().map(Turn::end).fold(0.0, f64::max)
    }

    /// Distinct non-silence labels, sorted.
    pub fn speech_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self
            .speech_turns()
            .map(|t| t.label.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        labels.sort_unstable();
        labels
    }

    pub fn total_speech(&self) -> f64 {
        self.speech_turns().map(|t| t.duration).sum()
    }
}

/// Seconds formatted with 1 ms resolution, rounding half up.
pub(crate) fn format_seconds(x: f64) -> String {
    let mills = (x * 1000.0 + 0.5).floor() as i64;
    format!("{}.{:03}", mills / 1000, mills % 1000)
}

/// Serialize annotations as RTTM text, sorted by (utterance, onset).
pub fn rttm_to_string<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> String {
    let mut sorted: Vec<&Annotation> = annotations.into_iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let mut out = String::new();
    for ann in sorted {
        for turn in &ann.turns {
            let _ = writeln!(
                out,
                "SPEAKER {} 1 {} {} <NA> <NA> {} <NA> <NA>",
                ann.utterance_id,
                format_seconds(turn.onset),
                format_seconds(turn.duration),
                turn.label
            );
        }
    }
    out
}

pub fn write_rttm<'a>(
    path: impl AsRef<Path>,
    annotations: impl IntoIterator<Item = &'a Annotation>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, rttm_to_string(annotations)).map_err(|e| DiarError::io(path, e))
}

/// Parse RTTM text into one annotation per file id.
///
/// Only `SPEAKER` records are used; other record types are skipped with a
/// warning. Accepts any whitespace as the field separator.
pub fn parse_rttm_str(text: &str, origin: &Path) -> Result<BTreeMap<String, Annotation>> {
    let mut turns_by_utt: BTreeMap<String, Vec<Turn>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            log::warn!(
                "{}:{}: ignoring record type {:?}",
                origin.display(),
                lineno,
                fields[0]
            );
            continue;
        }
        if fields.len() != 10 {
            return Err(DiarError::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                detail: format!("expected 10 fields in SPEAKER record, got {}", fields.len()),
            });
        }
        let onset: f64 = fields[3].parse().map_err(|_| DiarError::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            detail: format!("onset {:?} is not a number", fields[3]),
        })?;
        let duration: f64 = fields[4].parse().map_err(|_| DiarError::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            detail: format!("duration {:?} is not a number", fields[4]),
        })?;
        if duration <= 0.0 {
            return Err(DiarError::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                detail: format!("duration {duration} must be positive"),
            });
        }
        let turn = Turn::new(onset, duration, fields[7]).map_err(|e| DiarError::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            detail: e.to_string(),
        })?;
        turns_by_utt.entry(fields[1].to_string()).or_default().push(turn);
    }
    turns_by_utt
        .into_iter()
        .map(|(utt, turns)| Ok((utt.clone(), Annotation::from_turns(utt, turns)?)))
        .collect()
}

pub fn parse_rttm(path: impl AsRef<Path>) -> Result<BTreeMap<String, Annotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DiarError::io(path, e))?;
    parse_rttm_str(&text, path)
}
