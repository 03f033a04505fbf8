//! Diarization pipelines.
//!
//! All three routes end in an [`Annotation`] that tiles the utterance:
//! voiced regions carry cluster labels (`L0`, `L1`, ...) and unvoiced gaps
//! come out as `sil` turns.
//!
//! * [`changepoint_diarize`]: detect change points, embed the span around
//!   each inter-change segment midpoint, cluster those embeddings.
//! * [`uniform_diarize`]: embed fixed windows, cluster them, and give every
//!   voiced frame the label of the nearest window center. No temporal
//!   smoothing is applied, so isolated window flips show up as short spikes.
//! * [`labels_to_annotation`]: convert an externally produced per-step
//!   label sequence into turns.

use std::path::Path;

use crate::annot::{Annotation, SILENCE_LABEL};
use crate::audio::AudioBuffer;
use crate::changepoint::{detect_change_frames, ChangePointParams};
use crate::embed::{sliding_embeddings, stats_pool, EmbeddingSequence};
use crate::features::{add_deltas, mfcc, select_voiced, FeatureMatrix, MfccConfig};
use crate::par::*;
use crate::score::Scorer;
use crate::vad::{energy_vad, short_term_energy};
use crate::{audio, DiarError, Result};

/// Cluster id per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub num_clusters: usize,
}

/// Average-linkage agglomerative clustering on a similarity matrix.
///
/// Starts from singletons and repeatedly merges the pair of clusters with
/// the highest average pairwise similarity until `k` clusters remain. Ties
/// break toward the smallest `(i, j)`. Cluster ids are assigned in order of
/// first appearance, so item 0 is always in cluster 0.
pub fn ahc(similarity: &[Vec<f64>], k: usize) -> Result<ClusterAssignment> {
    let n = similarity.len();
    if k == 0 || n < k {
        return Err(DiarError::TooFewItems { n, k });
    }
    for (i, row) in similarity.iter().enumerate() {
        if row.len() != n {
            return Err(DiarError::ShapeMismatch {
                what: "similarity matrix row",
                expected: n,
                got: row.len(),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(DiarError::Config(format!(
                    "similarity({i},{j}) is not finite"
                )));
            }
            if (v - similarity[j][i]).abs() > 1e-9 {
                return Err(DiarError::Config(format!(
                    "similarity matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    // Lance-Williams update for average linkage: merged similarities are
    // size-weighted means, so entry (a,b) always equals the average
    // pairwise similarity between members of a and b.
    let mut sim: Vec<Vec<f64>> = similarity.to_vec();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut member_of: Vec<usize> = (0..n).collect();

    while active.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let s = sim[a][b];
                if best.map_or(true, |(bs, _, _)| s > bs) {
                    best = Some((s, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two active clusters");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &c in &active {
            if c != a && c != b {
                let merged = (na * sim[a][c] + nb * sim[b][c]) / (na + nb);
                sim[a][c] = merged;
                sim[c][a] = merged;
            }
        }
        size[a] += size[b];
        active.retain(|&c| c != b);
        for m in member_of.iter_mut() {
            if *m == b {
                *m = a;
            }
        }
    }

    let mut id_of = std::collections::HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for &m in &member_of {
        let next = id_of.len();
        labels.push(*id_of.entry(m).or_insert(next));
    }
    Ok(ClusterAssignment {
        labels,
        num_clusters: active.len(),
    })
}

/// Pairwise similarity matrix with zero diagonal.
pub fn pairwise_similarity(vectors: &[Vec<f64>], scorer: &dyn Scorer) -> Result<Vec<Vec<f64>>> {
    let n = vectors.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .maybe_into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for j in (i + 1)..n {
                row[j] = scorer.score(&vectors[i], &vectors[j])?;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut matrix = rows;
    for i in 0..n {
        for j in 0..i {
            matrix[i][j] = matrix[j][i];
        }
    }
    Ok(matrix)
}

/// Shared front-end and output settings for the audio pipelines.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub frame_len_ms: u32,
    pub shift_ms: u32,
    pub vad_ratio: f64,
    pub mfcc: MfccConfig,
    pub params: ChangePointParams,
    /// Window shift (frames) for the fixed-window pipeline.
    pub window_shift: usize,
    pub num_clusters: usize,
}

impl PipelineConfig {
    pub fn language_defaults() -> Self {
        let params = ChangePointParams::language_defaults();
        PipelineConfig {
            frame_len_ms: 20,
            shift_ms: 10,
            vad_ratio: crate::vad::DEFAULT_VAD_RATIO,
            mfcc: MfccConfig::default(),
            window_shift: (params.window_len / 4).max(1),
            params,
            num_clusters: 2,
        }
    }

    pub fn speaker_defaults() -> Self {
        let params = ChangePointParams::speaker_defaults();
        PipelineConfig {
            frame_len_ms: 20,
            shift_ms: 10,
            vad_ratio: crate::vad::DEFAULT_VAD_RATIO,
            mfcc: MfccConfig::default(),
            window_shift: (params.window_len / 4).max(1),
            params,
            num_clusters: 2,
        }
    }
}

struct FrontEnd {
    voiced: FeatureMatrix,
    index_map: Vec<usize>,
    num_frames: usize,
}

fn front_end(audio: &AudioBuffer, cfg: &PipelineConfig) -> Result<FrontEnd> {
    let frames = audio::frame_signal(audio, cfg.frame_len_ms, cfg.shift_ms)?;
    let energy = short_term_energy(&frames)?;
    let mask = energy_vad(&energy, cfg.vad_ratio, cfg.shift_ms)?;
    let feats = add_deltas(&mfcc(&frames, &cfg.mfcc)?, cfg.mfcc.delta_window)?;
    let (voiced, index_map) = select_voiced(&feats, &mask)?;
    Ok(FrontEnd {
        voiced,
        index_map,
        num_frames: frames.num_frames(),
    })
}

fn assignment_to_annotation(
    audio: &AudioBuffer,
    cfg: &PipelineConfig,
    num_frames: usize,
    voiced_labels: &[(usize, usize)], // (original frame index, cluster id)
) -> Result<Annotation> {
    let mut frame_labels = vec![SILENCE_LABEL.to_string(); num_frames];
    for &(frame, cluster) in voiced_labels {
        frame_labels[frame] = format!("L{cluster}");
    }
    Annotation::from_frame_labels(&audio.id, &frame_labels, cfg.shift_ms, audio.duration())
}

fn silence_only(audio: &AudioBuffer) -> Result<Annotation> {
    log::warn!("{}: no voiced frames, emitting silence-only annotation", audio.id);
    Annotation::from_turns(
        &audio.id,
        vec![crate::annot::Turn::new(
            0.0,
            audio.duration(),
            SILENCE_LABEL,
        )?],
    )
}

/// Embedding of a whole segment: `n` rows centered on the segment midpoint,
/// clamped to the segment; the whole segment when it is shorter than `n`.
/// One-row segments pool to [row; zeros].
fn segment_embedding(feats: &FeatureMatrix, start: usize, end: usize, n: usize) -> Vec<f64> {
    let len = end - start;
    let (lo, hi) = if len <= n {
        (start, end)
    } else {
        let mid = start + len / 2;
        let lo = mid.saturating_sub(n / 2).max(start);
        (lo, (lo + n).min(end))
    };
    if hi - lo == 1 {
        let mut v = feats.row(lo).to_vec();
        v.extend(std::iter::repeat(0.0).take(feats.cols()));
        return v;
    }
    stats_pool(feats.window(lo, hi - lo), feats.cols())
}

/// Change-point pipeline: VAD, MFCC, change detection, one embedding per
/// inter-change segment, AHC down to `num_clusters`.
pub fn changepoint_diarize(
    audio: &AudioBuffer,
    cfg: &PipelineConfig,
    scorer: &dyn Scorer,
) -> Result<Annotation> {
    let fe = front_end(audio, cfg)?;
    if fe.voiced.rows() == 0 {
        return silence_only(audio);
    }

    // Detection needs at least two sliding windows; anything shorter is a
    // single segment by construction.
    let change_rows: Vec<usize> = if fe.voiced.rows() > cfg.params.window_len {
        match detect_change_frames(&fe.voiced, None, &cfg.params, scorer) {
            Ok(rows) => rows,
            Err(DiarError::WindowTooLong { .. }) => Vec::new(),
            Err(e) => return Err(e),
        }
    } else {
        Vec::new()
    };

    let mut bounds = vec![0usize];
    bounds.extend(change_rows.iter().copied());
    bounds.push(fe.voiced.rows());
    let segments: Vec<(usize, usize)> = bounds
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[0], w[1]))
        .collect();

    let embeddings: Vec<Vec<f64>> = segments
        .iter()
        .map(|&(s, e)| segment_embedding(&fe.voiced, s, e, cfg.params.window_len))
        .collect();
    let k = cfg.num_clusters.min(segments.len());
    let assignment = ahc(&pairwise_similarity(&embeddings, scorer)?, k)?;

    let mut voiced_labels = Vec::with_capacity(fe.voiced.rows());
    for (seg_idx, &(s, e)) in segments.iter().enumerate() {
        for row in s..e {
            voiced_labels.push((fe.index_map[row], assignment.labels[seg_idx]));
        }
    }
    assignment_to_annotation(audio, cfg, fe.num_frames, &voiced_labels)
}

/// Fixed-window pipeline: embed sliding windows over the voiced frames,
/// cluster all windows, and label every voiced frame by its nearest window
/// center (earlier window on ties).
pub fn uniform_diarize(
    audio: &AudioBuffer,
    cfg: &PipelineConfig,
    scorer: &dyn Scorer,
) -> Result<Annotation> {
    let fe = front_end(audio, cfg)?;
    if fe.voiced.rows() == 0 {
        return silence_only(audio);
    }

    let n = cfg.params.window_len;
    // Window centers in voiced-row space.
    let (vectors, centers): (Vec<Vec<f64>>, Vec<usize>) = if fe.voiced.rows() < n {
        // One window covering everything that is there.
        let rows = fe.voiced.rows();
        (
            vec![segment_embedding(&fe.voiced, 0, rows, rows)],
            vec![rows / 2],
        )
    } else {
        let seq: EmbeddingSequence =
            sliding_embeddings(&fe.voiced, n, cfg.window_shift.max(1), None)?;
        let centers = seq.embeddings.iter().map(|e| e.center_frame).collect();
        (
            seq.embeddings.into_iter().map(|e| e.values).collect(),
            centers,
        )
    };

    let k = cfg.num_clusters.min(vectors.len());
    let assignment = ahc(&pairwise_similarity(&vectors, scorer)?, k)?;

    let mut voiced_labels = Vec::with_capacity(fe.voiced.rows());
    for row in 0..fe.voiced.rows() {
        // Nearest center; centers are sorted so scan with partition_point.
        let pos = centers.partition_point(|&c| c < row);
        let cluster = if pos == 0 {
            assignment.labels[0]
        } else if pos == centers.len() {
            assignment.labels[pos - 1]
        } else {
            let before = row - centers[pos - 1];
            let after = centers[pos] - row;
            if before <= after {
                assignment.labels[pos - 1]
            } else {
                assignment.labels[pos]
            }
        };
        voiced_labels.push((fe.index_map[row], cluster));
    }
    assignment_to_annotation(audio, cfg, fe.num_frames, &voiced_labels)
}

/// Per-step class labels from an end-to-end model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelClass {
    Primary,
    Secondary,
    Silence,
}

impl LabelClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelClass::Primary => "P",
            LabelClass::Secondary => "S",
            LabelClass::Silence => SILENCE_LABEL,
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "P" => Some(LabelClass::Primary),
            "S" => Some(LabelClass::Secondary),
            "sil" => Some(LabelClass::Silence),
            _ => None,
        }
    }
}

/// A label per fixed-duration step.
#[derive(Debug, Clone)]
pub struct LabelSequence {
    pub labels: Vec<LabelClass>,
    pub step_ms: u32,
}

/// Default step for end-to-end label sequences.
pub const DEFAULT_LABEL_STEP_MS: u32 = 200;

/// Collapse maximal runs of equal labels into turns.
pub fn labels_to_annotation(seq: &LabelSequence, utterance_id: &str) -> Result<Annotation> {
    if seq.labels.is_empty() {
        return Err(DiarError::EmptyInput("label sequence"));
    }
    if seq.step_ms == 0 {
        return Err(DiarError::Config("label step must be positive".into()));
    }
    let strings: Vec<&str> = seq.labels.iter().map(|l| l.as_str()).collect();
    let total = seq.labels.len() as f64 * f64::from(seq.step_ms) / 1000.0;
    Annotation::from_frame_labels(utterance_id, &strings, seq.step_ms, total)
}

/// Sample an annotation back into per-step labels (inverse of
/// [`labels_to_annotation`] for step-aligned annotations). Labels other
/// than `P`, `S` and `sil` are rejected; uncovered time reads as silence.
pub fn annotation_to_labels(annotation: &Annotation, step_ms: u32) -> Result<LabelSequence> {
    if step_ms == 0 {
        return Err(DiarError::Config("label step must be positive".into()));
    }
    let step = f64::from(step_ms) / 1000.0;
    let steps = (annotation.end() / step).round() as usize;
    let mut labels = vec![LabelClass::Silence; steps];
    for turn in annotation.turns() {
        let class = LabelClass::parse(&turn.label).ok_or_else(|| DiarError::Format {
            what: "label sequence",
            detail: format!("label {:?} is not one of P/S/sil", turn.label),
        })?;
        let first = (turn.onset / step).round() as usize;
        let last = (turn.end() / step).round() as usize;
        for l in labels.iter_mut().take(last.min(steps)).skip(first) {
            *l = class;
        }
    }
    Ok(LabelSequence { labels, step_ms })
}

/// Read the label file format: header `#DIAR-LAB v1 step_ms=<ms>`, then one
/// `P`/`S`/`sil` token per line.
pub fn parse_label_file(text: &str, origin: &Path) -> Result<LabelSequence> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DiarError::EmptyInput("label file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#DIAR-LAB") || fields.next() != Some("v1") {
        return Err(DiarError::Format {
            what: "label file",
            detail: format!("{}: bad header {header:?}", origin.display()),
        });
    }
    let mut step_ms = None;
    for field in fields {
        if let Some(value) = field.strip_prefix("step_ms=") {
            step_ms = value.parse::<u32>().ok();
        }
    }
    let step_ms = step_ms.ok_or_else(|| DiarError::Format {
        what: "label file",
        detail: format!("{}: header missing step_ms", origin.display()),
    })?;
    let mut labels = Vec::new();
    for (lineno, line) in lines {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let class = LabelClass::parse(token).ok_or_else(|| DiarError::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            detail: format!("unknown label {token:?} (expected P, S or sil)"),
        })?;
        labels.push(class);
    }
    if labels.is_empty() {
        return Err(DiarError::EmptyInput("label file"));
    }
    Ok(LabelSequence { labels, step_ms })
}

pub fn load_label_file(path: impl AsRef<Path>) -> Result<LabelSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DiarError::io(path, e))?;
    parse_label_file(&text, path)
}

pub fn label_file_to_string(seq: &LabelSequence) -> String {
    let mut out = format!("#DIAR-LAB v1 step_ms={}\n", seq.step_ms);
    for l in &seq.labels {
        out.push_str(l.as_str());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::CosineScorer;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn block_matrix() -> Vec<Vec<f64>> {
        // Items {0,1} vs {2,3}: within 0.9, across 0.1.
        let mut m = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    m[i][j] = if (i < 2) == (j < 2) { 0.9 } else { 0.1 };
                }
            }
        }
        m
    }

    #[test]
    fn ahc_groups_the_obvious_blocks() {
        let a = ahc(&block_matrix(), 2).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1]);
        assert_eq!(a.num_clusters, 2);
    }

    #[test]
    fn ahc_with_k_equals_n_keeps_singletons() {
        let a = ahc(&block_matrix(), 4).unwrap();
        assert_eq!(a.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ahc_merges_the_strongest_pair_first() {
        let m = vec![
            vec![0.0, 0.9, 0.2],
            vec![0.9, 0.0, 0.1],
            vec![0.2, 0.1, 0.0],
        ];
        let a = ahc(&m, 2).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1]);
    }

    #[test]
    fn ahc_merge_count_is_n_minus_k() {
        // Indirectly: every k from n down to 1 is reachable.
        let m = block_matrix();
        for k in 1..=4 {
            let a = ahc(&m, k).unwrap();
            assert_eq!(a.num_clusters, k);
            let max = a.labels.iter().copied().max().unwrap();
            assert_eq!(max + 1, k);
        }
    }

    #[test]
    fn ahc_rejects_too_few_items() {
        assert!(matches!(
            ahc(&block_matrix(), 5),
            Err(DiarError::TooFewItems { .. })
        ));
    }

    #[test]
    fn ahc_rejects_asymmetry() {
        let mut m = block_matrix();
        m[0][1] = 0.5;
        assert!(matches!(ahc(&m, 2), Err(DiarError::Config(_))));
    }

    #[test]
    fn pairwise_similarity_is_symmetric_with_zero_diagonal() {
        let vectors = vec![vec![1.0, 0.0], vec![0.8, 0.2], vec![0.0, 1.0]];
        let m = pairwise_similarity(&vectors, &CosineScorer).unwrap();
        for i in 0..3 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn labels_to_annotation_collapses_runs() {
        let seq = LabelSequence {
            labels: vec![
                LabelClass::Primary,
                LabelClass::Primary,
                LabelClass::Secondary,
                LabelClass::Secondary,
            ],
            step_ms: 200,
        };
        let ann = labels_to_annotation(&seq, "u").unwrap();
        assert_eq!(ann.turns().len(), 2);
        assert_eq!(ann.turns()[0].label, "P");
        assert!((ann.turns()[0].duration - 0.4).abs() < 1e-12);
        assert!((ann.turns()[1].onset - 0.4).abs() < 1e-12);
    }

    #[test]
    fn all_silence_sequence_is_one_sil_turn() {
        let seq = LabelSequence {
            labels: vec![LabelClass::Silence; 5],
            step_ms: 200,
        };
        let ann = labels_to_annotation(&seq, "u").unwrap();
        assert_eq!(ann.turns().len(), 1);
        assert_eq!(ann.turns()[0].label, SILENCE_LABEL);
    }

    #[test]
    fn single_step_sequence() {
        let seq = LabelSequence {
            labels: vec![LabelClass::Primary],
            step_ms: 200,
        };
        let ann = labels_to_annotation(&seq, "u").unwrap();
        assert_eq!(ann.turns().len(), 1);
        assert!((ann.turns()[0].duration - 0.2).abs() < 1e-12);
    }

    #[test]
    fn label_file_round_trips() {
        let seq = LabelSequence {
            labels: vec![
                LabelClass::Primary,
                LabelClass::Silence,
                LabelClass::Secondary,
            ],
            step_ms: 200,
        };
        let text = label_file_to_string(&seq);
        let back = parse_label_file(&text, &PathBuf::from("x.lab")).unwrap();
        assert_eq!(back.labels, seq.labels);
        assert_eq!(back.step_ms, 200);
    }

    #[test]
    fn unknown_label_token_is_rejected() {
        let text = "#DIAR-LAB v1 step_ms=200\nP\nQ\n";
        assert!(matches!(
            parse_label_file(text, &PathBuf::from("x.lab")),
            Err(DiarError::Parse { line: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn label_round_trip_is_identity(
            labels in prop::collection::vec(0u8..3, 1..50)
        ) {
            let classes: Vec<LabelClass> = labels
                .iter()
                .map(|&l| match l {
                    0 => LabelClass::Primary,
                    1 => LabelClass::Secondary,
                    _ => LabelClass::Silence,
                })
                .collect();
            let seq = LabelSequence { labels: classes.clone(), step_ms: 200 };
            let ann = labels_to_annotation(&seq, "u").unwrap();
            let back = annotation_to_labels(&ann, 200).unwrap();
            prop_assert_eq!(back.labels, classes);
        }
    }
}
