//! Diarization scoring.
//!
//! Reference and hypothesis labels are first aligned with an optimal
//! one-to-one mapping (maximum total overlap, solved exactly with the
//! Hungarian algorithm); DER, JER, frame accuracy and the confusion matrix
//! all share that mapping. DER integrates miss / false alarm / confusion
//! durations over the exact interval partition of the timeline; JER is the
//! mean over reference labels of one minus the Jaccard overlap with the
//! mapped hypothesis label (unmapped labels score 100). The two metrics
//! react very differently to class imbalance, which is the point of
//! reporting both.

use std::collections::BTreeMap;

use crate::annot::{Annotation, Turn, SILENCE_LABEL};
use crate::par::*;
use crate::{DiarError, Result};

/// Injective reference-label to hypothesis-label map with the overlap it
/// captures.
#[derive(Debug, Clone, Default)]
pub struct LabelMapping {
    pub by_ref: BTreeMap<String, String>,
    pub total_overlap: f64,
}

impl LabelMapping {
    pub fn hyp_for(&self, ref_label: &str) -> Option<&str> {
        self.by_ref.get(ref_label).map(String::as_str)
    }

    /// Reference label a hypothesis label is mapped from, if any.
    pub fn ref_for(&self, hyp_label: &str) -> Option<&str> {
        self.by_ref
            .iter()
            .find(|(_, h)| h.as_str() == hyp_label)
            .map(|(r, _)| r.as_str())
    }
}

fn overlap(a: &Turn, b: &Turn) -> f64 {
    (a.end().min(b.end()) - a.onset.max(b.onset)).max(0.0)
}

fn label_durations<'a>(ann: &'a Annotation) -> BTreeMap<&'a str, f64> {
    let mut durations = BTreeMap::new();
    for t in ann.speech_turns() {
        *durations.entry(t.label.as_str()).or_insert(0.0) += t.duration;
    }
    durations
}

/// Total overlap duration between each (ref label, hyp label) pair.
pub fn overlap_matrix(
    reference: &Annotation,
    hypothesis: &Annotation,
) -> (Vec<String>, Vec<String>, Vec<Vec<f64>>) {
    let ref_labels: Vec<String> = reference.speech_labels().iter().map(|s| s.to_string()).collect();
    let hyp_labels: Vec<String> = hypothesis.speech_labels().iter().map(|s| s.to_string()).collect();
    let ref_idx: BTreeMap<&str, usize> =
        ref_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let hyp_idx: BTreeMap<&str, usize> =
        hyp_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut matrix = vec![vec![0.0; hyp_labels.len()]; ref_labels.len()];
    for r in reference.speech_turns() {
        for h in hypothesis.speech_turns() {
            let o = overlap(r, h);
            if o > 0.0 {
                matrix[ref_idx[r.label.as_str()]][hyp_idx[h.label.as_str()]] += o;
            }
        }
    }
    (ref_labels, hyp_labels, matrix)
}

/// Exact minimum-cost assignment on a square cost matrix (potentials
/// method, O(n^3)). Returns the column assigned to each row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // row matched to column j (1-based, 0 = none)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-total-weight injective assignment of rows to columns.
/// Rectangular matrices are padded to square with zero weight; pairs with
/// zero weight are dropped from the result.
pub fn assign_max_weight(weights: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i < rows && j < cols {
                        -weights[i][j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    hungarian_min(&cost)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < rows && j < cols && weights[i][j] > 0.0)
        .map(|(i, j)| (i, j, weights[i][j]))
        .collect()
}

/// Optimal label mapping between a reference and a hypothesis.
pub fn optimal_mapping(reference: &Annotation, hypothesis: &Annotation) -> LabelMapping {
    let (ref_labels, hyp_labels, matrix) = overlap_matrix(reference, hypothesis);
    let mut mapping = LabelMapping::default();
    for (i, j, w) in assign_max_weight(&matrix) {
        mapping
            .by_ref
            .insert(ref_labels[i].clone(), hyp_labels[j].clone());
        mapping.total_overlap += w;
    }
    mapping
}

/// DER components in seconds plus the rate itself (percent).
#[derive(Debug, Clone)]
pub struct DerReport {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_ref_speech: f64,
    pub der: f64,
}

impl DerReport {
    fn from_components(miss: f64, false_alarm: f64, confusion: f64, total: f64) -> Result<Self> {
        if total <= 0.0 {
            return Err(DiarError::UndefinedMetric("DER"));
        }
        Ok(DerReport {
            miss,
            false_alarm,
            confusion,
            total_ref_speech: total,
            der: 100.0 * (miss + false_alarm + confusion) / total,
        })
    }
}

/// Label coverage at a time point: the covering speech turn's label, if any.
fn speech_label_at(ann: &Annotation, t: f64) -> Result<Option<&str>> {
    let mut found: Option<&str> = None;
    for turn in ann.speech_turns() {
        if turn.onset <= t && t < turn.end() {
            if found.is_some() {
                return Err(DiarError::Config(
                    "overlapping speech turns are not supported by the scorer".into(),
                ));
            }
            found = Some(turn.label.as_str());
        }
    }
    Ok(found)
}

fn breakpoints(reference: &Annotation, hypothesis: &Annotation, collar: f64) -> Vec<f64> {
    let mut points = vec![0.0, reference.end().max(hypothesis.end())];
    for ann in [reference, hypothesis] {
        for t in ann.speech_turns() {
            points.push(t.onset);
            points.push(t.end());
        }
    }
    if collar > 0.0 {
        for t in reference.speech_turns() {
            for b in [t.onset, t.end()] {
                points.push((b - collar).max(0.0));
                points.push(b + collar);
            }
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

fn in_collar(reference: &Annotation, t: f64, collar: f64) -> bool {
    collar > 0.0
        && reference.speech_turns().any(|turn| {
            (t - turn.onset).abs() <= collar || (t - turn.end()).abs() <= collar
        })
}

/// Diarization error rate with an optional no-score collar (seconds)
/// around every reference speech boundary.
pub fn der(reference: &Annotation, hypothesis: &Annotation, collar: f64) -> Result<DerReport> {
    let mapping = optimal_mapping(reference, hypothesis);
    der_with_mapping(reference, hypothesis, collar, &mapping)
}

fn der_with_mapping(
    reference: &Annotation,
    hypothesis: &Annotation,
    collar: f64,
    mapping: &LabelMapping,
) -> Result<DerReport> {
    let points = breakpoints(reference, hypothesis, collar);
    let (mut miss, mut fa, mut conf, mut total) = (0.0, 0.0, 0.0, 0.0);
    for pair in points.windows(2) {
        let dur = pair[1] - pair[0];
        if dur <= 0.0 {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        if in_collar(reference, mid, collar) {
            continue;
        }
        let ref_label = speech_label_at(reference, mid)?;
        let hyp_label = speech_label_at(hypothesis, mid)?;
        if ref_label.is_some() {
            total += dur;
        }
        match (ref_label, hyp_label) {
            (Some(_), None) => miss += dur,
            (None, Some(_)) => fa += dur,
            (Some(r), Some(h)) => {
                if mapping.hyp_for(r) != Some(h) {
                    conf += dur;
                }
            }
            (None, None) => {}
        }
    }
    DerReport::from_components(miss, fa, conf, total)
}

/// Per-reference-label Jaccard error rates (percent) and their mean.
#[derive(Debug, Clone)]
pub struct JerReport {
    pub per_label: BTreeMap<String, f64>,
    pub jer: f64,
}

pub fn jer(reference: &Annotation, hypothesis: &Annotation) -> Result<JerReport> {
    let mapping = optimal_mapping(reference, hypothesis);
    jer_with_mapping(reference, hypothesis, &mapping)
}

fn jer_with_mapping(
    reference: &Annotation,
    hypothesis: &Annotation,
    mapping: &LabelMapping,
) -> Result<JerReport> {
    let ref_durations = label_durations(reference);
    if ref_durations.is_empty() {
        return Err(DiarError::UndefinedMetric("JER"));
    }
    let hyp_durations = label_durations(hypothesis);
    let mut per_label = BTreeMap::new();
    for (&label, &ref_dur) in &ref_durations {
        let value = match mapping.hyp_for(label) {
            None => 100.0,
            Some(hyp_label) => {
                let mut inter = 0.0;
                for r in reference.speech_turns().filter(|t| t.label == label) {
                    for h in hypothesis.speech_turns().filter(|t| t.label == hyp_label) {
                        inter += overlap(r, h);
                    }
                }
                let union = ref_dur + hyp_durations.get(hyp_label).copied().unwrap_or(0.0) - inter;
                if union <= 0.0 {
                    0.0
                } else {
                    100.0 * (1.0 - inter / union)
                }
            }
        };
        per_label.insert(label.to_string(), value);
    }
    let mean = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok(JerReport {
        per_label,
        jer: mean,
    })
}

/// Row-normalized confusion counts; rows are reference classes, columns the
/// same classes plus `other` for unmapped hypothesis speech.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub row_classes: Vec<String>,
    pub col_classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn row_percent(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            100.0 * c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Frame-level accuracy / FER / confusion matrix at `step_ms` resolution.
#[derive(Debug, Clone)]
pub struct FrameReport {
    pub accuracy: f64,
    pub fer: f64,
    pub confusion: ConfusionMatrix,
}

const OTHER_CLASS: &str = "other";

/// Sample both annotations at step centers and compare mapped labels, with
/// silence as an explicit class.
pub fn frame_scores(
    reference: &Annotation,
    hypothesis: &Annotation,
    step_ms: u32,
) -> Result<FrameReport> {
    if step_ms == 0 {
        return Err(DiarError::Config("step_ms must be positive".into()));
    }
    let mapping = optimal_mapping(reference, hypothesis);
    frame_scores_with_mapping(reference, hypothesis, step_ms, &mapping)
}

fn frame_scores_with_mapping(
    reference: &Annotation,
    hypothesis: &Annotation,
    step_ms: u32,
    mapping: &LabelMapping,
) -> Result<FrameReport> {
    let step = f64::from(step_ms) / 1000.0;
    let total = reference.end().max(hypothesis.end());
    let steps = (total / step).ceil() as usize;
    if steps == 0 {
        return Err(DiarError::EmptyInput("annotation timeline"));
    }

    let mut row_classes: Vec<String> = reference.speech_labels().iter().map(|s| s.to_string()).collect();
    row_classes.push(SILENCE_LABEL.to_string());
    let mut need_other = false;

    let mut samples = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = (i as f64 + 0.5) * step;
        let ref_class = speech_label_at(reference, t)?
            .unwrap_or(SILENCE_LABEL)
            .to_string();
        let hyp_class = match speech_label_at(hypothesis, t)? {
            None => SILENCE_LABEL.to_string(),
            Some(h) => match mapping.ref_for(h) {
                Some(r) => r.to_string(),
                None => {
                    need_other = true;
                    OTHER_CLASS.to_string()
                }
            },
        };
        samples.push((ref_class, hyp_class));
    }

    let mut col_classes = row_classes.clone();
    if need_other {
        col_classes.push(OTHER_CLASS.to_string());
    }
    let row_idx: BTreeMap<&str, usize> =
        row_classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let col_idx: BTreeMap<&str, usize> =
        col_classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; col_classes.len()]; row_classes.len()];
    let mut correct = 0usize;
    for (r, h) in &samples {
        // Reference classes are exhaustive by construction.
        counts[row_idx[r.as_str()]][col_idx[h.as_str()]] += 1;
        if r == h {
            correct += 1;
        }
    }
    let accuracy = 100.0 * correct as f64 / samples.len() as f64;
    Ok(FrameReport {
        accuracy,
        fer: 100.0 - accuracy,
        confusion: ConfusionMatrix {
            row_classes,
            col_classes,
            counts,
        },
    })
}

/// Equal error rate (percent) for binary detection scores: the operating
/// point where false-accept and false-reject rates cross, linearly
/// interpolated between adjacent thresholds.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DiarError::ShapeMismatch {
            what: "eer labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DiarError::UndefinedMetric("EER"));
    }

    // Operating points for "accept iff score >= t", t sweeping upward
    // through the distinct score values and beyond.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points: Vec<(f64, f64)> = vec![(1.0, 0.0)];
    let mut rejected_pos = 0usize;
    let mut rejected_neg = 0usize;
    let mut i = 0;
    while i < order.len() {
        // Move the threshold just above this score value.
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                rejected_pos += 1;
            } else {
                rejected_neg += 1;
            }
            i += 1;
        }
        let far = (negatives - rejected_neg) as f64 / negatives as f64;
        let frr = rejected_pos as f64 / positives as f64;
        points.push((far, frr));
    }
    for pair in points.windows(2) {
        let (f1, r1) = pair[0];
        let (f2, r2) = pair[1];
        let d1 = f1 - r1;
        let d2 = f2 - r2;
        if d1 >= 0.0 && d2 <= 0.0 {
            let w = if (d1 - d2).abs() < f64::EPSILON {
                0.0
            } else {
                d1 / (d1 - d2)
            };
            let far = f1 + w * (f2 - f1);
            let frr = r1 + w * (r2 - r1);
            return Ok(100.0 * 0.5 * (far + frr));
        }
    }
    // FAR starts at 1 >= FRR = 0 and ends at 0 <= FRR = 1, so a crossing
    // always exists; unreachable in practice.
    Err(DiarError::UndefinedMetric("EER"))
}

/// All per-utterance scores for one (reference, hypothesis) pair, computed
/// on a single shared mapping.
#[derive(Debug, Clone)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub der: DerReport,
    pub jer: JerReport,
    pub frames: FrameReport,
}

pub fn score_utterance(
    utterance_id: &str,
    reference: &Annotation,
    hypothesis: &Annotation,
    collar: f64,
    step_ms: u32,
) -> Result<UtteranceScore> {
    let mapping = optimal_mapping(reference, hypothesis);
    Ok(UtteranceScore {
        utterance_id: utterance_id.to_string(),
        der: der_with_mapping(reference, hypothesis, collar, &mapping)?,
        jer: jer_with_mapping(reference, hypothesis, &mapping)?,
        frames: frame_scores_with_mapping(reference, hypothesis, step_ms, &mapping)?,
    })
}

/// Corpus-level aggregate: DER from summed components, JER as the mean
/// over every (utterance, reference label), frame counts pooled.
#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub utterances: Vec<UtteranceScore>,
    pub der: DerReport,
    pub jer: f64,
    pub accuracy: f64,
    pub fer: f64,
    pub confusion: ConfusionMatrix,
}

/// Score a trial list. Utterances are scored independently (in parallel
/// with the `parallel` feature) and reduced in input order, so the report
/// does not depend on thread count.
pub fn score_corpus(
    pairs: &[(String, &Annotation, &Annotation)],
    collar: f64,
    step_ms: u32,
) -> Result<CorpusReport> {
    if pairs.is_empty() {
        return Err(DiarError::EmptyInput("trial list"));
    }
    let utterances: Vec<UtteranceScore> = pairs
        .maybe_par_iter()
        .map(|(id, reference, hypothesis)| {
            score_utterance(id, reference, hypothesis, collar, step_ms)
        })
        .collect::<Result<_>>()?;

    let (mut miss, mut fa, mut conf, mut total) = (0.0, 0.0, 0.0, 0.0);
    let mut jer_values = Vec::new();
    let mut class_set = std::collections::BTreeSet::new();
    for u in &utterances {
        miss += u.der.miss;
        fa += u.der.false_alarm;
        conf += u.der.confusion;
        total += u.der.total_ref_speech;
        jer_values.extend(u.jer.per_label.values().copied());
        class_set.extend(u.frames.confusion.row_classes.iter().cloned());
        class_set.extend(u.frames.confusion.col_classes.iter().cloned());
    }
    let classes: Vec<String> = class_set.into_iter().collect();
    let idx: BTreeMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    let mut frames_total = 0u64;
    let mut frames_correct = 0u64;
    for u in &utterances {
        let m = &u.frames.confusion;
        for (ri, row) in m.counts.iter().enumerate() {
            for (ci, &c) in row.iter().enumerate() {
                counts[idx[m.row_classes[ri].as_str()]][idx[m.col_classes[ci].as_str()]] += c;
                frames_total += c;
                if m.row_classes[ri] == m.col_classes[ci] {
                    frames_correct += c;
                }
            }
        }
    }
    let accuracy = 100.0 * frames_correct as f64 / frames_total.max(1) as f64;
    Ok(CorpusReport {
        der: DerReport::from_components(miss, fa, conf, total)?,
        jer: jer_values.iter().sum::<f64>() / jer_values.len().max(1) as f64,
        accuracy,
        fer: 100.0 - accuracy,
        confusion: ConfusionMatrix {
            row_classes: classes.clone(),
            col_classes: classes,
            counts,
        },
        utterances,
    })
}
