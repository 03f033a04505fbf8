//! Change detection on embedding sequences.
//!
//! The divergence contour is the negated similarity between consecutive
//! window embeddings. It is smoothed with a normalized Hamming window of
//! `round(N / delta)` taps, compared against a trailing-mean threshold
//! contour scaled by `alpha`, and peaks at least `round(gamma * N)` contour
//! steps apart are kept as change points.

use crate::embed::EmbeddingSequence;
use crate::features::FeatureMatrix;
use crate::par::*;
use crate::score::Scorer;
use crate::{embed, DiarError, Result};

/// A per-step value sequence with the map back to frame indices.
#[derive(Debug, Clone)]
pub struct Contour {
    pub values: Vec<f64>,
    /// `index_to_frame[i]` is the original frame index contour step `i`
    /// refers to; strictly increasing.
    pub index_to_frame: Vec<usize>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Hyper-parameters of the change detector.
#[derive(Debug, Clone)]
pub struct ChangePointParams {
    /// Threshold scale on the trailing mean.
    pub alpha: f64,
    /// Smoothing window divisor: the Hamming window has `round(N/delta)` taps.
    pub delta: f64,
    /// Minimum peak separation as a fraction of `N`.
    pub gamma: f64,
    /// Analysis window length in frames.
    pub window_len: usize,
}

impl ChangePointParams {
    /// Defaults for language diarization.
    pub fn language_defaults() -> Self {
        ChangePointParams {
            alpha: 3.2,
            delta: 1.3,
            gamma: 0.9,
            window_len: 200,
        }
    }

    /// Defaults for speaker diarization.
    pub fn speaker_defaults() -> Self {
        ChangePointParams {
            alpha: 2.6,
            delta: 1.3,
            gamma: 0.9,
            window_len: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(DiarError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.delta < 1.0 {
            return Err(DiarError::Config(format!("delta must be >= 1, got {}", self.delta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(DiarError::Config(format!(
                "gamma must be in (0, 2], got {}",
                self.gamma
            )));
        }
        if self.window_len < 2 {
            return Err(DiarError::Config(format!(
                "window_len must be >= 2, got {}",
                self.window_len
            )));
        }
        Ok(())
    }

    /// Number of Hamming taps used for smoothing.
    pub fn smoothing_len(&self) -> usize {
        ((self.window_len as f64 / self.delta).round() as usize).max(1)
    }

    /// Minimum peak separation in contour steps.
    pub fn min_peak_distance(&self) -> usize {
        ((self.gamma * self.window_len as f64).round() as usize).max(1)
    }
}

/// Negated similarity of consecutive embeddings. Step `i` sits at the
/// frame midpoint between the centers of embeddings `i` and `i + 1`.
pub fn divergence_contour(seq: &EmbeddingSequence, scorer: &dyn Scorer) -> Result<Contour> {
    if seq.len() < 2 {
        return Err(DiarError::TooShort {
            what: "embedding sequence",
            needed: 2,
            got: seq.len(),
        });
    }
    let values: Vec<f64> = (0..seq.len() - 1)
        .maybe_into_par_iter()
        .map(|i| {
            scorer
                .score(&seq.embeddings[i].values, &seq.embeddings[i + 1].values)
                .map(|s| -s)
        })
        .collect::<Result<_>>()?;
    let index_to_frame = (0..seq.len() - 1)
        .map(|i| (seq.embeddings[i].center_frame + seq.embeddings[i + 1].center_frame) / 2)
        .collect();
    Ok(Contour {
        values,
        index_to_frame,
    })
}

fn hamming_taps(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Centered Hamming-weighted moving average with `round(n/delta)` taps.
/// Edges renormalize over the taps that fall inside the contour, so the
/// output has the same length as the input.
pub fn smooth_contour(contour: &Contour, n: usize, delta: f64) -> Result<Contour> {
    if contour.is_empty() {
        return Err(DiarError::EmptyInput("contour"));
    }
    if delta < 1.0 {
        return Err(DiarError::Config(format!("delta must be >= 1, got {delta}")));
    }
    let w_l = ((n as f64 / delta).round() as usize).max(1);
    if w_l > contour.len() {
        return Err(DiarError::WindowTooLong {
            window: w_l,
            len: contour.len(),
        });
    }
    let taps = hamming_taps(w_l);
    let half = w_l / 2;
    let len = contour.len();
    let values = (0..len)
        .map(|i| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (j, &w) in taps.iter().enumerate() {
                let pos = i as isize + j as isize - half as isize;
                if pos >= 0 && (pos as usize) < len {
                    acc += w * contour.values[pos as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect();
    Ok(Contour {
        values,
        index_to_frame: contour.index_to_frame.clone(),
    })
}

/// Trailing-mean threshold: `th[i] = alpha * mean(c[i-trail .. i])`, with
/// `th[0] = alpha * c[0]`.
pub fn threshold_contour(contour: &Contour, alpha: f64, trail: usize) -> Result<Contour> {
    if contour.is_empty() {
        return Err(DiarError::EmptyInput("contour"));
    }
    if alpha <= 0.0 || trail == 0 {
        return Err(DiarError::Config(format!(
            "need alpha > 0 and trail >= 1, got {alpha}/{trail}"
        )));
    }
    let mut values = Vec::with_capacity(contour.len());
    values.push(alpha * contour.values[0]);
    for i in 1..contour.len() {
        let lo = i.saturating_sub(trail);
        let mean = contour.values[lo..i].iter().sum::<f64>() / (i - lo) as f64;
        values.push(alpha * mean);
    }
    Ok(Contour {
        values,
        index_to_frame: contour.index_to_frame.clone(),
    })
}

/// Pick strict local maxima above the threshold, greedily in descending
/// amplitude, skipping candidates within `min_dist` contour steps of an
/// already accepted peak. Returns frame indices in time order.
pub fn pick_peaks(smoothed: &Contour, threshold: &Contour, min_dist: usize) -> Result<Vec<usize>> {
    if smoothed.len() != threshold.len() {
        return Err(DiarError::ShapeMismatch {
            what: "threshold contour",
            expected: smoothed.len(),
            got: threshold.len(),
        });
    }
    if min_dist == 0 {
        return Err(DiarError::Config("min_dist must be >= 1".into()));
    }
    let v = &smoothed.values;
    let mut candidates: Vec<usize> = (1..v.len().saturating_sub(1))
        .filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1] && v[i] > threshold.values[i])
        .collect();
    // Descending amplitude; lower index wins ties.
    candidates.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= min_dist) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    Ok(accepted.into_iter().map(|i| smoothed.index_to_frame[i]).collect())
}

/// Run the full detection chain on (voiced) features and return change
/// points as frame indices in the original timeline.
///
/// Chain: sliding embeddings (shift 1) -> divergence contour -> Hamming
/// smoothing -> floor shift -> trailing-mean threshold (trail `2 * w_l`)
/// -> peak picking. The floor shift moves the smoothed contour minimum to
/// zero: similarity scorers put the contour on an arbitrary (often
/// negative) offset, and the multiplicative threshold needs a nonnegative
/// scale to compare against.
pub fn detect_change_frames(
    feats: &FeatureMatrix,
    index_map: Option<&[usize]>,
    params: &ChangePointParams,
    scorer: &dyn Scorer,
) -> Result<Vec<usize>> {
    params.validate()?;
    let seq = embed::sliding_embeddings(feats, params.window_len, 1, index_map)?;
    let contour = divergence_contour(&seq, scorer)?;
    let smoothed = smooth_contour(&contour, params.window_len, params.delta)?;
    let floor = smoothed.values.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted = Contour {
        values: smoothed.values.iter().map(|v| v - floor).collect(),
        index_to_frame: smoothed.index_to_frame.clone(),
    };
    let threshold = threshold_contour(&shifted, params.alpha, 2 * params.smoothing_len())?;
    pick_peaks(&shifted, &threshold, params.min_peak_distance())
}

/// Like [`detect_change_frames`], but in absolute seconds.
pub fn detect_changes(
    feats: &FeatureMatrix,
    index_map: Option<&[usize]>,
    params: &ChangePointParams,
    scorer: &dyn Scorer,
) -> Result<Vec<f64>> {
    let step = f64::from(feats.shift_ms) / 1000.0;
    Ok(detect_change_frames(feats, index_map, params, scorer)?
        .into_iter()
        .map(|f| f as f64 * step)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedding;
    use crate::score::CosineScorer;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn seq_of(vectors: Vec<Vec<f64>>) -> EmbeddingSequence {
        let dim = vectors[0].len();
        EmbeddingSequence {
            embeddings: vectors
                .into_iter()
                .enumerate()
                .map(|(i, values)| Embedding {
                    values,
                    center_frame: i,
                })
                .collect(),
            window_len: 2,
            shift: 1,
            shift_ms: 10.0,
            dim,
        }
    }

    fn plain(values: Vec<f64>) -> Contour {
        let index_to_frame = (0..values.len()).collect();
        Contour {
            values,
            index_to_frame,
        }
    }

    #[test]
    fn identical_embeddings_give_constant_minus_one() {
        let seq = seq_of(vec![vec![1.0, 1.0]; 5]);
        let c = divergence_contour(&seq, &CosineScorer).unwrap();
        assert_eq!(c.len(), 4);
        for &v in &c.values {
            assert!((v + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_junction_is_the_maximum() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let seq = seq_of(vec![a.clone(), a, b.clone(), b]);
        let c = divergence_contour(&seq, &CosineScorer).unwrap();
        assert!((c.values[0] + 1.0).abs() < 1e-12);
        assert!(c.values[1].abs() < 1e-12);
        assert!((c.values[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn contour_too_short_is_an_error() {
        let seq = seq_of(vec![vec![1.0]]);
        assert!(matches!(
            divergence_contour(&seq, &CosineScorer),
            Err(DiarError::TooShort { .. })
        ));
    }

    #[test]
    fn paper_geometry_gives_154_taps() {
        let params = ChangePointParams::language_defaults();
        assert_eq!(params.smoothing_len(), 154);
        assert_eq!(params.min_peak_distance(), 180);
    }

    #[test]
    fn constant_contour_is_unchanged_by_smoothing() {
        let c = plain(vec![0.7; 40]);
        let s = smooth_contour(&c, 10, 1.3).unwrap();
        for &v in &s.values {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_spreads_into_normalized_taps() {
        let c = plain(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = smooth_contour(&c, 3, 1.0).unwrap();
        // Hamming(3) = [0.08, 1.0, 0.08]; center tap sits on the impulse.
        let norm = 0.08 + 1.0 + 0.08;
        assert!((s.values[1] - 0.08 / norm).abs() < 1e-12);
        assert!((s.values[2] - 1.0 / norm).abs() < 1e-12);
        assert!((s.values[3] - 0.08 / norm).abs() < 1e-12);
        assert!(s.values[0].abs() < 1e-12 || s.values[0] > 0.0); // edge renormalized
    }

    #[test]
    fn smoothing_never_exceeds_the_input_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = plain((0..100).map(|_| rng.random_range(-2.0..2.0)).collect());
        let max = c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = smooth_contour(&c, 20, 1.3).unwrap();
        for &v in &s.values {
            assert!(v <= max + 1e-12);
        }
    }

    #[test]
    fn window_longer_than_contour_is_an_error() {
        let c = plain(vec![1.0; 5]);
        assert!(matches!(
            smooth_contour(&c, 10, 1.0),
            Err(DiarError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn threshold_of_constant_contour_is_alpha_times_it() {
        let c = plain(vec![0.5; 20]);
        let th = threshold_contour(&c, 2.0, 5).unwrap();
        for &v in &th.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn increasing_contour_stays_above_unit_alpha_threshold() {
        let c = plain((0..30).map(|i| i as f64 + 1.0).collect());
        let th = threshold_contour(&c, 1.0, 4).unwrap();
        for i in 1..c.len() {
            assert!(th.values[i] < c.values[i]);
        }
    }

    #[test]
    fn spike_exceeds_trailing_mean_threshold() {
        let c = plain(vec![1.0, 1.0, 1.0, 10.0, 1.0]);
        let th = threshold_contour(&c, 2.0, 3).unwrap();
        // Hand evaluation: th[3] = 2 * mean(1,1,1) = 2.
        assert!((th.values[3] - 2.0).abs() < 1e-12);
        assert!(c.values[3] > th.values[3]);
        // th[4] = 2 * mean(1,1,10) = 8.
        assert!((th.values[4] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn picks_both_small_peaks_with_unit_distance() {
        let c = plain(vec![0.0, 1.0, 0.0, 2.0, 0.0]);
        let th = plain(vec![0.5; 5]);
        assert_eq!(pick_peaks(&c, &th, 1).unwrap(), vec![1, 3]);
    }

    #[test]
    fn higher_peak_wins_within_min_distance() {
        let c = plain(vec![0.0, 1.0, 0.0, 2.0, 0.0]);
        let th = plain(vec![0.5; 5]);
        assert_eq!(pick_peaks(&c, &th, 3).unwrap(), vec![3]);
    }

    #[test]
    fn monotone_contour_has_no_peaks() {
        let c = plain((0..10).map(|i| i as f64).collect());
        let th = plain(vec![-1.0; 10]);
        assert!(pick_peaks(&c, &th, 1).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn picked_peaks_are_separated_local_maxima(
            values in prop::collection::vec(-1.0f64..1.0, 10..120),
            min_dist in 1usize..15,
        ) {
            let c = plain(values.clone());
            let th = plain(vec![0.2; values.len()]);
            let peaks = pick_peaks(&c, &th, min_dist).unwrap();
            for pair in peaks.windows(2) {
                prop_assert!(pair[1] - pair[0] >= min_dist);
            }
            for &p in &peaks {
                prop_assert!(values[p] > values[p - 1]);
                prop_assert!(values[p] > values[p + 1]);
                prop_assert!(values[p] > 0.2);
            }
        }
    }

    /// Feature stream with homogeneous Gaussian segments: `means[s]` is the
    /// per-column mean of segment `s`, all columns share unit variance.
    fn gaussian_stream(
        segment_lens: &[usize],
        offsets: &[f64],
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> FeatureMatrix {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        for (&len, &offset) in segment_lens.iter().zip(offsets) {
            for _ in 0..len {
                rows.push(
                    (0..dim)
                        .map(|_| offset + normal.sample(rng))
                        .collect::<Vec<f64>>(),
                );
            }
        }
        FeatureMatrix::from_rows(rows, 10).unwrap()
    }

    // Two sources whose means are 5 sigma apart in a 13-dim stream.
    fn five_sigma_offset(dim: usize) -> f64 {
        5.0 / (dim as f64).sqrt()
    }

    #[test]
    fn single_change_is_found_within_half_a_window() {
        let params = ChangePointParams::language_defaults();
        let dim = 13;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // Change at frame 500 = 5.0 s at a 10 ms shift.
        let feats = gaussian_stream(&[500, 500], &[0.0, five_sigma_offset(dim)], dim, &mut rng);
        let changes = detect_changes(&feats, None, &params, &CosineScorer).unwrap();
        assert_eq!(changes.len(), 1, "changes: {changes:?}");
        assert!(
            (changes[0] - 5.0).abs() <= 1.0,
            "change at {} s, expected 5.0 +/- 1.0",
            changes[0]
        );
    }

    #[test]
    fn homogeneous_stream_has_no_changes() {
        let params = ChangePointParams::language_defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let feats = gaussian_stream(&[1000], &[0.0], 13, &mut rng);
        let changes = detect_changes(&feats, None, &params, &CosineScorer).unwrap();
        assert!(changes.is_empty(), "spurious changes: {changes:?}");
    }

    #[test]
    fn two_separated_changes_are_both_found() {
        let params = ChangePointParams::language_defaults();
        let dim = 13;
        let offset = five_sigma_offset(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        // Changes at frames 450 and 950 (4.5 s and 9.5 s).
        let feats = gaussian_stream(&[450, 500, 450], &[0.0, offset, 0.0], dim, &mut rng);
        let changes = detect_changes(&feats, None, &params, &CosineScorer).unwrap();
        assert_eq!(changes.len(), 2, "changes: {changes:?}");
        assert!((changes[0] - 4.5).abs() <= 1.0);
        assert!((changes[1] - 9.5).abs() <= 1.0);
    }
}
