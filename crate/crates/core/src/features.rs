//! 39-dimensional MFCC features: 13 cepstra plus deltas and delta-deltas.
//!
//! Per frame: pre-emphasis, Hamming window, magnitude FFT, triangular mel
//! filterbank, log with a fixed floor, orthonormal DCT-II, keep the first
//! `num_ceps` coefficients (c0 included). Deltas use the usual regression
//! formula with edge replication, so the matrix never shrinks.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::FrameSet;
use crate::par::*;
use crate::vad::VoicedMask;
use crate::{DiarError, Result};

/// Row-major matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    pub shift_ms: u32,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, shift_ms: u32) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        let n = rows.len();
        for row in rows {
            if row.len() != cols {
                return Err(DiarError::ShapeMismatch {
                    what: "feature row",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(&row);
        }
        Ok(FeatureMatrix {
            data,
            rows: n,
            cols,
            shift_ms,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Contiguous slice covering rows `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> &[f64] {
        &self.data[start * self.cols..(start + len) * self.cols]
    }
}

/// MFCC extraction parameters. The defaults target 16 kHz speech.
#[derive(Debug, Clone)]
pub struct MfccConfig {
    pub num_ceps: usize,
    pub num_mel_filters: usize,
    pub fft_size: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub delta_window: usize,
    pub pre_emphasis: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            num_ceps: 13,
            num_mel_filters: 26,
            fft_size: 512,
            low_hz: 0.0,
            high_hz: 8000.0,
            delta_window: 2,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    fn validate(&self, samples_per_frame: usize, sample_rate: u32) -> Result<()> {
        if self.fft_size < samples_per_frame {
            return Err(DiarError::Config(format!(
                "fft_size {} is smaller than the {}-sample frame",
                self.fft_size, samples_per_frame
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(DiarError::Config(format!(
                "fft_size {} must be a power of two",
                self.fft_size
            )));
        }
        if self.num_ceps == 0 || self.num_ceps > self.num_mel_filters {
            return Err(DiarError::Config(format!(
                "need 0 < num_ceps <= num_mel_filters, got {}/{}",
                self.num_ceps, self.num_mel_filters
            )));
        }
        let nyquist = f64::from(sample_rate) / 2.0;
        if !(self.low_hz >= 0.0 && self.low_hz < self.high_hz && self.high_hz <= nyquist) {
            return Err(DiarError::Config(format!(
                "need 0 <= low_hz < high_hz <= {nyquist}, got {}..{}",
                self.low_hz, self.high_hz
            )));
        }
        Ok(())
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over magnitude-spectrum bins.
pub(crate) struct MelFilterbank {
    /// One weight vector per filter, covering all `fft_size/2 + 1` bins.
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub(crate) fn new(cfg: &MfccConfig, sample_rate: u32) -> Self {
        let num_bins = cfg.fft_size / 2 + 1;
        let bin_hz = f64::from(sample_rate) / cfg.fft_size as f64;
        let mel_low = hz_to_mel(cfg.low_hz);
        let mel_high = hz_to_mel(cfg.high_hz);
        let n = cfg.num_mel_filters;
        let hz_points: Vec<f64> = (0..n + 2)
            .map(|i| mel_to_hz(mel_low + (mel_high - mel_low) * i as f64 / (n + 1) as f64))
            .collect();
        let weights = (0..n)
            .map(|f| {
                let (left, center, right) = (hz_points[f], hz_points[f + 1], hz_points[f + 2]);
                (0..num_bins)
                    .map(|b| {
                        let freq = b as f64 * bin_hz;
                        let w = if freq < center {
                            (freq - left) / (center - left).max(f64::EPSILON)
                        } else {
                            (right - freq) / (right - center).max(f64::EPSILON)
                        };
                        w.max(0.0)
                    })
                    .collect()
            })
            .collect();
        MelFilterbank { weights }
    }

    pub(crate) fn apply(&self, magnitude: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(magnitude).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Orthonormal DCT-II matrix of shape `num_ceps x n`.
pub(crate) fn dct_matrix(num_ceps: usize, n: usize) -> Vec<Vec<f64>> {
    (0..num_ceps)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|j| {
                    scale * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()
                })
                .collect()
        })
        .collect()
}

/// Extract static MFCCs (`num_ceps` columns) from a frame set.
pub fn mfcc(frames: &FrameSet, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    if frames.num_frames() == 0 {
        return Err(DiarError::EmptyInput("frame set"));
    }
    cfg.validate(frames.samples_per_frame(), frames.sample_rate)?;
    let filterbank = MelFilterbank::new(cfg, frames.sample_rate);
    let dct = dct_matrix(cfg.num_ceps, cfg.num_mel_filters);
    let window = hamming(frames.samples_per_frame());
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(cfg.fft_size);

    let rows: Vec<Vec<f64>> = (0..frames.num_frames())
        .maybe_into_par_iter()
        .map(|i| frame_mfcc(frames.frame(i), cfg, &window, &fft, &filterbank, &dct))
        .collect();
    FeatureMatrix::from_rows(rows, frames.shift_ms)
}

fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| {
            0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
        })
        .collect()
}

fn frame_mfcc(
    frame: &[f32],
    cfg: &MfccConfig,
    window: &[f64],
    fft: &Arc<dyn Fft<f64>>,
    filterbank: &MelFilterbank,
    dct: &[Vec<f64>],
) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for (n, &s) in frame.iter().enumerate() {
        let x = f64::from(s);
        let prev = if n == 0 { x } else { f64::from(frame[n - 1]) };
        buf[n].re = (x - cfg.pre_emphasis * prev) * window[n];
    }
    fft.process(&mut buf);
    let magnitude: Vec<f64> = buf[..cfg.fft_size / 2 + 1].iter().map(|c| c.norm()).collect();
    let log_energies: Vec<f64> = filterbank
        .apply(&magnitude)
        .into_iter()
        .map(|e| e.max(cfg.log_floor).ln())
        .collect();
    dct.iter()
        .map(|basis| basis.iter().zip(&log_energies).map(|(a, b)| a * b).sum())
        .collect()
}

/// Append delta and delta-delta columns (output has 3x the input columns).
pub fn add_deltas(feats: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if feats.rows() == 0 {
        return Err(DiarError::EmptyInput("feature matrix"));
    }
    if window == 0 {
        return Err(DiarError::Config("delta window must be >= 1".into()));
    }
    let statics: Vec<Vec<f64>> = (0..feats.rows()).map(|i| feats.row(i).to_vec()).collect();
    let deltas = delta_pass(&statics, window);
    let ddeltas = delta_pass(&deltas, window);
    let rows: Vec<Vec<f64>> = (0..feats.rows())
        .map(|i| {
            let mut row = Vec::with_capacity(feats.cols() * 3);
            row.extend_from_slice(&statics[i]);
            row.extend_from_slice(&deltas[i]);
            row.extend_from_slice(&ddeltas[i]);
            row
        })
        .collect();
    FeatureMatrix::from_rows(rows, feats.shift_ms)
}

fn delta_pass(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let t_max = rows.len() - 1;
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    (0..rows.len())
        .map(|t| {
            (0..rows[0].len())
                .map(|j| {
                    (1..=window)
                        .map(|n| {
                            let ahead = rows[(t + n).min(t_max)][j];
                            let behind = rows[t.saturating_sub(n)][j];
                            n as f64 * (ahead - behind)
                        })
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// Keep only voiced rows. Returns the filtered matrix plus the map from
/// voiced-row index back to the original frame index.
pub fn select_voiced(feats: &FeatureMatrix, mask: &VoicedMask) -> Result<(FeatureMatrix, Vec<usize>)> {
    if mask.flags.len() != feats.rows() {
        return Err(DiarError::ShapeMismatch {
            what: "voiced mask",
            expected: feats.rows(),
            got: mask.flags.len(),
        });
    }
    let mut rows = Vec::new();
    let mut index_map = Vec::new();
    for (i, &flag) in mask.flags.iter().enumerate() {
        if flag {
            rows.push(feats.row(i).to_vec());
            index_map.push(i);
        }
    }
    let matrix = FeatureMatrix::from_rows(rows, feats.shift_ms)?;
    Ok((matrix, index_map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{frame_signal, AudioBuffer};

    fn frames_of(samples: Vec<f32>, frame_ms: u32, shift_ms: u32) -> FrameSet {
        frame_signal(&AudioBuffer::new(samples, 16_000, "u"), frame_ms, shift_ms).unwrap()
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let n = 26;
        let d = dct_matrix(n, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| d[i][k] * d[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "({i},{j}) -> {dot}");
            }
        }
    }

    #[test]
    fn identical_frames_give_identical_rows() {
        let block: Vec<f32> = (0..320).map(|i| (i as f32 * 0.1).sin() * 0.3).collect();
        let mut samples = Vec::new();
        for _ in 0..5 {
            samples.extend_from_slice(&block);
        }
        // Non-overlapping frames so every frame sees the same samples.
        let feats = mfcc(&frames_of(samples, 20, 20), &MfccConfig::default()).unwrap();
        assert_eq!(feats.rows(), 5);
        for i in 1..feats.rows() {
            assert_eq!(feats.row(i), feats.row(0));
        }
    }

    #[test]
    fn zero_frame_hits_the_log_floor() {
        let cfg = MfccConfig::default();
        let feats = mfcc(&frames_of(vec![0.0; 320], 20, 10), &cfg).unwrap();
        let expected_c0 = cfg.log_floor.ln() * (cfg.num_mel_filters as f64).sqrt();
        assert!((feats.row(0)[0] - expected_c0).abs() < 1e-9);
        for &c in &feats.row(0)[1..] {
            assert!(c.abs() < 1e-9);
        }
        let again = mfcc(&frames_of(vec![0.0; 320], 20, 10), &cfg).unwrap();
        assert_eq!(feats.row(0), again.row(0));
    }

    #[test]
    fn distinct_tones_have_distinct_features() {
        let cfg = MfccConfig::default();
        let tone = |hz: f32| -> Vec<f32> {
            (0..320)
                .map(|i| (2.0 * std::f32::consts::PI * hz * i as f32 / 16_000.0).sin())
                .collect()
        };
        let frames_1k = frames_of(tone(1000.0), 20, 10);
        let frames_3k = frames_of(tone(3000.0), 20, 10);

        // The filterbank peak moves with the tone.
        let fb = MelFilterbank::new(&cfg, 16_000);
        let spectrum = |frames: &FrameSet| {
            let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
            let window = hamming(320);
            let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); cfg.fft_size];
            for (n, &s) in frames.frame(0).iter().enumerate() {
                let prev = if n == 0 { s } else { frames.frame(0)[n - 1] };
                buf[n].re = (f64::from(s) - cfg.pre_emphasis * f64::from(prev)) * window[n];
            }
            fft.process(&mut buf);
            buf[..257].iter().map(|c| c.norm()).collect::<Vec<f64>>()
        };
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        let e1 = fb.apply(&spectrum(&frames_1k));
        let e3 = fb.apply(&spectrum(&frames_3k));
        assert_ne!(argmax(&e1), argmax(&e3));

        let m1 = mfcc(&frames_1k, &cfg).unwrap();
        let m3 = mfcc(&frames_3k, &cfg).unwrap();
        let max_diff = m1.row(0)
            .iter()
            .zip(m3.row(0))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1.0, "max coefficient difference {max_diff}");
    }

    #[test]
    fn fft_smaller_than_frame_is_a_config_error() {
        let cfg = MfccConfig {
            fft_size: 256,
            ..MfccConfig::default()
        };
        assert!(matches!(
            mfcc(&frames_of(vec![0.1; 320], 20, 10), &cfg),
            Err(DiarError::Config(_))
        ));
    }

    #[test]
    fn deltas_of_constant_features_are_exactly_zero() {
        let rows = vec![vec![3.5, -1.25]; 6];
        let feats = FeatureMatrix::from_rows(rows, 10).unwrap();
        let out = add_deltas(&feats, 2).unwrap();
        assert_eq!(out.cols(), 6);
        for i in 0..out.rows() {
            for &v in &out.row(i)[2..] {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn delta_of_linear_ramp_is_one_in_the_interior() {
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64]).collect();
        let feats = FeatureMatrix::from_rows(rows, 10).unwrap();
        let out = add_deltas(&feats, 2).unwrap();
        for t in 2..8 {
            assert!((out.row(t)[1] - 1.0).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn delta_matches_direct_formula_on_small_input() {
        let rows = vec![
            vec![0.3, -0.7],
            vec![1.1, 0.2],
            vec![-0.4, 0.9],
            vec![2.2, -1.3],
            vec![0.05, 0.6],
        ];
        let feats = FeatureMatrix::from_rows(rows.clone(), 10).unwrap();
        let out = add_deltas(&feats, 2).unwrap();
        // Independent evaluation of the regression formula with edge
        // replication, written out longhand.
        let w = 2usize;
        let denom = 2.0 * (1.0 + 4.0);
        for t in 0..rows.len() {
            for j in 0..2 {
                let mut num = 0.0;
                for n in 1..=w {
                    let ahead = rows[(t + n).min(rows.len() - 1)][j];
                    let behind = rows[t.saturating_sub(n)][j];
                    num += n as f64 * (ahead - behind);
                }
                let expected = num / denom;
                assert!((out.row(t)[2 + j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_dimensionality_is_39() {
        let feats = mfcc(&frames_of(vec![0.2; 3200], 20, 10), &MfccConfig::default()).unwrap();
        assert_eq!(feats.cols(), 13);
        let full = add_deltas(&feats, 2).unwrap();
        assert_eq!(full.cols(), 39);
    }

    #[test]
    fn select_voiced_keeps_rows_in_order() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let feats = FeatureMatrix::from_rows(rows, 10).unwrap();
        let mask = VoicedMask {
            flags: vec![true, false, true],
            shift_ms: 10,
        };
        let (kept, map) = select_voiced(&feats, &mask).unwrap();
        assert_eq!(kept.rows(), 2);
        assert_eq!(kept.row(0), &[0.0]);
        assert_eq!(kept.row(1), &[2.0]);
        assert_eq!(map, vec![0, 2]);
    }

    #[test]
    fn select_voiced_identity_and_empty() {
        let feats = FeatureMatrix::from_rows(vec![vec![1.0], vec![2.0]], 10).unwrap();
        let all = VoicedMask {
            flags: vec![true, true],
            shift_ms: 10,
        };
        let (kept, map) = select_voiced(&feats, &all).unwrap();
        assert_eq!(kept, feats);
        assert_eq!(map, vec![0, 1]);

        let none = VoicedMask {
            flags: vec![false, false],
            shift_ms: 10,
        };
        let (kept, map) = select_voiced(&feats, &none).unwrap();
        assert_eq!(kept.rows(), 0);
        assert!(map.is_empty());
    }

    #[test]
    fn select_voiced_rejects_length_mismatch() {
        let feats = FeatureMatrix::from_rows(vec![vec![1.0]], 10).unwrap();
        let mask = VoicedMask {
            flags: vec![true, false],
            shift_ms: 10,
        };
        assert!(matches!(
            select_voiced(&feats, &mask),
            Err(DiarError::ShapeMismatch { .. })
        ));
    }
}
