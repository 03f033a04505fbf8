//! Short-term-energy voice activity detection.
//!
//! A frame is voiced when its mean-square energy exceeds a fixed fraction
//! (default 6%) of the utterance's average frame energy. No hangover or
//! smoothing is applied to the mask.

use crate::audio::FrameSet;
use crate::{DiarError, Result};

/// Per-frame voiced/unvoiced decisions.
#[derive(Debug, Clone)]
pub struct VoicedMask {
    pub flags: Vec<bool>,
    pub shift_ms: u32,
}

impl VoicedMask {
    pub fn num_voiced(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Default fraction of the average frame energy used as the threshold.
pub const DEFAULT_VAD_RATIO: f64 = 0.06;

/// Mean-square energy of every frame.
pub fn short_term_energy(frames: &FrameSet) -> Result<Vec<f64>> {
    if frames.num_frames() == 0 {
        return Err(DiarError::EmptyInput("frame set"));
    }
    Ok((0..frames.num_frames())
        .map(|i| {
            let frame = frames.frame(i);
            frame.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>() / frame.len() as f64
        })
        .collect())
}

/// Threshold the energy contour at `ratio * mean(energy)`.
///
/// The comparison is strict, so a digitally silent utterance (all energies
/// zero) comes out all-unvoiced.
pub fn energy_vad(energy: &[f64], ratio: f64, shift_ms: u32) -> Result<VoicedMask> {
    if energy.is_empty() {
        return Err(DiarError::EmptyInput("energy contour"));
    }
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(DiarError::Config(format!(
            "vad ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mean = energy.iter().sum::<f64>() / energy.len() as f64;
    let threshold = ratio * mean;
    Ok(VoicedMask {
        flags: energy.iter().map(|&e| e > threshold).collect(),
        shift_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{frame_signal, AudioBuffer};

    fn frames_of(samples: Vec<f32>) -> FrameSet {
        frame_signal(&AudioBuffer::new(samples, 16_000, "u"), 20, 10).unwrap()
    }

    #[test]
    fn zero_frame_has_zero_energy() {
        let e = short_term_energy(&frames_of(vec![0.0; 320])).unwrap();
        assert_eq!(e, vec![0.0]);
    }

    #[test]
    fn constant_half_amplitude_has_quarter_energy() {
        let e = short_term_energy(&frames_of(vec![0.5; 320])).unwrap();
        assert!((e[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn full_scale_sine_energy_is_about_half() {
        // Many whole periods of a unit sine; the mean of sin^2 is computed
        // directly here as the oracle.
        let samples: Vec<f32> = (0..320)
            .map(|i| (2.0 * std::f32::consts::PI * i as f32 / 16.0).sin())
            .collect();
        let oracle = samples
            .iter()
            .map(|&s| f64::from(s) * f64::from(s))
            .sum::<f64>()
            / samples.len() as f64;
        let e = short_term_energy(&frames_of(samples)).unwrap();
        assert!((e[0] - oracle).abs() < 1e-12);
        assert!((e[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn silent_utterance_is_all_unvoiced() {
        let mask = energy_vad(&[0.0, 0.0, 0.0], 0.06, 10).unwrap();
        assert!(mask.flags.iter().all(|&f| !f));
    }

    #[test]
    fn half_silence_half_tone_splits_at_threshold() {
        // Energies: 10 silent frames, 10 frames at 0.5.
        // mean = 0.25, threshold = 0.06 * 0.25 = 0.015.
        let energy: Vec<f64> = std::iter::repeat(0.0)
            .take(10)
            .chain(std::iter::repeat(0.5).take(10))
            .collect();
        let mean = energy.iter().sum::<f64>() / energy.len() as f64;
        assert!((0.06 * mean - 0.015).abs() < 1e-12);
        let mask = energy_vad(&energy, 0.06, 10).unwrap();
        assert!(mask.flags[..10].iter().all(|&f| !f));
        assert!(mask.flags[10..].iter().all(|&f| f));
    }

    #[test]
    fn uniform_nonzero_energy_is_all_voiced() {
        let mask = energy_vad(&[0.3; 7], 0.06, 10).unwrap();
        assert!(mask.flags.iter().all(|&f| f));
    }

    #[test]
    fn empty_contour_is_an_error() {
        assert!(matches!(
            energy_vad(&[], 0.06, 10),
            Err(DiarError::EmptyInput(_))
        ));
    }

    #[test]
    fn mask_is_scale_invariant() {
        let base: Vec<f32> = (0..3200)
            .map(|i| if i < 1600 { 0.0 } else { (i as f32 * 0.07).sin() * 0.4 })
            .collect();
        let reference = energy_vad(
            &short_term_energy(&frames_of(base.clone())).unwrap(),
            0.06,
            10,
        )
        .unwrap();
        for c in [0.1f32, 10.0] {
            let scaled: Vec<f32> = base.iter().map(|&s| s * c).collect();
            let mask = energy_vad(
                &short_term_energy(&frames_of(scaled)).unwrap(),
                0.06,
                10,
            )
            .unwrap();
            assert_eq!(mask.flags, reference.flags, "scale {c}");
        }
    }

    #[test]
    fn raising_ratio_never_adds_voiced_frames() {
        let energy: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let low = energy_vad(&energy, 0.05, 10).unwrap();
        let high = energy_vad(&energy, 0.5, 10).unwrap();
        for (l, h) in low.flags.iter().zip(&high.flags) {
            assert!(*l || !*h);
        }
    }
}
