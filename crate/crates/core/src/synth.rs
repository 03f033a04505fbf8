//! Synthetic code-switch / multi-speaker utterance generation.
//!
//! Utterances are built by alternating randomly sized segments (default
//! uniform 3.5-6.5 s, mean 5 s) drawn from two mono-class source pools,
//! with 1-5 internal change points. The reference annotation records the
//! exact construction, so generated corpora come with perfect ground truth.
//!
//! `--toy` style pools are built in [`toy_pools`]: band-limited noise
//! against harmonic tone complexes with vibrato. The two are spectrally
//! disjoint, which is the property the implicit pipelines key on, so the
//! whole toolkit can be exercised without any real corpus.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::annot::{rttm_to_string, Annotation, Turn};
use crate::audio::{write_wav, AudioBuffer};
use crate::par::*;
use crate::{DiarError, Result};

/// Clips of one language/speaker, all at the same sample rate.
#[derive(Debug, Clone)]
pub struct SourcePool {
    pub label: String,
    pub clips: Vec<AudioBuffer>,
}

impl SourcePool {
    pub fn new(label: impl Into<String>, clips: Vec<AudioBuffer>) -> Result<Self> {
        let label = label.into();
        if clips.is_empty() {
            return Err(DiarError::EmptyInput("source pool"));
        }
        let rate = clips[0].sample_rate;
        if clips.iter().any(|c| c.sample_rate != rate) {
            return Err(DiarError::Config(format!(
                "pool {label:?} mixes sample rates"
            )));
        }
        Ok(SourcePool { label, clips })
    }

    pub fn sample_rate(&self) -> u32 {
        self.clips[0].sample_rate
    }

    fn total_samples(&self) -> usize {
        self.clips.iter().map(|c| c.samples.len()).sum()
    }

    /// Load every `.wav` in a directory (sorted by file name).
    pub fn from_dir(label: impl Into<String>, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| DiarError::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
            .collect();
        paths.sort();
        let clips = paths
            .iter()
            .map(crate::audio::read_wav)
            .collect::<Result<Vec<_>>>()?;
        SourcePool::new(label, clips)
    }
}

/// Generation parameters.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub min_changes: usize,
    pub max_changes: usize,
    /// Segment duration bounds in seconds.
    pub seg_dur_min: f64,
    pub seg_dur_max: f64,
    /// Duration multiplier for pool-B (secondary) segments; 1.0 keeps the
    /// classes balanced, `1/r` approximates an `r:1` primary/secondary mix.
    pub secondary_scale: f64,
    /// Overlap-add fade between segments; 0 = hard concatenation.
    pub crossfade_ms: u32,
    pub num_utterances: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            min_changes: 1,
            max_changes: 5,
            seg_dur_min: 3.5,
            seg_dur_max: 6.5,
            secondary_scale: 1.0,
            crossfade_ms: 0,
            num_utterances: 1,
            seed: 0,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.min_changes == 0 || self.min_changes > self.max_changes {
            return Err(DiarError::Config(format!(
                "need 1 <= min_changes <= max_changes, got {}..{}",
                self.min_changes, self.max_changes
            )));
        }
        if !(self.seg_dur_min > 0.0 && self.seg_dur_min <= self.seg_dur_max) {
            return Err(DiarError::Config(format!(
                "bad segment duration range {}..{}",
                self.seg_dur_min, self.seg_dur_max
            )));
        }
        if self.secondary_scale <= 0.0 {
            return Err(DiarError::Config("secondary_scale must be > 0".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-utterance seed so utterances can be generated in any order
/// (or in parallel) with identical results.
pub fn utterance_seed(dataset_seed: u64, index: usize) -> u64 {
    splitmix64(dataset_seed ^ splitmix64(index as u64 + 1))
}

/// Segment plan: which pool each segment draws from and for how long.
#[derive(Debug, Clone)]
pub struct UtterancePlan {
    /// (pool index 0/1, duration seconds) per segment.
    pub segments: Vec<(usize, f64)>,
    pub num_changes: usize,
}

/// Draw the segment layout: `k ~ U{min..max}` changes, alternating pools
/// starting from a fair coin, each duration uniform in the configured
/// range (scaled for pool B).
pub fn plan_utterance(params: &SynthParams, rng: &mut impl Rng) -> UtterancePlan {
    let k = rng.random_range(params.min_changes..=params.max_changes);
    let first: usize = usize::from(rng.random_bool(0.5));
    let segments = (0..=k)
        .map(|s| {
            let pool = (first + s) % 2;
            let mut dur = rng.random_range(params.seg_dur_min..=params.seg_dur_max);
            if pool == 1 {
                dur *= params.secondary_scale;
            }
            (pool, dur)
        })
        .collect();
    UtterancePlan {
        segments,
        num_changes: k,
    }
}

/// Fill `out` with `out.len()` samples drawn from random clip regions,
/// concatenating further random regions whenever a clip runs out.
fn fill_from_pool(pool: &SourcePool, out: &mut [f32], rng: &mut impl Rng) -> Result<()> {
    if pool.total_samples() == 0 {
        return Err(DiarError::InsufficientAudio(format!(
            "pool {:?} has no samples",
            pool.label
        )));
    }
    let mut written = 0;
    let mut guard = 0;
    while written < out.len() {
        guard += 1;
        if guard > 100_000 {
            return Err(DiarError::InsufficientAudio(format!(
                "pool {:?} cannot fill a {}-sample segment",
                pool.label,
                out.len()
            )));
        }
        let clip = &pool.clips[rng.random_range(0..pool.clips.len())];
        if clip.samples.is_empty() {
            continue;
        }
        let start = rng.random_range(0..clip.samples.len());
        let take = (clip.samples.len() - start).min(out.len() - written);
        out[written..written + take].copy_from_slice(&clip.samples[start..start + take]);
        written += take;
    }
    Ok(())
}

/// Generate utterance `index` of a dataset: audio plus its reference
/// annotation. Deterministic in `(params.seed, index)`.
pub fn generate_utterance(
    pool_a: &SourcePool,
    pool_b: &SourcePool,
    params: &SynthParams,
    index: usize,
) -> Result<(AudioBuffer, Annotation)> {
    params.validate()?;
    if pool_a.sample_rate() != pool_b.sample_rate() {
        return Err(DiarError::Config(format!(
            "pool sample rates differ: {} vs {}",
            pool_a.sample_rate(),
            pool_b.sample_rate()
        )));
    }
    let rate = pool_a.sample_rate();
    let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(params.seed, index));
    let plan = plan_utterance(params, &mut rng);
    let pools = [pool_a, pool_b];

    let fade = (u64::from(params.crossfade_ms) * u64::from(rate) / 1000) as usize;
    let seg_samples: Vec<usize> = plan
        .segments
        .iter()
        .map(|&(_, dur)| ((dur * f64::from(rate)).round() as usize).max(fade + 1))
        .collect();

    let rendered: Vec<Vec<f32>> = plan
        .segments
        .iter()
        .zip(&seg_samples)
        .map(|(&(pool, _), &len)| {
            let mut seg = vec![0.0f32; len];
            fill_from_pool(pools[pool], &mut seg, &mut rng)?;
            Ok(seg)
        })
        .collect::<Result<_>>()?;

    let total: usize = seg_samples.iter().sum::<usize>() - fade * plan.num_changes;
    let mut samples = vec![0.0f32; total];
    let mut turns = Vec::new();
    let mut start = 0usize; // start of the current segment in the output
    let mut turn_start = 0usize; // annotation boundary (overlap midpoint)
    let id = format!("utt{index:04}");
    for (s, seg) in rendered.iter().enumerate() {
        if s > 0 && fade > 0 {
            // Linear crossfade over the overlap region.
            for j in 0..fade {
                let w = (j + 1) as f32 / (fade + 1) as f32;
                samples[start + j] = samples[start + j] * (1.0 - w) + seg[j] * w;
            }
            for (j, &v) in seg.iter().enumerate().skip(fade) {
                samples[start + j] = v;
            }
        } else {
            samples[start..start + seg.len()].copy_from_slice(seg);
        }
        let seg_end = start + seg.len();
        let boundary = if s + 1 < rendered.len() {
            seg_end - fade + fade / 2
        } else {
            total
        };
        turns.push(Turn::new(
            turn_start as f64 / f64::from(rate),
            (boundary - turn_start) as f64 / f64::from(rate),
            &pools[plan.segments[s].0].label,
        )?);
        turn_start = boundary;
        start = seg_end - fade;
    }
    let annotation = Annotation::from_turns(&id, turns)?;
    Ok((AudioBuffer::new(samples, rate, id), annotation))
}

/// One manifest line per generated utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub duration: f64,
    pub num_changes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("#DIAR-MANIFEST v1\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                e.id,
                crate::annot::format_seconds(e.duration),
                e.num_changes,
                e.seed
            );
        }
        out
    }
}

/// Generate a dataset: one WAV per utterance, a combined `reference.rttm`,
/// and `manifest.txt`. Utterances are independent and generated in
/// parallel when the `parallel` feature is on; output is identical either
/// way.
pub fn generate_dataset(
    pool_a: &SourcePool,
    pool_b: &SourcePool,
    params: &SynthParams,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| DiarError::io(out_dir, e))?;
    let results: Vec<(ManifestEntry, Annotation)> = (0..params.num_utterances)
        .maybe_into_par_iter()
        .map(|i| {
            let (audio, annotation) = generate_utterance(pool_a, pool_b, params, i)?;
            write_wav(out_dir.join(format!("{}.wav", audio.id)), &audio)?;
            let entry = ManifestEntry {
                id: audio.id.clone(),
                duration: audio.duration(),
                num_changes: annotation.turns().len() - 1,
                seed: utterance_seed(params.seed, i),
            };
            Ok((entry, annotation))
        })
        .collect::<Result<_>>()?;

    let (entries, annotations): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let manifest = DatasetManifest { entries };
    std::fs::write(out_dir.join("reference.rttm"), rttm_to_string(annotations.iter()))
        .map_err(|e| DiarError::io(out_dir, e))?;
    std::fs::write(out_dir.join("manifest.txt"), manifest.to_text())
        .map_err(|e| DiarError::io(out_dir, e))?;
    Ok(manifest)
}

fn rms_normalize(samples: &mut [f32], target: f32) {
    let rms = (samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>()
        / samples.len() as f64)
        .sqrt() as f32;
    if rms > 0.0 {
        let gain = target / rms;
        for s in samples.iter_mut() {
            *s *= gain;
        }
    }
}

/// Two artificial "languages" for corpus-free testing: band-limited noise
/// (pool A) and harmonic tone complexes with vibrato (pool B).
pub fn toy_pools(sample_rate: u32, seed: u64) -> (SourcePool, SourcePool) {
    let clip_secs = 12.0;
    let len = (clip_secs * f64::from(sample_rate)) as usize;
    let dt = 1.0 / f64::from(sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xA0A0));

    let noise_clips: Vec<AudioBuffer> = (0..4)
        .map(|i| {
            // Sum of random sinusoids confined to 500-2000 Hz.
            let partials: Vec<(f64, f64)> = (0..48)
                .map(|_| {
                    (
                        rng.random_range(500.0..2000.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let mut samples: Vec<f32> = (0..len)
                .map(|t| {
                    let time = t as f64 * dt;
                    partials
                        .iter()
                        .map(|&(f, p)| (std::f64::consts::TAU * f * time + p).sin())
                        .sum::<f64>() as f32
                })
                .collect();
            rms_normalize(&mut samples, 0.15);
            AudioBuffer::new(samples, sample_rate, format!("noise{i}"))
        })
        .collect();

    let f0s = [196.0, 220.0, 246.94, 261.63];
    let tone_clips: Vec<AudioBuffer> = f0s
        .iter()
        .enumerate()
        .map(|(i, &f0)| {
            // 8 harmonics with 1/k amplitudes; 5 Hz vibrato, 3% depth.
            let vibrato_rate = 5.0;
            let depth = 0.03;
            let mut samples: Vec<f32> = (0..len)
                .map(|t| {
                    let time = t as f64 * dt;
                    // Integrated instantaneous frequency f0*(1 + depth*sin(2 pi v t)).
                    let phase = std::f64::consts::TAU
                        * f0
                        * (time
                            + depth * (1.0 - (std::f64::consts::TAU * vibrato_rate * time).cos())
                                / (std::f64::consts::TAU * vibrato_rate));
                    (1..=8)
                        .map(|k| (phase * k as f64).sin() / k as f64)
                        .sum::<f64>() as f32
                })
                .collect();
            rms_normalize(&mut samples, 0.15);
            AudioBuffer::new(samples, sample_rate, format!("tone{i}"))
        })
        .collect();

    (
        SourcePool::new("A", noise_clips).expect("non-empty pool"),
        SourcePool::new("B", tone_clips).expect("non-empty pool"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_pools() -> (SourcePool, SourcePool) {
        // Short deterministic pools; content does not matter for layout tests.
        let mk = |label: &str, value: f32| {
            SourcePool::new(
                label,
                vec![AudioBuffer::new(vec![value; 8000], 16_000, label)],
            )
            .unwrap()
        };
        (mk("A", 0.1), mk("B", -0.1))
    }

    fn quick_params(seed: u64) -> SynthParams {
        SynthParams {
            seg_dur_min: 0.3,
            seg_dur_max: 0.7,
            seed,
            ..SynthParams::default()
        }
    }

    #[test]
    fn single_change_gives_two_alternating_segments() {
        let (a, b) = tiny_pools();
        let params = SynthParams {
            max_changes: 1,
            ..quick_params(5)
        };
        let (audio, ann) = generate_utterance(&a, &b, &params, 0).unwrap();
        assert_eq!(ann.turns().len(), 2);
        assert_ne!(ann.turns()[0].label, ann.turns()[1].label);
        assert!((ann.end() - audio.duration()).abs() < 1e-9);
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, b) = tiny_pools();
        let params = quick_params(1234);
        let (audio1, ann1) = generate_utterance(&a, &b, &params, 3).unwrap();
        let (audio2, ann2) = generate_utterance(&a, &b, &params, 3).unwrap();
        assert_eq!(audio1.samples, audio2.samples);
        assert_eq!(ann1, ann2);
    }

    #[test]
    fn annotations_tile_and_alternate() {
        let (a, b) = tiny_pools();
        let params = quick_params(9);
        for i in 0..20 {
            let (audio, ann) = generate_utterance(&a, &b, &params, i).unwrap();
            let total: f64 = ann.turns().iter().map(|t| t.duration).sum();
            assert!((total - audio.duration()).abs() < 1e-9);
            for pair in ann.turns().windows(2) {
                assert_ne!(pair[0].label, pair[1].label);
                assert!((pair[0].end() - pair[1].onset).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn change_point_count_matches_plan() {
        let (a, b) = tiny_pools();
        let params = quick_params(77);
        for i in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(params.seed, i));
            let plan = plan_utterance(&params, &mut rng);
            let (_, ann) = generate_utterance(&a, &b, &params, i).unwrap();
            assert_eq!(ann.turns().len() - 1, plan.num_changes);
            assert!((1..=5).contains(&plan.num_changes));
        }
    }

    #[test]
    fn mean_segment_duration_is_close_to_five_seconds() {
        // Plan-level law-of-large-numbers check over 4000 utterances.
        let params = SynthParams {
            num_utterances: 4000,
            seed: 2024,
            ..SynthParams::default()
        };
        let mut durations = Vec::new();
        for i in 0..params.num_utterances {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(params.seed, i));
            let plan = plan_utterance(&params, &mut rng);
            durations.extend(plan.segments.iter().map(|&(_, d)| d));
        }
        let mean = durations.iter().sum::<f64>() / durations.len() as f64;
        assert!((4.7..=5.3).contains(&mean), "mean segment duration {mean}");
    }

    #[test]
    fn change_counts_are_uniform_over_one_to_five() {
        let params = SynthParams {
            num_utterances: 4000,
            seed: 31,
            ..SynthParams::default()
        };
        let mut counts = [0usize; 5];
        for i in 0..params.num_utterances {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(params.seed, i));
            let plan = plan_utterance(&params, &mut rng);
            counts[plan.num_changes - 1] += 1;
        }
        let expected = 4000.0 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 0.01 critical value for 4 degrees of freedom.
        assert!(chi2 < 13.2767, "chi-square {chi2}, counts {counts:?}");
    }

    #[test]
    fn secondary_scale_shrinks_pool_b_segments() {
        let params = SynthParams {
            secondary_scale: 0.25,
            seed: 3,
            ..SynthParams::default()
        };
        let mut a_total = 0.0;
        let mut b_total = 0.0;
        for i in 0..500 {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(params.seed, i));
            for (pool, dur) in plan_utterance(&params, &mut rng).segments {
                if pool == 0 {
                    a_total += dur;
                } else {
                    b_total += dur;
                }
            }
        }
        let ratio = a_total / b_total;
        assert!((3.0..5.0).contains(&ratio), "primary/secondary ratio {ratio}");
    }

    #[test]
    fn dataset_writes_wavs_rttm_and_manifest() {
        let (a, b) = tiny_pools();
        let dir = tempdir().unwrap();
        let params = SynthParams {
            num_utterances: 4,
            ..quick_params(8)
        };
        let manifest = generate_dataset(&a, &b, &params, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 4);
        for e in &manifest.entries {
            assert!(dir.path().join(format!("{}.wav", e.id)).exists());
        }
        let rttm = crate::annot::parse_rttm(dir.path().join("reference.rttm")).unwrap();
        assert_eq!(rttm.len(), 4);
        let manifest_text = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest_text.lines().count(), 5); // header + 4 entries

        // Regeneration is byte-identical.
        let dir2 = tempdir().unwrap();
        generate_dataset(&a, &b, &params, dir2.path()).unwrap();
        let again = std::fs::read_to_string(dir2.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest_text, again);
        let rttm1 = std::fs::read_to_string(dir.path().join("reference.rttm")).unwrap();
        let rttm2 = std::fs::read_to_string(dir2.path().join("reference.rttm")).unwrap();
        assert_eq!(rttm1, rttm2);
    }

    #[test]
    fn empty_pool_cannot_fill_a_segment() {
        let empty = SourcePool {
            label: "E".into(),
            clips: vec![AudioBuffer::new(vec![], 16_000, "e")],
        };
        let (_, b) = tiny_pools();
        let params = quick_params(1);
        assert!(matches!(
            generate_utterance(&empty, &b, &params, 0),
            Err(DiarError::InsufficientAudio(_))
        ));
    }

    #[test]
    fn crossfade_keeps_tiling_exact() {
        let (a, b) = tiny_pools();
        let params = SynthParams {
            crossfade_ms: 50,
            ..quick_params(21)
        };
        let (audio, ann) = generate_utterance(&a, &b, &params, 2).unwrap();
        let total: f64 = ann.turns().iter().map(|t| t.duration).sum();
        assert!((total - audio.duration()).abs() < 1e-9);
    }

    #[test]
    fn toy_pools_are_spectrally_distinct() {
        let (a, b) = toy_pools(16_000, 7);
        assert_eq!(a.clips.len(), 4);
        assert_eq!(b.clips.len(), 4);
        // Equal loudness by construction; distinctness is exercised by the
        // pipeline integration tests.
        for clip in a.clips.iter().chain(&b.clips) {
            let rms = (clip
                .samples
                .iter()
                .map(|&s| f64::from(s) * f64::from(s))
                .sum::<f64>()
                / clip.samples.len() as f64)
                .sqrt();
            assert!((rms - 0.15).abs() < 0.01, "rms {rms}");
            assert!(clip.samples.iter().all(|s| s.abs() <= 1.0));
        }
    }
}
