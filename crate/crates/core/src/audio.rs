//! Audio ingestion and frame decomposition.
//!
//! Mono PCM WAV in, `[-1, 1]` float samples out. Framing uses the usual
//! overlapping layout (default 20 ms frames, 10 ms shift at 16 kHz); a
//! trailing partial frame is dropped rather than zero-padded so per-frame
//! energy statistics stay unbiased.

use std::path::Path;

use crate::{DiarError, Result};

/// Decoded mono audio.
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub id: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32, id: impl Into<String>) -> Self {
        AudioBuffer {
            samples,
            sample_rate,
            id: id.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Overlapping frames cut from an [`AudioBuffer`], stored row-major.
#[derive(Debug, Clone)]
pub struct FrameSet {
    data: Vec<f32>,
    num_frames: usize,
    samples_per_frame: usize,
    pub frame_len_ms: u32,
    pub shift_ms: u32,
    pub sample_rate: u32,
}

impl FrameSet {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn samples_per_frame(&self) -> usize {
        self.samples_per_frame
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let start = i * self.samples_per_frame;
        &self.data[start..start + self.samples_per_frame]
    }

    /// Start time of frame `i` in seconds.
    pub fn frame_time(&self, i: usize) -> f64 {
        i as f64 * f64::from(self.shift_ms) / 1000.0
    }
}

fn samples_for_ms(ms: u32, sample_rate: u32) -> usize {
    ((u64::from(ms) * u64::from(sample_rate) + 500) / 1000) as usize
}

/// Cut `audio` into overlapping frames. The final partial frame is dropped.
pub fn frame_signal(audio: &AudioBuffer, frame_len_ms: u32, shift_ms: u32) -> Result<FrameSet> {
    if shift_ms == 0 || frame_len_ms < shift_ms {
        return Err(DiarError::Config(format!(
            "need frame_len_ms >= shift_ms > 0, got {frame_len_ms}/{shift_ms}"
        )));
    }
    if audio.sample_rate == 0 {
        return Err(DiarError::Config("sample rate must be positive".into()));
    }
    let spf = samples_for_ms(frame_len_ms, audio.sample_rate);
    let shift = samples_for_ms(shift_ms, audio.sample_rate);
    if audio.samples.len() < spf {
        return Err(DiarError::TooShort {
            what: "audio",
            needed: spf,
            got: audio.samples.len(),
        });
    }
    let num_frames = (audio.samples.len() - spf) / shift + 1;
    let mut data = Vec::with_capacity(num_frames * spf);
    for i in 0..num_frames {
        let start = i * shift;
        data.extend_from_slice(&audio.samples[start..start + spf]);
    }
    Ok(FrameSet {
        data,
        num_frames,
        samples_per_frame: spf,
        frame_len_ms,
        shift_ms,
        sample_rate: audio.sample_rate,
    })
}

/// Read a mono PCM WAV file (8/16-bit integer or 32-bit float).
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DiarError::UnsupportedChannels(spec.channels));
    }
    if reader.len() == 0 {
        return Err(DiarError::EmptyAudio);
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 8) => decode_int(reader, 128.0, path)?,
        (hound::SampleFormat::Int, 16) => decode_int(reader, 32768.0, path)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(DiarError::Format {
                what: "wav",
                detail: format!("unsupported sample format {fmt:?}/{bits}-bit"),
            })
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "utt".to_string());
    Ok(AudioBuffer::new(samples, spec.sample_rate, id))
}

fn decode_int(
    reader: hound::WavReader<std::io::BufReader<std::fs::File>>,
    full_scale: f32,
    path: &Path,
) -> Result<Vec<f32>> {
    reader
        .into_samples::<i32>()
        .map(|s| s.map(|v| v as f32 / full_scale))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, err: hound::Error) -> DiarError {
    match err {
        hound::Error::IoError(e) => DiarError::io(path, e),
        other => DiarError::Format {
            what: "wav",
            detail: format!("{}: {other}", path.display()),
        },
    }
}

/// Write 16-bit PCM. Samples are clamped to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &audio.samples {
        let v = (f64::from(s).clamp(-1.0, 1.0) * 32768.0).round() as i32;
        writer
            .write_sample(v.clamp(-32768, 32767) as i16)
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}
