//! Diarization toolkit for code-switched speech.
//!
//! Segments and labels the mono-language (or mono-speaker) regions of an
//! utterance using implicit modeling only: no transcripts, no phoneme
//! inventories. Three routes produce an [`annot::Annotation`]:
//!
//! 1. **Change-point** ([`diarize::changepoint_diarize`]): STE VAD → MFCC →
//!    sliding window embeddings → divergence contour → smoothed/thresholded
//!    peak picking → per-segment embeddings → AHC.
//! 2. **Fixed-window clustering** ([`diarize::uniform_diarize`]): the same
//!    front end, but windows are clustered directly and every voiced frame
//!    takes the label of its nearest window.
//! 3. **Label-sequence ingestion** ([`diarize::labels_to_annotation`]): a
//!    per-step label stream from an external end-to-end model is converted
//!    to timed turns.
//!
//! The [`synth`] module generates code-switch test material with exact
//! ground truth, and [`metrics`] scores hypotheses (DER, JER, frame
//! accuracy, EER, confusion matrix) against RTTM references.
//!
//! Embeddings default to deterministic statistics pooling; externally
//! computed vectors (x-vector, wav2vec, ...) enter through the text format
//! read by [`embed::load_embeddings`].
//!
//! With the `parallel` feature (on by default) the per-frame, per-window and
//! per-utterance loops run on rayon; without it the same code compiles to
//! plain sequential iterators. Results are identical either way.

pub mod annot;
pub mod audio;
pub mod changepoint;
pub mod diarize;
pub mod embed;
mod error;
pub mod features;
pub mod metrics;
pub(crate) mod par;
pub mod score;
pub mod synth;
pub mod vad;

pub use error::{DiarError, Result};
