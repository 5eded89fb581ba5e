//! Self-supervised sub-word segmentation.
//!
//! A mixed character/sub-word encoder-decoder scores every sub-word that can
//! start at each character prefix of a word. The lattice of all segmentations
//! is then summed (training), maximised (MAP decoding) or sampled with a
//! temperature (segmentation regularization) by dynamic programming.
//!
//! The crate is organised bottom-up:
//!
//! * [`vocab`]: sub-word vocabulary, BPE learner and the word-frequency table.
//! * [`freqnorm`]: counting and frequency normalization of training words.
//! * [`masking`]: masked encoder inputs for the self-supervised objective.
//! * [`lattice`]: marginal, Viterbi and sampling recursions plus brute-force oracles.
//! * [`scorer`]: the neural model, its training loop and checkpoints.
//! * [`pipeline`]: corpus segmentation with per-word caching.
//! * [`metrics`]: segmentation difference rates.

pub mod error;
pub mod freqnorm;
pub mod lattice;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scorer;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
pub use freqnorm::{count_words, materialize, normalize, Normalizer};
pub use lattice::{Segmentation, SegmentScores};
pub use masking::{MaskConfig, MaskStrategy, MaskedWord};
pub use pipeline::{DecodeCache, SamplerConfig, SegmentStats};
pub use scorer::{ScorerConfig, ScorerParams};
pub use vocab::{SubwordVocab, WordFreqTable};
