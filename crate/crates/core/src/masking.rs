//! Masked encoder inputs for the self-supervised segmentation objective.
//!
//! Start positions in this module are 0-based. The "first half" of a
//! sequence of length `n` is the index set `0..⌈n/2⌉`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::vocab::SubwordVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskStrategy {
    /// One span of `⌊ratio·T⌋` characters (or scattered positions when not consecutive).
    CharMass,
    /// `⌊τ/2⌋` consecutive sub-words of the initial segmentation.
    SubwordMass,
    /// Each sub-word independently with probability `subword_mask_prob`.
    SubwordMask,
    None,
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "charmass" => Ok(MaskStrategy::CharMass),
            "subwordmass" => Ok(MaskStrategy::SubwordMass),
            "subwordmask" => Ok(MaskStrategy::SubwordMask),
            "none" => Ok(MaskStrategy::None),
            _ => Err(Error::InvalidArgument(format!("unknown mask strategy {s:?}"))),
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::CharMass => "charmass",
            MaskStrategy::SubwordMass => "subwordmass",
            MaskStrategy::SubwordMask => "subwordmask",
            MaskStrategy::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub consecutive: bool,
    pub subword_mask_prob: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            strategy: MaskStrategy::CharMass,
            ratio: 0.5,
            consecutive: true,
            subword_mask_prob: 0.15,
            seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidArgument(format!("mask ratio {} outside [0,1]", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.subword_mask_prob) {
            return Err(Error::InvalidArgument(format!(
                "sub-word mask probability {} outside [0,1]",
                self.subword_mask_prob
            )));
        }
        Ok(())
    }
}

/// A word with some characters replaced by the mask symbol (`None`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedWord {
    original: Vec<char>,
    masked: Vec<Option<char>>,
}

impl MaskedWord {
    pub fn unmasked(word: &[char]) -> Self {
        MaskedWord {
            original: word.to_vec(),
            masked: word.iter().copied().map(Some).collect(),
        }
    }

    fn with_positions(word: &[char], positions: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::unmasked(word);
        for p in positions {
            m.masked[p] = None;
        }
        m
    }

    pub fn original(&self) -> &[char] {
        &self.original
    }

    pub fn masked_chars(&self) -> &[Option<char>] {
        &self.masked
    }

    pub fn mask_positions(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i].is_none()).collect()
    }

    pub fn mask_count(&self) -> usize {
        self.masked.iter().filter(|c| c.is_none()).count()
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }
}

impl fmt::Display for MaskedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.masked {
            match c {
                Some(c) => write!(f, "{c}")?,
                None => f.write_str("_")?,
            }
        }
        Ok(())
    }
}

/// Legal span starts: the first half of `0..n`, intersected with starts that fit
/// a span of `span` items. Falls back to `[0]` when the intersection is empty.
pub fn span_starts(n: usize, span: usize) -> Vec<usize> {
    let half = n.div_ceil(2);
    let fit = n.saturating_sub(span) + 1;
    let starts: Vec<usize> = (0..half.min(fit)).collect();
    if starts.is_empty() {
        vec![0]
    } else {
        starts
    }
}

pub fn char_mask_count(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).floor() as usize).min(len)
}

pub fn mask_char_mass<R: Rng + ?Sized>(word: &[char], cfg: &MaskConfig, rng: &mut R) -> MaskedWord {
    let t = word.len();
    let m = char_mask_count(t, cfg.ratio);
    if m == 0 {
        return MaskedWord::unmasked(word);
    }
    if cfg.consecutive {
        let starts = span_starts(t, m);
        let s = starts[rng.gen_range(0..starts.len())];
        MaskedWord::with_positions(word, s..s + m)
    } else {
        let mut flags = vec![false; t];
        flags[..m].fill(true);
        flags.shuffle(rng);
        MaskedWord::with_positions(word, (0..t).filter(|&i| flags[i]))
    }
}

fn segment_ranges(ends: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut prev = 0;
    ends.iter()
        .map(|&e| {
            let r = prev..e;
            prev = e;
            r
        })
        .collect()
}

/// Masks `⌊τ/2⌋` consecutive segments of the segmentation given by its end offsets.
pub fn mask_subword_mass<R: Rng + ?Sized>(word: &[char], ends: &[usize], rng: &mut R) -> MaskedWord {
    let ranges = segment_ranges(ends);
    let tau = ranges.len();
    let k = tau / 2;
    if k == 0 {
        return MaskedWord::unmasked(word);
    }
    let starts = span_starts(tau, k);
    let s = starts[rng.gen_range(0..starts.len())];
    MaskedWord::with_positions(word, ranges[s..s + k].iter().flat_map(|r| r.clone()))
}

pub fn mask_subword_mask<R: Rng + ?Sized>(
    word: &[char],
    ends: &[usize],
    cfg: &MaskConfig,
    rng: &mut R,
) -> MaskedWord {
    let positions: Vec<usize> = segment_ranges(ends)
        .into_iter()
        .filter(|_| rng.gen_bool(cfg.subword_mask_prob))
        .flatten()
        .collect();
    MaskedWord::with_positions(word, positions)
}

pub fn no_mask(word: &[char]) -> MaskedWord {
    MaskedWord::unmasked(word)
}

/// Masks `word` according to `cfg.strategy`. Sub-word strategies use the
/// greedy longest-match segmentation under `vocab` as the initial split.
pub fn apply_mask<R: Rng + ?Sized>(
    word: &[char],
    vocab: &SubwordVocab,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<MaskedWord> {
    Ok(match cfg.strategy {
        MaskStrategy::CharMass => mask_char_mass(word, cfg, rng),
        MaskStrategy::SubwordMass => mask_subword_mass(word, &vocab.greedy_segment(word)?, rng),
        MaskStrategy::SubwordMask => {
            mask_subword_mask(word, &vocab.greedy_segment(word)?, cfg, rng)
        }
        MaskStrategy::None => no_mask(word),
    })
}
