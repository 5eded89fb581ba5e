//! Synthetic corpora: Zipfian word streams and a stem × suffix morphology.

use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::vocab::WordFreqTable;

/// Unnormalized Zipf weights `1 / rank^exponent` for ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "pl", "st"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "m", "k"];

/// Distinct pronounceable pseudo-words of `syllables` CV(C) syllables each.
pub fn pseudo_words<R: Rng + ?Sized>(n: usize, syllables: std::ops::RangeInclusive<usize>, rng: &mut R) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(syllables.clone());
        let w: String = (0..k)
            .map(|_| {
                format!(
                    "{}{}{}",
                    ONSETS.choose(rng).unwrap(),
                    NUCLEI.choose(rng).unwrap(),
                    CODAS.choose(rng).unwrap()
                )
            })
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Draws `n_tokens` tokens over `types` with Zipfian rank frequencies.
pub fn zipf_tokens<R: Rng + ?Sized>(types: &[String], n_tokens: usize, exponent: f64, rng: &mut R) -> Vec<String> {
    let dist = WeightedIndex::new(zipf_weights(types.len(), exponent)).expect("non-empty types");
    (0..n_tokens).map(|_| types[dist.sample(rng)].clone()).collect()
}

/// Groups tokens into sentences of random length in `len`.
pub fn sentences<R: Rng + ?Sized>(tokens: &[String], len: std::ops::RangeInclusive<usize>, rng: &mut R) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = tokens;
    while !rest.is_empty() {
        let k = rng.gen_range(len.clone()).min(rest.len());
        out.push(rest[..k].join(" "));
        rest = &rest[k..];
    }
    out
}

/// A stem × suffix inflection paradigm.
#[derive(Debug, Clone)]
pub struct Morphology {
    pub stems: Vec<String>,
    pub suffixes: Vec<String>,
    /// `(stem index, suffix index)` pairs that never appear in training text.
    pub held_out: Vec<(usize, usize)>,
}

impl Morphology {
    /// Random stems with the given suffixes; one random form per stem in every
    /// `hold_out_every`-th stem is held out.
    pub fn generate<R: Rng + ?Sized>(
        n_stems: usize,
        suffixes: &[&str],
        hold_out_every: usize,
        rng: &mut R,
    ) -> Self {
        let suffixes: Vec<String> = suffixes.iter().map(|s| s.to_string()).collect();
        let mut stems = Vec::with_capacity(n_stems);
        let mut seen: HashSet<String> = HashSet::new();
        // A stem must not be a stem+suffix form of another, or boundaries would be ambiguous.
        while stems.len() < n_stems {
            let cand = pseudo_words(1, 2..=3, rng).pop().unwrap();
            let clash = suffixes.iter().any(|s| cand.ends_with(s.as_str()))
                || seen.iter().any(|s| cand.starts_with(s.as_str()) || s.starts_with(cand.as_str()));
            if !clash {
                seen.insert(cand.clone());
                stems.push(cand);
            }
        }
        let held_out = (0..n_stems)
            .filter(|i| hold_out_every > 0 && i % hold_out_every == 0)
            .map(|i| (i, rng.gen_range(0..suffixes.len())))
            .collect();
        Morphology {
            stems,
            suffixes,
            held_out,
        }
    }

    pub fn form(&self, stem: usize, suffix: usize) -> String {
        format!("{}{}", self.stems[stem], self.suffixes[suffix])
    }

    pub fn is_held_out(&self, stem: usize, suffix: usize) -> bool {
        self.held_out.contains(&(stem, suffix))
    }

    pub fn training_forms(&self) -> Vec<(usize, usize)> {
        (0..self.stems.len())
            .flat_map(|s| (0..self.suffixes.len()).map(move |x| (s, x)))
            .filter(|&(s, x)| !self.is_held_out(s, x))
            .collect()
    }

    /// Word-frequency table of the training forms: Zipfian over stem rank,
    /// scaled per suffix by `suffix_weights`.
    pub fn frequency_table(&self, top_count: f64, exponent: f64, suffix_weights: &[f64]) -> WordFreqTable {
        let stem_w = zipf_weights(self.stems.len(), exponent);
        WordFreqTable::from_rows(self.training_forms().into_iter().map(|(s, x)| {
            let f = (top_count * stem_w[s] * suffix_weights[x]).round().max(1.0) as u64;
            (self.form(s, x), f)
        }))
    }
}
