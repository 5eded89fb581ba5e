//! Dynamic programming over all segmentations of a word.
//!
//! Positions are 0-based character offsets; a candidate segment covers
//! `word[start..end]` and is scored `log p(segment | masked word, word[..start])`.
//! `alpha[i]` accumulates over all ways to cover the prefix `word[..i]`:
//! log-sum-exp for the marginal, max for Viterbi, and a temperature-sampled
//! choice for the regularization sampler.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::vocab::SubwordVocab;

/// Longest word accepted by the lattice; longer words fall back to characters.
pub const MAX_WORD_LEN: usize = 512;
/// Longest word the segmentation enumerator accepts.
pub const ENUMERATE_LIMIT: usize = 16;
/// Longest word the sampler-distribution oracle accepts.
pub const SAMPLE_ORACLE_LIMIT: usize = 12;
const SAMPLE_ORACLE_MAX_PATHS: f64 = 2e7;

/// A sequence of sub-words covering a word exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segmentation {
    ends: Vec<usize>,
    segments: Vec<String>,
}

impl Segmentation {
    /// Builds a segmentation from the end offsets of its segments (last = word length).
    pub fn from_ends(word: &[char], ends: Vec<usize>) -> Self {
        let mut prev = 0;
        let segments = ends
            .iter()
            .map(|&e| {
                let s: String = word[prev..e].iter().collect();
                prev = e;
                s
            })
            .collect();
        Segmentation { ends, segments }
    }

    pub fn from_segments<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        let mut acc = 0;
        let ends = segments
            .iter()
            .map(|s| {
                acc += s.chars().count();
                acc
            })
            .collect();
        Segmentation { ends, segments }
    }

    /// Single-character fallback segmentation.
    pub fn characters(word: &[char]) -> Self {
        Self::from_ends(word, (1..=word.len()).collect())
    }

    /// Parses the `@@ `-marked rendering of one word, e.g. `watch@@ ing`.
    pub fn from_marked(tokens: &[&str]) -> Self {
        Self::from_segments(tokens.iter().map(|t| t.strip_suffix("@@").unwrap_or(t)))
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// End offsets of each segment; the last equals the word length.
    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    /// Interior cut positions (segment ends excluding the word end).
    pub fn boundaries(&self) -> &[usize] {
        &self.ends[..self.ends.len().saturating_sub(1)]
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn word(&self) -> String {
        self.segments.concat()
    }

    /// Bitmask of interior cuts: bit `k-1` is set when there is a cut after character `k`.
    pub fn boundary_mask(&self) -> u64 {
        self.boundaries().iter().fold(0, |m, &b| m | 1 << (b - 1))
    }

    /// Renders with the continuation marker: non-final segments get an `@@` suffix.
    pub fn to_marked(&self) -> String {
        let mut out = String::new();
        for (k, s) in self.segments.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            out.push_str(s);
            if k + 1 < self.segments.len() {
                out.push_str("@@");
            }
        }
        out
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("+"))
    }
}

/// A lattice edge: the sub-word `word[start..end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub start: usize,
    pub end: usize,
    pub id: u32,
    pub score: f64,
}

/// Log-scores of every vocabulary sub-word of a word, grouped by end position.
#[derive(Debug, Clone)]
pub struct SegmentScores {
    word: Vec<char>,
    cands: Vec<Candidate>,
    /// `cands[offsets[i]..offsets[i + 1]]` end at position `i` (starts ascending).
    offsets: Vec<usize>,
    lookups: usize,
}

impl SegmentScores {
    /// Enumerates the lattice of `word` under `vocab`, scoring each candidate with
    /// `score(start, end, id)`.
    pub fn build(
        word: &[char],
        vocab: &SubwordVocab,
        mut score: impl FnMut(usize, usize, u32) -> f64,
    ) -> Result<Self> {
        check_len(word)?;
        vocab.check_word(word)?;
        let t = word.len();
        let mut cands = Vec::with_capacity(t * vocab.max_subword_len().min(t));
        let mut offsets = vec![0; t + 2];
        let mut lookups = 0;
        let mut scratch = Vec::new();
        for end in 1..=t {
            offsets[end] = cands.len();
            scratch.clear();
            lookups += vocab.for_each_ending_at(word, end, |start, id| scratch.push((start, id)));
            for &(start, id) in scratch.iter().rev() {
                cands.push(Candidate {
                    start,
                    end,
                    id,
                    score: score(start, end, id),
                });
            }
        }
        offsets[t + 1] = cands.len();
        Ok(SegmentScores {
            word: word.to_vec(),
            cands,
            offsets,
            lookups,
        })
    }

    /// Scores from a row-major `T × vocab_len` matrix of log-probabilities where
    /// row `j` is the distribution of the sub-word starting at `j`.
    pub fn from_log_probs(word: &[char], vocab: &SubwordVocab, log_probs: &[f64]) -> Result<Self> {
        let v = vocab.len();
        if log_probs.len() != word.len() * v {
            return Err(Error::InvalidArgument(format!(
                "score matrix has {} entries, expected {}×{}",
                log_probs.len(),
                word.len(),
                v
            )));
        }
        Self::build(word, vocab, |start, _, id| log_probs[start * v + id as usize])
    }

    pub fn word(&self) -> &[char] {
        &self.word
    }

    pub fn word_len(&self) -> usize {
        self.word.len()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.cands
    }

    pub fn ending_at(&self, end: usize) -> &[Candidate] {
        &self.cands[self.offsets[end]..self.offsets[end + 1]]
    }

    /// Score of `word[start..end]`, if it is a lattice edge.
    pub fn get(&self, start: usize, end: usize) -> Option<f64> {
        self.ending_at(end)
            .iter()
            .find(|c| c.start == start)
            .map(|c| c.score)
    }

    /// Number of vocabulary trie steps spent enumerating the lattice.
    pub fn lookups(&self) -> usize {
        self.lookups
    }

    /// Log-probability of one segmentation under these scores.
    pub fn path_score(&self, seg: &Segmentation) -> Option<f64> {
        let mut prev = 0;
        let mut total = 0.0;
        for &e in seg.ends() {
            total += self.get(prev, e)?;
            prev = e;
        }
        Some(total)
    }
}

fn check_len(word: &[char]) -> Result<()> {
    if word.is_empty() {
        return Err(Error::InvalidArgument("empty word".into()));
    }
    if word.len() > MAX_WORD_LEN {
        return Err(Error::WordTooLong {
            len: word.len(),
            limit: MAX_WORD_LEN,
        });
    }
    Ok(())
}

#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn no_segmentation(scores: &SegmentScores) -> Error {
    Error::NoSegmentation {
        word: scores.word.iter().collect(),
    }
}

fn forward(scores: &SegmentScores) -> Vec<f64> {
    let t = scores.word_len();
    let mut alpha = vec![f64::NEG_INFINITY; t + 1];
    alpha[0] = 0.0;
    for i in 1..=t {
        alpha[i] = scores
            .ending_at(i)
            .iter()
            .fold(f64::NEG_INFINITY, |acc, c| log_add(acc, alpha[c.start] + c.score));
    }
    alpha
}

/// `log Σ_seg Π p(segment | prefix)` by the forward recursion.
pub fn log_marginal(scores: &SegmentScores) -> Result<f64> {
    let log_z = forward(scores)[scores.word_len()];
    if log_z == f64::NEG_INFINITY {
        return Err(no_segmentation(scores));
    }
    Ok(log_z)
}

/// Log-marginal with the posterior probability of every candidate edge, which
/// is also `∂ log_marginal / ∂ score` for that edge.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub log_z: f64,
    /// Aligned with [`SegmentScores::candidates`].
    pub posteriors: Vec<f64>,
}

pub fn marginal_with_posteriors(scores: &SegmentScores) -> Result<Marginal> {
    let t = scores.word_len();
    let alpha = forward(scores);
    let log_z = alpha[t];
    if log_z == f64::NEG_INFINITY {
        return Err(no_segmentation(scores));
    }
    // beta[j]: log-sum over all ways to cover word[j..].
    let mut beta = vec![f64::NEG_INFINITY; t + 1];
    beta[t] = 0.0;
    for end in (1..=t).rev() {
        let b_end = beta[end];
        for c in scores.ending_at(end) {
            beta[c.start] = log_add(beta[c.start], c.score + b_end);
        }
    }
    let posteriors = scores
        .candidates()
        .iter()
        .map(|c| {
            let lp = alpha[c.start] + c.score + beta[c.end] - log_z;
            if lp.is_finite() {
                lp.exp()
            } else {
                0.0
            }
        })
        .collect();
    Ok(Marginal { log_z, posteriors })
}

/// Maximum-probability segmentation. Ties go to the smallest start index,
/// i.e. the longest final segment.
pub fn viterbi_decode(scores: &SegmentScores) -> Result<(Segmentation, f64)> {
    let t = scores.word_len();
    let mut best = vec![f64::NEG_INFINITY; t + 1];
    let mut back = vec![usize::MAX; t + 1];
    best[0] = 0.0;
    for i in 1..=t {
        for c in scores.ending_at(i) {
            let s = best[c.start] + c.score;
            if s > best[i] {
                best[i] = s;
                back[i] = c.start;
            }
        }
    }
    if best[t] == f64::NEG_INFINITY {
        return Err(no_segmentation(scores));
    }
    Ok((retrace(scores.word(), &back), best[t]))
}

fn retrace(word: &[char], back: &[usize]) -> Segmentation {
    let mut ends = Vec::new();
    let mut i = word.len();
    while i > 0 {
        ends.push(i);
        i = back[i];
    }
    ends.reverse();
    Segmentation::from_ends(word, ends)
}

/// Temperature softmax weights over finite `logits`, written into `out`.
fn softmax_weights(logits: &[f64], temperature: f64, out: &mut Vec<f64>) -> f64 {
    out.clear();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &l in logits {
        let w = if l.is_finite() {
            ((l - max) / temperature).exp()
        } else {
            0.0
        };
        total += w;
        out.push(w);
    }
    total
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")))
    }
}

/// Segmentation-regularization sampler.
///
/// At every position `i` a start `j` is drawn with weights
/// `softmax(β / t)` where `β_j = α_j + score(j, i)`, and `α_i` is set to the
/// drawn `β`. The segmentation is retraced from the drawn starts. Every
/// position is sampled, including ones the final retrace never visits.
pub fn sample_decode<R: Rng + ?Sized>(
    scores: &SegmentScores,
    temperature: f64,
    rng: &mut R,
) -> Result<Segmentation> {
    check_temperature(temperature)?;
    let t = scores.word_len();
    let mut alpha = vec![f64::NEG_INFINITY; t + 1];
    let mut back = vec![usize::MAX; t + 1];
    alpha[0] = 0.0;
    let mut betas = Vec::new();
    let mut weights = Vec::new();
    for i in 1..=t {
        let cands = scores.ending_at(i);
        betas.clear();
        betas.extend(cands.iter().map(|c| alpha[c.start] + c.score));
        let total = softmax_weights(&betas, temperature, &mut weights);
        if !(total > 0.0) {
            return Err(no_segmentation(scores));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap();
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 && u < w {
                pick = k;
                break;
            }
            u -= w;
        }
        alpha[i] = betas[pick];
        back[i] = cands[pick].start;
    }
    Ok(retrace(scores.word(), &back))
}

/// Exact distribution induced by [`sample_decode`], by enumerating every joint
/// assignment of the per-position draws. Only for small words.
///
/// The local weights at position `i` depend on the sampled `α` of earlier
/// positions, including positions off the final path, so per-path products of
/// fixed local probabilities would not be exact.
pub fn sample_distribution(scores: &SegmentScores, temperature: f64) -> Result<Vec<(Segmentation, f64)>> {
    check_temperature(temperature)?;
    let t = scores.word_len();
    if t > SAMPLE_ORACLE_LIMIT {
        return Err(Error::OracleLimit(format!(
            "sampler distribution needs T ≤ {SAMPLE_ORACLE_LIMIT}, got {t}"
        )));
    }
    let assignments: f64 = (1..=t).map(|i| scores.ending_at(i).len().max(1) as f64).product();
    if assignments > SAMPLE_ORACLE_MAX_PATHS {
        return Err(Error::OracleLimit(format!(
            "{assignments} joint sampler states exceed {SAMPLE_ORACLE_MAX_PATHS}"
        )));
    }

    struct Walk<'a> {
        scores: &'a SegmentScores,
        temperature: f64,
        alpha: Vec<f64>,
        back: Vec<usize>,
        out: BTreeMap<Vec<usize>, f64>,
    }

    impl Walk<'_> {
        fn go(&mut self, i: usize, prob: f64) {
            let t = self.scores.word_len();
            if i > t {
                let seg = retrace(self.scores.word(), &self.back);
                *self.out.entry(seg.ends().to_vec()).or_default() += prob;
                return;
            }
            let cands = self.scores.ending_at(i);
            let betas: Vec<f64> = cands.iter().map(|c| self.alpha[c.start] + c.score).collect();
            let mut weights = Vec::new();
            let total = softmax_weights(&betas, self.temperature, &mut weights);
            for (k, c) in cands.iter().enumerate() {
                let p = weights[k] / total;
                if p > 0.0 {
                    self.alpha[i] = betas[k];
                    self.back[i] = c.start;
                    self.go(i + 1, prob * p);
                }
            }
        }
    }

    let mut walk = Walk {
        scores,
        temperature,
        alpha: vec![f64::NEG_INFINITY; t + 1],
        back: vec![usize::MAX; t + 1],
        out: BTreeMap::new(),
    };
    walk.alpha[0] = 0.0;
    walk.go(1, 1.0);
    if walk.out.is_empty() {
        return Err(no_segmentation(scores));
    }
    let mut dist: Vec<(Segmentation, f64)> = walk
        .out
        .into_iter()
        .map(|(ends, p)| (Segmentation::from_ends(scores.word(), ends), p))
        .collect();
    dist.sort_by_key(|(s, _)| s.boundary_mask());
    Ok(dist)
}

/// Every segmentation of `word` into vocabulary sub-words, ordered by boundary
/// bitmask ascending.
pub fn enumerate_segmentations(word: &[char], vocab: &SubwordVocab) -> Result<Vec<Segmentation>> {
    let t = word.len();
    if t > ENUMERATE_LIMIT {
        return Err(Error::OracleLimit(format!(
            "enumeration needs T ≤ {ENUMERATE_LIMIT}, got {t}"
        )));
    }
    if t == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut piece = String::new();
    'masks: for mask in 0u32..(1 << (t - 1)) {
        let mut ends = Vec::new();
        let mut start = 0;
        for k in 1..=t {
            if k == t || mask & (1 << (k - 1)) != 0 {
                piece.clear();
                piece.extend(&word[start..k]);
                if !vocab.contains(&piece) {
                    continue 'masks;
                }
                ends.push(k);
                start = k;
            }
        }
        out.push(Segmentation::from_ends(word, ends));
    }
    Ok(out)
}
