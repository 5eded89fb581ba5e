//! Corpus segmentation with one scorer call per distinct word.
//!
//! Output keeps every byte of the input except that each multi-piece word is
//! rewritten as `piece@@ piece@@ piece`, so `sed 's/@@ //g'` restores the
//! original text exactly.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{self, Segmentation, SegmentScores};
use crate::masking::MaskedWord;
use crate::rng;
use crate::scorer::{self, params_hash, ScorerParams};
use crate::vocab::SubwordVocab;

pub const MARKER: &str = "@@";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Segmentations drawn per distinct word.
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n: 10,
            temperature: 10.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("sampler N must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Decodes single words with a trained scorer, counting scorer invocations.
pub struct Segmenter<'a> {
    params: &'a ScorerParams,
    vocab: &'a SubwordVocab,
    calls: AtomicUsize,
    fallbacks: AtomicUsize,
}

impl<'a> Segmenter<'a> {
    pub fn new(params: &'a ScorerParams, vocab: &'a SubwordVocab) -> Result<Self> {
        params.check_vocab(vocab)?;
        Ok(Segmenter {
            params,
            vocab,
            calls: AtomicUsize::new(0),
            fallbacks: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    /// Decode-time scores: the encoder sees the unmasked word.
    pub fn scores(&self, word: &[char]) -> Result<SegmentScores> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        scorer::score_segments(self.params, self.vocab, &MaskedWord::unmasked(word))
    }

    fn fallback(&self, word: &str, err: &Error) -> Segmentation {
        log::warn!("character fallback for {word:?}: {err}");
        self.fallbacks.fetch_add(1, Ordering::Relaxed);
        Segmentation::characters(&word.chars().collect::<Vec<_>>())
    }

    fn decodable(&self, word: &[char]) -> Result<()> {
        if word.len() > lattice::MAX_WORD_LEN {
            return Err(Error::WordTooLong {
                len: word.len(),
                limit: lattice::MAX_WORD_LEN,
            });
        }
        self.vocab.check_word(word)
    }

    /// MAP segmentation; words with unknown characters or over-long words fall
    /// back to single characters.
    pub fn map(&self, word: &str) -> Result<Segmentation> {
        let chars: Vec<char> = word.chars().collect();
        if let Err(e) = self.decodable(&chars) {
            return Ok(self.fallback(word, &e));
        }
        Ok(lattice::viterbi_decode(&self.scores(&chars)?)?.0)
    }

    /// `cfg.n` temperature samples from one scorer call. The sample stream is
    /// keyed by the word itself, so results do not depend on corpus order.
    pub fn samples(&self, word: &str, cfg: &SamplerConfig) -> Result<Vec<Segmentation>> {
        let chars: Vec<char> = word.chars().collect();
        if let Err(e) = self.decodable(&chars) {
            return Ok(vec![self.fallback(word, &e)]);
        }
        let scores = self.scores(&chars)?;
        let mut rng = rng::stream(cfg.seed, &[rng::hash_str(word)]);
        (0..cfg.n)
            .map(|_| lattice::sample_decode(&scores, cfg.temperature, &mut rng))
            .collect()
    }
}

/// Per-word decode results. Entries are written once and never replaced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeCache {
    key: String,
    entries: HashMap<String, Vec<Segmentation>>,
}

const CACHE_HEADER: &str = "#selfseg-cache v1";

impl DecodeCache {
    pub fn new(key: impl Into<String>) -> Self {
        DecodeCache {
            key: key.into(),
            entries: HashMap::new(),
        }
    }

    /// Cache key for MAP decoding with `params` and `vocab`.
    pub fn map_key(params: &ScorerParams, vocab: &SubwordVocab) -> String {
        format!("map:{}:{}", params_hash(params), vocab.hash())
    }

    pub fn sampled_key(params: &ScorerParams, vocab: &SubwordVocab, cfg: &SamplerConfig) -> String {
        format!(
            "sample:{}:{}:{}:{}:{}",
            params_hash(params),
            vocab.hash(),
            cfg.n,
            cfg.temperature,
            cfg.seed
        )
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[Segmentation]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// Inserts unless the word is already cached; returns whether it was inserted.
    pub fn insert(&mut self, word: String, segs: Vec<Segmentation>) -> bool {
        if self.entries.contains_key(&word) {
            return false;
        }
        self.entries.insert(word, segs);
        true
    }

    /// Writes the `word<TAB>segmentation…` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "{CACHE_HEADER}\t{}", self.key).map_err(io)?;
        let mut words: Vec<&String> = self.entries.keys().collect();
        words.sort();
        for w in words {
            write!(out, "{w}").map_err(io)?;
            for s in &self.entries[w] {
                write!(out, "\t{}", s.to_marked()).map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Loads a sidecar; returns an empty cache when it was written under a different key.
    pub fn load(path: impl AsRef<Path>, key: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let Some(stored) = header.strip_prefix(CACHE_HEADER).and_then(|r| r.strip_prefix('\t')) else {
            return Err(Error::parse(path, 1, "missing cache header"));
        };
        let mut cache = DecodeCache::new(key);
        if stored != key {
            log::info!("cache {} was built for another model; ignoring it", path.display());
            return Ok(cache);
        }
        for (n, line) in lines.enumerate() {
            let mut fields = line.split('\t');
            let word = fields.next().unwrap_or_default();
            let segs: Vec<Segmentation> = fields
                .map(|f| Segmentation::from_marked(&f.split(' ').collect::<Vec<_>>()))
                .collect();
            if word.is_empty() || segs.is_empty() || segs.iter().any(|s| s.word() != word) {
                return Err(Error::parse(path, n + 2, "malformed cache entry"));
            }
            cache.insert(word.to_string(), segs);
        }
        Ok(cache)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentStats {
    pub lines: usize,
    /// Word tokens in the input.
    pub tokens: usize,
    /// Sub-word tokens in the output.
    pub subwords: usize,
    pub distinct_words: usize,
    pub scorer_calls: usize,
    pub cache_hits: usize,
    pub fallbacks: usize,
    pub wall_time: Duration,
}

impl SegmentStats {
    pub fn subwords_per_sentence(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.subwords as f64 / self.lines as f64
        }
    }
}

/// How a corpus run picks the segmentation of each token occurrence.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Map,
    Sampled { cfg: SamplerConfig, epoch: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct SegmentOptions {
    /// Score every token occurrence instead of each distinct word once.
    pub disable_cache: bool,
    /// Optional persistent cache sidecar, read before and written after the run.
    pub cache_path: Option<std::path::PathBuf>,
}

fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0;
    std::iter::from_fn(move || {
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let tok = &tail[..len];
        let at = offset + start;
        offset = at + len;
        rest = &tail[len..];
        Some((at, tok))
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut lines = Vec::new();
    loop {
        let mut buf = String::new();
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lines.push(buf);
    }
    Ok(lines)
}

/// Segments a pre-tokenized corpus (`Mode::Map` or sampled regularization).
pub fn segment_file(
    segmenter: &Segmenter<'_>,
    corpus_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    mode: Mode,
    opts: &SegmentOptions,
) -> Result<SegmentStats> {
    let started = Instant::now();
    let corpus_path = corpus_path.as_ref();
    let out_path = out_path.as_ref();
    if let Mode::Sampled { cfg, .. } = mode {
        cfg.validate()?;
    }
    let calls_before = segmenter.calls();
    let fallbacks_before = segmenter.fallbacks();
    let lines = read_lines(corpus_path)?;

    let mut distinct: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut n_tokens = 0;
    for line in &lines {
        for (_, tok) in tokens(line) {
            if tok.contains(MARKER) {
                return Err(Error::MarkerInInput(tok.to_string()));
            }
            n_tokens += 1;
            if !index.contains_key(tok) {
                index.insert(tok, distinct.len());
                distinct.push(tok);
            }
        }
    }

    let key = match mode {
        Mode::Map => DecodeCache::map_key(segmenter.params, segmenter.vocab),
        Mode::Sampled { cfg, .. } => DecodeCache::sampled_key(segmenter.params, segmenter.vocab, &cfg),
    };
    let mut cache = match &opts.cache_path {
        Some(p) if p.exists() => DecodeCache::load(p, &key)?,
        _ => DecodeCache::new(key),
    };

    let decode = |w: &str| -> Result<Vec<Segmentation>> {
        match mode {
            Mode::Map => Ok(vec![segmenter.map(w)?]),
            Mode::Sampled { cfg, .. } => segmenter.samples(w, &cfg),
        }
    };

    let mut cache_hits = 0;
    // Per-occurrence results for the uncached slow path, keyed by (line, token).
    let mut per_occurrence: HashMap<(usize, usize), Vec<Segmentation>> = HashMap::new();
    if opts.disable_cache {
        let occurrences: Vec<(usize, usize, &str)> = lines
            .iter()
            .enumerate()
            .flat_map(|(li, line)| tokens(line).enumerate().map(move |(ti, (_, t))| (li, ti, t)))
            .collect();
        let results: Vec<Vec<Segmentation>> = occurrences
            .par_iter()
            .map(|(_, _, w)| decode(w))
            .collect::<Result<_>>()?;
        for ((li, ti, _), segs) in occurrences.into_iter().zip(results) {
            per_occurrence.insert((li, ti), segs);
        }
    } else {
        let todo: Vec<&str> = distinct.iter().copied().filter(|w| cache.get(w).is_none()).collect();
        cache_hits = distinct.len() - todo.len();
        let results: Vec<Vec<Segmentation>> = todo.par_iter().map(|w| decode(w)).collect::<Result<_>>()?;
        for (w, segs) in todo.into_iter().zip(results) {
            cache.insert(w.to_string(), segs);
        }
    }

    let file = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut out = BufWriter::new(file);
    let mut n_subwords = 0;
    for (li, line) in lines.iter().enumerate() {
        let mut rendered = String::with_capacity(line.len() * 2);
        let mut last = 0;
        for (ti, (at, tok)) in tokens(line).enumerate() {
            rendered.push_str(&line[last..at]);
            let segs = if opts.disable_cache {
                &per_occurrence[&(li, ti)][..]
            } else {
                cache.get(tok).expect("decoded above")
            };
            let seg = match mode {
                Mode::Sampled { cfg, epoch } if segs.len() > 1 => {
                    let mut r = rng::stream(cfg.seed, &[epoch, li as u64, ti as u64]);
                    &segs[r.gen_range(0..segs.len())]
                }
                _ => &segs[0],
            };
            n_subwords += seg.len();
            rendered.push_str(&seg.to_marked());
            last = at + tok.len();
        }
        rendered.push_str(&line[last..]);
        out.write_all(rendered.as_bytes()).map_err(|e| Error::io(out_path, e))?;
    }
    out.flush().map_err(|e| Error::io(out_path, e))?;

    if let Some(p) = &opts.cache_path {
        if !opts.disable_cache {
            cache.save(p)?;
        }
    }

    Ok(SegmentStats {
        lines: lines.len(),
        tokens: n_tokens,
        subwords: n_subwords,
        distinct_words: distinct.len(),
        scorer_calls: segmenter.calls() - calls_before,
        cache_hits,
        fallbacks: segmenter.fallbacks() - fallbacks_before,
        wall_time: started.elapsed(),
    })
}

/// MAP segmentation of a corpus file.
pub fn segment_corpus(
    corpus_path: impl AsRef<Path>,
    params: &ScorerParams,
    vocab: &SubwordVocab,
    out_path: impl AsRef<Path>,
) -> Result<SegmentStats> {
    let seg = Segmenter::new(params, vocab)?;
    segment_file(&seg, corpus_path, out_path, Mode::Map, &SegmentOptions::default())
}

/// Regularized segmentation for one training epoch.
pub fn segment_corpus_regularized(
    corpus_path: impl AsRef<Path>,
    params: &ScorerParams,
    vocab: &SubwordVocab,
    cfg: &SamplerConfig,
    epoch: u64,
    out_path: impl AsRef<Path>,
) -> Result<SegmentStats> {
    let seg = Segmenter::new(params, vocab)?;
    segment_file(
        &seg,
        corpus_path,
        out_path,
        Mode::Sampled { cfg: *cfg, epoch },
        &SegmentOptions::default(),
    )
}

/// Removes continuation markers (`@@ ` and a trailing `@@`).
pub fn strip_markers(text: &str) -> String {
    text.replace("@@ ", "").replace("@@", "")
}

/// Text statistics of an already segmented file.
pub fn stats(segmented_path: impl AsRef<Path>) -> Result<SegmentStats> {
    let path = segmented_path.as_ref();
    let started = Instant::now();
    let lines = read_lines(path)?;
    let mut words = HashMap::<String, ()>::new();
    let mut st = SegmentStats {
        lines: lines.len(),
        ..SegmentStats::default()
    };
    for line in &lines {
        let mut current = String::new();
        for (_, tok) in tokens(line) {
            st.subwords += 1;
            match tok.strip_suffix(MARKER) {
                Some(piece) => current.push_str(piece),
                None => {
                    current.push_str(tok);
                    st.tokens += 1;
                    words.insert(std::mem::take(&mut current), ());
                }
            }
        }
        if !current.is_empty() {
            st.tokens += 1;
            words.insert(current, ());
        }
    }
    st.distinct_words = words.len();
    st.wall_time = started.elapsed();
    Ok(st)
}
