//! Word counting and frequency normalization of the training set.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::vocab::WordFreqTable;

/// Maps a raw corpus frequency to the number of copies kept for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalizer {
    /// `⌊x / d⌋`
    Threshold(u64),
    /// `⌊√x⌋`
    Sqrt,
    /// `⌊log₂ x⌋`
    Log,
    /// constant 1
    One,
}

impl Normalizer {
    pub fn threshold(d: i64) -> Result<Self> {
        if d <= 0 {
            return Err(Error::InvalidArgument(format!("threshold d must be positive, got {d}")));
        }
        Ok(Normalizer::Threshold(d as u64))
    }

    pub fn apply(self, x: u64) -> u64 {
        match self {
            Normalizer::Threshold(d) => x / d,
            Normalizer::Sqrt => isqrt(x),
            Normalizer::Log => {
                if x == 0 {
                    0
                } else {
                    63 - x.leading_zeros() as u64
                }
            }
            Normalizer::One => u64::from(x > 0),
        }
    }
}

fn isqrt(x: u64) -> u64 {
    let mut r = (x as f64).sqrt() as u64;
    while r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    r
}

impl fmt::Display for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalizer::Threshold(d) => write!(f, "threshold({d})"),
            Normalizer::Sqrt => f.write_str("sqrt"),
            Normalizer::Log => f.write_str("log"),
            Normalizer::One => f.write_str("one"),
        }
    }
}

impl FromStr for Normalizer {
    type Err = Error;

    /// Accepts `sqrt`, `log`, `one`, `threshold` (d = 10) or `threshold:<d>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Normalizer::Sqrt),
            "log" => Ok(Normalizer::Log),
            "one" => Ok(Normalizer::One),
            "threshold" => Ok(Normalizer::Threshold(10)),
            _ => match s.strip_prefix("threshold:") {
                Some(d) => Normalizer::threshold(
                    d.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad threshold {d:?}")))?,
                ),
                None => Err(Error::InvalidArgument(format!("unknown normalizer {s:?}"))),
            },
        }
    }
}

/// Counts whitespace-separated tokens, one sentence per line. CRLF is accepted.
pub fn count_reader<R: Read>(reader: R) -> std::io::Result<WordFreqTable> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in BufReader::new(reader).lines() {
        for tok in line?.split_whitespace() {
            match counts.get_mut(tok) {
                Some(c) => *c += 1,
                None => {
                    counts.insert(tok.to_string(), 1);
                }
            }
        }
    }
    Ok(WordFreqTable::from_map(counts))
}

pub fn count_words(corpus_path: impl AsRef<Path>) -> Result<WordFreqTable> {
    let path = corpus_path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    count_reader(file).map_err(|e| Error::io(path, e))
}

/// Applies `norm` to every count and drops words whose normalized count is 0.
pub fn normalize(table: &WordFreqTable, norm: Normalizer) -> Result<WordFreqTable> {
    if let Normalizer::Threshold(0) = norm {
        return Err(Error::InvalidArgument("threshold d must be positive".into()));
    }
    let rows = table
        .rows()
        .iter()
        .map(|(w, q)| (w.clone(), norm.apply(*q)))
        .filter(|(_, nq)| *nq > 0)
        .collect::<HashMap<_, _>>();
    Ok(WordFreqTable::from_map(rows))
}

/// Copies each word `nq` times and shuffles.
pub fn materialize<R: Rng + ?Sized>(table: &WordFreqTable, rng: &mut R) -> Vec<String> {
    let mut words: Vec<String> = Vec::with_capacity(table.total() as usize);
    for (w, nq) in table.rows() {
        words.extend(std::iter::repeat_n(w, *nq as usize).cloned());
    }
    words.shuffle(rng);
    words
}
