//! Segmentation-difference rates between two segmenters.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::Segmentation;
use crate::pipeline::MARKER;
use crate::vocab::WordFreqTable;

/// `Σ_i Σ_j [s1_i ≠ s2_j] / nword²`, comparing boundary positions.
pub fn dif_word(s1: &[Segmentation], s2: &[Segmentation], nword: usize) -> Result<f64> {
    if nword == 0 {
        return Err(Error::InvalidArgument("nword must be positive".into()));
    }
    if s1.len() != nword || s2.len() != nword {
        return Err(Error::InvalidArgument(format!(
            "expected {nword} segmentations per list, got {} and {}",
            s1.len(),
            s2.len()
        )));
    }
    let differing: usize = s1
        .iter()
        .map(|a| s2.iter().filter(|b| a.ends() != b.ends()).count())
        .sum();
    Ok(differing as f64 / (nword * nword) as f64)
}

/// Frequency-weighted mean of per-word rates. Words missing from `freqs`
/// are an error; an all-zero weight total yields 0.
pub fn dif_corpus(per_word: &HashMap<String, f64>, freqs: &WordFreqTable) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, &rate) in per_word {
        let f = freqs
            .get(w)
            .ok_or_else(|| Error::InvalidArgument(format!("no frequency for word {w:?}")))? as f64;
        num += rate * f;
        den += f;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Splits one segmented line back into words with their segmentations.
pub fn parse_segmented_line(line: &str) -> Vec<(String, Segmentation)> {
    let mut out = Vec::new();
    let mut pieces: Vec<&str> = Vec::new();
    for tok in line.split_whitespace() {
        pieces.push(tok);
        if !tok.ends_with(MARKER) {
            let seg = Segmentation::from_marked(&pieces);
            out.push((seg.word(), seg));
            pieces.clear();
        }
    }
    if !pieces.is_empty() {
        let seg = Segmentation::from_marked(&pieces);
        out.push((seg.word(), seg));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Band {
    Frequent,
    Rare,
    OneShot,
}

impl Band {
    pub fn of(freq: u64, split: u64) -> Band {
        if freq > split {
            Band::Frequent
        } else if freq > 1 {
            Band::Rare
        } else {
            Band::OneShot
        }
    }

    pub fn label(self, split: u64) -> String {
        match self {
            Band::Frequent => format!("frequent (>{split})"),
            Band::Rare => format!("rare (2-{split})"),
            Band::OneShot => "one-shot".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordDiff {
    pub word: String,
    pub freq: u64,
    pub rate: f64,
    /// Most common segmentation on each side.
    pub a: Segmentation,
    pub b: Segmentation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffReport {
    pub freq_split: u64,
    pub words: usize,
    pub dif_corpus: f64,
    /// Over words with frequency above the split.
    pub dif_high: f64,
    pub dif_low: f64,
    /// Words with a non-zero rate, by band, then descending frequency.
    pub differing: Vec<WordDiff>,
}

fn mode_of(segs: &[Segmentation]) -> Segmentation {
    let mut counts: BTreeMap<&Segmentation, usize> = BTreeMap::new();
    for s in segs {
        *counts.entry(s).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|(_, c)| *c == best).map(|(s, _)| s.clone()).expect("non-empty")
}

/// Compares two segmentations of the same corpus, line by line and token by
/// token. Word frequencies are occurrence counts in `orig` when given,
/// otherwise in the segmented corpora themselves.
pub fn diff_report(seg_a: &str, seg_b: &str, orig: Option<&str>, freq_split: u64) -> Result<DiffReport> {
    let lines_a: Vec<&str> = seg_a.lines().collect();
    let lines_b: Vec<&str> = seg_b.lines().collect();
    if lines_a.len() != lines_b.len() {
        return Err(Error::InvalidArgument(format!(
            "line counts differ: {} vs {}",
            lines_a.len(),
            lines_b.len()
        )));
    }
    let orig_lines: Option<Vec<&str>> = orig.map(|o| o.lines().collect());
    if let Some(o) = &orig_lines {
        if o.len() != lines_a.len() {
            return Err(Error::InvalidArgument(format!(
                "original corpus has {} lines, segmented corpora {}",
                o.len(),
                lines_a.len()
            )));
        }
    }

    let mut occ: HashMap<String, (Vec<Segmentation>, Vec<Segmentation>)> = HashMap::new();
    for (n, (la, lb)) in lines_a.iter().zip(&lines_b).enumerate() {
        let wa = parse_segmented_line(la);
        let wb = parse_segmented_line(lb);
        let same_words = wa.len() == wb.len() && wa.iter().zip(&wb).all(|(x, y)| x.0 == y.0);
        if !same_words {
            return Err(Error::InvalidArgument(format!("line {}: segmented words differ", n + 1)));
        }
        if let Some(o) = &orig_lines {
            let ow: Vec<&str> = o[n].split_whitespace().collect();
            if ow.len() != wa.len() || ow.iter().zip(&wa).any(|(x, y)| *x != y.0) {
                return Err(Error::InvalidArgument(format!(
                    "line {}: segmented words do not match the original",
                    n + 1
                )));
            }
        }
        for ((w, sa), (_, sb)) in wa.into_iter().zip(wb) {
            let e = occ.entry(w).or_default();
            e.0.push(sa);
            e.1.push(sb);
        }
    }

    let freqs = WordFreqTable::from_rows(occ.iter().map(|(w, (a, _))| (w.clone(), a.len() as u64)));
    let rates: Vec<(String, f64)> = occ
        .par_iter()
        .map(|(w, (a, b))| Ok((w.clone(), dif_word(a, b, a.len())?)))
        .collect::<Result<_>>()?;
    let rates: HashMap<String, f64> = rates.into_iter().collect();

    let band_rate = |pred: &dyn Fn(u64) -> bool| -> Result<f64> {
        let sub: HashMap<String, f64> = rates
            .iter()
            .filter(|(w, _)| pred(freqs.get(w).unwrap_or(0)))
            .map(|(w, r)| (w.clone(), *r))
            .collect();
        dif_corpus(&sub, &freqs)
    };

    let mut differing: Vec<WordDiff> = rates
        .iter()
        .filter(|(_, &r)| r > 0.0)
        .map(|(w, &rate)| {
            let (a, b) = &occ[w];
            WordDiff {
                word: w.clone(),
                freq: freqs.get(w).unwrap_or(0),
                rate,
                a: mode_of(a),
                b: mode_of(b),
            }
        })
        .collect();
    differing.sort_by(|x, y| {
        Band::of(x.freq, freq_split)
            .cmp(&Band::of(y.freq, freq_split))
            .then(y.freq.cmp(&x.freq))
            .then(x.word.cmp(&y.word))
    });

    Ok(DiffReport {
        freq_split,
        words: rates.len(),
        dif_corpus: dif_corpus(&rates, &freqs)?,
        dif_high: band_rate(&|f| f > freq_split)?,
        dif_low: band_rate(&|f| f <= freq_split)?,
        differing,
    })
}

/// Reads the three files and builds the report.
pub fn diff_files(a: &Path, b: &Path, orig: Option<&Path>, freq_split: u64) -> Result<DiffReport> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let orig = orig.map(read).transpose()?;
    diff_report(&read(a)?, &read(b)?, orig.as_deref(), freq_split)
}

impl DiffReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Segmentation differences\n");
        let _ = writeln!(s, "| metric | value |\n|---|---|");
        let _ = writeln!(s, "| distinct words | {} |", self.words);
        let _ = writeln!(s, "| DIF_corpus | {:.4} |", self.dif_corpus);
        let _ = writeln!(s, "| DIF high (freq > {}) | {:.4} |", self.freq_split, self.dif_high);
        let _ = writeln!(s, "| DIF low (freq <= {}) | {:.4} |", self.freq_split, self.dif_low);
        let mut current = None;
        for d in &self.differing {
            let band = Band::of(d.freq, self.freq_split);
            if current != Some(band) {
                let _ = writeln!(s, "\n## {}\n", band.label(self.freq_split));
                let _ = writeln!(s, "| word | freq | DIF | A | B |\n|---|---|---|---|---|");
                current = Some(band);
            }
            let _ = writeln!(s, "| {} | {} | {:.4} | {} | {} |", d.word, d.freq, d.rate, d.a, d.b);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("word,freq,band,dif,a,b\n");
        for d in &self.differing {
            let band = match Band::of(d.freq, self.freq_split) {
                Band::Frequent => "frequent",
                Band::Rare => "rare",
                Band::OneShot => "one-shot",
            };
            let _ = writeln!(s, "{},{},{},{},{},{}", csv_field(&d.word), d.freq, band, d.rate, csv_field(&d.a.to_string()), csv_field(&d.b.to_string()));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
