//! Sub-word vocabulary, BPE construction and the word-frequency table.
//!
//! Ids `0..4` are reserved for the special symbols (`<mask>`, `<s>`, `</s>`,
//! `<pad>`). Every other entry is a lattice-eligible sub-word, and every
//! character occurring in such an entry is itself an entry, so any word over
//! known characters has at least the all-characters segmentation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MASK: &str = "<mask>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const SPECIALS: [&str; 4] = [MASK, BOS, EOS, PAD];

pub const MASK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const PAD_ID: u32 = 3;

const HEADER: &str = "#selfseg-vocab v1";

/// Word → corpus frequency, kept in descending-frequency then lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordFreqTable {
    rows: Vec<(String, u64)>,
}

impl WordFreqTable {
    /// Builds a table from arbitrary rows. Duplicate words are summed.
    pub fn from_rows<I, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut merged: HashMap<String, u64> = HashMap::new();
        for (w, f) in rows {
            *merged.entry(w.into()).or_default() += f;
        }
        Self::from_map(merged)
    }

    pub(crate) fn from_map(map: HashMap<String, u64>) -> Self {
        let mut rows: Vec<_> = map.into_iter().collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        WordFreqTable { rows }
    }

    pub fn rows(&self) -> &[(String, u64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|(_, f)| f).sum()
    }

    pub fn get(&self, word: &str) -> Option<u64> {
        self.rows.iter().find(|(w, _)| w == word).map(|(_, f)| *f)
    }

    pub fn to_map(&self) -> HashMap<&str, u64> {
        self.rows.iter().map(|(w, f)| (w.as_str(), *f)).collect()
    }

    /// Writes `<word>\t<count>` lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for (w, f) in &self.rows {
            writeln!(out, "{w}\t{f}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut seen = HashSet::new();
        let mut rows = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected `<word>\\t<count>`"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad count {count:?}")))?;
            if word.is_empty() {
                return Err(Error::parse(path, lineno, "empty word"));
            }
            if !seen.insert(word.to_string()) {
                return Err(Error::parse(path, lineno, format!("duplicate word {word:?}")));
            }
            rows.push((word.to_string(), count));
        }
        Ok(Self::from_rows(rows))
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(char, u32)>,
    id: Option<u32>,
}

/// Trie over *reversed* entries: walking backwards from a lattice position
/// enumerates every vocabulary suffix ending there in `max_subword_len` steps.
#[derive(Debug, Clone)]
struct SuffixTrie {
    nodes: Vec<TrieNode>,
}

impl SuffixTrie {
    fn new() -> Self {
        SuffixTrie {
            nodes: vec![TrieNode::default()],
        }
    }

    fn insert(&mut self, entry: &str, id: u32) {
        let mut node = 0usize;
        for c in entry.chars().rev() {
            let next = match self.nodes[node].children.iter().find(|(k, _)| *k == c) {
                Some(&(_, n)) => n as usize,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.push((c, n as u32));
                    n
                }
            };
            node = next;
        }
        self.nodes[node].id = Some(id);
    }

    fn child(&self, node: usize, c: char) -> Option<usize> {
        self.nodes[node]
            .children
            .iter()
            .find(|(k, _)| *k == c)
            .map(|&(_, n)| n as usize)
    }
}

/// Finite sub-word vocabulary with O(max_subword_len) candidate lookup.
#[derive(Debug, Clone)]
pub struct SubwordVocab {
    entries: Vec<String>,
    index: HashMap<String, u32>,
    max_subword_len: usize,
    trie: SuffixTrie,
}

impl PartialEq for SubwordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for SubwordVocab {}

impl SubwordVocab {
    /// Builds a vocabulary from sub-words (specials are prepended automatically).
    ///
    /// Characters of every sub-word are added when missing so the character
    /// closure invariant holds. Duplicates are rejected.
    pub fn from_subwords<I, S>(subwords: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: HashSet<String> = entries.iter().cloned().collect();
        let mut pending_chars = Vec::new();
        for sw in subwords {
            let sw = sw.as_ref();
            if sw.is_empty() || sw.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid sub-word {sw:?}")));
            }
            if !seen.insert(sw.to_string()) {
                return Err(Error::InvalidArgument(format!("duplicate sub-word {sw:?}")));
            }
            entries.push(sw.to_string());
            pending_chars.extend(sw.chars());
        }
        for c in pending_chars {
            let s = c.to_string();
            if seen.insert(s.clone()) {
                entries.push(s);
            }
        }
        Ok(Self::from_entries_unchecked(entries))
    }

    fn from_entries_unchecked(entries: Vec<String>) -> Self {
        let mut trie = SuffixTrie::new();
        let mut index = HashMap::with_capacity(entries.len());
        let mut max_subword_len = 0;
        for (id, e) in entries.iter().enumerate() {
            index.insert(e.clone(), id as u32);
            if id >= SPECIALS.len() {
                trie.insert(e, id as u32);
                max_subword_len = max_subword_len.max(e.chars().count());
            }
        }
        SubwordVocab {
            entries,
            index,
            max_subword_len,
            trie,
        }
    }

    /// Total number of entries including special symbols.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_subword_len(&self) -> usize {
        self.max_subword_len
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn subword(&self, id: u32) -> &str {
        &self.entries[id as usize]
    }

    pub fn id(&self, subword: &str) -> Option<u32> {
        self.index.get(subword).copied()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Id of a single character, if it is a (non-special) entry.
    pub fn char_id(&self, c: char) -> Option<u32> {
        let mut buf = [0u8; 4];
        self.id(c.encode_utf8(&mut buf)).filter(|&id| !Self::is_special(id))
    }

    /// True when `s` is a lattice-eligible sub-word.
    pub fn contains(&self, s: &str) -> bool {
        self.id(s).is_some_and(|id| !Self::is_special(id))
    }

    /// Characters of `word` that are not vocabulary entries, deduplicated in order.
    pub fn unknown_chars(&self, word: &[char]) -> Vec<char> {
        let mut out = Vec::new();
        for &c in word {
            if self.char_id(c).is_none() && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    pub fn check_word(&self, word: &[char]) -> Result<()> {
        let chars = self.unknown_chars(word);
        if chars.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownCharacters {
                word: word.iter().collect(),
                chars,
            })
        }
    }

    /// Calls `f(start, id)` for every entry equal to `word[start..end]`, in
    /// descending `start` order. Returns the number of trie steps taken.
    pub fn for_each_ending_at(&self, word: &[char], end: usize, mut f: impl FnMut(usize, u32)) -> usize {
        let mut node = 0usize;
        let mut steps = 0;
        let mut start = end;
        while start > 0 {
            start -= 1;
            steps += 1;
            match self.trie.child(node, word[start]) {
                Some(n) => node = n,
                None => break,
            }
            if let Some(id) = self.trie.nodes[node].id {
                f(start, id);
            }
        }
        steps
    }

    /// Starts `j` (0-based, ascending) such that `word[j..end]` is a vocabulary sub-word.
    pub fn valid_segments(&self, word: &[char], end: usize) -> Result<Vec<usize>> {
        if end == 0 || end > word.len() {
            return Err(Error::InvalidArgument(format!(
                "end {end} outside 1..={}",
                word.len()
            )));
        }
        self.check_word(word)?;
        let mut starts = Vec::new();
        self.for_each_ending_at(word, end, |j, _| starts.push(j));
        starts.reverse();
        Ok(starts)
    }

    /// Greedy longest-match segmentation, used as the initial segmentation for
    /// sub-word masking strategies. Returns segment end offsets.
    pub fn greedy_segment(&self, word: &[char]) -> Result<Vec<usize>> {
        self.check_word(word)?;
        let mut ends = Vec::new();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < word.len() {
            let mut best = pos + 1;
            let limit = (pos + self.max_subword_len).min(word.len());
            buf.clear();
            for (k, &c) in word[pos..limit].iter().enumerate() {
                buf.push(c);
                if self.contains(&buf) {
                    best = pos + k + 1;
                }
            }
            ends.push(best);
            pos = best;
        }
        Ok(ends)
    }

    fn serialize(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        for (id, e) in self.entries.iter().enumerate() {
            let _ = writeln!(s, "{e}\t{id}");
        }
        s
    }

    /// Hex SHA-256 of the serialized vocabulary, embedded in checkpoints.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.split('\n');
        if lines.next() != Some(HEADER) {
            return Err(Error::parse(path, 1, format!("missing header `{HEADER}`")));
        }
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let (sub, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected `<subword>\\t<id>`"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad id {id:?}")))?;
            if sub.is_empty() || sub.chars().any(char::is_whitespace) {
                return Err(Error::parse(path, lineno, format!("invalid sub-word {sub:?}")));
            }
            if !seen.insert(sub.to_string()) {
                return Err(Error::parse(path, lineno, format!("duplicate sub-word {sub:?}")));
            }
            if id != entries.len() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("id {id} out of sequence, expected {}", entries.len()),
                ));
            }
            if id < SPECIALS.len() && sub != SPECIALS[id] {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("id {id} is reserved for {}", SPECIALS[id]),
                ));
            }
            entries.push(sub.to_string());
        }
        if entries.len() < SPECIALS.len() {
            return Err(Error::parse(path, 1, "special symbols missing"));
        }
        let vocab = Self::from_entries_unchecked(entries);
        for e in &vocab.entries[SPECIALS.len()..] {
            for c in e.chars() {
                if vocab.char_id(c).is_none() {
                    return Err(Error::parse(
                        path,
                        1,
                        format!("character {c:?} of {e:?} is not an entry"),
                    ));
                }
            }
        }
        Ok(vocab)
    }
}

/// Learns a BPE vocabulary of (at most) `target_size` entries, specials included.
///
/// Each step merges the adjacent pair with the highest corpus frequency; ties
/// go to the lexicographically smallest merged string, then the smallest left
/// part. Learning stops early when no pair remains.
pub fn build_bpe_vocab(table: &WordFreqTable, target_size: usize) -> Result<SubwordVocab> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }

    let mut chars: Vec<char> = table
        .rows()
        .iter()
        .flat_map(|(w, _)| w.chars())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    chars.sort_unstable();
    let minimum = chars.len() + SPECIALS.len();
    if target_size < minimum {
        return Err(Error::VocabTooSmall {
            requested: target_size,
            minimum,
        });
    }

    // Symbol table for the learner (indices into `symbols`).
    let mut symbols: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    let mut symbol_index: HashMap<String, u32> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let char_index: HashMap<char, u32> = chars.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();

    let mut words: Vec<(Vec<u32>, u64)> = table
        .rows()
        .iter()
        .map(|(w, f)| (w.chars().map(|c| char_index[&c]).collect(), *f))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let key = (p[0], p[1]);
            *pair_counts.entry(key).or_default() += *f as i64;
            pair_words.entry(key).or_default().insert(wi);
        }
    }

    let mut vocab_size = minimum;
    let mut learned: Vec<String> = Vec::new();
    while vocab_size < target_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&(a, b), &c)| {
                let merged = format!("{}{}", symbols[a as usize], symbols[b as usize]);
                (c, merged, a, b)
            })
            .min_by(|x, y| {
                y.0.cmp(&x.0)
                    .then_with(|| x.1.cmp(&y.1))
                    .then_with(|| symbols[x.2 as usize].cmp(&symbols[y.2 as usize]))
            });
        let Some((_, merged, a, b)) = best else { break };

        let new_sym = match symbol_index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = symbols.len() as u32;
                symbols.push(merged.clone());
                symbol_index.insert(merged.clone(), id);
                learned.push(merged);
                vocab_size += 1;
                id
            }
        };

        let affected: Vec<usize> = {
            let mut v: Vec<usize> = pair_words
                .get(&(a, b))
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default();
            v.sort_unstable();
            v
        };
        for wi in affected {
            let (syms, f) = &mut words[wi];
            let f = *f as i64;
            for p in syms.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).unwrap() -= f;
            }
            let mut merged_syms = Vec::with_capacity(syms.len());
            let mut k = 0;
            while k < syms.len() {
                if k + 1 < syms.len() && syms[k] == a && syms[k + 1] == b {
                    merged_syms.push(new_sym);
                    k += 2;
                } else {
                    merged_syms.push(syms[k]);
                    k += 1;
                }
            }
            *syms = merged_syms;
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += f;
                pair_words.entry(key).or_default().insert(wi);
            }
        }
        pair_counts.retain(|_, c| *c > 0);
    }

    let ordered: BTreeMap<usize, &String> = learned.iter().enumerate().collect();
    let subwords = chars
        .iter()
        .map(|c| c.to_string())
        .chain(ordered.into_values().cloned());
    SubwordVocab::from_subwords(subwords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn single_merge_on_repeated_char() {
        let table = WordFreqTable::from_rows([("aa", 10)]);
        let v = build_bpe_vocab(&table, 1 + SPECIALS.len() + 1).unwrap();
        assert!(v.contains("a"));
        assert!(v.contains("aa"));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn highest_pair_frequency_wins() {
        let table = WordFreqTable::from_rows([("ab", 5), ("ac", 3)]);
        let v = build_bpe_vocab(&table, 3 + SPECIALS.len() + 1).unwrap();
        assert!(v.contains("ab"));
        assert!(!v.contains("ac"));
    }

    #[test]
    fn tie_breaks_on_merged_string() {
        let table = WordFreqTable::from_rows([("xy", 4), ("ab", 4)]);
        let v = build_bpe_vocab(&table, 4 + SPECIALS.len() + 1).unwrap();
        assert!(v.contains("ab"));
        assert!(!v.contains("xy"));
    }

    #[test]
    fn merges_exhaust_before_target() {
        let table = WordFreqTable::from_rows([("ab", 1)]);
        let v = build_bpe_vocab(&table, 100).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 3);
    }

    #[test]
    fn vocab_errors() {
        assert!(matches!(
            build_bpe_vocab(&WordFreqTable::default(), 10),
            Err(Error::EmptyTable)
        ));
        let table = WordFreqTable::from_rows([("abc", 1)]);
        match build_bpe_vocab(&table, 5) {
            Err(Error::VocabTooSmall { minimum, .. }) => assert_eq!(minimum, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn valid_segments_examples() {
        let v = SubwordVocab::from_subwords(["a", "b", "ab"]).unwrap();
        assert_eq!(v.valid_segments(&chars("ab"), 2).unwrap(), vec![0, 1]);
        let v = SubwordVocab::from_subwords(["a", "b"]).unwrap();
        assert_eq!(v.valid_segments(&chars("ab"), 2).unwrap(), vec![1]);
        let v = SubwordVocab::from_subwords(["watch", "ing", "wat", "ching"]).unwrap();
        let starts = v.valid_segments(&chars("watching"), 8).unwrap();
        assert!(starts.contains(&5), "start of `ing`");
        assert!(starts.contains(&3), "start of `ching`");
    }

    #[test]
    fn unknown_characters_are_listed() {
        let v = SubwordVocab::from_subwords(["a"]).unwrap();
        match v.valid_segments(&chars("abzb"), 1) {
            Err(Error::UnknownCharacters { chars, .. }) => assert_eq!(chars, vec!['b', 'z']),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn specials_are_not_segments() {
        let v = SubwordVocab::from_subwords(["<", "s", ">"]).unwrap();
        assert!(!v.contains(BOS));
        assert_eq!(v.valid_segments(&chars("<s>"), 3).unwrap(), vec![2]);
        assert_eq!(v.max_subword_len(), 1);
    }

    #[test]
    fn greedy_longest_match() {
        let v = SubwordVocab::from_subwords(["watch", "ing", "wat", "ching"]).unwrap();
        assert_eq!(v.greedy_segment(&chars("watching")).unwrap(), vec![5, 8]);
    }

    #[test]
    fn load_errors_cite_lines() {
        let p = Path::new("v.txt");
        let err = SubwordVocab::parse("<mask>\t0\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        let mut text = String::from("#selfseg-vocab v1\n<mask>\t0\n<s>\t1\n</s>\t2\n<pad>\t3\na\t4\n");
        text.push_str("a\t5\n");
        let err = SubwordVocab::parse(&text, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");

        let err = SubwordVocab::parse("#selfseg-vocab v1\n<mask>\t0\n<s>\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = SubwordVocab::from_subwords(["ab", "cd", "é"]).unwrap();
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("#selfseg-vocab v1\n"));
        let back = SubwordVocab::load(&path).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
        assert_eq!(back.max_subword_len(), 2);
    }

    #[test]
    fn freq_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("freq.tsv");
        let t = WordFreqTable::from_rows([("b", 1), ("a", 2), ("c", 1)]);
        assert_eq!(t.rows()[0], ("a".to_string(), 2));
        t.save(&path).unwrap();
        assert_eq!(WordFreqTable::load(&path).unwrap(), t);
    }
}
