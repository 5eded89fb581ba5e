//! Python module `selfseg_py`.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use selfseg::lattice::{self, Segmentation};
use selfseg::masking::MaskConfig;
use selfseg::metrics;
use selfseg::pipeline::{self, SegmentStats, Segmenter};
use selfseg::scorer::{self, ScorerConfig};
use selfseg::{freqnorm, rng, Error, MaskedWord, Normalizer, SamplerConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pieces(seg: &Segmentation) -> Vec<String> {
    seg.segments().to_vec()
}

fn chars(word: &str) -> Vec<char> {
    word.chars().collect()
}

fn stats_dict(st: &SegmentStats) -> HashMap<&'static str, f64> {
    HashMap::from([
        ("lines", st.lines as f64),
        ("tokens", st.tokens as f64),
        ("subwords", st.subwords as f64),
        ("distinct_words", st.distinct_words as f64),
        ("scorer_calls", st.scorer_calls as f64),
        ("cache_hits", st.cache_hits as f64),
        ("fallbacks", st.fallbacks as f64),
        ("subwords_per_sentence", st.subwords_per_sentence()),
        ("wall_time_s", st.wall_time.as_secs_f64()),
    ])
}

#[pyclass(name = "WordFreqTable", frozen)]
struct PyFreqTable(selfseg::WordFreqTable);

#[pymethods]
impl PyFreqTable {
    #[new]
    fn new(counts: HashMap<String, u64>) -> Self {
        PyFreqTable(selfseg::WordFreqTable::from_rows(counts))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        selfseg::WordFreqTable::load(path).map(PyFreqTable).map_err(py_err)
    }

    /// Counts whitespace-separated tokens of a corpus file.
    #[staticmethod]
    fn count(corpus: PathBuf) -> PyResult<Self> {
        freqnorm::count_words(corpus).map(PyFreqTable).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    /// `strategy` is `sqrt`, `log`, `one`, `threshold` or `threshold:<d>`.
    fn normalize(&self, strategy: &str) -> PyResult<Self> {
        let norm: Normalizer = strategy.parse().map_err(py_err)?;
        freqnorm::normalize(&self.0, norm).map(PyFreqTable).map_err(py_err)
    }

    fn materialize(&self, seed: u64) -> Vec<String> {
        freqnorm::materialize(&self.0, &mut rng::stream(seed, &[]))
    }

    fn rows(&self) -> Vec<(String, u64)> {
        self.0.rows().to_vec()
    }

    fn total(&self) -> u64 {
        self.0.total()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Vocab", frozen)]
struct PyVocab(selfseg::SubwordVocab);

#[pymethods]
impl PyVocab {
    /// Sub-words plus the special symbols and every character they use.
    #[new]
    fn new(subwords: Vec<String>) -> PyResult<Self> {
        selfseg::SubwordVocab::from_subwords(subwords).map(PyVocab).map_err(py_err)
    }

    #[staticmethod]
    fn build_bpe(table: &PyFreqTable, size: usize) -> PyResult<Self> {
        selfseg::vocab::build_bpe_vocab(&table.0, size).map(PyVocab).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        selfseg::SubwordVocab::load(path).map(PyVocab).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn entries(&self) -> Vec<String> {
        self.0.entries().to_vec()
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    fn greedy_segment(&self, word: &str) -> PyResult<Vec<String>> {
        let w = chars(word);
        let ends = self.0.greedy_segment(&w).map_err(py_err)?;
        Ok(pieces(&Segmentation::from_ends(&w, ends)))
    }

    /// Every segmentation of `word` into vocabulary entries.
    fn enumerate(&self, word: &str) -> PyResult<Vec<Vec<String>>> {
        let segs = lattice::enumerate_segmentations(&chars(word), &self.0).map_err(py_err)?;
        Ok(segs.iter().map(pieces).collect())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, subword: &str) -> bool {
        self.0.contains(subword)
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    params: scorer::ScorerParams,
    vocab: selfseg::SubwordVocab,
}

impl PyModel {
    fn scores(&self, word: &str) -> PyResult<lattice::SegmentScores> {
        scorer::score_segments(&self.params, &self.vocab, &MaskedWord::unmasked(&chars(word))).map_err(py_err)
    }
}

#[pymethods]
impl PyModel {
    /// Fresh model; `config` is a JSON object of scorer settings (missing keys use defaults).
    #[new]
    #[pyo3(signature = (vocab, config = "{}"))]
    fn new(vocab: &PyVocab, config: &str) -> PyResult<Self> {
        let cfg: ScorerConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let params = scorer::ScorerParams::init(&cfg, &vocab.0).map_err(py_err)?;
        Ok(PyModel {
            params,
            vocab: vocab.0.clone(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, vocab: &PyVocab) -> PyResult<Self> {
        let params = scorer::load_params(path, &vocab.0).map_err(py_err)?;
        Ok(PyModel {
            params,
            vocab: vocab.0.clone(),
        })
    }

    /// Trains on `words` and returns the trained model with per-epoch mean losses.
    #[staticmethod]
    #[pyo3(signature = (words, vocab, config = "{}", mask = "charmass", mask_ratio = 0.5, mask_seed = 0))]
    fn train(
        py: Python<'_>,
        words: Vec<String>,
        vocab: &PyVocab,
        config: &str,
        mask: &str,
        mask_ratio: f64,
        mask_seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let cfg: ScorerConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let mask_cfg = MaskConfig {
            strategy: mask.parse().map_err(py_err)?,
            ratio: mask_ratio,
            seed: mask_seed,
            ..MaskConfig::default()
        };
        let v = vocab.0.clone();
        let (params, reports) = py
            .detach(|| scorer::train(&words, &v, &cfg, &mask_cfg, None))
            .map_err(py_err)?;
        Ok((PyModel { params, vocab: v }, reports.iter().map(|r| r.mean_loss).collect()))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        scorer::save_params(&self.params, path).map_err(py_err)
    }

    fn config(&self) -> String {
        serde_json::to_string(self.params.config()).expect("config serializes")
    }

    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    /// Most probable segmentation.
    fn segment(&self, word: &str) -> PyResult<Vec<String>> {
        let (seg, _) = lattice::viterbi_decode(&self.scores(word)?).map_err(py_err)?;
        Ok(pieces(&seg))
    }

    /// `n` temperature-`t` samples.
    #[pyo3(signature = (word, n = 10, t = 10.0, seed = 0))]
    fn sample(&self, word: &str, n: usize, t: f64, seed: u64) -> PyResult<Vec<Vec<String>>> {
        let scores = self.scores(word)?;
        let mut r = rng::stream(seed, &[rng::hash_str(word)]);
        (0..n)
            .map(|_| lattice::sample_decode(&scores, t, &mut r).map(|s| pieces(&s)).map_err(py_err))
            .collect()
    }

    /// `log p(word)` summed over all segmentations.
    fn log_marginal(&self, word: &str) -> PyResult<f64> {
        lattice::log_marginal(&self.scores(word)?).map_err(py_err)
    }

    fn segment_corpus(&self, py: Python<'_>, input: PathBuf, output: PathBuf) -> PyResult<HashMap<&'static str, f64>> {
        let st = py
            .detach(|| pipeline::segment_corpus(input, &self.params, &self.vocab, output))
            .map_err(py_err)?;
        Ok(stats_dict(&st))
    }

    #[pyo3(signature = (input, output, epoch, n = 10, t = 10.0, seed = 0))]
    fn segment_corpus_regularized(
        &self,
        py: Python<'_>,
        input: PathBuf,
        output: PathBuf,
        epoch: u64,
        n: usize,
        t: f64,
        seed: u64,
    ) -> PyResult<HashMap<&'static str, f64>> {
        let cfg = SamplerConfig {
            n,
            temperature: t,
            seed,
        };
        let st = py
            .detach(|| {
                let seg = Segmenter::new(&self.params, &self.vocab)?;
                pipeline::segment_file(
                    &seg,
                    input,
                    output,
                    pipeline::Mode::Sampled { cfg, epoch },
                    &pipeline::SegmentOptions::default(),
                )
            })
            .map_err(py_err)?;
        Ok(stats_dict(&st))
    }
}

fn to_segs(lists: Vec<Vec<String>>) -> Vec<Segmentation> {
    lists.into_iter().map(Segmentation::from_segments).collect()
}

/// Word difference rate between two occurrence lists of the same word.
#[pyfunction]
fn dif_word(s1: Vec<Vec<String>>, s2: Vec<Vec<String>>) -> PyResult<f64> {
    let n = s1.len();
    metrics::dif_word(&to_segs(s1), &to_segs(s2), n).map_err(py_err)
}

/// Markdown difference report of two segmented texts.
#[pyfunction]
#[pyo3(signature = (a, b, orig = None, freq_split = 5))]
fn diff_report(a: &str, b: &str, orig: Option<&str>, freq_split: u64) -> PyResult<(String, f64)> {
    let r = metrics::diff_report(a, b, orig, freq_split).map_err(py_err)?;
    Ok((r.to_markdown(), r.dif_corpus))
}

/// Statistics of a segmented corpus file.
#[pyfunction]
fn stats(path: PathBuf) -> PyResult<HashMap<&'static str, f64>> {
    pipeline::stats(path).map(|s| stats_dict(&s)).map_err(py_err)
}

#[pymodule]
pub fn selfseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFreqTable>()?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(dif_word, m)?)?;
    m.add_function(wrap_pyfunction!(diff_report, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    Ok(())
}
