//! Neural segment scorer and its training loop.
//!
//! The objective for a word `x` with masked input `x_M` is the negative log
//! of the lattice marginal `Σ_seg Π p(segment | x_M, prefix)`. Its gradient
//! with respect to each scored segment is minus that segment's lattice
//! posterior (from the forward-backward pass in [`crate::lattice`]), which is
//! fed into the tape as the seed for back-propagation.

mod checkpoint;
mod graph;
mod model;
mod optim;
pub mod tensor;
mod train;

use rand::Rng;
use rayon::prelude::*;

pub use checkpoint::{from_bytes, load_params, load_params_unchecked, params_hash, save_params, to_bytes};
pub use model::{positions, ScorerConfig, ScorerParams};
pub use optim::Optimizer;
pub use train::{train, EpochReport, Trainer};

use crate::error::{Error, Result};
use crate::lattice::{self, SegmentScores};
use crate::masking::MaskedWord;
use crate::rng;
use crate::vocab::SubwordVocab;
use graph::Graph;
use model::{decoder_ids, encoder_ids, forward, Dropout};
use tensor::Tensor;

/// Full `T × |V|` log-softmax matrix for `word` given its encoder input.
pub fn log_probs(params: &ScorerParams, vocab: &SubwordVocab, masked: &MaskedWord) -> Result<Tensor> {
    let word = masked.original();
    if word.is_empty() {
        return Err(Error::InvalidArgument("empty word".into()));
    }
    let enc = encoder_ids(masked, vocab)?;
    let dec = decoder_ids(word, vocab)?;
    let mut g = Graph::new(params.tensors());
    let out = forward::<rng::Rng>(&mut g, params, enc, dec, None);
    Ok(g.value(out).clone())
}

/// Log-probability of every lattice edge of `masked.original()`: one encoder
/// and one decoder pass, no dropout.
pub fn score_segments(params: &ScorerParams, vocab: &SubwordVocab, masked: &MaskedWord) -> Result<SegmentScores> {
    let lp = log_probs(params, vocab, masked)?;
    SegmentScores::from_log_probs(masked.original(), vocab, &lp.data)
}

/// `-log p(word | masked)` and its gradient with respect to every parameter.
/// `dropout_seed` enables dropout with a mask stream derived from it.
pub fn word_loss_and_grad(
    params: &ScorerParams,
    vocab: &SubwordVocab,
    masked: &MaskedWord,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    let word = masked.original();
    let enc = encoder_ids(masked, vocab)?;
    let dec = decoder_ids(word, vocab)?;
    let mut g = Graph::new(params.tensors());
    let mut stream = dropout_seed.map(|s| rng::stream(s, &[]));
    let drop = stream.as_mut().map(|rng| Dropout {
        p: params.config().dropout,
        rng,
    });
    let out = forward(&mut g, params, enc, dec, drop);
    let lp = g.value(out);
    let scores = SegmentScores::from_log_probs(word, vocab, &lp.data)?;
    let marginal = lattice::marginal_with_posteriors(&scores)?;
    let loss = -marginal.log_z;
    if !loss.is_finite() {
        return Err(non_finite(masked, loss));
    }
    let mut seed = Tensor::zeros(lp.rows, lp.cols);
    for (c, &post) in scores.candidates().iter().zip(&marginal.posteriors) {
        seed.data[c.start * lp.cols + c.id as usize] -= post;
    }
    let mut grads = params.zeros_like();
    g.backward(out, seed, &mut grads);
    Ok((loss, grads))
}

fn non_finite(masked: &MaskedWord, loss: f64) -> Error {
    let word: String = masked.original().iter().collect();
    log::error!("non-finite loss {loss} for word {word:?} (encoder input {masked})");
    Error::NonFiniteLoss { word, loss }
}

/// Words paired with their masked encoder inputs.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub items: Vec<MaskedWord>,
}

impl TrainBatch {
    pub fn new(items: Vec<MaskedWord>) -> Self {
        TrainBatch { items }
    }

    pub fn unmasked<S: AsRef<str>>(words: &[S]) -> Self {
        TrainBatch {
            items: words
                .iter()
                .map(|w| MaskedWord::unmasked(&w.as_ref().chars().collect::<Vec<_>>()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn chars(&self) -> usize {
        self.items.iter().map(MaskedWord::len).sum()
    }
}

/// Mean negative log-marginal over the batch (no dropout).
pub fn loss(params: &ScorerParams, vocab: &SubwordVocab, batch: &TrainBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let losses: Vec<f64> = batch
        .items
        .par_iter()
        .map(|m| {
            let scores = score_segments(params, vocab, m)?;
            let l = -lattice::log_marginal(&scores)?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(non_finite(m, l))
            }
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss and mean gradient over a batch. Per-word results are reduced in
/// batch order, so the result does not depend on the thread count.
pub fn batch_loss_and_grad(
    params: &ScorerParams,
    vocab: &SubwordVocab,
    batch: &TrainBatch,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_word: Vec<(f64, Vec<Tensor>)> = batch
        .items
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let seed = dropout_seed.map(|s| rng::derive_seed(s, &[k as u64]));
            word_loss_and_grad(params, vocab, m, seed)
        })
        .collect::<Result<_>>()?;
    let n = per_word.len() as f64;
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for (l, g) in &per_word {
        total += l;
        for (acc, x) in grads.iter_mut().zip(g) {
            acc.add_assign(x);
        }
    }
    for g in &mut grads {
        g.scale(1.0 / n);
    }
    Ok((total / n, grads))
}

/// One optimizer update on `batch`; returns the pre-update batch loss.
pub fn train_step(
    params: &mut ScorerParams,
    vocab: &SubwordVocab,
    batch: &TrainBatch,
    opt: &mut Optimizer,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grad(params, vocab, batch, dropout_seed)?;
    opt.update(params, &grads);
    Ok(loss)
}

/// Draws a dropout seed for a training step.
pub fn step_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.gen()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn tiny_cfg() -> ScorerConfig {
        ScorerConfig {
            model_dim: 4,
            ff_dim: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            dropout: 0.0,
            ..ScorerConfig::default()
        }
    }

    fn zero_output(params: &mut ScorerParams) {
        for name in ["out.w", "out.b"] {
            params.tensor_mut(name).unwrap().data.fill(0.0);
        }
    }

    #[test]
    fn zeroed_output_layer_is_uniform() {
        let vocab = SubwordVocab::from_subwords(["a", "b", "ab"]).unwrap();
        let mut params = ScorerParams::init(&tiny_cfg(), &vocab).unwrap();
        zero_output(&mut params);
        let s = score_segments(&params, &vocab, &MaskedWord::unmasked(&chars("ab"))).unwrap();
        let expected = -(vocab.len() as f64).ln();
        for c in s.candidates() {
            assert!((c.score - expected).abs() < 1e-12);
        }
        // Two paths: a+b with mass 1/|V|² and ab with mass 1/|V|.
        let v = vocab.len() as f64;
        let l = loss(&params, &vocab, &TrainBatch::unmasked(&["ab"])).unwrap();
        assert!((l + (1.0 / (v * v) + 1.0 / v).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_char_word_has_one_edge() {
        let vocab = SubwordVocab::from_subwords(["a", "b", "ab"]).unwrap();
        let params = ScorerParams::init(&tiny_cfg(), &vocab).unwrap();
        let s = score_segments(&params, &vocab, &MaskedWord::unmasked(&chars("a"))).unwrap();
        assert_eq!(s.candidates().len(), 1);

        let lp = log_probs(&params, &vocab, &MaskedWord::unmasked(&chars("b"))).unwrap();
        let l = loss(&params, &vocab, &TrainBatch::unmasked(&["a", "b"])).unwrap();
        let la = -score_segments(&params, &vocab, &MaskedWord::unmasked(&chars("a"))).unwrap().candidates()[0].score;
        let lb = -lp.at(0, vocab.id("b").unwrap() as usize);
        assert!((l - (la + lb) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rows_are_normalized() {
        let vocab = SubwordVocab::from_subwords(["a", "b", "ab", "ba"]).unwrap();
        let params = ScorerParams::init(&tiny_cfg(), &vocab).unwrap();
        let lp = log_probs(&params, &vocab, &MaskedWord::unmasked(&chars("abba"))).unwrap();
        for r in 0..lp.rows {
            let total: f64 = lp.row(r).iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let vocab = SubwordVocab::from_subwords(["a", "b", "ab"]).unwrap();
        let cfg = ScorerConfig { lr: 0.0, ..tiny_cfg() };
        let mut params = ScorerParams::init(&cfg, &vocab).unwrap();
        let before = params.clone();
        let mut opt = Optimizer::new(&params);
        train_step(&mut params, &vocab, &TrainBatch::unmasked(&["ab", "ba"]), &mut opt, None).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn unknown_character_is_an_error() {
        let vocab = SubwordVocab::from_subwords(["a"]).unwrap();
        let params = ScorerParams::init(&tiny_cfg(), &vocab).unwrap();
        let err = score_segments(&params, &vocab, &MaskedWord::unmasked(&chars("az"))).unwrap_err();
        assert!(matches!(err, Error::UnknownCharacters { .. }));
    }

    #[test]
    fn decoding_is_deterministic() {
        let vocab = SubwordVocab::from_subwords(["a", "b", "ab"]).unwrap();
        let cfg = ScorerConfig { dropout: 0.3, ..tiny_cfg() };
        let params = ScorerParams::init(&cfg, &vocab).unwrap();
        let m = MaskedWord::unmasked(&chars("abab"));
        let a = log_probs(&params, &vocab, &m).unwrap();
        let b = log_probs(&params, &vocab, &m).unwrap();
        assert_eq!(a, b);
    }
}
