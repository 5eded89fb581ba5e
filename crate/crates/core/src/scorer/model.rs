//! Mixed character/sub-word encoder-decoder.
//!
//! The encoder reads the (masked) characters of a word. The decoder reads
//! `<s> x_1 … x_{T-1}`, so decoder position `j` has seen the prefix
//! `word[..j]`, and its output row is a distribution over the whole
//! vocabulary for the sub-word starting at character `j`. Both stacks are
//! pre-norm transformers with sinusoidal positions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::masking::MaskedWord;
use crate::rng;
use crate::vocab::{SubwordVocab, BOS_ID, MASK_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Peak learning rate of the inverse-sqrt schedule.
    pub lr: f64,
    pub warmup_steps: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub epochs: usize,
    /// Upper bound on characters per batch (a batch always holds at least one word).
    pub batch_tokens: usize,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            enc_layers: 4,
            dec_layers: 4,
            model_dim: 256,
            ff_dim: 1024,
            heads: 4,
            dropout: 0.3,
            lr: 5e-4,
            warmup_steps: 4000,
            adam_betas: (0.9, 0.98),
            adam_eps: 1e-8,
            epochs: 50,
            batch_tokens: 4096,
            seed: 1,
        }
    }
}

impl ScorerConfig {
    /// Single-layer encoder and decoder.
    pub fn light() -> Self {
        ScorerConfig {
            enc_layers: 1,
            dec_layers: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.model_dim == 0 || self.ff_dim == 0 || self.heads == 0 {
            return bad("model_dim, ff_dim and heads must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if !(self.lr >= 0.0) {
            return bad(format!("learning rate {} must be non-negative", self.lr));
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ln {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln1: Ln,
    attn: Attn,
    ln2: Ln,
    ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln1: Ln,
    self_attn: Attn,
    ln2: Ln,
    cross: Attn,
    ln3: Ln,
    ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_ln: Ln,
    dec: Vec<DecLayer>,
    dec_ln: Ln,
    out_w: usize,
    out_b: usize,
    specs: Vec<(String, usize, usize, Init)>,
}

impl Layout {
    fn new(cfg: &ScorerConfig, vocab_size: usize) -> Self {
        let d = cfg.model_dim;
        let mut specs = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, init: Init| {
            specs.push((name, rows, cols, init));
            specs.len() - 1
        };
        let embed = add("embed".into(), vocab_size, d, Init::Normal((d as f64).powf(-0.5)));
        let ln = |add: &mut dyn FnMut(String, usize, usize, Init) -> usize, p: &str| Ln {
            g: add(format!("{p}.gamma"), 1, d, Init::Ones),
            b: add(format!("{p}.beta"), 1, d, Init::Zeros),
        };
        let attn = |add: &mut dyn FnMut(String, usize, usize, Init) -> usize, p: &str| Attn {
            wq: add(format!("{p}.wq"), d, d, Init::Xavier),
            bq: add(format!("{p}.bq"), 1, d, Init::Zeros),
            wk: add(format!("{p}.wk"), d, d, Init::Xavier),
            bk: add(format!("{p}.bk"), 1, d, Init::Zeros),
            wv: add(format!("{p}.wv"), d, d, Init::Xavier),
            bv: add(format!("{p}.bv"), 1, d, Init::Zeros),
            wo: add(format!("{p}.wo"), d, d, Init::Xavier),
            bo: add(format!("{p}.bo"), 1, d, Init::Zeros),
        };
        let ff = cfg.ff_dim;
        let ffn = |add: &mut dyn FnMut(String, usize, usize, Init) -> usize, p: &str| Ffn {
            w1: add(format!("{p}.w1"), d, ff, Init::Xavier),
            b1: add(format!("{p}.b1"), 1, ff, Init::Zeros),
            w2: add(format!("{p}.w2"), ff, d, Init::Xavier),
            b2: add(format!("{p}.b2"), 1, d, Init::Zeros),
        };
        let enc = (0..cfg.enc_layers)
            .map(|l| EncLayer {
                ln1: ln(&mut add, &format!("enc.{l}.ln1")),
                attn: attn(&mut add, &format!("enc.{l}.self_attn")),
                ln2: ln(&mut add, &format!("enc.{l}.ln2")),
                ffn: ffn(&mut add, &format!("enc.{l}.ffn")),
            })
            .collect();
        let enc_ln = ln(&mut add, "enc.ln");
        let dec = (0..cfg.dec_layers)
            .map(|l| DecLayer {
                ln1: ln(&mut add, &format!("dec.{l}.ln1")),
                self_attn: attn(&mut add, &format!("dec.{l}.self_attn")),
                ln2: ln(&mut add, &format!("dec.{l}.ln2")),
                cross: attn(&mut add, &format!("dec.{l}.cross_attn")),
                ln3: ln(&mut add, &format!("dec.{l}.ln3")),
                ffn: ffn(&mut add, &format!("dec.{l}.ffn")),
            })
            .collect();
        let dec_ln = ln(&mut add, "dec.ln");
        let out_w = add("out.w".into(), d, vocab_size, Init::Xavier);
        let out_b = add("out.b".into(), 1, vocab_size, Init::Zeros);
        Layout {
            embed,
            enc,
            enc_ln,
            dec,
            dec_ln,
            out_w,
            out_b,
            specs,
        }
    }
}

/// Trained (or initialised) model weights.
///
/// Values are held in `f64` for computation but are always representable as
/// `f32`: initialisation and every optimizer update round to `f32`, so the
/// 32-bit checkpoint format is lossless.
#[derive(Debug, Clone)]
pub struct ScorerParams {
    pub(crate) config: ScorerConfig,
    pub(crate) vocab_size: usize,
    pub(crate) vocab_hash: String,
    pub(crate) tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl PartialEq for ScorerParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab_size == other.vocab_size
            && self.vocab_hash == other.vocab_hash
            && self.tensors == other.tensors
    }
}

pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl ScorerParams {
    /// Seeded initialisation for `vocab`.
    pub fn init(cfg: &ScorerConfig, vocab: &SubwordVocab) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg, vocab.len());
        let mut rng = rng::stream(cfg.seed, &[0x1417]);
        let tensors = layout
            .specs
            .iter()
            .map(|(_, rows, cols, init)| {
                let n = rows * cols;
                let data = match *init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal(std) => (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            round_f32(std * z)
                        })
                        .collect(),
                    Init::Xavier => {
                        let a = (6.0 / (rows + cols) as f64).sqrt();
                        (0..n).map(|_| round_f32(rng.gen_range(-a..a))).collect()
                    }
                };
                Tensor::from_vec(*rows, *cols, data)
            })
            .collect();
        Ok(ScorerParams {
            config: cfg.clone(),
            vocab_size: vocab.len(),
            vocab_hash: vocab.hash(),
            tensors,
            layout,
        })
    }

    pub(crate) fn from_parts(
        config: ScorerConfig,
        vocab_size: usize,
        vocab_hash: String,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab_size);
        if named.len() != layout.specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.specs.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (sname, rows, cols, _)) in named.into_iter().zip(&layout.specs) {
            if &name != sname || t.rows != *rows || t.cols != *cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} ({}×{}) does not match expected {sname} ({rows}×{cols})",
                    t.rows, t.cols
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {name} has non-finite values")));
            }
            tensors.push(t);
        }
        Ok(ScorerParams {
            config,
            vocab_size,
            vocab_hash,
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layout.specs.iter().map(|(n, ..)| n.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.names().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    /// Replaces the training hyper-parameters; the architecture must not change.
    pub fn set_config(&mut self, cfg: ScorerConfig) -> Result<()> {
        cfg.validate()?;
        let shape = |c: &ScorerConfig| (c.enc_layers, c.dec_layers, c.model_dim, c.ff_dim, c.heads);
        if shape(&cfg) != shape(&self.config) {
            return Err(Error::InvalidArgument(
                "layers, dimensions and heads are fixed by the checkpoint".into(),
            ));
        }
        self.config = cfg;
        Ok(())
    }

    pub fn check_vocab(&self, vocab: &SubwordVocab) -> Result<()> {
        let actual = vocab.hash();
        if actual != self.vocab_hash || vocab.len() != self.vocab_size {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                actual,
            });
        }
        Ok(())
    }
}

/// Sinusoidal position table (`len × dim`).
pub fn positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            t.data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Encoder token ids of a masked word; the mask symbol stands in for hidden characters.
pub(crate) fn encoder_ids(masked: &MaskedWord, vocab: &SubwordVocab) -> Result<Vec<u32>> {
    vocab.check_word(masked.original())?;
    Ok(masked
        .masked_chars()
        .iter()
        .map(|c| match c {
            Some(c) => vocab.char_id(*c).expect("checked"),
            None => MASK_ID,
        })
        .collect())
}

/// Decoder inputs `<s> x_1 … x_{T-1}`.
pub(crate) fn decoder_ids(word: &[char], vocab: &SubwordVocab) -> Result<Vec<u32>> {
    vocab.check_word(word)?;
    Ok(std::iter::once(BOS_ID)
        .chain(word[..word.len() - 1].iter().map(|&c| vocab.char_id(c).expect("checked")))
        .collect())
}

/// Dropout mask source; `None` disables dropout (evaluation).
pub(crate) struct Dropout<'r, R: Rng> {
    pub p: f64,
    pub rng: &'r mut R,
}

fn maybe_dropout<R: Rng>(g: &mut Graph<'_>, x: NodeId, drop: &mut Option<Dropout<'_, R>>) -> NodeId {
    let Some(drop) = drop else { return x };
    if drop.p <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - drop.p);
    let n = g.value(x).len();
    let mask = (0..n)
        .map(|_| if drop.rng.gen::<f64>() < drop.p { 0.0 } else { keep })
        .collect();
    g.dropout(x, mask)
}

fn attention_block(
    g: &mut Graph<'_>,
    a: &Attn,
    query: NodeId,
    memory: NodeId,
    heads: usize,
    causal: bool,
) -> NodeId {
    let p = |g: &mut Graph<'_>, i: usize| g.param(i);
    let (wq, bq, wk, bk, wv, bv, wo, bo) = (
        p(g, a.wq),
        p(g, a.bq),
        p(g, a.wk),
        p(g, a.bk),
        p(g, a.wv),
        p(g, a.bv),
        p(g, a.wo),
        p(g, a.bo),
    );
    let q = g.linear(query, wq, bq);
    let k = g.linear(memory, wk, bk);
    let v = g.linear(memory, wv, bv);
    let o = g.attention(q, k, v, heads, causal);
    g.linear(o, wo, bo)
}

fn ffn_block(g: &mut Graph<'_>, f: &Ffn, x: NodeId) -> NodeId {
    let (w1, b1, w2, b2) = (g.param(f.w1), g.param(f.b1), g.param(f.w2), g.param(f.b2));
    let h = g.linear(x, w1, b1);
    let h = g.relu(h);
    g.linear(h, w2, b2)
}

fn layer_norm(g: &mut Graph<'_>, ln: &Ln, x: NodeId) -> NodeId {
    let (gamma, beta) = (g.param(ln.g), g.param(ln.b));
    g.layer_norm(x, gamma, beta)
}

/// Builds the forward tape for one word and returns the `T × |V|`
/// log-softmax node.
pub(crate) fn forward<R: Rng>(
    g: &mut Graph<'_>,
    params: &ScorerParams,
    enc_ids: Vec<u32>,
    dec_ids: Vec<u32>,
    mut drop: Option<Dropout<'_, R>>,
) -> NodeId {
    let cfg = &params.config;
    let lay = &params.layout;
    let d = cfg.model_dim;
    let emb_scale = (d as f64).sqrt();
    let t = enc_ids.len();
    let pos = positions(t, d);

    let embed = g.param(lay.embed);
    let x = g.embed(embed, enc_ids);
    let x = g.scale(x, emb_scale);
    let p = g.constant(pos.clone());
    let mut x = g.add(x, p);
    x = maybe_dropout(g, x, &mut drop);
    for layer in &lay.enc {
        let h = layer_norm(g, &layer.ln1, x);
        let a = attention_block(g, &layer.attn, h, h, cfg.heads, false);
        let a = maybe_dropout(g, a, &mut drop);
        x = g.add(x, a);
        let h = layer_norm(g, &layer.ln2, x);
        let f = ffn_block(g, &layer.ffn, h);
        let f = maybe_dropout(g, f, &mut drop);
        x = g.add(x, f);
    }
    let memory = layer_norm(g, &lay.enc_ln, x);

    let y = g.embed(embed, dec_ids);
    let y = g.scale(y, emb_scale);
    let p = g.constant(pos);
    let mut y = g.add(y, p);
    y = maybe_dropout(g, y, &mut drop);
    for layer in &lay.dec {
        let h = layer_norm(g, &layer.ln1, y);
        let a = attention_block(g, &layer.self_attn, h, h, cfg.heads, true);
        let a = maybe_dropout(g, a, &mut drop);
        y = g.add(y, a);
        let h = layer_norm(g, &layer.ln2, y);
        let c = attention_block(g, &layer.cross, h, memory, cfg.heads, false);
        let c = maybe_dropout(g, c, &mut drop);
        y = g.add(y, c);
        let h = layer_norm(g, &layer.ln3, y);
        let f = ffn_block(g, &layer.ffn, h);
        let f = maybe_dropout(g, f, &mut drop);
        y = g.add(y, f);
    }
    let h = layer_norm(g, &lay.dec_ln, y);
    let (w, b) = (g.param(lay.out_w), g.param(lay.out_b));
    let logits = g.linear(h, w, b);
    g.log_softmax(logits)
}
