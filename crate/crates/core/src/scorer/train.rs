use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::checkpoint::save_params;
use super::model::{ScorerConfig, ScorerParams};
use super::optim::Optimizer;
use super::{step_seed, train_step, TrainBatch};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, MaskConfig};
use crate::rng;
use crate::vocab::SubwordVocab;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean pre-update training loss per word over the epoch.
    pub mean_loss: f64,
    pub steps: u64,
    pub words: usize,
}

/// Epoch-level driver over a materialized word list.
pub struct Trainer<'v> {
    vocab: &'v SubwordVocab,
    mask_cfg: MaskConfig,
    words: Vec<Vec<char>>,
    params: ScorerParams,
    opt: Optimizer,
    epoch: usize,
    checkpoint_dir: Option<PathBuf>,
}

impl<'v> Trainer<'v> {
    pub fn new<S: AsRef<str>>(
        words: &[S],
        vocab: &'v SubwordVocab,
        cfg: &ScorerConfig,
        mask_cfg: &MaskConfig,
    ) -> Result<Self> {
        let params = ScorerParams::init(cfg, vocab)?;
        Self::resume(words, vocab, params, mask_cfg)
    }

    /// Continues training from existing parameters (fresh optimizer state).
    pub fn resume<S: AsRef<str>>(
        words: &[S],
        vocab: &'v SubwordVocab,
        params: ScorerParams,
        mask_cfg: &MaskConfig,
    ) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        mask_cfg.validate()?;
        params.check_vocab(vocab)?;
        let words: Vec<Vec<char>> = words.iter().map(|w| w.as_ref().chars().collect()).collect();
        for w in &words {
            if w.is_empty() {
                return Err(Error::InvalidArgument("empty word in training corpus".into()));
            }
            vocab.check_word(w)?;
        }
        let opt = Optimizer::new(&params);
        Ok(Trainer {
            vocab,
            mask_cfg: *mask_cfg,
            words,
            params,
            opt,
            epoch: 0,
            checkpoint_dir: None,
        })
    }

    /// Writes `epoch<N>.bin` and `last.bin` into `dir` after every epoch.
    pub fn with_checkpoints(mut self, dir: impl AsRef<Path>) -> Self {
        self.checkpoint_dir = Some(dir.as_ref().to_path_buf());
        self
    }

    pub fn params(&self) -> &ScorerParams {
        &self.params
    }

    pub fn into_params(self) -> ScorerParams {
        self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Shuffles, re-masks and trains over the whole word list once.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let cfg = self.params.config().clone();
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..self.words.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[epoch, 0x5eed]));

        let mut mask_rng = rng::stream(self.mask_cfg.seed, &[epoch, 0]);
        let mut dropout_rng = rng::stream(cfg.seed, &[epoch, 0xd409]);

        let mut total = 0.0;
        let mut steps = 0;
        let mut batch = TrainBatch::default();
        let mut chars = 0;
        let mut flush = |batch: &mut TrainBatch, this: &mut Self| -> Result<()> {
            let seed = (cfg.dropout > 0.0).then(|| step_seed(&mut dropout_rng));
            let l = train_step(&mut this.params, this.vocab, batch, &mut this.opt, seed)?;
            total += l * batch.len() as f64;
            steps += 1;
            batch.items.clear();
            Ok(())
        };
        for &i in &order {
            let len = self.words[i].len();
            if !batch.is_empty() && chars + len > cfg.batch_tokens {
                flush(&mut batch, self)?;
                chars = 0;
            }
            let masked = apply_mask(&self.words[i], self.vocab, &self.mask_cfg, &mut mask_rng)?;
            batch.items.push(masked);
            chars += len;
        }
        if !batch.is_empty() {
            flush(&mut batch, self)?;
        }

        self.epoch += 1;
        let report = EpochReport {
            epoch: self.epoch,
            mean_loss: total / self.words.len() as f64,
            steps,
            words: self.words.len(),
        };
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_params(&self.params, dir.join(format!("epoch{}.bin", self.epoch)))?;
            save_params(&self.params, dir.join("last.bin"))?;
        }
        log::info!(
            "epoch {} loss {:.4} ({} steps, {} words)",
            report.epoch,
            report.mean_loss,
            report.steps,
            report.words
        );
        Ok(report)
    }
}

/// Trains for `cfg.epochs` epochs and returns the final parameters with one
/// report per epoch.
pub fn train<S: AsRef<str>>(
    words: &[S],
    vocab: &SubwordVocab,
    cfg: &ScorerConfig,
    mask_cfg: &MaskConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ScorerParams, Vec<EpochReport>)> {
    let mut trainer = Trainer::new(words, vocab, cfg, mask_cfg)?;
    if let Some(dir) = checkpoint_dir {
        trainer = trainer.with_checkpoints(dir);
    }
    let reports = (0..cfg.epochs)
        .map(|_| trainer.run_epoch())
        .collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_params(), reports))
}
