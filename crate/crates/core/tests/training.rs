use selfseg::masking::{MaskConfig, MaskStrategy};
use selfseg::scorer::{self, load_params, loss, train, train_step, Optimizer, ScorerConfig, ScorerParams, TrainBatch, Trainer};
use selfseg::{Error, SubwordVocab};

fn small_cfg() -> ScorerConfig {
    ScorerConfig {
        model_dim: 16,
        ff_dim: 32,
        heads: 2,
        dropout: 0.0,
        lr: 3e-3,
        warmup_steps: 10,
        batch_tokens: 64,
        epochs: 3,
        seed: 2,
        ..ScorerConfig::light()
    }
}

fn vocab() -> SubwordVocab {
    SubwordVocab::from_subwords(["walk", "talk", "ing", "ed", "s", "al", "in"]).unwrap()
}

const WORDS: [&str; 8] = ["walking", "talked", "walks", "talking", "walked", "talks", "walk", "talk"];

#[test]
fn loss_decreases_over_steps() {
    let vocab = vocab();
    let mut params = ScorerParams::init(&small_cfg(), &vocab).unwrap();
    let batch = TrainBatch::unmasked(&WORDS);
    let mut opt = Optimizer::new(&params);
    let start = loss(&params, &vocab, &batch).unwrap();
    for _ in 0..200 {
        train_step(&mut params, &vocab, &batch, &mut opt, None).unwrap();
    }
    let end = loss(&params, &vocab, &batch).unwrap();
    assert!(end < start / 10.0, "{start} -> {end}");
}

#[test]
fn single_word_overfits() {
    let vocab = vocab();
    let mut params = ScorerParams::init(&small_cfg(), &vocab).unwrap();
    let batch = TrainBatch::unmasked(&["walking"]);
    let mut opt = Optimizer::new(&params);
    for _ in 0..300 {
        train_step(&mut params, &vocab, &batch, &mut opt, None).unwrap();
    }
    assert!(loss(&params, &vocab, &batch).unwrap() < 0.05);
}

#[test]
fn zero_epochs_returns_initial_params() {
    let vocab = vocab();
    let cfg = ScorerConfig { epochs: 0, ..small_cfg() };
    let (params, reports) = train(&WORDS, &vocab, &cfg, &MaskConfig::default(), None).unwrap();
    assert!(reports.is_empty());
    assert_eq!(params, ScorerParams::init(&cfg, &vocab).unwrap());
}

#[test]
fn empty_corpus_and_unknown_characters_are_rejected() {
    let vocab = vocab();
    let none: [&str; 0] = [];
    let err = Trainer::new(&none, &vocab, &small_cfg(), &MaskConfig::default()).err().unwrap();
    assert!(matches!(err, Error::EmptyCorpus));
    let err = Trainer::new(&["walkz"], &vocab, &small_cfg(), &MaskConfig::default()).err().unwrap();
    assert!(matches!(err, Error::UnknownCharacters { .. }));
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let vocab = vocab();
    let cfg = ScorerConfig { dropout: 0.2, ..small_cfg() };
    let mask = MaskConfig {
        strategy: MaskStrategy::SubwordMass,
        seed: 7,
        ..MaskConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&WORDS, &vocab, &cfg, &mask, None).unwrap())
    };
    let (a, ra) = run(1);
    let (b, rb) = run(3);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(ra.len(), 3);
    assert!(ra.iter().all(|r| r.words == WORDS.len() && r.mean_loss.is_finite()));
}

#[test]
fn epoch_checkpoints_are_written_and_reload() {
    let vocab = vocab();
    let dir = tempfile::tempdir().unwrap();
    let (params, _) = train(&WORDS, &vocab, &small_cfg(), &MaskConfig::default(), Some(dir.path())).unwrap();
    for name in ["epoch1.bin", "epoch2.bin", "epoch3.bin", "last.bin"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_eq!(load_params(dir.path().join("last.bin"), &vocab).unwrap(), params);

    let other = SubwordVocab::from_subwords(["walk", "talk"]).unwrap();
    let err = load_params(dir.path().join("last.bin"), &other).unwrap_err();
    assert!(err.is_model_mismatch());
}

#[test]
fn resumed_training_continues_from_checkpoint() {
    let vocab = vocab();
    let cfg = small_cfg();
    let mask = MaskConfig::default();
    let (params, _) = train(&WORDS, &vocab, &ScorerConfig { epochs: 1, ..cfg.clone() }, &mask, None).unwrap();
    let mut t = Trainer::resume(&WORDS, &vocab, params.clone(), &mask).unwrap();
    t.run_epoch().unwrap();
    assert_eq!(t.epochs_done(), 1);
    assert_ne!(t.params(), &params);
    let batch = TrainBatch::unmasked(&WORDS);
    assert!(scorer::loss(t.params(), &vocab, &batch).unwrap().is_finite());
}

fn toy_corpus() -> (Vec<String>, SubwordVocab) {
    let m = selfseg::synth::Morphology::generate(
        10,
        &["s", "ed", "ing", "er", "ly"],
        0,
        &mut selfseg::rng::stream(21, &[]),
    );
    let words: Vec<String> = m.training_forms().iter().map(|&(s, x)| m.form(s, x)).collect();
    let table = selfseg::WordFreqTable::from_rows(words.iter().map(|w| (w.as_str(), 1u64)));
    let vocab = selfseg::vocab::build_bpe_vocab(&table, 60).unwrap();
    (words, vocab)
}

#[test]
fn fifty_word_corpus_loss_decreases() {
    let (words, vocab) = toy_corpus();
    assert_eq!(words.len(), 50);
    let cfg = ScorerConfig { batch_tokens: 10_000, ..small_cfg() };
    let mut params = ScorerParams::init(&cfg, &vocab).unwrap();
    let batch = TrainBatch::unmasked(&words);
    let mut opt = Optimizer::new(&params);
    let start = loss(&params, &vocab, &batch).unwrap();
    for _ in 0..200 {
        train_step(&mut params, &vocab, &batch, &mut opt, None).unwrap();
    }
    let end = loss(&params, &vocab, &batch).unwrap();
    eprintln!("50 words: {start:.3} -> {end:.3}");
    assert!(end < start / 2.0, "{start} -> {end}");
}

#[test]
fn small_step_does_not_increase_full_batch_loss() {
    let (words, vocab) = toy_corpus();
    let cfg = ScorerConfig { lr: 1e-5, warmup_steps: 1, ..small_cfg() };
    let mut params = ScorerParams::init(&cfg, &vocab).unwrap();
    let batch = TrainBatch::unmasked(&words);
    let mut opt = Optimizer::new(&params);
    let before = train_step(&mut params, &vocab, &batch, &mut opt, None).unwrap();
    let after = loss(&params, &vocab, &batch).unwrap();
    assert!(after <= before, "{before} -> {after}");
}
