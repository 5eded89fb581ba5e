//! `selfseg` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 model/vocabulary mismatch.
//! `SELFSEG_THREADS` sets the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selfseg::freqnorm::{count_words, materialize, normalize, Normalizer};
use selfseg::masking::{MaskConfig, MaskStrategy};
use selfseg::metrics::diff_files;
use selfseg::pipeline::{segment_file, Mode, SegmentOptions, SegmentStats, Segmenter};
use selfseg::scorer::{load_params, save_params, ScorerConfig, Trainer};
use selfseg::vocab::build_bpe_vocab;
use selfseg::{rng, Error, SamplerConfig, SubwordVocab, WordFreqTable};

const THREADS_VAR: &str = "SELFSEG_THREADS";

#[derive(Parser)]
#[command(name = "selfseg", version, about = "Self-supervised neural sub-word segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a BPE sub-word vocabulary from a word-frequency table.
    BuildVocab {
        #[arg(long)]
        input: PathBuf,
        /// Vocabulary size, including the four special symbols.
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count and normalize word frequencies; optionally write the materialized word list.
    Normalize {
        /// Existing freq.tsv.
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        /// Raw whitespace-tokenized corpus to count.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// threshold, sqrt, log or one.
        #[arg(long, default_value = "threshold")]
        strategy: String,
        /// Divisor for the threshold strategy.
        #[arg(long, default_value_t = 10)]
        d: i64,
        #[arg(long)]
        out: PathBuf,
        /// Also write each word repeated by its normalized count, shuffled, one per line.
        #[arg(long)]
        materialize: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a segment scorer on a word list.
    Train(TrainArgs),
    /// MAP-segment a tokenized corpus.
    Segment {
        #[command(flatten)]
        io: SegmentIo,
    },
    /// Write one regularized (sampled) segmentation of a corpus for one epoch.
    SegmentReg {
        #[command(flatten)]
        io: SegmentIo,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
        /// Samples drawn per distinct word.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Sampling temperature.
        #[arg(long, default_value_t = 10.0)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summary statistics of a segmented corpus.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compare two segmentations of the same corpus.
    Diff {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Original corpus; checked against both inputs and used for frequencies.
        #[arg(long)]
        orig: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        freq_split: u64,
        /// Markdown report destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SegmentIo {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Persistent decode cache sidecar (TSV).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Score every token occurrence separately.
    #[arg(long)]
    no_cache: bool,
    /// Write run statistics as JSON here.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Word list, whitespace separated (e.g. the output of `normalize --materialize`).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON scorer configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for per-epoch checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "charmass")]
    mask: MaskStrategy,
    #[arg(long, default_value_t = 0.5)]
    mask_ratio: f64,
    #[arg(long)]
    non_consecutive: bool,
    #[arg(long, default_value_t = 0.15)]
    subword_mask_prob: f64,
    #[arg(long)]
    mask_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Data(other),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(f) = configure_threads() {
        return report(f);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Failure::Data(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_model_mismatch() { 3 } else { 2 })
        }
    }
}

fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::BuildVocab { input, size, out } => {
            let table = WordFreqTable::load(&input)?;
            let vocab = build_bpe_vocab(&table, size)?;
            vocab.save(&out)?;
            eprintln!("wrote {} entries to {}", vocab.len(), out.display());
        }
        Command::Normalize {
            input,
            corpus,
            strategy,
            d,
            out,
            materialize: mat,
            seed,
        } => {
            let norm = match strategy.as_str() {
                "threshold" => Normalizer::threshold(d)?,
                other => other.parse::<Normalizer>()?,
            };
            let table = match (input, corpus) {
                (Some(p), _) => WordFreqTable::load(&p)?,
                (None, Some(c)) => count_words(&c)?,
                (None, None) => unreachable!("clap requires one"),
            };
            let normalized = normalize(&table, norm)?;
            normalized.save(&out)?;
            if let Some(path) = mat {
                let words = materialize(&normalized, &mut rng::stream(seed, &[]));
                let mut text = words.join("\n");
                text.push('\n');
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
            eprintln!("{norm}: {} words, {} tokens", normalized.len(), normalized.total());
        }
        Command::Train(args) => train(args)?,
        Command::Segment { io } => segment(&io, Mode::Map)?,
        Command::SegmentReg { io, epoch, n, t, seed } => {
            let cfg = SamplerConfig {
                n,
                temperature: t,
                seed,
            };
            cfg.validate()?;
            segment(&io, Mode::Sampled { cfg, epoch })?
        }
        Command::Stats { input, json } => {
            let st = selfseg::pipeline::stats(&input)?;
            if json {
                println!("{}", stats_json(&st, false));
            } else {
                println!("lines\t{}", st.lines);
                println!("tokens\t{}", st.tokens);
                println!("distinct_words\t{}", st.distinct_words);
                println!("subwords\t{}", st.subwords);
                println!("subwords_per_sentence\t{:.4}", st.subwords_per_sentence());
            }
        }
        Command::Diff {
            a,
            b,
            orig,
            freq_split,
            out,
            csv,
        } => {
            let report = diff_files(&a, &b, orig.as_deref(), freq_split)?;
            let md = report.to_markdown();
            match out {
                Some(p) => std::fs::write(&p, md).map_err(|e| Error::io(&p, e))?,
                None => print!("{md}"),
            }
            if let Some(p) = csv {
                std::fs::write(&p, report.to_csv()).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    Ok(())
}

fn read_words(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.split_whitespace().map(str::to_string).collect())
}

fn train(a: TrainArgs) -> CliResult {
    let vocab = SubwordVocab::load(&a.vocab)?;
    let words = read_words(&a.corpus)?;
    let resumed = a.resume.as_ref().map(|p| load_params(p, &vocab)).transpose()?;
    let mut cfg = match (&a.config, &resumed) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(p, e.line(), e.to_string()))?
        }
        (None, Some(params)) => params.config().clone(),
        (None, None) => ScorerConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { cfg.$field = v; })*
        };
    }
    set!(epochs => epochs, dim => model_dim, ff_dim => ff_dim, heads => heads,
        enc_layers => enc_layers, dec_layers => dec_layers, dropout => dropout, lr => lr,
        warmup => warmup_steps, batch_tokens => batch_tokens, seed => seed);
    cfg.validate()?;
    let mask = MaskConfig {
        strategy: a.mask,
        ratio: a.mask_ratio,
        consecutive: !a.non_consecutive,
        subword_mask_prob: a.subword_mask_prob,
        seed: a.mask_seed.unwrap_or(cfg.seed),
    };
    mask.validate()?;

    let mut trainer = match resumed {
        Some(mut params) => {
            params.set_config(cfg.clone())?;
            Trainer::resume(&words, &vocab, params, &mask)?
        }
        None => Trainer::new(&words, &vocab, &cfg, &mask)?,
    };
    if let Some(dir) = &a.checkpoint_dir {
        trainer = trainer.with_checkpoints(dir);
    }
    for _ in 0..cfg.epochs {
        let r = trainer.run_epoch()?;
        eprintln!("epoch {}\tloss {:.4}\tsteps {}", r.epoch, r.mean_loss, r.steps);
    }
    save_params(trainer.params(), &a.out)?;
    Ok(())
}

fn segment(io: &SegmentIo, mode: Mode) -> CliResult {
    let vocab = SubwordVocab::load(&io.vocab)?;
    let params = load_params(&io.model, &vocab)?;
    let segmenter = Segmenter::new(&params, &vocab)?;
    let opts = SegmentOptions {
        disable_cache: io.no_cache,
        cache_path: io.cache.clone(),
    };
    let st = segment_file(&segmenter, &io.input, &io.out, mode, &opts)?;
    eprintln!(
        "{} lines, {} tokens, {} distinct, {} scorer calls, {} fallbacks, {:.2}s",
        st.lines,
        st.tokens,
        st.distinct_words,
        st.scorer_calls,
        st.fallbacks,
        st.wall_time.as_secs_f64()
    );
    if let Some(p) = &io.stats {
        std::fs::write(p, stats_json(&st, true) + "\n").map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn stats_json(st: &SegmentStats, with_run: bool) -> String {
    let mut v = serde_json::json!({
        "lines": st.lines,
        "tokens": st.tokens,
        "distinct_words": st.distinct_words,
        "subwords": st.subwords,
        "subwords_per_sentence": st.subwords_per_sentence(),
    });
    if with_run {
        v["scorer_calls"] = st.scorer_calls.into();
        v["cache_hits"] = st.cache_hits.into();
        v["fallbacks"] = st.fallbacks.into();
        v["wall_time_s"] = st.wall_time.as_secs_f64().into();
    }
    v.to_string()
}
