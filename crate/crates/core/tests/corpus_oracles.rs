//! Derived oracles on generated corpora. Frozen values live in `tests/data`;
//! set `SELFSEG_BLESS=1` to rewrite them after an intentional change.

use std::collections::HashMap;
use std::path::PathBuf;

use selfseg::freqnorm::{normalize, Normalizer};
use selfseg::lattice::{enumerate_segmentations, viterbi_decode, SegmentScores};
use selfseg::rng;
use selfseg::synth::{pseudo_words, zipf_tokens, Morphology};
use selfseg::vocab::build_bpe_vocab;
use selfseg::WordFreqTable;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden(name: &str, actual: &str) {
    let path = data(name);
    if std::env::var_os("SELFSEG_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{} differs from the frozen output", path.display());
}

#[test]
fn zipfian_threshold_shrinks_tenfold() {
    let mut r = rng::stream(2024, &[]);
    let types = pseudo_words(10_000, 2..=4, &mut r);
    let tokens = zipf_tokens(&types, 1_000_000, 1.0, &mut r);
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in &tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let recount: u64 = counts.values().map(|c| c / 10).sum();
    let survivors = counts.values().filter(|&&c| c >= 10).count();

    let table = WordFreqTable::from_rows(tokens.iter().map(|t| (t.as_str(), 1u64)));
    assert_eq!(table.total(), 1_000_000);
    let out = normalize(&table, Normalizer::Threshold(10)).unwrap();
    assert_eq!(out.total(), recount);
    assert_eq!(out.len(), survivors);
    assert!(table.total() >= 10 * out.total());
    golden("zipf_threshold10.txt", &format!("tokens {}\nwords {}\n", out.total(), out.len()));
}

#[test]
fn bpe_on_zipfian_morphology() {
    let m = Morphology::generate(200, &["s", "ed", "ing", "er", "ly"], 4, &mut rng::stream(7, &[]));
    let table = m.frequency_table(1000.0, 1.0, &[1.0, 0.7, 0.6, 0.4, 0.3]);
    assert_eq!(table.len() + m.held_out.len(), 1000);
    let vocab = build_bpe_vocab(&table, 500).unwrap();
    assert_eq!(vocab.len(), 500);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    vocab.save(&path).unwrap();
    golden("bpe_morphology_500.txt", &std::fs::read_to_string(&path).unwrap());

    // Fewest-pieces decoding (every piece costs the same) on held-out forms.
    let mut junction = 0;
    let mut reachable = 0;
    for &(s, x) in &m.held_out {
        let w: Vec<char> = m.form(s, x).chars().collect();
        let cut = m.stems[s].chars().count();
        let scores = SegmentScores::build(&w, &vocab, |_, _, _| -1.0).unwrap();
        let (seg, _) = viterbi_decode(&scores).unwrap();
        junction += seg.boundaries().contains(&cut) as usize;
        reachable += enumerate_segmentations(&w, &vocab)
            .unwrap()
            .iter()
            .any(|g| g.boundaries().contains(&cut)) as usize;
    }
    eprintln!("junction {junction} reachable {reachable} of {}", m.held_out.len());
    golden(
        "bpe_morphology_junctions.txt",
        &format!("held_out {}\nreachable {reachable}\nfewest_pieces_junction {junction}\n", m.held_out.len()),
    );
}
