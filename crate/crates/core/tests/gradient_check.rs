//! Analytic gradients (tape backward + lattice posteriors) against central
//! finite differences on tiny models.

use selfseg::masking::{mask_char_mass, MaskConfig, MaskedWord};
use selfseg::rng;
use selfseg::scorer::{word_loss_and_grad, ScorerConfig, ScorerParams};
use selfseg::vocab::SubwordVocab;

const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely; central differences
/// of an O(1) loss carry ~1e-12 rounding noise.
const FLOOR: f64 = 1e-7;

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

fn check(cfg: &ScorerConfig, vocab: &SubwordVocab, masked: &MaskedWord, dropout_seed: Option<u64>) -> usize {
    let params = ScorerParams::init(cfg, vocab).unwrap();
    let (_, grads) = word_loss_and_grad(&params, vocab, masked, dropout_seed).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut checked = 0;
    let mut worst = (0.0f64, String::new());
    for (ti, name) in names.iter().enumerate() {
        for k in 0..params.tensors()[ti].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data[k] += H;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data[k] -= H;
            let lp = word_loss_and_grad(&plus, vocab, masked, dropout_seed).unwrap().0;
            let lm = word_loss_and_grad(&minus, vocab, masked, dropout_seed).unwrap().0;
            let numeric = (lp - lm) / (2.0 * H);
            let analytic = grads[ti].data[k];
            let err = (numeric - analytic).abs();
            let scale = numeric.abs().max(analytic.abs()).max(FLOOR);
            let rel = err / scale;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{k}] analytic {analytic:e} numeric {numeric:e}"));
            }
            assert!(
                rel <= REL_TOL,
                "{name}[{k}]: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:e})"
            );
            checked += 1;
        }
    }
    eprintln!("checked {checked} parameters, worst {:e} at {}", worst.0, worst.1);
    checked
}

fn tiny(enc: usize, dec: usize) -> ScorerConfig {
    ScorerConfig {
        model_dim: 4,
        ff_dim: 6,
        heads: 2,
        enc_layers: enc,
        dec_layers: dec,
        dropout: 0.0,
        seed: 11,
        ..ScorerConfig::default()
    }
}

#[test]
fn unmasked_word() {
    let vocab = SubwordVocab::from_subwords(["a", "b", "c", "ab", "bc", "abc"]).unwrap();
    let n = check(&tiny(1, 1), &vocab, &MaskedWord::unmasked(&chars("abc")), None);
    assert!(n > 400);
}

#[test]
fn masked_word_two_layers() {
    let vocab = SubwordVocab::from_subwords(["a", "b", "c", "ab", "ca", "bca"]).unwrap();
    let cfg = MaskConfig::default();
    let m = mask_char_mass(&chars("abca"), &cfg, &mut rng::stream(5, &[]));
    assert_eq!(m.mask_count(), 2);
    check(&tiny(2, 2), &vocab, &m, None);
}

#[test]
fn with_fixed_dropout_masks() {
    let vocab = SubwordVocab::from_subwords(["a", "b", "ab", "ba"]).unwrap();
    let cfg = ScorerConfig {
        dropout: 0.3,
        ..tiny(1, 1)
    };
    check(&cfg, &vocab, &MaskedWord::unmasked(&chars("abba")), Some(99));
}
