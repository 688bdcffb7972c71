//! CTC loss, greedy decoding and prefix beam search with a character
//! bigram language model on hand-made posteriors.
//!
//! cargo run --release --example ctc_decode

use hmadapt::asr::{beam_decode, ctc_loss, greedy_decode, BeamConfig, NgramLm, Vocabulary};
use hmadapt::autodiff::Tensor;

fn main() -> hmadapt::Result<()> {
    let vocab = Vocabulary::desk();
    let text = "cab";
    let target = vocab.encode(text)?;
    // frames alternate between the target characters and blanks, with
    // some mass leaking to a confusable character
    let v = vocab.len();
    let confusable = vocab.encode("c")?[0];
    let path = [target[0], 0, target[1], target[1], 0, target[2], 0];
    let mut lp = Tensor::from_elem((path.len(), v), 0.02 / (v as f64 - 2.0));
    for (t, &k) in path.iter().enumerate() {
        lp[[t, k]] = 0.9;
        let other = if k == confusable { vocab.encode("d")?[0] } else { confusable };
        lp[[t, other]] = 0.08;
    }
    lp.mapv_inplace(f64::ln);
    let ctc = ctc_loss(&lp, &target)?;
    println!("-log p({text:?} | x) = {:.4}", ctc.loss);
    let greedy = greedy_decode(&lp);
    println!("greedy   {:?}", greedy.text(&vocab));

    let corpus: Vec<Vec<usize>> = ["cab", "dab", "bad", "cab bad", "face"]
        .iter()
        .map(|s| vocab.encode(s))
        .collect::<hmadapt::Result<_>>()?;
    let lm = NgramLm::train(&corpus, v, NgramLm::DEFAULT_SMOOTHING)?;
    let beam = beam_decode(&lp, Some(&lm), &BeamConfig::default())?;
    println!(
        "beam     {:?}  log p_asr {:.4}  log p_lm {:.4}",
        beam.text(&vocab),
        beam.log_p_asr,
        beam.log_p_lm
    );
    Ok(())
}
