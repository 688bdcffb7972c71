//! Trains the convolutional/recurrent CTC acoustic model on rendered
//! tone-lexicon utterances and reports greedy and beam-search WER.
//!
//! cargo run --release --example train_asr -- [utterances] [epochs]

use hmadapt::adaptation::Recognizer;
use hmadapt::asr::{corpus_wer, greedy_wer, train_asr, Vocabulary};
use hmadapt::harness::{clean_corpus, clean_examples, lm_corpus, train_lm, ExperimentConfig};

fn main() -> hmadapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(96);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut cfg = ExperimentConfig {
        clean_utterances: n + 16,
        ..ExperimentConfig::default()
    };
    cfg.asr.epochs = epochs;
    let corpus = clean_corpus(&cfg, 0)?;
    let examples = clean_examples(&cfg, &corpus)?;
    let (train, test) = examples.split_at(n);
    let (asr, curve) = train_asr(train, &cfg.asr, 0)?;
    for (e, l) in curve.iter().enumerate().step_by(5) {
        println!("epoch {e:3}  ctc {l:.3}");
    }
    let vocab = Vocabulary::desk();
    println!("greedy WER  train {:.1} %  test {:.1} %", greedy_wer(&asr, &vocab, train)?, greedy_wer(&asr, &vocab, test)?);
    let rec = Recognizer {
        asr,
        lm: train_lm(&cfg, &lm_corpus(&cfg, 0))?,
        vocab,
        beam: cfg.beam.clone(),
        weights: cfg.confidence,
    };
    let hyps = corpus[n..]
        .iter()
        .map(|(_, wave)| rec.recognize(wave))
        .collect::<hmadapt::Result<Vec<_>>>()?;
    for ((text, _), h) in corpus[n..].iter().zip(&hyps).take(4) {
        println!("ref {text:<28} hyp {:<28} c = {:.1}", h.text, h.confidence);
    }
    let wer = corpus_wer(corpus[n..].iter().zip(&hyps).map(|((t, _), h)| (t.as_str(), h.text.as_str())))?;
    println!("beam + LM WER  test {wer:.1} %");
    Ok(())
}
