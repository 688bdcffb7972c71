//! Run-time joint adaptation: models trained on one simulated condition
//! are adapted on unlabeled recordings of a shifted condition using
//! confidence-selected pseudo labels.
//!
//! cargo run --release --example adaptation -- [config.toml] [seed]

use hmadapt::adaptation::{adapt, report_csv, Recognizer, Recording};
use hmadapt::beamformer::BeamMode;
use hmadapt::harness::{
    clean_corpus, clean_examples, eval_corpus, evaluate, summarize, to_eval, train_models, Condition, EvalScene,
    ExperimentConfig, Models,
};

fn main() -> hmadapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig {
            train_scenes: 80,
            eval_scenes: 32,
            ..ExperimentConfig::default()
        },
    };
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let (models, _) = train_models(&cfg, seed)?;
    let scenes = to_eval(&eval_corpus(&cfg, seed)?);
    let hma = Condition::Enhanced(BeamMode::HeadMovementAware);
    let (sdr, wer, n) = summarize(&evaluate(&cfg, &models, &scenes, hma)?).expect("scores");
    println!("before adaptation: SI-SDR {sdr:.2} dB, WER {wer:.2} % on {n} shifted recordings");

    let recordings: Vec<Recording> = scenes.iter().map(EvalScene::recording).collect();
    let clean = clean_examples(&cfg, &clean_corpus(&cfg, seed)?)?;
    let mut acfg = cfg.adaptation.clone();
    acfg.chain = cfg.chain();
    let adapted = adapt(&recordings, &clean, &models.mask, &models.recognizer, &cfg.field(), &acfg, seed)?;
    print!("{}", report_csv(&adapted.report));
    let after = Models {
        mask: adapted.mask,
        recognizer: Recognizer {
            asr: adapted.asr,
            ..models.recognizer.clone()
        },
    };
    let (sdr, wer, _) = summarize(&evaluate(&cfg, &after, &scenes, hma)?).expect("scores");
    println!("after adaptation:  SI-SDR {sdr:.2} dB, WER {wer:.2} %");
    Ok(())
}
