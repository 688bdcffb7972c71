//! Full ablation (no enhancement, MVDR, HMA, adaptation, clean oracle)
//! split into non-overlapped and overlapped recordings.
//!
//! cargo run --release --example ablation_report -- [config.toml] [seed]

use hmadapt::harness::{
    clean_corpus, clean_examples, eval_corpus, ablation_with, tables_text, to_eval, train_models, ExperimentConfig,
};

fn main() -> hmadapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig {
            train_scenes: 64,
            eval_scenes: 24,
            ..ExperimentConfig::default()
        },
    };
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let (models, log) = train_models(&cfg, seed)?;
    println!(
        "mask loss {:.3} -> {:.3}, asr loss {:.2} -> {:.2}",
        log.mask[0],
        log.mask.last().unwrap(),
        log.asr[0],
        log.asr.last().unwrap()
    );
    let eval = to_eval(&eval_corpus(&cfg, seed)?);
    let clean = clean_examples(&cfg, &clean_corpus(&cfg, seed)?)?;
    let tables = ablation_with(&cfg, &models, &eval, &clean, seed)?;
    print!("{}", tables_text(&tables));
    Ok(())
}
