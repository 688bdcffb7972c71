use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hmadapt::adaptation::{adapt, report_csv, Recognizer, Recording};
use hmadapt::asr::{train_asr, Vocabulary};
use hmadapt::beamformer::{enhance, BeamMode, MaskSource};
use hmadapt::harness::{
    asr_training_set, clean_corpus, clean_examples, eval_corpus, evaluate, lm_corpus, load_eval_dir, summarize,
    tables_csv, tables_text, to_eval, train_corpus, train_lm, train_mask_model, ablation_with, Condition, EvalScene,
    ExperimentConfig, Models,
};
use hmadapt::scene::dataset::write_dataset;
use hmadapt::scene::Simulator;
use hmadapt::wav::{read_wav, write_wav, SampleFormat};
use hmadapt::{Error, Result};

/// Head-movement-aware enhancement, recognition and run-time adaptation on
/// simulated multichannel scenes.
#[derive(Parser)]
#[command(name = "hmadapt", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Passthrough,
    TimeInvariant,
    Hma,
}

impl From<Mode> for BeamMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Passthrough => BeamMode::Passthrough,
            Mode::TimeInvariant => BeamMode::TimeInvariant,
            Mode::Hma => BeamMode::HeadMovementAware,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the training, evaluation and clean corpora as WAV + manifest.
    Simulate,
    /// Train the mask estimator on the simulated training condition.
    TrainMask,
    /// Train the acoustic model (uses the mask checkpoint for enhanced data).
    TrainAsr {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Train the character bigram language model.
    TrainLm,
    /// Enhance evaluation scenes and write the outputs as WAV.
    Enhance {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Dataset directory written by `simulate`; simulated on the fly otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "hma")]
        mode: Mode,
    },
    /// Decode mono WAV files.
    Recognize {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Adapt the mask estimator and acoustic model on evaluation scenes.
    Adapt {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score every enhancement condition without adaptation.
    Evaluate {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Full ablation, adaptation included, as CSV and a text table.
    Report {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, v) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{v:.6}\n"));
    }
    s
}

fn scenes(cfg: &ExperimentConfig, data: Option<&Path>, seed: u64) -> Result<Vec<EvalScene>> {
    match data {
        Some(dir) => load_eval_dir(dir),
        None => Ok(to_eval(&eval_corpus(cfg, seed)?)),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    let out = &cli.out;
    let seed = cli.seed;
    let ckpt = |c: &Option<PathBuf>| c.clone().unwrap_or_else(|| out.clone());
    let models = |c: &Option<PathBuf>| Models::load(&ckpt(c), &cfg.beam, &cfg.confidence);
    match &cli.command {
        Command::Simulate => {
            let train = train_corpus(&cfg, seed)?;
            write_dataset(&Simulator::desk(cfg.train_scene.clone())?, &train, &out.join("train"))?;
            let eval = eval_corpus(&cfg, seed)?;
            write_dataset(&Simulator::desk(cfg.eval_scene.clone())?, &eval, &out.join("eval"))?;
            fs::create_dir_all(out.join("clean"))?;
            let mut listing = String::new();
            for (i, (text, wave)) in clean_corpus(&cfg, seed)?.iter().enumerate() {
                let name = format!("clean{i:04}.wav");
                write_wav(out.join("clean").join(&name), wave, SampleFormat::Float32)?;
                listing.push_str(&format!("{name}\t{text}\n"));
            }
            write(&out.join("clean").join("transcripts.tsv"), &listing)?;
            write(&out.join("config.toml"), &cfg.to_toml())?;
            println!("wrote {} training and {} evaluation scenes to {}", train.len(), eval.len(), out.display());
        }
        Command::TrainMask => {
            let train = train_corpus(&cfg, seed)?;
            let (mask, curve) = train_mask_model(&cfg, &train, seed)?;
            fs::create_dir_all(out)?;
            mask.params.save(out.join("mask.params"))?;
            write(&out.join("mask.json"), &serde_json::to_string_pretty(&mask.cfg).expect("json"))?;
            write(&out.join("mask_loss.csv"), &curve_csv(&curve))?;
            println!("mask estimator: final loss {:.4}", curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainAsr { checkpoints } => {
            let mask = Models::load_mask(&ckpt(checkpoints))?;
            let train = train_corpus(&cfg, seed)?;
            let clean = clean_corpus(&cfg, seed)?;
            let data = asr_training_set(&cfg, &clean, &train, &mask)?;
            let (asr, curve) = train_asr(&data, &cfg.asr, seed)?;
            fs::create_dir_all(out)?;
            asr.params.save(out.join("asr.params"))?;
            write(&out.join("asr.json"), &serde_json::to_string_pretty(&asr.cfg).expect("json"))?;
            Vocabulary::desk().save(out.join("vocab.txt"))?;
            write(&out.join("asr_loss.csv"), &curve_csv(&curve))?;
            println!("acoustic model: {} utterances, final loss {:.4}", data.len(), curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainLm => {
            let sentences = lm_corpus(&cfg, seed);
            let lm = train_lm(&cfg, &sentences)?;
            fs::create_dir_all(out)?;
            lm.save(out.join("lm.json"))?;
            Vocabulary::desk().save(out.join("vocab.txt"))?;
            println!("language model: {} sentences", sentences.len());
        }
        Command::Enhance { checkpoints, data, mode } => {
            let chain = cfg.chain_with((*mode).into());
            let mask = match chain.mode {
                BeamMode::Passthrough => None,
                _ => Some(Models::load_mask(&ckpt(checkpoints))?),
            };
            let field = cfg.field();
            let scenes = scenes(&cfg, data.as_deref(), seed)?;
            fs::create_dir_all(out.join("enhanced"))?;
            for s in &scenes {
                let source = match &mask {
                    Some(m) => MaskSource::Network(m),
                    None => MaskSource::Constant(1.0),
                };
                let e = enhance(&s.mixture, &field, &s.trace, source, &chain)?;
                write_wav(out.join("enhanced").join(format!("{}.wav", s.id)), &e.wave, SampleFormat::Float32)?;
            }
            println!("enhanced {} scenes into {}", scenes.len(), out.join("enhanced").display());
        }
        Command::Recognize { checkpoints, inputs } => {
            let m = models(checkpoints)?;
            let mut tsv = String::from("input\ttext\tconfidence\n");
            for p in inputs {
                let wave = read_wav(p)?;
                if wave.channels() != 1 {
                    return Err(Error::Data(format!("{} is not mono", p.display())));
                }
                let h = m.recognizer.recognize(&wave)?;
                println!("{}\t{}\t{:.3}", p.display(), h.text, h.confidence);
                tsv.push_str(&format!("{}\t{}\t{:.6}\n", p.display(), h.text, h.confidence));
            }
            write(&out.join("recognized.tsv"), &tsv)?;
        }
        Command::Adapt { checkpoints, data } => {
            let m = models(checkpoints)?;
            let scenes = scenes(&cfg, data.as_deref(), seed)?;
            let recordings: Vec<Recording> = scenes.iter().map(EvalScene::recording).collect();
            let clean = clean_examples(&cfg, &clean_corpus(&cfg, seed)?)?;
            let mut acfg = cfg.adaptation.clone();
            acfg.chain = cfg.chain();
            let adapted = adapt(&recordings, &clean, &m.mask, &m.recognizer, &cfg.field(), &acfg, seed)?;
            for w in &adapted.warnings {
                eprintln!("warning: {w}");
            }
            let after = Models {
                mask: adapted.mask,
                recognizer: Recognizer {
                    asr: adapted.asr,
                    ..m.recognizer
                },
            };
            after.save(&out.join("adapted"))?;
            let csv = report_csv(&adapted.report);
            write(&out.join("adaptation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Evaluate { checkpoints, data } => {
            let m = models(checkpoints)?;
            let scenes = scenes(&cfg, data.as_deref(), seed)?;
            let mut csv = String::from("condition,id,overlapped,si_sdr_db,errors,words,hypothesis\n");
            let conditions = [
                ("unprocessed", Condition::Unprocessed),
                ("mvdr", Condition::Enhanced(BeamMode::TimeInvariant)),
                ("mvdr_hma", Condition::Enhanced(BeamMode::HeadMovementAware)),
                ("clean", Condition::CleanOracle),
            ];
            for (name, cond) in conditions {
                let scores = evaluate(&cfg, &m, &scenes, cond)?;
                for s in &scores {
                    csv.push_str(&format!(
                        "{name},{},{},{:.4},{},{},{}\n",
                        s.id, s.overlapped, s.si_sdr_db, s.errors, s.words, s.hypothesis
                    ));
                }
                if let Some((sdr, wer, n)) = summarize(&scores) {
                    println!("{name:<12} SI-SDR {sdr:7.2} dB  WER {wer:6.2} %  ({n} utterances)");
                }
            }
            write(&out.join("scores.csv"), &csv)?;
        }
        Command::Report { checkpoints, data } => {
            let m = models(checkpoints)?;
            let scenes = scenes(&cfg, data.as_deref(), seed)?;
            let clean = clean_examples(&cfg, &clean_corpus(&cfg, seed)?)?;
            let tables = ablation_with(&cfg, &m, &scenes, &clean, seed)?;
            write(&out.join("ablation.csv"), &tables_csv(&tables))?;
            let text = tables_text(&tables);
            write(&out.join("ablation.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}
