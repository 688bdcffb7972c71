//! Trains the BiGRU mask estimator on simulated scenes with the
//! phase-sensitive loss and compares held-out loss with trivial masks.
//!
//! cargo run --release --example train_mask -- [scenes] [epochs]

use hmadapt::harness::{train_corpus, ExperimentConfig};
use hmadapt::masknet::{mask_example, psm_loss, train_mask, MaskMatrix, MaskTrainConfig};
use hmadapt::scene::Simulator;

fn main() -> hmadapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(24);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let cfg = ExperimentConfig {
        train_scenes: scenes + 4,
        ..ExperimentConfig::default()
    };
    let all = train_corpus(&cfg, 0)?;
    let (train, held) = all.split_at(scenes);
    let field = cfg.field();
    let data = train
        .iter()
        .map(|s| mask_example(s, &field, 0, None))
        .collect::<hmadapt::Result<Vec<_>>>()?;
    let tcfg = MaskTrainConfig {
        epochs,
        ..cfg.mask.clone()
    };
    let (net, curve) = train_mask(&data, &tcfg, 0)?;
    for (e, l) in curve.iter().enumerate() {
        println!("epoch {e:2}  loss {l:.4}");
    }
    let sim = Simulator::desk(cfg.train_scene.clone())?;
    println!("held-out scene   learned   z=0.5   z=0");
    for s in held {
        let ex = mask_example(s, &sim.field, 0, None)?;
        let z = net.estimate(&ex.features)?;
        let x_ref = s.mixture.select_channel(0);
        let (bins, frames) = (z.bins(), z.frames());
        println!(
            "{:<16} {:8.4} {:7.4} {:6.4}",
            s.id,
            psm_loss(&z, &x_ref, &s.clean_target)?,
            psm_loss(&MaskMatrix::constant(bins, frames, 0.5), &x_ref, &s.clean_target)?,
            psm_loss(&MaskMatrix::constant(bins, frames, 0.0), &x_ref, &s.clean_target)?,
        );
    }
    Ok(())
}
