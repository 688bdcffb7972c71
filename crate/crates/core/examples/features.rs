//! Mask-estimator input features for one scene: reference log power,
//! inter-channel phase differences and the directional feature of the
//! tracked target direction.
//!
//! cargo run --release --example features

use hmadapt::features::{assemble, feature_channels};
use hmadapt::scene::{SceneConfig, Simulator};

fn main() -> hmadapt::Result<()> {
    let sim = Simulator::desk(SceneConfig::default())?;
    let ex = sim.synthesize("feat", 3)?;
    let f = assemble(&ex.mixture, &sim.field, &ex.trace, 0)?;
    let m = ex.mixture.channels();
    println!(
        "{} mics -> {} channels per cell, tensor {} frames x {} bins x {}",
        m,
        feature_channels(m),
        f.frames(),
        f.bins(),
        f.channels()
    );
    let k = m - 1;
    let names = ["log power".to_string()]
        .into_iter()
        .chain((0..k).map(|j| format!("sin ipd {}", j + 1)))
        .chain((0..k).map(|j| format!("cos ipd {}", j + 1)))
        .chain((0..k).map(|j| format!("sin dir {}", j + 1)))
        .chain((0..k).map(|j| format!("cos dir {}", j + 1)));
    for (c, name) in names.enumerate() {
        let plane = f.data.index_axis(ndarray::Axis(2), c);
        let mean = plane.mean().unwrap_or(0.0);
        let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("{name:<10} mean {mean:8.3}  range [{lo:8.3}, {hi:8.3}]");
    }
    // (sin, cos) pairs: ipd at 1 + j / 1 + k + j, directional at 1 + 2k + j / 1 + 3k + j
    let mut worst: f64 = 0.0;
    for cell in f.data.lanes(ndarray::Axis(2)) {
        for j in 0..k {
            for base in [1, 1 + 2 * k] {
                worst = worst.max((cell[base + j].powi(2) + cell[base + k + j].powi(2) - 1.0).abs());
            }
        }
    }
    println!("max |sin^2 + cos^2 - 1| over phase pairs = {worst:.1e}");
    Ok(())
}
