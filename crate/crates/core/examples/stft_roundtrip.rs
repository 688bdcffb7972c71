//! Analysis/synthesis round trip with the square-root Hann STFT.
//!
//! cargo run --release --example stft_roundtrip

use hmadapt::signal::{istft, stft, WaveBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hmadapt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for (window, hop) in [(512, 128), (256, 64), (1024, 512)] {
        let spec = stft(&WaveBuffer::mono(x.clone()), window, hop)?;
        let y = istft(&spec, window, hop)?;
        let err = x
            .iter()
            .zip(y.channel(0).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "window {window:5} hop {hop:4}: {} bins x {} frames, max error {err:.2e}",
            spec.bins(),
            spec.frames()
        );
    }
    Ok(())
}
