//! Mask-based MVDR enhancement of moving-head scenes: reference mic,
//! time-invariant MVDR and head-movement-aware MVDR, with oracle masks
//! built from the simulator's target and noise images.
//!
//! cargo run --release --example enhance -- [scenes]

use hmadapt::beamformer::{enhance, BeamMode, EnhanceConfig, MaskSource};
use hmadapt::harness::si_sdr;
use hmadapt::masknet::MaskMatrix;
use hmadapt::scene::{SceneConfig, Simulator};
use hmadapt::signal::istft;

fn main() -> hmadapt::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let sim = Simulator::desk(SceneConfig::default())?;
    let mut sums = [0.0; 3];
    println!("scene  overlap  reference   MVDR   MVDR+HMA  [dB SI-SDR]");
    for seed in 0..n {
        let (ex, parts) = sim.synthesize_with_parts("enh", seed)?;
        // ideal ratio mask on the reference mic: direct target over everything else
        let (_, bins, frames) = parts.target_direct.dim();
        let z = ndarray::Array2::from_shape_fn((bins, frames), |(f, t)| {
            let s = parts.target_direct[[0, f, t]].norm_sqr();
            let rest = (ex.mixture.data[[0, f, t]] - parts.target_direct[[0, f, t]]).norm_sqr();
            s / (s + rest + 1e-12)
        });
        let reference = istft(&ex.mixture.select_channel(0), ex.mixture.window, ex.mixture.hop)?;
        let mut row = [si_sdr(&ex.clean_wave, &reference, 1024)?, 0.0, 0.0];
        for (k, mode) in [BeamMode::TimeInvariant, BeamMode::HeadMovementAware].into_iter().enumerate() {
            let chain = EnhanceConfig {
                mode,
                wpe: None,
                ..EnhanceConfig::default()
            };
            let out = enhance(&ex.mixture, &sim.field, &ex.trace, MaskSource::Given(MaskMatrix { z: z.clone() }), &chain)?;
            row[k + 1] = si_sdr(&ex.clean_wave, &out.wave, 1024)?;
        }
        for k in 0..3 {
            sums[k] += row[k] / n as f64;
        }
        println!("{seed:5}  {:7}  {:9.2} {:7.2} {:9.2}", ex.overlapped, row[0], row[1], row[2]);
    }
    println!("mean            {:9.2} {:7.2} {:9.2}", sums[0], sums[1], sums[2]);
    Ok(())
}
