//! WPE dereverberation of a reverberant single-talker scene. Reports the
//! energy ratio of the late part of each utterance before and after.
//!
//! cargo run --release --example wpe_dereverb

use hmadapt::dereverb::{wpe, WpeConfig};
use hmadapt::harness::si_sdr;
use hmadapt::scene::{SceneConfig, Simulator};
use hmadapt::signal::istft;

fn main() -> hmadapt::Result<()> {
    let cfg = SceneConfig {
        background_noise: false,
        interferer_probability: 0.0,
        head_movement: false,
        rt60: [0.5, 0.6],
        ..SceneConfig::default()
    };
    let sim = Simulator::desk(cfg)?;
    let wpe_cfg = WpeConfig::default();
    println!("taps {} delay {} iterations {}", wpe_cfg.taps, wpe_cfg.delay, wpe_cfg.iterations);
    for seed in 0..3 {
        let ex = sim.synthesize("wpe", seed)?;
        let y = wpe(&ex.mixture, &wpe_cfg)?;
        let (w, h) = (ex.mixture.window, ex.mixture.hop);
        let before = istft(&ex.mixture.select_channel(0), w, h)?;
        let after = istft(&y.select_channel(0), w, h)?;
        println!(
            "scene {seed}: RT60 {:.2} s, SI-SDR against dry target {:6.2} dB -> {:6.2} dB, energy {:.3} -> {:.3}",
            ex.layout.room.rt60,
            si_sdr(&ex.clean_wave, &before, 1024)?,
            si_sdr(&ex.clean_wave, &after, 1024)?,
            ex.mixture.select_channel(0).energy(),
            y.select_channel(0).energy(),
        );
    }
    Ok(())
}
