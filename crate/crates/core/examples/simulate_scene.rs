//! Simulates one desk scene (image-source room, moving head, optional
//! interferer) and writes the reference-mic mixture and dry target.
//!
//! cargo run --release --example simulate_scene -- [seed] [out-dir]

use std::path::PathBuf;

use hmadapt::scene::{SceneConfig, Simulator};
use hmadapt::signal::istft;
use hmadapt::wav::{write_wav, SampleFormat};

fn main() -> hmadapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scene_out".into()));
    let sim = Simulator::desk(SceneConfig::default())?;
    let ex = sim.synthesize("scene", seed)?;
    let l = &ex.layout;
    println!("transcript   {:?}", ex.transcript);
    println!("duration     {:.2} s, {} frames", ex.duration_secs(), ex.frames());
    let d = l.room.dims;
    println!("room         {:.1} x {:.1} x {:.1} m, RT60 {:.2} s", d[0], d[1], d[2], l.room.rt60);
    println!("snr          {:.1} dB, interferer: {}", ex.snr_db, ex.overlapped);
    let idx = ex.trace.indices()?;
    let switches = idx.windows(2).filter(|w| w[0] != w[1]).count();
    println!("trace        {} directions visited, {switches} switches", ex.trace.distinct().len());

    std::fs::create_dir_all(&out)?;
    let mix = istft(&ex.mixture.select_channel(0), ex.mixture.window, ex.mixture.hop)?;
    write_wav(out.join("mixture_ref.wav"), &mix, SampleFormat::Float32)?;
    write_wav(out.join("target.wav"), &ex.clean_wave, SampleFormat::Float32)?;
    println!("wrote {}", out.display());
    Ok(())
}
