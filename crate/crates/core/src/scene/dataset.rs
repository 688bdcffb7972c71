//! Seeded scene corpora and their on-disk manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DirectionTrace, SceneExample, SceneLayout, Simulator};
use crate::error::{Error, Result};
use crate::signal::{istft_with, stft_with, WaveBuffer};
use crate::wav::{read_wav, write_wav, SampleFormat};

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture_wav: String,
    pub clean_wav: String,
    pub transcript: String,
    /// `None` for noise-free scenes.
    pub snr_db: Option<f64>,
    pub overlapped: bool,
    pub window: usize,
    pub hop: usize,
    pub num_directions: usize,
    pub directions: Vec<usize>,
}

/// Seed of example `index` under `master` (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Layouts only; cheap enough for large scene-statistics checks.
pub fn plan_dataset(sim: &Simulator, seed: u64, count: usize) -> Result<Vec<SceneLayout>> {
    (0..count as u64)
        .map(|i| sim.sample_layout(derive_seed(seed, i)))
        .collect()
}

/// Synthesizes `count` scenes. When `out_dir` is given, writes
/// `<id>.mix.wav` (all microphones), `<id>.clean.wav` and `manifest.jsonl`.
pub fn generate_dataset(
    sim: &Simulator,
    seed: u64,
    count: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<SceneExample>> {
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let mut examples = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let id = format!("scene{i:05}");
        examples.push(sim.synthesize(&id, derive_seed(seed, i))?);
    }
    if let Some(dir) = out_dir {
        write_dataset(sim, &examples, dir)?;
    }
    Ok(examples)
}

pub fn write_dataset(sim: &Simulator, examples: &[SceneExample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
    for ex in examples {
        let mix = istft_with(sim.plan(), &ex.mixture)?;
        let mix_name = format!("{}.mix.wav", ex.id);
        let clean_name = format!("{}.clean.wav", ex.id);
        write_wav(dir.join(&mix_name), &mix, SampleFormat::Float32)?;
        write_wav(dir.join(&clean_name), &ex.clean_wave, SampleFormat::Float32)?;
        let rec = ManifestRecord {
            id: ex.id.clone(),
            mixture_wav: mix_name,
            clean_wav: clean_name,
            transcript: ex.transcript.clone(),
            snr_db: ex.snr_db.is_finite().then_some(ex.snr_db),
            overlapped: ex.overlapped,
            window: ex.mixture.window,
            hop: ex.mixture.hop,
            num_directions: ex.trace.num_directions,
            directions: ex.trace.indices()?,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(manifest, "{line}")?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// A scene reloaded from disk: enough to enhance and score it.
#[derive(Clone, Debug)]
pub struct StoredScene {
    pub record: ManifestRecord,
    pub mixture: crate::signal::ComplexSpectrogram,
    pub clean: WaveBuffer,
    pub trace: DirectionTrace,
}

pub fn load_scene(dir: &Path, record: &ManifestRecord) -> Result<StoredScene> {
    let mix = read_wav(dir.join(&record.mixture_wav))?;
    let clean = read_wav(dir.join(&record.clean_wav))?;
    let plan = crate::signal::StftPlan::new(record.window, record.hop)?;
    let mixture = stft_with(&plan, &mix)?;
    if mixture.frames() != record.directions.len() {
        return Err(Error::Data(format!(
            "{}: {} frames but {} direction entries",
            record.id,
            mixture.frames(),
            record.directions.len()
        )));
    }
    let trace = DirectionTrace::from_indices(record.num_directions, &record.directions);
    Ok(StoredScene {
        record: record.clone(),
        mixture,
        clean,
        trace,
    })
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.jsonl")
}
