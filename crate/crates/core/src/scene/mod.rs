//! Multichannel conversational scenes with a moving head.
//!
//! Mixing happens in the STFT domain following `x_ft = a_ft s_ft + e_ft`:
//! the target's direct path is the dry token audio steered by the
//! head-relative direction of each frame, while early reflections
//! (image-source method), an optional interfering talker and colored
//! background noise make up `e_ft`.

pub mod dataset;
pub mod geometry;
pub mod room;
pub mod tones;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::asr::Vocabulary;
use crate::error::{Error, Result};
use crate::signal::{stft_with, ComplexSpectrogram, StftPlan, WaveBuffer, SAMPLE_RATE};

pub use dataset::{generate_dataset, plan_dataset, ManifestRecord};
pub use geometry::{
    build_steering_field, desk_field, steering_vector, ArrayGeometry, Pose, SteeringField, Vec3,
};
pub use room::Room;
pub use tones::{tone_lexicon_render, ToneConfig, DESK_WORDS};

use geometry::{bin_frequencies, normalize, sub};

/// Per-frame indicator of which grid direction holds the target.
///
/// `None` marks a frame with no active direction; consumers reject such
/// traces with an invalid-input error.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionTrace {
    pub num_directions: usize,
    pub active: Vec<Option<usize>>,
}

impl DirectionTrace {
    pub fn constant(num_directions: usize, direction: usize, frames: usize) -> Self {
        Self {
            num_directions,
            active: vec![Some(direction); frames],
        }
    }

    pub fn from_indices(num_directions: usize, idx: &[usize]) -> Self {
        Self {
            num_directions,
            active: idx.iter().map(|&d| Some(d)).collect(),
        }
    }

    /// Builds a trace from a `D x T` 0/1 gate matrix.
    pub fn from_gates(gates: &Array2<f64>) -> Result<Self> {
        let (d, t) = gates.dim();
        let mut active = Vec::with_capacity(t);
        for col in gates.axis_iter(Axis(1)) {
            let on: Vec<usize> = col
                .iter()
                .enumerate()
                .filter(|(_, &g)| g != 0.0)
                .map(|(i, _)| i)
                .collect();
            if col.iter().any(|&g| g != 0.0 && g != 1.0) || on.len() > 1 {
                return Err(Error::invalid("direction gates must be one-hot per frame"));
            }
            active.push(on.first().copied());
        }
        Ok(Self {
            num_directions: d,
            active,
        })
    }

    pub fn frames(&self) -> usize {
        self.active.len()
    }

    pub fn gate(&self, d: usize, t: usize) -> f64 {
        if self.active[t] == Some(d) {
            1.0
        } else {
            0.0
        }
    }

    pub fn gates(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.num_directions, self.frames()), |(d, t)| self.gate(d, t))
    }

    /// Indices of the active direction per frame, failing on gaps.
    pub fn indices(&self) -> Result<Vec<usize>> {
        self.active
            .iter()
            .enumerate()
            .map(|(t, a)| {
                a.filter(|&d| d < self.num_directions)
                    .ok_or_else(|| Error::invalid(format!("frame {t} has no active direction")))
            })
            .collect()
    }

    /// Distinct active directions in first-seen order.
    pub fn distinct(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for d in self.active.iter().flatten() {
            if !out.contains(d) {
                out.push(*d);
            }
        }
        out
    }

    /// The same frames collapsed onto a single direction (time-invariant
    /// filtering baseline).
    pub fn collapsed(&self) -> Self {
        let d = self.distinct().first().copied().unwrap_or(0);
        Self::constant(self.num_directions, d, self.frames())
    }
}

/// Head azimuth/elevation per STFT frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrajectory {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
}

impl PoseTrajectory {
    pub fn pose(&self, t: usize) -> Pose {
        Pose {
            azimuth: self.azimuth[t],
            elevation: self.elevation[t],
        }
    }

    pub fn frames(&self) -> usize {
        self.azimuth.len()
    }
}

type Range = [f64; 2];

/// Everything the scene sampler draws from. Serialized as a flat key-value
/// (TOML) file; every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub window: usize,
    pub hop: usize,
    pub room_width: Range,
    pub room_depth: Range,
    pub room_height: Range,
    pub rt60: Range,
    pub user_x_frac: Range,
    pub user_y_frac: Range,
    pub user_z: Range,
    pub source_x_frac: Range,
    pub source_y_frac: Range,
    pub source_z: Range,
    pub head_azimuth_deg: Range,
    pub head_elevation_deg: Range,
    pub head_movement: bool,
    pub interferer_probability: f64,
    pub snr_db: Range,
    pub background_noise: bool,
    pub ism_order: usize,
    /// One-pole coloring coefficient of the background noise (positive:
    /// low-pass, negative: high-pass tilt).
    pub noise_pole: f64,
    /// Share of background energy coming from a single point source.
    pub noise_point_fraction: f64,
    pub words: [usize; 2],
    pub min_source_distance: f64,
    pub max_attempts: usize,
    pub tones: ToneConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            window: 512,
            hop: 128,
            room_width: [5.0, 7.0],
            room_depth: [6.0, 8.0],
            room_height: [2.5, 3.5],
            rt60: [0.15, 0.30],
            user_x_frac: [0.4, 0.6],
            user_y_frac: [0.15, 0.35],
            user_z: [1.0, 1.5],
            source_x_frac: [0.1, 0.9],
            source_y_frac: [0.4, 0.85],
            source_z: [1.0, 1.5],
            head_azimuth_deg: [-72.0, 72.0],
            head_elevation_deg: [-45.0, 45.0],
            head_movement: true,
            interferer_probability: 0.5,
            snr_db: [-2.0, 8.0],
            background_noise: true,
            ism_order: 2,
            noise_pole: 0.7,
            noise_point_fraction: 0.3,
            words: [1, 2],
            min_source_distance: 0.5,
            max_attempts: 100,
            tones: ToneConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("room_width", self.room_width),
            ("room_depth", self.room_depth),
            ("room_height", self.room_height),
            ("rt60", self.rt60),
            ("user_x_frac", self.user_x_frac),
            ("user_y_frac", self.user_y_frac),
            ("user_z", self.user_z),
            ("source_x_frac", self.source_x_frac),
            ("source_y_frac", self.source_y_frac),
            ("source_z", self.source_z),
            ("head_azimuth_deg", self.head_azimuth_deg),
            ("head_elevation_deg", self.head_elevation_deg),
            ("snr_db", self.snr_db),
        ];
        for (name, r) in ranges {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::Config(format!("{name}: empty range {r:?}")));
            }
        }
        if self.rt60[0] <= 0.0 || self.room_width[0] <= 0.0 || self.room_depth[0] <= 0.0 {
            return Err(Error::Config("room sizes and rt60 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.interferer_probability)
            || !(0.0..=1.0).contains(&self.noise_point_fraction)
        {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.noise_pole.abs() >= 1.0 {
            return Err(Error::Config("noise_pole must lie in (-1, 1)".into()));
        }
        if self.words[0] > self.words[1] {
            return Err(Error::Config("words: empty range".into()));
        }
        StftPlan::new(self.window, self.hop).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Anechoic, noise-free, single talker with a still head.
    pub fn clean_single_source() -> Self {
        Self {
            head_movement: false,
            interferer_probability: 0.0,
            background_noise: false,
            ism_order: 0,
            ..Self::default()
        }
    }
}

fn draw(rng: &mut impl Rng, r: Range) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Randomly drawn scene parameters, before any audio is rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub room: Room,
    pub user: Vec3,
    pub pose_start: Pose,
    pub pose_end: Pose,
    /// Fraction of the utterance after which the head has moved.
    pub switch_fraction: f64,
    pub target: Vec3,
    pub interferer: Option<Vec3>,
    pub transcript: String,
    pub interferer_transcript: Option<String>,
    pub snr_db: f64,
    pub noise_azimuth: f64,
    pub render_seed: u64,
}

impl SceneLayout {
    pub fn sample(cfg: &SceneConfig, lexicon: &[&str], rng: &mut impl Rng) -> Result<Self> {
        let pose = |rng: &mut ChaCha8Rng| Pose {
            azimuth: draw(rng, cfg.head_azimuth_deg).to_radians(),
            elevation: draw(rng, cfg.head_elevation_deg).to_radians(),
        };
        let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
        for _ in 0..cfg.max_attempts.max(1) {
            let room = Room {
                dims: [
                    draw(&mut local, cfg.room_width),
                    draw(&mut local, cfg.room_depth),
                    draw(&mut local, cfg.room_height),
                ],
                rt60: draw(&mut local, cfg.rt60),
            };
            let place = |rng: &mut ChaCha8Rng, fx: Range, fy: Range, z: Range| -> Vec3 {
                [
                    draw(rng, fx) * room.dims[0],
                    draw(rng, fy) * room.dims[1],
                    draw(rng, z),
                ]
            };
            let user = place(&mut local, cfg.user_x_frac, cfg.user_y_frac, cfg.user_z);
            let target = place(&mut local, cfg.source_x_frac, cfg.source_y_frac, cfg.source_z);
            let interferer_pos = place(&mut local, cfg.source_x_frac, cfg.source_y_frac, cfg.source_z);
            let active = local.gen::<f64>() < cfg.interferer_probability;
            let pose_start = pose(&mut local);
            let pose_end = if cfg.head_movement {
                pose(&mut local)
            } else {
                pose_start
            };
            let switch_fraction = local.gen_range(1.0 / 3.0..2.0 / 3.0);
            let words = local.gen_range(cfg.words[0]..=cfg.words[1]);
            let transcript = tones::sample_transcript(lexicon, words, &mut local);
            let iwords = local.gen_range(cfg.words[0]..=cfg.words[1]);
            let interferer_transcript = tones::sample_transcript(lexicon, iwords, &mut local);
            let snr_db = draw(&mut local, cfg.snr_db);
            let noise_azimuth = local.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let render_seed = local.gen();

            let far_enough = |p: Vec3| geometry::norm(sub(p, user)) >= cfg.min_source_distance;
            let ok = room.contains(user)
                && room.contains(target)
                && far_enough(target)
                && (!active || (room.contains(interferer_pos) && far_enough(interferer_pos)));
            if ok {
                return Ok(Self {
                    room,
                    user,
                    pose_start,
                    pose_end,
                    switch_fraction,
                    target,
                    interferer: active.then_some(interferer_pos),
                    transcript,
                    interferer_transcript: active.then_some(interferer_transcript),
                    snr_db,
                    noise_azimuth,
                    render_seed,
                });
            }
        }
        Err(Error::Config(format!(
            "could not place talkers inside the room after {} attempts",
            cfg.max_attempts
        )))
    }
}

/// One simulated utterance.
#[derive(Clone, Debug)]
pub struct SceneExample {
    pub id: String,
    /// Observed `X`, `M x F x T`.
    pub mixture: ComplexSpectrogram,
    /// Dry target `S` at the reference microphone, `1 x F x T`.
    pub clean_target: ComplexSpectrogram,
    pub clean_wave: WaveBuffer,
    pub trace: DirectionTrace,
    pub poses: PoseTrajectory,
    /// Exact head-relative direction of the target per frame.
    pub target_doa: Vec<Vec3>,
    pub transcript: String,
    pub snr_db: f64,
    pub overlapped: bool,
    pub layout: SceneLayout,
}

impl SceneExample {
    pub fn frames(&self) -> usize {
        self.mixture.frames()
    }

    pub fn duration_secs(&self) -> f64 {
        self.mixture.signal_len as f64 / SAMPLE_RATE as f64
    }
}

/// Speech (all talkers, reverberant) and background components at every
/// microphone; `mixture = speech + noise`.
#[derive(Clone, Debug)]
pub struct SceneParts {
    pub speech: Array3<Complex64>,
    pub noise: Array3<Complex64>,
    /// Direct-path target image `a_ft s_ft`.
    pub target_direct: Array3<Complex64>,
}

/// Shared, read-only simulation context.
pub struct Simulator {
    pub config: SceneConfig,
    pub geometry: ArrayGeometry,
    pub field: SteeringField,
    pub vocab: Vocabulary,
    pub lexicon: Vec<String>,
    plan: StftPlan,
}

impl Simulator {
    pub fn new(config: SceneConfig, geometry: ArrayGeometry, field: SteeringField, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if field.bins() != config.window / 2 + 1 || field.channels() != geometry.channels() {
            return Err(Error::Config("steering field does not match geometry/framing".into()));
        }
        let plan = StftPlan::new(config.window, config.hop)?;
        Ok(Self {
            config,
            geometry,
            field,
            vocab,
            lexicon: DESK_WORDS.iter().map(|s| s.to_string()).collect(),
            plan,
        })
    }

    /// Headset array, desk direction grid and desk vocabulary.
    pub fn desk(config: SceneConfig) -> Result<Self> {
        let geometry = ArrayGeometry::headset();
        let field = desk_field(&geometry, config.window);
        Self::new(config, geometry, field, Vocabulary::desk())
    }

    pub fn with_lexicon(mut self, lexicon: &[&str]) -> Result<Self> {
        tones::validate_lexicon(&self.vocab, lexicon)?;
        self.lexicon = lexicon.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    fn lexicon_refs(&self) -> Vec<&str> {
        self.lexicon.iter().map(|s| s.as_str()).collect()
    }

    pub fn sample_layout(&self, seed: u64) -> Result<SceneLayout> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SceneLayout::sample(&self.config, &self.lexicon_refs(), &mut rng)
    }

    pub fn synthesize(&self, id: &str, seed: u64) -> Result<SceneExample> {
        Ok(self.synthesize_with_parts(id, seed)?.0)
    }

    pub fn synthesize_with_parts(&self, id: &str, seed: u64) -> Result<(SceneExample, SceneParts)> {
        let layout = self.sample_layout(seed)?;
        self.render(id, layout)
    }

    /// Renders the audio for a sampled layout.
    pub fn render(&self, id: &str, layout: SceneLayout) -> Result<(SceneExample, SceneParts)> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(layout.render_seed);
        let target_wave = tone_lexicon_render(&self.vocab, &layout.transcript, &cfg.tones, &mut rng)?;
        let len = target_wave.len();
        if len < cfg.window {
            return Err(Error::Config("rendered utterance shorter than one window".into()));
        }
        let frames = crate::signal::frame_count(len, cfg.hop);
        let switch = if cfg.head_movement {
            ((frames as f64 * layout.switch_fraction) as usize).min(frames)
        } else {
            frames
        };
        let poses = PoseTrajectory {
            azimuth: (0..frames)
                .map(|t| if t < switch { layout.pose_start.azimuth } else { layout.pose_end.azimuth })
                .collect(),
            elevation: (0..frames)
                .map(|t| if t < switch { layout.pose_start.elevation } else { layout.pose_end.elevation })
                .collect(),
        };

        let m = self.geometry.channels();
        let bins = cfg.window / 2 + 1;
        let freqs = bin_frequencies(cfg.window, SAMPLE_RATE);
        let beta = layout.room.reflection_coefficient();

        let clean = stft_with(&self.plan, &target_wave)?;
        let target_doa: Vec<Vec3> = (0..frames)
            .map(|t| normalize(poses.pose(t).to_head(sub(layout.target, layout.user))))
            .collect();
        let trace = DirectionTrace::from_indices(
            self.field.num_directions(),
            &target_doa.iter().map(|&d| self.field.nearest(d)).collect::<Vec<_>>(),
        );

        let mut speech = Array3::<Complex64>::zeros((m, bins, frames));
        let mut target_direct = Array3::<Complex64>::zeros((m, bins, frames));
        self.add_source(&mut speech, Some(&mut target_direct), &target_wave, layout.target, &layout, &poses, beta, 1.0, &freqs)?;

        let mut overlapped = false;
        if let (Some(pos), Some(text)) = (layout.interferer, layout.interferer_transcript.as_ref()) {
            let iw = tone_lexicon_render(&self.vocab, text, &cfg.tones, &mut rng)?;
            let offset = rng.gen_range(0..=len / 4);
            let mut samples = vec![0.0; len];
            for (i, v) in iw.channel(0).iter().enumerate() {
                if offset + i < len {
                    samples[offset + i] = *v;
                }
            }
            let gain = geometry::norm(sub(layout.target, layout.user))
                / geometry::norm(sub(pos, layout.user));
            let wave = WaveBuffer::mono(samples);
            self.add_source(&mut speech, None, &wave, pos, &layout, &poses, beta, gain, &freqs)?;
            overlapped = true;
        }

        let mut noise = Array3::<Complex64>::zeros((m, bins, frames));
        if cfg.background_noise {
            noise = self.background(&layout, &poses, len, &freqs, &mut rng)?;
            let r = self.geometry.reference;
            let e_speech: f64 = speech.index_axis(Axis(0), r).iter().map(|c| c.norm_sqr()).sum();
            let e_noise: f64 = noise.index_axis(Axis(0), r).iter().map(|c| c.norm_sqr()).sum();
            let g = (e_speech / (e_noise * 10f64.powf(layout.snr_db / 10.0))).sqrt();
            noise.mapv_inplace(|c| c * g);
        }

        let mixture = ComplexSpectrogram {
            data: &speech + &noise,
            window: cfg.window,
            hop: cfg.hop,
            signal_len: len,
        };
        let snr_db = if cfg.background_noise { layout.snr_db } else { f64::INFINITY };
        let example = SceneExample {
            id: id.to_string(),
            mixture,
            clean_target: clean,
            clean_wave: target_wave,
            trace,
            poses,
            target_doa,
            transcript: layout.transcript.clone(),
            snr_db,
            overlapped,
            layout,
        };
        Ok((
            example,
            SceneParts {
                speech,
                noise,
                target_direct,
            },
        ))
    }

    /// Steers every image of a source into `acc`, frame by frame.
    #[allow(clippy::too_many_arguments)]
    fn add_source(
        &self,
        acc: &mut Array3<Complex64>,
        mut direct_out: Option<&mut Array3<Complex64>>,
        dry: &WaveBuffer,
        position: Vec3,
        layout: &SceneLayout,
        poses: &PoseTrajectory,
        beta: f64,
        gain: f64,
        freqs: &[f64],
    ) -> Result<()> {
        let len = dry.len();
        let frames = poses.frames();
        let images = layout.room.images(position, self.config.ism_order);
        let x = dry.channel(0);
        for image in &images {
            let (delay, g) = room::relative_path(image, position, layout.user, beta, SAMPLE_RATE);
            if delay >= len {
                continue;
            }
            let mut shifted = vec![0.0; len];
            for i in delay..len {
                shifted[i] = gain * g * x[i - delay];
            }
            let spec = self.plan.analyze(ndarray::ArrayView1::from(&shifted))?;
            let world_dir = sub(image.position, layout.user);
            let mut cached: Option<(Pose, Vec<Vec<Complex64>>)> = None;
            for t in 0..frames {
                let pose = poses.pose(t);
                if cached.as_ref().map(|(p, _)| *p != pose).unwrap_or(true) {
                    let doa = normalize(pose.to_head(world_dir));
                    let a = freqs
                        .iter()
                        .map(|&hz| steering_vector(&self.geometry, doa, hz))
                        .collect();
                    cached = Some((pose, a));
                }
                let a = &cached.as_ref().expect("filled").1;
                for f in 0..freqs.len() {
                    let s = spec[t * freqs.len() + f];
                    for (mi, am) in a[f].iter().enumerate() {
                        acc[[mi, f, t]] += am * s;
                        if image.order == 0 {
                            if let Some(d) = direct_out.as_deref_mut() {
                                d[[mi, f, t]] += am * s;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Diffuse (independent per mic) plus one far point source of colored
    /// Gaussian noise, each part at unit energy on the reference channel.
    fn background(
        &self,
        layout: &SceneLayout,
        poses: &PoseTrajectory,
        len: usize,
        freqs: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Array3<Complex64>> {
        let m = self.geometry.channels();
        let frames = poses.frames();
        let r = self.geometry.reference;
        let pole = self.config.noise_pole;
        let white = Normal::new(0.0, 1.0).expect("unit normal");
        let colored = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut y = 0.0;
            (0..len)
                .map(|_| {
                    y = (1.0 - pole.abs()) * white.sample(rng) + pole * y;
                    y
                })
                .collect()
        };
        let energy = |a: &Array3<Complex64>| -> f64 {
            a.index_axis(Axis(0), r).iter().map(|c| c.norm_sqr()).sum::<f64>().max(1e-300)
        };

        let mut diffuse = Array3::<Complex64>::zeros((m, freqs.len(), frames));
        for mi in 0..m {
            let n = colored(rng);
            let spec = self.plan.analyze(ndarray::ArrayView1::from(&n))?;
            for t in 0..frames {
                for f in 0..freqs.len() {
                    diffuse[[mi, f, t]] = spec[t * freqs.len() + f];
                }
            }
        }
        let mut point = Array3::<Complex64>::zeros((m, freqs.len(), frames));
        let n = colored(rng);
        let spec = self.plan.analyze(ndarray::ArrayView1::from(&n))?;
        let world_dir = geometry::direction_from_angles(layout.noise_azimuth, 0.0);
        for t in 0..frames {
            let doa = normalize(poses.pose(t).to_head(world_dir));
            for (f, &hz) in freqs.iter().enumerate() {
                let a = steering_vector(&self.geometry, doa, hz);
                let s = spec[t * freqs.len() + f];
                for (mi, am) in a.iter().enumerate() {
                    point[[mi, f, t]] = am * s;
                }
            }
        }
        let p = self.config.noise_point_fraction;
        let kd = ((1.0 - p) / energy(&diffuse)).sqrt();
        let kp = (p / energy(&point)).sqrt();
        Ok(diffuse.mapv(|c| c * kd) + point.mapv(|c| c * kp))
    }
}

/// Convenience wrapper around [`Simulator::synthesize`].
pub fn synthesize_scene(sim: &Simulator, seed: u64) -> Result<SceneExample> {
    sim.synthesize(&format!("scene-{seed:016x}"), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn room_dimensions_respect_ranges() {
        let sim = Simulator::desk(SceneConfig::default()).unwrap();
        for seed in 0..50 {
            let l = sim.sample_layout(seed).unwrap();
            let [w, d, h] = l.room.dims;
            assert!((5.0..=7.0).contains(&w) && (6.0..=8.0).contains(&d) && (2.5..=3.5).contains(&h));
            assert!((0.15..=0.30).contains(&l.room.rt60));
            assert!((-2.0..=8.0).contains(&l.snr_db));
            for p in [l.pose_start, l.pose_end] {
                assert!(p.azimuth.abs() <= 72f64.to_radians() + 1e-12);
                assert!(p.elevation.abs() <= 45f64.to_radians() + 1e-12);
            }
        }
    }

    #[test]
    fn measured_snr_matches_request() {
        let sim = Simulator::desk(SceneConfig::default()).unwrap();
        for seed in 0..3 {
            let (ex, parts) = sim.synthesize_with_parts("s", seed).unwrap();
            let r = sim.geometry.reference;
            let es: f64 = parts.speech.index_axis(Axis(0), r).iter().map(|c| c.norm_sqr()).sum();
            let en: f64 = parts.noise.index_axis(Axis(0), r).iter().map(|c| c.norm_sqr()).sum();
            let measured = 10.0 * (es / en).log10();
            assert!((measured - ex.snr_db).abs() < 0.1, "{measured} vs {}", ex.snr_db);
        }
    }

    #[test]
    fn noise_free_anechoic_mixture_is_steered_target() {
        let sim = Simulator::desk(SceneConfig::clean_single_source()).unwrap();
        let ex = sim.synthesize("s", 7).unwrap();
        let freqs = bin_frequencies(512, SAMPLE_RATE);
        let r = sim.geometry.reference;
        for t in (0..ex.frames()).step_by(7) {
            for f in (0..257).step_by(13) {
                let a = steering_vector(&sim.geometry, ex.target_doa[t], freqs[f]);
                let s = ex.clean_target.data[[0, f, t]];
                for m in 0..4 {
                    assert!((ex.mixture.data[[m, f, t]] - a[m] * s).norm() <= 1e-12 * s.norm().max(1e-12));
                }
                assert_eq!(ex.mixture.data[[r, f, t]], s);
            }
        }
    }

    #[test]
    fn traces_are_one_hot_and_follow_the_head() {
        let sim = Simulator::desk(SceneConfig::default()).unwrap();
        let ex = sim.synthesize("s", 11).unwrap();
        let idx = ex.trace.indices().unwrap();
        assert_eq!(idx.len(), ex.frames());
        let g = ex.trace.gates();
        for t in 0..ex.frames() {
            assert_eq!(g.column(t).sum(), 1.0);
            assert_eq!(idx[t], sim.field.nearest(ex.target_doa[t]));
        }
    }

    #[test]
    fn identical_seeds_identical_scenes() {
        let sim = Simulator::desk(SceneConfig::default()).unwrap();
        let a = sim.synthesize("s", 5).unwrap();
        let b = sim.synthesize("s", 5).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.transcript, b.transcript);
    }

    #[test]
    fn impossible_placement_errors_out() {
        let cfg = SceneConfig {
            min_source_distance: 100.0,
            ..SceneConfig::default()
        };
        let sim = Simulator::desk(cfg).unwrap();
        assert!(matches!(sim.sample_layout(1), Err(Error::Config(_))));
    }

    #[test]
    fn gate_matrix_validation() {
        let mut g = Array2::zeros((3, 2));
        g[[1, 0]] = 1.0;
        let tr = DirectionTrace::from_gates(&g).unwrap();
        assert_eq!(tr.active, vec![Some(1), None]);
        assert!(tr.indices().is_err());
        g[[2, 0]] = 1.0;
        assert!(DirectionTrace::from_gates(&g).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SceneConfig::default();
        let back = SceneConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        let partial = SceneConfig::from_toml("snr_db = [0.0, 0.0]\nhead_movement = false\n").unwrap();
        assert_eq!(partial.snr_db, [0.0, 0.0]);
        assert!(SceneConfig::from_toml("snr_db = [3.0, 1.0]").is_err());
    }
}
