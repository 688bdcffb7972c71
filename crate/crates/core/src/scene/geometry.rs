//! Array geometry, far-field steering vectors and direction grids.
//!
//! Frames are right-handed with `x` to the right, `y` forward and `z` up.
//! Azimuth turns from `+y` toward `-x` (counter-clockwise seen from above),
//! elevation lifts toward `+z`.

use std::f64::consts::PI;

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Unit vector for an azimuth/elevation pair (radians).
pub fn direction_from_angles(azimuth: f64, elevation: f64) -> Vec3 {
    [
        -azimuth.sin() * elevation.cos(),
        azimuth.cos() * elevation.cos(),
        elevation.sin(),
    ]
}

pub fn angles_of(dir: Vec3) -> (f64, f64) {
    let d = normalize(dir);
    ((-d[0]).atan2(d[1]), d[2].clamp(-1.0, 1.0).asin())
}

/// Head orientation: yaw about `z` then pitch about the head's `x` axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Pose {
    /// Columns are the head axes expressed in the world frame.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        // Rz(az) * Rx(el)
        [[ca, -sa * ce, sa * se], [sa, ca * ce, -ca * se], [0.0, se, ce]]
    }

    pub fn to_head(&self, world: Vec3) -> Vec3 {
        let r = self.rotation();
        [
            r[0][0] * world[0] + r[1][0] * world[1] + r[2][0] * world[2],
            r[0][1] * world[0] + r[1][1] * world[1] + r[2][1] * world[2],
            r[0][2] * world[0] + r[1][2] * world[1] + r[2][2] * world[2],
        ]
    }

    pub fn to_world(&self, head: Vec3) -> Vec3 {
        let r = self.rotation();
        [
            r[0][0] * head[0] + r[0][1] * head[1] + r[0][2] * head[2],
            r[1][0] * head[0] + r[1][1] * head[1] + r[1][2] * head[2],
            r[2][0] * head[0] + r[2][1] * head[1] + r[2][2] * head[2],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    /// Microphone positions in the head frame, meters.
    pub mic_positions: Vec<Vec3>,
    pub reference: usize,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Vec3>, reference: usize) -> Result<Self> {
        if mic_positions.is_empty() {
            return Err(Error::invalid("array needs at least one microphone"));
        }
        if reference >= mic_positions.len() {
            return Err(Error::invalid(format!(
                "reference {reference} out of range for {} mics",
                mic_positions.len()
            )));
        }
        for i in 0..mic_positions.len() {
            for j in 0..i {
                if norm(sub(mic_positions[i], mic_positions[j])) < 1e-9 {
                    return Err(Error::invalid(format!("mics {j} and {i} coincide")));
                }
            }
        }
        Ok(Self {
            mic_positions,
            reference,
        })
    }

    /// Four microphones on an eyeglass frame: two at the front corners and
    /// two near the temples, reference at the front left.
    pub fn headset() -> Self {
        Self::new(
            vec![
                [-0.065, 0.02, 0.01],
                [0.065, 0.02, 0.01],
                [-0.075, -0.06, -0.005],
                [0.075, -0.06, -0.005],
            ],
            0,
        )
        .expect("static geometry")
    }

    pub fn channels(&self) -> usize {
        self.mic_positions.len()
    }

    /// Arrival delay (seconds) of a plane wave from `doa` at each mic,
    /// relative to the reference.
    pub fn delays(&self, doa: Vec3) -> Vec<f64> {
        let r = self.mic_positions[self.reference];
        self.mic_positions
            .iter()
            .map(|&p| -dot(sub(p, r), doa) / SPEED_OF_SOUND)
            .collect()
    }
}

/// Far-field steering vector `a_m = exp(-i 2 pi f tau_m)` toward the unit
/// vector `doa` (pointing from the array to the source). The reference entry
/// is exactly 1.
pub fn steering_vector(geometry: &ArrayGeometry, doa: Vec3, frequency_hz: f64) -> Vec<Complex64> {
    geometry
        .delays(doa)
        .into_iter()
        .enumerate()
        .map(|(m, tau)| {
            if m == geometry.reference {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -2.0 * PI * frequency_hz * tau)
            }
        })
        .collect()
}

/// Frequencies of the `n_fft / 2 + 1` STFT bins.
pub fn bin_frequencies(n_fft: usize, sample_rate: u32) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect()
}

/// Steering vectors for a grid of directions, `D x F x M`.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringField {
    pub directions: Vec<Vec3>,
    pub vectors: Array3<Complex64>,
}

impl SteeringField {
    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn bins(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.vectors.shape()[2]
    }

    /// Grid index with the largest cosine to `doa`.
    pub fn nearest(&self, doa: Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let c = dot(*d, doa);
            if c > best_dot {
                best_dot = c;
                best = i;
            }
        }
        best
    }

    pub fn vector(&self, d: usize, f: usize) -> Vec<Complex64> {
        (0..self.channels()).map(|m| self.vectors[[d, f, m]]).collect()
    }
}

pub fn build_steering_field(
    geometry: &ArrayGeometry,
    azimuths: &[f64],
    elevations: &[f64],
    n_fft: usize,
    sample_rate: u32,
) -> Result<SteeringField> {
    if azimuths.is_empty() || elevations.is_empty() {
        return Err(Error::invalid("direction grid must be nonempty"));
    }
    let freqs = bin_frequencies(n_fft, sample_rate);
    let mut directions = Vec::with_capacity(azimuths.len() * elevations.len());
    for &el in elevations {
        for &az in azimuths {
            directions.push(direction_from_angles(az, el));
        }
    }
    let m = geometry.channels();
    let mut vectors = Array3::zeros((directions.len(), freqs.len(), m));
    for (d, &dir) in directions.iter().enumerate() {
        for (f, &hz) in freqs.iter().enumerate() {
            for (c, a) in steering_vector(geometry, dir, hz).into_iter().enumerate() {
                vectors[[d, f, c]] = a;
            }
        }
    }
    Ok(SteeringField {
        directions,
        vectors,
    })
}

/// `count` azimuths evenly covering the full circle, in radians.
pub fn azimuth_grid(count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| -PI + 2.0 * PI * i as f64 / count as f64)
        .collect()
}

/// The default desk grid: 36 azimuths x elevations {-30, 0, 30} degrees.
pub fn desk_field(geometry: &ArrayGeometry, n_fft: usize) -> SteeringField {
    let els: Vec<f64> = [-30.0f64, 0.0, 30.0].iter().map(|d| d.to_radians()).collect();
    build_steering_field(geometry, &azimuth_grid(36), &els, n_fft, crate::signal::SAMPLE_RATE)
        .expect("nonempty grid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadside_has_no_delay() {
        let g = ArrayGeometry::new(vec![[-0.05, 0.0, 0.0], [0.05, 0.0, 0.0]], 0).unwrap();
        let a = steering_vector(&g, [0.0, 1.0, 0.0], 3000.0);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn endfire_phase_matches_hand_computation() {
        let g = ArrayGeometry::new(vec![[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]], 0).unwrap();
        let a = steering_vector(&g, [1.0, 0.0, 0.0], 1600.0);
        let expect = 2.0 * PI * 1600.0 * 0.05 / 343.0;
        assert!((expect - 1.4656).abs() < 2e-4);
        assert!((a[1].arg().abs() - expect).abs() < 1e-12);
    }

    #[test]
    fn field_shapes_and_unit_modulus() {
        let g = ArrayGeometry::headset();
        let field = desk_field(&g, 512);
        assert_eq!(field.num_directions(), 108);
        assert_eq!(field.bins(), 257);
        assert!(field.vectors.iter().all(|a| (a.norm() - 1.0).abs() < 1e-12));
        for d in 0..field.num_directions() {
            for f in 0..field.bins() {
                assert_eq!(field.vectors[[d, f, g.reference]], Complex64::new(1.0, 0.0));
            }
        }
        // 1020-direction grid from the original setup
        let azs = azimuth_grid(60);
        let els: Vec<f64> = (0..17).map(|i| (-80.0 + 10.0 * i as f64).to_radians()).collect();
        let big = build_steering_field(&g, &azs, &els, 16, 16000).unwrap();
        assert_eq!(big.num_directions(), 1020);
    }

    #[test]
    fn nearest_finds_grid_point() {
        let g = ArrayGeometry::headset();
        let field = desk_field(&g, 64);
        for (i, d) in field.directions.iter().enumerate() {
            assert_eq!(field.nearest(*d), i);
        }
    }

    #[test]
    fn pose_rotation_is_orthonormal_and_consistent() {
        let p = Pose {
            azimuth: 0.4,
            elevation: -0.3,
        };
        let fwd = p.to_world([0.0, 1.0, 0.0]);
        let expect = direction_from_angles(0.4, -0.3);
        for i in 0..3 {
            assert!((fwd[i] - expect[i]).abs() < 1e-12);
        }
        let v = [0.3, -0.2, 0.9];
        let back = p.to_head(p.to_world(v));
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
        let (az, el) = angles_of(direction_from_angles(1.0, 0.2));
        assert!((az - 1.0).abs() < 1e-12 && (el - 0.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_geometry() {
        assert!(ArrayGeometry::new(vec![], 0).is_err());
        assert!(ArrayGeometry::new(vec![[0.0; 3]], 1).is_err());
        assert!(ArrayGeometry::new(vec![[0.0; 3], [0.0; 3]], 0).is_err());
    }
}
