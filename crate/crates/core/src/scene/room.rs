//! Shoebox room with low-order image sources.

use super::geometry::{norm, sub, Vec3, SPEED_OF_SOUND};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Room {
    /// Width (x), depth (y), height (z) in meters.
    pub dims: Vec3,
    pub rt60: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub order: usize,
}

impl Room {
    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface(&self) -> f64 {
        let [w, d, h] = self.dims;
        2.0 * (w * d + w * h + d * h)
    }

    /// Uniform wall pressure reflection coefficient from Sabine's formula.
    pub fn reflection_coefficient(&self) -> f64 {
        let absorption = (0.161 * self.volume() / (self.surface() * self.rt60)).clamp(0.0, 1.0);
        (1.0 - absorption).sqrt()
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dims[i])
    }

    /// All images of `src` with total reflection order `<= max_order`, the
    /// direct path (order 0) first.
    pub fn images(&self, src: Vec3, max_order: usize) -> Vec<ImageSource> {
        let n = max_order as i64;
        let axis = |i: usize| -> Vec<(f64, usize)> {
            let l = self.dims[i];
            let x = src[i];
            let mut out = Vec::new();
            for k in -n..=n {
                let even = (2 * k).unsigned_abs() as usize;
                if even <= max_order {
                    out.push((2.0 * k as f64 * l + x, even));
                }
                let odd = (2 * k - 1).unsigned_abs() as usize;
                if odd <= max_order {
                    out.push((2.0 * k as f64 * l - x, odd));
                }
            }
            out
        };
        let (xs, ys, zs) = (axis(0), axis(1), axis(2));
        let mut images = Vec::new();
        for &(x, ox) in &xs {
            for &(y, oy) in &ys {
                for &(z, oz) in &zs {
                    let order = ox + oy + oz;
                    if order <= max_order {
                        images.push(ImageSource {
                            position: [x, y, z],
                            order,
                        });
                    }
                }
            }
        }
        images.sort_by_key(|im| im.order);
        images
    }
}

/// Delay (samples, rounded) and gain of an image relative to the direct path
/// from `direct` to `receiver`.
pub fn relative_path(
    image: &ImageSource,
    direct: Vec3,
    receiver: Vec3,
    beta: f64,
    sample_rate: u32,
) -> (usize, f64) {
    let d0 = norm(sub(direct, receiver));
    let d = norm(sub(image.position, receiver));
    let delay = ((d - d0) / SPEED_OF_SOUND * sample_rate as f64).round().max(0.0) as usize;
    let gain = beta.powi(image.order as i32) * d0 / d;
    (delay, gain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_counts_by_order() {
        let room = Room {
            dims: [5.0, 6.0, 3.0],
            rt60: 0.2,
        };
        let src = [1.0, 2.0, 1.2];
        assert_eq!(room.images(src, 0).len(), 1);
        assert_eq!(room.images(src, 1).len(), 7);
        assert_eq!(room.images(src, 2).len(), 25);
        let first = room.images(src, 2)[0];
        assert_eq!(first.order, 0);
        assert_eq!(first.position, src);
    }

    #[test]
    fn first_order_images_mirror_walls() {
        let room = Room {
            dims: [5.0, 6.0, 3.0],
            rt60: 0.2,
        };
        let imgs = room.images([1.0, 2.0, 1.2], 1);
        assert!(imgs.iter().any(|im| im.position == [-1.0, 2.0, 1.2]));
        assert!(imgs.iter().any(|im| im.position == [9.0, 2.0, 1.2]));
        assert!(imgs.iter().any(|im| im.position == [1.0, 10.0, 1.2]));
    }

    #[test]
    fn longer_rt60_reflects_more() {
        let a = Room {
            dims: [6.0, 7.0, 3.0],
            rt60: 0.15,
        };
        let b = Room { rt60: 0.3, ..a };
        assert!(b.reflection_coefficient() > a.reflection_coefficient());
        assert!(a.reflection_coefficient() > 0.0 && b.reflection_coefficient() < 1.0);
    }
}
