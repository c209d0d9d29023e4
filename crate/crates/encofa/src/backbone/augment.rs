//! Weak, label-preserving input augmentation for pseudo-label views.
//!
//! Images get a random horizontal flip and a rotation in [-10, 10] degrees;
//! vectors get additive Gaussian jitter scaled to 5% of the per-dimension
//! training std, with draws clamped at three sigma so the perturbation
//! stays inside a known radius.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::InputShape;

#[derive(Debug, Clone)]
pub enum Augmenter {
    Disabled,
    Vector {
        /// Per-dimension jitter scale: 0.05 * train std.
        sigma: Vec<f64>,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
        max_rotation_deg: f64,
    },
}

impl Augmenter {
    /// Standard weak augmenter for a dataset, given the train-split
    /// per-dimension std (vectors only).
    pub fn for_dataset(shape: &InputShape, train_std: &[f64]) -> Augmenter {
        match *shape {
            InputShape::Vector { .. } => Augmenter::Vector {
                sigma: train_std.iter().map(|s| 0.05 * s).collect(),
            },
            InputShape::Image { channels, height, width } => Augmenter::Image {
                channels,
                height,
                width,
                max_rotation_deg: 10.0,
            },
        }
    }

    pub fn apply<R: Rng>(&self, input: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            Augmenter::Disabled => input.to_vec(),
            Augmenter::Vector { sigma } => input
                .iter()
                .zip(sigma)
                .map(|(x, s)| {
                    let g: f64 = rng.sample(StandardNormal);
                    x + s * g.clamp(-3.0, 3.0)
                })
                .collect(),
            Augmenter::Image { channels, height, width, max_rotation_deg } => {
                let mut out = input.to_vec();
                if rng.gen::<f64>() < 0.5 {
                    out = flip_horizontal(&out, *channels, *height, *width);
                }
                let theta = rng.gen_range(-max_rotation_deg..=*max_rotation_deg);
                rotate_image(&out, *channels, *height, *width, theta.to_radians())
            }
        }
    }

    /// Largest per-dimension displacement this augmenter can produce on
    /// vector inputs.
    pub fn jitter_radius(&self) -> Option<Vec<f64>> {
        match self {
            Augmenter::Vector { sigma } => Some(sigma.iter().map(|s| 3.0 * s).collect()),
            _ => None,
        }
    }
}

/// Mirror a channel-major image along the x axis.
pub fn flip_horizontal(img: &[f64], channels: usize, height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                out[c * height * width + y * width + x] =
                    img[c * height * width + y * width + (width - 1 - x)];
            }
        }
    }
    out
}

/// Rotate a channel-major image by `theta` radians about its center with
/// bilinear resampling; samples falling outside the frame read as 0.
pub fn rotate_image(
    img: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    theta: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    for c in 0..channels {
        let plane = &img[c * height * width..(c + 1) * height * width];
        for y in 0..height {
            for x in 0..width {
                // Inverse map: rotate the destination pixel back into the
                // source frame.
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = cy + dy * cos - dx * sin;
                let sx = cx + dy * sin + dx * cos;
                out[c * height * width + y * width + x] =
                    bilinear(plane, height, width, sy, sx);
            }
        }
    }
    out
}

fn bilinear(plane: &[f64], height: usize, width: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let mut acc = 0.0;
    for (oy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (ox, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let py = y0 as i64 + oy;
            let px = x0 as i64 + ox;
            if py < 0 || px < 0 || py >= height as i64 || px >= width as i64 {
                continue;
            }
            acc += wy * wx * plane[py as usize * width + px as usize];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn disabled_is_identity() {
        let mut rng = stream_rng(0, "aug", 0, 0);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(Augmenter::Disabled.apply(&x, &mut rng), x);
    }

    #[test]
    fn vector_jitter_stays_inside_the_radius() {
        let aug = Augmenter::for_dataset(&InputShape::Vector { dim: 4 }, &[1.0, 2.0, 0.0, 0.5]);
        let radius = aug.jitter_radius().unwrap();
        let mut rng = stream_rng(1, "aug", 0, 0);
        let x = vec![0.0; 4];
        for _ in 0..500 {
            let out = aug.apply(&x, &mut rng);
            for (d, (o, r)) in out.iter().zip(&radius).enumerate() {
                assert!(o.abs() <= r + 1e-12, "dim {d}: {o} beyond radius {r}");
            }
            // Zero-variance dimensions never move.
            assert_eq!(out[2], 0.0);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img: Vec<f64> = (0..2 * 4 * 6).map(|i| i as f64).collect();
        let back = flip_horizontal(&flip_horizontal(&img, 2, 4, 6), 2, 4, 6);
        assert_eq!(img, back);
    }

    /// Rotating a smooth image by theta and then -theta reproduces the
    /// original interior. Bilinear sampling is exact on affine images, so
    /// the error budget is boundary leakage only, kept out by a zero margin.
    #[test]
    fn rotation_round_trip_on_a_smooth_image() {
        let (h, w) = (16, 16);
        let mut img = vec![0.0; h * w];
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                img[y * w + x] = 0.1 + 0.03 * y as f64 + 0.02 * x as f64;
            }
        }
        let theta = 10.0f64.to_radians();
        let once = rotate_image(&img, 1, h, w, theta);
        let back = rotate_image(&once, 1, h, w, -theta);
        for y in 5..h - 5 {
            for x in 5..w - 5 {
                let diff = (back[y * w + x] - img[y * w + x]).abs();
                assert!(diff <= 1e-2, "pixel ({y},{x}) differs by {diff}");
            }
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img: Vec<f64> = (0..3 * 5 * 5).map(|i| (i % 11) as f64 * 0.1).collect();
        let out = rotate_image(&img, 3, 5, 5, 0.0);
        for (a, b) in img.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
