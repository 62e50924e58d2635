//! Ground-truth images for synthetic experiments.
//!
//! [`scene`] renders a procedural grayscale photograph-like scene (sky
//! gradient, horizon, textured ground, a tower and a dark figure) at any
//! resolution, so no bundled image files are needed. A faint fixed texture
//! keeps every window linearly independent of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Shape2};

fn hash_noise(r: usize, c: usize) -> f64 {
    // splitmix64 of the pixel coordinates, mapped to [-1, 1)
    let mut z = (r as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((c as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Procedural scene with values in `[0, 255]`.
pub fn scene(shape: Shape2) -> Image {
    use std::f64::consts::PI;
    Image::from_fn(shape, |r, c| {
        let v = (r as f64 + 0.5) / shape.rows as f64;
        let u = (c as f64 + 0.5) / shape.cols as f64;

        let horizon = 0.64 + 0.04 * (2.0 * PI * 1.3 * u).sin();
        let mut val = if v < horizon {
            165.0 + 70.0 * (1.0 - v) + 12.0 * (2.0 * PI * (0.7 * u + 0.4 * v)).sin()
        } else {
            let grass = (2.0 * PI * (9.0 * u + 2.0 * v)).sin() * (2.0 * PI * 6.0 * v).cos();
            100.0 + 35.0 * grass - 30.0 * (v - horizon)
        };

        // tower on the right
        if (0.70..0.79).contains(&u) && v > 0.22 && v < horizon {
            val = 140.0 + 40.0 * (u - 0.70) / 0.09;
        }
        if (0.73..0.76).contains(&u) && v > 0.12 && v <= 0.22 {
            val = 120.0;
        }

        // tripod legs
        for (x0, slope) in [(0.42, -0.35), (0.44, 0.05), (0.46, 0.40)] {
            let x = x0 + slope * (v - 0.55);
            if v > 0.55 && v < 0.95 && (u - x).abs() < 0.012 {
                val = 30.0;
            }
        }

        // figure: coat and head
        let body = ((u - 0.33) / 0.12).powi(2) + ((v - 0.56) / 0.26).powi(2);
        if body < 1.0 {
            val = 22.0 + 25.0 * v + 8.0 * (2.0 * PI * 5.0 * u).sin();
        }
        let head = ((u - 0.35) / 0.065).powi(2) + ((v - 0.25) / 0.075).powi(2);
        if head < 1.0 {
            val = 40.0 + 30.0 * (1.0 - head);
        }
        // camera
        if (0.38..0.48).contains(&u) && (0.30..0.37).contains(&v) {
            val = 15.0;
        }

        (val + 6.0 * hash_noise(r, c)).clamp(0.0, 255.0)
    })
}

/// I.i.d. uniform pixels in `[0, 255)`.
pub fn uniform_noise(shape: Shape2, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(shape, |_, _| rng.random::<f64>() * 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_in_range_and_nontrivial() {
        let img = scene(Shape2::of(64, 64));
        assert!(img.data().iter().all(|v| (0.0..=255.0).contains(v)));
        let mean = img.mean();
        let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4096.0;
        assert!(var > 500.0, "scene variance {var}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(scene(Shape2::of(20, 30)), scene(Shape2::of(20, 30)));
        assert_eq!(
            uniform_noise(Shape2::of(5, 5), 3),
            uniform_noise(Shape2::of(5, 5), 3)
        );
    }
}
