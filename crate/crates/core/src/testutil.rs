//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imgproc::gaussian_blur_plane;
use crate::raster::{Plane, Raster};

/// Smooth random texture with strong local gradients, stretched to [20, 235].
pub fn textured(w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Plane {
        width: w,
        height: h,
        data: (0..w * h).map(|_| rng.random::<f64>()).collect(),
    };
    let p = gaussian_blur_plane(&noise, 1.5, 7).unwrap();
    let lo = p.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Raster::from_fn(w, h, |x, y| {
        (20.0 + 215.0 * (p.get(x, y) - lo) / (hi - lo)).round() as u8
    })
}
