//! Seeded synthetic B-scans with eight wavy layer boundaries, used as CI
//! fixtures in place of the real dataset.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loader::mask_from_boundaries, RawSample, NUM_CLASSES};

/// `n` samples of `height x width` with labels `0..8` laid out like the
/// retinal masks: background above the first boundary and below the last,
/// seven bands in between. Intensities are integers in `0..=255`.
pub fn layered_samples(n: usize, height: usize, width: usize, seed: u64) -> Vec<RawSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boundaries = NUM_CLASSES;
    let top = 0.15 * height as f64;
    let spacing = 0.7 * height as f64 / (boundaries - 1) as f64;
    (0..n)
        .map(|i| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amplitude = rng.random_range(0.0..0.1 * height as f64);
            let shift = rng.random_range(-0.05..0.05) * height as f64;
            let b = Array2::from_shape_fn((boundaries, width), |(l, x)| {
                let wave = amplitude * (phase + x as f64 * std::f64::consts::TAU / width as f64).sin();
                (top + shift + wave + l as f64 * spacing).clamp(1.0, height as f64) + 1.0
            });
            let mask = mask_from_boundaries(height, &b);
            let mut below_last = Array2::from_elem((height, width), false);
            for x in 0..width {
                for y in 0..height {
                    below_last[[y, x]] = (y + 1) as f64 >= b[[boundaries - 1, x]].round();
                }
            }
            let image = Array2::from_shape_fn((height, width), |(y, x)| {
                let base = match mask[[y, x]] {
                    0 if below_last[[y, x]] => 60.0,
                    0 => 10.0,
                    k => 40.0 + 28.0 * k as f64,
                };
                (base + rng.random_range(-6.0..6.0f64)).round().clamp(0.0, 255.0)
            });
            RawSample {
                image,
                mask,
                source_id: format!("synthetic_{i:03}"),
            }
        })
        .collect()
}
