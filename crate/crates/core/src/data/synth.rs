use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::NdArray;

/// A smooth `[3, size, size]` test image within [−0.8, 0.8]: a colour gradient
/// with a few soft discs, fully determined by `seed`.
pub fn synthetic_image(seed: u64, size: usize) -> NdArray<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f64; 3]; 3] = std::array::from_fn(|_| {
        [rng.random_range(-0.4..0.4), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)]
    });
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.1..0.3),
                std::array::from_fn(|_| rng.random_range(-0.75..0.75)),
            )
        })
        .collect();
    let s = size as f64;
    NdArray::from_fn(&[3, size, size], |i| {
        let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
        let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let mut val = base[c][0] + base[c][1] * u + base[c][2] * v;
        for &(cx, cy, r, col) in &discs {
            let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
            let w = 1.0 / (1.0 + ((d - r) * 40.0).exp());
            val = val * (1.0 - w) + col[c] * w;
        }
        val.clamp(-1.0, 1.0) as f32
    })
}
