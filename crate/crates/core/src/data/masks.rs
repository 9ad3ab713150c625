use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::NdArray;
use crate::{Error, Result};

pub const MAX_MASK_ATTEMPTS: u64 = 100;
pub const RATIO_TOLERANCE: f64 = 0.02;

struct Canvas {
    size: usize,
    hole: Vec<bool>,
    holes: usize,
}

impl Canvas {
    fn ratio(&self) -> f64 {
        self.holes as f64 / (self.size * self.size) as f64
    }

    fn stamp(&mut self, cx: f64, cy: f64, radius: f64) {
        let s = self.size as isize;
        let r = radius.ceil() as isize;
        let (x0, y0) = (cx.round() as isize, cy.round() as isize);
        for y in (y0 - r).max(0)..(y0 + r + 1).min(s) {
            for x in (x0 - r).max(0)..(x0 + r + 1).min(s) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let i = (y * s + x) as usize;
                if dx * dx + dy * dy <= radius * radius && !self.hole[i] {
                    self.hole[i] = true;
                    self.holes += 1;
                }
            }
        }
    }
}

/// Draws strokes until the hole ratio reaches `goal`. Returns false if the
/// walk ran out of vertices first.
fn stroke(c: &mut Canvas, rng: &mut ChaCha8Rng, goal: f64) -> bool {
    let s = c.size as f64;
    let scale = s / 256.0;
    let radius = (rng.random_range(8.0..=24.0) * scale / 2.0).max(0.5);
    let (mut x, mut y) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
    for _ in 0..64 {
        angle += rng.random_range(-1.2..1.2);
        let len = rng.random_range(10.0..40.0) * scale.max(0.125);
        let steps = len.ceil().max(1.0) as usize;
        for _ in 0..steps {
            x = (x + angle.cos() * len / steps as f64).clamp(0.0, s - 1.0);
            y = (y + angle.sin() * len / steps as f64).clamp(0.0, s - 1.0);
            c.stamp(x, y, radius);
            if c.ratio() >= goal {
                return true;
            }
        }
        if x <= 0.0 || y <= 0.0 || x >= s - 1.0 || y >= s - 1.0 {
            angle += std::f64::consts::PI;
        }
    }
    false
}

/// A `[1, size, size]` mask of 3–8 random-walk brush strokes whose hole
/// ratio is within ±0.02 of `target_ratio`. Each stroke fills its share of
/// the target. Deterministic per `seed`.
pub fn generate_mask(seed: u64, size: usize, target_ratio: f64) -> Result<NdArray<f32>> {
    if !(target_ratio > 0.0 && target_ratio <= 0.6) {
        return Err(Error::InvalidArgument(format!("target hole ratio {target_ratio} outside (0, 0.6]")));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("mask size must be positive".into()));
    }
    for attempt in 0..MAX_MASK_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let mut c = Canvas { size, hole: vec![false; size * size], holes: 0 };
        let strokes = rng.random_range(3..=8);
        for k in 1..=strokes {
            let goal = target_ratio * k as f64 / strokes as f64;
            while c.ratio() < goal && !stroke(&mut c, &mut rng, goal) {}
        }
        if (c.ratio() - target_ratio).abs() <= RATIO_TOLERANCE {
            return Ok(NdArray::from_fn(&[1, size, size], |i| if c.hole[i] { 0.0 } else { 1.0 }));
        }
    }
    Err(Error::Numeric(format!(
        "could not reach hole ratio {target_ratio} at {size}x{size} within {MAX_MASK_ATTEMPTS} attempts"
    )))
}
