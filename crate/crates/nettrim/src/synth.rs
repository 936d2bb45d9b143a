//! Deterministic synthetic digit dataset for tests and demos.
//!
//! Renders a 5x7 bitmap font scaled to 15x21 onto a 28x28 canvas with
//! seeded position jitter, intensity scaling and background noise. The
//! classes are cleanly separable, so a LeNet-class network learns them to
//! high accuracy in a couple of epochs, which makes the full trim loop
//! exercisable without any external data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::Result;
use crate::tensor::Tensor;

const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

const SCALE: usize = 3;
const SIDE: usize = 28;

/// Generate `n` labeled 28x28 examples, classes cycling 0..10,
/// deterministic per seed.
pub fn synthetic_digits(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f32; n * SIDE * SIDE];
    let mut labels = Vec::with_capacity(n);
    for ex in 0..n {
        let class = (ex % 10) as u8;
        labels.push(class);
        let img = &mut data[ex * SIDE * SIDE..(ex + 1) * SIDE * SIDE];
        let x0 = rng.random_range(2..=11usize);
        let y0 = rng.random_range(1..=6usize);
        let intensity = rng.random_range(0.7..1.0f32);
        for v in img.iter_mut() {
            *v = rng.random_range(0.0..0.12f32);
        }
        let glyph = &GLYPHS[class as usize];
        for (gy, row_bits) in glyph.iter().enumerate() {
            for gx in 0..5 {
                if row_bits & (1 << (4 - gx)) == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let y = y0 + gy * SCALE + dy;
                        let x = x0 + gx * SCALE + dx;
                        img[y * SIDE + x] = intensity;
                    }
                }
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, SIDE, SIDE], data)?, labels)
}
