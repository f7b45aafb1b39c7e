//! Synthetic test scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::scalar::Scalar;

/// Squares of side `square` alternating between `low` and `high`, starting
/// with `high` at the top-left corner.
pub fn checkerboard<T: Scalar>(width: usize, height: usize, square: usize, low: T, high: T) -> Image<T> {
    let square = square.max(1);
    let values = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| if (r / square + c / square).is_multiple_of(2) { high } else { low })
        .collect();
    Image::from_parts_unchecked(width, height, vec![values])
}

/// Seeded scene with a roughly `1/f` amplitude spectrum: octaves of
/// bilinearly interpolated lattice noise, each octave's amplitude proportional
/// to its lattice spacing. Values are rescaled to `[0.05, 0.95]`.
pub fn natural_image<T: Scalar>(width: usize, height: usize, seed: u64) -> Image<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; width * height];
    let mut cell = width.max(height).next_power_of_two().max(2);
    while cell >= 1 {
        let nx = width / cell + 2;
        let ny = height / cell + 2;
        let lattice: Vec<f64> = (0..nx * ny).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let amp = cell as f64;
        for r in 0..height {
            let (i, fy) = (r / cell, (r % cell) as f64 / cell as f64);
            for c in 0..width {
                let (j, fx) = (c / cell, (c % cell) as f64 / cell as f64);
                let at = |a: usize, b: usize| lattice[a * nx + b];
                let v = (1.0 - fy) * ((1.0 - fx) * at(i, j) + fx * at(i, j + 1))
                    + fy * ((1.0 - fx) * at(i + 1, j) + fx * at(i + 1, j + 1));
                acc[r * width + c] += amp * v;
            }
        }
        cell /= 2;
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let values = acc
        .iter()
        .map(|&v| T::lit(0.05 + 0.9 * (v - lo) / span))
        .collect();
    Image::from_parts_unchecked(width, height, vec![values])
}
