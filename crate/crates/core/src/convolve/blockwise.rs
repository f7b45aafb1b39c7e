use rayon::prelude::*;

use super::{axis_weight, clamp_index, KernelGrid, SensorGeometry};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Output rows per parallel task. Each output pixel receives its terms in the
/// same order whatever the band layout, so results do not depend on it.
const BAND_ROWS: usize = 16;

/// Sum over grid nodes of the node-weighted image convolved with the node
/// kernel. Equal to [`super::convolve_exact`] on the same grid up to
/// floating-point reordering.
pub fn convolve_blockwise<T: Scalar>(
    image: &Image<T>,
    grid: &KernelGrid<T>,
    geom: &SensorGeometry<T>,
) -> Result<Image<T>> {
    geom.validate()?;
    geom.check_image(image)?;
    let (w, h) = (geom.width, geom.height);
    if grid.width() != w || grid.height() != h {
        return Err(Error::ShapeMismatch("grid and image differ in size".into()));
    }
    let bands: Vec<Vec<Vec<T>>> = (0..h.div_ceil(BAND_ROWS))
        .into_par_iter()
        .map(|b| {
            let rows = b * BAND_ROWS..((b + 1) * BAND_ROWS).min(h);
            (0..image.num_channels())
                .map(|ch| band(image.channel(ch), w, h, grid, rows.clone()))
                .collect()
        })
        .collect();
    let mut channels = vec![Vec::with_capacity(w * h); image.num_channels()];
    for band in bands {
        for (dst, part) in channels.iter_mut().zip(band) {
            dst.extend_from_slice(&part);
        }
    }
    Ok(Image::from_parts_unchecked(w, h, channels))
}

/// Extended source range of node `i` on one axis: the pixels inside its hat
/// support, continued past the image edge by `rad` when the support touches it.
fn support(i: usize, s: usize, len: usize, rad: isize) -> (isize, isize) {
    let node = (i * s) as isize;
    let lo = node - s as isize + 1;
    let hi = (node + s as isize - 1).min(len as isize - 1);
    let lo = if lo <= 0 { -rad } else { lo };
    let hi = if hi == len as isize - 1 { hi + rad } else { hi };
    (lo, hi)
}

fn band<T: Scalar>(
    input: &[T],
    w: usize,
    h: usize,
    grid: &KernelGrid<T>,
    rows: std::ops::Range<usize>,
) -> Vec<T> {
    let k = grid.kernel_size();
    let rad = (k / 2) as isize;
    let s = grid.spacing();
    let (nx, ny) = grid.dims();
    let (b0, b1) = (rows.start as isize, rows.end as isize);
    let mut out = vec![T::zero(); w * rows.len()];
    let mut weighted: Vec<T> = Vec::new();

    for i in 0..ny {
        let (r_lo, r_hi) = support(i, s, h, rad);
        // Source rows whose spread can reach this band.
        let r_lo = r_lo.max(b0 - rad);
        let r_hi = r_hi.min(b1 - 1 + rad);
        if r_lo > r_hi {
            continue;
        }
        let row_w: Vec<T> = (r_lo..=r_hi)
            .map(|pr| axis_weight(i, clamp_index(pr, h), s, ny))
            .collect();
        for j in 0..nx {
            let (c_lo, c_hi) = support(j, s, w, rad);
            if c_lo > c_hi {
                continue;
            }
            let bw = (c_hi - c_lo + 1) as usize;
            let col_w: Vec<T> = (c_lo..=c_hi)
                .map(|pc| axis_weight(j, clamp_index(pc, w), s, nx))
                .collect();
            weighted.clear();
            for (pr, &wy) in (r_lo..=r_hi).zip(&row_w) {
                let src = &input[clamp_index(pr, h) * w..];
                weighted.extend(
                    (c_lo..=c_hi)
                        .zip(&col_w)
                        .map(|(pc, &wx)| wy * wx * src[clamp_index(pc, w)]),
                );
            }
            let kernel = grid.kernel(i, j).values();
            for (bi, pr) in (r_lo..=r_hi).enumerate() {
                let src = &weighted[bi * bw..(bi + 1) * bw];
                for ky in 0..k {
                    let qr = pr + ky as isize - rad;
                    if qr < b0 || qr >= b1 {
                        continue;
                    }
                    let dst = &mut out[(qr - b0) as usize * w..(qr - b0 + 1) as usize * w];
                    for kx in 0..k {
                        let kv = kernel[ky * k + kx];
                        let shift = kx as isize - rad;
                        // Source columns landing inside the image.
                        let p0 = c_lo.max(-shift);
                        let p1 = c_hi.min(w as isize - 1 - shift);
                        if p0 > p1 {
                            continue;
                        }
                        let s_off = (p0 - c_lo) as usize;
                        let d_off = (p0 + shift) as usize;
                        let n = (p1 - p0 + 1) as usize;
                        for (d, &v) in dst[d_off..d_off + n].iter_mut().zip(&src[s_off..s_off + n]) {
                            *d += v * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::{convolve_exact, KernelSource};
    use crate::kernel::PsfKernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng, k: usize) -> PsfKernel<f64> {
        let v: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>()).collect();
        crate::kernel::normalize(&PsfKernel::new(k, 6.0, v).unwrap()).unwrap()
    }

    fn setup(seed: u64, w: usize, h: usize, s: usize, k: usize, ch: usize) -> (Image<f64>, KernelGrid<f64>, SensorGeometry<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::new(
            w,
            h,
            (0..ch).map(|_| (0..w * h).map(|_| rng.gen()).collect()).collect(),
        )
        .unwrap();
        let (nx, ny) = crate::convolve::grid_dims(w, h, s);
        let kernels = (0..nx * ny).map(|_| random_kernel(&mut rng, k)).collect();
        let grid = KernelGrid::new(w, h, s, kernels).unwrap();
        (img, grid, SensorGeometry::centered(w, h, 6.0, 100.0).unwrap())
    }

    fn rel_err(a: &Image<f64>, b: &Image<f64>) -> f64 {
        a.max_abs_diff(b).unwrap() / b.max_abs()
    }

    #[test]
    fn equals_exact_on_64x64() {
        let (img, grid, g) = setup(1, 64, 64, 16, 13, 1);
        let fast = convolve_blockwise(&img, &grid, &g).unwrap();
        let slow = convolve_exact(&img, KernelSource::Grid(&grid), &g).unwrap();
        assert!(rel_err(&fast, &slow) < 1e-9);
    }

    #[test]
    fn identical_corners_give_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_kernel(&mut rng, 5);
        let (img, _, g) = setup(6, 30, 20, 8, 5, 1);
        let (nx, ny) = crate::convolve::grid_dims(30, 20, 8);
        let grid = KernelGrid::new(30, 20, 8, vec![k.clone(); nx * ny]).unwrap();
        let out = convolve_blockwise(&img, &grid, &g).unwrap();
        // Plain gather convolution with clamped reads.
        for qr in 0..20isize {
            for qc in 0..30isize {
                let mut acc = 0.0;
                for ky in 0..5isize {
                    for kx in 0..5isize {
                        let (pr, pc) = ((qr - ky + 2).clamp(0, 19), (qc - kx + 2).clamp(0, 29));
                        acc += img.get(0, pr as usize, pc as usize) * k.get(ky as usize, kx as usize);
                    }
                }
                assert!((out.get(0, qr as usize, qc as usize) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn each_cell_sees_four_kernels() {
        // Inside one cell only the four corner nodes carry weight.
        let (w, h, s) = (40usize, 40usize, 10usize);
        let (nx, ny) = crate::convolve::grid_dims(w, h, s);
        let (row, col) = (13, 27);
        let touching = (0..ny)
            .flat_map(|i| (0..nx).map(move |j| (i, j)))
            .filter(|&(i, j)| {
                axis_weight::<f64>(i, row, s, ny) * axis_weight::<f64>(j, col, s, nx) > 0.0
            })
            .collect::<Vec<_>>();
        assert_eq!(touching, vec![(1, 2), (1, 3), (2, 2), (2, 3)]);
    }

    #[test]
    fn independent_of_thread_count() {
        let (img, grid, g) = setup(8, 70, 50, 16, 7, 2);
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| convolve_blockwise(&img, &grid, &g).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }

    #[test]
    fn f32_agrees_with_f64() {
        let (img, grid, g) = setup(9, 24, 24, 8, 5, 1);
        let out64 = convolve_blockwise(&img, &grid, &g).unwrap();
        let img32: Image<f32> = img.cast();
        let kernels: Vec<PsfKernel<f32>> = (0..grid.dims().0 * grid.dims().1)
            .map(|n| {
                let k = grid.kernel(n / grid.dims().0, n % grid.dims().0);
                let v = k.values().iter().map(|&x| x as f32).collect();
                PsfKernel::new_normalized(k.size(), 6.0, v).unwrap()
            })
            .collect();
        let grid32 = KernelGrid::new(24, 24, 8, kernels).unwrap();
        let g32 = SensorGeometry::centered(24, 24, 6.0f32, 100.0).unwrap();
        let out32 = convolve_blockwise(&img32, &grid32, &g32).unwrap();
        assert!(out32.cast::<f64>().max_abs_diff(&out64).unwrap() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn blockwise_matches_exact(
            seed in 0u64..1000,
            w in 1usize..48,
            h in 1usize..48,
            s in 1usize..40,
            k in prop::sample::select(vec![1usize, 3, 5, 9]),
        ) {
            let (img, grid, g) = setup(seed, w, h, s, k, 1);
            let fast = convolve_blockwise(&img, &grid, &g).unwrap();
            let slow = convolve_exact(&img, KernelSource::Grid(&grid), &g).unwrap();
            prop_assert!(rel_err(&fast, &slow) < 1e-9);
        }
    }
}
