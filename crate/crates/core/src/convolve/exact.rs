use rayon::prelude::*;

use super::{clamp_index, field_of_pixel, DefocusSource, KernelGrid, SensorGeometry};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::PsfModel;
use crate::scalar::Scalar;

/// Where per-pixel kernels come from.
#[derive(Clone, Copy)]
pub enum KernelSource<'a, T> {
    /// Bilinear interpolation between grid nodes.
    Grid(&'a KernelGrid<T>),
    /// Direct model evaluation at every pixel.
    Model {
        model: &'a dyn PsfModel<T>,
        defocus: DefocusSource<'a, T>,
    },
}

/// Literal scatter sum with one kernel per source pixel, sources visited in
/// row-major order over the edge-extended image.
pub fn convolve_exact<T: Scalar>(
    image: &Image<T>,
    source: KernelSource<'_, T>,
    geom: &SensorGeometry<T>,
) -> Result<Image<T>> {
    geom.validate()?;
    geom.check_image(image)?;
    let (w, h) = (geom.width, geom.height);
    let k = match source {
        KernelSource::Grid(g) => {
            if g.width() != w || g.height() != h {
                return Err(Error::ShapeMismatch("grid and image differ in size".into()));
            }
            g.kernel_size()
        }
        KernelSource::Model { model, defocus } => {
            defocus.check(geom)?;
            model.kernel_size()
        }
    };
    let rad = (k / 2) as isize;
    let mut out = vec![vec![T::zero(); w * h]; image.num_channels()];
    let mut row_kernels: Vec<Option<Vec<T>>> = Vec::new();
    let mut cached_row = usize::MAX;
    let mut scratch = vec![T::zero(); k * k];

    for pr in -rad..h as isize + rad {
        let cr = clamp_index(pr, h);
        if let KernelSource::Model { model, defocus } = source {
            if cr != cached_row {
                row_kernels = model_row(image, model, geom, &defocus, cr, k)?;
                cached_row = cr;
            }
        }
        for pc in -rad..w as isize + rad {
            let cc = clamp_index(pc, w);
            let kernel: &[T] = match source {
                KernelSource::Grid(g) => {
                    g.interpolated_values(cr, cc, &mut scratch);
                    &scratch
                }
                KernelSource::Model { .. } => match &row_kernels[cc] {
                    Some(v) => v,
                    None => continue,
                },
            };
            for (ch, dst) in out.iter_mut().enumerate() {
                let v = image.get(ch, cr, cc);
                scatter(dst, w, h, pr, pc, rad, kernel, k, v);
            }
        }
    }
    Ok(Image::from_parts_unchecked(w, h, out))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn scatter<T: Scalar>(
    dst: &mut [T],
    w: usize,
    h: usize,
    pr: isize,
    pc: isize,
    rad: isize,
    kernel: &[T],
    k: usize,
    v: T,
) {
    for ky in 0..k {
        let qr = pr + ky as isize - rad;
        if qr < 0 || qr >= h as isize {
            continue;
        }
        let row = &mut dst[qr as usize * w..(qr as usize + 1) * w];
        for kx in 0..k {
            let qc = pc + kx as isize - rad;
            if qc < 0 || qc >= w as isize {
                continue;
            }
            row[qc as usize] += v * kernel[ky * k + kx];
        }
    }
}

/// Model kernels for one image row, skipping pixels that are zero in every
/// channel since they contribute nothing.
fn model_row<T: Scalar>(
    image: &Image<T>,
    model: &dyn PsfModel<T>,
    geom: &SensorGeometry<T>,
    defocus: &DefocusSource<'_, T>,
    row: usize,
    k: usize,
) -> Result<Vec<Option<Vec<T>>>> {
    let ranges = model.ranges();
    (0..geom.width)
        .into_par_iter()
        .map(|col| {
            let silent = (0..image.num_channels()).all(|ch| image.get(ch, row, col) == T::zero());
            if silent {
                return Ok(None);
            }
            let fp = field_of_pixel(geom, row, col, defocus);
            let fp = if ranges.contains(&fp) { fp } else { ranges.clamp(&fp) };
            let kernel = model.psf(&fp)?;
            if kernel.size() != k {
                return Err(Error::ShapeMismatch("model kernel size changed".into()));
            }
            Ok(Some(kernel.into_values()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::build_kernel_grid;
    use crate::kernel::{interpolate_kernels, PsfKernel};
    use crate::model::ConstantKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng, k: usize) -> PsfKernel<f64> {
        let v: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>()).collect();
        crate::kernel::normalize(&PsfKernel::new(k, 6.0, v).unwrap()).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, ch: usize) -> Image<f64> {
        Image::new(w, h, (0..ch).map(|_| (0..w * h).map(|_| rng.gen()).collect()).collect())
            .unwrap()
    }

    fn geom(w: usize, h: usize) -> SensorGeometry<f64> {
        SensorGeometry::centered(w, h, 6.0, 100.0).unwrap()
    }

    /// Independent brute force: clamp-extended sources, corner kernels blended
    /// per source with the public interpolation routine.
    fn brute_force(img: &Image<f64>, corners: &[PsfKernel<f64>; 4], s: usize) -> Vec<f64> {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let k = corners[0].size() as isize;
        let c = k / 2;
        let mut out = vec![0.0; (w * h) as usize];
        for pr in -c..h + c {
            for pc in -c..w + c {
                let (sr, sc) = (pr.clamp(0, h - 1), pc.clamp(0, w - 1));
                let wx = sc as f64 / s as f64;
                let wy = sr as f64 / s as f64;
                let kp = interpolate_kernels(
                    &corners[0], &corners[1], &corners[2], &corners[3], wx, wy,
                )
                .unwrap();
                let v = img.get(0, sr as usize, sc as usize);
                for ky in 0..k {
                    for kx in 0..k {
                        let (qr, qc) = (pr + ky - c, pc + kx - c);
                        if (0..h).contains(&qr) && (0..w).contains(&qc) {
                            let i = (qr * w + qc) as usize;
                            out[i] += v * kp.get(ky as usize, kx as usize);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (w, h, s) = (32, 32, 31);
        let img = random_image(&mut rng, w, h, 1);
        let corners = [
            random_kernel(&mut rng, 5),
            random_kernel(&mut rng, 5),
            random_kernel(&mut rng, 5),
            random_kernel(&mut rng, 5),
        ];
        let grid = KernelGrid::new(w, h, s, corners.to_vec()).unwrap();
        assert_eq!(grid.dims(), (2, 2));
        let out = convolve_exact(&img, KernelSource::Grid(&grid), &geom(w, h)).unwrap();
        assert_eq!(out.channel(0), brute_force(&img, &corners, s).as_slice());
    }

    #[test]
    fn delta_kernels_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 20, 12, 2);
        let grid = KernelGrid::new(20, 12, 8, vec![PsfKernel::delta(7, 6.0).unwrap(); 12]).unwrap();
        let out = convolve_exact(&img, KernelSource::Grid(&grid), &geom(20, 12)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_stays_constant_under_one_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_kernel(&mut rng, 5);
        let grid = KernelGrid::new(24, 24, 12, vec![k; 9]).unwrap();
        let img = Image::filled(24, 24, 1, 0.7);
        let out = convolve_exact(&img, KernelSource::Grid(&grid), &geom(24, 24)).unwrap();
        // Edge extension keeps a uniform field uniform up to the border.
        for &v in out.channel(0) {
            assert!((v - 0.7).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn varying_kernels_conserve_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernels: Vec<_> = (0..9).map(|_| random_kernel(&mut rng, 5)).collect();
        let grid = KernelGrid::new(24, 24, 12, kernels).unwrap();
        // Content at least one kernel radius away from every edge.
        let mut img = Image::filled(24, 24, 1, 0.0);
        for r in 2..22 {
            for c in 2..22 {
                img.channel_mut(0)[r * 24 + c] = rng.gen();
            }
        }
        let out = convolve_exact(&img, KernelSource::Grid(&grid), &geom(24, 24)).unwrap();
        let total = |i: &Image<f64>| i.channel(0).iter().sum::<f64>();
        assert!((total(&out) - total(&img)).abs() < 1e-12 * total(&img));
    }

    #[test]
    fn model_source_matches_constant_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = random_kernel(&mut rng, 5);
        let model = ConstantKernel::new(k.clone()).unwrap();
        let g = geom(16, 10);
        let img = random_image(&mut rng, 16, 10, 1);
        let a = convolve_exact(
            &img,
            KernelSource::Model {
                model: &model,
                defocus: DefocusSource::Constant(0.0),
            },
            &g,
        )
        .unwrap();
        let grid = build_kernel_grid(&model, &g, &DefocusSource::Constant(0.0), 4).unwrap();
        let b = convolve_exact(&img, KernelSource::Grid(&grid), &g).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        let grid = KernelGrid::new(8, 8, 4, vec![PsfKernel::delta(3, 6.0).unwrap(); 9]).unwrap();
        let img = Image::filled(9, 8, 1, 1.0);
        assert!(matches!(
            convolve_exact(&img, KernelSource::Grid(&grid), &geom(9, 8)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(convolve_exact(&img, KernelSource::Grid(&grid), &geom(8, 8)).is_err());
    }
}
