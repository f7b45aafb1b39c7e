use std::time::Instant;

use super::{
    apply_mask, build_kernel_grid, convolve_blockwise, convolve_exact, valid_mask, DefocusSource,
    KernelSource, SensorGeometry,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::PsfModel;
use crate::scalar::Scalar;

/// Deviation of the grid-interpolated result from per-pixel model kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub spacing: usize,
    /// Largest absolute pixel difference inside the aperture.
    pub max_err: f64,
    /// Mean absolute pixel difference inside the aperture.
    pub mean_err: f64,
    /// Wall time of grid construction plus blockwise convolution.
    pub seconds: f64,
}

/// One row per distinct spacing, ascending.
pub fn interpolation_error_report<T: Scalar, M: PsfModel<T>>(
    image: &Image<T>,
    model: &M,
    geom: &SensorGeometry<T>,
    defocus: &DefocusSource<'_, T>,
    spacings: &[usize],
) -> Result<Vec<ErrorRow>> {
    geom.validate()?;
    geom.check_image(image)?;
    if spacings.is_empty() || spacings.contains(&0) {
        return Err(Error::InvalidParameter("spacings must be positive and non-empty".into()));
    }
    let mut spacings = spacings.to_vec();
    spacings.sort_unstable();
    spacings.dedup();
    let mask = valid_mask(geom);
    let masked = apply_mask(image, &mask)?;
    let reference = apply_mask(
        &convolve_exact(
            &masked,
            KernelSource::Model {
                model,
                defocus: *defocus,
            },
            geom,
        )?,
        &mask,
    )?;
    let valid = mask.iter().filter(|&&m| m).count() * image.num_channels();
    spacings
        .into_iter()
        .map(|s| {
            let start = Instant::now();
            let grid = build_kernel_grid(model, geom, defocus, s)?;
            let out = apply_mask(&convolve_blockwise(&masked, &grid, geom)?, &mask)?;
            let seconds = start.elapsed().as_secs_f64();
            let mut max_err = 0.0f64;
            let mut sum = 0.0f64;
            for (a, b) in out.channels().iter().zip(reference.channels()) {
                for ((&x, &y), &m) in a.iter().zip(b).zip(&mask) {
                    if m {
                        let d = (x - y).abs().to_f64_lossy();
                        max_err = max_err.max(d);
                        sum += d;
                    }
                }
            }
            Ok(ErrorRow {
                spacing: s,
                max_err,
                mean_err: if valid > 0 { sum / valid as f64 } else { 0.0 },
                seconds,
            })
        })
        .collect()
}
