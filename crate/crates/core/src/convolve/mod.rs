//! Spatially-variant convolution with scatter semantics: every source pixel
//! spreads its value by its own kernel,
//!
//! ```text
//! out(q) = Σ_p in(p) · K_p(q − p + c),   c = (size_k − 1) / 2.
//! ```
//!
//! Sources beyond the image rectangle repeat the nearest edge pixel (value and
//! kernel), so a uniform image stays uniform up to the border. Pixels outside
//! the sensor aperture are zeroed by [`degrade`] before and after convolving.
//!
//! [`convolve_blockwise`] evaluates the same sum with kernels bilinearly
//! interpolated between grid nodes as one plain convolution per node of the
//! node-weighted image; [`convolve_exact`] is the literal per-pixel sum.

mod blockwise;
mod exact;
mod grid;
mod report;

pub use blockwise::convolve_blockwise;
pub use exact::{convolve_exact, KernelSource};
pub use grid::{build_kernel_grid, grid_dims, KernelGrid};
pub use report::{interpolation_error_report, ErrorRow};

use crate::depth::DefocusMap;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::{wrap_degrees, FieldPoint};
use crate::model::{PsfModel, SpatiallyInvariant};
use crate::scalar::Scalar;

/// Sensor layout. Rows grow downward; azimuth is measured counter-clockwise
/// from the +column axis with y pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGeometry<T> {
    pub width: usize,
    pub height: usize,
    /// µm.
    pub pixel_pitch: T,
    /// `(row, col)` in pixels.
    pub optical_center: (T, T),
    /// Aperture radius in mm.
    pub r_max: T,
}

impl<T: Scalar> SensorGeometry<T> {
    /// Optical axis through the geometric image center.
    pub fn centered(width: usize, height: usize, pixel_pitch: T, r_max: T) -> Result<Self> {
        let half = |n: usize| (T::from_usize_lossy(n) - T::one()) * T::lit(0.5);
        let g = Self {
            width,
            height,
            pixel_pitch,
            optical_center: (half(height), half(width)),
            r_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::ShapeMismatch("empty sensor".into()));
        }
        if !(self.pixel_pitch > T::zero() && self.pixel_pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!("pixel pitch {}", self.pixel_pitch)));
        }
        if !(self.r_max > T::zero()) {
            return Err(Error::InvalidParameter(format!("aperture radius {}", self.r_max)));
        }
        let (r, c) = self.optical_center;
        if !(r.is_finite() && c.is_finite()) {
            return Err(Error::InvalidParameter("optical center must be finite".into()));
        }
        Ok(())
    }

    /// Image height in mm and azimuth in degrees of a (possibly fractional)
    /// pixel position.
    pub fn polar(&self, row: T, col: T) -> (T, T) {
        let x = col - self.optical_center.1;
        let y = self.optical_center.0 - row;
        let r = self.pixel_pitch * x.hypot(y) / T::lit(1000.0);
        if r == T::zero() {
            return (r, T::zero());
        }
        (r, wrap_degrees(y.atan2(x).to_degrees()))
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.polar(T::from_usize_lossy(row), T::from_usize_lossy(col)).0 <= self.r_max
    }

    fn check_image(&self, image: &Image<T>) -> Result<()> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{}, sensor is {}x{}",
                image.width(),
                image.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// Per-pixel defocus in µm.
#[derive(Debug, Clone, Copy)]
pub enum DefocusSource<'a, T> {
    Constant(T),
    Map(&'a DefocusMap<T>),
}

impl<T: Scalar> DefocusSource<'_, T> {
    /// Defocus at a pixel; positions off the map read the nearest pixel.
    pub fn at(&self, row: usize, col: usize) -> T {
        match self {
            Self::Constant(dz) => *dz,
            Self::Map(m) => m.get(row.min(m.height() - 1), col.min(m.width() - 1)),
        }
    }

    fn check(&self, geom: &SensorGeometry<T>) -> Result<()> {
        match self {
            Self::Constant(dz) if !dz.is_finite() => {
                Err(Error::InvalidParameter(format!("defocus {dz}")))
            }
            Self::Map(m) if m.width() != geom.width || m.height() != geom.height => {
                Err(Error::ShapeMismatch(format!(
                    "defocus map is {}x{}, sensor is {}x{}",
                    m.width(),
                    m.height(),
                    geom.width,
                    geom.height
                )))
            }
            _ => Ok(()),
        }
    }
}

pub fn field_of_pixel<T: Scalar>(
    geom: &SensorGeometry<T>,
    row: usize,
    col: usize,
    defocus: &DefocusSource<'_, T>,
) -> FieldPoint<T> {
    let (r, phi) = geom.polar(T::from_usize_lossy(row), T::from_usize_lossy(col));
    FieldPoint::new(defocus.at(row, col), r, phi)
}

/// Row-major aperture mask: `true` where the image height is within `r_max`.
pub fn valid_mask<T: Scalar>(geom: &SensorGeometry<T>) -> Vec<bool> {
    (0..geom.height)
        .flat_map(|r| (0..geom.width).map(move |c| (r, c)))
        .map(|(r, c)| geom.is_valid(r, c))
        .collect()
}

/// Zeroes every pixel outside the aperture, in all channels.
pub fn apply_mask<T: Scalar>(image: &Image<T>, mask: &[bool]) -> Result<Image<T>> {
    if mask.len() != image.width() * image.height() {
        return Err(Error::ShapeMismatch("mask and image differ in size".into()));
    }
    let channels = image
        .channels()
        .iter()
        .map(|ch| {
            ch.iter()
                .zip(mask)
                .map(|(&v, &m)| if m { v } else { T::zero() })
                .collect()
        })
        .collect();
    Ok(Image::from_parts_unchecked(image.width(), image.height(), channels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DegradeOptions {
    /// Query the model at `R = 0, φ = 0` everywhere; only defocus varies.
    pub spatially_invariant: bool,
}

/// Masks the image, samples kernels on a grid of spacing `spacing` and applies
/// them with [`convolve_blockwise`].
pub fn degrade<T: Scalar, M: PsfModel<T>>(
    image: &Image<T>,
    model: &M,
    geom: &SensorGeometry<T>,
    defocus: &DefocusSource<'_, T>,
    spacing: usize,
    options: DegradeOptions,
) -> Result<Image<T>> {
    geom.validate()?;
    geom.check_image(image)?;
    let mask = valid_mask(geom);
    let masked = apply_mask(image, &mask)?;
    let grid = if options.spatially_invariant {
        build_kernel_grid(&SpatiallyInvariant(model), geom, defocus, spacing)?
    } else {
        build_kernel_grid(model, geom, defocus, spacing)?
    };
    apply_mask(&convolve_blockwise(&masked, &grid, geom)?, &mask)
}

/// Shared node/pixel weighting: for a coordinate `pos` on an axis with
/// `nodes` nodes spaced `s` apart, the lower node of its cell and the
/// fractional offset toward the upper one.
#[inline]
pub(crate) fn axis_cell<T: Scalar>(pos: usize, s: usize, nodes: usize) -> (usize, T) {
    let i0 = (pos / s).min(nodes - 2);
    let f = T::from_usize_lossy(pos - i0 * s) / T::from_usize_lossy(s);
    (i0, f)
}

/// Hat weight of node `i` at `pos`.
#[inline]
pub(crate) fn axis_weight<T: Scalar>(i: usize, pos: usize, s: usize, nodes: usize) -> T {
    let (i0, f) = axis_cell::<T>(pos, s, nodes);
    if i == i0 {
        T::one() - f
    } else if i == i0 + 1 {
        f
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn clamp_index(p: isize, n: usize) -> usize {
    p.clamp(0, n as isize - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom(w: usize, h: usize) -> SensorGeometry<f64> {
        SensorGeometry::centered(w, h, 6.0, 3.0).unwrap()
    }

    #[test]
    fn field_of_pixel_examples() {
        let g = SensorGeometry {
            width: 1201,
            height: 1201,
            pixel_pitch: 6.0,
            optical_center: (600.0, 600.0),
            r_max: 3.0,
        };
        let d = DefocusSource::Constant(2.5);
        assert_eq!(field_of_pixel(&g, 600, 600, &d), FieldPoint::new(2.5, 0.0, 0.0));
        let right = field_of_pixel(&g, 600, 1100, &d);
        assert_abs_diff_eq!(right.r, 3.0, epsilon = 1e-12);
        assert_eq!(right.phi, 0.0);
        let up = field_of_pixel(&g, 100, 600, &d);
        assert_abs_diff_eq!(up.r, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(up.phi, 90.0, epsilon = 1e-12);
        let left = field_of_pixel(&g, 600, 100, &d);
        assert_abs_diff_eq!(left.phi, 180.0, epsilon = 1e-12);
        let down = field_of_pixel(&g, 1100, 600, &d);
        assert_abs_diff_eq!(down.phi, 270.0, epsilon = 1e-12);
    }

    #[test]
    fn mask_matches_circle_area() {
        let g = SensorGeometry {
            width: 1100,
            height: 1100,
            pixel_pitch: 6.0,
            optical_center: (549.5, 549.5),
            r_max: 3.0,
        };
        let mask = valid_mask(&g);
        let count = mask.iter().filter(|&&m| m).count() as f64;
        let area = std::f64::consts::PI * (3000.0f64 / 6.0).powi(2);
        assert!((count - area).abs() / area < 0.01, "{count} vs {area}");
        let g = SensorGeometry {
            optical_center: (0.0, 0.0),
            r_max: 0.006,
            ..g
        };
        assert!(g.is_valid(0, 0));
        assert!(g.is_valid(0, 1));
        assert!(!g.is_valid(1, 1));
    }

    #[test]
    fn axis_weights_partition_unity() {
        for (len, s) in [(10usize, 3usize), (64, 16), (64, 64), (5, 100), (17, 1)] {
            let n = grid_dims(len, 1, s).0;
            for pos in 0..len {
                let total: f64 = (0..n).map(|i| axis_weight::<f64>(i, pos, s, n)).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
                let (i0, f) = axis_cell::<f64>(pos, s, n);
                assert!(i0 + 1 < n && (0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn degrade_checks_shapes() {
        let img = Image::filled(8, 8, 1, 1.0);
        let model = crate::model::ConstantKernel::new(
            crate::kernel::PsfKernel::delta(3, 6.0).unwrap(),
        )
        .unwrap();
        let d = DefocusSource::Constant(0.0);
        assert!(degrade(&img, &model, &geom(9, 8), &d, 4, DegradeOptions::default()).is_err());
        let map = DefocusMap::constant(7, 8, 0.0).unwrap();
        let bad = DefocusSource::Map(&map);
        assert!(degrade(&img, &model, &geom(8, 8), &bad, 4, DegradeOptions::default()).is_err());
        let out = degrade(&img, &model, &geom(8, 8), &d, 4, DegradeOptions::default()).unwrap();
        assert_eq!(out, img);
    }
}
