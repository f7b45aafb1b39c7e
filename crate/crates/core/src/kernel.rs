//! PSF kernels, high-resolution scans, and the resampling operations between them.
//!
//! Pixel coordinates throughout refer to pixel centers: pixel `(row, col)` is
//! centered at `(row, col)`, so the geometric center of a `k`-pixel axis is
//! `(k - 1) / 2`. Kernels are never re-centered; off-center mass is how local
//! distortion is carried through the pipeline.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Absolute tolerance on the unit sum of a kernel flagged as normalized.
pub const NORMALIZED_TOLERANCE: f64 = 1e-9;

/// [`NORMALIZED_TOLERANCE`], widened to the rounding error of summing `n`
/// values when `T` is too coarse for it.
pub fn normalized_tolerance<T: Scalar>(n: usize) -> f64 {
    NORMALIZED_TOLERANCE.max(4.0 * n as f64 * T::epsilon().to_f64_lossy())
}

/// Default PSF working resolution in pixels.
pub const DEFAULT_KERNEL_SIZE: usize = 13;

/// Field position parameterizing a PSF: defocus in µm, signed image height in
/// mm, azimuth in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint<T> {
    pub dz: T,
    pub r: T,
    pub phi: T,
}

impl<T: Scalar> FieldPoint<T> {
    pub fn new(dz: T, r: T, phi: T) -> Self {
        Self { dz, r, phi }
    }

    /// Folds a negative image height into the azimuth (`(-R, φ)` is the same
    /// field position as `(R, φ + 180°)`), wraps the azimuth into `[0, 360)`,
    /// and pins the azimuth of on-axis points to 0.
    pub fn canonical(&self) -> Self {
        let (r, phi) = if self.r < T::zero() {
            (-self.r, self.phi + lit(180.0))
        } else {
            (self.r, self.phi)
        };
        let phi = if r == T::zero() { T::zero() } else { wrap_degrees(phi) };
        Self { dz: self.dz, r, phi }
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees<T: Scalar>(phi: T) -> T {
    let full: T = lit(360.0);
    let w = phi % full;
    let w = if w < T::zero() { w + full } else { w };
    // `-1e-20 % 360 + 360` rounds to 360.
    if w >= full {
        T::zero()
    } else {
        w
    }
}

/// Square, odd-sized grid of nonnegative PSF intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel<T> {
    size: usize,
    pitch: T,
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> PsfKernel<T> {
    /// Builds a raw (not normalized) kernel from row-major values.
    pub fn new(size: usize, pitch: T, values: Vec<T>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("size {size} is not odd")));
        }
        if values.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "{} values for a {size}x{size} kernel",
                values.len()
            )));
        }
        if !(pitch > T::zero() && pitch.is_finite()) {
            return Err(Error::InvalidKernel(format!("pitch {pitch} is not positive")));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::InvalidKernel(format!("value {v} is negative or not finite")));
        }
        Ok(Self {
            size,
            pitch,
            values,
            normalized: false,
        })
    }

    /// Builds a kernel and flags it normalized after checking its sum.
    pub fn new_normalized(size: usize, pitch: T, values: Vec<T>) -> Result<Self> {
        let mut k = Self::new(size, pitch, values)?;
        let sum = k.sum().to_f64_lossy();
        if (sum - 1.0).abs() > normalized_tolerance::<T>(k.values.len()) {
            return Err(Error::InvalidKernel(format!("sum {sum} is not 1")));
        }
        k.normalized = true;
        Ok(k)
    }

    /// Unit mass at the center pixel.
    pub fn delta(size: usize, pitch: T) -> Result<Self> {
        let mut values = vec![T::zero(); size * size];
        if size % 2 == 1 {
            values[(size / 2) * size + size / 2] = T::one();
        }
        Self::new_normalized(size, pitch, values)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Offset of the center pixel along each axis, `(size - 1) / 2`.
    pub fn center(&self) -> usize {
        self.size / 2
    }

    pub fn pitch(&self) -> T {
        self.pitch
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.size + col]
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Flux centroid `(row, col)` in kernel pixel coordinates.
    pub fn centroid(&self) -> Option<(T, T)> {
        grid_centroid(&self.values, self.size, self.size)
    }

    /// Central second moments `(m_rr, m_cc, m_rc)` in pixel² about the centroid.
    pub fn second_moments(&self) -> Option<(T, T, T)> {
        grid_second_moments(&self.values, self.size, self.size)
    }

    /// Rotates the grid by 90° counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let n = self.size;
        let mut values = vec![T::zero(); n * n];
        for r in 0..n {
            for c in 0..n {
                values[(n - 1 - c) * n + r] = self.values[r * n + c];
            }
        }
        Self { values, ..self.clone() }
    }

    pub fn rotate180(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values, ..self.clone() }
    }

    pub(crate) fn same_shape(&self, other: &Self) -> bool {
        self.size == other.size && self.pitch == other.pitch
    }
}

/// Rescales `values` in place to unit sum.
pub fn normalize_values<T: Scalar>(values: &mut [T]) -> Result<()> {
    let sum: T = values.iter().copied().sum();
    if !(sum > T::zero()) {
        return Err(Error::AllZeroKernel);
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Returns a copy of `kernel` scaled to unit sum and flagged normalized.
pub fn normalize<T: Scalar>(kernel: &PsfKernel<T>) -> Result<PsfKernel<T>> {
    let mut values = kernel.values.clone();
    normalize_values(&mut values)?;
    Ok(PsfKernel {
        values,
        normalized: true,
        ..*kernel
    })
}

/// Raw high-resolution PSF measurement (or synthetic rendering).
#[derive(Debug, Clone, PartialEq)]
pub struct HighResScan<T> {
    width: usize,
    height: usize,
    pitch: T,
    values: Vec<T>,
}

impl<T: Scalar> HighResScan<T> {
    pub fn new(width: usize, height: usize, pitch: T, values: Vec<T>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} scan",
                values.len()
            )));
        }
        if !(pitch > T::zero() && pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!("scan pitch {pitch}")));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::InvalidParameter(
                "scan values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            pitch,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch(&self) -> T {
        self.pitch
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Flux centroid `(row, col)` in scan pixel coordinates.
    pub fn centroid(&self) -> Option<(T, T)> {
        grid_centroid(&self.values, self.width, self.height)
    }

    /// Subtracts a constant background level, clamping at zero.
    pub fn subtract_background(&self, level: T) -> Self {
        let values = self
            .values
            .iter()
            .map(|&v| (v - level).max(T::zero()))
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }
}

/// First index of an `n`-pixel window centered on `center`: `floor(center - n/2 + 1/2)`.
///
/// Centers within 1e-6 px of a rounding boundary snap to the boundary so that
/// a numerically computed centroid of a symmetric scan selects the symmetric window.
pub(crate) fn window_start(center: f64, n: usize) -> f64 {
    let x = center - n as f64 / 2.0 + 0.5;
    let nearest = x.round();
    if (x - nearest).abs() < 1e-6 {
        nearest
    } else {
        x.floor()
    }
}

/// Cuts an `out_px` square window centered on `(center_row, center_col)`.
pub fn crop_centered<T: Scalar>(
    scan: &HighResScan<T>,
    out_px: usize,
    center_row: f64,
    center_col: f64,
) -> Result<HighResScan<T>> {
    let oob = || Error::WindowOutOfBounds {
        size: out_px,
        row: center_row,
        col: center_col,
        width: scan.width,
        height: scan.height,
    };
    let inside = |c: f64, dim: usize| c.is_finite() && c >= -0.5 && c <= dim as f64 - 0.5;
    if out_px == 0 || !inside(center_row, scan.height) || !inside(center_col, scan.width) {
        return Err(oob());
    }
    let r0 = window_start(center_row, out_px);
    let c0 = window_start(center_col, out_px);
    if r0 < 0.0
        || c0 < 0.0
        || r0 as usize + out_px > scan.height
        || c0 as usize + out_px > scan.width
    {
        return Err(oob());
    }
    let (r0, c0) = (r0 as usize, c0 as usize);
    let mut values = Vec::with_capacity(out_px * out_px);
    for r in r0..r0 + out_px {
        let row = &scan.values[r * scan.width..(r + 1) * scan.width];
        values.extend_from_slice(&row[c0..c0 + out_px]);
    }
    Ok(HighResScan {
        width: out_px,
        height: out_px,
        pitch: scan.pitch,
        values,
    })
}

/// Sums `factor x factor` blocks of a square scan into a raw kernel with
/// `factor` times the pitch. Total flux is conserved.
pub fn bin_downsample<T: Scalar>(scan: &HighResScan<T>, factor: usize) -> Result<PsfKernel<T>> {
    let err = || Error::NonDivisibleSize {
        width: scan.width,
        height: scan.height,
        factor,
    };
    if factor == 0 || scan.width != scan.height || !scan.width.is_multiple_of(factor) {
        return Err(err());
    }
    let k = scan.width / factor;
    if k.is_multiple_of(2) {
        return Err(err());
    }
    let mut values = vec![T::zero(); k * k];
    for r in 0..scan.height {
        let out_row = &mut values[(r / factor) * k..(r / factor + 1) * k];
        let in_row = &scan.values[r * scan.width..(r + 1) * scan.width];
        for (c, &v) in in_row.iter().enumerate() {
            out_row[c / factor] += v;
        }
    }
    PsfKernel::new(k, scan.pitch * T::from_usize_lossy(factor), values)
}

/// Bilinear blend of four kernels at fractional position `(wx, wy)` in a cell
/// whose corners are `k00` (origin), `k10` (+x), `k01` (+y), `k11`.
pub fn interpolate_kernels<T: Scalar>(
    k00: &PsfKernel<T>,
    k10: &PsfKernel<T>,
    k01: &PsfKernel<T>,
    k11: &PsfKernel<T>,
    wx: T,
    wy: T,
) -> Result<PsfKernel<T>> {
    if !(k00.same_shape(k10) && k00.same_shape(k01) && k00.same_shape(k11)) {
        return Err(Error::ShapeMismatch(
            "interpolated kernels differ in size or pitch".into(),
        ));
    }
    let unit = T::zero()..=T::one();
    if !unit.contains(&wx) || !unit.contains(&wy) {
        return Err(Error::OutOfRange(format!("interpolation weights ({wx}, {wy})")));
    }
    let mut values = vec![T::zero(); k00.values.len()];
    blend_into(&mut values, [k00, k10, k01, k11], bilinear_weights(wx, wy));
    Ok(PsfKernel {
        values,
        normalized: k00.normalized && k10.normalized && k01.normalized && k11.normalized,
        ..*k00
    })
}

/// Weights of corners `[k00, k10, k01, k11]` for a bilinear blend.
#[inline]
pub(crate) fn bilinear_weights<T: Scalar>(wx: T, wy: T) -> [T; 4] {
    let one = T::one();
    [
        (one - wx) * (one - wy),
        wx * (one - wy),
        (one - wx) * wy,
        wx * wy,
    ]
}

#[inline]
pub(crate) fn blend_into<T: Scalar>(out: &mut [T], kernels: [&PsfKernel<T>; 4], w: [T; 4]) {
    let [a, b, c, d] = kernels;
    for (i, o) in out.iter_mut().enumerate() {
        *o = w[0] * a.values[i] + w[1] * b.values[i] + w[2] * c.values[i] + w[3] * d.values[i];
    }
}

pub(crate) fn grid_centroid<T: Scalar>(
    values: &[T],
    width: usize,
    height: usize,
) -> Option<(T, T)> {
    let mut total = T::zero();
    let mut sr = T::zero();
    let mut sc = T::zero();
    for r in 0..height {
        for c in 0..width {
            let v = values[r * width + c];
            total += v;
            sr += v * T::from_usize_lossy(r);
            sc += v * T::from_usize_lossy(c);
        }
    }
    (total > T::zero()).then(|| (sr / total, sc / total))
}

pub(crate) fn grid_second_moments<T: Scalar>(
    values: &[T],
    width: usize,
    height: usize,
) -> Option<(T, T, T)> {
    let (cr, cc) = grid_centroid(values, width, height)?;
    let mut total = T::zero();
    let (mut rr, mut cc2, mut rc) = (T::zero(), T::zero(), T::zero());
    for r in 0..height {
        let dr = T::from_usize_lossy(r) - cr;
        for c in 0..width {
            let dc = T::from_usize_lossy(c) - cc;
            let v = values[r * width + c];
            total += v;
            rr += v * dr * dr;
            cc2 += v * dc * dc;
            rc += v * dr * dc;
        }
    }
    Some((rr / total, cc2 / total, rc / total))
}
