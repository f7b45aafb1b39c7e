//! Analytic stand-in lens with a closed-form PSF at every field point.
//!
//! The PSF is an elliptical Gaussian. Its tangential axis points along the
//! azimuth; tangential and sagittal widths grow with the distance from their
//! own best-focus positions, which move with the square of the image height
//! (field curvature plus astigmatic split). Defocus beyond best focus blurs
//! `1 + c_asym` times faster than defocus in front of it.
//!
//! Pixel values are bin integrals of the density evaluated by the midpoint
//! rule; the sub-sample pitch never exceeds [`SUBSAMPLE_PITCH_UM`].

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, DatasetSource, PsfDataset};
use crate::error::{Error, Result};
use crate::kernel::{FieldPoint, HighResScan, PsfKernel};
use crate::scalar::{lit, Scalar};

/// Effective pixel pitch of the reference measurement setup, µm.
pub const MEASUREMENT_PITCH_UM: f64 = 0.3070;

/// Upper bound on the midpoint-rule sub-sample pitch, µm (a quarter of the
/// measurement pitch).
pub const SUBSAMPLE_PITCH_UM: f64 = MEASUREMENT_PITCH_UM / 4.0;

/// Minimum number of midpoint sub-samples per pixel axis.
pub const MIN_OVERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLensSpec {
    /// Focal length, mm.
    pub focal_length: f64,
    /// Largest image height, mm.
    pub r_max: f64,
    /// Defocus range, µm.
    pub dz_min: f64,
    pub dz_max: f64,
    /// Best-focus Gaussian width, µm.
    pub sigma0: f64,
    /// Tangential focal shift per mm² of R², µm.
    pub a_field: f64,
    /// Tangential minus sagittal focal shift per mm² of R², µm.
    pub b_astig: f64,
    /// Extra relative blur growth for positive defocus.
    pub c_asym: f64,
    /// Gaussian width growth per µm of defocus.
    pub defocus_gain: f64,
    /// Reserved for stochastic perturbations; the current form is deterministic.
    pub seed: u64,
}

impl Default for SyntheticLensSpec {
    fn default() -> Self {
        Self {
            focal_length: 6.0,
            r_max: 3.0,
            dz_min: -50.0,
            dz_max: 50.0,
            sigma0: 3.0,
            a_field: 1.5,
            b_astig: 3.0,
            c_asym: 0.3,
            defocus_gain: 0.15,
            seed: 0,
        }
    }
}

/// Tangential and sagittal Gaussian widths at a field point, µm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Widths {
    pub tangential: f64,
    pub sagittal: f64,
}

impl SyntheticLensSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("lens spec: {what}")));
        let all_finite = [
            self.focal_length,
            self.r_max,
            self.dz_min,
            self.dz_max,
            self.sigma0,
            self.a_field,
            self.b_astig,
            self.c_asym,
            self.defocus_gain,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite coefficient");
        }
        if self.sigma0 <= 0.0 {
            return bad("sigma0 must be positive");
        }
        if self.r_max <= 0.0 || self.focal_length <= 0.0 {
            return bad("r_max and focal_length must be positive");
        }
        if self.dz_min >= self.dz_max {
            return bad("dz_min must be below dz_max");
        }
        if self.c_asym == 0.0 || self.c_asym <= -1.0 {
            return bad("c_asym must be nonzero and above -1");
        }
        if self.defocus_gain < 0.0 {
            return bad("defocus_gain must be nonnegative");
        }
        Ok(())
    }

    pub fn check_range<T: Scalar>(&self, fp: &FieldPoint<T>) -> Result<()> {
        let (dz, r, phi) = (fp.dz.to_f64_lossy(), fp.r.to_f64_lossy(), fp.phi.to_f64_lossy());
        if !(dz >= self.dz_min && dz <= self.dz_max) {
            return Err(Error::OutOfRange(format!(
                "defocus {dz} µm (lens covers {}..{})",
                self.dz_min, self.dz_max
            )));
        }
        if !(r.abs() <= self.r_max) {
            return Err(Error::OutOfRange(format!(
                "image height {r} mm (lens covers ±{})",
                self.r_max
            )));
        }
        if !phi.is_finite() {
            return Err(Error::OutOfRange(format!("azimuth {phi}")));
        }
        Ok(())
    }

    /// Best-focus defocus of the tangential and sagittal foci at image height `r`.
    pub fn focal_shifts(&self, r: f64) -> (f64, f64) {
        let r2 = r * r;
        (self.a_field * r2, (self.a_field - self.b_astig) * r2)
    }

    fn growth(&self, u: f64) -> f64 {
        if u > 0.0 {
            self.defocus_gain * (1.0 + self.c_asym) * u
        } else {
            -self.defocus_gain * u
        }
    }

    pub fn widths(&self, dz: f64, r: f64) -> Widths {
        let (zt, zs) = self.focal_shifts(r);
        let w = |u: f64| (self.sigma0 * self.sigma0 + self.growth(u).powi(2)).sqrt();
        Widths {
            tangential: w(dz - zt),
            sagittal: w(dz - zs),
        }
    }
}

/// Midpoint sub-samples per pixel axis for a given pixel pitch.
pub fn oversample_for_pitch(pitch: f64) -> usize {
    ((pitch / SUBSAMPLE_PITCH_UM - 1e-9).ceil() as usize).max(MIN_OVERSAMPLE)
}

/// Quadratic form of the density: `exp(-(a x² + 2 b x y + c y²)) * norm`.
struct Density<T> {
    a: T,
    b: T,
    c: T,
    norm: T,
}

impl<T: Scalar> Density<T> {
    fn new(spec: &SyntheticLensSpec, fp: &FieldPoint<T>) -> Self {
        let fp = fp.canonical();
        let w = spec.widths(fp.dz.to_f64_lossy(), fp.r.to_f64_lossy());
        let (st, ss) = (lit::<T>(w.tangential), lit::<T>(w.sagittal));
        let phi = fp.phi.to_radians();
        let (sin, cos) = phi.sin_cos();
        let half = lit::<T>(0.5);
        let it = half / (st * st);
        let is = half / (ss * ss);
        // t = x cos + y sin, s = -x sin + y cos
        Self {
            a: it * cos * cos + is * sin * sin,
            b: (it - is) * sin * cos,
            c: it * sin * sin + is * cos * cos,
            norm: T::one() / (T::TAU() * st * ss),
        }
    }

    /// Midpoint-rule integral over a square pixel of side `pitch` centered at `(x, y)`.
    #[inline]
    fn pixel_mass(&self, x: T, y: T, offsets: &[T], area: T) -> T {
        let two = lit::<T>(2.0);
        let mut acc = T::zero();
        for &oy in offsets {
            let yy = y + oy;
            let cy = self.c * yy * yy;
            let by = two * self.b * yy;
            for &ox in offsets {
                let xx = x + ox;
                acc += (-(self.a * xx * xx + by * xx + cy)).exp();
            }
        }
        acc * area * self.norm
    }
}

fn subsample_offsets<T: Scalar>(pitch: T, m: usize) -> (Vec<T>, T) {
    let mf = T::from_usize_lossy(m);
    let h = pitch / mf;
    let offsets = (0..m)
        .map(|i| (T::from_usize_lossy(i) + lit(0.5)) * h - pitch * lit(0.5))
        .collect();
    (offsets, h * h)
}

fn render_grid<T: Scalar>(density: &Density<T>, size: usize, pitch: T, m: usize) -> Vec<T> {
    let (offsets, area) = subsample_offsets(pitch, m);
    let center = (T::from_usize_lossy(size) - T::one()) * lit(0.5);
    let mut values = Vec::with_capacity(size * size);
    for row in 0..size {
        let y = -(T::from_usize_lossy(row) - center) * pitch;
        for col in 0..size {
            let x = (T::from_usize_lossy(col) - center) * pitch;
            values.push(density.pixel_mass(x, y, &offsets, area));
        }
    }
    values
}

/// Normalized `size_k x size_k` kernel of the synthetic lens at `fp`.
pub fn analytic_psf<T: Scalar>(
    spec: &SyntheticLensSpec,
    fp: &FieldPoint<T>,
    size_k: usize,
    pitch: T,
) -> Result<PsfKernel<T>> {
    let m = oversample_for_pitch(pitch.to_f64_lossy());
    analytic_psf_oversampled(spec, fp, size_k, pitch, m)
}

/// [`analytic_psf`] with an explicit number `m` of midpoint samples per pixel axis.
pub fn analytic_psf_oversampled<T: Scalar>(
    spec: &SyntheticLensSpec,
    fp: &FieldPoint<T>,
    size_k: usize,
    pitch: T,
    m: usize,
) -> Result<PsfKernel<T>> {
    spec.check_range(fp)?;
    if m == 0 {
        return Err(Error::InvalidParameter("oversampling must be at least 1".into()));
    }
    let values = render_grid(&Density::new(spec, fp), size_k, pitch, m);
    let k = PsfKernel::new(size_k, pitch, values)?;
    crate::kernel::normalize(&k)
}

/// Unnormalized rendering of the same density on a fine measurement-like grid,
/// centered on the grid's geometric center.
pub fn render_highres<T: Scalar>(
    spec: &SyntheticLensSpec,
    fp: &FieldPoint<T>,
    size_px: usize,
    pitch: T,
) -> Result<HighResScan<T>> {
    spec.check_range(fp)?;
    let m = oversample_for_pitch(pitch.to_f64_lossy());
    let values = render_grid(&Density::new(spec, fp), size_px, pitch, m);
    HighResScan::new(size_px, size_px, pitch, values)
}

/// One Cartesian block of field points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanGroup {
    pub dz: Vec<f64>,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
}

impl PlanGroup {
    pub fn cartesian_count(&self) -> usize {
        self.dz.len() * self.r.len() * self.phi.len()
    }
}

/// Field-point sampling pattern: union of Cartesian groups, ordered
/// dz-major then r then phi, with physically identical points (after folding
/// signed radii and on-axis azimuths) kept once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub name: String,
    pub groups: Vec<PlanGroup>,
}

fn steps(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + step * i as f64).collect()
}

impl SamplingPlan {
    pub fn empty() -> Self {
        Self {
            name: "empty".into(),
            groups: Vec::new(),
        }
    }

    pub fn single(fp: FieldPoint<f64>) -> Self {
        Self {
            name: "single".into(),
            groups: vec![PlanGroup {
                dz: vec![fp.dz],
                r: vec![fp.r],
                phi: vec![fp.phi],
            }],
        }
    }

    /// High in-plane, low defocus resolution: three defocus planes, each with
    /// the on-axis point plus four rings of 20 azimuths (signed radii over a
    /// half turn). 270 grid points, 243 distinct.
    pub fn series1() -> Self {
        Self {
            name: "series1".into(),
            groups: vec![PlanGroup {
                dz: vec![-11.25, 0.0, 11.25],
                r: steps(-3.0, 0.75, 9),
                phi: steps(0.0, 18.0, 10),
            }],
        }
    }

    /// Reduced in-plane, fine defocus resolution: 81 defocus planes at
    /// 1.25 µm spacing over ±50 µm, each with three radii at four azimuths.
    /// 972 points.
    pub fn series2() -> Self {
        Self {
            name: "series2".into(),
            groups: vec![PlanGroup {
                dz: steps(-50.0, 1.25, 81),
                r: vec![1.0, 2.0, 3.0],
                phi: vec![0.0, 90.0, 180.0, 270.0],
            }],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "series1" => Some(Self::series1()),
            "series2" => Some(Self::series2()),
            "empty" => Some(Self::empty()),
            _ => None,
        }
    }

    pub fn cartesian_count(&self) -> usize {
        self.groups.iter().map(PlanGroup::cartesian_count).sum()
    }

    /// Distinct field points in plan order.
    pub fn points(&self) -> Vec<FieldPoint<f64>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for g in &self.groups {
            for &dz in &g.dz {
                for &r in &g.r {
                    for &phi in &g.phi {
                        let fp = FieldPoint::new(dz, r, phi);
                        let c = fp.canonical();
                        // +0.0 and -0.0 fold together.
                        let key = ((c.dz + 0.0).to_bits(), (c.r + 0.0).to_bits(), (c.phi + 0.0).to_bits());
                        if seen.insert(key) {
                            out.push(fp);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Evaluates the synthetic lens at every plan point, in plan order.
pub fn generate_dataset(
    spec: &SyntheticLensSpec,
    plan: &SamplingPlan,
    size_k: usize,
    pitch: f64,
) -> Result<PsfDataset<f64>> {
    spec.validate()?;
    let points = plan.points();
    for fp in &points {
        spec.check_range(fp)?;
    }
    let kernels: Vec<PsfKernel<f64>> = points
        .par_iter()
        .map(|fp| analytic_psf(spec, fp, size_k, pitch))
        .collect::<Result<_>>()?;
    let meta = DatasetMeta {
        pitch_native: pitch,
        pitch_target: pitch,
        size_k,
        r_max: spec.r_max,
        dz_min: spec.dz_min,
        dz_max: spec.dz_max,
        source: DatasetSource::Synthetic(spec.clone()),
        plan: Some(plan.clone()),
    };
    PsfDataset::new(meta, points.into_iter().zip(kernels).collect())
}
