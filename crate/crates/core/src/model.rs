//! Anything that maps a field point to a kernel.

use crate::error::{Error, Result};
use crate::kernel::{FieldPoint, PsfKernel};
use crate::lens::{analytic_psf_oversampled, oversample_for_pitch, SyntheticLensSpec};
use crate::regressor::RegressorModel;
use crate::scalar::Scalar;

/// Field-point domain a model accepts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRanges<T> {
    pub dz_min: T,
    pub dz_max: T,
    pub r_max: T,
}

impl<T: Scalar> FieldRanges<T> {
    pub fn contains(&self, fp: &FieldPoint<T>) -> bool {
        fp.dz >= self.dz_min && fp.dz <= self.dz_max && fp.r.abs() <= self.r_max
    }

    /// Nearest point inside the domain: defocus clamped, radius shrunk toward
    /// the axis along the same azimuth.
    pub fn clamp(&self, fp: &FieldPoint<T>) -> FieldPoint<T> {
        let r = if fp.r.abs() > self.r_max {
            self.r_max.copysign(fp.r)
        } else {
            fp.r
        };
        FieldPoint::new(fp.dz.max(self.dz_min).min(self.dz_max), r, fp.phi)
    }
}

pub trait PsfModel<T: Scalar>: Send + Sync {
    fn kernel_size(&self) -> usize;
    fn kernel_pitch(&self) -> T;
    fn ranges(&self) -> FieldRanges<T>;
    /// Normalized kernel at `fp`.
    fn psf(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>>;
}

impl<T: Scalar, M: PsfModel<T> + ?Sized> PsfModel<T> for &M {
    fn kernel_size(&self) -> usize {
        (**self).kernel_size()
    }
    fn kernel_pitch(&self) -> T {
        (**self).kernel_pitch()
    }
    fn ranges(&self) -> FieldRanges<T> {
        (**self).ranges()
    }
    fn psf(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        (**self).psf(fp)
    }
}

impl<T: Scalar, M: PsfModel<T> + ?Sized> PsfModel<T> for Box<M> {
    fn kernel_size(&self) -> usize {
        (**self).kernel_size()
    }
    fn kernel_pitch(&self) -> T {
        (**self).kernel_pitch()
    }
    fn ranges(&self) -> FieldRanges<T> {
        (**self).ranges()
    }
    fn psf(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        (**self).psf(fp)
    }
}

impl<T: Scalar> PsfModel<T> for RegressorModel<T> {
    fn kernel_size(&self) -> usize {
        self.size_k()
    }
    fn kernel_pitch(&self) -> T {
        RegressorModel::kernel_pitch(self)
    }
    fn ranges(&self) -> FieldRanges<T> {
        let n = self.norm();
        FieldRanges {
            dz_min: n.dz_min,
            dz_max: n.dz_max,
            r_max: n.r_max,
        }
    }
    fn psf(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        self.forward(fp)
    }
}

/// The synthetic lens evaluated directly.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticLens<T> {
    pub spec: SyntheticLensSpec,
    pub size_k: usize,
    pub pitch: T,
    /// Midpoint samples per pixel axis.
    pub oversample: usize,
}

impl<T: Scalar> AnalyticLens<T> {
    /// Same quadrature as the dataset generator.
    pub fn new(spec: SyntheticLensSpec, size_k: usize, pitch: T) -> Result<Self> {
        let oversample = oversample_for_pitch(pitch.to_f64_lossy());
        Self::with_oversample(spec, size_k, pitch, oversample)
    }

    /// Coarser quadrature for per-pixel evaluation over whole images.
    pub fn with_oversample(
        spec: SyntheticLensSpec,
        size_k: usize,
        pitch: T,
        oversample: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if size_k.is_multiple_of(2) || size_k == 0 {
            return Err(Error::InvalidKernel(format!("kernel size {size_k} must be odd")));
        }
        if !(pitch > T::zero() && pitch.is_finite()) || oversample == 0 {
            return Err(Error::InvalidParameter(
                "pitch and oversampling must be positive".into(),
            ));
        }
        Ok(Self {
            spec,
            size_k,
            pitch,
            oversample,
        })
    }
}

impl<T: Scalar> PsfModel<T> for AnalyticLens<T> {
    fn kernel_size(&self) -> usize {
        self.size_k
    }
    fn kernel_pitch(&self) -> T {
        self.pitch
    }
    fn ranges(&self) -> FieldRanges<T> {
        FieldRanges {
            dz_min: T::lit(self.spec.dz_min),
            dz_max: T::lit(self.spec.dz_max),
            r_max: T::lit(self.spec.r_max),
        }
    }
    fn psf(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        analytic_psf_oversampled(&self.spec, fp, self.size_k, self.pitch, self.oversample)
    }
}

/// Queries the inner model on the optical axis only: `R = 0`, `φ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatiallyInvariant<M>(pub M);

impl<T: Scalar, M: PsfModel<T>> PsfModel<T> for SpatiallyInvariant<M> {
    fn kernel_size(&self) -> usize {
        self.0.kernel_size()
    }
    fn kernel_pitch(&self) -> T {
        self.0.kernel_pitch()
    }
    /// Any image height is accepted since it is ignored.
    fn ranges(&self) -> FieldRanges<T> {
        FieldRanges {
            r_max: T::infinity(),
            ..self.0.ranges()
        }
    }
    fn psf(&self, fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        self.0.psf(&FieldPoint::new(fp.dz, T::zero(), T::zero()))
    }
}

/// One kernel everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantKernel<T>(PsfKernel<T>);

impl<T: Scalar> ConstantKernel<T> {
    pub fn new(kernel: PsfKernel<T>) -> Result<Self> {
        Ok(Self(crate::kernel::normalize(&kernel)?))
    }

    pub fn kernel(&self) -> &PsfKernel<T> {
        &self.0
    }
}

impl<T: Scalar> PsfModel<T> for ConstantKernel<T> {
    fn kernel_size(&self) -> usize {
        self.0.size()
    }
    fn kernel_pitch(&self) -> T {
        self.0.pitch()
    }
    fn ranges(&self) -> FieldRanges<T> {
        FieldRanges {
            dz_min: T::neg_infinity(),
            dz_max: T::infinity(),
            r_max: T::infinity(),
        }
    }
    fn psf(&self, _fp: &FieldPoint<T>) -> Result<PsfKernel<T>> {
        Ok(self.0.clone())
    }
}
