//! Scene depth to per-pixel defocus via the thin-lens equation.
//!
//! Units: focal lengths and image distances in mm, object distances in m,
//! defocus in µm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Which side of the focused image plane counts as positive defocus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefocusSign {
    /// Objects nearer than the focus distance image behind the sensor: `Δz > 0`.
    #[default]
    NearPositive,
    FarPositive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFocusSpec<T> {
    /// Focal length, mm.
    pub focal_length: T,
    /// Object distance in focus, m. May be infinite.
    pub focus_distance: T,
    /// Z-buffer clip planes, m.
    pub near: T,
    pub far: T,
    pub sign: DefocusSign,
}

impl<T: Scalar> CameraFocusSpec<T> {
    pub fn new(focal_length: T, focus_distance: T, near: T, far: T) -> Result<Self> {
        let spec = Self {
            focal_length,
            focus_distance,
            near,
            far,
            sign: DefocusSign::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > T::zero() && self.focal_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal length {}",
                self.focal_length
            )));
        }
        if !(self.focus_distance * lit(1000.0) > self.focal_length) {
            return Err(Error::ObjectInsideFocal {
                focal_mm: self.focal_length.to_f64_lossy(),
                object_m: self.focus_distance.to_f64_lossy(),
            });
        }
        if !(self.near > T::zero() && self.near < self.far) {
            return Err(Error::InvalidParameter(format!(
                "clip planes near {} far {}",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

/// Image distance `i = 1 / (1/f - 1/o)` in mm for focal length `f` (mm) and
/// object distance `o` (m).
pub fn thin_lens_image_distance<T: Scalar>(f: T, o: T) -> Result<T> {
    let o_mm = o * lit(1000.0);
    if !(o_mm > f) {
        return Err(Error::ObjectInsideFocal {
            focal_mm: f.to_f64_lossy(),
            object_m: o.to_f64_lossy(),
        });
    }
    if o.is_infinite() {
        return Ok(f);
    }
    Ok(T::one() / (T::one() / f - T::one() / o_mm))
}

/// Defocus in µm of an object at distance `o` (m) relative to the focused image plane.
pub fn defocus_from_distance<T: Scalar>(spec: &CameraFocusSpec<T>, o: T) -> Result<T> {
    let i = thin_lens_image_distance(spec.focal_length, o)?;
    let i_focus = thin_lens_image_distance(spec.focal_length, spec.focus_distance)?;
    let dz = (i - i_focus) * lit(1000.0);
    Ok(match spec.sign {
        DefocusSign::NearPositive => dz,
        DefocusSign::FarPositive => -dz,
    })
}

/// Eye-space depth for a perspective z-buffer value `v` in `[0, 1]`, `v = 0`
/// at the near plane.
pub fn linearize_depth_value<T: Scalar>(v: T, near: T, far: T) -> Result<T> {
    if !(v >= T::zero() && v <= T::one()) {
        return Err(Error::ValueOutOfRange(v.to_f64_lossy()));
    }
    if !(near > T::zero() && near < far) {
        return Err(Error::InvalidParameter(format!("clip planes near {near} far {far}")));
    }
    Ok(near * far / (far - v * (far - near)))
}

/// Inverse of [`linearize_depth_value`].
pub fn encode_depth_value<T: Scalar>(z: T, near: T, far: T) -> T {
    far * (z - near) / (z * (far - near))
}

/// Per-pixel object distance in m.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
}

impl<T: Scalar> DepthMap<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} depth values for {width}x{height}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > T::zero())) {
            return Err(Error::InvalidParameter(format!("depth value {v} is not positive")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, distance: T) -> Result<Self> {
        Self::new(width, height, vec![distance; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Decodes a z-buffer image into eye-space distances.
pub fn linearize_zbuffer<T: Scalar>(
    width: usize,
    height: usize,
    buffer: &[T],
    near: T,
    far: T,
) -> Result<DepthMap<T>> {
    let values = buffer
        .iter()
        .map(|&v| linearize_depth_value(v, near, far))
        .collect::<Result<Vec<_>>>()?;
    DepthMap::new(width, height, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DefocusFlag {
    #[default]
    Ok,
    ClampedLow,
    ClampedHigh,
    /// Object at or inside the focal length; the value is a clamp-range sentinel.
    InsideFocal,
}

/// Per-pixel defocus in µm with clamp flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DefocusMap<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
    flags: Vec<DefocusFlag>,
}

impl<T: Scalar> DefocusMap<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} defocus values for {width}x{height}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("defocus values must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            flags: vec![DefocusFlag::Ok; values.len()],
            values,
        })
    }

    pub fn constant(width: usize, height: usize, dz: T) -> Result<Self> {
        Self::new(width, height, vec![dz; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn flags(&self) -> &[DefocusFlag] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn count_flagged(&self) -> usize {
        self.flags.iter().filter(|f| **f != DefocusFlag::Ok).count()
    }
}

/// Per-pixel defocus of a depth map, clamped to `[dz_min, dz_max]`.
/// Pixels inside the focal length are flagged, not fatal.
pub fn defocus_map<T: Scalar>(
    spec: &CameraFocusSpec<T>,
    depth: &DepthMap<T>,
    dz_min: T,
    dz_max: T,
) -> Result<DefocusMap<T>> {
    spec.validate()?;
    if !(dz_min <= dz_max) {
        return Err(Error::InvalidParameter(format!(
            "clamp range {dz_min}..{dz_max}"
        )));
    }
    let near_side = match spec.sign {
        DefocusSign::NearPositive => dz_max,
        DefocusSign::FarPositive => dz_min,
    };
    let mut values = Vec::with_capacity(depth.values.len());
    let mut flags = Vec::with_capacity(depth.values.len());
    for &o in &depth.values {
        let (v, flag) = match defocus_from_distance(spec, o) {
            Ok(dz) if dz < dz_min => (dz_min, DefocusFlag::ClampedLow),
            Ok(dz) if dz > dz_max => (dz_max, DefocusFlag::ClampedHigh),
            Ok(dz) => (dz, DefocusFlag::Ok),
            Err(Error::ObjectInsideFocal { .. }) => (near_side, DefocusFlag::InsideFocal),
            Err(e) => return Err(e),
        };
        values.push(v);
        flags.push(flag);
    }
    Ok(DefocusMap {
        width: depth.width,
        height: depth.height,
        values,
        flags,
    })
}

/// Defocus varying linearly with the column, `dz_left` at column 0 and
/// `dz_right` at the last column.
pub fn gradient_defocus<T: Scalar>(
    width: usize,
    height: usize,
    dz_left: T,
    dz_right: T,
) -> Result<DefocusMap<T>> {
    let denom = T::from_usize_lossy(width.saturating_sub(1).max(1));
    let row: Vec<T> = (0..width)
        .map(|c| {
            let t = T::from_usize_lossy(c) / denom;
            (T::one() - t) * dz_left + t * dz_right
        })
        .collect();
    let mut values = Vec::with_capacity(width * height);
    for _ in 0..height {
        values.extend_from_slice(&row);
    }
    DefocusMap::new(width, height, values)
}
