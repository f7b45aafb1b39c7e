use rayon::prelude::*;

use super::{axis_cell, DefocusSource, SensorGeometry};
use crate::error::{Error, Result};
use crate::kernel::{bilinear_weights, blend_into, PsfKernel};
use crate::model::PsfModel;
use crate::scalar::Scalar;

/// Node counts `(nx, ny)` for a grid of spacing `s` over a `width x height`
/// image: nodes at `0, s, 2s, ...` up to the first one at or past the last
/// pixel, and at least two per axis.
pub fn grid_dims(width: usize, height: usize, s: usize) -> (usize, usize) {
    let n = |len: usize| (len.saturating_sub(1).div_ceil(s.max(1)) + 1).max(2);
    (n(width), n(height))
}

/// Kernels sampled on a uniform grid of pixel positions `(i·s, j·s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid<T> {
    width: usize,
    height: usize,
    spacing: usize,
    nx: usize,
    ny: usize,
    /// Row-major, `ny x nx`.
    kernels: Vec<PsfKernel<T>>,
    clamped: Vec<bool>,
}

impl<T: Scalar> KernelGrid<T> {
    /// Grid from explicit node kernels, row-major over `ny x nx`.
    pub fn new(width: usize, height: usize, spacing: usize, kernels: Vec<PsfKernel<T>>) -> Result<Self> {
        let n = kernels.len();
        Self::with_flags(width, height, spacing, kernels, vec![false; n])
    }

    fn with_flags(
        width: usize,
        height: usize,
        spacing: usize,
        kernels: Vec<PsfKernel<T>>,
        clamped: Vec<bool>,
    ) -> Result<Self> {
        if spacing == 0 {
            return Err(Error::InvalidParameter("grid spacing must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch("empty image".into()));
        }
        let (nx, ny) = grid_dims(width, height, spacing);
        if kernels.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "{} kernels for a {nx}x{ny} grid",
                kernels.len()
            )));
        }
        let first = &kernels[0];
        for k in &kernels {
            if !k.same_shape(first) {
                return Err(Error::ShapeMismatch("grid kernels differ in size or pitch".into()));
            }
            if !k.is_normalized() {
                return Err(Error::InvalidKernel("grid kernels must be normalized".into()));
            }
        }
        Ok(Self {
            width,
            height,
            spacing,
            nx,
            ny,
            kernels,
            clamped,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> usize {
        self.spacing
    }

    /// `(nx, ny)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].size()
    }

    /// Kernel at node row `i`, node column `j`.
    pub fn kernel(&self, i: usize, j: usize) -> &PsfKernel<T> {
        &self.kernels[i * self.nx + j]
    }

    /// Pixel `(row, col)` of node `(i, j)`; may lie past the image edge.
    pub fn node_position(&self, i: usize, j: usize) -> (usize, usize) {
        (i * self.spacing, j * self.spacing)
    }

    /// Whether node `(i, j)` fell outside the model's domain and was clamped.
    pub fn is_clamped(&self, i: usize, j: usize) -> bool {
        self.clamped[i * self.nx + j]
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    /// Lower-left node `(i0, j0)` of the cell holding a pixel and the
    /// fractional offsets `(wx, wy)` toward the next column and row.
    pub fn cell(&self, row: usize, col: usize) -> ((usize, usize), (T, T)) {
        let (i0, wy) = axis_cell(row, self.spacing, self.ny);
        let (j0, wx) = axis_cell(col, self.spacing, self.nx);
        ((i0, j0), (wx, wy))
    }

    /// Bilinearly interpolated kernel values at a pixel.
    pub fn interpolated_values(&self, row: usize, col: usize, out: &mut [T]) {
        let ((i0, j0), (wx, wy)) = self.cell(row, col);
        let corners = [
            self.kernel(i0, j0),
            self.kernel(i0, j0 + 1),
            self.kernel(i0 + 1, j0),
            self.kernel(i0 + 1, j0 + 1),
        ];
        blend_into(out, corners, bilinear_weights(wx, wy));
    }

    pub fn interpolated(&self, row: usize, col: usize) -> Result<PsfKernel<T>> {
        let k = &self.kernels[0];
        let mut values = vec![T::zero(); k.values().len()];
        self.interpolated_values(row, col, &mut values);
        PsfKernel::new(k.size(), k.pitch(), values)
    }
}

/// Evaluates `model` at every grid node. Nodes whose field point is outside
/// the model's domain use the nearest point inside it and are flagged.
pub fn build_kernel_grid<T: Scalar, M: PsfModel<T>>(
    model: &M,
    geom: &SensorGeometry<T>,
    defocus: &DefocusSource<'_, T>,
    spacing: usize,
) -> Result<KernelGrid<T>> {
    geom.validate()?;
    defocus.check(geom)?;
    if spacing == 0 {
        return Err(Error::InvalidParameter("grid spacing must be positive".into()));
    }
    let (nx, ny) = grid_dims(geom.width, geom.height, spacing);
    let ranges = model.ranges();
    let nodes: Vec<(PsfKernel<T>, bool)> = (0..nx * ny)
        .into_par_iter()
        .map(|n| {
            let (row, col) = ((n / nx) * spacing, (n % nx) * spacing);
            let (r, phi) = geom.polar(T::from_usize_lossy(row), T::from_usize_lossy(col));
            let fp = crate::kernel::FieldPoint::new(defocus.at(row, col), r, phi);
            let inside = ranges.contains(&fp);
            let fp = if inside { fp } else { ranges.clamp(&fp) };
            Ok((model.psf(&fp)?, !inside))
        })
        .collect::<Result<_>>()?;
    let (kernels, clamped) = nodes.into_iter().unzip();
    KernelGrid::with_flags(geom.width, geom.height, spacing, kernels, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::field_of_pixel;
    use crate::kernel::FieldPoint;
    use crate::lens::SyntheticLensSpec;
    use crate::model::AnalyticLens;

    #[test]
    fn grid_counts() {
        assert_eq!(grid_dims(1024, 1024, 64), (17, 17));
        assert_eq!(grid_dims(64, 64, 64), (2, 2));
        assert_eq!(grid_dims(64, 64, 200), (2, 2));
        assert_eq!(grid_dims(65, 64, 64), (2, 2));
        assert_eq!(grid_dims(66, 10, 64), (3, 2));
        assert_eq!(grid_dims(5, 3, 1), (5, 3));
    }

    fn lens() -> AnalyticLens<f64> {
        AnalyticLens::with_oversample(SyntheticLensSpec::default(), 13, 6.0, 6).unwrap()
    }

    #[test]
    fn degenerate_grid_has_four_corners() {
        let g = SensorGeometry::centered(40, 30, 60.0, 3.0).unwrap();
        let grid = build_kernel_grid(&lens(), &g, &DefocusSource::Constant(0.0), 64).unwrap();
        assert_eq!(grid.dims(), (2, 2));
        assert_eq!(grid.node_position(1, 1), (64, 64));
        // Node past the image corner lies beyond r_max and is clamped.
        assert!(grid.is_clamped(1, 1));
        assert!(!grid.is_clamped(0, 0));
    }

    #[test]
    fn node_kernels_are_model_evaluations() {
        let g = SensorGeometry::centered(200, 200, 6.0, 3.0).unwrap();
        let d = DefocusSource::Constant(10.0);
        let m = lens();
        let grid = build_kernel_grid(&m, &g, &d, 50).unwrap();
        assert_eq!(grid.clamped_count(), 0);
        let fp = field_of_pixel(&g, 50, 150, &d);
        assert_eq!(grid.kernel(1, 3), &m.psf(&fp).unwrap());
        // Interpolation reproduces node kernels on the nodes.
        assert_eq!(grid.interpolated(50, 150).unwrap().values(), grid.kernel(1, 3).values());
    }

    #[test]
    fn equal_radius_nodes_are_rotations() {
        // Four nodes at equal R on the axes of a centered sensor.
        let g = SensorGeometry {
            width: 201,
            height: 201,
            pixel_pitch: 6.0,
            optical_center: (100.0, 100.0),
            r_max: 3.0,
        };
        let m = lens();
        let grid = build_kernel_grid(&m, &g, &DefocusSource::Constant(-20.0), 50).unwrap();
        let right = grid.kernel(2, 4); // phi = 0
        let up = grid.kernel(0, 2); // phi = 90
        let left = grid.kernel(2, 0);
        let down = grid.kernel(4, 2);
        let close = |a: &PsfKernel<f64>, b: &PsfKernel<f64>| {
            a.values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| (x - y).abs() < 1e-12)
        };
        assert!(close(&right.rotate90(), up));
        assert!(close(&up.rotate90(), left));
        assert!(close(&left.rotate90(), down));
        assert_eq!(
            m.psf(&FieldPoint::new(-20.0, 0.6, 0.0)).unwrap().values(),
            right.values()
        );
    }

    #[test]
    fn rejects_bad_kernels() {
        let k = PsfKernel::<f64>::delta(3, 1.0).unwrap();
        assert!(KernelGrid::new(10, 10, 10, vec![k.clone(); 3]).is_err());
        assert!(KernelGrid::new(10, 10, 0, vec![k.clone(); 4]).is_err());
        let unnorm = PsfKernel::new(3, 1.0, vec![0.5; 9]).unwrap();
        assert!(KernelGrid::new(10, 10, 10, vec![k.clone(), k.clone(), k, unnorm]).is_err());
    }
}
