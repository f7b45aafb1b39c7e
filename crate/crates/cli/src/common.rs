//! Pieces shared by the image commands: model loading, sensor geometry and
//! defocus sources.

use std::path::Path;

use psfsim::convolve::{DefocusSource, SensorGeometry};
use psfsim::depth::{defocus_map, gradient_defocus, CameraFocusSpec, DefocusSign};
use psfsim::imageio::{read_depth, read_depth_header};
use psfsim::model::AnalyticLens;
use psfsim::regressor::load_model;
use psfsim::{Defocus, PsfModel};

use crate::args::{DefocusArgs, GeometryArgs, LensArgs, SignArg, DEFAULT_SPACING};
use crate::config::Layered;
use crate::{Context, UsageError};

pub type DynModel = Box<dyn PsfModel<f64>>;

pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value
        .clone()
        .ok_or_else(|| UsageError(format!("missing --{flag}")).into())
}

/// Lens flags merged with the `[lens]` table and the defaults.
pub fn merged_lens(ctx: &Context, mut lens: LensArgs) -> LensArgs {
    lens.fill_from(&ctx.file.lens);
    lens.fill_from(&LensArgs::defaults());
    lens
}

pub fn merged_geometry(ctx: &Context, mut geometry: GeometryArgs) -> GeometryArgs {
    geometry.fill_from(&ctx.file.geometry);
    geometry
}

pub fn merged_defocus(ctx: &Context, mut defocus: DefocusArgs) -> DefocusArgs {
    defocus.fill_from(&ctx.file.defocus);
    defocus
}

/// A trained model from `path`, or the synthetic lens.
pub fn load_psf_model(path: Option<&Path>, lens: &LensArgs, seed: u64) -> anyhow::Result<DynModel> {
    Ok(match path {
        Some(p) => Box::new(load_model::<f64>(p)?),
        None => {
            let spec = lens.spec(seed);
            let analytic = match lens.oversample {
                Some(m) => AnalyticLens::with_oversample(spec, lens.size_k(), lens.kernel_pitch(), m)?,
                None => AnalyticLens::new(spec, lens.size_k(), lens.kernel_pitch())?,
            };
            Box::new(analytic)
        }
    })
}

/// Fills geometry defaults from the model and image size; returns the
/// resolved flags alongside the geometry.
pub fn sensor_geometry(
    mut g: GeometryArgs,
    model: &DynModel,
    width: usize,
    height: usize,
) -> anyhow::Result<(GeometryArgs, SensorGeometry<f64>)> {
    let pitch = *g.pixel_pitch.get_or_insert(model.kernel_pitch());
    let r_max = *g.aperture_radius.get_or_insert(model.ranges().r_max);
    g.spacing.get_or_insert(DEFAULT_SPACING);
    let mut geom = SensorGeometry::centered(width, height, pitch, r_max)?;
    match &g.center {
        Some(c) if c.len() == 2 => geom.optical_center = (c[0], c[1]),
        Some(_) => return Err(UsageError("--center takes ROW,COL".into()).into()),
        None => g.center = Some(vec![geom.optical_center.0, geom.optical_center.1]),
    }
    geom.validate()?;
    if (model.kernel_pitch() - pitch).abs() > 1e-9 * pitch {
        eprintln!(
            "warning: kernel pitch {} µm differs from pixel pitch {} µm; kernels are used unscaled",
            model.kernel_pitch(),
            pitch
        );
    }
    Ok((g, geom))
}

/// Per-pixel defocus: either one value or a full map.
pub enum DefocusPlan {
    Constant(f64),
    Map(Defocus),
}

impl DefocusPlan {
    pub fn source(&self) -> DefocusSource<'_, f64> {
        match self {
            DefocusPlan::Constant(v) => DefocusSource::Constant(*v),
            DefocusPlan::Map(m) => DefocusSource::Map(m),
        }
    }
}

pub fn defocus_plan(
    d: &DefocusArgs,
    lens: &LensArgs,
    model: &DynModel,
    width: usize,
    height: usize,
) -> anyhow::Result<DefocusPlan> {
    let given = [d.defocus.is_some(), d.defocus_gradient.is_some(), d.depth.is_some()];
    if given.iter().filter(|&&g| g).count() > 1 {
        return Err(UsageError(
            "--defocus, --defocus-gradient and --depth are mutually exclusive".into(),
        )
        .into());
    }
    if let Some(g) = &d.defocus_gradient {
        if g.len() != 2 {
            return Err(UsageError("--defocus-gradient takes DZ_LEFT,DZ_RIGHT".into()).into());
        }
        return Ok(DefocusPlan::Map(gradient_defocus(width, height, g[0], g[1])?));
    }
    if let Some(path) = &d.depth {
        let header = read_depth_header(path)?;
        let depth = read_depth::<f64>(path)?;
        if depth.width() != width || depth.height() != height {
            return Err(psfsim::Error::ShapeMismatch(format!(
                "depth map is {}x{}, image is {width}x{height}",
                depth.width(),
                depth.height()
            ))
            .into());
        }
        let mut spec = CameraFocusSpec::new(
            lens.focal_length.unwrap_or(6.0),
            d.focus_distance.unwrap_or(f64::INFINITY),
            header.near,
            header.far,
        )?;
        spec.sign = match d.defocus_sign.unwrap_or(SignArg::NearPositive) {
            SignArg::NearPositive => DefocusSign::NearPositive,
            SignArg::FarPositive => DefocusSign::FarPositive,
        };
        let ranges = model.ranges();
        let map = defocus_map(&spec, &depth, ranges.dz_min, ranges.dz_max)?;
        let flagged = map.count_flagged();
        if flagged > 0 {
            eprintln!("note: {flagged} pixels had their defocus clamped to the model range");
        }
        return Ok(DefocusPlan::Map(map));
    }
    Ok(DefocusPlan::Constant(d.defocus.unwrap_or(0.0)))
}
