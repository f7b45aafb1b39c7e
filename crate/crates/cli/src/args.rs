//! Flag sets. Each doubles as a config-file table, so every field is optional
//! until the layers are merged.

use std::path::PathBuf;

use clap::Args;
use psfsim::imageio::Gamma;
use psfsim::lens::SyntheticLensSpec;
use psfsim::regressor::{Optimizer, TrainConfig, DEFAULT_HIDDEN};
use serde::{Deserialize, Serialize};

use crate::config::layered;

pub const DEFAULT_KERNEL_SIZE: usize = 13;
pub const DEFAULT_KERNEL_PITCH: f64 = 6.14;
pub const DEFAULT_SPACING: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GammaArg {
    Linear,
    Srgb,
}

impl From<GammaArg> for Gamma {
    fn from(g: GammaArg) -> Self {
        match g {
            GammaArg::Linear => Gamma::Linear,
            GammaArg::Srgb => Gamma::Srgb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Adam,
    Momentum,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Momentum => Optimizer::Momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SignArg {
    NearPositive,
    FarPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceArg {
    /// The synthetic lens at the same field point.
    Oracle,
    /// The dataset entry at the same field point.
    Dataset,
    None,
}

/// Synthetic lens parameters and kernel sampling.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensArgs {
    /// Focal length in mm (also used to turn depth into defocus).
    #[arg(long)]
    pub focal_length: Option<f64>,
    /// Largest image height of the lens model, mm.
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Defocus range of the lens model, µm.
    #[arg(long)]
    pub dz_min: Option<f64>,
    #[arg(long)]
    pub dz_max: Option<f64>,
    /// Best-focus Gaussian width, µm.
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Tangential focal shift per mm² of image height squared, µm.
    #[arg(long)]
    pub a_field: Option<f64>,
    /// Astigmatic split per mm², µm.
    #[arg(long)]
    pub b_astig: Option<f64>,
    /// Extra blur growth for positive defocus.
    #[arg(long)]
    pub c_asym: Option<f64>,
    /// Width growth per µm of defocus.
    #[arg(long)]
    pub defocus_gain: Option<f64>,
    /// Kernel side length in pixels (odd).
    #[arg(long)]
    pub size_k: Option<usize>,
    /// Kernel pixel pitch, µm.
    #[arg(long)]
    pub kernel_pitch: Option<f64>,
    /// Quadrature samples per pixel axis when evaluating the lens directly
    /// (default: the dataset rule for the pitch).
    #[arg(long)]
    pub oversample: Option<usize>,
}

layered!(LensArgs {
    focal_length, r_max, dz_min, dz_max, sigma0, a_field, b_astig, c_asym,
    defocus_gain, size_k, kernel_pitch, oversample,
});

impl LensArgs {
    pub fn defaults() -> Self {
        let s = SyntheticLensSpec::default();
        Self {
            focal_length: Some(s.focal_length),
            r_max: Some(s.r_max),
            dz_min: Some(s.dz_min),
            dz_max: Some(s.dz_max),
            sigma0: Some(s.sigma0),
            a_field: Some(s.a_field),
            b_astig: Some(s.b_astig),
            c_asym: Some(s.c_asym),
            defocus_gain: Some(s.defocus_gain),
            size_k: Some(DEFAULT_KERNEL_SIZE),
            kernel_pitch: Some(DEFAULT_KERNEL_PITCH),
            oversample: None,
        }
    }

    /// Only meaningful after merging with [`LensArgs::defaults`].
    pub fn spec(&self, seed: u64) -> SyntheticLensSpec {
        let d = SyntheticLensSpec::default();
        SyntheticLensSpec {
            focal_length: self.focal_length.unwrap_or(d.focal_length),
            r_max: self.r_max.unwrap_or(d.r_max),
            dz_min: self.dz_min.unwrap_or(d.dz_min),
            dz_max: self.dz_max.unwrap_or(d.dz_max),
            sigma0: self.sigma0.unwrap_or(d.sigma0),
            a_field: self.a_field.unwrap_or(d.a_field),
            b_astig: self.b_astig.unwrap_or(d.b_astig),
            c_asym: self.c_asym.unwrap_or(d.c_asym),
            defocus_gain: self.defocus_gain.unwrap_or(d.defocus_gain),
            seed,
        }
    }

    pub fn size_k(&self) -> usize {
        self.size_k.unwrap_or(DEFAULT_KERNEL_SIZE)
    }

    pub fn kernel_pitch(&self) -> f64 {
        self.kernel_pitch.unwrap_or(DEFAULT_KERNEL_PITCH)
    }
}

/// Sensor layout and kernel grid.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryArgs {
    /// Sensor pixel pitch, µm (default: the kernel pitch).
    #[arg(long)]
    pub pixel_pitch: Option<f64>,
    /// Radius of the valid image circle, mm (default: the model's r_max).
    #[arg(long)]
    pub aperture_radius: Option<f64>,
    /// Optical center as ROW,COL in pixels (default: image center).
    #[arg(long, value_delimiter = ',', value_name = "ROW,COL")]
    pub center: Option<Vec<f64>>,
    /// Kernel grid spacing in pixels.
    #[arg(long)]
    pub spacing: Option<usize>,
}

layered!(GeometryArgs { pixel_pitch, aperture_radius, center, spacing });

/// Where per-pixel defocus comes from. At most one source may be given;
/// without any the image is in focus everywhere.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefocusArgs {
    /// Constant defocus, µm.
    #[arg(long)]
    pub defocus: Option<f64>,
    /// Defocus varying linearly from the left to the right edge, µm.
    #[arg(long, value_delimiter = ',', value_name = "DZ_LEFT,DZ_RIGHT")]
    pub defocus_gradient: Option<Vec<f64>>,
    /// Depth image with a `.meta` sidecar describing its encoding.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Focused object distance for `--depth`, m (`inf` allowed).
    #[arg(long)]
    pub focus_distance: Option<f64>,
    /// Which side of focus counts as positive defocus for `--depth`.
    #[arg(long, value_enum)]
    pub defocus_sign: Option<SignArg>,
}

layered!(DefocusArgs { defocus, defocus_gradient, depth, focus_distance, defocus_sign });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetGenArgs {
    /// Output base name; writes `<out>.manifest` and `<out>.psfbin`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Named sampling pattern (`series1`, `series2`, `empty`); repeat to merge.
    #[arg(long = "preset", alias = "plan")]
    pub presets: Option<Vec<String>>,
    /// Extra field point DZ,R,PHI (µm, mm, degrees); repeatable.
    #[arg(long = "point", value_parser = parse_point, allow_hyphen_values = true)]
    pub points: Option<Vec<[f64; 3]>>,
}

layered!(DatasetGenArgs { out, presets, points });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset base name.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// History CSV (default: `<out>.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Momentum coefficient (momentum optimizer only).
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Share of field points held out for validation.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
}

layered!(TrainArgs {
    dataset, out, history, hidden, epochs, optimizer, learning_rate, momentum,
    validation_fraction, patience,
});

impl TrainArgs {
    pub fn defaults() -> Self {
        let c = TrainConfig::default();
        Self {
            hidden: Some(DEFAULT_HIDDEN.to_vec()),
            epochs: Some(c.epochs),
            optimizer: Some(OptimizerArg::Adam),
            learning_rate: Some(c.learning_rate),
            momentum: Some(c.momentum),
            validation_fraction: Some(c.validation_fraction),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfEvalArgs {
    /// Model file; without it the synthetic lens itself is evaluated.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Field point DZ,R,PHI (µm, mm, degrees).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub point: Option<[f64; 3]>,
    /// Output prefix; writes `<out>.pfm` and `<out>.png`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Kernel shown next to the prediction.
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
    /// Dataset for `--reference dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

layered!(PsfEvalArgs { model, point, out, reference, dataset });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeArgs {
    /// Input image (PFM, PNG, PGM/PPM).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output image; the format follows the extension.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Model file; without it the synthetic lens is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluate the model on the optical axis only; defocus still varies.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub spatially_invariant: Option<bool>,
    /// Transfer curve of integer images.
    #[arg(long, value_enum)]
    pub gamma: Option<GammaArg>,
    /// Bits per sample of integer output images (8 or 16).
    #[arg(long)]
    pub bit_depth: Option<u8>,
}

layered!(DegradeArgs { input, output, model, spatially_invariant, gamma, bit_depth });

impl DegradeArgs {
    pub fn defaults() -> Self {
        Self {
            spatially_invariant: Some(false),
            gamma: Some(GammaArg::Linear),
            bit_depth: Some(16),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReportArgs {
    /// Input image (PFM, PNG, PGM/PPM).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV report to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Model file; without it the synthetic lens is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Grid spacings to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub spacings: Option<Vec<usize>>,
    /// Add a wall-time column (makes the report non-reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
    #[arg(long, value_enum)]
    pub gamma: Option<GammaArg>,
}

layered!(ErrorReportArgs { input, output, model, spacings, timing, gamma });

impl ErrorReportArgs {
    pub fn defaults() -> Self {
        Self {
            spacings: Some(vec![1, 8, 16, 32, 64]),
            timing: Some(false),
            gamma: Some(GammaArg::Linear),
            ..Default::default()
        }
    }
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected DZ,R,PHI, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_parsing() {
        assert_eq!(parse_point("-11.25, 2.25,0").unwrap(), [-11.25, 2.25, 0.0]);
        assert!(parse_point("1,2").is_err());
        assert!(parse_point("1,x,2").is_err());
    }

    #[test]
    fn lens_defaults_give_default_spec() {
        assert_eq!(LensArgs::defaults().spec(0), SyntheticLensSpec::default());
    }
}
