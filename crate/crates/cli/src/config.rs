//! Optional TOML configuration file. Every table mirrors the flags of the
//! matching subcommand; flags win over the file, the file over defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use crate::args::{
    DatasetGenArgs, DefocusArgs, DegradeArgs, ErrorReportArgs, GeometryArgs, LensArgs,
    PsfEvalArgs, TrainArgs,
};
use crate::UsageError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub lens: LensArgs,
    #[serde(default)]
    pub geometry: GeometryArgs,
    #[serde(default)]
    pub defocus: DefocusArgs,
    #[serde(default)]
    pub dataset_gen: DatasetGenArgs,
    #[serde(default)]
    pub train: TrainArgs,
    #[serde(default)]
    pub psf_eval: PsfEvalArgs,
    #[serde(default)]
    pub degrade: DegradeArgs,
    #[serde(default)]
    pub error_report: ErrorReportArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// Fills unset fields from a lower-precedence layer.
pub trait Layered {
    fn fill_from(&mut self, lower: &Self);
}

macro_rules! layered {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::Layered for $ty {
            fn fill_from(&mut self, lower: &Self) {
                $(
                    if self.$field.is_none() {
                        self.$field = lower.$field.clone();
                    }
                )*
            }
        }
    };
}
pub(crate) use layered;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg: FileConfig = toml::from_str(
            "seed = 4\n[lens]\nsigma0 = 2.5\n[train]\nepochs = 10\nhidden = [8, 8]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.lens.sigma0, Some(2.5));
        assert_eq!(cfg.train.epochs, Some(10));
        assert_eq!(cfg.train.hidden, Some(vec![8, 8]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sed = 4\n").is_err());
        assert!(toml::from_str::<FileConfig>("[train]\nepoch = 4\n").is_err());
        assert!(toml::from_str::<FileConfig>("[bogus]\n").is_err());
    }

    #[test]
    fn flags_win_over_file_over_defaults() {
        let mut flags = TrainArgs {
            epochs: Some(3),
            ..Default::default()
        };
        let file = TrainArgs {
            epochs: Some(7),
            learning_rate: Some(0.5),
            ..Default::default()
        };
        flags.fill_from(&file);
        flags.fill_from(&TrainArgs::defaults());
        assert_eq!(flags.epochs, Some(3));
        assert_eq!(flags.learning_rate, Some(0.5));
        assert_eq!(flags.validation_fraction, Some(0.2));
    }
}
