use std::path::PathBuf;

use anyhow::Context as _;
use psfsim::convolve::{degrade as degrade_image, interpolation_error_report, DegradeOptions};
use psfsim::dataset::{encode_dataset, load_dataset};
use psfsim::fsutil::with_suffix;
use psfsim::imageio::{encode_image, read_image, RasterOptions};
use psfsim::lens::{analytic_psf, generate_dataset, PlanGroup, SamplingPlan};
use psfsim::regressor::{model_to_bytes, train as fit, RegressorModel, TrainConfig};
use psfsim::{Error, Field, Img, Kernel};

use crate::args::{
    DatasetGenArgs, DefocusArgs, DegradeArgs, ErrorReportArgs, GeometryArgs, LensArgs,
    PsfEvalArgs, ReferenceArg, TrainArgs,
};
use crate::common::{
    defocus_plan, load_psf_model, merged_defocus, merged_geometry, merged_lens, require,
    sensor_geometry,
};
use crate::config::Layered;
use crate::record::Record;
use crate::{Context, UsageError};

pub fn dataset_gen(ctx: &Context, mut args: DatasetGenArgs, lens: LensArgs) -> anyhow::Result<()> {
    args.fill_from(&ctx.file.dataset_gen);
    let lens = merged_lens(ctx, lens);
    let out = require(&args.out, "out")?;
    let presets = args.presets.clone().unwrap_or_default();
    let points = args.points.clone().unwrap_or_default();
    if presets.is_empty() && points.is_empty() {
        return Err(UsageError("give at least one --preset or --point".into()).into());
    }

    let mut names = Vec::new();
    let mut groups = Vec::new();
    for name in &presets {
        let plan = SamplingPlan::preset(name)
            .ok_or_else(|| UsageError(format!("unknown preset {name:?}")))?;
        names.push(plan.name);
        groups.extend(plan.groups);
    }
    if !points.is_empty() {
        names.push("points".into());
    }
    groups.extend(points.iter().map(|p| PlanGroup {
        dz: vec![p[0]],
        r: vec![p[1]],
        phi: vec![p[2]],
    }));
    let plan = SamplingPlan {
        name: names.join("+"),
        groups,
    };

    let ds = generate_dataset(&lens.spec(ctx.seed), &plan, lens.size_k(), lens.kernel_pitch())?;
    let (paths, files) = encode_dataset(&ds, &out)?;
    let mut record = Record::new(ctx, "dataset-gen");
    record.params("dataset_gen", &args)?;
    record.params("lens", &lens)?;
    record.result("entries", ds.len() as i64);
    record.result("grid_points", plan.cartesian_count() as i64);
    record.write(&paths.manifest, files)?;
    println!(
        "{} entries ({} grid points) written to {}",
        ds.len(),
        plan.cartesian_count(),
        paths.manifest.display()
    );
    Ok(())
}

pub fn train(ctx: &Context, mut args: TrainArgs) -> anyhow::Result<()> {
    args.fill_from(&ctx.file.train);
    args.fill_from(&TrainArgs::defaults());
    let dataset = require(&args.dataset, "dataset")?;
    let out = require(&args.out, "out")?;
    let history = args
        .history
        .get_or_insert_with(|| with_suffix(&out, "history.csv"))
        .clone();
    let ds = load_dataset(&dataset)?;
    let hidden = args.hidden.clone().unwrap_or_default();
    let init = RegressorModel::for_dataset(&ds, &hidden, ctx.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or_default(),
        optimizer: args.optimizer.map(Into::into).unwrap_or_default(),
        learning_rate: args.learning_rate.unwrap_or_default(),
        momentum: args.momentum.unwrap_or_default(),
        seed: ctx.seed,
        validation_fraction: args.validation_fraction.unwrap_or_default(),
        patience: args.patience,
    };
    let (model, hist) = fit(&init, &ds, &cfg)?;

    let best = hist
        .records
        .iter()
        .find(|r| r.epoch == hist.best_epoch)
        .copied()
        .context("training produced no epochs")?;
    let mut record = Record::new(ctx, "train");
    record.params("train", &args)?;
    record.result("best_epoch", best.epoch as i64);
    record.result("train_mse", best.train_mse);
    if let Some(v) = best.val_mse {
        record.result("val_mse", v);
    }
    record.result("train_points", hist.train_indices.len() as i64);
    record.result("val_points", hist.val_indices.len() as i64);
    record.write(
        &out,
        vec![
            (out.clone(), model_to_bytes(&model)?),
            (history, hist.to_csv().into_bytes()),
        ],
    )?;
    match best.val_mse {
        Some(v) => println!("best epoch {}: train_mse {} val_mse {}", best.epoch, best.train_mse, v),
        None => println!("best epoch {}: train_mse {}", best.epoch, best.train_mse),
    }
    Ok(())
}

/// Mean squared difference, accumulated in kernel order.
fn kernel_mse(pred: &Kernel, target: &Kernel) -> f64 {
    let mut acc = 0.0;
    for (p, t) in pred.values().iter().zip(target.values()) {
        let d = p - t;
        acc += d * d;
    }
    acc / target.values().len() as f64
}

/// Kernels side by side with a one-pixel zero gap.
fn side_by_side(kernels: &[&Kernel]) -> Img {
    let k = kernels[0].size();
    let w = kernels.len() * (k + 1) - 1;
    let mut values = vec![0.0; w * k];
    for (i, kernel) in kernels.iter().enumerate() {
        for r in 0..k {
            for c in 0..k {
                values[r * w + i * (k + 1) + c] = kernel.get(r, c);
            }
        }
    }
    Img::gray(w, k, values).expect("consistent size")
}

pub fn psf_eval(ctx: &Context, mut args: PsfEvalArgs, lens: LensArgs) -> anyhow::Result<()> {
    args.fill_from(&ctx.file.psf_eval);
    let lens = merged_lens(ctx, lens);
    let p = require(&args.point, "point")?;
    let out = require(&args.out, "out")?;
    let reference = *args.reference.get_or_insert(match (&args.dataset, &args.model) {
        (Some(_), _) => ReferenceArg::Dataset,
        (None, Some(_)) => ReferenceArg::Oracle,
        (None, None) => ReferenceArg::None,
    });
    let model = load_psf_model(args.model.as_deref(), &lens, ctx.seed)?;
    let fp = Field::new(p[0], p[1], p[2]);
    if !model.ranges().contains(&fp) {
        return Err(Error::OutOfRange(format!("field point ({}, {}, {})", p[0], p[1], p[2])).into());
    }
    let pred = model.psf(&fp)?;
    let target = match reference {
        ReferenceArg::None => None,
        ReferenceArg::Oracle => Some(analytic_psf(
            &lens.spec(ctx.seed),
            &fp,
            model.kernel_size(),
            model.kernel_pitch(),
        )?),
        ReferenceArg::Dataset => {
            let path = require(&args.dataset, "dataset")?;
            let ds = load_dataset(&path)?;
            let key = fp.canonical();
            let hit = ds.entries().iter().find(|(q, _)| {
                let c = q.canonical();
                (c.dz - key.dz).abs() < 1e-9 && (c.r - key.r).abs() < 1e-9 && (c.phi - key.phi).abs() < 1e-9
            });
            let (_, k) = hit.ok_or_else(|| {
                Error::InvalidParameter(format!("field point not in dataset {}", path.display()))
            })?;
            if k.size() != pred.size() {
                return Err(Error::ShapeMismatch("dataset and model kernel sizes differ".into()).into());
            }
            Some(k.clone())
        }
    };

    let mut record = Record::new(ctx, "psf-eval");
    record.params("psf_eval", &args)?;
    record.params("lens", &lens)?;
    let peak = pred.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    record.result("peak", peak);
    println!("peak {peak}");
    let image = match &target {
        Some(t) => {
            let mse = kernel_mse(&pred, t);
            let energy = t.values().iter().map(|v| v * v).sum::<f64>() / t.values().len() as f64;
            record.result("mse", mse);
            record.result("nmse", mse / energy);
            println!("mse {mse}");
            println!("nmse {}", mse / energy);
            side_by_side(&[&pred, t])
        }
        None => side_by_side(&[&pred]),
    };
    let max = image.max_abs();
    let scaled = Img::gray(
        image.width(),
        image.height(),
        image.channel(0).iter().map(|v| v / max).collect(),
    )?;
    let pfm = with_suffix(&out, "pfm");
    let png = with_suffix(&out, "png");
    let files = vec![
        (pfm.clone(), encode_image(&pfm, &image, RasterOptions::default())?),
        (png.clone(), encode_image(&png, &scaled, RasterOptions::default())?),
    ];
    record.write(&out, files)?;
    Ok(())
}

pub fn degrade(
    ctx: &Context,
    mut args: DegradeArgs,
    lens: LensArgs,
    geometry: GeometryArgs,
    defocus: DefocusArgs,
) -> anyhow::Result<()> {
    args.fill_from(&ctx.file.degrade);
    args.fill_from(&DegradeArgs::defaults());
    let lens = merged_lens(ctx, lens);
    let defocus = merged_defocus(ctx, defocus);
    let input = require(&args.input, "input")?;
    let output = require(&args.output, "output")?;
    let gamma = args.gamma.unwrap_or(crate::args::GammaArg::Linear).into();
    let image: Img = read_image(&input, gamma)?;
    let model = load_psf_model(args.model.as_deref(), &lens, ctx.seed)?;
    let (geometry, geom) =
        sensor_geometry(merged_geometry(ctx, geometry), &model, image.width(), image.height())?;
    let plan = defocus_plan(&defocus, &lens, &model, image.width(), image.height())?;
    let options = DegradeOptions {
        spatially_invariant: args.spatially_invariant.unwrap_or(false),
    };
    let spacing = geometry.spacing.unwrap_or(crate::args::DEFAULT_SPACING);
    let out = degrade_image(&image, &model, &geom, &plan.source(), spacing, options)?;
    let opts = RasterOptions {
        gamma,
        bit_depth: args.bit_depth.unwrap_or(16),
    };
    let bytes = encode_image(&output, &out, opts)?;

    let mut record = Record::new(ctx, "degrade");
    record.params("degrade", &args)?;
    record.params("lens", &lens)?;
    record.params("geometry", &geometry)?;
    record.params("defocus", &defocus)?;
    record.write(&output, vec![(output.clone(), bytes)])?;
    println!(
        "{}x{} image degraded with grid spacing {spacing} -> {}",
        image.width(),
        image.height(),
        output.display()
    );
    Ok(())
}

pub fn error_report(
    ctx: &Context,
    mut args: ErrorReportArgs,
    lens: LensArgs,
    geometry: GeometryArgs,
    defocus: DefocusArgs,
) -> anyhow::Result<()> {
    args.fill_from(&ctx.file.error_report);
    args.fill_from(&ErrorReportArgs::defaults());
    let lens = merged_lens(ctx, lens);
    let defocus = merged_defocus(ctx, defocus);
    let input = require(&args.input, "input")?;
    let output: PathBuf = require(&args.output, "output")?;
    let gamma = args.gamma.unwrap_or(crate::args::GammaArg::Linear).into();
    let image: Img = read_image(&input, gamma)?;
    let model = load_psf_model(args.model.as_deref(), &lens, ctx.seed)?;
    let (geometry, geom) =
        sensor_geometry(merged_geometry(ctx, geometry), &model, image.width(), image.height())?;
    let plan = defocus_plan(&defocus, &lens, &model, image.width(), image.height())?;
    let spacings = args.spacings.clone().unwrap_or_default();
    let rows = interpolation_error_report(&image, &model, &geom, &plan.source(), &spacings)?;

    let timing = args.timing.unwrap_or(false);
    let mut csv = String::from(if timing { "s,max_err,mean_err,seconds\n" } else { "s,max_err,mean_err\n" });
    for r in &rows {
        csv.push_str(&format!("{},{:e},{:e}", r.spacing, r.max_err, r.mean_err));
        if timing {
            csv.push_str(&format!(",{}", r.seconds));
        }
        csv.push('\n');
    }
    let mut record = Record::new(ctx, "error-report");
    record.params("error_report", &args)?;
    record.params("lens", &lens)?;
    record.params("geometry", &geometry)?;
    record.params("defocus", &defocus)?;
    print!("{csv}");
    record.write(&output, vec![(output.clone(), csv.into_bytes())])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn side_by_side_layout() {
        let a = Kernel::delta(3, 6.0).unwrap();
        let b = Kernel::new(3, 6.0, vec![1.0; 9]).unwrap();
        let img = side_by_side(&[&a, &b]);
        assert_eq!((img.width(), img.height()), (7, 3));
        assert_eq!(img.get(0, 1, 1), 1.0);
        assert_eq!(img.get(0, 1, 3), 0.0);
        assert_eq!(img.get(0, 0, 4), 1.0);
    }

    #[test]
    fn kernel_mse_of_identical_is_zero() {
        let a = Kernel::delta(5, 6.0).unwrap();
        assert_eq!(kernel_mse(&a, &a), 0.0);
        let b = Kernel::new(5, 6.0, vec![0.04; 25]).unwrap();
        let expected = (0.96f64.powi(2) + 24.0 * 0.04f64.powi(2)) / 25.0;
        assert!((kernel_mse(&a, &b) - expected).abs() < 1e-15);
    }
}
