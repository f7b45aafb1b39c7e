//! PSF datasets: the scan preprocessing pipeline and on-disk persistence.
//!
//! A dataset on disk is a pair of files sharing a base name:
//!
//! * `<name>.manifest`: TOML with `format_version`, the metadata, the source
//!   and sampling-plan descriptors, the entry count, the payload digest, and
//!   the per-entry field points `[dz, r, phi]`.
//! * `<name>.psfbin`: the kernels as little-endian `f64`, entry order,
//!   row-major within each kernel.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, sha256_hex, with_suffix, FileGroup};
use crate::kernel::{
    bin_downsample, crop_centered, normalize, FieldPoint, HighResScan, PsfKernel,
    NORMALIZED_TOLERANCE,
};
use crate::lens::{SamplingPlan, SyntheticLensSpec};
use crate::scalar::Scalar;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Where the kernels of a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticLensSpec),
    Scans { description: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// Pitch of the source data before binning, µm.
    pub pitch_native: f64,
    /// Kernel pitch, µm.
    pub pitch_target: f64,
    pub size_k: usize,
    /// Largest image height covered, mm.
    pub r_max: f64,
    /// Defocus range covered, µm.
    pub dz_min: f64,
    pub dz_max: f64,
    pub source: DatasetSource,
    pub plan: Option<SamplingPlan>,
}

/// Field points paired with their kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfDataset<T> {
    meta: DatasetMeta,
    entries: Vec<(FieldPoint<T>, PsfKernel<T>)>,
}

fn canonical_key<T: Scalar>(fp: &FieldPoint<T>) -> (u64, u64, u64) {
    let c = fp.canonical();
    let bits = |v: T| (v.to_f64_lossy() + 0.0).to_bits();
    (bits(c.dz), bits(c.r), bits(c.phi))
}

impl<T: Scalar> PsfDataset<T> {
    /// Checks shared kernel shape, field-point ranges, and uniqueness.
    pub fn new(meta: DatasetMeta, entries: Vec<(FieldPoint<T>, PsfKernel<T>)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, (fp, k)) in entries.iter().enumerate() {
            if k.size() != meta.size_k {
                return Err(Error::ShapeMismatch(format!(
                    "entry {i}: kernel size {} but dataset size_k {}",
                    k.size(),
                    meta.size_k
                )));
            }
            let pitch = k.pitch().to_f64_lossy();
            if (pitch - meta.pitch_target).abs() > 1e-9 * meta.pitch_target.abs() {
                return Err(Error::ShapeMismatch(format!(
                    "entry {i}: kernel pitch {pitch} but dataset pitch {}",
                    meta.pitch_target
                )));
            }
            let (dz, r, phi) = (fp.dz.to_f64_lossy(), fp.r.to_f64_lossy(), fp.phi.to_f64_lossy());
            if !(dz >= meta.dz_min && dz <= meta.dz_max && r.abs() <= meta.r_max && phi.is_finite())
            {
                return Err(Error::OutOfRange(format!(
                    "entry {i}: field point ({dz}, {r}, {phi})"
                )));
            }
            if !seen.insert(canonical_key(fp)) {
                return Err(Error::InvalidParameter(format!(
                    "entry {i}: duplicate field point ({dz}, {r}, {phi})"
                )));
            }
        }
        Ok(Self { meta, entries })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn entries(&self) -> &[(FieldPoint<T>, PsfKernel<T>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries at the given indices, same metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            meta: self.meta.clone(),
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// Concatenates two datasets with identical kernel geometry and source.
    /// Entries of `other` at field points already in `self` are dropped; the
    /// plans are merged group-wise.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let (a, b) = (&self.meta, &other.meta);
        if a.size_k != b.size_k || a.pitch_target != b.pitch_target {
            return Err(Error::ShapeMismatch("datasets differ in kernel geometry".into()));
        }
        if a.source != b.source {
            return Err(Error::InvalidParameter("datasets differ in source".into()));
        }
        let plan = match (&a.plan, &b.plan) {
            (Some(p), Some(q)) => Some(SamplingPlan {
                name: format!("{}+{}", p.name, q.name),
                groups: p.groups.iter().chain(&q.groups).cloned().collect(),
            }),
            _ => None,
        };
        let meta = DatasetMeta {
            pitch_native: a.pitch_native,
            pitch_target: a.pitch_target,
            size_k: a.size_k,
            r_max: a.r_max.max(b.r_max),
            dz_min: a.dz_min.min(b.dz_min),
            dz_max: a.dz_max.max(b.dz_max),
            source: a.source.clone(),
            plan,
        };
        let seen: HashSet<_> = self.entries.iter().map(|(fp, _)| canonical_key(fp)).collect();
        let entries = self
            .entries
            .iter()
            .chain(other.entries.iter().filter(|(fp, _)| !seen.contains(&canonical_key(fp))))
            .cloned()
            .collect();
        Self::new(meta, entries)
    }
}

/// Crop around the flux centroid, sum-bin to `target_pitch`, normalize.
pub fn preprocess_scan<T: Scalar>(
    scan: &HighResScan<T>,
    target_pitch: T,
    size_k: usize,
) -> Result<PsfKernel<T>> {
    preprocess_scan_with_background(scan, target_pitch, size_k, None)
}

/// [`preprocess_scan`] with an optional constant background level removed first.
pub fn preprocess_scan_with_background<T: Scalar>(
    scan: &HighResScan<T>,
    target_pitch: T,
    size_k: usize,
    background: Option<T>,
) -> Result<PsfKernel<T>> {
    let subtracted;
    let scan = match background {
        Some(level) => {
            subtracted = scan.subtract_background(level);
            &subtracted
        }
        None => scan,
    };
    let ratio = (target_pitch / scan.pitch()).to_f64_lossy();
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target pitch {target_pitch} for scan pitch {}",
            scan.pitch()
        )));
    }
    let factor = (ratio.round() as usize).max(1);
    let (cr, cc) = scan.centroid().ok_or(Error::AllZeroKernel)?;
    let window = crop_centered(scan, size_k * factor, cr.to_f64_lossy(), cc.to_f64_lossy())?;
    normalize(&bin_downsample(&window, factor)?)
}

/// File locations of a dataset saved under `base`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub payload: PathBuf,
}

impl DatasetPaths {
    /// `base` may name either file or the bare stem.
    pub fn new(base: &Path) -> Self {
        let stem = match base.extension().and_then(|e| e.to_str()) {
            Some("manifest") | Some("psfbin") => base.with_extension(""),
            _ => base.to_path_buf(),
        };
        Self {
            manifest: with_suffix(&stem, "manifest"),
            payload: with_suffix(&stem, "psfbin"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    entry_count: usize,
    payload: String,
    payload_sha256: String,
    cartesian_count: Option<usize>,
    meta: DatasetMeta,
    points: Vec<[f64; 3]>,
}

pub fn save_dataset<T: Scalar>(ds: &PsfDataset<T>, base: &Path) -> Result<DatasetPaths> {
    let (paths, files) = encode_dataset(ds, base)?;
    fsutil::write_atomic_group(&files)?;
    Ok(paths)
}

/// File contents of a dataset saved under `base`, payload first.
pub fn encode_dataset<T: Scalar>(
    ds: &PsfDataset<T>,
    base: &Path,
) -> Result<(DatasetPaths, FileGroup)> {
    let paths = DatasetPaths::new(base);
    let k2 = ds.meta.size_k * ds.meta.size_k;
    let mut payload = Vec::with_capacity(ds.len() * k2 * 8);
    for (_, k) in &ds.entries {
        for v in k.values() {
            payload.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        entry_count: ds.len(),
        payload: paths
            .payload
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        payload_sha256: sha256_hex(&payload),
        cartesian_count: ds.meta.plan.as_ref().map(SamplingPlan::cartesian_count),
        meta: ds.meta.clone(),
        points: ds
            .entries
            .iter()
            .map(|(fp, _)| [fp.dz.to_f64_lossy(), fp.r.to_f64_lossy(), fp.phi.to_f64_lossy()])
            .collect(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::format(&paths.manifest, format!("serialize: {e}")))?;
    let files = vec![
        (paths.payload.clone(), payload),
        (paths.manifest.clone(), text.into_bytes()),
    ];
    Ok((paths, files))
}

pub fn load_dataset(base: &Path) -> Result<PsfDataset<f64>> {
    let paths = DatasetPaths::new(base);
    let text = fsutil::read(&paths.manifest)?;
    let bad = |reason: String| Error::format(&paths.manifest, reason);
    let text = String::from_utf8(text).map_err(|_| bad("manifest is not UTF-8".into()))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {}", m.format_version)));
    }
    if m.points.len() != m.entry_count {
        return Err(bad(format!(
            "{} points listed for {} entries",
            m.points.len(),
            m.entry_count
        )));
    }
    let payload = fsutil::read(&paths.payload)?;
    let bad_payload = |reason: String| Error::format(&paths.payload, reason);
    let k = m.meta.size_k;
    let expected = m.entry_count * k * k * 8;
    if payload.len() != expected {
        return Err(bad_payload(format!(
            "payload holds {} bytes, expected {expected}",
            payload.len()
        )));
    }
    if sha256_hex(&payload) != m.payload_sha256 {
        return Err(bad_payload("payload digest mismatch".into()));
    }
    let mut entries = Vec::with_capacity(m.entry_count);
    for (i, (p, chunk)) in m.points.iter().zip(payload.chunks_exact(k * k * 8)).enumerate() {
        let values: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let kernel = load_kernel(k, m.meta.pitch_target, values)
            .map_err(|e| bad_payload(format!("entry {i}: {e}")))?;
        entries.push((FieldPoint::new(p[0], p[1], p[2]), kernel));
    }
    PsfDataset::new(m.meta, entries).map_err(|e| bad(e.to_string()))
}

fn load_kernel(size: usize, pitch: f64, values: Vec<f64>) -> Result<PsfKernel<f64>> {
    let sum: f64 = values.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::AllZeroKernel);
    }
    if (sum - 1.0).abs() <= NORMALIZED_TOLERANCE {
        PsfKernel::new_normalized(size, pitch, values)
    } else {
        PsfKernel::new(size, pitch, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::{analytic_psf, generate_dataset, render_highres, MEASUREMENT_PITCH_UM};

    fn fp(dz: f64, r: f64, phi: f64) -> FieldPoint<f64> {
        FieldPoint::new(dz, r, phi)
    }

    fn small_dataset() -> PsfDataset<f64> {
        let plan = SamplingPlan {
            name: "small".into(),
            groups: vec![crate::lens::PlanGroup {
                dz: vec![-10.0, 10.0],
                r: vec![0.0, 1.5, -1.5],
                phi: vec![0.0, 45.0],
            }],
        };
        generate_dataset(&SyntheticLensSpec::default(), &plan, 13, 6.14).unwrap()
    }

    #[test]
    fn preprocess_matches_analytic_kernel() {
        let spec = SyntheticLensSpec::default();
        for p in [fp(0.0, 0.0, 0.0), fp(25.0, 2.5, 130.0), fp(-45.0, 1.0, 300.0)] {
            // Larger than the window so the centroid crop does real work.
            let scan = render_highres(&spec, &p, 300, MEASUREMENT_PITCH_UM).unwrap();
            let k = preprocess_scan(&scan, 6.0, 13).unwrap();
            assert!((k.pitch() - 6.14).abs() < 1e-12);
            let oracle = analytic_psf(&spec, &p, 13, k.pitch()).unwrap();
            for (a, b) in k.values().iter().zip(oracle.values()) {
                assert!(((a - b) / b).abs() < 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn preprocess_keeps_centroid() {
        // Off-center spot: flux centroid in µm survives within half a target pixel.
        let (n, pitch) = (400usize, 0.307);
        let mut values = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let (y, x) = (r as f64 - 230.3, c as f64 - 170.8);
                values[r * n + c] = (-(x * x + 2.0 * y * y) / 800.0).exp();
            }
        }
        let scan = HighResScan::new(n, n, pitch, values).unwrap();
        let k = preprocess_scan(&scan, 6.0, 13).unwrap();
        let (sr, sc) = scan.centroid().unwrap();
        let (kr, kc) = k.centroid().unwrap();
        // Window start in scan pixels, same rule as the crop.
        let start = |c: f64| crate::kernel::window_start(c, 13 * 20);
        let phys_k_r = start(sr) * pitch + (kr + 0.5) * k.pitch() - pitch / 2.0;
        let phys_k_c = start(sc) * pitch + (kc + 0.5) * k.pitch() - pitch / 2.0;
        assert!((phys_k_r - sr * pitch).abs() <= k.pitch() / 2.0);
        assert!((phys_k_c - sc * pitch).abs() <= k.pitch() / 2.0);
    }

    #[test]
    fn preprocess_identity_path() {
        let spec = SyntheticLensSpec::default();
        let raw = crate::lens::render_highres(&spec, &fp(0.0, 0.0, 0.0), 13, 6.14).unwrap();
        let k = preprocess_scan(&raw, 6.14, 13).unwrap();
        let expect = normalize(&PsfKernel::new(13, 6.14, raw.values().to_vec()).unwrap()).unwrap();
        assert_eq!(k, expect);
    }

    #[test]
    fn preprocess_rejects_zero_and_small_scans() {
        let zero = HighResScan::new(260, 260, 0.307, vec![0.0; 260 * 260]).unwrap();
        assert!(matches!(preprocess_scan(&zero, 6.0, 13), Err(Error::AllZeroKernel)));
        let spec = SyntheticLensSpec::default();
        let small = render_highres(&spec, &fp(0.0, 0.0, 0.0), 100, 0.307).unwrap();
        assert!(matches!(
            preprocess_scan(&small, 6.0, 13),
            Err(Error::WindowOutOfBounds { .. })
        ));
    }

    #[test]
    fn background_hook_is_off_by_default() {
        let spec = SyntheticLensSpec::default();
        let scan = render_highres(&spec, &fp(0.0, 0.0, 0.0), 260, 0.307).unwrap();
        let a = preprocess_scan(&scan, 6.0, 13).unwrap();
        let b = preprocess_scan_with_background(&scan, 6.0, 13, Some(0.0)).unwrap();
        assert_eq!(a, b);
        let c = preprocess_scan_with_background(&scan, 6.0, 13, Some(1e-6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_rejects_duplicates_and_mismatches() {
        let ds = small_dataset();
        let mut entries = ds.entries().to_vec();
        entries.push(entries[0].clone());
        assert!(PsfDataset::new(ds.meta().clone(), entries).is_err());
        let mut meta = ds.meta().clone();
        meta.size_k = 11;
        assert!(matches!(
            PsfDataset::new(meta, ds.entries().to_vec()),
            Err(Error::ShapeMismatch(_))
        ));
        let mut meta = ds.meta().clone();
        meta.dz_max = 5.0;
        assert!(matches!(
            PsfDataset::new(meta, ds.entries().to_vec()),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn on_axis_duplicates_fold() {
        // (0, 0, 0) and (0, 0, 45) are the same physical point.
        let ds = small_dataset();
        assert_eq!(ds.len(), 2 * (1 + 4));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        let paths = save_dataset(&ds, &dir.path().join("small")).unwrap();
        assert!(paths.manifest.ends_with("small.manifest"));
        let back = load_dataset(&dir.path().join("small.manifest")).unwrap();
        assert_eq!(back, ds);
        for ((_, a), (_, b)) in back.entries().iter().zip(ds.entries()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&SyntheticLensSpec::default(), &SamplingPlan::empty(), 13, 6.14)
            .unwrap();
        save_dataset(&ds, &dir.path().join("e")).unwrap();
        assert_eq!(load_dataset(&dir.path().join("e")).unwrap(), ds);
    }

    fn corrupt(rewrite: impl FnOnce(&DatasetPaths)) -> Error {
        let dir = tempfile::tempdir().unwrap();
        let paths = save_dataset(&small_dataset(), &dir.path().join("c")).unwrap();
        rewrite(&paths);
        load_dataset(&paths.manifest).unwrap_err()
    }

    #[test]
    fn zero_sum_kernel_is_a_format_error() {
        let err = corrupt(|p| {
            let mut bytes = std::fs::read(&p.payload).unwrap();
            bytes[..169 * 8].fill(0);
            std::fs::write(&p.payload, &bytes).unwrap();
            // Keep the digest consistent so the kernel check is what fails.
            let text = std::fs::read_to_string(&p.manifest).unwrap();
            let old = text.lines().find(|l| l.starts_with("payload_sha256")).unwrap();
            let text = text.replace(old, &format!("payload_sha256 = \"{}\"", sha256_hex(&bytes)));
            std::fs::write(&p.manifest, text).unwrap();
        });
        assert!(matches!(err, Error::Format { ref reason, .. } if reason.contains("zero")), "{err}");
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let err = corrupt(|p| {
            let bytes = std::fs::read(&p.payload).unwrap();
            std::fs::write(&p.payload, &bytes[..bytes.len() - 100]).unwrap();
        });
        assert!(matches!(err, Error::Format { .. }));
        let err = corrupt(|p| {
            let text = std::fs::read_to_string(&p.manifest).unwrap();
            std::fs::write(&p.manifest, &text[..text.len() / 2]).unwrap();
        });
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn version_mismatch_is_a_format_error() {
        let err = corrupt(|p| {
            let text = std::fs::read_to_string(&p.manifest).unwrap();
            std::fs::write(&p.manifest, text.replace("format_version = 1", "format_version = 2"))
                .unwrap();
        });
        assert!(matches!(err, Error::Format { ref reason, .. } if reason.contains("format_version")));
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(&dir.path().join("nothing")).unwrap_err().is_io());
    }

    #[test]
    fn manifest_regenerates_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, &dir.path().join("r")).unwrap();
        let back = load_dataset(&dir.path().join("r")).unwrap();
        let DatasetSource::Synthetic(spec) = &back.meta().source else {
            panic!("synthetic source expected")
        };
        let plan = back.meta().plan.clone().unwrap();
        let regen = generate_dataset(spec, &plan, back.meta().size_k, back.meta().pitch_target)
            .unwrap();
        assert_eq!(regen, ds);
    }

    #[test]
    fn concat_merges_plans() {
        let spec = SyntheticLensSpec::default();
        let a = generate_dataset(&spec, &SamplingPlan::single(fp(0.0, 0.0, 0.0)), 13, 6.14).unwrap();
        let b = generate_dataset(&spec, &SamplingPlan::single(fp(5.0, 1.0, 0.0)), 13, 6.14).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.meta().plan.as_ref().unwrap().groups.len(), 2);
        assert_eq!(c.concat(&a).unwrap().entries(), c.entries());
        assert_eq!(a.concat(&a).unwrap().len(), 1);
    }
}
