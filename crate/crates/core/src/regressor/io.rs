//! `.psfmodel` files: a magic line, a TOML header, an `end_header` line, then
//! every layer's weights (row-major, `out x in`) followed by its biases as
//! little-endian `f64`.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Layer, NormConstants, OutputMode, RegressorModel};
use crate::error::{Error, Result};
use crate::fsutil::{self, sha256_hex};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8] = b"PSFMODEL\n";
const END_HEADER: &[u8] = b"end_header\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    size_k: usize,
    kernel_pitch: f64,
    dz_scale: f64,
    r_scale: f64,
    dz_min: f64,
    dz_max: f64,
    r_max: f64,
    output_mode: OutputMode,
    training_mse: Option<f64>,
    payload_len: usize,
    payload_sha256: String,
}

pub fn model_to_bytes<T: Scalar>(model: &RegressorModel<T>) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.param_count() * 8);
    for v in model.params() {
        payload.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    let n = model.norm();
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        layer_sizes: model.layer_sizes(),
        hidden_activation: model.hidden_activation,
        output_activation: model.output_activation,
        size_k: model.size_k,
        kernel_pitch: model.kernel_pitch.to_f64_lossy(),
        dz_scale: n.dz_scale.to_f64_lossy(),
        r_scale: n.r_scale.to_f64_lossy(),
        dz_min: n.dz_min.to_f64_lossy(),
        dz_max: n.dz_max.to_f64_lossy(),
        r_max: n.r_max.to_f64_lossy(),
        output_mode: n.output_mode,
        training_mse: model.training_mse.map(Scalar::to_f64_lossy),
        payload_len: payload.len(),
        payload_sha256: sha256_hex(&payload),
    };
    let text = toml::to_string(&header)
        .map_err(|e| Error::InvalidParameter(format!("model header: {e}")))?;
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(END_HEADER);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8], path: &Path) -> Result<RegressorModel<T>> {
    let bad = |reason: &str| Error::format(path, reason);
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("missing PSFMODEL magic"))?;
    let split = rest
        .windows(END_HEADER.len())
        .position(|w| w == END_HEADER)
        .ok_or_else(|| bad("missing end_header"))?;
    let text = std::str::from_utf8(&rest[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let payload = &rest[split + END_HEADER.len()..];
    let h: Header = toml::from_str(text).map_err(|e| bad(&e.to_string()))?;
    if h.format_version != MODEL_FORMAT_VERSION {
        return Err(bad(&format!("unsupported format_version {}", h.format_version)));
    }
    if payload.len() != h.payload_len {
        return Err(bad(&format!(
            "payload holds {} bytes, header says {}",
            payload.len(),
            h.payload_len
        )));
    }
    if sha256_hex(payload) != h.payload_sha256 {
        return Err(bad("payload digest mismatch"));
    }
    let sizes = &h.layer_sizes;
    if sizes.len() < 2 || sizes[0] != super::INPUT_DIM {
        return Err(bad("layer_sizes must start with the 4 encoded inputs"));
    }
    let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if payload.len() != expected * 8 {
        return Err(bad("payload length does not match layer_sizes"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))));
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights: Vec<T> = values.by_ref().take(fan_in * fan_out).collect();
        let bias: Vec<T> = values.by_ref().take(fan_out).collect();
        layers.push(Layer {
            weights: Array2::from_shape_vec((fan_out, fan_in), weights)
                .map_err(|e| bad(&e.to_string()))?,
            bias: Array1::from_vec(bias),
        });
    }
    let norm = NormConstants {
        dz_scale: T::lit(h.dz_scale),
        r_scale: T::lit(h.r_scale),
        dz_min: T::lit(h.dz_min),
        dz_max: T::lit(h.dz_max),
        r_max: T::lit(h.r_max),
        output_mode: h.output_mode,
    };
    RegressorModel::from_parts(
        layers,
        h.hidden_activation,
        h.output_activation,
        norm,
        h.size_k,
        T::lit(h.kernel_pitch),
        h.training_mse.map(T::lit),
    )
    .map_err(|e| bad(&e.to_string()))
}

pub fn save_model<T: Scalar>(model: &RegressorModel<T>, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<RegressorModel<T>> {
    model_from_bytes(&fsutil::read(path)?, path)
}
