//! Image and depth-map files.
//!
//! PFM is the lossless path (32-bit float, linear). PNG (8 or 16 bit) and PGM
//! are quantized and optionally sRGB-encoded. A depth image `d.pfm` is
//! described by a TOML sidecar `d.pfm.meta`:
//!
//! ```toml
//! encoding = "zbuffer"      # or "linear_meters"
//! near = 0.1                # m
//! far = 1000.0              # m
//! v_convention = "near_zero" # or "far_zero" (reversed z); zbuffer only
//! scale = 1.0               # multiplies linear_meters values
//! ```

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::depth::{linearize_zbuffer, DepthMap};
use crate::error::{Error, Result};
use crate::fsutil::{self, with_suffix};
use crate::image::Image;
use crate::scalar::Scalar;

/// Transfer curve between stored integer codes and linear intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    #[default]
    Linear,
    Srgb,
}

impl Gamma {
    pub fn decode(self, v: f64) -> f64 {
        match self {
            Self::Linear => v,
            Self::Srgb if v <= 0.04045 => v / 12.92,
            Self::Srgb => ((v + 0.055) / 1.055).powf(2.4),
        }
    }

    pub fn encode(self, v: f64) -> f64 {
        match self {
            Self::Linear => v,
            Self::Srgb if v <= 0.0031308 => v * 12.92,
            Self::Srgb => 1.055 * v.powf(1.0 / 2.4) - 0.055,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pfm,
    Png,
    Pnm,
}

fn kind(path: &Path) -> Result<Kind> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pfm" => Ok(Kind::Pfm),
        "png" => Ok(Kind::Png),
        "pgm" | "ppm" | "pnm" => Ok(Kind::Pnm),
        _ => Err(Error::format(path, "unsupported image extension (pfm, png, pgm, ppm)")),
    }
}

pub fn encode_pfm<T: Scalar>(image: &Image<T>) -> Result<Vec<u8>> {
    let tag = match image.num_channels() {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::ShapeMismatch(format!("PFM holds 1 or 3 channels, not {n}"))),
    };
    let (w, h) = (image.width(), image.height());
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * image.num_channels() * 4);
    for r in (0..h).rev() {
        for c in 0..w {
            for ch in 0..image.num_channels() {
                let v = image.get(ch, r, c).to_f64_lossy() as f32;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Image<T>> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("not a PFM file")),
    };
    let w: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("bad scale"));
    }
    // Exactly one whitespace byte separates the header from the data.
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing data"))?;
    if data.len() != w * h * channels * 4 {
        return Err(bad(&format!(
            "expected {} data bytes, found {}",
            w * h * channels * 4,
            data.len()
        )));
    }
    let mut planes = vec![vec![T::zero(); w * h]; channels];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4-byte chunk");
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (px, ch) = (i / channels, i % channels);
        let (r_up, c) = (px / w, px % w);
        planes[ch][(h - 1 - r_up) * w + c] = T::lit(v as f64);
    }
    Image::new(w, h, planes).map_err(|e| bad(&e.to_string()))
}

fn decode_raster<T: Scalar>(dynamic: DynamicImage, gamma: Gamma) -> Image<T> {
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let lin = |v: u16| T::lit(gamma.decode(v as f64 / 65535.0));
    if dynamic.color().has_color() {
        let rgb = dynamic.to_rgb16();
        let mut planes: Vec<Vec<T>> = (0..3).map(|_| Vec::with_capacity(w * h)).collect();
        for p in rgb.pixels() {
            for (plane, &v) in planes.iter_mut().zip(&p.0) {
                plane.push(lin(v));
            }
        }
        Image::from_parts_unchecked(w, h, planes)
    } else {
        let gray = dynamic.to_luma16();
        Image::from_parts_unchecked(w, h, vec![gray.pixels().map(|p| lin(p.0[0])).collect()])
    }
}

/// Reads an image into linear intensities.
pub fn read_image<T: Scalar>(path: &Path, gamma: Gamma) -> Result<Image<T>> {
    let kind = kind(path)?;
    let bytes = fsutil::read(path)?;
    match kind {
        Kind::Pfm => decode_pfm(&bytes, path),
        Kind::Png | Kind::Pnm => {
            let fmt = if kind == Kind::Png {
                ImageFormat::Png
            } else {
                ImageFormat::Pnm
            };
            let dynamic = image::load_from_memory_with_format(&bytes, fmt)
                .map_err(|e| Error::format(path, e.to_string()))?;
            Ok(decode_raster(dynamic, gamma))
        }
    }
}

/// Quantization for integer formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterOptions {
    pub gamma: Gamma,
    /// 8 or 16.
    pub bit_depth: u8,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            gamma: Gamma::Linear,
            bit_depth: 16,
        }
    }
}

fn quantize<T: Scalar>(v: T, gamma: Gamma, max: f64) -> f64 {
    (gamma.encode(v.to_f64_lossy().clamp(0.0, 1.0)) * max).round()
}

fn encode_raster<T: Scalar>(image: &Image<T>, opts: RasterOptions, fmt: ImageFormat) -> Result<Vec<u8>> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let n = image.width() * image.height();
    let nch = image.num_channels();
    if nch != 1 && nch != 3 {
        return Err(Error::ShapeMismatch(format!("cannot store {nch} channels as PNG/PNM")));
    }
    let interleave = |max: f64| -> Vec<f64> {
        (0..n)
            .flat_map(|i| (0..nch).map(move |ch| (i, ch)))
            .map(|(i, ch)| quantize(image.channel(ch)[i], opts.gamma, max))
            .collect()
    };
    let dynamic = match (opts.bit_depth, nch) {
        (8, 1) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, interleave(255.0).iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (8, 3) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleave(255.0).iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (16, 1) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, interleave(65535.0).iter().map(|&v| v as u16).collect())
                .expect("buffer size"),
        ),
        (16, 3) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, interleave(65535.0).iter().map(|&v| v as u16).collect())
                .expect("buffer size"),
        ),
        (d, _) => return Err(Error::InvalidParameter(format!("bit depth {d} (use 8 or 16)"))),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, fmt)
        .map_err(|e| Error::InvalidParameter(format!("encoding image: {e}")))?;
    Ok(out.into_inner())
}

/// Encodes an image in the format named by the path's extension.
pub fn encode_image<T: Scalar>(path: &Path, image: &Image<T>, opts: RasterOptions) -> Result<Vec<u8>> {
    match kind(path)? {
        Kind::Pfm => encode_pfm(image),
        Kind::Png => encode_raster(image, opts, ImageFormat::Png),
        Kind::Pnm => encode_raster(image, opts, ImageFormat::Pnm),
    }
}

/// Atomically writes an image in the format named by the path's extension.
pub fn write_image<T: Scalar>(path: &Path, image: &Image<T>, opts: RasterOptions) -> Result<()> {
    fsutil::write_atomic(path, &encode_image(path, image, opts)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthEncoding {
    LinearMeters,
    Zbuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VConvention {
    /// `v = 0` at the near plane.
    #[default]
    NearZero,
    /// Reversed z: `v = 0` at the far plane.
    FarZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthHeader {
    pub encoding: DepthEncoding,
    pub near: f64,
    pub far: f64,
    #[serde(default)]
    pub v_convention: VConvention,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

pub fn depth_sidecar_path(path: &Path) -> std::path::PathBuf {
    with_suffix(path, "meta")
}

/// Reads and checks the sidecar of a depth image.
pub fn read_depth_header(path: &Path) -> Result<DepthHeader> {
    let meta_path = depth_sidecar_path(path);
    let text = match std::fs::read_to_string(&meta_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::format(path, "depth header (.meta sidecar) is missing"));
        }
        Err(e) => return Err(Error::io(&meta_path, e)),
    };
    let header: DepthHeader =
        toml::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if !(header.near > 0.0 && header.far > header.near && header.scale > 0.0) {
        return Err(Error::format(&meta_path, "need 0 < near < far and scale > 0"));
    }
    Ok(header)
}

/// Reads a depth image and its sidecar into object distances in meters.
pub fn read_depth<T: Scalar>(path: &Path) -> Result<DepthMap<T>> {
    let header = read_depth_header(path)?;
    let img: Image<T> = read_image(path, Gamma::Linear)?;
    let values = img.channel(0);
    let (w, h) = (img.width(), img.height());
    let wrap = |e: Error| Error::format(path, e.to_string());
    match header.encoding {
        DepthEncoding::LinearMeters => {
            let s = T::lit(header.scale);
            DepthMap::new(w, h, values.iter().map(|&v| v * s).collect()).map_err(wrap)
        }
        DepthEncoding::Zbuffer => {
            let v: Vec<T> = match header.v_convention {
                VConvention::NearZero => values.to_vec(),
                VConvention::FarZero => values.iter().map(|&v| T::one() - v).collect(),
            };
            linearize_zbuffer(w, h, &v, T::lit(header.near), T::lit(header.far)).map_err(wrap)
        }
    }
}

/// Writes a depth image (PFM or PNG) together with its sidecar.
pub fn write_depth<T: Scalar>(path: &Path, values: &Image<T>, header: &DepthHeader) -> Result<()> {
    let meta = toml::to_string(header)
        .map_err(|e| Error::InvalidParameter(format!("depth header: {e}")))?;
    let bytes = encode_image(path, values, RasterOptions::default())?;
    fsutil::write_atomic_group(&[
        (path.to_path_buf(), bytes),
        (depth_sidecar_path(path), meta.into_bytes()),
    ])
}
