//! Frame, tensor and velocity-field persistence.
//!
//! Formats:
//! * binary PGM (`P5`, maxval 255 or 65535) for frames and masks;
//! * the `LFDT` tensor container: magic `LFDT`, `u16` version (1), `u8` dtype
//!   (0 = `f32`), `u8` rank, `rank` × `u32` dims, then the row-major payload,
//!   all little-endian;
//! * velocity CSV tables and PPM arrow overlays, each with a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::Image;
use crate::lft::GridSpec;
use crate::phase_motion::VelocityField;

/// Grayscale frame, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        ensure!(
            pixels.len() == height * width,
            Shape,
            "frame {}x{} needs {} pixels, got {}",
            height,
            width,
            height * width,
            pixels.len()
        );
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation(format!(
                "pixel {} = {} outside [0, 1]",
                i, pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    /// Converts a working image, clamping to `[0, 1]`.
    pub fn from_image(img: &Image) -> Self {
        Self {
            height: img.rows(),
            width: img.cols(),
            pixels: img.data().iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(
            self.height,
            self.width,
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
        .expect("frame invariant guarantees matching length")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * self.width + c]
    }
}

/// Ordered frames of one clip; the first `seed_count` are observed seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    seed_count: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, seed_count: usize) -> Result<Self> {
        ensure!(seed_count >= 2, Validation, "seed_count must be >= 2, got {}", seed_count);
        ensure!(
            seed_count <= frames.len(),
            Validation,
            "seed_count {} exceeds {} frames",
            seed_count,
            frames.len()
        );
        let (h, w) = (frames[0].height, frames[0].width);
        ensure!(
            frames.iter().all(|f| f.height == h && f.width == w),
            Shape,
            "all frames of a sequence must be {}x{}",
            h,
            w
        );
        Ok(Self { frames, seed_count })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn seed_count(&self) -> usize {
        self.seed_count
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frames[0].height, self.frames[0].width)
    }

    pub fn images(&self) -> Vec<Image> {
        self.frames.iter().map(Frame::to_image).collect()
    }
}

// ---------------------------------------------------------------------------
// PGM

/// Encodes a frame as binary PGM. Values are quantized with round-half-up.
pub fn encode_pgm(frame: &Frame, maxval: u16) -> Result<Vec<u8>> {
    ensure!(
        maxval == 255 || maxval == 65535,
        Validation,
        "unsupported PGM maxval {}",
        maxval
    );
    let mut out = format!("P5\n{} {}\n{}\n", frame.width, frame.height, maxval).into_bytes();
    let scale = maxval as f64;
    for &p in &frame.pixels {
        let q = (p as f64 * scale + 0.5).floor().clamp(0.0, scale) as u16;
        if maxval == 255 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn write_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_pgm(frame, 255)?)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    /// Returns the parsed value and the byte offset where it starts.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format {
                offset: start,
                message: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::Format {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format {
            offset: 0,
            message: "missing P5 magic".into(),
        });
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Format {
            offset: maxval_at,
            message: format!("maxval {maxval} not in {{255, 65535}}"),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::Format {
            offset: cur.pos,
            message: "missing whitespace after maxval".into(),
        });
    }
    let data_start = cur.pos + 1;
    let sample = if maxval == 255 { 1 } else { 2 };
    let need = width * height * sample;
    let have = bytes.len() - data_start;
    if have < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated payload: expected {need} bytes, found {have}"),
        });
    }
    let raster = &bytes[data_start..data_start + need];
    let scale = maxval as f32;
    let pixels = if sample == 1 {
        raster.iter().map(|&b| b as f32 / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale)
            .collect()
    };
    Frame::new(height, width, pixels)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

// ---------------------------------------------------------------------------
// LFDT tensors

const TENSOR_MAGIC: &[u8; 4] = b"LFDT";
const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
        }
    }

    fn size(self) -> usize {
        4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dtype: DType,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        ensure!(
            n == data.len(),
            Shape,
            "dims {:?} need {} elements, got {}",
            dims,
            n,
            data.len()
        );
        ensure!(dims.len() <= u8::MAX as usize, Validation, "rank {} too large", dims.len());
        Ok(Self {
            dtype: DType::F32,
            dims,
            data,
        })
    }

    pub fn from_f64(dims: Vec<u32>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn encode_tensor(t: &TensorFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(t.dtype.code());
    out.push(t.dims.len() as u8);
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorFile> {
    let fmt = |offset: usize, message: String| Error::Format { offset, message };
    if bytes.len() < 8 {
        return Err(fmt(bytes.len(), "header shorter than 8 bytes".into()));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(fmt(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let dtype = match bytes[6] {
        0 => DType::F32,
        other => return Err(fmt(6, format!("unsupported dtype {other}"))),
    };
    let rank = bytes[7] as usize;
    let dims_end = 8 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(fmt(bytes.len(), format!("truncated dims: rank {rank}")));
    }
    let dims: Vec<u32> = bytes[8..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| fmt(8, "dims overflow".into()))?;
    let payload = &bytes[dims_end..];
    let expected = count * dtype.size();
    if payload.len() != expected {
        return Err(fmt(
            dims_end,
            format!("payload length {} != {} expected", payload.len(), expected),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(TensorFile { dtype, dims, data })
}

pub fn write_tensor(t: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

// ---------------------------------------------------------------------------
// Velocity artifacts

/// Run manifest written next to CLI outputs and velocity overlays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub grid: Option<GridSpec>,
    pub window: Option<serde_json::Value>,
    pub paths: Vec<String>,
    pub seed: Option<u64>,
    pub arrow_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn velocity_csv(vf: &VelocityField) -> String {
    let mut out = String::from("row,col,vx,vy,var_x,var_y\n");
    for r in 0..vf.rows() {
        for c in 0..vf.cols() {
            let i = r * vf.cols() + c;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r, c, vf.vx[i], vf.vy[i], vf.var_x[i], vf.var_y[i]
            ));
        }
    }
    out
}

/// Renders `frame` as RGB with one red Bresenham segment per cell from the
/// cell center to center + `arrow_scale`·v. Anchors falling outside the frame
/// are skipped.
pub fn velocity_overlay(vf: &VelocityField, frame: &Frame, arrow_scale: f64) -> Vec<[u8; 3]> {
    let (h, w) = (frame.height as i64, frame.width as i64);
    let mut rgb: Vec<[u8; 3]> = frame
        .pixels
        .iter()
        .map(|&p| {
            let g = (p as f64 * 255.0 + 0.5).floor() as u8;
            [g, g, g]
        })
        .collect();
    let grid = vf.grid;
    for r in 0..vf.rows() {
        for c in 0..vf.cols() {
            let (cy, cx) = grid.cell_center(r, c);
            if cy < 0 || cx < 0 || cy >= h || cx >= w {
                continue;
            }
            let i = r * vf.cols() + c;
            let ex = cx + (vf.vx[i] * arrow_scale).round() as i64;
            let ey = cy + (vf.vy[i] * arrow_scale).round() as i64;
            for (x, y) in bresenham(cx, cy, ex, ey) {
                if x >= 0 && y >= 0 && x < w && y < h {
                    rgb[(y * w + x) as usize] = [255, 0, 0];
                }
            }
        }
    }
    rgb
}

fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut pts = Vec::new();
    loop {
        pts.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    pts
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    for px in rgb {
        out.extend_from_slice(px);
    }
    out
}

#[derive(Debug, Clone)]
pub struct VelocityArtifactPaths {
    pub csv: PathBuf,
    pub overlay: PathBuf,
    pub manifest: PathBuf,
}

/// Writes the velocity CSV, the arrow overlay (PPM) and a sibling manifest
/// recording the arrow scale.
pub fn write_velocity_artifacts(
    vf: &VelocityField,
    frame: &Frame,
    paths: &VelocityArtifactPaths,
    arrow_scale: f64,
    window: Option<serde_json::Value>,
) -> Result<()> {
    let g = vf.grid;
    ensure!(
        g.height == frame.height && g.width == frame.width,
        Shape,
        "velocity grid is for {}x{} frames, frame is {}x{}",
        g.height,
        g.width,
        frame.height,
        frame.width
    );
    write_bytes(&paths.csv, velocity_csv(vf).as_bytes())?;
    let rgb = velocity_overlay(vf, frame, arrow_scale);
    write_bytes(&paths.overlay, &encode_ppm(frame.width, frame.height, &rgb))?;
    let manifest = RunManifest {
        grid: Some(g),
        window,
        paths: vec![
            paths.csv.display().to_string(),
            paths.overlay.display().to_string(),
        ],
        seed: None,
        arrow_scale: Some(arrow_scale),
        config: serde_json::Value::Null,
    };
    write_json(&manifest, &paths.manifest)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
