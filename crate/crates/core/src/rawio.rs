//! 16-bit raw frame I/O and frame-stack statistics.
//!
//! Frames are stored as binary PGM (`P5`, maxval 65535, big-endian samples)
//! with a JSON sidecar `<name>.pgm.json` carrying [`SensorMeta`]. Stacks are
//! directories of such pairs plus a `stack.json` naming the stack kind.
//! Stored values are raw DN; black level is only subtracted by the statistics
//! helpers.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Cfa {
    Mono,
    Rggb,
}

/// Acquisition metadata shared by every frame of a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub iso: i64,
    pub exposure_s: f64,
    pub black_level: u16,
    pub white_level: u16,
    pub cfa: Cfa,
    pub camera_id: String,
}

impl SensorMeta {
    pub fn validate(&self) -> Result<()> {
        if self.black_level >= self.white_level {
            return Err(Error::Metadata(format!(
                "black_level {} must be below white_level {}",
                self.black_level, self.white_level
            )));
        }
        if !(self.exposure_s.is_finite() && self.exposure_s > 0.0) {
            return Err(Error::Metadata(format!(
                "exposure_s must be positive, got {}",
                self.exposure_s
            )));
        }
        Ok(())
    }

    /// Pedestal-relative dynamic range, `white_level − black_level`.
    pub fn range(&self) -> f64 {
        f64::from(self.white_level) - f64::from(self.black_level)
    }
}

/// One sensor readout in DN.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
    pub meta: SensorMeta,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, data: Vec<u16>, meta: SensorMeta) -> Result<Self> {
        let frame = RawFrame {
            width,
            height,
            data,
            meta,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if self.data.len() != self.width * self.height {
            return Err(Error::shape(
                format!("{} samples", self.width * self.height),
                self.data.len(),
            ));
        }
        if let Some((i, &v)) = self
            .data
            .iter()
            .enumerate()
            .find(|(_, &v)| v > self.meta.white_level)
        {
            return Err(Error::Invalid(format!(
                "sample {i} = {v} exceeds white_level {}",
                self.meta.white_level
            )));
        }
        Ok(())
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Values with the black level removed, as signed reals.
    pub fn to_signal(&self) -> Grid {
        let black = f64::from(self.meta.black_level);
        let data = self.data.iter().map(|&v| f64::from(v) - black).collect();
        Grid::from_vec(self.width, self.height, data).expect("frame dims are consistent")
    }

    pub fn center_crop(&self, size: usize) -> Result<RawFrame> {
        let (x0, y0) = crop_origin(self.width, self.height, size)?;
        let mut data = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + size]);
        }
        Ok(RawFrame {
            width: size,
            height: size,
            data,
            meta: self.meta.clone(),
        })
    }
}

/// Origin of the centered `size × size` window; odd remainders drop the extra
/// row/column at the bottom/right.
fn crop_origin(width: usize, height: usize, size: usize) -> Result<(usize, usize)> {
    if size == 0 || size > width.min(height) {
        return Err(Error::Invalid(format!(
            "crop size {size} exceeds frame {width}x{height}"
        )));
    }
    Ok(((width - size) / 2, (height - size) / 2))
}

/// Center crop for a real-valued grid, same convention as [`RawFrame::center_crop`].
pub fn center_crop_grid(grid: &Grid, size: usize) -> Result<Grid> {
    let (x0, y0) = crop_origin(grid.width(), grid.height(), size)?;
    grid.crop(x0, y0, size, size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StackKind {
    Flat,
    Bias,
    Dark,
}

/// Pre-aligned frames captured under one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<RawFrame>,
    pub kind: StackKind,
}

impl FrameStack {
    pub fn new(frames: Vec<RawFrame>, kind: StackKind) -> Result<Self> {
        let stack = FrameStack { frames, kind };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::Invalid("empty frame stack".into()));
        };
        for (i, f) in self.frames.iter().enumerate().skip(1) {
            if f.width != first.width || f.height != first.height {
                return Err(Error::shape(
                    format!("{}x{}", first.width, first.height),
                    format!("{}x{} at frame {i}", f.width, f.height),
                ));
            }
            if f.meta != first.meta {
                return Err(Error::Metadata(format!(
                    "frame {i} metadata differs from frame 0"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.width, f.height))
            .unwrap_or((0, 0))
    }

    pub fn meta(&self) -> Option<&SensorMeta> {
        self.frames.first().map(|f| &f.meta)
    }

    pub fn center_crop(&self, size: usize) -> Result<FrameStack> {
        Ok(FrameStack {
            frames: self
                .frames
                .iter()
                .map(|f| f.center_crop(size))
                .collect::<Result<_>>()?,
            kind: self.kind,
        })
    }

    pub fn require_kind(&self, kind: StackKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Invalid(format!(
                "expected a {kind:?} stack, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Per-pixel temporal mean and unbiased variance of black-level-subtracted
/// values, summed in frame order.
fn pixel_moments(stack: &FrameStack, want_var: bool) -> Result<(Grid, Option<Grid>)> {
    stack.validate()?;
    let n = stack.len();
    if want_var && n < 2 {
        return Err(Error::Invalid(format!(
            "variance needs at least 2 frames, stack has {n}"
        )));
    }
    let (width, height) = stack.dims();
    let black = f64::from(stack.frames[0].meta.black_level);
    let moments: Vec<(f64, f64)> = (0..width * height)
        .into_par_iter()
        .map(|p| {
            let mean = stack
                .frames
                .iter()
                .map(|f| f64::from(f.data[p]) - black)
                .sum::<f64>()
                / n as f64;
            let var = if want_var {
                stack
                    .frames
                    .iter()
                    .map(|f| {
                        let d = f64::from(f.data[p]) - black - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / (n - 1) as f64
            } else {
                0.0
            };
            (mean, var)
        })
        .collect();
    let mean = Grid::from_vec(width, height, moments.iter().map(|m| m.0).collect())?;
    let var = want_var
        .then(|| Grid::from_vec(width, height, moments.iter().map(|m| m.1).collect()))
        .transpose()?;
    Ok((mean, var))
}

pub fn pixel_mean_map(stack: &FrameStack) -> Result<Grid> {
    Ok(pixel_moments(stack, false)?.0)
}

pub fn pixel_var_map(stack: &FrameStack) -> Result<Grid> {
    Ok(pixel_moments(stack, true)?.1.expect("variance requested"))
}

/// Mean and variance maps in one pass over the stack.
pub fn pixel_mean_var_maps(stack: &FrameStack) -> Result<(Grid, Grid)> {
    let (mean, var) = pixel_moments(stack, true)?;
    Ok((mean, var.expect("variance requested")))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Parses a binary 16-bit PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Pgm("truncated header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        return Err(Error::Pgm(format!(
            "bad magic {:?}, expected P5",
            String::from_utf8_lossy(fields[0])
        )));
    }
    let parse = |f: &[u8], what: &str| -> Result<u32> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| Error::Pgm(format!("bad {what} {:?}", String::from_utf8_lossy(f))))
    };
    let width = parse(fields[1], "width")? as usize;
    let height = parse(fields[2], "height")? as usize;
    let maxval = parse(fields[3], "maxval")?;
    if maxval != 65535 {
        return Err(Error::UnsupportedBitDepth(maxval));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Pgm("missing separator after maxval".into())),
    }
    let payload = &bytes[pos..];
    let expected = width * height * 2;
    if payload.len() != expected {
        return Err(Error::Pgm(format!(
            "payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((width, height, data))
}

pub fn encode_pgm(width: usize, height: usize, data: &[u16]) -> Vec<u8> {
    let header = format!("P5\n{width} {height}\n65535\n");
    let mut out = Vec::with_capacity(header.len() + data.len() * 2);
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<RawFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, data) = decode_pgm(&bytes).map_err(|e| match e {
        Error::Pgm(msg) => Error::Pgm(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::Metadata(format!("sidecar {}: {e}", side.display())))?;
    let meta: SensorMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Metadata(format!("sidecar {}: {e}", side.display())))?;
    RawFrame::new(width, height, data, meta)
}

pub fn save_frame(frame: &RawFrame, path: impl AsRef<Path>) -> Result<()> {
    save_frame_with_extra(frame, path, None)
}

/// Like [`save_frame`], with extra keys merged into the sidecar object.
pub fn save_frame_with_extra(
    frame: &RawFrame,
    path: impl AsRef<Path>,
    extra: Option<&serde_json::Map<String, serde_json::Value>>,
) -> Result<()> {
    let path = path.as_ref();
    frame.validate()?;
    fs::write(path, encode_pgm(frame.width, frame.height, &frame.data))
        .map_err(|e| Error::io(path, e))?;
    let mut value = serde_json::to_value(&frame.meta).expect("metadata serializes");
    if let (Some(extra), Some(obj)) = (extra, value.as_object_mut()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&value).expect("json value serializes");
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

/// Reads the raw sidecar object, including any extra keys.
pub fn load_sidecar(path: impl AsRef<Path>) -> Result<serde_json::Value> {
    let side = sidecar_path(path.as_ref());
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", side.display())))
}

#[derive(Serialize, Deserialize)]
struct StackManifest {
    kind: StackKind,
}

/// Sorted `.pgm` files in a directory.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_stack(dir: impl AsRef<Path>) -> Result<FrameStack> {
    let dir = dir.as_ref();
    let manifest = dir.join("stack.json");
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let m: StackManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Metadata(format!("{}: {e}", manifest.display())))?;
    let frames = list_frames(dir)?
        .into_iter()
        .map(load_frame)
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames, m.kind)
}

pub fn save_stack(stack: &FrameStack, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("stack.json");
    let text = serde_json::to_string(&StackManifest { kind: stack.kind }).expect("serializes");
    fs::write(&manifest, text + "\n").map_err(|e| Error::io(&manifest, e))?;
    for (i, f) in stack.frames.iter().enumerate() {
        save_frame(f, dir.join(format!("frame_{i:05}.pgm")))?;
    }
    Ok(())
}
