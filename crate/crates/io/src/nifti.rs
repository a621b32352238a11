//! Minimal NIfTI-1 single-file (`.nii`) reader for importing z-spectra.
//!
//! A volume `x * y * C` (3-D) or `x * y * 1 * C` (4-D) becomes a sequence of
//! `C` frames of `y` rows and `x` columns. Both byte orders are accepted;
//! compressed and two-file (`.hdr`/`.img`) variants are not.

use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{IoError, Result};

pub const HEADER_SIZE: usize = 348;
/// Refuse volumes with more voxels than this.
pub const MAX_VOXELS: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Self::U8,
            4 => Self::I16,
            8 => Self::I32,
            16 => Self::F32,
            64 => Self::F64,
            256 => Self::I8,
            512 => Self::U16,
            768 => Self::U32,
            _ => return None,
        })
    }

    pub fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
            Self::I8 => 256,
            Self::U16 => 512,
            Self::U32 => 768,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub little_endian: bool,
    pub dim: [i16; 8],
    pub datatype: DataType,
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

impl NiftiHeader {
    /// `(C, H, W)` of the volume read as a sequence.
    pub fn sequence_shape(&self) -> Result<(usize, usize, usize)> {
        let d = self.dim;
        let pos = |i: usize| -> Result<usize> {
            usize::try_from(d[i])
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| bad(format!("dim[{i}] = {} is not positive", d[i])))
        };
        let (w, h) = (pos(1)?, pos(2)?);
        let c = match d[0] {
            3 => pos(3)?,
            4 => {
                if pos(3)? != 1 {
                    return Err(bad("4-D volumes must have a single slice (dim[3] = 1)"));
                }
                pos(4)?
            }
            n => return Err(bad(format!("{n}-D volumes are not supported (need 3-D or 4-D)"))),
        };
        let n = c.checked_mul(h).and_then(|v| v.checked_mul(w));
        if n.is_none_or(|n| n > MAX_VOXELS) {
            return Err(bad("volume is too large"));
        }
        Ok((c, h, w))
    }
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::format("NIfTI-1 file", msg)
}

struct Reader<'a> {
    bytes: &'a [u8],
    le: bool,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[at..at + N]);
        if !self.le {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.array(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.array(at))
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(bad("gzip-compressed files are not supported; decompress first"));
    }
    let le = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => true,
        (_, 348) => false,
        _ => return Err(bad("sizeof_hdr is not 348")),
    };
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(bad("two-file (.hdr/.img) NIfTI is not supported")),
        _ => return Err(bad("missing NIfTI-1 magic")),
    }
    let r = Reader { bytes, le };
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    let code = r.i16(70);
    let datatype = DataType::from_code(code).ok_or_else(|| bad(format!("unsupported datatype {code}")))?;
    let vox = r.f32(108);
    if !(vox.is_finite() && vox >= HEADER_SIZE as f32 && vox < (1u64 << 40) as f32) {
        return Err(bad(format!("invalid vox_offset {vox}")));
    }
    let _ = r.i32(0);
    Ok(NiftiHeader {
        little_endian: le,
        dim,
        datatype,
        vox_offset: vox as usize,
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
    })
}

/// Decodes a whole `.nii` file into `(C, H, W)` frames, applying the
/// intensity scaling when `scl_slope` is set.
pub fn decode(bytes: &[u8]) -> Result<(NiftiHeader, Array3<f64>)> {
    let hdr = parse_header(bytes)?;
    let (c, h, w) = hdr.sequence_shape()?;
    let n = c * h * w;
    let size = hdr.datatype.size();
    let end = n
        .checked_mul(size)
        .and_then(|len| len.checked_add(hdr.vox_offset))
        .ok_or_else(|| bad("volume is too large"))?;
    if bytes.len() < end {
        return Err(bad(format!("file has {} bytes, volume needs {end}", bytes.len())));
    }
    let r = Reader {
        bytes,
        le: hdr.little_endian,
    };
    let (slope, inter) = if hdr.scl_slope != 0.0 && hdr.scl_slope.is_finite() && hdr.scl_inter.is_finite() {
        (hdr.scl_slope as f64, hdr.scl_inter as f64)
    } else {
        (1.0, 0.0)
    };
    let at = |i: usize| hdr.vox_offset + i * size;
    let raw = |i: usize| -> f64 {
        match hdr.datatype {
            DataType::U8 => bytes[at(i)] as f64,
            DataType::I8 => bytes[at(i)] as i8 as f64,
            DataType::I16 => r.i16(at(i)) as f64,
            DataType::U16 => u16::from_le_bytes(r.array(at(i))) as f64,
            DataType::I32 => r.i32(at(i)) as f64,
            DataType::U32 => u32::from_le_bytes(r.array(at(i))) as f64,
            DataType::F32 => r.f32(at(i)) as f64,
            DataType::F64 => f64::from_le_bytes(r.array(at(i))),
        }
    };
    // NIfTI stores x fastest, then y, then the offset axis.
    let frames = Array3::from_shape_fn((c, h, w), |(k, y, x)| raw(x + w * (y + h * k)) * slope + inter);
    Ok((hdr, frames))
}

pub fn read_nifti(path: &Path) -> Result<(NiftiHeader, Array3<f64>)> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode(&bytes)
}

/// Encodes `(C, H, W)` frames as a little-endian 4-D float32 `.nii` file.
pub fn encode_f32(frames: &Array3<f64>) -> Vec<u8> {
    let (c, h, w) = frames.dim();
    let mut hdr = vec![0u8; HEADER_SIZE + 4];
    hdr[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dim: [i16; 8] = [4, w as i16, h as i16, 1, c as i16, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        hdr[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    hdr[70..72].copy_from_slice(&DataType::F32.code().to_le_bytes());
    hdr[72..74].copy_from_slice(&32i16.to_le_bytes());
    for i in 1..4 {
        hdr[76 + 4 * i..80 + 4 * i].copy_from_slice(&1f32.to_le_bytes());
    }
    hdr[108..112].copy_from_slice(&(HEADER_SIZE as f32 + 4.0).to_le_bytes());
    hdr[344..348].copy_from_slice(b"n+1\0");
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                hdr.extend((frames[[k, y, x]] as f32).to_le_bytes());
            }
        }
    }
    hdr
}
