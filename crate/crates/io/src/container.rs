//! Sequence and map containers: a JSON sidecar next to raw little-endian
//! `f32` payload files.
//!
//! For a sidecar `scan.json` the frames live in `scan.raw` in offset-major,
//! row-major order (`C x H x W` values). Optional `scan.m0.raw` holds an
//! `H x W` f32 plane and `scan.mask.raw` an `H x W` plane of 0/1 bytes.
//! Values are stored as `f32`, so `read(write(x))` is bit-exact for any `x`
//! that came from a container.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bald_core::SpectralSequence;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};

pub const FORMAT: &str = "bald-container";
pub const FORMAT_VERSION: u32 = 1;
/// Upper bound on `C * H * W`, to refuse absurd sidecars before allocating.
pub const MAX_ELEMENTS: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Sequence,
    Maps,
}

/// Everything needed to reproduce a container: the command, every flag and
/// seed, and the tool version. Deliberately has no timestamps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    /// File name of the noise curve written alongside, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_curve: Option<String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "bald".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.params.insert(key.into(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub kind: ContainerKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets_ppm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
    pub dtype: String,
    pub endianness: String,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub provenance: Provenance,
}

impl Sidecar {
    /// Parses and validates a sidecar document.
    pub fn parse(text: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(text).map_err(|e| IoError::format("sidecar", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IoError::format("sidecar", m));
        if self.format != FORMAT {
            return bad(format!("format is '{}', expected '{FORMAT}'", self.format));
        }
        if self.version != FORMAT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.dtype != "f32" || self.endianness != "little" {
            return bad(format!(
                "unsupported dtype/endianness {}/{}",
                self.dtype, self.endianness
            ));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("dimensions must be positive".into());
        }
        let n = self.element_count();
        if n.is_none_or(|n| n > MAX_ELEMENTS) {
            return bad(format!(
                "{}x{}x{} exceeds the size limit",
                self.channels, self.height, self.width
            ));
        }
        match self.kind {
            ContainerKind::Sequence => {
                if self.offsets_ppm.len() != self.channels {
                    return bad(format!(
                        "{} offsets for {} channels",
                        self.offsets_ppm.len(),
                        self.channels
                    ));
                }
                if !self.names.is_empty() {
                    return bad("sequence containers carry offsets, not names".into());
                }
            }
            ContainerKind::Maps => {
                if self.names.len() != self.channels {
                    return bad(format!("{} names for {} maps", self.names.len(), self.channels));
                }
                if !self.offsets_ppm.is_empty() || self.m0.is_some() {
                    return bad("map containers carry names only".into());
                }
            }
        }
        for name in std::iter::once(&self.payload).chain(&self.m0).chain(&self.mask) {
            check_file_name(name)?;
        }
        Ok(())
    }

    pub fn element_count(&self) -> Option<usize> {
        self.channels.checked_mul(self.height)?.checked_mul(self.width)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sidecar serializes");
        s.push('\n');
        s
    }
}

/// Payload file names must be plain names in the sidecar's directory.
fn check_file_name(name: &str) -> Result<()> {
    let ok =
        !name.is_empty() && name != "." && name != ".." && !name.contains(['/', '\\', '\0']) && !name.contains(':');
    if !ok {
        return Err(IoError::format(
            "sidecar",
            format!("invalid payload file name '{name}'"),
        ));
    }
    Ok(())
}

/// In-memory contents of a container.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Sequence(SpectralSequence),
    /// Named `H x W` planes, stacked along the first axis.
    Maps {
        names: Vec<String>,
        data: Array3<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub payload: Payload,
    pub provenance: Provenance,
}

impl Container {
    pub fn sequence(seq: SpectralSequence, provenance: Provenance) -> Self {
        Self {
            payload: Payload::Sequence(seq),
            provenance,
        }
    }

    pub fn maps(names: Vec<String>, maps: &[Array2<f64>], provenance: Provenance) -> Result<Self> {
        if names.len() != maps.len() || maps.is_empty() {
            return Err(IoError::format("maps", "need one name per map and at least one map"));
        }
        let (h, w) = maps[0].dim();
        if maps.iter().any(|m| m.dim() != (h, w)) {
            return Err(IoError::format("maps", "maps differ in size"));
        }
        let data = Array3::from_shape_fn((maps.len(), h, w), |(k, r, c)| maps[k][[r, c]]);
        Ok(Self {
            payload: Payload::Maps { names, data },
            provenance,
        })
    }

    pub fn as_sequence(&self) -> Option<&SpectralSequence> {
        match &self.payload {
            Payload::Sequence(s) => Some(s),
            Payload::Maps { .. } => None,
        }
    }

    pub fn into_sequence(self) -> Result<SpectralSequence> {
        match self.payload {
            Payload::Sequence(s) => Ok(s),
            Payload::Maps { .. } => Err(IoError::format("container", "expected a sequence, found maps")),
        }
    }

    /// A named map, or `None` for sequences and unknown names.
    pub fn map(&self, name: &str) -> Option<Array2<f64>> {
        match &self.payload {
            Payload::Maps { names, data } => names
                .iter()
                .position(|n| n == name)
                .map(|i| data.index_axis(ndarray::Axis(0), i).to_owned()),
            Payload::Sequence(_) => None,
        }
    }

    /// Builds the sidecar for files named after `stem`.
    pub fn sidecar(&self, stem: &str) -> Sidecar {
        let (kind, (c, h, w), offsets_ppm, names, m0, mask) = match &self.payload {
            Payload::Sequence(s) => (
                ContainerKind::Sequence,
                s.frames().dim(),
                s.offsets_ppm().to_vec(),
                Vec::new(),
                s.m0().map(|_| format!("{stem}.m0.raw")),
                s.mask().map(|_| format!("{stem}.mask.raw")),
            ),
            Payload::Maps { names, data } => (ContainerKind::Maps, data.dim(), Vec::new(), names.clone(), None, None),
        };
        Sidecar {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            kind,
            channels: c,
            height: h,
            width: w,
            offsets_ppm,
            names,
            dtype: "f32".into(),
            endianness: "little".into(),
            payload: format!("{stem}.raw"),
            m0,
            mask,
            provenance: self.provenance.clone(),
        }
    }

    /// Reassembles a container from a validated sidecar and raw payload bytes.
    pub fn from_parts(sidecar: &Sidecar, payload: &[u8], m0: Option<&[u8]>, mask: Option<&[u8]>) -> Result<Self> {
        sidecar.validate()?;
        let (c, h, w) = (sidecar.channels, sidecar.height, sidecar.width);
        let values = decode_f32_le(payload, c * h * w)?;
        let data = Array3::from_shape_vec((c, h, w), values).expect("length checked");
        let payload = match sidecar.kind {
            ContainerKind::Maps => Payload::Maps {
                names: sidecar.names.clone(),
                data,
            },
            ContainerKind::Sequence => {
                let mut seq = SpectralSequence::new(sidecar.offsets_ppm.clone(), data)?;
                match (&sidecar.m0, m0) {
                    (Some(_), Some(bytes)) => {
                        let v = decode_f32_le(bytes, h * w)?;
                        seq = seq.with_m0(Array2::from_shape_vec((h, w), v).expect("length checked"))?;
                    }
                    (None, None) => {}
                    _ => {
                        return Err(IoError::format(
                            "container",
                            "M0 payload presence disagrees with sidecar",
                        ))
                    }
                }
                match (&sidecar.mask, mask) {
                    (Some(_), Some(bytes)) => {
                        let v = decode_mask(bytes, h * w)?;
                        seq = seq.with_mask(Array2::from_shape_vec((h, w), v).expect("length checked"))?;
                    }
                    (None, None) => {}
                    _ => {
                        return Err(IoError::format(
                            "container",
                            "mask payload presence disagrees with sidecar",
                        ))
                    }
                }
                Payload::Sequence(seq)
            }
        };
        Ok(Self {
            payload,
            provenance: sidecar.provenance.clone(),
        })
    }
}

/// Decodes exactly `n` little-endian `f32` values.
pub fn decode_f32_le(bytes: &[u8], n: usize) -> Result<Vec<f64>> {
    if n.checked_mul(4) != Some(bytes.len()) {
        return Err(IoError::format(
            "payload",
            format!(
                "expected {n} f32 values ({} bytes), found {} bytes",
                n.saturating_mul(4),
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

pub fn encode_f32_le<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<u8> {
    values.into_iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Decodes exactly `n` mask bytes, each 0 or 1.
pub fn decode_mask(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    if bytes.len() != n {
        return Err(IoError::format(
            "mask payload",
            format!("expected {n} bytes, found {}", bytes.len()),
        ));
    }
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(IoError::format("mask payload", format!("byte {other} is not 0 or 1"))),
        })
        .collect()
}

fn stem_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| IoError::format("container path", format!("{} has no file stem", path.display())))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Writes the sidecar at `path` and the payload files next to it.
pub fn write_container(path: &Path, container: &Container) -> Result<()> {
    let stem = stem_of(path)?;
    let sidecar = container.sidecar(&stem);
    match &container.payload {
        Payload::Sequence(seq) => {
            write_file(&sibling(path, &sidecar.payload), &encode_f32_le(seq.frames().iter()))?;
            if let (Some(name), Some(m0)) = (&sidecar.m0, seq.m0()) {
                write_file(&sibling(path, name), &encode_f32_le(m0.iter()))?;
            }
            if let (Some(name), Some(mask)) = (&sidecar.mask, seq.mask()) {
                let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
                write_file(&sibling(path, name), &bytes)?;
            }
        }
        Payload::Maps { data, .. } => {
            write_file(&sibling(path, &sidecar.payload), &encode_f32_le(data.iter()))?;
        }
    }
    write_file(path, sidecar.to_json().as_bytes())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let sidecar = Sidecar::parse(&text)?;
    let payload = read_file(&sibling(path, &sidecar.payload))?;
    let m0 = sidecar.m0.as_ref().map(|n| read_file(&sibling(path, n))).transpose()?;
    let mask = sidecar
        .mask
        .as_ref()
        .map(|n| read_file(&sibling(path, n)))
        .transpose()?;
    Container::from_parts(&sidecar, &payload, m0.as_deref(), mask.as_deref())
}
