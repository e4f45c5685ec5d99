//! Volume container: a UTF-8 header file next to a raw little-endian payload.
//!
//! ```text
//! dims=96,96,12
//! spacing=0.5,0.5,2
//! dtype=f32
//! data=t1.raw
//! unit=normalized
//! ```
//!
//! `data` is relative to the header's directory. Voxels are stored x fastest,
//! then y, then z, with no padding. Masks use the same container with
//! `dtype=u8`.

use std::fs;
use std::path::{Path, PathBuf};

use lowdose_core::volume::{Dims, Spacing};
use lowdose_core::{Mask, Volume};

use crate::error::{AppError, AppResult, Context};

pub const MASK_UNIT: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dims: Dims,
    pub spacing: Spacing,
    pub dtype: Dtype,
    pub data: String,
    pub unit: String,
}

impl Header {
    pub fn encode(&self) -> String {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        format!(
            "dims={nx},{ny},{nz}\nspacing={sx},{sy},{sz}\ndtype={}\ndata={}\nunit={}\n",
            self.dtype.as_str(),
            self.data,
            self.unit
        )
    }

    pub fn parse(text: &str) -> AppResult<Header> {
        let (mut dims, mut spacing, mut dtype, mut data, mut unit) = (None, None, None, None, None);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
            let v = v.trim();
            match k.trim() {
                "dims" => dims = Some(parse_triple::<usize>(v, "dims")?),
                "spacing" => spacing = Some(parse_triple::<f64>(v, "spacing")?),
                "dtype" => {
                    dtype = Some(match v {
                        "f32" => Dtype::F32,
                        "u8" => Dtype::U8,
                        _ => return Err(bad(format!("unsupported dtype {v:?}"))),
                    })
                }
                "data" => data = Some(v.to_string()),
                "unit" => unit = Some(v.to_string()),
                k => return Err(bad(format!("unknown header key {k:?}"))),
            }
        }
        Ok(Header {
            dims: dims.ok_or_else(|| bad("header is missing dims"))?,
            spacing: spacing.ok_or_else(|| bad("header is missing spacing"))?,
            dtype: dtype.ok_or_else(|| bad("header is missing dtype"))?,
            data: data.ok_or_else(|| bad("header is missing data"))?,
            unit: unit.ok_or_else(|| bad("header is missing unit"))?,
        })
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Data(msg.into())
}

fn parse_triple<T: std::str::FromStr>(v: &str, key: &str) -> AppResult<[T; 3]> {
    let parts: Vec<T> = v
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(format!("bad {key} value {s:?}"))))
        .collect::<AppResult<_>>()?;
    parts.try_into().map_err(|_| bad(format!("{key} needs three values")))
}

/// Raw file written next to `header`: same stem, `.raw` extension.
pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn raw_name(header: &Path) -> AppResult<String> {
    raw_path(header)
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| AppError::Config(format!("cannot derive a raw file name from {}", header.display())))
}

fn ensure_parent(path: &Path) -> AppResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).context(dir.display()),
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> AppResult<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).context(path.display())
}

fn write_pair(path: &Path, header: &Header, payload: &[u8]) -> AppResult<()> {
    write_bytes(&raw_path(path), payload)?;
    write_bytes(path, header.encode().as_bytes())
}

fn read_pair(path: &Path, want: Dtype) -> AppResult<(Header, Vec<u8>)> {
    let text = fs::read_to_string(path).context(path.display())?;
    let header = Header::parse(&text).context(path.display())?;
    if header.dtype != want {
        return Err(bad(format!("{}: expected dtype {}, found {}", path.display(), want.as_str(), header.dtype.as_str())));
    }
    let raw = path.parent().unwrap_or(Path::new("")).join(&header.data);
    let payload = fs::read(&raw).context(raw.display())?;
    if payload.len() != header.payload_len() {
        return Err(bad(format!(
            "{}: payload has {} bytes, header implies {}",
            raw.display(),
            payload.len(),
            header.payload_len()
        )));
    }
    Ok((header, payload))
}

pub fn write_volume(path: &Path, v: &Volume) -> AppResult<()> {
    if let Some(i) = v.data().iter().position(|x| !x.is_finite()) {
        return Err(bad(format!("{}: non-finite value at voxel {i}", path.display())));
    }
    let header = Header {
        dims: v.dims(),
        spacing: v.spacing(),
        dtype: Dtype::F32,
        data: raw_name(path)?,
        unit: v.unit().to_string(),
    };
    let mut payload = Vec::with_capacity(v.len() * 4);
    for x in v.data() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    write_pair(path, &header, &payload)
}

pub fn read_volume(path: &Path) -> AppResult<Volume> {
    let (h, payload) = read_pair(path, Dtype::F32)?;
    let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(bad(format!("{}: non-finite value at voxel {i}", path.display())));
    }
    Volume::new(h.dims, h.spacing, data, h.unit).context(path.display())
}

pub fn write_mask(path: &Path, m: &Mask) -> AppResult<()> {
    let header = Header {
        dims: m.dims(),
        spacing: m.spacing(),
        dtype: Dtype::U8,
        data: raw_name(path)?,
        unit: MASK_UNIT.into(),
    };
    write_pair(path, &header, m.labels())
}

pub fn read_mask(path: &Path) -> AppResult<Mask> {
    let (h, payload) = read_pair(path, Dtype::U8)?;
    Mask::new(h.dims, h.spacing, payload).context(path.display())
}

/// 16-bit binary PGM of slice `z`. `[lo, hi]` maps linearly onto
/// `0..=65535`, values outside are clipped. Rows run along y.
pub fn encode_pgm(v: &Volume, z: usize, lo: f32, hi: f32) -> AppResult<Vec<u8>> {
    let [nx, ny, nz] = v.dims();
    if z >= nz {
        return Err(AppError::Config(format!("slice {z} out of range 0..{nz}")));
    }
    if !(hi > lo) {
        return Err(AppError::Config(format!("display window [{lo}, {hi}] is empty")));
    }
    let mut out = format!("P5\n# window linear lo={lo} hi={hi} slice={z}\n{nx} {ny}\n65535\n").into_bytes();
    for &x in v.slice(z) {
        let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        let q = (t * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}
