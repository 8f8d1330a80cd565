//! The IHIC binary array container and its JSON sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "IHIC"
//! version u16      1
//! dtype   u8       1 = f32, 2 = f64
//! ndim    u8       1, 2 or 3
//! dims    ndim × u32
//! payload row-major, last axis fastest
//! ```
//!
//! Cubes are written with a sidecar `<basename>.json` recording the axis kind
//! and the sampling grids, so a cube file is self-describing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{AxisKind, Cube, InstrumentProfile};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"IHIC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, FormatError> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(FormatError::Dtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Serializes an array. Every entry must be finite.
pub fn encode_array(array: &ArrayD<f64>, dtype: Dtype) -> Result<Vec<u8>, FormatError> {
    let ndim = array.ndim();
    if !(1..=3).contains(&ndim) {
        return Err(FormatError::Ndim(ndim as u8));
    }
    let dims: Vec<u32> = array
        .shape()
        .iter()
        .map(|&d| u32::try_from(d))
        .collect::<Result<_, _>>()
        .map_err(|_| FormatError::DimOverflow {
            dims: array.shape().iter().map(|&d| d as u32).collect(),
        })?;
    let mut out = Vec::with_capacity(8 + 4 * ndim + array.len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(ndim as u8);
    for d in &dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (index, &v) in array.iter().enumerate() {
        if !v.is_finite() {
            return Err(FormatError::NonFinite { index });
        }
        match dtype {
            Dtype::F32 => {
                let narrowed = v as f32;
                if !narrowed.is_finite() {
                    return Err(FormatError::NonFinite { index });
                }
                out.extend_from_slice(&narrowed.to_le_bytes());
            }
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

fn take<'a>(
    bytes: &'a [u8],
    pos: &mut usize,
    n: usize,
    field: &'static str,
) -> Result<&'a [u8], FormatError> {
    let available = bytes.len().saturating_sub(*pos);
    if available < n {
        return Err(FormatError::Truncated {
            field,
            needed: n,
            got: available,
        });
    }
    let slice = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(slice)
}

/// Parses a complete IHIC buffer. Trailing bytes are an error.
pub fn decode_array(bytes: &[u8]) -> Result<(ArrayD<f64>, Dtype), FormatError> {
    let (array, dtype, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FormatError::Trailing(bytes.len() - used));
    }
    Ok((array, dtype))
}

/// Parses one IHIC buffer at the start of `bytes`, returning the bytes consumed.
pub(crate) fn decode_prefix(bytes: &[u8]) -> Result<(ArrayD<f64>, Dtype, usize), FormatError> {
    let mut pos = 0;
    let magic: [u8; 4] = take(bytes, &mut pos, 4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version {
            expected: VERSION,
            found: version,
        });
    }
    let dtype = Dtype::from_code(take(bytes, &mut pos, 1, "dtype")?[0])?;
    let ndim = take(bytes, &mut pos, 1, "ndim")?[0];
    if !(1..=3).contains(&ndim) {
        return Err(FormatError::Ndim(ndim));
    }
    let raw_dims = take(bytes, &mut pos, 4 * ndim as usize, "dims")?;
    let dims: Vec<u32> = raw_dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
    let Some((count, payload_len)) = count else {
        return Err(FormatError::DimOverflow { dims });
    };
    let payload = take(bytes, &mut pos, payload_len, "payload")?;
    let mut values = Vec::with_capacity(count);
    match dtype {
        Dtype::F32 => values.extend(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
        ),
        Dtype::F64 => values.extend(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        ),
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    let array = ArrayD::from_shape_vec(IxDyn(&shape), values).expect("length checked");
    Ok((array, dtype, pos))
}

pub fn write_array(path: &Path, array: &ArrayD<f64>, dtype: Dtype) -> Result<()> {
    let bytes = encode_array(array, dtype).map_err(|source| Error::Format {
        context: path.display().to_string(),
        source,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
        .map(|(a, _)| a)
        .map_err(|source| Error::Format {
            context: path.display().to_string(),
            source,
        })
}

/// Contents of the JSON sidecar written next to every cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub axis_kind: AxisKind,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub lambda_nm: Vec<f64>,
    pub nu_per_nm: Vec<f64>,
    pub opd_nm: Vec<f64>,
    pub center_index: usize,
}

impl Sidecar {
    fn for_cube(cube: &Cube) -> Self {
        let (h, w, c) = cube.dim();
        let p = cube.profile();
        Self {
            axis_kind: cube.axis(),
            h,
            w,
            c,
            lambda_nm: p.lambda_grid().to_vec(),
            nu_per_nm: p.nu_grid().to_vec(),
            opd_nm: p.opd_grid().to_vec(),
            center_index: p.center(),
        }
    }

    pub fn profile(&self) -> Result<InstrumentProfile> {
        InstrumentProfile::from_grids(
            self.h,
            self.w,
            self.lambda_nm.clone(),
            self.nu_per_nm.clone(),
            self.opd_nm.clone(),
            self.center_index,
        )
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `cube` to `path` plus its sidecar. With [`Dtype::F64`] the round
/// trip is bit-exact; with [`Dtype::F32`] it is exact for values that are
/// already representable in single precision.
pub fn write_cube(cube: &Cube, path: &Path, dtype: Dtype) -> Result<()> {
    write_array(path, &cube.data().clone().into_dyn(), dtype)?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&Sidecar::for_cube(cube)).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::json(&side, e))
}

pub fn read_cube(path: &Path) -> Result<Cube> {
    let sidecar = read_sidecar(path)?;
    let profile = Arc::new(sidecar.profile()?);
    let array = read_array(path)?;
    let ndim = array.ndim();
    let array = array
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| Error::Format {
            context: path.display().to_string(),
            source: FormatError::Rank {
                expected: 3,
                found: ndim,
            },
        })?;
    let expected = [sidecar.h, sidecar.w, sidecar.c];
    if array.shape() != expected {
        return Err(Error::shape(
            format!("{} against its sidecar", path.display()),
            &expected,
            array.shape(),
        ));
    }
    Cube::new(array, sidecar.axis_kind, profile)
}
