//! Binary tensor files: `SSMA` magic, u16 version, u8 dtype (0 = f64,
//! 1 = interleaved complex128), u8 ndim, u64 little-endian dims, then
//! row-major little-endian data.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSMA";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyArray {
    Real(ArrayD<f64>),
    Complex(ArrayD<Complex64>),
}

fn header(dtype: u8, shape: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * shape.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

pub fn encode_real(a: ArrayViewD<f64>) -> Vec<u8> {
    let mut out = header(0, a.shape());
    out.reserve(a.len() * 8);
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_complex(a: ArrayViewD<Complex64>) -> Vec<u8> {
    let mut out = header(1, a.shape());
    out.reserve(a.len() * 16);
    for v in a.iter() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<AnyArray, String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing SSMA magic".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let dtype = bytes[6];
    let ndim = bytes[7] as usize;
    let data_start = 8 + 8 * ndim;
    if bytes.len() < data_start {
        return Err("truncated header".into());
    }
    let shape: Vec<usize> = (0..ndim)
        .map(|i| {
            let b: [u8; 8] = bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes");
            u64::from_le_bytes(b) as usize
        })
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    let width = match dtype {
        0 => 8,
        1 => 16,
        other => return Err(format!("unknown dtype code {other}")),
    };
    let data = &bytes[data_start..];
    if Some(data.len()) != count.checked_mul(width) {
        return Err(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            count * width,
            data.len()
        ));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
    let arr = match dtype {
        0 => AnyArray::Real(
            ArrayD::from_shape_vec(IxDyn(&shape), data.chunks_exact(8).map(f).collect())
                .map_err(|e| e.to_string())?,
        ),
        _ => AnyArray::Complex(
            ArrayD::from_shape_vec(
                IxDyn(&shape),
                data.chunks_exact(16)
                    .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
                    .collect(),
            )
            .map_err(|e| e.to_string())?,
        ),
    };
    Ok(arr)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_real(path: &Path, a: ArrayViewD<f64>) -> Result<()> {
    write_bytes(path, &encode_real(a))
}

pub fn write_complex(path: &Path, a: ArrayViewD<Complex64>) -> Result<()> {
    write_bytes(path, &encode_complex(a))
}

pub fn read_any(path: &Path) -> Result<AnyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn read_real(path: &Path) -> Result<ArrayD<f64>> {
    match read_any(path)? {
        AnyArray::Real(a) => Ok(a),
        AnyArray::Complex(_) => Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected a real array, found complex".into(),
        }),
    }
}

pub fn read_complex(path: &Path) -> Result<ArrayD<Complex64>> {
    match read_any(path)? {
        AnyArray::Complex(a) => Ok(a),
        AnyArray::Real(_) => Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected a complex array, found real".into(),
        }),
    }
}
