//! Flat little-endian arrays with a JSON sidecar.
//!
//! An array named `base` is stored as `base.bin` (raw values, row-major) and
//! `base.json`:
//!
//! ```json
//! {"shape": [64, 16, 2, 2], "dtype": "complex64", "axes": ["time", "subcarrier", "rx", "tx"]}
//! ```
//!
//! `complex64` values are interleaved `float32` (re, im) pairs.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{invalid, io_err, json_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
    Complex64,
}

impl DType {
    fn element_bytes(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 | DType::Complex64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub axes: Vec<String>,
}

impl ArrayHeader {
    pub fn new(shape: &[usize], dtype: DType, axes: &[&str]) -> Self {
        Self {
            shape: shape.to_vec(),
            dtype,
            axes: axes.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.axes.len() != self.shape.len() {
            return Err(invalid(format!(
                "{} axis names for a rank-{} array",
                self.axes.len(),
                self.shape.len()
            )));
        }
        Ok(())
    }
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

fn write_pair(base: &Path, header: &ArrayHeader, bytes: Vec<u8>) -> Result<()> {
    header.validate()?;
    let (bin, json) = paths(base);
    if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(&bin, bytes).map_err(io_err(&bin))?;
    let text = serde_json::to_string_pretty(header).map_err(json_err(&json))?;
    fs::write(&json, text).map_err(io_err(&json))
}

/// Writes real values as `float32` or `float64`.
pub fn write_real(base: &Path, header: &ArrayHeader, data: &[f64]) -> Result<()> {
    if header.element_count() != data.len() {
        return Err(invalid(format!(
            "shape {:?} holds {} values, got {}",
            header.shape,
            header.element_count(),
            data.len()
        )));
    }
    let bytes = match header.dtype {
        DType::Float32 => data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        DType::Float64 => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::Complex64 => return Err(invalid("write_real with complex dtype")),
    };
    write_pair(base, header, bytes)
}

/// Writes complex values as interleaved `float32` pairs.
pub fn write_complex(base: &Path, header: &ArrayHeader, data: &[Complex64]) -> Result<()> {
    if header.dtype != DType::Complex64 {
        return Err(invalid("write_complex requires dtype complex64"));
    }
    if header.element_count() != data.len() {
        return Err(invalid(format!(
            "shape {:?} holds {} values, got {}",
            header.shape,
            header.element_count(),
            data.len()
        )));
    }
    let bytes = data
        .iter()
        .flat_map(|c| {
            let mut b = [0u8; 8];
            b[..4].copy_from_slice(&(c.re as f32).to_le_bytes());
            b[4..].copy_from_slice(&(c.im as f32).to_le_bytes());
            b
        })
        .collect();
    write_pair(base, header, bytes)
}

fn read_pair(base: &Path) -> Result<(ArrayHeader, Vec<u8>)> {
    let (bin, json) = paths(base);
    let text = fs::read_to_string(&json).map_err(io_err(&json))?;
    let header: ArrayHeader = serde_json::from_str(&text).map_err(json_err(&json))?;
    header.validate()?;
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let expected = header.element_count() * header.dtype.element_bytes();
    if bytes.len() != expected {
        return Err(invalid(format!(
            "{}: expected {expected} bytes for shape {:?}, found {}",
            bin.display(),
            header.shape,
            bytes.len()
        )));
    }
    Ok((header, bytes))
}

pub fn read_real(base: &Path) -> Result<(ArrayHeader, Vec<f64>)> {
    let (header, bytes) = read_pair(base)?;
    let data = match header.dtype {
        DType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::Float64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::Complex64 => return Err(invalid("array is complex; use read_complex")),
    };
    Ok((header, data))
}

pub fn read_complex(base: &Path) -> Result<(ArrayHeader, Vec<Complex64>)> {
    let (header, bytes) = read_pair(base)?;
    if header.dtype != DType::Complex64 {
        return Err(invalid("array is real; use read_real"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex64::new(
                f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
            )
        })
        .collect();
    Ok((header, data))
}

/// Writes parameter matrices as `dir/p000`, `dir/p001`, ... in `float64`.
pub fn write_params(dir: &Path, params: &[Matrix]) -> Result<()> {
    for (i, m) in params.iter().enumerate() {
        let h = ArrayHeader::new(&[m.rows(), m.cols()], DType::Float64, &["row", "col"]);
        write_real(&dir.join(format!("p{i:03}")), &h, m.data())?;
    }
    Ok(())
}

/// Reads the matrices written by [`write_params`], in order.
pub fn read_params(dir: &Path) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    loop {
        let base = dir.join(format!("p{:03}", out.len()));
        if !base.with_extension("json").exists() {
            return Ok(out);
        }
        let (h, data) = read_real(&base)?;
        let [rows, cols] = h.shape[..] else {
            return Err(invalid(format!("{}: parameter must be rank 2", base.display())));
        };
        out.push(Matrix::from_vec(rows, cols, data));
    }
}
