//! Dense-tensor file I/O and gradient-scheme CSV.
//!
//! A tensor on disk is a pair of files sharing one prefix: `<name>.json`
//! holds {"dtype","shape","order","endian"} and `<name>.bin` holds the
//! raw little-endian payload (complex values interleaved re, im).

use crate::error::{Error, Result};
use crate::types::{ComplexVolume, DiffusionVolume, GradientScheme, GridShape};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Tensor payload: real or complex double precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    C128(Vec<Complex64>),
}

/// Dense row-major tensor with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} declares {} elements, payload has {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data: TensorData::F64(data) })
    }

    pub fn c128(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} declares {} elements, payload has {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data: TensorData::C128(data) })
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
    order: String,
    endian: String,
}

/// Strips a trailing `.json`/`.bin` so callers may pass either file or the prefix.
fn tensor_prefix(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

/// Writes `<prefix>.json` and `<prefix>.bin`.
pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let prefix = tensor_prefix(path);
    let header = TensorHeader {
        dtype: match t.data {
            TensorData::F64(_) => "f64".into(),
            TensorData::C128(_) => "c128".into(),
        },
        shape: t.shape.clone(),
        order: "row-major".into(),
        endian: "little".into(),
    };
    let json = File::create(prefix.with_extension("json"))?;
    serde_json::to_writer_pretty(BufWriter::new(json), &header)?;
    let mut bin = BufWriter::new(File::create(prefix.with_extension("bin"))?);
    match &t.data {
        TensorData::F64(v) => {
            for x in v {
                bin.write_f64::<LittleEndian>(*x)?;
            }
        }
        TensorData::C128(v) => {
            for x in v {
                bin.write_f64::<LittleEndian>(x.re)?;
                bin.write_f64::<LittleEndian>(x.im)?;
            }
        }
    }
    bin.flush()?;
    Ok(())
}

/// Reads a tensor written by [`save_tensor`].
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let prefix = tensor_prefix(path);
    let header: TensorHeader =
        serde_json::from_reader(BufReader::new(File::open(prefix.with_extension("json"))?))?;
    if header.order != "row-major" {
        return Err(Error::MalformedFile(format!("unsupported order {:?}", header.order)));
    }
    if header.endian != "little" {
        return Err(Error::MalformedFile(format!("unsupported endianness {:?}", header.endian)));
    }
    let numel: usize = header.shape.iter().product();
    let mut bin = BufReader::new(File::open(prefix.with_extension("bin"))?);
    let elem_bytes = match header.dtype.as_str() {
        "f64" => 8,
        "c128" => 16,
        other => return Err(Error::MalformedFile(format!("unsupported dtype {other:?}"))),
    };
    let expected = numel * elem_bytes;
    let mut payload = Vec::with_capacity(expected);
    bin.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::MalformedFile(format!(
            "payload is {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let mut cursor = payload.as_slice();
    let data = match header.dtype.as_str() {
        "f64" => {
            let mut v = Vec::with_capacity(numel);
            for _ in 0..numel {
                v.push(cursor.read_f64::<LittleEndian>()?);
            }
            TensorData::F64(v)
        }
        _ => {
            let mut v = Vec::with_capacity(numel);
            for _ in 0..numel {
                let re = cursor.read_f64::<LittleEndian>()?;
                let im = cursor.read_f64::<LittleEndian>()?;
                v.push(Complex64::new(re, im));
            }
            TensorData::C128(v)
        }
    };
    Ok(Tensor { shape: header.shape, data })
}

/// Converts a real matrix (voxels x cols) to a tensor shaped [dims..., cols].
///
/// Internally voxels are x-fastest; the tensor file is row-major with axes
/// (x, y[, z], col), so the payload is written column-of-matrix innermost.
pub fn matrix_to_tensor(shape: &GridShape, m: &Array2<f64>) -> Result<Tensor> {
    if m.nrows() != shape.voxels() {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} rows, grid {shape} has {} voxels",
            m.nrows(),
            shape.voxels()
        )));
    }
    let cols = m.ncols();
    let mut out_shape = shape.dims();
    out_shape.push(cols);
    let mut data = Vec::with_capacity(m.len());
    for v in 0..m.nrows() {
        for c in 0..cols {
            data.push(m[[v, c]]);
        }
    }
    // Row-major [x, y, z, col] means x slowest; our flat order is x fastest,
    // so reorder voxel blocks.
    Ok(Tensor { shape: out_shape, data: TensorData::F64(reorder_to_file(shape, data, cols)) })
}

/// Inverse of [`matrix_to_tensor`].
pub fn tensor_to_matrix(t: &Tensor) -> Result<(GridShape, Array2<f64>)> {
    let d = t.shape.len();
    if d != 3 && d != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected a [dims..., cols] tensor with 2 or 3 grid axes, got shape {:?}",
            t.shape
        )));
    }
    let shape = if d == 3 {
        GridShape::new_2d(t.shape[0], t.shape[1])?
    } else {
        GridShape::new_3d(t.shape[0], t.shape[1], t.shape[2])?
    };
    let cols = t.shape[d - 1];
    let raw = match &t.data {
        TensorData::F64(v) => v,
        TensorData::C128(_) => {
            return Err(Error::Unsupported("expected a real tensor, found complex".into()))
        }
    };
    let reordered = reorder_from_file(&shape, raw, cols);
    let m = Array2::from_shape_vec((shape.voxels(), cols), reordered)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((shape, m))
}

/// Same as [`matrix_to_tensor`] for complex matrices.
pub fn cmatrix_to_tensor(shape: &GridShape, m: &Array2<Complex64>) -> Result<Tensor> {
    if m.nrows() != shape.voxels() {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} rows, grid {shape} has {} voxels",
            m.nrows(),
            shape.voxels()
        )));
    }
    let cols = m.ncols();
    let mut out_shape = shape.dims();
    out_shape.push(cols);
    let mut data = Vec::with_capacity(m.len());
    for v in 0..m.nrows() {
        for c in 0..cols {
            data.push(m[[v, c]]);
        }
    }
    Ok(Tensor { shape: out_shape, data: TensorData::C128(reorder_to_file(shape, data, cols)) })
}

/// Inverse of [`cmatrix_to_tensor`].
pub fn tensor_to_cmatrix(t: &Tensor) -> Result<(GridShape, Array2<Complex64>)> {
    let d = t.shape.len();
    if d != 3 && d != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected a [dims..., cols] tensor with 2 or 3 grid axes, got shape {:?}",
            t.shape
        )));
    }
    let shape = if d == 3 {
        GridShape::new_2d(t.shape[0], t.shape[1])?
    } else {
        GridShape::new_3d(t.shape[0], t.shape[1], t.shape[2])?
    };
    let cols = t.shape[d - 1];
    let raw = match &t.data {
        TensorData::C128(v) => v,
        TensorData::F64(_) => {
            return Err(Error::Unsupported("expected a complex tensor, found real".into()))
        }
    };
    let reordered = reorder_from_file(&shape, raw, cols);
    let m = Array2::from_shape_vec((shape.voxels(), cols), reordered)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((shape, m))
}

/// Reorders (voxel-fastest-x, col) pairs into row-major [x, y, z, col] file order.
fn reorder_to_file<T: Copy + Default>(shape: &GridShape, flat: Vec<T>, cols: usize) -> Vec<T> {
    let dims = shape.dims();
    let v_total = shape.voxels();
    let mut out = vec![T::default(); flat.len()];
    for v in 0..v_total {
        let file_v = voxel_to_file_index(&dims, v);
        out[file_v * cols..(file_v + 1) * cols].copy_from_slice(&flat[v * cols..(v + 1) * cols]);
    }
    out
}

fn reorder_from_file<T: Copy + Default>(shape: &GridShape, file: &[T], cols: usize) -> Vec<T> {
    let dims = shape.dims();
    let v_total = shape.voxels();
    let mut out = vec![T::default(); file.len()];
    for v in 0..v_total {
        let file_v = voxel_to_file_index(&dims, v);
        out[v * cols..(v + 1) * cols].copy_from_slice(&file[file_v * cols..(file_v + 1) * cols]);
    }
    out
}

/// Maps an x-fastest flat voxel index to its row-major (x slowest) position.
fn voxel_to_file_index(dims: &[usize], v: usize) -> usize {
    let mut rem = v;
    let mut coords = Vec::with_capacity(dims.len());
    for &n in dims {
        coords.push(rem % n);
        rem /= n;
    }
    let mut idx = 0;
    for (&c, &n) in coords.iter().zip(dims) {
        idx = idx * n + c;
    }
    idx
}

/// Saves a diffusion volume as tensor files plus its scheme CSV alongside.
pub fn save_volume(prefix: &Path, v: &DiffusionVolume) -> Result<()> {
    save_tensor(prefix, &matrix_to_tensor(&v.shape, &v.data)?)?;
    save_scheme(&scheme_path(prefix), &v.scheme)
}

/// Loads a diffusion volume written by [`save_volume`].
pub fn load_volume(prefix: &Path) -> Result<DiffusionVolume> {
    let (shape, data) = tensor_to_matrix(&load_tensor(prefix)?)?;
    let scheme = load_scheme(&scheme_path(prefix))?;
    DiffusionVolume::new(shape, scheme, data)
}

/// Saves a complex volume (k-space) as tensor files plus its scheme CSV.
pub fn save_cvolume(prefix: &Path, v: &ComplexVolume) -> Result<()> {
    save_tensor(prefix, &cmatrix_to_tensor(&v.shape, &v.data)?)?;
    save_scheme(&scheme_path(prefix), &v.scheme)
}

/// Loads a complex volume written by [`save_cvolume`].
pub fn load_cvolume(prefix: &Path) -> Result<ComplexVolume> {
    let (shape, data) = tensor_to_cmatrix(&load_tensor(prefix)?)?;
    let scheme = load_scheme(&scheme_path(prefix))?;
    ComplexVolume::new(shape, scheme, data)
}

fn scheme_path(prefix: &Path) -> PathBuf {
    let prefix = tensor_prefix(prefix);
    let name = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    prefix.with_file_name(format!("{name}.scheme.csv"))
}

/// Writes a gradient scheme as CSV with columns gx,gy,gz,b.
pub fn save_scheme(path: &Path, scheme: &GradientScheme) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gx", "gy", "gz", "b"])?;
    for d in scheme.directions() {
        w.write_record([
            format!("{:.17e}", d[0]),
            format!("{:.17e}", d[1]),
            format!("{:.17e}", d[2]),
            format!("{:.17e}", scheme.b_value()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a gradient scheme CSV; all rows must share one b-value.
pub fn load_scheme(path: &Path) -> Result<GradientScheme> {
    let mut r = csv::Reader::from_path(path)?;
    let mut directions = Vec::new();
    let mut b_value: Option<f64> = None;
    for record in r.records() {
        let record = record?;
        if record.len() != 4 {
            return Err(Error::MalformedFile(format!(
                "scheme row has {} fields, expected gx,gy,gz,b",
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::MalformedFile(format!("scheme field {:?}: {e}", &record[i])))
        };
        directions.push([parse(0)?, parse(1)?, parse(2)?]);
        let b = parse(3)?;
        match b_value {
            None => b_value = Some(b),
            Some(prev) if (prev - b).abs() > 1e-9 => {
                return Err(Error::Unsupported("multi-shell scheme (b varies across rows)".into()))
            }
            _ => {}
        }
    }
    let b = b_value.ok_or_else(|| Error::MalformedFile("scheme file has no rows".into()))?;
    GradientScheme::new(directions, b)
}
