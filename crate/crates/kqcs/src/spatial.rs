//! Spatial sparsifying transforms and their adjoints.
//!
//! Two kinds are provided. Haar is the orthonormal multilevel wavelet,
//! applied fully along each axis in turn; each 1D level maps adjacent
//! pairs (a, b) to ((a+b)/sqrt(2), (a-b)/sqrt(2)) and recurses on the
//! approximation half, so coefficients are laid out [approx | detail].
//! Gradient is the forward-difference operator with replicate boundary
//! (the last difference along each axis is 0); its output interleaves
//! the d partials per site, row d*v + axis, and its adjoint is the
//! matching negative divergence.

use crate::error::{Error, Result};
use crate::types::GridShape;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Transform family selector; "tv" is accepted as a synonym for the
/// gradient transform in serialized configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Haar,
    #[serde(alias = "tv")]
    Gradient,
}

/// A spatial analysis/synthesis operator pair bound to one grid shape.
#[derive(Debug, Clone)]
pub struct SpatialTransform {
    pub kind: TransformKind,
    pub shape: GridShape,
    /// Coefficient rows produced per input column: V for Haar, d*V for Gradient.
    pub n_psi: usize,
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl SpatialTransform {
    pub fn new(kind: TransformKind, shape: GridShape) -> Result<Self> {
        if kind == TransformKind::Haar && !shape.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "Haar requires power-of-two dimensions, got {shape}"
            )));
        }
        let dims = shape.dims();
        let mut strides = Vec::with_capacity(dims.len());
        let mut acc = 1;
        for &n in &dims {
            strides.push(acc);
            acc *= n;
        }
        let n_psi = match kind {
            TransformKind::Haar => shape.voxels(),
            TransformKind::Gradient => shape.ndim() * shape.voxels(),
        };
        Ok(SpatialTransform { kind, shape, n_psi, dims, strides })
    }

    /// Forward transform of each column: V x m -> n_psi x m.
    pub fn analyze(&self, columns: &Array2<f64>) -> Result<Array2<f64>> {
        let v = self.shape.voxels();
        if columns.nrows() != v {
            return Err(Error::ShapeMismatch(format!(
                "analyze input has {} rows, grid {} has {v} voxels",
                columns.nrows(),
                self.shape
            )));
        }
        match self.kind {
            TransformKind::Haar => {
                let mut out = columns.clone();
                for mut col in out.columns_mut() {
                    let buf = col.as_slice_memory_order_mut();
                    match buf {
                        Some(buf) => self.haar_axes(buf, false),
                        None => {
                            let mut tmp: Vec<f64> = col.to_vec();
                            self.haar_axes(&mut tmp, false);
                            for (dst, src) in col.iter_mut().zip(&tmp) {
                                *dst = *src;
                            }
                        }
                    }
                }
                Ok(out)
            }
            TransformKind::Gradient => {
                let d = self.shape.ndim();
                let mut out = Array2::zeros((d * v, columns.ncols()));
                for (a, (&n, &stride)) in self.dims.iter().zip(&self.strides).enumerate() {
                    for vox in 0..v {
                        let coord = (vox / stride) % n;
                        if coord + 1 < n {
                            for c in 0..columns.ncols() {
                                out[[d * vox + a, c]] =
                                    columns[[vox + stride, c]] - columns[[vox, c]];
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Adjoint of [`Self::analyze`] (also the inverse for Haar): n_psi x m -> V x m.
    pub fn synthesize(&self, coeffs: &Array2<f64>) -> Result<Array2<f64>> {
        if coeffs.nrows() != self.n_psi {
            return Err(Error::ShapeMismatch(format!(
                "synthesize input has {} rows, transform produces {}",
                coeffs.nrows(),
                self.n_psi
            )));
        }
        let v = self.shape.voxels();
        match self.kind {
            TransformKind::Haar => {
                let mut out = coeffs.clone();
                for mut col in out.columns_mut() {
                    let buf = col.as_slice_memory_order_mut();
                    match buf {
                        Some(buf) => self.haar_axes(buf, true),
                        None => {
                            let mut tmp: Vec<f64> = col.to_vec();
                            self.haar_axes(&mut tmp, true);
                            for (dst, src) in col.iter_mut().zip(&tmp) {
                                *dst = *src;
                            }
                        }
                    }
                }
                Ok(out)
            }
            TransformKind::Gradient => {
                let d = self.shape.ndim();
                let mut out = Array2::zeros((v, coeffs.ncols()));
                for (a, (&n, &stride)) in self.dims.iter().zip(&self.strides).enumerate() {
                    for vox in 0..v {
                        let coord = (vox / stride) % n;
                        if coord + 1 < n {
                            // Row d*vox+a holds x[vox+stride] - x[vox].
                            for c in 0..coeffs.ncols() {
                                let y = coeffs[[d * vox + a, c]];
                                out[[vox + stride, c]] += y;
                                out[[vox, c]] -= y;
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Applies the multilevel 1D Haar (or its inverse) along every axis.
    fn haar_axes(&self, buf: &mut [f64], inverse: bool) {
        let v = buf.len();
        let max_n = *self.dims.iter().max().unwrap();
        let mut lane = vec![0.0; max_n];
        let mut scratch = vec![0.0; max_n];
        for (a, &n) in self.dims.iter().enumerate() {
            if n == 1 {
                continue;
            }
            let stride = self.strides[a];
            for l in 0..v / n {
                let (outer, inner) = (l / stride, l % stride);
                let base = inner + outer * stride * n;
                for i in 0..n {
                    lane[i] = buf[base + i * stride];
                }
                if inverse {
                    haar1d_inverse(&mut lane[..n], &mut scratch[..n]);
                } else {
                    haar1d_forward(&mut lane[..n], &mut scratch[..n]);
                }
                for i in 0..n {
                    buf[base + i * stride] = lane[i];
                }
            }
        }
    }
}

fn haar1d_forward(x: &mut [f64], scratch: &mut [f64]) {
    let rt2 = std::f64::consts::SQRT_2;
    let mut m = x.len();
    while m > 1 {
        let h = m / 2;
        for i in 0..h {
            scratch[i] = (x[2 * i] + x[2 * i + 1]) / rt2;
            scratch[h + i] = (x[2 * i] - x[2 * i + 1]) / rt2;
        }
        x[..m].copy_from_slice(&scratch[..m]);
        m = h;
    }
}

fn haar1d_inverse(x: &mut [f64], scratch: &mut [f64]) {
    let rt2 = std::f64::consts::SQRT_2;
    let mut m = 2;
    while m <= x.len() {
        let h = m / 2;
        for i in 0..h {
            scratch[2 * i] = (x[i] + x[h + i]) / rt2;
            scratch[2 * i + 1] = (x[i] - x[h + i]) / rt2;
        }
        x[..m].copy_from_slice(&scratch[..m]);
        m *= 2;
    }
}

/// Sum over sites of the Euclidean norm of the d partials at that site.
pub fn iso_tv_norm(g: &Array2<f64>, d: usize) -> Result<f64> {
    if d == 0 || g.nrows() % d != 0 {
        return Err(Error::ShapeMismatch(format!(
            "row count {} is not divisible by d = {d}",
            g.nrows()
        )));
    }
    let sites = g.nrows() / d;
    let mut total = 0.0;
    for c in 0..g.ncols() {
        for s in 0..sites {
            let mut acc = 0.0;
            for a in 0..d {
                acc += g[[d * s + a, c]] * g[[d * s + a, c]];
            }
            total += acc.sqrt();
        }
    }
    Ok(total)
}
