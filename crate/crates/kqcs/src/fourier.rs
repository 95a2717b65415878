//! Centered unitary FFT applied per diffusion direction.
//!
//! Convention: the forward transform maps a real image column to k-space
//! scaled by 1/sqrt(V), then rotates so the zero-frequency sample lands at
//! floor(n/2) along each axis. The inverse undoes the rotation first and
//! scales by 1/sqrt(V) again, so forward and inverse form a unitary pair
//! (adjoint = inverse) and Parseval holds exactly.

use crate::error::{Error, Result};
use crate::types::{ComplexVolume, DiffusionVolume, GridShape};
use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Precomputed FFT plans and the fftshift permutation for one grid shape.
pub struct FourierPlan {
    dims: Vec<usize>,
    strides: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    /// shift_map[v] = flat index of voxel v after fftshift.
    shift_map: Vec<usize>,
    scale: f64,
}

impl FourierPlan {
    pub fn new(shape: GridShape) -> Self {
        let dims = shape.dims();
        let mut strides = Vec::with_capacity(dims.len());
        let mut acc = 1;
        for &n in &dims {
            strides.push(acc);
            acc *= n;
        }
        let voxels = acc;
        let mut planner = FftPlanner::new();
        let fwd = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut shift_map = Vec::with_capacity(voxels);
        for v in 0..voxels {
            let mut shifted = 0;
            for (a, &n) in dims.iter().enumerate() {
                let coord = (v / strides[a]) % n;
                shifted += ((coord + n / 2) % n) * strides[a];
            }
            shift_map.push(shifted);
        }
        FourierPlan { dims, strides, fwd, inv, shift_map, scale: 1.0 / (voxels as f64).sqrt() }
    }

    fn voxels(&self) -> usize {
        self.shift_map.len()
    }

    /// Applies the planned 1D FFTs along every axis of one flattened column.
    fn transform_axes(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let voxels = self.voxels();
        let mut scratch = vec![Complex64::default(); *self.dims.iter().max().unwrap()];
        for (a, &n) in self.dims.iter().enumerate() {
            let stride = self.strides[a];
            let lanes = voxels / n;
            for lane in 0..lanes {
                // Flat index of the lane's first element: re-expand the lane
                // counter into all coordinates except axis a.
                let (outer, inner) = (lane / stride, lane % stride);
                let base = inner + outer * stride * n;
                for i in 0..n {
                    scratch[i] = buf[base + i * stride];
                }
                plans[a].process(&mut scratch[..n]);
                for i in 0..n {
                    buf[base + i * stride] = scratch[i];
                }
            }
        }
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.voxels() {
            return Err(Error::ShapeMismatch(format!(
                "column length {rows} does not match grid voxel count {}",
                self.voxels()
            )));
        }
        Ok(())
    }

    /// Forward transform of a complex V x m matrix, column by column.
    pub fn forward(&self, x: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        self.check_rows(x.nrows())?;
        let v = self.voxels();
        let mut out = Array2::default((v, x.ncols()));
        let mut buf = vec![Complex64::default(); v];
        for g in 0..x.ncols() {
            for i in 0..v {
                buf[i] = x[[i, g]];
            }
            self.transform_axes(&mut buf, &self.fwd);
            for i in 0..v {
                out[[self.shift_map[i], g]] = buf[i] * self.scale;
            }
        }
        Ok(out)
    }

    /// Forward transform of a real V x m matrix.
    pub fn forward_real(&self, x: &Array2<f64>) -> Result<Array2<Complex64>> {
        self.check_rows(x.nrows())?;
        self.forward(&x.mapv(|r| Complex64::new(r, 0.0)))
    }

    /// Inverse transform of a centered k-space V x m matrix.
    pub fn inverse(&self, y: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        self.check_rows(y.nrows())?;
        let v = self.voxels();
        let mut out = Array2::default((v, y.ncols()));
        let mut buf = vec![Complex64::default(); v];
        for g in 0..y.ncols() {
            for i in 0..v {
                buf[i] = y[[self.shift_map[i], g]];
            }
            self.transform_axes(&mut buf, &self.inv);
            for i in 0..v {
                out[[i, g]] = buf[i] * self.scale;
            }
        }
        Ok(out)
    }

    /// Real part of the inverse transform (used where the image is known real).
    pub fn inverse_real(&self, y: &Array2<Complex64>) -> Result<Array2<f64>> {
        Ok(self.inverse(y)?.mapv(|c| c.re))
    }
}

/// Unitary centered FFT of each direction column of a real volume.
pub fn fft_per_direction(v: &DiffusionVolume) -> Result<ComplexVolume> {
    let plan = FourierPlan::new(v.shape);
    let data = plan.forward_real(&v.data)?;
    ComplexVolume::new(v.shape, v.scheme.clone(), data)
}

/// Inverse of [`fft_per_direction`].
pub fn ifft_per_direction(v: &ComplexVolume) -> Result<ComplexVolume> {
    let plan = FourierPlan::new(v.shape);
    let data = plan.inverse(&v.data)?;
    ComplexVolume::new(v.shape, v.scheme.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GradientScheme;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, shape: GridShape, g: usize) -> DiffusionVolume {
        let scheme = GradientScheme::fibonacci(g, 1000.0).unwrap();
        let data = Array2::from_shape_fn((shape.voxels(), g), |_| rng.random_range(-1.0..1.0));
        DiffusionVolume::new(shape, scheme, data).unwrap()
    }

    #[test]
    fn constant_image_concentrates_at_center() {
        let shape = GridShape::new_2d(4, 4).unwrap();
        let scheme = GradientScheme::fibonacci(1, 1000.0).unwrap();
        let v = DiffusionVolume::new(shape, scheme, Array2::ones((16, 1))).unwrap();
        let f = fft_per_direction(&v).unwrap();
        // Zero frequency sits at (2, 2) -> flat index 2 + 4*2 = 10, value 16/sqrt(16).
        for i in 0..16 {
            let expect = if i == 10 { 4.0 } else { 0.0 };
            assert!((f.data[[i, 0]] - Complex64::new(expect, 0.0)).norm() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn impulse_at_center_gives_constant_quarter() {
        let shape = GridShape::new_2d(4, 4).unwrap();
        let scheme = GradientScheme::fibonacci(1, 1000.0).unwrap();
        let mut k = Array2::default((16, 1));
        k[[10, 0]] = Complex64::new(1.0, 0.0);
        let img = ifft_per_direction(&ComplexVolume::new(shape, scheme, k).unwrap()).unwrap();
        for i in 0..16 {
            assert!((img.data[[i, 0]] - Complex64::new(0.25, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let shape = GridShape::new_2d(8, 8).unwrap();
        for _ in 0..100 {
            let v = random_volume(&mut rng, shape, 3);
            let f = fft_per_direction(&v).unwrap();
            let norm_in: f64 = v.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_out: f64 = f.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm_in - norm_out).abs() <= 1e-10 * norm_in.max(1.0));
            let back = ifft_per_direction(&f).unwrap();
            for (a, b) in v.data.iter().zip(back.data.iter()) {
                assert!((Complex64::new(*a, 0.0) - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_on_16x16() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = GridShape::new_2d(16, 16).unwrap();
        let v = random_volume(&mut rng, shape, 5);
        let f = fft_per_direction(&v).unwrap();
        let e_in: f64 = v.data.iter().map(|x| x * x).sum();
        let e_out: f64 = f.data.iter().map(|x| x.norm_sqr()).sum();
        assert!((e_in - e_out).abs() <= 1e-10 * e_in);
    }

    #[test]
    fn adjoint_identity_forward_inverse() {
        // <F x, y> = <x, F* y> with F* = inverse for a unitary map.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = GridShape::new_3d(4, 4, 2).unwrap();
        let plan = FourierPlan::new(shape);
        for _ in 0..20 {
            let x = Array2::from_shape_fn((32, 2), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let y = Array2::from_shape_fn((32, 2), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let fx = plan.forward(&x).unwrap();
            let fsy = plan.inverse(&y).unwrap();
            let lhs: Complex64 = fx.iter().zip(y.iter()).map(|(a, b)| a * b.conj()).sum();
            let rhs: Complex64 = x.iter().zip(fsy.iter()).map(|(a, b)| a * b.conj()).sum();
            assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let plan = FourierPlan::new(GridShape::new_2d(4, 4).unwrap());
        assert!(plan.forward_real(&Array2::zeros((8, 1))).is_err());
    }
}
