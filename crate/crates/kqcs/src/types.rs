//! Core domain types: grid geometry, gradient schemes, and the dense
//! volume containers shared by every module.
//!
//! Conventions used throughout the crate:
//! - Voxels are indexed x-fastest: flat index `v = x + nx*(y + ny*z)`.
//! - Dense matrices are row-major with voxels along rows, so a signal
//!   volume is a V x G matrix and a coefficient matrix is V x N.

use crate::error::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Coefficient matrices are plain dense real matrices; dimension checks
/// happen at the operations that consume them.
pub type CoefficientMatrix = Array2<f64>;

/// Voxel grid dimensions of a 2D slice or 3D volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub nz: Option<usize>,
}

impl GridShape {
    /// 2D slice of nx x ny voxels.
    pub fn new_2d(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        Ok(GridShape { nx, ny, nz: None })
    }

    /// 3D volume of nx x ny x nz voxels.
    pub fn new_3d(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        Ok(GridShape { nx, ny, nz: Some(nz) })
    }

    /// Total voxel count V.
    pub fn voxels(&self) -> usize {
        self.nx * self.ny * self.nz.unwrap_or(1)
    }

    /// Present dimensions, `[nx, ny]` or `[nx, ny, nz]`.
    pub fn dims(&self) -> Vec<usize> {
        match self.nz {
            Some(nz) => vec![self.nx, self.ny, nz],
            None => vec![self.nx, self.ny],
        }
    }

    /// Number of grid dimensions d (2 or 3).
    pub fn ndim(&self) -> usize {
        if self.nz.is_some() {
            3
        } else {
            2
        }
    }

    /// True when every present dimension is a power of two (Haar requirement).
    pub fn is_power_of_two(&self) -> bool {
        self.dims().iter().all(|&n| n.is_power_of_two())
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.nz {
            Some(nz) => write!(f, "{}x{}x{}", self.nx, self.ny, nz),
            None => write!(f, "{}x{}", self.nx, self.ny),
        }
    }
}

/// Quasi-uniform deterministic directions on the upper hemisphere
/// (Fibonacci spiral layout).
pub fn fibonacci_hemisphere(n: usize) -> Vec<[f64; 3]> {
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Single-shell diffusion gradient scheme: G unit directions and one b-value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientScheme {
    directions: Vec<[f64; 3]>,
    b_value: f64,
}

impl GradientScheme {
    /// Validates unit norms and rejects duplicates up to antipodal symmetry.
    pub fn new(directions: Vec<[f64; 3]>, b_value: f64) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidArgument("gradient scheme needs at least one direction".into()));
        }
        if !b_value.is_finite() || b_value < 0.0 {
            return Err(Error::InvalidArgument(format!("b-value must be finite and nonnegative, got {b_value}")));
        }
        for (i, d) in directions.iter().enumerate() {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("direction {i} has norm {norm}, expected 1")));
            }
        }
        for i in 0..directions.len() {
            for j in (i + 1)..directions.len() {
                let (a, b) = (directions[i], directions[j]);
                let same = dist3(a, b) < 1e-9;
                let flipped = dist3(a, [-b[0], -b[1], -b[2]]) < 1e-9;
                if same || flipped {
                    return Err(Error::InvalidArgument(format!("directions {i} and {j} coincide up to antipodal symmetry")));
                }
            }
        }
        Ok(GradientScheme { directions, b_value })
    }

    /// Convenience constructor with Fibonacci-hemisphere directions.
    pub fn fibonacci(n: usize, b_value: f64) -> Result<Self> {
        GradientScheme::new(fibonacci_hemisphere(n), b_value)
    }

    /// Number of directions G.
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn b_value(&self) -> f64 {
        self.b_value
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Real spatial-angular signal S, V voxels by G directions.
#[derive(Debug, Clone)]
pub struct DiffusionVolume {
    pub shape: GridShape,
    pub scheme: GradientScheme,
    pub data: Array2<f64>,
}

impl DiffusionVolume {
    pub fn new(shape: GridShape, scheme: GradientScheme, data: Array2<f64>) -> Result<Self> {
        check_dims("DiffusionVolume", &shape, scheme.len(), data.nrows(), data.ncols())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("DiffusionVolume data".into()));
        }
        Ok(DiffusionVolume { shape, scheme, data })
    }
}

/// Complex per-direction k-space volume, V voxels by G directions.
#[derive(Debug, Clone)]
pub struct ComplexVolume {
    pub shape: GridShape,
    pub scheme: GradientScheme,
    pub data: Array2<Complex64>,
}

impl ComplexVolume {
    pub fn new(shape: GridShape, scheme: GradientScheme, data: Array2<Complex64>) -> Result<Self> {
        check_dims("ComplexVolume", &shape, scheme.len(), data.nrows(), data.ncols())?;
        if data.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::NonFinite("ComplexVolume data".into()));
        }
        Ok(ComplexVolume { shape, scheme, data })
    }
}

fn check_dims(what: &str, shape: &GridShape, g: usize, rows: usize, cols: usize) -> Result<()> {
    if rows != shape.voxels() || cols != g {
        return Err(Error::ShapeMismatch(format!(
            "{what}: data is {rows}x{cols}, expected {}x{g} for grid {shape}",
            shape.voxels()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn grid_shape_basics() {
        let s = GridShape::new_2d(4, 8).unwrap();
        assert_eq!(s.voxels(), 32);
        assert_eq!(s.dims(), vec![4, 8]);
        assert_eq!(s.ndim(), 2);
        assert!(s.is_power_of_two());
        let t = GridShape::new_3d(4, 4, 3).unwrap();
        assert_eq!(t.voxels(), 48);
        assert_eq!(t.ndim(), 3);
        assert!(!t.is_power_of_two());
        assert!(GridShape::new_2d(0, 4).is_err());
    }

    #[test]
    fn scheme_validation() {
        assert!(GradientScheme::new(vec![], 1000.0).is_err());
        assert!(GradientScheme::new(vec![[2.0, 0.0, 0.0]], 1000.0).is_err());
        // antipodal duplicate rejected
        let dup = GradientScheme::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], 1000.0);
        assert!(dup.is_err());
        let ok = GradientScheme::new(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 1000.0).unwrap();
        assert_eq!(ok.len(), 2);
    }

    #[test]
    fn fibonacci_directions_are_valid_scheme() {
        let s = GradientScheme::fibonacci(64, 3000.0).unwrap();
        assert_eq!(s.len(), 64);
        for d in s.directions() {
            assert!(d[2] > 0.0, "hemisphere layout keeps z positive");
        }
    }

    #[test]
    fn volume_dimension_checks() {
        let shape = GridShape::new_2d(2, 2).unwrap();
        let scheme = GradientScheme::fibonacci(3, 1000.0).unwrap();
        assert!(DiffusionVolume::new(shape, scheme.clone(), Array2::zeros((4, 3))).is_ok());
        assert!(DiffusionVolume::new(shape, scheme.clone(), Array2::zeros((4, 2))).is_err());
        let mut bad = Array2::zeros((4, 3));
        bad[[0, 0]] = f64::NAN;
        assert!(DiffusionVolume::new(shape, scheme, bad).is_err());
    }
}
