//! Angular dictionary over q-space directions plus paired ODF profiles.
//!
//! The default dictionary is a bank of antipodally symmetric Gaussian
//! attenuation kernels: the atom anchored at unit direction d with
//! concentration kappa has signal profile exp(-kappa*(u.d)^2) over the
//! gradient directions u, which is exactly the single-tensor attenuation
//! shape (lowest where u is parallel to the fiber). One constant
//! (isotropic) atom is always included, and every column is normalized
//! to unit l2 norm. Each atom carries an ODF display profile, a
//! sharpened antipodal bump exp(-4*kappa*(1 - (p.d)^2)) peaking at the
//! atom direction, sampled on P display directions in the x-y plane.

use crate::error::{Error, Result};
use crate::types::{fibonacci_hemisphere, CoefficientMatrix, DiffusionVolume, GradientScheme, GridShape};
use ndarray::Array2;

/// Number of ODF display directions (half circle in the x-y plane).
pub const ODF_SAMPLES: usize = 64;

/// Overcomplete angular dictionary with paired ODF atom profiles.
#[derive(Debug, Clone)]
pub struct AngularDictionary {
    pub scheme: GradientScheme,
    /// G x N signal profiles, unit-norm columns.
    pub atoms: Array2<f64>,
    /// P x N nonnegative ODF profiles, unit-norm columns.
    pub odf_atoms: Array2<f64>,
    /// Anchor direction per atom (the isotropic atom stores +z, unused).
    pub atom_directions: Vec<[f64; 3]>,
    /// Concentration per atom; 0 marks the isotropic atom.
    pub kernel_params: Vec<f64>,
}

/// The P display directions used by ODF profiles: half circle in the x-y plane.
pub fn odf_display_directions() -> Vec<[f64; 3]> {
    (0..ODF_SAMPLES)
        .map(|p| {
            let phi = std::f64::consts::PI * p as f64 / ODF_SAMPLES as f64;
            [phi.cos(), phi.sin(), 0.0]
        })
        .collect()
}

/// Builds the default parametric dictionary: one isotropic atom plus
/// `(n_atoms - 1) / len(concentrations)` Fibonacci directions per
/// concentration level. `n_atoms - 1` must divide evenly.
pub fn build_dictionary(
    scheme: &GradientScheme,
    n_atoms: usize,
    concentrations: &[f64],
) -> Result<AngularDictionary> {
    let g = scheme.len();
    if n_atoms < g {
        return Err(Error::InvalidArgument(format!(
            "dictionary must be overcomplete: n_atoms = {n_atoms} < G = {g}"
        )));
    }
    if concentrations.is_empty() || concentrations.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidArgument("concentrations must be positive".into()));
    }
    if (n_atoms - 1) % concentrations.len() != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_atoms - 1 = {} must be divisible by the {} concentration levels",
            n_atoms - 1,
            concentrations.len()
        )));
    }
    let n_dirs = (n_atoms - 1) / concentrations.len();
    if n_dirs == 0 {
        return Err(Error::InvalidArgument("dictionary needs at least one anisotropic atom".into()));
    }
    let anchor_dirs = fibonacci_hemisphere(n_dirs);
    let display = odf_display_directions();
    let p = display.len();

    let mut atoms = Array2::zeros((g, n_atoms));
    let mut odf_atoms = Array2::zeros((p, n_atoms));
    let mut atom_directions = Vec::with_capacity(n_atoms);
    let mut kernel_params = Vec::with_capacity(n_atoms);

    // Isotropic atom first: constant profiles.
    let iso_sig = 1.0 / (g as f64).sqrt();
    let iso_odf = 1.0 / (p as f64).sqrt();
    for u in 0..g {
        atoms[[u, 0]] = iso_sig;
    }
    for s in 0..p {
        odf_atoms[[s, 0]] = iso_odf;
    }
    atom_directions.push([0.0, 0.0, 1.0]);
    kernel_params.push(0.0);

    let mut col = 1;
    for &kappa in concentrations {
        for d in &anchor_dirs {
            let mut sig: Vec<f64> = scheme
                .directions()
                .iter()
                .map(|u| {
                    let t = u[0] * d[0] + u[1] * d[1] + u[2] * d[2];
                    (-kappa * t * t).exp()
                })
                .collect();
            normalize(&mut sig);
            let mut odf: Vec<f64> = display
                .iter()
                .map(|pd| {
                    let t = pd[0] * d[0] + pd[1] * d[1] + pd[2] * d[2];
                    (-4.0 * kappa * (1.0 - t * t)).exp()
                })
                .collect();
            normalize(&mut odf);
            for u in 0..g {
                atoms[[u, col]] = sig[u];
            }
            for s in 0..p {
                odf_atoms[[s, col]] = odf[s];
            }
            atom_directions.push(*d);
            kernel_params.push(kappa);
            col += 1;
        }
    }
    Ok(AngularDictionary { scheme: scheme.clone(), atoms, odf_atoms, atom_directions, kernel_params })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

impl AngularDictionary {
    /// Number of atoms N.
    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// Wraps a user-supplied atom matrix; ODF profiles default to blanks
    /// (uniform) when not provided.
    pub fn from_atoms(
        scheme: GradientScheme,
        atoms: Array2<f64>,
        odf_atoms: Option<Array2<f64>>,
    ) -> Result<Self> {
        let g = scheme.len();
        if atoms.nrows() != g {
            return Err(Error::ShapeMismatch(format!(
                "atom matrix has {} rows, scheme has {g} directions",
                atoms.nrows()
            )));
        }
        let n = atoms.ncols();
        if n < g {
            return Err(Error::InvalidArgument(format!(
                "dictionary must be overcomplete: {n} atoms < G = {g}"
            )));
        }
        for j in 0..n {
            let norm: f64 = (0..g).map(|i| atoms[[i, j]] * atoms[[i, j]]).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("atom {j} has norm {norm}, expected 1")));
            }
        }
        let p = ODF_SAMPLES;
        let odf_atoms = match odf_atoms {
            Some(m) => {
                if m.ncols() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "odf atom matrix has {} columns, expected {n}",
                        m.ncols()
                    )));
                }
                if m.iter().any(|&x| x < 0.0) {
                    return Err(Error::InvalidArgument("odf atoms must be nonnegative".into()));
                }
                m
            }
            None => Array2::from_elem((p, n), 1.0 / (p as f64).sqrt()),
        };
        Ok(AngularDictionary {
            scheme,
            atom_directions: vec![[0.0, 0.0, 1.0]; n],
            kernel_params: vec![0.0; n],
            atoms,
            odf_atoms,
        })
    }

    /// Reconstructs the signal volume A * Gamma^T from coefficients.
    pub fn synthesize_signal(&self, shape: GridShape, a: &CoefficientMatrix) -> Result<DiffusionVolume> {
        if a.ncols() != self.n_atoms() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients have {} columns, dictionary has {} atoms",
                a.ncols(),
                self.n_atoms()
            )));
        }
        if a.nrows() != shape.voxels() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients have {} rows, grid {shape} has {} voxels",
                a.nrows(),
                shape.voxels()
            )));
        }
        DiffusionVolume::new(shape, self.scheme.clone(), a.dot(&self.atoms.t()))
    }

    /// Per-voxel ODF samples: clamp A * odf_atoms^T at zero, then normalize
    /// each row to sum 1 (rows that clamp to all zero stay zero).
    pub fn estimate_odf(&self, a: &CoefficientMatrix) -> Result<Array2<f64>> {
        if a.ncols() != self.n_atoms() {
            return Err(Error::ShapeMismatch(format!(
                "coefficients have {} columns, dictionary has {} atoms",
                a.ncols(),
                self.n_atoms()
            )));
        }
        let mut odf = a.dot(&self.odf_atoms.t());
        for mut row in odf.rows_mut() {
            let mut sum = 0.0;
            for x in row.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
                sum += *x;
            }
            if sum > 0.0 {
                for x in row.iter_mut() {
                    *x /= sum;
                }
            }
        }
        Ok(odf)
    }
}
