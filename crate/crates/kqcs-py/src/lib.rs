//! Python bindings: numpy-facing wrappers around phantom generation, mask
//! design, reconstruction, and ODF estimation. Volumes are [nx, ny, G]
//! float arrays, masks [nx, ny, G] booleans, coefficients [nx, ny, N].

use kqcs::angular::build_dictionary;
use kqcs::eval::residual_error;
use kqcs::phantom::{add_noise, generate_phantom, to_kspace, PhantomSpec};
use kqcs::sampling::{apply_mask, assemble_mask, make_k_mask_radial, make_q_subset, MaskMode, RoundMode};
use kqcs::solver::{solve_prior, solve_saas, SolverConfig};
use kqcs::spatial::{SpatialTransform, TransformKind};
use kqcs::types::{DiffusionVolume, GradientScheme, GridShape};
use ndarray::{Array2, Array3, ArrayView3};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: kqcs::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Library's voxel-major V x C matrix (x fastest) -> [nx, ny, C].
fn matrix_to_cube(shape: GridShape, m: &Array2<f64>) -> Array3<f64> {
    let (nx, ny) = (shape.nx, shape.ny);
    Array3::from_shape_fn((nx, ny, m.ncols()), |(x, y, c)| m[[x + nx * y, c]])
}

fn cube_to_matrix(cube: &ArrayView3<f64>) -> (GridShape, Array2<f64>) {
    let (nx, ny, c) = cube.dim();
    let shape = GridShape::new_2d(nx, ny).expect("dims checked by caller");
    let m = Array2::from_shape_fn((nx * ny, c), |(v, q)| cube[[v % nx, v / nx, q]]);
    (shape, m)
}

fn scheme_from(dirs: &PyReadonlyArray2<f64>, bval: f64) -> PyResult<GradientScheme> {
    let d = dirs.as_array();
    if d.ncols() != 3 {
        return Err(PyValueError::new_err("directions must be a [G, 3] array"));
    }
    let list: Vec<[f64; 3]> = d.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    GradientScheme::new(list, bval).map_err(err)
}

fn volume_from(
    data: &PyReadonlyArray3<f64>,
    dirs: &PyReadonlyArray2<f64>,
    bval: f64,
) -> PyResult<DiffusionVolume> {
    let cube = data.as_array();
    let scheme = scheme_from(dirs, bval)?;
    if cube.dim().2 != scheme.len() {
        return Err(PyValueError::new_err(format!(
            "volume has {} directions, scheme has {}",
            cube.dim().2,
            scheme.len()
        )));
    }
    let (shape, m) = cube_to_matrix(&cube);
    DiffusionVolume::new(shape, scheme, m).map_err(err)
}

/// Crossing-fiber phantom: returns (clean, noisy, directions).
#[pyfunction]
#[pyo3(signature = (size, ndirs=64, bval=3000.0, snr=30.0, seed=7))]
fn phantom<'py>(
    py: Python<'py>,
    size: usize,
    ndirs: usize,
    bval: f64,
    snr: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray3<f64>>, Bound<'py, PyArray2<f64>>)> {
    let scheme = GradientScheme::fibonacci(ndirs, bval).map_err(err)?;
    let spec = PhantomSpec::default_crossing(size, scheme.clone(), snr, seed).map_err(err)?;
    let (clean, _) = generate_phantom(&spec).map_err(err)?;
    let noisy = add_noise(&clean, snr, seed).map_err(err)?;
    let dirs = Array2::from_shape_fn((ndirs, 3), |(i, j)| scheme.directions()[i][j]);
    Ok((
        matrix_to_cube(clean.shape, &clean.data).into_pyarray(py),
        matrix_to_cube(noisy.shape, &noisy.data).into_pyarray(py),
        dirs.into_pyarray(py),
    ))
}

/// Joint (k, q) sampling pattern as a dense [nx, ny, G] boolean array.
#[pyfunction]
#[pyo3(signature = (size, ndirs, k_frac, q_frac, seed=1, bval=3000.0))]
fn make_mask<'py>(
    py: Python<'py>,
    size: usize,
    ndirs: usize,
    k_frac: f64,
    q_frac: f64,
    seed: u64,
    bval: f64,
) -> PyResult<Bound<'py, PyArray3<bool>>> {
    let shape = GridShape::new_2d(size, size).map_err(err)?;
    let scheme = GradientScheme::fibonacci(ndirs, bval).map_err(err)?;
    let k = make_k_mask_radial(&shape, k_frac, seed, RoundMode::Nearest).map_err(err)?;
    let q = make_q_subset(&scheme, q_frac, seed + 100, RoundMode::Nearest).map_err(err)?;
    let mask = assemble_mask(MaskMode::Separable, vec![k], q, seed).map_err(err)?;
    let sel = mask.dense_selector(shape.voxels(), ndirs).map_err(err)?;
    let cube = Array3::from_shape_fn((size, size, ndirs), |(x, y, g)| sel[[x + size * y, g]]);
    Ok(cube.into_pyarray(py))
}

/// Reconstruct coefficients from a retrospectively undersampled volume.
/// Returns (coeffs, reconstruction, info).
#[pyfunction]
#[pyo3(signature = (data, dirs, mask, bval=3000.0, model="saas", spatial="tv", lam=0.01,
                    lam2=None, n_atoms=97, kappas=vec![2.0, 4.0, 8.0], max_iters=400,
                    eps=1e-6))]
#[allow(clippy::too_many_arguments)]
fn reconstruct<'py>(
    py: Python<'py>,
    data: PyReadonlyArray3<f64>,
    dirs: PyReadonlyArray2<f64>,
    mask: PyReadonlyArray3<bool>,
    bval: f64,
    model: &str,
    spatial: &str,
    lam: f64,
    lam2: Option<f64>,
    n_atoms: usize,
    kappas: Vec<f64>,
    max_iters: usize,
    eps: f64,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray3<f64>>, Bound<'py, PyDict>)> {
    let vol = volume_from(&data, &dirs, bval)?;
    let kind = match spatial {
        "haar" => TransformKind::Haar,
        "tv" | "gradient" => TransformKind::Gradient,
        other => return Err(PyValueError::new_err(format!("unknown spatial transform {other:?}"))),
    };

    // Dense boolean selector -> per-direction mask (general form).
    let sel = mask.as_array();
    if sel.dim() != (vol.shape.nx, vol.shape.ny, vol.scheme.len()) {
        return Err(PyValueError::new_err("mask shape must match the data volume"));
    }
    let nx = vol.shape.nx;
    let mut q_indices = Vec::new();
    let mut k_masks = Vec::new();
    for g in 0..vol.scheme.len() {
        let col: Vec<bool> =
            (0..vol.shape.voxels()).map(|v| sel[[v % nx, v / nx, g]]).collect();
        if col.iter().any(|&b| b) {
            q_indices.push(g);
            k_masks.push(col);
        }
    }
    let kq = assemble_mask(MaskMode::NonSeparable, k_masks, q_indices, 0).map_err(err)?;

    let y = apply_mask(&kq, &to_kspace(&vol).map_err(err)?).map_err(err)?;
    let dict = build_dictionary(&vol.scheme, n_atoms, &kappas).map_err(err)?;
    let transform = SpatialTransform::new(kind, vol.shape).map_err(err)?;
    let cfg = SolverConfig {
        lambda: lam,
        lambda2: match model {
            "prior" => lam2.unwrap_or(lam),
            _ => 0.0,
        },
        epsilon: eps,
        max_iters,
        ..SolverConfig::default()
    };
    let report = match model {
        "saas" => solve_saas(&y, &kq, &dict, &transform, &cfg),
        "prior" => solve_prior(&y, &kq, &dict, &transform, &cfg),
        other => return Err(PyValueError::new_err(format!("unknown model {other:?}"))),
    }
    .map_err(err)?;

    let recon = dict.synthesize_signal(vol.shape, &report.a_hat).map_err(err)?;
    let info = PyDict::new(py);
    info.set_item("iterations", report.iterations_run)?;
    info.set_item("converged", report.converged)?;
    info.set_item("final_rho", report.final_rho)?;
    info.set_item("residual", residual_error(&recon, &vol).map_err(err)?)?;
    info.set_item("objective_trace", report.objective_trace.clone())?;
    Ok((
        matrix_to_cube(vol.shape, &report.a_hat).into_pyarray(py),
        matrix_to_cube(vol.shape, &recon.data).into_pyarray(py),
        info,
    ))
}

/// Per-voxel orientation distribution samples, [nx, ny, P].
#[pyfunction]
#[pyo3(signature = (coeffs, ndirs=64, bval=3000.0, n_atoms=97, kappas=vec![2.0, 4.0, 8.0]))]
fn odf<'py>(
    py: Python<'py>,
    coeffs: PyReadonlyArray3<f64>,
    ndirs: usize,
    bval: f64,
    n_atoms: usize,
    kappas: Vec<f64>,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let cube = coeffs.as_array();
    let scheme = GradientScheme::fibonacci(ndirs, bval).map_err(err)?;
    let dict = build_dictionary(&scheme, n_atoms, &kappas).map_err(err)?;
    if cube.dim().2 != dict.n_atoms() {
        return Err(PyValueError::new_err(format!(
            "coefficients have {} atoms, dictionary has {}",
            cube.dim().2,
            dict.n_atoms()
        )));
    }
    let (shape, m) = cube_to_matrix(&cube);
    let odf = dict.estimate_odf(&m).map_err(err)?;
    Ok(matrix_to_cube(shape, &odf).into_pyarray(py))
}

#[pymodule]
fn kqcs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(make_mask, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(odf, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
