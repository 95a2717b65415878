//! (k,q)-space undersampling: mask generation, the sensing operator, and
//! its adjoint.
//!
//! k-masks live on the centered frequency grid (zero frequency at
//! floor(n/2) per axis, matching the FFT convention). Weighted sampling
//! without replacement uses exponential keys (-ln u / w), so masks are
//! exactly reproducible from their seed.

use crate::error::{Error, Result};
use crate::types::{ComplexVolume, GradientScheme, GridShape};
use ndarray::Array2;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// Shared k-mask across q (Kronecker-separable) or one k-mask per q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    Separable,
    NonSeparable,
}

/// How fractional sample counts round to integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundMode {
    /// round(fraction * total), the default.
    #[default]
    Nearest,
    /// floor(fraction * total), e.g. 20% of 64 directions = 12.
    Floor,
}

impl RoundMode {
    fn count(&self, fraction: f64, total: usize) -> usize {
        let raw = fraction * total as f64;
        match self {
            RoundMode::Nearest => raw.round() as usize,
            RoundMode::Floor => raw.floor() as usize,
        }
    }
}

/// A joint (k,q) sampling pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct KqMask {
    pub mode: MaskMode,
    /// Sorted, distinct sampled q indices (0-based into the scheme).
    pub q_indices: Vec<usize>,
    /// One boolean grid (Separable) or one per sampled q (NonSeparable),
    /// flat in x-fastest order.
    pub k_masks: Vec<Vec<bool>>,
    pub seed: u64,
}

/// Measurement vector produced by applying a mask: values are ordered per
/// sampled q (in `q_indices` order), then per sampled k index ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct KqMeasurements {
    pub mask: KqMask,
    pub values: Vec<Complex64>,
}

fn check_fraction(fraction: f64, what: &str) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("{what} fraction {fraction} outside (0, 1]")));
    }
    Ok(())
}

/// Centered frequency radius of every voxel plus the grid maximum.
fn radius_field(shape: &GridShape) -> (Vec<f64>, f64) {
    let dims = shape.dims();
    let v_total = shape.voxels();
    let mut radii = Vec::with_capacity(v_total);
    let mut rmax = 0.0f64;
    for v in 0..v_total {
        let mut rem = v;
        let mut r2 = 0.0;
        for &n in &dims {
            let c = (rem % n) as f64 - (n / 2) as f64;
            rem /= n;
            r2 += c * c;
        }
        let r = r2.sqrt();
        rmax = rmax.max(r);
        radii.push(r);
    }
    (radii, rmax)
}

/// Flat index of the zero-frequency sample.
fn dc_index(shape: &GridShape) -> usize {
    let dims = shape.dims();
    let mut idx = 0;
    let mut stride = 1;
    for &n in &dims {
        idx += (n / 2) * stride;
        stride *= n;
    }
    idx
}

/// Selects `count` items without replacement with probability proportional
/// to `weights`, always including `forced`. Exponential-key method.
fn weighted_subset(weights: &[f64], count: usize, forced: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = weights.len();
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, &w) in weights.iter().enumerate() {
        let u: f64 = rng.random();
        if i == forced {
            continue;
        }
        keyed.push((-(u.max(1e-300)).ln() / w.max(1e-300), i));
    }
    keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; n];
    mask[forced] = true;
    for &(_, i) in keyed.iter().take(count.saturating_sub(1)) {
        mask[i] = true;
    }
    mask
}

/// Variable-density radial k-mask: sampling probability proportional to
/// (1 + r/rmax)^-2, zero frequency always sampled, exactly
/// `round(fraction * V)` points.
pub fn make_k_mask_radial(
    shape: &GridShape,
    fraction: f64,
    seed: u64,
    round: RoundMode,
) -> Result<Vec<bool>> {
    check_fraction(fraction, "k")?;
    let v_total = shape.voxels();
    let count = round.count(fraction, v_total).min(v_total);
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "k fraction {fraction} selects zero of {v_total} samples"
        )));
    }
    let (radii, rmax) = radius_field(shape);
    let weights: Vec<f64> = radii.iter().map(|r| (1.0 + r / rmax.max(1.0)).powi(-2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(weighted_subset(&weights, count, dc_index(shape), &mut rng))
}

/// Full k_y-line mask for 2D grids: `round(fraction * nx)` columns chosen
/// by the same variable density over the k_x offset; center column always
/// included.
pub fn make_k_mask_lines(
    shape: &GridShape,
    fraction: f64,
    seed: u64,
    round: RoundMode,
) -> Result<Vec<bool>> {
    if shape.nz.is_some() {
        return Err(Error::Unsupported("line masks are defined for 2D slices".into()));
    }
    check_fraction(fraction, "k")?;
    let (nx, ny) = (shape.nx, shape.ny);
    let count = round.count(fraction, nx).min(nx);
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "k fraction {fraction} selects zero of {nx} lines"
        )));
    }
    let cx = nx / 2;
    let dmax = (nx - 1 - cx).max(cx) as f64;
    let weights: Vec<f64> = (0..nx)
        .map(|x| (1.0 + (x as f64 - cx as f64).abs() / dmax.max(1.0)).powi(-2))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = weighted_subset(&weights, count, cx, &mut rng);
    let mut mask = vec![false; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            mask[x + nx * y] = cols[x];
        }
    }
    Ok(mask)
}

/// Quasi-uniform q subsampling: farthest-point greedy on angular distance
/// from a seeded random start; returns sorted indices.
pub fn make_q_subset(
    scheme: &GradientScheme,
    fraction: f64,
    seed: u64,
    round: RoundMode,
) -> Result<Vec<usize>> {
    check_fraction(fraction, "q")?;
    let g = scheme.len();
    let q = round.count(fraction, g).min(g);
    if q == 0 {
        return Err(Error::InvalidArgument(format!(
            "q fraction {fraction} selects zero of {g} directions"
        )));
    }
    let dirs = scheme.directions();
    let angle = |a: usize, b: usize| -> f64 {
        let d = dirs[a][0] * dirs[b][0] + dirs[a][1] * dirs[b][1] + dirs[a][2] * dirs[b][2];
        d.abs().min(1.0).acos()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..g);
    let mut selected = vec![start];
    let mut min_dist: Vec<f64> = (0..g).map(|i| angle(i, start)).collect();
    while selected.len() < q {
        let mut best = (usize::MAX, -1.0);
        for i in 0..g {
            if selected.contains(&i) {
                continue;
            }
            if min_dist[i] > best.1 {
                best = (i, min_dist[i]);
            }
        }
        let pick = best.0;
        selected.push(pick);
        for i in 0..g {
            min_dist[i] = min_dist[i].min(angle(i, pick));
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Validates and packages mask parts into a [`KqMask`].
pub fn assemble_mask(
    mode: MaskMode,
    k_masks: Vec<Vec<bool>>,
    q_indices: Vec<usize>,
    seed: u64,
) -> Result<KqMask> {
    if q_indices.is_empty() {
        return Err(Error::InvalidArgument("mask needs at least one q index".into()));
    }
    if q_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("q indices must be sorted and distinct".into()));
    }
    let expected = match mode {
        MaskMode::Separable => 1,
        MaskMode::NonSeparable => q_indices.len(),
    };
    if k_masks.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "{mode:?} mask needs {expected} k-mask(s), got {}",
            k_masks.len()
        )));
    }
    let v = k_masks[0].len();
    for (i, m) in k_masks.iter().enumerate() {
        if m.len() != v {
            return Err(Error::InvalidArgument(format!(
                "k-mask {i} has {} entries, expected {v}",
                m.len()
            )));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::InvalidArgument(format!("k-mask {i} samples no points")));
        }
    }
    Ok(KqMask { mode, q_indices, k_masks, seed })
}

impl KqMask {
    /// Number of sampled q directions.
    pub fn n_q(&self) -> usize {
        self.q_indices.len()
    }

    /// Grid size the k-masks were built for.
    pub fn grid_len(&self) -> usize {
        self.k_masks[0].len()
    }

    /// Total measurement count over all sampled q.
    pub fn n_measurements(&self) -> usize {
        match self.mode {
            MaskMode::Separable => {
                self.k_masks[0].iter().filter(|&&b| b).count() * self.q_indices.len()
            }
            MaskMode::NonSeparable => {
                self.k_masks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum()
            }
        }
    }

    /// k-mask used for the i-th sampled q.
    pub fn k_mask_for(&self, i: usize) -> &[bool] {
        match self.mode {
            MaskMode::Separable => &self.k_masks[0],
            MaskMode::NonSeparable => &self.k_masks[i],
        }
    }

    fn check_volume(&self, v: usize, g: usize) -> Result<()> {
        if self.grid_len() != v {
            return Err(Error::ShapeMismatch(format!(
                "mask grid has {} points, volume has {v}",
                self.grid_len()
            )));
        }
        if let Some(&q) = self.q_indices.iter().find(|&&q| q >= g) {
            return Err(Error::ShapeMismatch(format!(
                "mask samples q index {q}, scheme has only {g} directions"
            )));
        }
        Ok(())
    }

    /// Dense V x G boolean selector (true = sampled entry).
    pub fn dense_selector(&self, v: usize, g: usize) -> Result<Array2<bool>> {
        self.check_volume(v, g)?;
        let mut sel = Array2::from_elem((v, g), false);
        for (i, &q) in self.q_indices.iter().enumerate() {
            for (k, &keep) in self.k_mask_for(i).iter().enumerate() {
                if keep {
                    sel[[k, q]] = true;
                }
            }
        }
        Ok(sel)
    }
}

/// Selects the sampled entries of a k-space volume in mask order.
pub fn apply_mask(mask: &KqMask, f: &ComplexVolume) -> Result<KqMeasurements> {
    mask.check_volume(f.shape.voxels(), f.scheme.len())?;
    let mut values = Vec::with_capacity(mask.n_measurements());
    for (i, &q) in mask.q_indices.iter().enumerate() {
        for (k, &keep) in mask.k_mask_for(i).iter().enumerate() {
            if keep {
                values.push(f.data[[k, q]]);
            }
        }
    }
    Ok(KqMeasurements { mask: mask.clone(), values })
}

/// Scatters measurements back to a zero-filled k-space volume.
pub fn adjoint_mask(
    mask: &KqMask,
    y: &KqMeasurements,
    shape: GridShape,
    scheme: &GradientScheme,
) -> Result<ComplexVolume> {
    mask.check_volume(shape.voxels(), scheme.len())?;
    if y.values.len() != mask.n_measurements() {
        return Err(Error::ShapeMismatch(format!(
            "measurement vector has {} values, mask samples {}",
            y.values.len(),
            mask.n_measurements()
        )));
    }
    let mut data = Array2::default((shape.voxels(), scheme.len()));
    let mut cursor = 0;
    for (i, &q) in mask.q_indices.iter().enumerate() {
        for (k, &keep) in mask.k_mask_for(i).iter().enumerate() {
            if keep {
                data[[k, q]] = y.values[cursor];
                cursor += 1;
            }
        }
    }
    ComplexVolume::new(shape, scheme.clone(), data)
}

/// Builds the zero-filled dense matrix directly (solver fast path).
pub fn zero_filled(mask: &KqMask, y: &KqMeasurements, v: usize, g: usize) -> Result<Array2<Complex64>> {
    mask.check_volume(v, g)?;
    if y.values.len() != mask.n_measurements() {
        return Err(Error::ShapeMismatch(format!(
            "measurement vector has {} values, mask samples {}",
            y.values.len(),
            mask.n_measurements()
        )));
    }
    let mut data = Array2::default((v, g));
    let mut cursor = 0;
    for (i, &q) in mask.q_indices.iter().enumerate() {
        for (k, &keep) in mask.k_mask_for(i).iter().enumerate() {
            if keep {
                data[[k, q]] = y.values[cursor];
                cursor += 1;
            }
        }
    }
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    mode: MaskMode,
    seed: u64,
    q_indices: Vec<usize>,
    /// Run-length encoding of each k-mask: alternating false/true run
    /// lengths, starting with a (possibly zero) false run.
    k_masks_rle: Vec<Vec<usize>>,
    k_len: usize,
}

fn rle_encode(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in mask {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn rle_decode(runs: &[usize], expect_len: usize) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(expect_len);
    let mut value = false;
    for &r in runs {
        mask.extend(std::iter::repeat_n(value, r));
        value = !value;
    }
    if mask.len() != expect_len {
        return Err(Error::MalformedFile(format!(
            "mask run lengths sum to {}, header declares {expect_len}",
            mask.len()
        )));
    }
    Ok(mask)
}

/// Saves a mask as replayable JSON.
pub fn save_mask(path: &Path, mask: &KqMask) -> Result<()> {
    let file = MaskFile {
        mode: mask.mode,
        seed: mask.seed,
        q_indices: mask.q_indices.clone(),
        k_masks_rle: mask.k_masks.iter().map(|m| rle_encode(m)).collect(),
        k_len: mask.grid_len(),
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, &file)?;
    Ok(())
}

/// Loads a mask saved by [`save_mask`].
pub fn load_mask(path: &Path) -> Result<KqMask> {
    let file: MaskFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let k_masks = file
        .k_masks_rle
        .iter()
        .map(|runs| rle_decode(runs, file.k_len))
        .collect::<Result<Vec<_>>>()?;
    assemble_mask(file.mode, k_masks, file.q_indices, file.seed)
}
