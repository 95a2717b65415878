//! Experiment harness: the residual metric, a seeded sweep over sampling
//! cells comparing the two models, and ODF field export.
//!
//! A sweep cell is one (k fraction, q fraction, mask seed) triple. For each
//! cell the harness builds the seeded masks (q-subset seed is the mask seed
//! plus 100), retrospectively subsamples the phantom's k-space, solves every
//! requested model/spatial/lambda combination, and records the best-lambda
//! residual per model and spatial kind. Rows append to a versioned CSV as
//! soon as they are computed, keyed by (model, spatial, k_frac, q_frac,
//! seed), so an interrupted sweep resumes where it stopped; every row echoes
//! the mask seed and a hash of the result-determining configuration.

use crate::angular::{build_dictionary, AngularDictionary};
use crate::error::{Error, Result};
use crate::io::{matrix_to_tensor, save_tensor};
use crate::phantom::{add_noise, generate_phantom, to_kspace, PhantomSpec};
use crate::sampling::{
    apply_mask, assemble_mask, make_k_mask_radial, make_q_subset, KqMeasurements, MaskMode,
    RoundMode,
};
use crate::solver::{solve_prior, solve_saas, SolveReport, SolverConfig};
use crate::spatial::{SpatialTransform, TransformKind};
use crate::types::{DiffusionVolume, GradientScheme, GridShape};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// CSV schema version, echoed in every row.
pub const SWEEP_SCHEMA_VERSION: u32 = 1;

const CSV_HEADER: [&str; 12] = [
    "schema_version",
    "config_hash",
    "model",
    "spatial",
    "k_frac",
    "q_frac",
    "seed",
    "best_lambda",
    "residual",
    "iterations",
    "converged",
    "wall_time_s",
];

/// Squared relative reconstruction error ||recon - truth||_F^2 / ||truth||_F^2.
pub fn residual_error(recon: &DiffusionVolume, truth: &DiffusionVolume) -> Result<f64> {
    if recon.shape != truth.shape || recon.scheme != truth.scheme {
        return Err(Error::ShapeMismatch(
            "reconstruction and reference volumes disagree in grid or scheme".into(),
        ));
    }
    let den: f64 = truth.data.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference volume has zero norm".into()));
    }
    let num: f64 = (&recon.data - &truth.data).iter().map(|x| x * x).sum();
    Ok(num / den)
}

/// Model selector for sweep configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepModel {
    Saas,
    Prior,
}

impl fmt::Display for SweepModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepModel::Saas => "saas",
            SweepModel::Prior => "prior",
        })
    }
}

fn kind_name(kind: TransformKind) -> &'static str {
    match kind {
        TransformKind::Haar => "haar",
        TransformKind::Gradient => "gradient",
    }
}

/// Phantom settings used by a sweep. `snr = inf` means noiseless.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub size: usize,
    pub n_dirs: usize,
    pub b_value: f64,
    pub snr: f64,
    pub noise_seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { size: 32, n_dirs: 64, b_value: 3000.0, snr: 30.0, noise_seed: 7 }
    }
}

/// Angular dictionary settings used by a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    pub n_atoms: usize,
    pub kappas: Vec<f64>,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig { n_atoms: 97, kappas: vec![2.0, 4.0, 8.0] }
    }
}

/// Solver settings shared by all sweep cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverKnobs {
    pub epsilon: f64,
    pub max_iters: usize,
    pub rho_init: f64,
    pub rho_factor: f64,
    pub rho_max: f64,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        SolverKnobs { epsilon: 1e-6, max_iters: 400, rho_init: 1.0, rho_factor: 2.0, rho_max: 256.0 }
    }
}

/// Full sweep description, loadable from TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub k_fractions: Vec<f64>,
    pub q_fractions: Vec<f64>,
    /// Lambda grid for SAAS; also the Prior grid unless overridden.
    pub lambda_grid: Vec<f64>,
    /// Optional separate Prior grid; each entry ties lambda1 = lambda2.
    #[serde(default)]
    pub prior_lambda_grid: Option<Vec<f64>>,
    pub models: Vec<SweepModel>,
    #[serde(default = "default_spatial")]
    pub spatial: Vec<TransformKind>,
    pub n_seeds: usize,
    /// First mask seed; cells use seed0, seed0+1, ...
    #[serde(default = "default_seed0")]
    pub seed0: u64,
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub solver: SolverKnobs,
    /// Worker threads for the per-cell solve queue; None = library default.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

fn default_spatial() -> Vec<TransformKind> {
    vec![TransformKind::Gradient]
}

fn default_seed0() -> u64 {
    1
}

impl SweepSpec {
    /// Parses a spec from a .toml or .json file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: SweepSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?,
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(Error::Unsupported(format!(
                    "sweep spec {} must be .toml or .json",
                    path.display()
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |v: &[f64]| v.iter().all(|&f| f > 0.0 && f <= 1.0);
        if self.k_fractions.is_empty() || self.q_fractions.is_empty() {
            return Err(Error::InvalidArgument("fraction lists must be nonempty".into()));
        }
        if !frac_ok(&self.k_fractions) || !frac_ok(&self.q_fractions) {
            return Err(Error::InvalidArgument("sampling fractions must lie in (0, 1]".into()));
        }
        for grid in [Some(&self.lambda_grid), self.prior_lambda_grid.as_ref()].into_iter().flatten()
        {
            if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::InvalidArgument("lambda grids must be nonempty and positive".into()));
            }
        }
        if self.models.is_empty() || self.spatial.is_empty() {
            return Err(Error::InvalidArgument("model and spatial lists must be nonempty".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidArgument("n_seeds must be >= 1".into()));
        }
        let distinct = |v: &[f64]| {
            let mut bits: Vec<u64> = v.iter().map(|f| f.to_bits()).collect();
            bits.sort_unstable();
            bits.windows(2).all(|w| w[0] != w[1])
        };
        if !distinct(&self.k_fractions) || !distinct(&self.q_fractions) {
            return Err(Error::InvalidArgument("fraction lists must not repeat values".into()));
        }
        if !(self.phantom.snr > 0.0) {
            return Err(Error::InvalidArgument("phantom snr must be > 0".into()));
        }
        Ok(())
    }

    /// Hash of the result-determining configuration (grids, phantom,
    /// dictionary, solver), excluding the cell lists so a sweep can be
    /// extended with more cells and still resume into the same CSV.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct HashInput<'a> {
            lambda_grid: &'a [f64],
            prior_lambda_grid: &'a Option<Vec<f64>>,
            phantom: &'a PhantomConfig,
            dictionary: &'a DictionaryConfig,
            solver: &'a SolverKnobs,
        }
        let canonical = serde_json::to_string(&HashInput {
            lambda_grid: &self.lambda_grid,
            prior_lambda_grid: &self.prior_lambda_grid,
            phantom: &self.phantom,
            dictionary: &self.dictionary,
            solver: &self.solver,
        })
        .expect("hash input serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// One sweep record: the best-lambda result for a model and spatial kind
/// on one sampling cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub model: SweepModel,
    pub spatial: TransformKind,
    pub k_frac: f64,
    pub q_frac: f64,
    /// Mask seed (the q-subset uses seed + 100).
    pub seed: u64,
    pub best_lambda: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl SweepRecord {
    fn key(&self) -> RecordKey {
        (self.model, self.spatial, self.k_frac.to_bits(), self.q_frac.to_bits(), self.seed)
    }

    fn to_csv_row(&self, hash: &str) -> Vec<String> {
        vec![
            SWEEP_SCHEMA_VERSION.to_string(),
            hash.to_string(),
            self.model.to_string(),
            kind_name(self.spatial).to_string(),
            format!("{}", self.k_frac),
            format!("{}", self.q_frac),
            self.seed.to_string(),
            format!("{:e}", self.best_lambda),
            format!("{:e}", self.residual),
            self.iterations.to_string(),
            self.converged.to_string(),
            format!("{:.3}", self.wall_time_s),
        ]
    }
}

type RecordKey = (SweepModel, TransformKind, u64, u64, u64);

/// All records of a sweep, in canonical cell order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config_hash: String,
    pub records: Vec<SweepRecord>,
}

fn parse_csv_row(row: &csv::StringRecord, path: &Path) -> Result<(String, SweepRecord)> {
    let field = |i: usize| -> Result<&str> {
        row.get(i).ok_or_else(|| {
            Error::MalformedFile(format!("{}: row has {} fields", path.display(), row.len()))
        })
    };
    let bad = |what: &str| Error::MalformedFile(format!("{}: bad {what} field", path.display()));
    let version: u32 = field(0)?.parse().map_err(|_| bad("schema_version"))?;
    if version != SWEEP_SCHEMA_VERSION {
        return Err(Error::Unsupported(format!(
            "{}: sweep CSV schema v{version}, this build reads v{SWEEP_SCHEMA_VERSION}",
            path.display()
        )));
    }
    let hash = field(1)?.to_string();
    let model = match field(2)? {
        "saas" => SweepModel::Saas,
        "prior" => SweepModel::Prior,
        _ => return Err(bad("model")),
    };
    let spatial = match field(3)? {
        "haar" => TransformKind::Haar,
        "gradient" => TransformKind::Gradient,
        _ => return Err(bad("spatial")),
    };
    let record = SweepRecord {
        model,
        spatial,
        k_frac: field(4)?.parse().map_err(|_| bad("k_frac"))?,
        q_frac: field(5)?.parse().map_err(|_| bad("q_frac"))?,
        seed: field(6)?.parse().map_err(|_| bad("seed"))?,
        best_lambda: field(7)?.parse().map_err(|_| bad("best_lambda"))?,
        residual: field(8)?.parse().map_err(|_| bad("residual"))?,
        iterations: field(9)?.parse().map_err(|_| bad("iterations"))?,
        converged: field(10)?.parse().map_err(|_| bad("converged"))?,
        wall_time_s: field(11)?.parse().map_err(|_| bad("wall_time_s"))?,
    };
    Ok((hash, record))
}

/// Reads records from an existing sweep CSV, requiring the config hash to
/// match (a hash mismatch means the file belongs to a different sweep).
fn load_existing_rows(path: &Path, hash: &str) -> Result<Vec<SweepRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let got = reader.headers()?;
        if got.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::MalformedFile(format!(
                "{}: unexpected sweep CSV header",
                path.display()
            )));
        }
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let (row_hash, record) = parse_csv_row(&row?, path)?;
        if row_hash != hash {
            return Err(Error::InvalidArgument(format!(
                "{}: holds rows for config {row_hash}, current config is {hash}; \
                 use a fresh CSV path",
                path.display()
            )));
        }
        out.push(record);
    }
    Ok(out)
}

struct CellInputs {
    reference: DiffusionVolume,
    kspace: crate::types::ComplexVolume,
    dict: AngularDictionary,
    transforms: Vec<(TransformKind, SpatialTransform)>,
}

fn prepare_inputs(spec: &SweepSpec) -> Result<CellInputs> {
    let scheme = GradientScheme::fibonacci(spec.phantom.n_dirs, spec.phantom.b_value)?;
    let pspec =
        PhantomSpec::default_crossing(spec.phantom.size, scheme.clone(), spec.phantom.snr, 0)?;
    let (clean, _) = generate_phantom(&pspec)?;
    let reference = add_noise(&clean, spec.phantom.snr, spec.phantom.noise_seed)?;
    let kspace = to_kspace(&reference)?;
    let dict = build_dictionary(&scheme, spec.dictionary.n_atoms, &spec.dictionary.kappas)?;
    let shape = reference.shape;
    let mut transforms = Vec::new();
    for &kind in &spec.spatial {
        if !transforms.iter().any(|(k, _)| *k == kind) {
            transforms.push((kind, SpatialTransform::new(kind, shape)?));
        }
    }
    Ok(CellInputs { reference, kspace, dict, transforms })
}

/// Runs the sweep, appending finished rows to `csv_path` (if given) and
/// resuming any rows already present there. Solver divergence on a cell is
/// recorded as an infinite residual, not a sweep failure.
pub fn run_sweep(spec: &SweepSpec, csv_path: Option<&Path>) -> Result<SweepResult> {
    spec.validate()?;
    let hash = spec.config_hash();
    let inputs = prepare_inputs(spec)?;
    let shape = inputs.reference.shape;
    let scheme = inputs.reference.scheme.clone();

    let mut existing: Vec<SweepRecord> = Vec::new();
    let mut writer = match csv_path {
        Some(path) => {
            let existing_len = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
            if existing_len > 0 {
                existing = load_existing_rows(path, &hash)?;
            }
            let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            if existing_len == 0 {
                w.write_record(CSV_HEADER)?;
                w.flush()?;
            }
            Some(w)
        }
        None => None,
    };
    let done: HashSet<RecordKey> = existing.iter().map(|r| r.key()).collect();
    let by_key: std::collections::HashMap<RecordKey, SweepRecord> =
        existing.into_iter().map(|r| (r.key(), r)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let saas_grid = spec.lambda_grid.clone();
    let prior_grid = spec.prior_lambda_grid.clone().unwrap_or_else(|| spec.lambda_grid.clone());

    let mut records = Vec::new();
    for &kf in &spec.k_fractions {
        for &qf in &spec.q_fractions {
            for seed in spec.seed0..spec.seed0 + spec.n_seeds as u64 {
                // Cell combos still to compute for this (kf, qf, seed).
                let mut pending: Vec<(SweepModel, TransformKind)> = Vec::new();
                for &model in &spec.models {
                    for &kind in &spec.spatial {
                        let key = (model, kind, kf.to_bits(), qf.to_bits(), seed);
                        if !done.contains(&key) {
                            pending.push((model, kind));
                        }
                    }
                }
                let mut computed: std::collections::HashMap<(SweepModel, TransformKind), SweepRecord> =
                    if pending.is_empty() {
                        Default::default()
                    } else {
                        let km = make_k_mask_radial(&shape, kf, seed, RoundMode::Nearest)?;
                        let qs = make_q_subset(&scheme, qf, seed + 100, RoundMode::Nearest)?;
                        let mask = assemble_mask(MaskMode::Separable, vec![km], qs, seed)?;
                        let meas = apply_mask(&mask, &inputs.kspace)?;
                        // One job per (model, spatial, lambda); the queue is
                        // the only parallel section, so CSV appends below
                        // stay serialized in canonical order.
                        let mut jobs: Vec<(SweepModel, TransformKind, f64)> = Vec::new();
                        for &(model, kind) in &pending {
                            let grid = match model {
                                SweepModel::Saas => &saas_grid,
                                SweepModel::Prior => &prior_grid,
                            };
                            for &lam in grid {
                                jobs.push((model, kind, lam));
                            }
                        }
                        let outcomes: Vec<(SweepModel, TransformKind, f64, Option<(f64, usize, bool)>, f64)> =
                            pool.install(|| {
                                jobs.par_iter()
                                    .map(|&(model, kind, lam)| {
                                        let spatial = &inputs
                                            .transforms
                                            .iter()
                                            .find(|(k, _)| *k == kind)
                                            .expect("transform prepared")
                                            .1;
                                        let t0 = Instant::now();
                                        let solved = solve_cell(
                                            model,
                                            lam,
                                            &meas,
                                            &mask,
                                            &inputs,
                                            spatial,
                                            &spec.solver,
                                        );
                                        let wall = t0.elapsed().as_secs_f64();
                                        solved.map(|outcome| (model, kind, lam, outcome, wall))
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })?;
                        let mut map = std::collections::HashMap::new();
                        for &(model, kind) in &pending {
                            let mut best: Option<(f64, f64, usize, bool)> = None;
                            let mut wall_total = 0.0;
                            for &(m, k, lam, ref outcome, wall) in &outcomes {
                                if m != model || k != kind {
                                    continue;
                                }
                                wall_total += wall;
                                if let Some((resid, iters, conv)) = *outcome {
                                    if best.map_or(true, |(r, ..)| resid < r) {
                                        best = Some((resid, lam, iters, conv));
                                    }
                                }
                            }
                            let (residual, best_lambda, iterations, converged) = match best {
                                Some((r, l, i, c)) => (r, l, i, c),
                                None => (f64::INFINITY, f64::NAN, 0, false),
                            };
                            map.insert(
                                (model, kind),
                                SweepRecord {
                                    model,
                                    spatial: kind,
                                    k_frac: kf,
                                    q_frac: qf,
                                    seed,
                                    best_lambda,
                                    residual,
                                    iterations,
                                    converged,
                                    wall_time_s: wall_total,
                                },
                            );
                        }
                        map
                    };
                for &model in &spec.models {
                    for &kind in &spec.spatial {
                        let key = (model, kind, kf.to_bits(), qf.to_bits(), seed);
                        let record = if let Some(r) = by_key.get(&key) {
                            r.clone()
                        } else {
                            let r = computed
                                .remove(&(model, kind))
                                .expect("pending cell was computed");
                            if let Some(w) = writer.as_mut() {
                                w.write_record(r.to_csv_row(&hash))?;
                                w.flush()?;
                            }
                            r
                        };
                        records.push(record);
                    }
                }
            }
        }
    }
    Ok(SweepResult { config_hash: hash, records })
}

/// Solves one (model, lambda) job; divergence maps to Ok(None).
fn solve_cell(
    model: SweepModel,
    lam: f64,
    meas: &KqMeasurements,
    mask: &crate::sampling::KqMask,
    inputs: &CellInputs,
    spatial: &SpatialTransform,
    knobs: &SolverKnobs,
) -> Result<Option<(f64, usize, bool)>> {
    let cfg = SolverConfig {
        lambda: lam,
        lambda2: if model == SweepModel::Prior { lam } else { 0.0 },
        rho_init: knobs.rho_init,
        rho_factor: knobs.rho_factor,
        rho_max: knobs.rho_max,
        epsilon: knobs.epsilon,
        max_iters: knobs.max_iters,
        stepsize_override: None,
    };
    let solved = match model {
        SweepModel::Saas => solve_saas(meas, mask, &inputs.dict, spatial, &cfg),
        SweepModel::Prior => solve_prior(meas, mask, &inputs.dict, spatial, &cfg),
    };
    let report = match solved {
        Ok(r) => r,
        Err(Error::NonFiniteObjective { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let rec = inputs.dict.synthesize_signal(spatial.shape, &report.a_hat)?;
    let resid = residual_error(&rec, &inputs.reference)?;
    Ok(Some((resid, report.iterations_run, report.converged)))
}

/// Writes the per-voxel ODF samples (grid x P tensor at `<prefix>.json/.bin`)
/// and an SVG glyph grid (`<prefix>.svg`). 2D grids only.
pub fn export_odf_field(
    report: &SolveReport,
    dict: &AngularDictionary,
    prefix: &Path,
) -> Result<()> {
    let shape = report.shape;
    if shape.ndim() != 2 {
        return Err(Error::Unsupported("ODF glyph export renders 2D slices only".into()));
    }
    let odf = dict.estimate_odf(&report.a_hat)?;
    save_tensor(prefix, &matrix_to_tensor(&shape, &odf)?)?;
    let svg = render_odf_svg(shape, &odf);
    let svg_path = prefix.with_extension("svg");
    std::fs::File::create(&svg_path)?.write_all(svg.as_bytes())?;
    Ok(())
}

/// Renders one polar glyph per voxel; radii follow the ODF samples over the
/// half circle (mirrored to the full circle), normalized per voxel. Voxels
/// whose ODF row is all zero render no glyph.
pub fn render_odf_svg(shape: GridShape, odf: &ndarray::Array2<f64>) -> String {
    let (nx, ny) = (shape.nx, shape.ny);
    let p_samples = odf.ncols();
    let cell = 12.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" \
         viewBox=\"0 0 {:.0} {:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        nx as f64 * cell,
        ny as f64 * cell,
        nx as f64 * cell,
        ny as f64 * cell
    ));
    for y in 0..ny {
        for x in 0..nx {
            let v = x + nx * y;
            let row = odf.row(v);
            let vmax = row.iter().cloned().fold(0.0f64, f64::max);
            if vmax <= 0.0 {
                continue;
            }
            let cx = (x as f64 + 0.5) * cell;
            let cy = (y as f64 + 0.5) * cell;
            let mut points = String::new();
            // Half-circle samples mirrored to a closed antipodal glyph.
            for half in 0..2 {
                for p in 0..p_samples {
                    let theta = std::f64::consts::PI * (p as f64 / p_samples as f64 + half as f64);
                    let r = 0.45 * cell * row[p] / vmax;
                    let px = cx + r * theta.cos();
                    let py = cy - r * theta.sin();
                    points.push_str(&format!("{px:.2},{py:.2} "));
                }
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"#6f9fd8\" fill-opacity=\"0.6\" \
                 stroke=\"#1c3d5f\" stroke-width=\"0.4\"/>\n",
                points.trim_end()
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
