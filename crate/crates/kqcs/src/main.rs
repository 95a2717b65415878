//! Command-line driver: phantom generation, mask design, single-solve
//! reconstruction, sweep runs, ODF export, and artifact inspection.
//!
//! Exit codes: 0 on success, 2 on configuration or I/O errors, 3 when a
//! single-solve reconstruction diverges (non-finite objective).

use clap::{Args, Parser, Subcommand, ValueEnum};
use kqcs::angular::build_dictionary;
use kqcs::eval::{export_odf_field, residual_error, run_sweep, SweepSpec};
use kqcs::io::{load_scheme, load_tensor, load_volume, matrix_to_tensor, save_tensor, save_volume, tensor_to_matrix};
use kqcs::phantom::{add_noise, generate_phantom, to_kspace, PhantomSpec};
use kqcs::sampling::{
    apply_mask, assemble_mask, load_mask, make_k_mask_lines, make_k_mask_radial, make_q_subset,
    save_mask, MaskMode, RoundMode,
};
use kqcs::solver::{solve_prior, solve_saas, SolveReport, SolverConfig};
use kqcs::spatial::{SpatialTransform, TransformKind};
use kqcs::types::{GradientScheme, GridShape};
use kqcs::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "kqcs", version, about = "Joint (k,q)-space compressed-sensing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic crossing-fiber phantom
    Phantom(PhantomArgs),
    /// Build and save a joint (k,q) sampling mask
    Mask(MaskArgs),
    /// Reconstruct coefficients from retrospectively undersampled data
    Reconstruct(ReconstructArgs),
    /// Run a residual-vs-sampling sweep from a TOML/JSON spec
    Sweep(SweepArgs),
    /// Estimate ODFs from saved coefficients and render a glyph field
    Odf(OdfArgs),
    /// Summarize a saved artifact (tensor, mask, scheme, sweep CSV, spec)
    Info(InfoArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Slice edge length in voxels
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Number of gradient directions
    #[arg(long, default_value_t = 64)]
    ndirs: usize,
    /// b-value in s/mm^2
    #[arg(long, default_value_t = 3000.0)]
    bval: f64,
    /// Signal-to-noise ratio; pass `inf` for a noiseless phantom
    #[arg(long, default_value_t = 30.0)]
    snr: f64,
    /// Noise seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output prefix; writes <out>_clean.*, <out>_noisy.*, <out>_truth.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy)]
enum KSchemeArg {
    Radial,
    Lines,
}

#[derive(ValueEnum, Clone, Copy)]
enum MaskModeArg {
    #[value(alias = "sep")]
    Separable,
    #[value(alias = "nonsep")]
    Nonseparable,
}

#[derive(ValueEnum, Clone, Copy)]
enum RoundArg {
    Nearest,
    Floor,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModelArg {
    Saas,
    Prior,
}

#[derive(ValueEnum, Clone, Copy)]
enum SpatialArg {
    Haar,
    Tv,
}

impl From<SpatialArg> for TransformKind {
    fn from(s: SpatialArg) -> Self {
        match s {
            SpatialArg::Haar => TransformKind::Haar,
            SpatialArg::Tv => TransformKind::Gradient,
        }
    }
}

#[derive(Args)]
struct MaskArgs {
    /// Grid edge length (x)
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Grid length along y (defaults to --size)
    #[arg(long)]
    size_y: Option<usize>,
    /// Number of gradient directions in the target scheme
    #[arg(long, default_value_t = 64)]
    ndirs: usize,
    /// Fraction of k-space retained per direction, in (0, 1]
    #[arg(long)]
    k_frac: f64,
    /// Fraction of gradient directions retained, in (0, 1]
    #[arg(long)]
    q_frac: f64,
    /// k-space sampling pattern
    #[arg(long, value_enum, default_value_t = KSchemeArg::Radial)]
    k_scheme: KSchemeArg,
    /// Shared k-mask across directions (separable) or one per direction
    #[arg(long, value_enum, default_value_t = MaskModeArg::Separable)]
    mask_mode: MaskModeArg,
    /// How fractional sample counts round
    #[arg(long, value_enum, default_value_t = RoundArg::Nearest)]
    round: RoundArg,
    /// Mask seed; the direction subset uses seed + 100, and nonseparable
    /// per-direction masks use seed, seed + 1, ...
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output mask JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Input volume prefix (as written by `phantom`)
    #[arg(long)]
    data: PathBuf,
    /// Mask JSON path (as written by `mask`)
    #[arg(long)]
    mask: PathBuf,
    /// Reconstruction model
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Sparsity weight (SAAS weight, or lambda1 for prior)
    #[arg(long)]
    lambda: f64,
    /// Second prior weight; defaults to --lambda
    #[arg(long)]
    lambda2: Option<f64>,
    /// Spatial transform
    #[arg(long, value_enum, default_value_t = SpatialArg::Tv)]
    spatial: SpatialArg,
    /// Angular dictionary size
    #[arg(long, default_value_t = 97)]
    angular_atoms: usize,
    /// Dictionary concentration parameters, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 8.0])]
    angular_kappas: Vec<f64>,
    /// Initial smoothing weight rho
    #[arg(long, default_value_t = 1.0)]
    rho0: f64,
    /// Continuation multiplier for rho
    #[arg(long, default_value_t = 2.0)]
    rho_factor: f64,
    /// Continuation cap for rho
    #[arg(long, default_value_t = 256.0)]
    rho_max: f64,
    /// Relative objective-stall tolerance
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Iteration budget
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Manual stepsize override (replaces the computed bound; expert use)
    #[arg(long)]
    stepsize: Option<f64>,
    /// Output prefix; writes <out>_coeffs.{json,bin} and <out>_report.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec file (.toml or .json)
    #[arg(long)]
    spec: PathBuf,
    /// Output CSV; appends and resumes if it already exists
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct OdfArgs {
    /// Coefficient tensor path (as written by `reconstruct`)
    #[arg(long)]
    coeffs: PathBuf,
    /// Number of gradient directions the dictionary was built for
    #[arg(long, default_value_t = 64)]
    ndirs: usize,
    /// b-value of the scheme
    #[arg(long, default_value_t = 3000.0)]
    bval: f64,
    /// Angular dictionary size
    #[arg(long, default_value_t = 97)]
    angular_atoms: usize,
    /// Dictionary concentration parameters, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 8.0])]
    angular_kappas: Vec<f64>,
    /// Output prefix; writes <out>.{json,bin} (ODF samples) and <out>.svg
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InfoArgs {
    /// Artifact to summarize
    path: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Odf(a) => cmd_odf(a),
        Command::Info(a) => cmd_info(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        let code = match e {
            Error::NonFiniteObjective { .. } => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn cmd_phantom(a: PhantomArgs) -> Result<()> {
    let scheme = GradientScheme::fibonacci(a.ndirs, a.bval)?;
    let spec = PhantomSpec::default_crossing(a.size, scheme, a.snr, a.seed)?;
    let (clean, truth) = generate_phantom(&spec)?;
    let noisy = add_noise(&clean, a.snr, a.seed)?;
    let clean_prefix = suffixed(&a.out, "_clean");
    let noisy_prefix = suffixed(&a.out, "_noisy");
    save_volume(&clean_prefix, &clean)?;
    save_volume(&noisy_prefix, &noisy)?;

    #[derive(Serialize)]
    struct TruthFile<'a> {
        shape: Vec<usize>,
        directions: &'a Vec<Vec<[f64; 3]>>,
    }
    let truth_path = suffixed(&a.out, "_truth.json");
    let file = std::fs::File::create(&truth_path)?;
    serde_json::to_writer_pretty(
        file,
        &TruthFile { shape: spec.shape.dims(), directions: &truth },
    )?;
    println!(
        "phantom {}x{} G={} snr={} -> {}* {}* {}",
        a.size,
        a.size,
        a.ndirs,
        a.snr,
        clean_prefix.display(),
        noisy_prefix.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let shape = GridShape::new_2d(a.size, a.size_y.unwrap_or(a.size))?;
    let scheme = GradientScheme::fibonacci(a.ndirs, 3000.0)?;
    let round = match a.round {
        RoundArg::Nearest => RoundMode::Nearest,
        RoundArg::Floor => RoundMode::Floor,
    };
    let q_indices = make_q_subset(&scheme, a.q_frac, a.seed + 100, round)?;
    let make_k = |seed: u64| match a.k_scheme {
        KSchemeArg::Radial => make_k_mask_radial(&shape, a.k_frac, seed, round),
        KSchemeArg::Lines => make_k_mask_lines(&shape, a.k_frac, seed, round),
    };
    let (mode, k_masks) = match a.mask_mode {
        MaskModeArg::Separable => (MaskMode::Separable, vec![make_k(a.seed)?]),
        MaskModeArg::Nonseparable => {
            let masks: Result<Vec<_>> =
                (0..q_indices.len()).map(|i| make_k(a.seed + i as u64)).collect();
            (MaskMode::NonSeparable, masks?)
        }
    };
    let mask = assemble_mask(mode, k_masks, q_indices, a.seed)?;
    let total = shape.voxels() * a.ndirs;
    let kept = mask.n_measurements();
    save_mask(&a.out, &mask)?;
    println!(
        "mask {}x{} G={} directions_kept={} measurements={} rate={:.4} -> {}",
        shape.nx,
        shape.ny,
        a.ndirs,
        mask.n_q(),
        kept,
        kept as f64 / total as f64,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportFile {
    model: String,
    spatial: String,
    lambda: f64,
    lambda2: f64,
    iterations_run: usize,
    converged: bool,
    final_l: f64,
    final_rho: f64,
    residual: f64,
    segment_starts: Vec<usize>,
    objective_trace: Vec<f64>,
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let vol = load_volume(&a.data)?;
    let mask = load_mask(&a.mask)?;
    let kspace = to_kspace(&vol)?;
    let meas = apply_mask(&mask, &kspace)?;
    let dict = build_dictionary(&vol.scheme, a.angular_atoms, &a.angular_kappas)?;
    let spatial = SpatialTransform::new(a.spatial.into(), vol.shape)?;
    let lambda2 = a.lambda2.unwrap_or(a.lambda);
    let cfg = SolverConfig {
        lambda: a.lambda,
        lambda2: match a.model {
            ModelArg::Saas => 0.0,
            ModelArg::Prior => lambda2,
        },
        rho_init: a.rho0,
        rho_factor: a.rho_factor,
        rho_max: a.rho_max,
        epsilon: a.eps,
        max_iters: a.max_iters,
        stepsize_override: a.stepsize,
    };
    let report = match a.model {
        ModelArg::Saas => solve_saas(&meas, &mask, &dict, &spatial, &cfg)?,
        ModelArg::Prior => solve_prior(&meas, &mask, &dict, &spatial, &cfg)?,
    };
    let recon = dict.synthesize_signal(vol.shape, &report.a_hat)?;
    let residual = residual_error(&recon, &vol)?;

    let coeffs_prefix = suffixed(&a.out, "_coeffs");
    save_tensor(&coeffs_prefix, &matrix_to_tensor(&vol.shape, &report.a_hat)?)?;
    let report_path = suffixed(&a.out, "_report.json");
    let file = std::fs::File::create(&report_path)?;
    serde_json::to_writer_pretty(
        file,
        &ReportFile {
            model: match a.model {
                ModelArg::Saas => "saas".into(),
                ModelArg::Prior => "prior".into(),
            },
            spatial: match a.spatial {
                SpatialArg::Haar => "haar".into(),
                SpatialArg::Tv => "gradient".into(),
            },
            lambda: a.lambda,
            lambda2: cfg.lambda2,
            iterations_run: report.iterations_run,
            converged: report.converged,
            final_l: report.final_l,
            final_rho: report.final_rho,
            residual,
            segment_starts: report.segment_starts.clone(),
            objective_trace: report.objective_trace.clone(),
        },
    )?;
    println!(
        "reconstruct model={} residual={:.6e} iterations={} converged={} -> {}* {}",
        match a.model {
            ModelArg::Saas => "saas",
            ModelArg::Prior => "prior",
        },
        residual,
        report.iterations_run,
        report.converged,
        coeffs_prefix.display(),
        report_path.display()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let spec = SweepSpec::from_path(&a.spec)?;
    let result = run_sweep(&spec, Some(&a.csv))?;
    println!(
        "sweep config={} records={} -> {}",
        result.config_hash,
        result.records.len(),
        a.csv.display()
    );
    Ok(())
}

fn cmd_odf(a: OdfArgs) -> Result<()> {
    let tensor = load_tensor(&a.coeffs)?;
    let (shape, a_hat) = tensor_to_matrix(&tensor)?;
    let scheme = GradientScheme::fibonacci(a.ndirs, a.bval)?;
    let dict = build_dictionary(&scheme, a.angular_atoms, &a.angular_kappas)?;
    if a_hat.ncols() != dict.n_atoms() {
        return Err(Error::ShapeMismatch(format!(
            "coefficient tensor has {} columns, dictionary has {} atoms",
            a_hat.ncols(),
            dict.n_atoms()
        )));
    }
    // Wrap the stored coefficients in a minimal report for the exporter.
    let report = SolveReport {
        shape,
        a_hat,
        objective_trace: Vec::new(),
        iterations_run: 0,
        final_l: f64::NAN,
        converged: true,
        final_rho: f64::NAN,
        segment_starts: Vec::new(),
    };
    export_odf_field(&report, &dict, &a.out)?;
    println!(
        "odf {} voxels -> {}.json/.bin {}.svg",
        shape.voxels(),
        a.out.display(),
        a.out.display()
    );
    Ok(())
}

fn cmd_info(a: InfoArgs) -> Result<()> {
    let path = &a.path;
    std::fs::metadata(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => {
            if let Ok(mask) = load_mask(path) {
                println!(
                    "mask mode={:?} seed={} directions_kept={} grid_len={} measurements={}",
                    mask.mode,
                    mask.seed,
                    mask.n_q(),
                    mask.grid_len(),
                    mask.n_measurements()
                );
                return Ok(());
            }
            if let Ok(t) = load_tensor(path) {
                let dtype = match t.data {
                    kqcs::io::TensorData::F64(_) => "f64",
                    kqcs::io::TensorData::C128(_) => "c128",
                };
                println!("tensor dtype={dtype} shape={:?} elements={}", t.shape, t.numel());
                return Ok(());
            }
            Err(Error::Unsupported(format!(
                "{} is neither a mask nor a tensor header",
                path.display()
            )))
        }
        "csv" => {
            let text = std::fs::read_to_string(path)?;
            let mut lines = text.lines();
            let header = lines.next().unwrap_or("");
            if header.starts_with("schema_version,config_hash") {
                let rows = lines.clone().count();
                let hashes: std::collections::BTreeSet<&str> =
                    lines.filter_map(|l| l.split(',').nth(1)).collect();
                println!(
                    "sweep csv rows={} configs={:?}",
                    rows,
                    hashes.into_iter().collect::<Vec<_>>()
                );
                Ok(())
            } else {
                let scheme = load_scheme(path)?;
                println!("scheme directions={} b={}", scheme.len(), scheme.b_value());
                Ok(())
            }
        }
        "toml" => {
            let spec = SweepSpec::from_path(path)?;
            let cells = spec.k_fractions.len()
                * spec.q_fractions.len()
                * spec.n_seeds
                * spec.models.len()
                * spec.spatial.len();
            println!(
                "sweep spec config={} cells={} phantom={}x{} G={}",
                spec.config_hash(),
                cells,
                spec.phantom.size,
                spec.phantom.size,
                spec.phantom.n_dirs
            );
            Ok(())
        }
        _ => Err(Error::Unsupported(format!(
            "no summary available for {}",
            path.display()
        ))),
    }
}
