//! Synthetic crossing-fiber phantom on a 2D slice.
//!
//! Each fiber is a straight tube (segment + radius, in voxel units) with a
//! cylindrically symmetric diffusion tensor along its direction. A voxel
//! covered by fibers e_1..e_m emits, with equal volume fractions f = 1/m,
//!
//!   S(g) = S0 * sum_i f * exp(-b (radial + (axial - radial) (g . e_i)^2)),
//!
//! and an uncovered voxel emits the isotropic signal
//! exp(-b (axial + 2 radial) / 3) with the same mean diffusivity. S0 = 1.
//! Rician noise at a given SNR is complex Gaussian noise of per-component
//! std sigma = S0/SNR added in the image domain followed by the magnitude.

use crate::error::{Error, Result};
use crate::fourier::fft_per_direction;
use crate::types::{ComplexVolume, DiffusionVolume, GradientScheme, GridShape};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Straight fiber tract: a segment in slice coordinates (voxel units), a
/// tube radius, and the 3D diffusion direction.
#[derive(Debug, Clone)]
pub struct Fiber {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub radius: f64,
    pub direction: [f64; 3],
}

impl Fiber {
    pub fn new(start: [f64; 2], end: [f64; 2], radius: f64, direction: [f64; 3]) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("fiber radius {radius} must be positive")));
        }
        let len = (0..2).map(|i| (end[i] - start[i]).powi(2)).sum::<f64>().sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidArgument("fiber endpoints must be distinct".into()));
        }
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "fiber direction norm {norm} is not 1"
            )));
        }
        Ok(Fiber { start, end, radius, direction })
    }

    /// Fiber whose direction is the in-plane segment direction.
    pub fn in_plane(start: [f64; 2], end: [f64; 2], radius: f64) -> Result<Self> {
        let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
        let len = dx.hypot(dy);
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidArgument("fiber endpoints must be distinct".into()));
        }
        Fiber::new(start, end, radius, [dx / len, dy / len, 0.0])
    }

    /// Distance from a slice point to the fiber segment.
    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let ab = [self.end[0] - self.start[0], self.end[1] - self.start[1]];
        let ap = [p[0] - self.start[0], p[1] - self.start[1]];
        let denom = ab[0] * ab[0] + ab[1] * ab[1];
        let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / denom).clamp(0.0, 1.0);
        let q = [self.start[0] + t * ab[0], self.start[1] + t * ab[1]];
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

/// Full phantom description; `snr = f64::INFINITY` means noiseless.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub shape: GridShape,
    pub scheme: GradientScheme,
    pub fibers: Vec<Fiber>,
    /// Axial diffusivity in mm^2/s.
    pub axial: f64,
    /// Radial diffusivity in mm^2/s.
    pub radial: f64,
    pub snr: f64,
    pub seed: u64,
}

pub const DEFAULT_AXIAL: f64 = 1.7e-3;
pub const DEFAULT_RADIAL: f64 = 0.3e-3;

impl PhantomSpec {
    /// Default crossing geometry: horizontal and vertical tracts crossing
    /// at the slice center plus a shorter diagonal tract through it, scaled
    /// from the reference 32x32 layout to the requested square size.
    pub fn default_crossing(size: usize, scheme: GradientScheme, snr: f64, seed: u64) -> Result<Self> {
        let shape = GridShape::new_2d(size, size)?;
        let s = size as f64 / 32.0;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = [16.0 * s, 16.0 * s];
        let fibers = vec![
            Fiber::new([3.0 * s, 16.0 * s], [29.0 * s, 16.0 * s], 2.5 * s, [1.0, 0.0, 0.0])?,
            Fiber::new([16.0 * s, 3.0 * s], [16.0 * s, 29.0 * s], 2.5 * s, [0.0, 1.0, 0.0])?,
            Fiber::new(
                [c[0] - 10.0 * s * h, c[1] + 10.0 * s * h],
                [c[0] + 10.0 * s * h, c[1] - 10.0 * s * h],
                2.0 * s,
                [h, -h, 0.0],
            )?,
        ];
        let spec = PhantomSpec {
            shape,
            scheme,
            fibers,
            axial: DEFAULT_AXIAL,
            radial: DEFAULT_RADIAL,
            snr,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.ndim() != 2 {
            return Err(Error::Unsupported("phantom generation supports 2D slices only".into()));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidArgument(format!("snr {} must be > 0", self.snr)));
        }
        if !(self.radial > 0.0) || !(self.axial > self.radial) {
            return Err(Error::InvalidArgument(format!(
                "diffusivities must satisfy axial > radial > 0, got {}/{}",
                self.axial, self.radial
            )));
        }
        // Tubes must stay inside the inscribed circle of the slice.
        let (nx, ny) = (self.shape.nx as f64, self.shape.ny as f64);
        let center = [nx / 2.0, ny / 2.0];
        let r_max = nx.min(ny) / 2.0;
        for f in &self.fibers {
            for p in [f.start, f.end] {
                let d = (p[0] - center[0]).hypot(p[1] - center[1]) + f.radius;
                if d > r_max + 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "fiber endpoint ({}, {}) with radius {} leaves the inscribed circle",
                        p[0], p[1], f.radius
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates the clean phantom volume and the per-voxel list of
/// ground-truth fiber directions (empty at isotropic voxels).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(DiffusionVolume, Vec<Vec<[f64; 3]>>)> {
    spec.validate()?;
    if spec.fibers.is_empty() {
        return Err(Error::InvalidArgument("phantom needs at least one fiber".into()));
    }
    let (nx, v) = (spec.shape.nx, spec.shape.voxels());
    let g = spec.scheme.len();
    let b = spec.scheme.b_value();
    let dirs = spec.scheme.directions();
    let iso = (-b * (spec.axial + 2.0 * spec.radial) / 3.0).exp();
    let mut data = Array2::zeros((v, g));
    let mut truth: Vec<Vec<[f64; 3]>> = vec![Vec::new(); v];
    for vi in 0..v {
        let (x, y) = (vi % nx, vi / nx);
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let covering: Vec<&Fiber> =
            spec.fibers.iter().filter(|f| f.distance_to(p) <= f.radius).collect();
        if covering.is_empty() {
            for gi in 0..g {
                data[[vi, gi]] = iso;
            }
            continue;
        }
        let frac = 1.0 / covering.len() as f64;
        for f in &covering {
            truth[vi].push(f.direction);
            for (gi, d) in dirs.iter().enumerate() {
                let t = d[0] * f.direction[0] + d[1] * f.direction[1] + d[2] * f.direction[2];
                data[[vi, gi]] +=
                    frac * (-b * (spec.radial + (spec.axial - spec.radial) * t * t)).exp();
            }
        }
    }
    Ok((DiffusionVolume::new(spec.shape, spec.scheme.clone(), data)?, truth))
}

/// Adds Rician noise: magnitude of the signal plus complex Gaussian noise
/// with per-component std 1/snr (the phantom's S0 = 1 convention).
/// `snr = f64::INFINITY` returns the input unchanged.
pub fn add_noise(v: &DiffusionVolume, snr: f64, seed: u64) -> Result<DiffusionVolume> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr {snr} must be > 0")));
    }
    if snr.is_infinite() {
        return Ok(v.clone());
    }
    let sigma = 1.0 / snr;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = v.data.mapv(|s| {
        let n_re: f64 = StandardNormal.sample(&mut rng);
        let n_im: f64 = StandardNormal.sample(&mut rng);
        (s + sigma * n_re).hypot(sigma * n_im)
    });
    DiffusionVolume::new(v.shape, v.scheme.clone(), data)
}

/// Retrospective k-space conversion (per-direction unitary FFT).
pub fn to_kspace(v: &DiffusionVolume) -> Result<ComplexVolume> {
    fft_per_direction(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_fiber_spec(scheme: GradientScheme) -> PhantomSpec {
        // One horizontal fiber across an 8x8 slice.
        PhantomSpec {
            shape: GridShape::new_2d(8, 8).unwrap(),
            scheme,
            fibers: vec![Fiber::new([1.5, 4.0], [6.5, 4.0], 1.2, [1.0, 0.0, 0.0]).unwrap()],
            axial: DEFAULT_AXIAL,
            radial: DEFAULT_RADIAL,
            snr: 30.0,
            seed: 0,
        }
    }

    #[test]
    fn single_fiber_exponent_values() {
        let scheme = GradientScheme::new(
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            3000.0,
        )
        .unwrap();
        let spec = single_fiber_spec(scheme);
        let (vol, truth) = generate_phantom(&spec).unwrap();
        // Voxel (4,4) center sits 0.5 voxels from the tract axis.
        let vi = 4 + 8 * 4;
        assert_eq!(truth[vi].len(), 1);
        let parallel = vol.data[[vi, 0]];
        let perp_y = vol.data[[vi, 1]];
        let perp_z = vol.data[[vi, 2]];
        assert!((parallel - (-5.1f64).exp()).abs() < 1e-15, "{parallel}");
        assert!((parallel - 6.10e-3).abs() < 1e-4);
        assert!((perp_y - (-0.9f64).exp()).abs() < 1e-15);
        assert!((perp_y - 0.4066).abs() < 1e-4);
        assert_eq!(perp_y, perp_z);
    }

    #[test]
    fn isotropic_voxel_is_direction_independent() {
        let scheme = GradientScheme::fibonacci(16, 3000.0).unwrap();
        let spec = single_fiber_spec(scheme);
        let (vol, truth) = generate_phantom(&spec).unwrap();
        let vi = 0; // corner voxel, far from the tract
        assert!(truth[vi].is_empty());
        let expected = (-3000.0 * (DEFAULT_AXIAL + 2.0 * DEFAULT_RADIAL) / 3.0).exp();
        for gi in 0..16 {
            assert!((vol.data[[vi, gi]] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_crossing_symmetric_under_quarter_turn() {
        // Gradients g and R90(g) probe a (x, y) crossing identically.
        let th = 20f64.to_radians();
        let g1 = [th.cos(), th.sin(), 0.0];
        let g2 = [-th.sin(), th.cos(), 0.0];
        let scheme = GradientScheme::new(vec![g1, g2], 3000.0).unwrap();
        let spec = PhantomSpec {
            shape: GridShape::new_2d(8, 8).unwrap(),
            scheme,
            fibers: vec![
                Fiber::new([1.5, 4.0], [6.5, 4.0], 1.2, [1.0, 0.0, 0.0]).unwrap(),
                Fiber::new([4.0, 1.5], [4.0, 6.5], 1.2, [0.0, 1.0, 0.0]).unwrap(),
            ],
            axial: DEFAULT_AXIAL,
            radial: DEFAULT_RADIAL,
            snr: 30.0,
            seed: 0,
        };
        let (vol, truth) = generate_phantom(&spec).unwrap();
        let vi = 4 + 8 * 4;
        assert_eq!(truth[vi].len(), 2);
        assert!((vol.data[[vi, 0]] - vol.data[[vi, 1]]).abs() < 1e-12);
    }

    #[test]
    fn default_crossing_geometry_counts() {
        let scheme = GradientScheme::fibonacci(64, 3000.0).unwrap();
        let spec = PhantomSpec::default_crossing(32, scheme, 30.0, 7).unwrap();
        let (vol, truth) = generate_phantom(&spec).unwrap();
        let mut counts = [0usize; 4];
        for t in &truth {
            counts[t.len()] += 1;
        }
        assert_eq!(counts, [670, 306, 24, 24]);
        // Probe voxels: tract interior, center triple crossing, far corner.
        assert_eq!(truth[5 + 32 * 16], vec![[1.0, 0.0, 0.0]]);
        assert_eq!(truth[16 + 32 * 5], vec![[0.0, 1.0, 0.0]]);
        assert_eq!(truth[16 + 32 * 16].len(), 3);
        assert!(truth[0].is_empty());
        // Signals are nonnegative and bounded by S0.
        assert!(vol.data.iter().all(|&s| s >= 0.0 && s <= 1.0));
    }

    #[test]
    fn noise_statistics_match_sigma() {
        // At SNR 30 on unit signal the Rician std is sigma*(1 - sigma^2/(4 A^2))^(1/2),
        // within 0.02% of sigma, so the Monte-Carlo check targets sigma.
        let shape = GridShape::new_2d(100, 100).unwrap();
        let scheme = GradientScheme::fibonacci(10, 3000.0).unwrap();
        let data = Array2::from_elem((10_000, 10), 1.0);
        let vol = DiffusionVolume::new(shape, scheme, data).unwrap();
        let noisy = add_noise(&vol, 30.0, 42).unwrap();
        let diff = &noisy.data - &vol.data;
        let n = diff.len() as f64;
        let mean = diff.sum() / n;
        let var = diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let sigma = 1.0 / 30.0;
        assert!(
            (var.sqrt() - sigma).abs() < 0.05 * sigma,
            "std {} vs sigma {sigma}",
            var.sqrt()
        );
    }

    #[test]
    fn noise_is_deterministic_and_infinite_snr_is_identity() {
        let scheme = GradientScheme::fibonacci(8, 3000.0).unwrap();
        let spec = single_fiber_spec(scheme);
        let (vol, _) = generate_phantom(&spec).unwrap();
        let a = add_noise(&vol, 30.0, 9).unwrap();
        let b = add_noise(&vol, 30.0, 9).unwrap();
        assert_eq!(a.data, b.data);
        let c = add_noise(&vol, 30.0, 10).unwrap();
        assert_ne!(a.data, c.data);
        let clean = add_noise(&vol, f64::INFINITY, 9).unwrap();
        assert_eq!(clean.data, vol.data);
        assert!(add_noise(&vol, 0.0, 0).is_err());
    }

    #[test]
    fn single_fiber_voxels_are_sparse_in_default_dictionary() {
        use crate::angular::build_dictionary;
        use crate::test_oracles::omp_relative_residual;
        let scheme = GradientScheme::fibonacci(64, 3000.0).unwrap();
        let spec = PhantomSpec::default_crossing(32, scheme.clone(), 30.0, 7).unwrap();
        let (vol, truth) = generate_phantom(&spec).unwrap();
        let dict = build_dictionary(&scheme, 97, &[2.0, 4.0, 8.0]).unwrap();
        // Residuals use the squared relative ratio, the error convention of
        // the evaluation metric.
        let mut checked = 0;
        for (vi, t) in truth.iter().enumerate() {
            if t.len() == 1 && vi % 7 == 0 {
                let target: Vec<f64> = (0..64).map(|gi| vol.data[[vi, gi]]).collect();
                let res = omp_relative_residual(&dict.atoms, &target, 3);
                assert!(res * res < 0.05, "voxel {vi} squared residual {}", res * res);
                checked += 1;
            }
        }
        assert!(checked > 20, "only {checked} voxels probed");
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let scheme = GradientScheme::fibonacci(8, 3000.0).unwrap();
        let mut spec = single_fiber_spec(scheme.clone());
        spec.fibers.clear();
        assert!(generate_phantom(&spec).is_err());

        let mut bad = single_fiber_spec(scheme.clone());
        bad.axial = bad.radial;
        assert!(bad.validate().is_err());

        let mut outside = single_fiber_spec(scheme.clone());
        outside.fibers = vec![Fiber::new([0.1, 4.0], [7.9, 4.0], 1.0, [1.0, 0.0, 0.0]).unwrap()];
        assert!(outside.validate().is_err());

        assert!(Fiber::new([0.0, 0.0], [1.0, 0.0], 0.0, [1.0, 0.0, 0.0]).is_err());
        assert!(Fiber::new([0.0, 0.0], [0.0, 0.0], 1.0, [1.0, 0.0, 0.0]).is_err());
        assert!(Fiber::new([0.0, 0.0], [1.0, 0.0], 1.0, [1.0, 1.0, 0.0]).is_err());
        let f = Fiber::in_plane([0.0, 0.0], [2.0, 2.0], 1.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.direction[0] - h).abs() < 1e-15 && (f.direction[1] - h).abs() < 1e-15);
    }
}
