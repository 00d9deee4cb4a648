//! Synthetic data generation at every level of the pipeline.
//!
//! Three layers: exact wavelet-domain model draws (the estimator's
//! ground-truth oracle), stationary power-law Gaussian series via
//! circulant embedding (time-domain oracle), and multi-subject 4-D
//! studies with injected covariate effects (end-to-end oracle).
//!
//! Every draw comes from a private counter-based stream keyed by
//! `(seed, subject, voxel)`, so output is independent of scheduling.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{autocov, scale_variances, AutocovSpec, LongMemoryParams};
use crate::rng::CounterRng;
use crate::volume::{BrainMask, CovariateTable, Dataset4D, Parcellation, VolumeGrid};
use crate::wavelet::{dwt_inverse, dyadic_length, Decomposition, FilterBank};

/// Largest time-domain simulation length.
pub const MAX_TIME_LEN: usize = 1 << 15;
/// Dense-factorization fallback is quadratic in memory; cap its size.
pub const MAX_DENSE_LEN: usize = 4096;
/// Abort threshold for the fraction of clamped alpha values in a study.
pub const MAX_CLAMP_RATE: f64 = 0.05;

fn check_sim_params(alpha: f64, nu: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Data(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(nu >= 0.0) {
        return Err(Error::Data(format!("nu must be nonnegative, got {nu}")));
    }
    Ok(())
}

/// Draw a complete decomposition from the variance progression:
/// independent zero-mean Gaussians with `var[m]` per detail coefficient
/// and `scaling_var` per scaling coefficient. `nu = 0` yields zeros.
///
/// Draw order is fixed (scales fine→coarse, then scaling, each in index
/// order), so a stream position determines the output exactly.
pub fn draw_decomposition(
    alpha: f64,
    nu: f64,
    t_dyadic: usize,
    levels: usize,
    rng: &mut CounterRng,
) -> Result<Decomposition<f64>> {
    check_sim_params(alpha, nu)?;
    if !t_dyadic.is_power_of_two() || t_dyadic < (1 << levels) {
        return Err(Error::Data(format!(
            "t_dyadic {t_dyadic} must be a power of two >= 2^{levels}"
        )));
    }
    let params = LongMemoryParams { alpha, nu: nu.max(f64::MIN_POSITIVE) };
    let vars = scale_variances(&params, levels);
    let zero = nu == 0.0;
    let mut detail = Vec::with_capacity(levels);
    for m in 1..=levels {
        let sd = if zero { 0.0 } else { vars.var(m).sqrt() };
        let n = t_dyadic >> m;
        detail.push((0..n).map(|_| sd * rng.normal()).collect::<Vec<f64>>());
    }
    let sd = if zero { 0.0 } else { vars.scaling_var().sqrt() };
    let scaling = (0..t_dyadic >> levels).map(|_| sd * rng.normal()).collect();
    Decomposition::new(detail, scaling)
}

/// Series following the wavelet-domain model exactly: model draw at the
/// given scales, inverted through `bank`.
pub fn wavelet_domain_series(
    alpha: f64,
    nu: f64,
    t_dyadic: usize,
    levels: usize,
    bank: &FilterBank<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = CounterRng::from_parts(seed, &[]);
    let d = draw_decomposition(alpha, nu, t_dyadic, levels, &mut rng)?;
    dwt_inverse(&d, bank)
}

/// Exact stationary Gaussian draw with power-law autocovariance, via
/// circulant embedding; escalates the nugget (doubling, at most 3 times)
/// when the embedding spectrum has negative entries, then falls back to
/// dense factorization with the original spec.
pub fn powerlaw_time_series(spec: &AutocovSpec<f64>, t: usize, seed: u64) -> Result<Vec<f64>> {
    if t == 0 || t > MAX_TIME_LEN {
        return Err(Error::Data(format!("time length {t} outside 1..={MAX_TIME_LEN}")));
    }
    let mut rng = CounterRng::from_parts(seed, &[]);
    if t == 1 {
        return Ok(vec![autocov(spec, 0).sqrt() * rng.normal()]);
    }

    let mut widened = *spec;
    for _ in 0..=3 {
        if let Some(lambda) = embedding_spectrum(&widened, t) {
            return Ok(circulant_draw(&lambda, t, &mut rng));
        }
        widened.nugget *= 2.0;
    }
    powerlaw_dense_with(spec, t, &mut rng)
}

/// Dense-factorization draw of the same law; the independent oracle the
/// embedding path is verified against, and the fallback when embedding
/// fails.
pub fn powerlaw_time_series_dense(spec: &AutocovSpec<f64>, t: usize, seed: u64) -> Result<Vec<f64>> {
    if t == 0 || t > MAX_DENSE_LEN {
        return Err(Error::Data(format!("dense path limited to 1..={MAX_DENSE_LEN}, got {t}")));
    }
    let mut rng = CounterRng::from_parts(seed, &[]);
    powerlaw_dense_with(spec, t, &mut rng)
}

fn powerlaw_dense_with(spec: &AutocovSpec<f64>, t: usize, rng: &mut CounterRng) -> Result<Vec<f64>> {
    if t > MAX_DENSE_LEN {
        return Err(Error::Numeric(format!(
            "embedding failed and dense fallback is limited to T <= {MAX_DENSE_LEN}"
        )));
    }
    let mut cov = Array2::<f64>::zeros((t, t));
    for i in 0..t {
        for j in 0..t {
            cov[(i, j)] = autocov(spec, i.abs_diff(j));
        }
    }
    let l = crate::linalg::cholesky(&cov).map_err(|_| {
        Error::Numeric("power-law covariance not positive definite even after nugget".into())
    })?;
    let z: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
    let mut x = vec![0.0; t];
    for i in 0..t {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[(i, k)] * z[k];
        }
        x[i] = s;
    }
    Ok(x)
}

/// Eigenvalues of the minimal-power-of-two circulant embedding, or `None`
/// if any are materially negative.
fn embedding_spectrum(spec: &AutocovSpec<f64>, t: usize) -> Option<Vec<f64>> {
    let m = (2 * (t - 1)).next_power_of_two().max(2);
    let mut buf: Vec<Complex<f64>> = (0..m)
        .map(|j| Complex::new(autocov(spec, j.min(m - j)), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let lambda: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let max = lambda.iter().cloned().fold(0.0, f64::max);
    let tol = -1e-9 * max;
    if lambda.iter().any(|&l| l < tol) {
        None
    } else {
        Some(lambda.iter().map(|&l| l.max(0.0)).collect())
    }
}

/// Davies–Harte synthesis from a nonnegative embedding spectrum.
///
/// Normals are consumed in the documented order: k = 0, k = M/2, then
/// (re, im) pairs for k = 1..M/2−1.
fn circulant_draw(lambda: &[f64], t: usize, rng: &mut CounterRng) -> Vec<f64> {
    let m = lambda.len();
    let mut z = vec![Complex::new(0.0, 0.0); m];
    z[0] = Complex::new(lambda[0].sqrt() * rng.normal(), 0.0);
    z[m / 2] = Complex::new(lambda[m / 2].sqrt() * rng.normal(), 0.0);
    for k in 1..m / 2 {
        let s = (lambda[k] / 2.0).sqrt();
        let re = s * rng.normal();
        let im = s * rng.normal();
        z[k] = Complex::new(re, im);
        z[m - k] = Complex::new(re, -im);
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut z);
    let scale = 1.0 / (m as f64).sqrt();
    z[..t].iter().map(|c| c.re * scale).collect()
}

/// Template for one synthetic subject: geometry, parcellation (label > 0
/// defines the simulated voxel set), and per-voxel baseline fields.
#[derive(Clone, Debug)]
pub struct SyntheticSubjectSpec {
    pub grid: VolumeGrid,
    pub t: usize,
    pub parcellation: Parcellation,
    /// Baseline alpha per masked voxel, each within (0.02, 0.98).
    pub alpha_field: Vec<f64>,
    /// Innovation variance per masked voxel, positive.
    pub nu_field: Vec<f64>,
}

impl SyntheticSubjectSpec {
    /// Uniform-field template over a parcellation.
    pub fn uniform(
        grid: VolumeGrid,
        t: usize,
        parcellation: Parcellation,
        alpha: f64,
        nu: f64,
    ) -> Result<Self> {
        let mask = mask_of(&parcellation)?;
        let n = mask.n_masked();
        let spec = SyntheticSubjectSpec {
            grid,
            t,
            parcellation,
            alpha_field: vec![alpha; n],
            nu_field: vec![nu; n],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mask = self.mask()?;
        if self.alpha_field.len() != mask.n_masked() || self.nu_field.len() != mask.n_masked() {
            return Err(Error::Data(format!(
                "alpha/nu fields must cover all {} masked voxels",
                mask.n_masked()
            )));
        }
        if self.alpha_field.iter().any(|&a| !(0.02..=0.98).contains(&a)) {
            return Err(Error::Data("alpha_field values must lie within (0.02, 0.98)".into()));
        }
        if self.nu_field.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Data("nu_field values must be positive".into()));
        }
        if self.t < 16 {
            return Err(Error::Data(format!("time length {} < 16", self.t)));
        }
        Ok(())
    }

    /// Voxel set carrying a positive parcellation label.
    pub fn mask(&self) -> Result<BrainMask> {
        mask_of(&self.parcellation)
    }
}

fn mask_of(parcellation: &Parcellation) -> Result<BrainMask> {
    BrainMask::from_included(
        parcellation.grid.clone(),
        parcellation.label.iter().map(|&l| l > 0).collect(),
    )
}

/// One injected group-level effect: inside `target_roi`, subject `i`'s
/// alpha becomes `baseline_alpha + effect_size · z_i(covariate)`.
#[derive(Clone, Debug)]
pub struct GroupEffectSpec {
    pub covariate_name: String,
    pub target_roi: u32,
    /// Units of alpha per covariate unit.
    pub effect_size: f64,
    pub baseline_alpha: f64,
}

/// Ground truth accompanying a simulated study.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// `n_masked × Q` true coefficients, aligned with the covariate table
    /// columns (column 0 = intercept = baseline alpha).
    pub beta: Array2<f64>,
    /// Number of per-subject alpha values clamped into (0.02, 0.98).
    pub clamp_events: usize,
}

/// A simulated multi-subject study with its generating truth.
#[derive(Debug)]
pub struct GroupStudy {
    pub datasets: Vec<Dataset4D>,
    pub mask: BrainMask,
    pub truth: GroundTruth,
}

/// Simulate `covariates.n_subjects()` subjects from the template with the
/// listed effects injected. Aborts if more than 5% of per-subject alpha
/// values needed clamping.
pub fn simulate_group_study(
    template: &SyntheticSubjectSpec,
    effects: &[GroupEffectSpec],
    covariates: &CovariateTable,
    bank: &FilterBank<f64>,
    levels: usize,
    seed: u64,
) -> Result<GroupStudy> {
    template.validate()?;
    let mask = template.mask()?;
    let n_masked = mask.n_masked();
    let n_subjects = covariates.n_subjects();
    let q = covariates.n_columns();
    let t_dyadic = dyadic_length(template.t);
    if t_dyadic < (1 << levels) {
        return Err(Error::Data(format!(
            "time length {} supports at most {} levels",
            template.t,
            dyadic_length(template.t).trailing_zeros()
        )));
    }

    // Resolve effect columns and per-voxel effect membership.
    let mut effect_cols = Vec::with_capacity(effects.len());
    for e in effects {
        let col = covariates
            .column_names
            .iter()
            .position(|c| *c == e.covariate_name)
            .ok_or_else(|| {
                Error::Data(format!("effect references unknown covariate '{}'", e.covariate_name))
            })?;
        if !template.parcellation.roi_ids.contains(&e.target_roi) {
            return Err(Error::Data(format!("effect targets unknown ROI {}", e.target_roi)));
        }
        if !(0.02..=0.98).contains(&e.baseline_alpha) {
            return Err(Error::Data("effect baseline_alpha must lie within (0.02, 0.98)".into()));
        }
        effect_cols.push(col);
    }

    // Ground truth: intercept column holds the baseline field; effect
    // columns hold the injected slopes inside their ROIs.
    let mut beta = Array2::<f64>::zeros((n_masked, q));
    let mut baseline = template.alpha_field.clone();
    for (e, _) in effects.iter().zip(&effect_cols) {
        for (mi, &li) in mask.masked_linears().iter().enumerate() {
            if template.parcellation.label[li] == e.target_roi {
                baseline[mi] = e.baseline_alpha;
            }
        }
    }
    for mi in 0..n_masked {
        beta[(mi, 0)] = baseline[mi];
    }
    for (e, &col) in effects.iter().zip(&effect_cols) {
        for (mi, &li) in mask.masked_linears().iter().enumerate() {
            if template.parcellation.label[li] == e.target_roi {
                beta[(mi, col)] += e.effect_size;
            }
        }
    }

    let mut datasets = Vec::with_capacity(n_subjects);
    let mut clamp_events = 0usize;
    for i in 0..n_subjects {
        // Voxels are independent keyed streams, so parallel generation
        // with an ordered collect is schedule-invariant.
        let rows: Vec<(Vec<f64>, bool)> = mask
            .masked_linears()
            .par_iter()
            .enumerate()
            .map(|(mi, &li)| {
                let mut a = baseline[mi];
                for (e, &col) in effects.iter().zip(&effect_cols) {
                    if template.parcellation.label[li] == e.target_roi {
                        a += e.effect_size * covariates.z[(i, col)];
                    }
                }
                let clamped = a.clamp(0.02, 0.98);
                let mut rng = CounterRng::from_parts(seed, &[i as u64, mi as u64]);
                let d = draw_decomposition(
                    clamped,
                    template.nu_field[mi],
                    t_dyadic,
                    levels,
                    &mut rng,
                )?;
                let series = dwt_inverse(&d, bank)?;
                Ok((series, clamped != a))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut data = Array2::<f64>::zeros((n_masked, template.t));
        for (mi, (series, clamped)) in rows.into_iter().enumerate() {
            clamp_events += usize::from(clamped);
            // Non-dyadic tails repeat the dyadic draw periodically; the
            // estimator only ever consumes the dyadic prefix.
            for t in 0..template.t {
                data[(mi, t)] = series[t % t_dyadic];
            }
        }
        datasets.push(Dataset4D::new(
            template.grid.clone(),
            data,
            covariates.subject_ids[i].clone(),
        )?);
    }

    let clamp_rate = clamp_events as f64 / (n_subjects * n_masked) as f64;
    if clamp_rate > MAX_CLAMP_RATE {
        return Err(Error::Data(format!(
            "{:.1}% of alpha values clamped (limit {:.0}%): rescale the injected effects",
            100.0 * clamp_rate,
            100.0 * MAX_CLAMP_RATE
        )));
    }

    Ok(GroupStudy { datasets, mask, truth: GroundTruth { beta, clamp_events } })
}

/// Evenly partition a grid into `2^3 = 8` octant ROIs (ids 1..=8), the
/// standard layout for the synthetic studies in the test suite.
pub fn octant_parcellation(grid: &VolumeGrid) -> Result<Parcellation> {
    let (nx, ny, nz) = grid.dims;
    let mut label = vec![0u32; grid.n_voxels()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let ox = usize::from(x >= nx / 2);
                let oy = usize::from(y >= ny / 2);
                let oz = usize::from(z >= nz / 2);
                label[grid.linear_index(x, y, z)] = (1 + ox + 2 * oy + 4 * oz) as u32;
            }
        }
    }
    Parcellation::new(grid.clone(), label)
}
