//! Per-voxel Bayesian estimation of the long-memory parameters.
//!
//! Each voxel runs a two-block sampler on its wavelet sufficient
//! statistics: a Gaussian random-walk Metropolis step for α, truncated to
//! (0,1) with the truncation-corrected Hastings ratio, and a conjugate
//! inverse-gamma Gibbs step for ν. Voxels are independent work units with
//! private RNG streams keyed by (seed, subject, voxel), so results do not
//! depend on the worker count.
//!
//! A spectral-slope screen (log-log periodogram regression) and standard
//! chain diagnostics (ACF, effective sample size, histogram) round out
//! the module.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{sufficient_stats, SufficientStats};
use crate::rng::{fold_str, normal_cdf, normal_quantile, CounterRng};
use crate::volume::Dataset4D;
use crate::wavelet::{dwt_forward, dyadic_length, FilterBank};

/// Beta(a, b) prior on α and inverse-gamma(p, s) prior on ν.
#[derive(Clone, Copy, Debug)]
pub struct SubjectPriors {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub s: f64,
}

impl Default for SubjectPriors {
    /// Beta(3,3) on α and inverse-gamma(2,2) on ν.
    fn default() -> Self {
        SubjectPriors { a: 3.0, b: 3.0, p: 2.0, s: 2.0 }
    }
}

impl SubjectPriors {
    pub fn validate(&self) -> Result<()> {
        if self.a <= 0.0 || self.b <= 0.0 || self.p <= 0.0 || self.s <= 0.0 {
            return Err(Error::Config("subject priors must be strictly positive".into()));
        }
        Ok(())
    }
}

/// MCMC schedule for the per-voxel sampler.
#[derive(Clone, Copy, Debug)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    /// Initial random-walk step; adapted during the first half of burn-in
    /// toward acceptance in [0.2, 0.5], then frozen.
    pub proposal_sd: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { n_iter: 5000, n_burn: 1000, thin: 2, proposal_sd: 0.05, seed: 0 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than total iterations {}",
                self.n_burn, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning stride must be at least 1".into()));
        }
        if !(self.proposal_sd > 0.0) {
            return Err(Error::Config("proposal sd must be positive".into()));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }
}

/// Conjugate ν update: inverse-gamma with shape `p + N_coef/2` and rate
/// `s + ½·Σ_m sumsq[m]·2^(αm)`.
pub fn sample_nu(
    stats: &SufficientStats<f64>,
    alpha: f64,
    priors: &SubjectPriors,
    rng: &mut CounterRng,
) -> f64 {
    let shape = priors.p + stats.total_count() as f64 / 2.0;
    let rate = priors.s + 0.5 * scaled_sumsq(stats, alpha);
    rng.inv_gamma(shape, rate)
}

/// q(α) = Σ_m sumsq[m]·2^(αm); the quadratic form of the likelihood.
fn scaled_sumsq(stats: &SufficientStats<f64>, alpha: f64) -> f64 {
    stats
        .sumsq
        .iter()
        .enumerate()
        .map(|(i, &ss)| ss * ((i + 1) as f64 * alpha).exp2())
        .sum()
}

/// Unnormalized log posterior of α given ν.
fn log_target(stats: &SufficientStats<f64>, alpha: f64, nu: f64, priors: &SubjectPriors) -> f64 {
    0.5 * std::f64::consts::LN_2 * alpha * stats.scale_weighted_count()
        - scaled_sumsq(stats, alpha) / (2.0 * nu)
        + (priors.a - 1.0) * alpha.ln()
        + (priors.b - 1.0) * (1.0 - alpha).ln()
}

/// Normalizing mass of a normal step from `alpha` truncated to (0,1).
fn truncation_mass(alpha: f64, sd: f64) -> f64 {
    normal_cdf((1.0 - alpha) / sd) - normal_cdf(-alpha / sd)
}

/// One truncated Metropolis–Hastings step for α. Returns the new state
/// and whether the proposal was accepted.
pub fn sample_alpha(
    stats: &SufficientStats<f64>,
    alpha: f64,
    nu: f64,
    priors: &SubjectPriors,
    proposal_sd: f64,
    rng: &mut CounterRng,
) -> (f64, bool) {
    // Inverse-CDF draw from the truncated proposal.
    let mass = truncation_mass(alpha, proposal_sd);
    let lo = normal_cdf(-alpha / proposal_sd);
    let p = (lo + rng.uniform() * mass).clamp(1e-16, 1.0 - 1e-16);
    let proposed = (alpha + proposal_sd * normal_quantile(p)).clamp(1e-12, 1.0 - 1e-12);

    // Hastings ratio: the Gaussian kernels cancel; only the truncation
    // masses differ between the two directions.
    let log_ratio = log_target(stats, proposed, nu, priors) - log_target(stats, alpha, nu, priors)
        + mass.ln()
        - truncation_mass(proposed, proposal_sd).ln();
    if rng.uniform().ln() < log_ratio {
        (proposed, true)
    } else {
        (alpha, false)
    }
}

/// Raw output of one voxel's chain.
#[derive(Clone, Debug)]
pub struct VoxelChain {
    pub alpha: Vec<f64>,
    pub nu: Vec<f64>,
    /// Acceptance fraction over post-burn-in iterations.
    pub acceptance: f64,
    /// Step size after adaptation froze.
    pub proposal_sd: f64,
}

/// Run the two-block sampler on fixed sufficient statistics.
///
/// Schedule: adaptation windows of 50 iterations during the first half of
/// burn-in (step size ×1.5 when window acceptance exceeds 0.5, ÷1.5 below
/// 0.2), frozen thereafter so retained draws target the exact posterior.
pub fn run_chain(
    stats: &SufficientStats<f64>,
    priors: &SubjectPriors,
    config: &ChainConfig,
    rng: &mut CounterRng,
) -> VoxelChain {
    let mut alpha = 0.5;
    let mut nu = if stats.count.is_empty() || stats.count[0] == 0 {
        1.0
    } else {
        (stats.sumsq[0] / stats.count[0] as f64).max(1e-12)
    };

    let mut sd = config.proposal_sd;
    let adapt_until = config.n_burn / 2;
    let window = 50usize;
    let mut window_accepts = 0usize;

    let retained = config.n_retained();
    let mut alpha_draws = Vec::with_capacity(retained);
    let mut nu_draws = Vec::with_capacity(retained);
    let mut post_burn_accepts = 0usize;
    let mut post_burn_total = 0usize;

    for it in 0..config.n_iter {
        let (a_new, accepted) = sample_alpha(stats, alpha, nu, priors, sd, rng);
        alpha = a_new;
        nu = sample_nu(stats, alpha, priors, rng);

        if it < adapt_until {
            window_accepts += usize::from(accepted);
            if (it + 1) % window == 0 {
                let rate = window_accepts as f64 / window as f64;
                if rate > 0.5 {
                    sd = (sd * 1.5).min(1.0);
                } else if rate < 0.2 {
                    sd = (sd / 1.5).max(1e-4);
                }
                window_accepts = 0;
            }
        }
        if it >= config.n_burn {
            post_burn_total += 1;
            post_burn_accepts += usize::from(accepted);
            if (it - config.n_burn) % config.thin == 0 {
                alpha_draws.push(alpha);
                nu_draws.push(nu);
            }
        }
    }

    VoxelChain {
        alpha: alpha_draws,
        nu: nu_draws,
        acceptance: post_burn_accepts as f64 / post_burn_total.max(1) as f64,
        proposal_sd: sd,
    }
}

/// Per-voxel posterior summaries for one subject.
#[derive(Clone, Debug)]
pub struct LongMemoryMap {
    pub subject_id: String,
    pub alpha_mean: Vec<f64>,
    pub alpha_median: Vec<f64>,
    pub alpha_sd: Vec<f64>,
    pub nu_mean: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub ess: Vec<f64>,
    /// Masked indices of voxels skipped as degenerate (zero variance);
    /// their summary entries are NaN.
    pub degenerate: Vec<usize>,
}

impl LongMemoryMap {
    pub fn n_voxels(&self) -> usize {
        self.alpha_mean.len()
    }
}

/// Per-voxel posterior sampling over a masked dataset.
///
/// Each series is centered to mean zero over its dyadic prefix before
/// transforming. Zero-variance voxels are flagged and skipped.
pub fn estimate_subject(
    dataset: &Dataset4D,
    bank: &FilterBank<f64>,
    levels: usize,
    priors: &SubjectPriors,
    config: &ChainConfig,
) -> Result<LongMemoryMap> {
    priors.validate()?;
    config.validate()?;
    let t_dyadic = dyadic_length(dataset.t);
    if t_dyadic < (1 << levels) {
        return Err(Error::Data(format!(
            "series length {} cannot support {levels} levels",
            dataset.t
        )));
    }
    let n_vox = dataset.n_voxels();
    let subject_word = fold_str(&dataset.subject_id);

    struct VoxelOut {
        mean: f64,
        median: f64,
        sd: f64,
        nu: f64,
        acc: f64,
        ess: f64,
        degenerate: bool,
    }

    let rows: Vec<VoxelOut> = (0..n_vox)
        .into_par_iter()
        .map(|v| {
            let series: Vec<f64> =
                dataset.data.row(v).iter().take(t_dyadic).copied().collect();
            if series.iter().all(|&x| x == series[0]) {
                return Ok(VoxelOut {
                    mean: f64::NAN,
                    median: f64::NAN,
                    sd: f64::NAN,
                    nu: f64::NAN,
                    acc: f64::NAN,
                    ess: f64::NAN,
                    degenerate: true,
                });
            }
            let mean = series.iter().sum::<f64>() / t_dyadic as f64;
            let centered: Vec<f64> = series.iter().map(|&x| x - mean).collect();
            let d = dwt_forward(&centered, bank, levels)?;
            let stats = sufficient_stats(&d);
            let mut rng = CounterRng::from_parts(config.seed, &[subject_word, v as u64]);
            let chain = run_chain(&stats, priors, config, &mut rng);
            let diag = chain_summary(&chain.alpha);
            Ok(VoxelOut {
                mean: diag.mean,
                median: diag.median,
                sd: diag.sd,
                nu: chain.nu.iter().sum::<f64>() / chain.nu.len() as f64,
                acc: chain.acceptance,
                ess: diag.ess,
                degenerate: false,
            })
        })
        .collect::<Result<Vec<VoxelOut>>>()?;

    let mut map = LongMemoryMap {
        subject_id: dataset.subject_id.clone(),
        alpha_mean: Vec::with_capacity(n_vox),
        alpha_median: Vec::with_capacity(n_vox),
        alpha_sd: Vec::with_capacity(n_vox),
        nu_mean: Vec::with_capacity(n_vox),
        acceptance: Vec::with_capacity(n_vox),
        ess: Vec::with_capacity(n_vox),
        degenerate: Vec::new(),
    };
    for (v, r) in rows.into_iter().enumerate() {
        if r.degenerate {
            map.degenerate.push(v);
        }
        map.alpha_mean.push(r.mean);
        map.alpha_median.push(r.median);
        map.alpha_sd.push(r.sd);
        map.nu_mean.push(r.nu);
        map.acceptance.push(r.acc);
        map.ess.push(r.ess);
    }
    Ok(map)
}

/// Re-run one voxel's chain with the stream key used by
/// [`estimate_subject`], returning the raw draws (for diagnostics
/// tables). Identical streams make this bit-identical to the draws the
/// map summaries came from.
pub fn voxel_chain(
    dataset: &Dataset4D,
    voxel: usize,
    bank: &FilterBank<f64>,
    levels: usize,
    priors: &SubjectPriors,
    config: &ChainConfig,
) -> Result<VoxelChain> {
    let t_dyadic = dyadic_length(dataset.t);
    let series: Vec<f64> = dataset.data.row(voxel).iter().take(t_dyadic).copied().collect();
    if series.iter().all(|&x| x == series[0]) {
        return Err(Error::Data(format!("voxel {voxel} is degenerate (zero variance)")));
    }
    let mean = series.iter().sum::<f64>() / t_dyadic as f64;
    let centered: Vec<f64> = series.iter().map(|&x| x - mean).collect();
    let stats = sufficient_stats(&dwt_forward(&centered, bank, levels)?);
    let mut rng =
        CounterRng::from_parts(config.seed, &[fold_str(&dataset.subject_id), voxel as u64]);
    Ok(run_chain(&stats, priors, config, &mut rng))
}

struct ChainSummary {
    mean: f64,
    median: f64,
    sd: f64,
    ess: f64,
}

fn chain_summary(draws: &[f64]) -> ChainSummary {
    let n = draws.len();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1).max(1) as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    ChainSummary { mean, median, sd: var.sqrt(), ess: effective_sample_size(draws) }
}

/// ESS = n / (1 + 2·Σ ρ_k), summing consecutive positive autocorrelations.
pub fn effective_sample_size(draws: &[f64]) -> f64 {
    let n = draws.len();
    if n < 2 {
        return n as f64;
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var: f64 = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let mut sum_rho = 0.0;
    for k in 1..n {
        let cov: f64 = (0..n - k).map(|i| (draws[i] - mean) * (draws[i + k] - mean)).sum::<f64>()
            / n as f64;
        let rho = cov / var;
        if rho <= 0.0 {
            break;
        }
        sum_rho += rho;
    }
    (n as f64 / (1.0 + 2.0 * sum_rho)).min(n as f64)
}

/// Trace, autocorrelation, ESS and histogram of one retained chain.
#[derive(Clone, Debug)]
pub struct ChainDiagnostics {
    pub trace: Vec<f64>,
    /// Autocorrelation at lags 0..=max_lag (acf[0] = 1).
    pub acf: Vec<f64>,
    pub ess: f64,
    /// Histogram counts over `bins` equal-width bins spanning the range.
    pub density_counts: Vec<usize>,
    pub density_edges: (f64, f64),
    /// True for constant chains, whose ACF is defined as all-ones.
    pub degenerate: bool,
}

/// Compute diagnostics for a retained chain (requires ≥ 100 draws).
pub fn chain_diagnostics(draws: &[f64], max_lag: usize, bins: usize) -> Result<ChainDiagnostics> {
    let n = draws.len();
    if n < 100 {
        return Err(Error::Data(format!("diagnostics need at least 100 draws, got {n}")));
    }
    let max_lag = max_lag.min(n - 1);
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var: f64 = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let degenerate = var <= 0.0;
    let acf: Vec<f64> = if degenerate {
        vec![1.0; max_lag + 1]
    } else {
        (0..=max_lag)
            .map(|k| {
                (0..n - k).map(|i| (draws[i] - mean) * (draws[i + k] - mean)).sum::<f64>()
                    / (n as f64 * var)
            })
            .collect()
    };
    let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    let mut density_counts = vec![0usize; bins];
    for &x in draws {
        let b = (((x - lo) / width) * bins as f64) as usize;
        density_counts[b.min(bins - 1)] += 1;
    }
    Ok(ChainDiagnostics {
        trace: draws.to_vec(),
        acf,
        ess: if degenerate { 1.0 } else { effective_sample_size(draws) },
        density_counts,
        density_edges: (lo, hi),
        degenerate,
    })
}

/// Result of the log-log periodogram screen.
#[derive(Clone, Copy, Debug)]
pub struct SpectralSlope {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_freq: usize,
}

/// Ordinary least squares of log10 periodogram on log10 frequency over a
/// log-frequency band. The default band is the upper half of resolvable
/// log frequencies. Requires at least 8 Fourier frequencies in the band.
pub fn spectral_slope_screen(y: &[f64], band: Option<(f64, f64)>) -> Result<SpectralSlope> {
    let t = y.len();
    if t < 64 {
        return Err(Error::Data(format!("spectral screen needs length >= 64, got {t}")));
    }
    let mut buf: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);

    let (band_lo, band_hi) = band.unwrap_or_else(|| {
        let lo = (1.0 / t as f64).log10();
        let hi = 0.5_f64.log10();
        (0.5 * (lo + hi), hi)
    });

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 1..=t / 2 {
        let f = k as f64 / t as f64;
        let lf = f.log10();
        if lf < band_lo || lf > band_hi {
            continue;
        }
        let power = (buf[k].norm_sqr() / t as f64).max(f64::MIN_POSITIVE);
        xs.push(lf);
        ys.push(power.log10());
    }
    if xs.len() < 8 {
        return Err(Error::Data(format!(
            "band [{band_lo:.3}, {band_hi:.3}] contains {} Fourier frequencies (need 8)",
            xs.len()
        )));
    }

    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(SpectralSlope { slope, intercept: my - slope * mx, r_squared, n_freq: xs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AutocovSpec;
    use crate::simulate::{powerlaw_time_series, wavelet_domain_series};
    use crate::volume::VolumeGrid;
    use ndarray::Array2;
    use statrs::distribution::{ContinuousCDF, InverseGamma};

    fn stats_from_sim(alpha: f64, nu: f64, t: usize, levels: usize, seed: u64) -> SufficientStats<f64> {
        let bank = FilterBank::db2();
        let y = wavelet_domain_series(alpha, nu, t, levels, &bank, seed).unwrap();
        sufficient_stats(&dwt_forward(&y, &bank, levels).unwrap())
    }

    /// One-sample Kolmogorov–Smirnov statistic against a CDF.
    fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sample.len() as f64;
        sample
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn nu_conditional_zero_data_is_prior_update() {
        // With sumsq = 0 the rate is s alone; KS against the analytic
        // inverse-gamma at level 0.01.
        let stats = SufficientStats { count: vec![32, 16], sumsq: vec![0.0, 0.0] };
        let priors = SubjectPriors::default();
        let mut rng = CounterRng::new(3);
        let n = 100_000;
        let mut draws: Vec<f64> =
            (0..n).map(|_| sample_nu(&stats, 0.37, &priors, &mut rng)).collect();
        let shape = priors.p + 24.0;
        let dist = InverseGamma::new(shape, priors.s).unwrap();
        let ks = ks_statistic(&mut draws, |x| dist.cdf(x));
        let crit = 1.6276 / (n as f64).sqrt();
        assert!(ks < crit, "ks {ks} vs {crit}");
    }

    #[test]
    fn nu_conditional_ks_against_analytic() {
        let stats = stats_from_sim(0.5, 1.0, 256, 5, 17);
        let priors = SubjectPriors::default();
        let alpha = 0.5;
        let shape = priors.p + stats.total_count() as f64 / 2.0;
        let rate = priors.s
            + 0.5
                * stats
                    .sumsq
                    .iter()
                    .enumerate()
                    .map(|(i, &ss)| ss * ((i + 1) as f64 * alpha).exp2())
                    .sum::<f64>();
        let dist = InverseGamma::new(shape, rate).unwrap();
        let mut rng = CounterRng::new(4);
        let n = 100_000;
        let mut draws: Vec<f64> =
            (0..n).map(|_| sample_nu(&stats, alpha, &priors, &mut rng)).collect();
        let ks = ks_statistic(&mut draws, |x| dist.cdf(x));
        let crit = 1.6276 / (n as f64).sqrt();
        assert!(ks < crit, "ks {ks} vs {crit}");

        // Posterior mean within 1% of rate/(shape-1).
        let mean = draws.iter().sum::<f64>() / n as f64;
        let analytic = rate / (shape - 1.0);
        assert!((mean - analytic).abs() / analytic < 0.01, "{mean} vs {analytic}");
    }

    #[test]
    fn nu_rate_unscaled_at_alpha_zero() {
        // α = 0 ⇒ 2^(αm) = 1, so the rate is s + ½·Σ sumsq. Checked via
        // the posterior mean identity instead of reaching into internals.
        let stats = SufficientStats { count: vec![4, 2], sumsq: vec![3.0, 1.0] };
        let priors = SubjectPriors::default();
        let shape = priors.p + 3.0;
        let rate = priors.s + 0.5 * 4.0;
        let mut rng = CounterRng::new(5);
        let n = 200_000;
        let mean: f64 =
            (0..n).map(|_| sample_nu(&stats, 0.0, &priors, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - rate / (shape - 1.0)).abs() < 0.01);
    }

    #[test]
    fn flat_target_chain_is_uniform() {
        // Empty statistics and a flat Beta(1,1) prior make the target
        // Uniform(0,1); the truncation-corrected chain must converge to it.
        let stats = SufficientStats { count: vec![], sumsq: vec![] };
        let priors = SubjectPriors { a: 1.0, b: 1.0, ..SubjectPriors::default() };
        let mut rng = CounterRng::new(6);
        let n = 100_000;
        let mut alpha = 0.5;
        let mut draws = Vec::with_capacity(n);
        let mut accepts = 0usize;
        for _ in 0..n {
            let (a, acc) = sample_alpha(&stats, alpha, 1.0, &priors, 0.25, &mut rng);
            alpha = a;
            accepts += usize::from(acc);
            draws.push(alpha);
        }
        let ks = ks_statistic(&mut draws, |x| x.clamp(0.0, 1.0));
        // Correlated draws: compare against the critical value at the
        // chain's effective sample size rather than n.
        let ess = effective_sample_size(&draws);
        let crit = 1.6276 / ess.sqrt();
        assert!(ks < crit, "ks {ks} vs {crit} (ess {ess})");
        // Acceptance reflects only the truncation-mass correction, so it
        // stays high for a mid-range step size.
        let rate = accepts as f64 / n as f64;
        assert!(rate > 0.8, "acceptance {rate}");
    }

    #[test]
    fn vanishing_proposal_accepts_everything() {
        let stats = stats_from_sim(0.5, 1.0, 256, 5, 23);
        let priors = SubjectPriors::default();
        let mut rng = CounterRng::new(7);
        let mut alpha = 0.5;
        let mut accepts = 0;
        let n = 2000;
        for _ in 0..n {
            let (a, acc) = sample_alpha(&stats, alpha, 1.0, &priors, 1e-8, &mut rng);
            alpha = a;
            accepts += usize::from(acc);
        }
        assert!(accepts as f64 / n as f64 > 0.999);
    }

    #[test]
    fn posterior_recovers_alpha() {
        // Simulation oracle: data generated at α* = 0.4, T = 4096.
        let stats = stats_from_sim(0.4, 1.0, 4096, 8, 31);
        let priors = SubjectPriors::default();
        let config = ChainConfig { seed: 99, ..ChainConfig::default() };
        let mut rng = CounterRng::new(config.seed);
        let chain = run_chain(&stats, &priors, &config, &mut rng);
        let mean = chain.alpha.iter().sum::<f64>() / chain.alpha.len() as f64;
        assert!((mean - 0.4).abs() < 0.05, "posterior mean {mean}");
    }

    #[test]
    fn alpha_histogram_matches_grid_marginal() {
        // Detailed-balance check: long-run α histogram against the
        // ν-integrated posterior evaluated on a dense grid (closed-form
        // inverse-gamma integral), total variation below 0.05.
        let stats = stats_from_sim(0.5, 1.0, 32, 3, 47);
        let priors = SubjectPriors::default();
        let config =
            ChainConfig { n_iter: 250_000, n_burn: 5000, thin: 1, proposal_sd: 0.1, seed: 13 };
        let mut rng = CounterRng::new(config.seed);
        let chain = run_chain(&stats, &priors, &config, &mut rng);

        let bins = 50;
        let mut hist = vec![0.0; bins];
        for &a in &chain.alpha {
            hist[((a * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let total: f64 = hist.iter().sum();
        for h in hist.iter_mut() {
            *h /= total;
        }

        // Marginal over ν: π(α) ∝ 2^(α/2·Σ m·count[m]) ·
        // (s + q(α)/2)^−(p + N/2) · Beta(a,b) kernel; integrate per bin by
        // midpoint rule on a fine sub-grid.
        let log_marginal = |a: f64| -> f64 {
            0.5 * std::f64::consts::LN_2 * a * stats.scale_weighted_count()
                - (priors.p + stats.total_count() as f64 / 2.0)
                    * (priors.s + 0.5 * scaled_sumsq(&stats, a)).ln()
                + (priors.a - 1.0) * a.ln()
                + (priors.b - 1.0) * (1.0 - a).ln()
        };
        let sub = 20;
        let mut grid = vec![0.0; bins];
        let mut offset = f64::NEG_INFINITY;
        for (b, g) in grid.iter_mut().enumerate() {
            let mut acc: f64 = 0.0;
            for s in 0..sub {
                let a = (b as f64 + (s as f64 + 0.5) / sub as f64) / bins as f64;
                acc += log_marginal(a).exp();
            }
            *g = acc;
            offset = offset.max(*g);
        }
        let total: f64 = grid.iter().sum();
        for g in grid.iter_mut() {
            *g /= total;
        }

        let tv: f64 = 0.5 * hist.iter().zip(&grid).map(|(h, g)| (h - g).abs()).sum::<f64>();
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn credible_interval_calibration() {
        // 100 voxels at mixed α; the 90% interval must cover truth at
        // least 82 times.
        let priors = SubjectPriors::default();
        let config = ChainConfig { n_iter: 3000, n_burn: 500, thin: 1, ..Default::default() };
        let mut covered = 0;
        for i in 0..100 {
            let alpha_true = [0.2, 0.5, 0.8][i % 3];
            let stats = stats_from_sim(alpha_true, 1.0, 4096, 8, 700 + i as u64);
            let mut rng = CounterRng::from_parts(41, &[i as u64]);
            let chain = run_chain(&stats, &priors, &config, &mut rng);
            let mut sorted = chain.alpha.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = sorted[(0.05 * sorted.len() as f64) as usize];
            let hi = sorted[((0.95 * sorted.len() as f64) as usize).min(sorted.len() - 1)];
            if (lo..=hi).contains(&alpha_true) {
                covered += 1;
            }
        }
        assert!(covered >= 82, "coverage {covered}/100");
    }

    #[test]
    fn doubling_series_rescales_nu_only() {
        // y → 2y quadruples every sumsq; with matched streams the α draws
        // are identical and the ν draws quadruple exactly.
        let bank = FilterBank::db2();
        let y = wavelet_domain_series(0.5, 1.0, 256, 5, &bank, 53).unwrap();
        let y2: Vec<f64> = y.iter().map(|&v| 2.0 * v).collect();
        let s1 = sufficient_stats(&dwt_forward(&y, &bank, 5).unwrap());
        let s2 = sufficient_stats(&dwt_forward(&y2, &bank, 5).unwrap());
        let priors = SubjectPriors::default();
        // Zero prior influence on the quadratic pieces would need s = 0;
        // the identity is exact only when the prior rate scales too, so
        // use s = 0-like tiny value for this check.
        let priors = SubjectPriors { s: 1e-300, ..priors };
        let config = ChainConfig { n_iter: 500, n_burn: 100, thin: 1, ..Default::default() };
        let mut r1 = CounterRng::new(77);
        let mut r2 = CounterRng::new(77);
        let c1 = run_chain(&s1, &priors, &config, &mut r1);
        let c2 = run_chain(&s2, &priors, &config, &mut r2);
        for (a1, a2) in c1.alpha.iter().zip(&c2.alpha) {
            assert!((a1 - a2).abs() < 1e-12);
        }
        for (n1, n2) in c1.nu.iter().zip(&c2.nu) {
            assert!((n2 / n1 - 4.0).abs() < 1e-9, "{n2} / {n1}");
        }
    }

    #[test]
    fn estimate_subject_flags_constant_voxel() {
        let grid = VolumeGrid::new((2, 2, 1), (1.0, 1.0, 1.0)).unwrap();
        let mut data = Array2::<f64>::zeros((4, 64));
        let bank = FilterBank::db2();
        for v in 0..3 {
            let y = wavelet_domain_series(0.5, 1.0, 64, 3, &bank, v as u64).unwrap();
            for t in 0..64 {
                data[(v, t)] = y[t];
            }
        }
        // Voxel 3 constant.
        for t in 0..64 {
            data[(3, t)] = 4.2;
        }
        let ds = Dataset4D::new(grid, data, "subj-a").unwrap();
        let map = estimate_subject(
            &ds,
            &bank,
            3,
            &SubjectPriors::default(),
            &ChainConfig { n_iter: 400, n_burn: 100, thin: 1, ..Default::default() },
        )
        .unwrap();
        assert_eq!(map.degenerate, vec![3]);
        assert!(map.alpha_mean[3].is_nan());
        assert!(map.alpha_mean[0].is_finite());
        assert!((0.0..=1.0).contains(&map.acceptance[0]));
    }

    #[test]
    fn estimate_subject_thread_count_invariant() {
        let grid = VolumeGrid::new((4, 2, 2), (1.0, 1.0, 1.0)).unwrap();
        let bank = FilterBank::db2();
        let mut data = Array2::<f64>::zeros((16, 128));
        for v in 0..16 {
            let y = wavelet_domain_series(0.4, 1.0, 128, 4, &bank, 900 + v as u64).unwrap();
            for t in 0..128 {
                data[(v, t)] = y[t];
            }
        }
        let ds = Dataset4D::new(grid, data, "subj-b").unwrap();
        let cfg = ChainConfig { n_iter: 300, n_burn: 100, thin: 1, ..Default::default() };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                estimate_subject(&ds, &bank, 4, &SubjectPriors::default(), &cfg).unwrap()
            })
        };
        let m1 = run(1);
        let m4 = run(4);
        assert_eq!(m1.alpha_mean, m4.alpha_mean);
        assert_eq!(m1.nu_mean, m4.nu_mean);
    }

    #[test]
    fn spectral_screen_white_noise_flat() {
        let mut slopes = 0.0;
        for rep in 0..100 {
            let mut rng = CounterRng::from_parts(60, &[rep]);
            let y: Vec<f64> = (0..512).map(|_| rng.normal()).collect();
            slopes += spectral_slope_screen(&y, None).unwrap().slope;
        }
        let mean = slopes / 100.0;
        assert!(mean.abs() < 0.15, "mean slope {mean}");
    }

    #[test]
    fn spectral_screen_powerlaw_negative() {
        let spec = AutocovSpec::new(0.3, 1.0).unwrap();
        let mut negative = 0;
        for rep in 0..100 {
            let y = powerlaw_time_series(&spec, 512, 7000 + rep).unwrap();
            if spectral_slope_screen(&y, None).unwrap().slope < 0.0 {
                negative += 1;
            }
        }
        assert!(negative >= 95, "{negative}/100 negative");
    }

    #[test]
    fn spectral_screen_sinusoid_poor_fit() {
        // One spectral peak dominates; the linear fit must report it.
        let t = 512;
        let y: Vec<f64> = (0..t)
            .map(|i| (std::f64::consts::TAU * 96.0 * i as f64 / t as f64).sin())
            .collect();
        let fit = spectral_slope_screen(&y, None).unwrap();
        assert!(fit.r_squared < 0.5, "r2 {}", fit.r_squared);
    }

    #[test]
    fn spectral_screen_rejects_narrow_band() {
        let y: Vec<f64> = (0..128).map(|i| i as f64).collect();
        assert!(spectral_slope_screen(&y, Some((-0.32, -0.31))).is_err());
    }

    #[test]
    fn diagnostics_iid_ess() {
        let mut rng = CounterRng::new(61);
        let draws: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
        let d = chain_diagnostics(&draws, 50, 40).unwrap();
        assert!((d.acf[0] - 1.0).abs() < 1e-12);
        let ratio = d.ess / draws.len() as f64;
        assert!((0.8..=1.2).contains(&ratio), "ess ratio {ratio}");
    }

    #[test]
    fn diagnostics_constant_chain_flagged() {
        let draws = vec![1.0; 500];
        let d = chain_diagnostics(&draws, 20, 10).unwrap();
        assert!(d.degenerate);
        assert!(d.acf.iter().all(|&r| r == 1.0));
        assert!(d.ess <= 1.0);
    }

    #[test]
    fn diagnostics_ar1_ess() {
        // AR(1) with ρ = 0.5 has ESS/n = (1−ρ)/(1+ρ) = 1/3.
        let mut rng = CounterRng::new(62);
        let rho: f64 = 0.5;
        let mut x = 0.0;
        let scale = (1.0 - rho * rho).sqrt();
        let draws: Vec<f64> = (0..200_000)
            .map(|_| {
                x = rho * x + scale * rng.normal();
                x
            })
            .collect();
        let ess = effective_sample_size(&draws);
        let ratio = ess / draws.len() as f64;
        assert!((ratio - 1.0 / 3.0).abs() / (1.0 / 3.0) < 0.2, "ratio {ratio}");
    }

    #[test]
    fn diagnostics_require_enough_draws() {
        assert!(chain_diagnostics(&[0.5; 99], 10, 10).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ChainConfig { n_iter: 10, n_burn: 10, ..Default::default() }.validate().is_err());
        assert!(ChainConfig { thin: 0, ..Default::default() }.validate().is_err());
        assert!(ChainConfig { proposal_sd: 0.0, ..Default::default() }.validate().is_err());
        assert!(SubjectPriors { a: 0.0, ..Default::default() }.validate().is_err());
    }
}
