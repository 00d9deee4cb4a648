//! Group-level Bayesian regression of projected maps on covariates.
//!
//! One independent normal–inverse-gamma model per retained component r:
//!
//! ```text
//! α*_r | β, δ²  ~ N(Zβ, δ² I_N)
//! β | δ²        ~ MVN(μ₀, δ² Λ₀)
//! δ²            ~ Inv-Gamma(k, l)
//! ```
//!
//! Gibbs alternates the exact full conditionals:
//! β | δ² ~ MVN(μ_n, δ²A⁻¹) with A = ZᵀZ + Λ₀⁻¹ and
//! μ_n = A⁻¹(Λ₀⁻¹μ₀ + Zᵀα*); δ² | β ~ Inv-Gamma(k + (N+Q)/2,
//! l + ½‖α* − Zβ‖² + ½(β−μ₀)ᵀΛ₀⁻¹(β−μ₀)). The (N+Q)/2 shape carries the
//! β-prior's δ² normalizer; the δ²-marginal consequently matches the
//! closed-form Inv-Gamma(k + N/2, ·), which the tests verify against
//! quadrature.
//!
//! Components are independent parallel work units with private streams
//! keyed by (seed, component index); draws depend only on a component's
//! own data and stream.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::basis::{CompositeBasis, ProjectedMaps};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, chol_inverse, chol_solve, solve_lower_transpose};
use crate::rng::CounterRng;

/// Normal–inverse-gamma prior for one component's regression.
#[derive(Clone, Debug)]
pub struct GroupPriors {
    pub mu0: Array1<f64>,
    /// Prior covariance scale of β (β | δ² ~ MVN(μ₀, δ²Λ₀)); SPD.
    pub lambda0: Array2<f64>,
    pub k: f64,
    pub l: f64,
}

impl GroupPriors {
    /// Zero-mean isotropic prior: (μ₀, Λ₀) = (0, scale·I), defaults
    /// (k, l) = (0.1, 0.5).
    pub fn isotropic(q: usize, scale: f64) -> Self {
        GroupPriors {
            mu0: Array1::zeros(q),
            lambda0: Array2::eye(q) * scale,
            k: 0.1,
            l: 0.5,
        }
    }

    /// Unit-information style prior Λ₀ = scale·(ZᵀZ)⁻¹.
    pub fn g_prior(z: &Array2<f64>, scale: f64) -> Result<Self> {
        let ztz = z.t().dot(z);
        let l = cholesky(&ztz)
            .map_err(|_| Error::Numeric("design matrix is rank deficient".into()))?;
        let inv = chol_inverse(&l);
        Ok(GroupPriors {
            mu0: Array1::zeros(z.ncols()),
            lambda0: inv * scale,
            k: 0.1,
            l: 0.5,
        })
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.mu0.len() != q || self.lambda0.nrows() != q || self.lambda0.ncols() != q {
            return Err(Error::Config(format!(
                "group prior dimensions do not match Q = {q}"
            )));
        }
        if self.k <= 0.0 || self.l <= 0.0 {
            return Err(Error::Config("inverse-gamma hyperparameters must be positive".into()));
        }
        cholesky(&self.lambda0)
            .map_err(|_| Error::Config("prior scale matrix must be positive definite".into()))?;
        Ok(())
    }
}

/// MCMC schedule for the group sampler.
#[derive(Clone, Copy, Debug)]
pub struct GroupConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig { n_iter: 4000, n_burn: 1000, thin: 1, seed: 0 }
    }
}

impl GroupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::Config("group burn-in must be smaller than total iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("group thinning stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }
}

/// Retained draws for one component.
#[derive(Clone, Debug)]
pub struct ComponentDraws {
    /// `n_draws × Q`.
    pub beta: Array2<f64>,
    pub delta2: Vec<f64>,
}

/// Posterior draws for every component, equal draw counts across
/// components.
#[derive(Clone, Debug)]
pub struct GroupPosterior {
    pub components: Vec<ComponentDraws>,
    pub q: usize,
    pub n_draws: usize,
}

impl GroupPosterior {
    /// Component-space posterior mean as a `Q × PC_f` matrix.
    pub fn mean_matrix(&self) -> Array2<f64> {
        let pc = self.components.len();
        let mut m = Array2::<f64>::zeros((self.q, pc));
        for (r, c) in self.components.iter().enumerate() {
            for qi in 0..self.q {
                m[(qi, r)] = c.beta.column(qi).sum() / self.n_draws as f64;
            }
        }
        m
    }

    /// Assemble the `Q × PC_f` coefficient matrix of one draw.
    pub fn draw_matrix(&self, t: usize) -> Array2<f64> {
        let pc = self.components.len();
        let mut m = Array2::<f64>::zeros((self.q, pc));
        for (r, c) in self.components.iter().enumerate() {
            for qi in 0..self.q {
                m[(qi, r)] = c.beta[(t, qi)];
            }
        }
        m
    }
}

/// Precomputed factorizations shared by every iteration of one component.
struct GibbsWorkspace {
    chol_a: Array2<f64>,
    lambda0_inv: Array2<f64>,
    n: usize,
    q: usize,
}

impl GibbsWorkspace {
    fn new(z: &Array2<f64>, priors: &GroupPriors) -> Result<Self> {
        let n = z.nrows();
        let q = z.ncols();
        if n <= q {
            return Err(Error::Data(format!(
                "need more subjects ({n}) than covariates ({q})"
            )));
        }
        priors.validate(q)?;
        let ztz = z.t().dot(z);
        cholesky(&ztz).map_err(|_| Error::Numeric("design matrix is rank deficient".into()))?;
        let lambda0_inv = chol_inverse(&cholesky(&priors.lambda0)?);
        let a = &ztz + &lambda0_inv;
        let chol_a = cholesky(&a).map_err(|_| {
            Error::Numeric("posterior precision not positive definite (check priors)".into())
        })?;
        Ok(GibbsWorkspace { chol_a, lambda0_inv, n, q })
    }
}

/// Gibbs sampler for a single component column.
pub fn gibbs_component(
    alpha_star: &Array1<f64>,
    z: &Array2<f64>,
    priors: &GroupPriors,
    config: &GroupConfig,
    rng: &mut CounterRng,
) -> Result<ComponentDraws> {
    config.validate()?;
    let ws = GibbsWorkspace::new(z, priors)?;
    if alpha_star.len() != ws.n {
        return Err(Error::Data(format!(
            "component has {} observations for {} design rows",
            alpha_star.len(),
            ws.n
        )));
    }
    run_component(alpha_star, z, priors, config, &ws, rng)
}

fn run_component(
    alpha_star: &Array1<f64>,
    z: &Array2<f64>,
    priors: &GroupPriors,
    config: &GroupConfig,
    ws: &GibbsWorkspace,
    rng: &mut CounterRng,
) -> Result<ComponentDraws> {
    let (n, q) = (ws.n, ws.q);
    // μ_n does not involve δ², so it is fixed across iterations.
    let rhs = ws.lambda0_inv.dot(&priors.mu0) + z.t().dot(alpha_star);
    let mu_n = chol_solve(&ws.chol_a, &rhs);

    let shape = priors.k + (n + q) as f64 / 2.0;
    let retained = config.n_retained();
    let mut beta_draws = Array2::<f64>::zeros((retained, q));
    let mut delta2_draws = Vec::with_capacity(retained);

    let mut delta2 = {
        let mean = alpha_star.sum() / n as f64;
        (alpha_star.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).max(1e-12)
    };
    let mut kept = 0usize;
    for it in 0..config.n_iter {
        // β | δ² = μ_n + √δ² · L_A⁻ᵀ ξ.
        let xi = Array1::from_iter((0..q).map(|_| rng.normal()));
        let step = solve_lower_transpose(&ws.chol_a, &xi);
        let beta = &mu_n + &(step * delta2.sqrt());

        // δ² | β.
        let resid = alpha_star - &z.dot(&beta);
        let rss: f64 = resid.iter().map(|v| v * v).sum();
        let dev = &beta - &priors.mu0;
        let prior_quad = dev.dot(&ws.lambda0_inv.dot(&dev));
        let rate = priors.l + 0.5 * rss + 0.5 * prior_quad;
        delta2 = rng.inv_gamma(shape, rate);

        if it >= config.n_burn && (it - config.n_burn) % config.thin == 0 {
            for qi in 0..q {
                beta_draws[(kept, qi)] = beta[qi];
            }
            delta2_draws.push(delta2);
            kept += 1;
        }
    }
    Ok(ComponentDraws { beta: beta_draws, delta2: delta2_draws })
}

/// Run the component sampler independently over every projected column,
/// each with a private stream keyed by (seed, component index).
pub fn fit_group(
    projected: &ProjectedMaps<f64>,
    z: &Array2<f64>,
    priors: &GroupPriors,
    config: &GroupConfig,
) -> Result<GroupPosterior> {
    config.validate()?;
    if projected.matrix.nrows() != z.nrows() {
        return Err(Error::Data(format!(
            "projected maps have {} subjects, design has {}",
            projected.matrix.nrows(),
            z.nrows()
        )));
    }
    let ws = GibbsWorkspace::new(z, priors)?;
    let pc = projected.matrix.ncols();
    let components: Vec<ComponentDraws> = (0..pc)
        .into_par_iter()
        .map(|r| {
            let col = projected.matrix.column(r).to_owned();
            let mut rng = CounterRng::from_parts(config.seed, &[r as u64]);
            run_component(&col, z, priors, config, &ws, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupPosterior { components, q: z.ncols(), n_draws: config.n_retained() })
}

/// Stream back-projected voxel coefficient maps draw by draw without
/// materializing the full sequence: `visit(t, Q × N_v map)`.
pub fn backproject_draws(
    posterior: &GroupPosterior,
    basis: &CompositeBasis<f64>,
    mut visit: impl FnMut(usize, &Array2<f64>) -> Result<()>,
) -> Result<()> {
    if posterior.components.len() != basis.n_components() {
        return Err(Error::Data(format!(
            "posterior has {} components, basis has {}",
            posterior.components.len(),
            basis.n_components()
        )));
    }
    for t in 0..posterior.n_draws {
        let map = basis.backproject_effects(&posterior.draw_matrix(t))?;
        visit(t, &map)?;
    }
    Ok(())
}

/// Column standardization of a design matrix: non-intercept columns with
/// more than two distinct values are z-scored; binary indicators and the
/// intercept pass through.
#[derive(Clone, Debug)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Columns that were actually scaled.
    pub scaled: Vec<bool>,
}

impl Standardization {
    pub fn fit(z: &Array2<f64>) -> Self {
        let n = z.nrows();
        let q = z.ncols();
        let mut means = vec![0.0; q];
        let mut sds = vec![1.0; q];
        let mut scaled = vec![false; q];
        for j in 1..q {
            let col = z.column(j);
            let mut distinct: Vec<f64> = col.to_vec();
            distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
            distinct.dedup();
            if distinct.len() <= 2 {
                continue;
            }
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            if var > 0.0 {
                means[j] = mean;
                sds[j] = var.sqrt();
                scaled[j] = true;
            }
        }
        Standardization { means, sds, scaled }
    }

    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = z.clone();
        for j in 0..z.ncols() {
            if self.scaled[j] {
                for i in 0..z.nrows() {
                    out[(i, j)] = (z[(i, j)] - self.means[j]) / self.sds[j];
                }
            }
        }
        out
    }

    /// Convert one standardized-unit coefficient row (indexed by
    /// covariate) back to raw units. Slopes divide by their column sd;
    /// the intercept absorbs the mean shifts.
    pub fn to_raw(&self, beta_std: &[f64]) -> Vec<f64> {
        let q = beta_std.len();
        let mut raw = vec![0.0; q];
        let mut intercept = beta_std[0];
        for j in 1..q {
            if self.scaled[j] {
                raw[j] = beta_std[j] / self.sds[j];
                intercept -= beta_std[j] * self.means[j] / self.sds[j];
            } else {
                raw[j] = beta_std[j];
            }
        }
        raw[0] = intercept;
        raw
    }
}
