//! Orthogonal discrete wavelet transform of voxel time series.
//!
//! The transform is the classic pyramid algorithm with periodic boundary
//! handling — the one choice that keeps the implied transform matrix
//! exactly orthogonal. Scale index `m` runs from 1 (finest detail) to `J`
//! (coarsest), with the scaling (approximation) coefficients last.
//!
//! Non-dyadic series are truncated to their largest dyadic prefix before
//! transforming; padding would distort coefficient variances, which the
//! downstream likelihood depends on.
//!
//! Note on vanishing moments: with periodic boundaries, a polynomial
//! input annihilates detail coefficients only at positions whose filter
//! cascade does not cross the wrap point; coefficients near the series
//! ends pick up the jump between `y[T-1]` and `y[0]` unless the series is
//! itself periodic.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::num::{pairwise_sum, Real};

/// Largest matrix side `build_w_matrix` will construct; the explicit
/// matrix is a testing device, not a production path.
pub const W_MATRIX_MAX: usize = 1 << 16;

/// Quadrature-mirror filter pair realizing one wavelet family.
#[derive(Clone, Debug)]
pub struct FilterBank<F> {
    name: &'static str,
    lowpass: Vec<F>,
    highpass: Vec<F>,
    vanishing_moments: usize,
}

impl<F: Real> FilterBank<F> {
    /// Haar wavelet (1 vanishing moment).
    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_lowpass("haar", vec![h, h], 1)
    }

    /// Daubechies wavelet with 2 vanishing moments.
    pub fn db2() -> Self {
        let s3 = 3.0_f64.sqrt();
        let norm = 4.0 * 2.0_f64.sqrt();
        Self::from_lowpass(
            "db2",
            vec![
                (1.0 + s3) / norm,
                (3.0 + s3) / norm,
                (3.0 - s3) / norm,
                (1.0 - s3) / norm,
            ],
            2,
        )
    }

    /// Daubechies wavelet with 4 vanishing moments.
    pub fn db4() -> Self {
        Self::from_lowpass(
            "db4",
            vec![
                0.230_377_813_308_855_23,
                0.714_846_570_552_541_5,
                0.630_880_767_929_590_4,
                -0.027_983_769_416_983_85,
                -0.187_034_811_718_881_14,
                0.030_841_381_835_986_965,
                0.032_883_011_666_982_945,
                -0.010_597_401_784_997_278,
            ],
            4,
        )
    }

    /// Look up a shipped bank by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "haar" | "db1" => Ok(Self::haar()),
            "db2" => Ok(Self::db2()),
            "db4" => Ok(Self::db4()),
            other => Err(Error::Config(format!(
                "unknown wavelet '{other}' (available: haar, db2, db4)"
            ))),
        }
    }

    fn from_lowpass(name: &'static str, lowpass_f64: Vec<f64>, vanishing_moments: usize) -> Self {
        let lowpass: Vec<F> = lowpass_f64.iter().map(|&c| F::from_f64_const(c)).collect();
        let len = lowpass.len();
        // Alternating-flip quadrature mirror: g[k] = (-1)^k h[len-1-k].
        let highpass: Vec<F> = (0..len)
            .map(|k| {
                let h = lowpass[len - 1 - k];
                if k % 2 == 0 {
                    h
                } else {
                    -h
                }
            })
            .collect();
        FilterBank { name, lowpass, highpass, vanishing_moments }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn lowpass(&self) -> &[F] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[F] {
        &self.highpass
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }

    pub fn vanishing_moments(&self) -> usize {
        self.vanishing_moments
    }
}

/// Scale-indexed coefficients from a `J`-level pyramid transform.
#[derive(Clone, Debug)]
pub struct Decomposition<F> {
    levels: usize,
    /// `detail[m-1]` holds scale `m`; length halves per level.
    detail: Vec<Vec<F>>,
    scaling: Vec<F>,
    t_dyadic: usize,
}

impl<F: Real> Decomposition<F> {
    pub fn new(detail: Vec<Vec<F>>, scaling: Vec<F>) -> Result<Self> {
        let levels = detail.len();
        if levels == 0 {
            return Err(Error::Data("decomposition needs at least one level".into()));
        }
        let t_dyadic = detail[0].len() * 2;
        for (i, d) in detail.iter().enumerate() {
            if d.len() != t_dyadic >> (i + 1) {
                return Err(Error::Data(format!(
                    "detail level {} has {} coefficients, expected {}",
                    i + 1,
                    d.len(),
                    t_dyadic >> (i + 1)
                )));
            }
        }
        if scaling.len() != t_dyadic >> levels {
            return Err(Error::Data(format!(
                "scaling has {} coefficients, expected {}",
                scaling.len(),
                t_dyadic >> levels
            )));
        }
        Ok(Decomposition { levels, detail, scaling, t_dyadic })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn t_dyadic(&self) -> usize {
        self.t_dyadic
    }

    /// Detail coefficients at scale `m` (1 = finest, `J` = coarsest).
    pub fn detail(&self, m: usize) -> &[F] {
        &self.detail[m - 1]
    }

    pub fn scaling(&self) -> &[F] {
        &self.scaling
    }

    pub fn detail_count(&self) -> usize {
        self.detail.iter().map(|d| d.len()).sum()
    }

    /// Coefficients in transform-row order: detail fine→coarse, then scaling.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.t_dyadic);
        for d in &self.detail {
            out.extend_from_slice(d);
        }
        out.extend_from_slice(&self.scaling);
        out
    }

    /// Total squared coefficient mass (equals input energy by Parseval).
    pub fn energy(&self) -> F {
        let mut e = F::zero();
        for d in &self.detail {
            e += pairwise_sum(&d.iter().map(|&x| x * x).collect::<Vec<F>>());
        }
        e + pairwise_sum(&self.scaling.iter().map(|&x| x * x).collect::<Vec<F>>())
    }
}

/// Largest power of two not exceeding `t`.
pub fn dyadic_length(t: usize) -> usize {
    if t == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - t.leading_zeros())
    }
}

/// Default decomposition depth: floor(log2(T_dyadic)) − 3, clamped to [3, 8].
///
/// Leaves at least 8 scaling coefficients so the coarsest retained detail
/// scale still has enough coefficients to inform the variance fit.
pub fn default_levels(t: usize) -> Result<usize> {
    if t < 16 {
        return Err(Error::Data(format!("series length {t} < 16")));
    }
    let log2 = dyadic_length(t).trailing_zeros() as i64;
    Ok((log2 - 3).clamp(3, 8) as usize)
}

fn check_args<F: Real>(t_dyadic: usize, bank: &FilterBank<F>, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Data("decomposition depth must be at least 1".into()));
    }
    if t_dyadic < (1 << levels) {
        return Err(Error::Data(format!(
            "{levels} levels need at least {} samples, have {t_dyadic}",
            1 << levels
        )));
    }
    if bank.len() > t_dyadic {
        return Err(Error::Data(format!(
            "filter length {} exceeds series length {t_dyadic}",
            bank.len()
        )));
    }
    Ok(())
}

/// Forward pyramid transform with periodic boundaries.
///
/// The input is truncated to its largest dyadic prefix. Coefficients are
/// identical (to round-off) to multiplying by the orthogonal matrix from
/// [`build_w_matrix`].
pub fn dwt_forward<F: Real>(y: &[F], bank: &FilterBank<F>, levels: usize) -> Result<Decomposition<F>> {
    let t_dyadic = dyadic_length(y.len());
    check_args(t_dyadic, bank, levels)?;
    if y[..t_dyadic].iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in input series".into()));
    }

    let h = bank.lowpass();
    let g = bank.highpass();
    let mut approx: Vec<F> = y[..t_dyadic].to_vec();
    let mut detail = Vec::with_capacity(levels);
    for _ in 0..levels {
        let n = approx.len();
        let half = n / 2;
        let mut next = vec![F::zero(); half];
        let mut det = vec![F::zero(); half];
        for k in 0..half {
            let mut a = F::zero();
            let mut d = F::zero();
            for (l, (&hl, &gl)) in h.iter().zip(g.iter()).enumerate() {
                let v = approx[(2 * k + l) % n];
                a += hl * v;
                d += gl * v;
            }
            next[k] = a;
            det[k] = d;
        }
        detail.push(det);
        approx = next;
    }
    Decomposition::new(detail, approx)
}

/// Inverse pyramid transform; exact adjoint of [`dwt_forward`], so the
/// round trip reproduces the (dyadic-truncated) input to round-off.
pub fn dwt_inverse<F: Real>(d: &Decomposition<F>, bank: &FilterBank<F>) -> Result<Vec<F>> {
    check_args(d.t_dyadic(), bank, d.levels())?;
    let h = bank.lowpass();
    let g = bank.highpass();
    let mut approx = d.scaling().to_vec();
    for m in (1..=d.levels()).rev() {
        let det = d.detail(m);
        let half = approx.len();
        if det.len() != half {
            return Err(Error::Data(format!(
                "level {m}: {} detail vs {} scaling coefficients",
                det.len(),
                half
            )));
        }
        let n = half * 2;
        let mut next = vec![F::zero(); n];
        for k in 0..half {
            let a = approx[k];
            let dk = det[k];
            for (l, (&hl, &gl)) in h.iter().zip(g.iter()).enumerate() {
                next[(2 * k + l) % n] += hl * a + gl * dk;
            }
        }
        approx = next;
    }
    Ok(approx)
}

/// Explicit transform matrix: rows are fine-to-coarse detail basis
/// functions followed by the scaling functions. Test/debug mode only —
/// the pyramid is the production path.
pub fn build_w_matrix<F: Real>(
    t_dyadic: usize,
    bank: &FilterBank<F>,
    levels: usize,
) -> Result<Array2<F>> {
    if !t_dyadic.is_power_of_two() {
        return Err(Error::Data(format!("matrix length {t_dyadic} is not a power of two")));
    }
    if t_dyadic > W_MATRIX_MAX {
        return Err(Error::Data(format!(
            "matrix mode capped at {W_MATRIX_MAX} samples (requested {t_dyadic})"
        )));
    }
    check_args(t_dyadic, bank, levels)?;
    let mut w = Array2::<F>::zeros((t_dyadic, t_dyadic));
    let mut basis = vec![F::zero(); t_dyadic];
    for col in 0..t_dyadic {
        basis[col] = F::one();
        let coeffs = dwt_forward(&basis, bank, levels)?.flatten();
        for (row, &c) in coeffs.iter().enumerate() {
            w[(row, col)] = c;
        }
        basis[col] = F::zero();
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_series(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = CounterRng::new(seed);
        (0..n).map(|_| rng.normal()).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn filter_invariants_all_banks() {
        for bank in [FilterBank::<f64>::haar(), FilterBank::db2(), FilterBank::db4()] {
            let h = bank.lowpass();
            let sum: f64 = h.iter().sum();
            let sumsq: f64 = h.iter().map(|x| x * x).sum();
            assert!((sum - 2.0_f64.sqrt()).abs() < 1e-12, "{}", bank.name());
            assert!((sumsq - 1.0).abs() < 1e-12, "{}", bank.name());
            // Orthogonality to even shifts.
            for shift in 1..h.len() / 2 {
                let dot: f64 = (0..h.len() - 2 * shift).map(|k| h[k] * h[k + 2 * shift]).sum();
                assert!(dot.abs() < 1e-12, "{} shift {shift}", bank.name());
            }
            // Quadrature mirror relation.
            let g = bank.highpass();
            for k in 0..h.len() {
                let expect = if k % 2 == 0 { h[h.len() - 1 - k] } else { -h[h.len() - 1 - k] };
                assert_eq!(g[k], expect);
            }
        }
    }

    #[test]
    fn constant_series_all_energy_in_scaling() {
        for bank in [FilterBank::<f64>::haar(), FilterBank::db2(), FilterBank::db4()] {
            let c = 2.75;
            let y = vec![c; 64];
            let levels = 3;
            let d = dwt_forward(&y, &bank, levels).unwrap();
            for m in 1..=levels {
                for &v in d.detail(m) {
                    assert!(v.abs() < 1e-10, "{} scale {m}", bank.name());
                }
            }
            let expect = c * (2.0_f64).powi(levels as i32).sqrt();
            for &v in d.scaling() {
                assert!((v - expect).abs() < 1e-10, "{}", bank.name());
            }
        }
    }

    #[test]
    fn haar_1234_hand_computed() {
        // Hand evaluation of the two-level Haar pyramid on [1,2,3,4].
        let d = dwt_forward(&[1.0, 2.0, 3.0, 4.0], &FilterBank::<f64>::haar(), 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.detail(1)[0] + s).abs() < 1e-14);
        assert!((d.detail(1)[1] + s).abs() < 1e-14);
        assert!((d.detail(2)[0] + 2.0).abs() < 1e-14);
        assert!((d.scaling()[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn parseval_on_noise() {
        let y = random_series(256, 11);
        let d = dwt_forward(&y, &FilterBank::<f64>::db2(), 4).unwrap();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        assert!((d.energy() - ey).abs() / ey < 1e-8);
    }

    #[test]
    fn round_trip_random_128() {
        for bank in [FilterBank::<f64>::haar(), FilterBank::db2(), FilterBank::db4()] {
            let y = random_series(128, 3);
            let d = dwt_forward(&y, &bank, 4).unwrap();
            let back = dwt_inverse(&d, &bank).unwrap();
            assert!(max_abs_diff(&y, &back) < 1e-8, "{}", bank.name());
        }
    }

    #[test]
    fn zero_decomposition_inverts_to_zero() {
        let d = Decomposition::new(vec![vec![0.0; 8], vec![0.0; 4]], vec![0.0; 4]).unwrap();
        let y = dwt_inverse(&d, &FilterBank::<f64>::db2()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_detail_coefficient_extracts_basis_row() {
        // Setting detail[1][0] = 1 and inverting must reproduce the first
        // transform basis function (first row of W), since the inverse is
        // the transpose.
        let bank = FilterBank::<f64>::db2();
        let w = build_w_matrix(16, &bank, 2).unwrap();
        let mut detail = vec![vec![0.0; 8], vec![0.0; 4]];
        detail[0][0] = 1.0;
        let d = Decomposition::new(detail, vec![0.0; 4]).unwrap();
        let y = dwt_inverse(&d, &bank).unwrap();
        let row: Vec<f64> = (0..16).map(|j| w[(0, j)]).collect();
        assert!(max_abs_diff(&y, &row) < 1e-12);
    }

    #[test]
    fn w_matrix_haar_2x2() {
        let w = build_w_matrix(2, &FilterBank::<f64>::haar(), 1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // Row 0 = detail, row 1 = scaling; sign convention fixed by the
        // quadrature mirror definition.
        assert!((w[(0, 0)] - s).abs() < 1e-15);
        assert!((w[(0, 1)] + s).abs() < 1e-15);
        assert!((w[(1, 0)] - s).abs() < 1e-15);
        assert!((w[(1, 1)] - s).abs() < 1e-15);
    }

    #[test]
    fn w_matrix_orthogonal_all_banks() {
        for (t, levels) in [(16usize, 3usize), (64, 4), (256, 4)] {
            for bank in [FilterBank::<f64>::haar(), FilterBank::db2(), FilterBank::db4()] {
                let w = build_w_matrix(t, &bank, levels).unwrap();
                let wtw = w.t().dot(&w);
                let mut max_dev = 0.0_f64;
                for i in 0..t {
                    for j in 0..t {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        max_dev = max_dev.max((wtw[(i, j)] - expect).abs());
                    }
                }
                assert!(max_dev < 1e-10, "{} T={t}: {max_dev}", bank.name());
            }
        }
    }

    #[test]
    fn pyramid_equals_matrix_product() {
        for t in [16usize, 64, 256] {
            for bank in [FilterBank::<f64>::haar(), FilterBank::db2(), FilterBank::db4()] {
                let levels = default_levels(t).unwrap();
                let y = random_series(t, t as u64);
                let w = build_w_matrix(t, &bank, levels).unwrap();
                let coeffs = dwt_forward(&y, &bank, levels).unwrap().flatten();
                let wy: Vec<f64> =
                    (0..t).map(|r| (0..t).map(|c| w[(r, c)] * y[c]).sum()).collect();
                assert!(max_abs_diff(&coeffs, &wy) < 1e-10, "{} T={t}", bank.name());
            }
        }
    }

    #[test]
    fn default_levels_formula() {
        assert_eq!(default_levels(128).unwrap(), 4);
        assert_eq!(default_levels(16).unwrap(), 3);
        assert_eq!(default_levels(234).unwrap(), 4);
        assert_eq!(default_levels(4096).unwrap(), 8);
        assert!(default_levels(15).is_err());
    }

    #[test]
    fn vanishing_moments_annihilate_interior_polynomials() {
        // Interior detail coefficients (cascade support clear of the
        // periodic wrap) must vanish on polynomial inputs of degree below
        // the bank's vanishing moments.
        let t = 256usize;
        for bank in [FilterBank::<f64>::db2(), FilterBank::db4()] {
            for deg in 0..bank.vanishing_moments() {
                let raw: Vec<f64> =
                    (0..t).map(|i| (i as f64 / t as f64).powi(deg as i32)).collect();
                let scale = raw.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
                let y: Vec<f64> = raw.iter().map(|v| v / scale).collect();
                let d = dwt_forward(&y, &bank, 3).unwrap();
                for m in 1..=3usize {
                    let support = ((1 << m) - 1) * (bank.len() - 1) + 1;
                    let interior_end = (t - support) >> m;
                    for k in 0..interior_end {
                        assert!(
                            d.detail(m)[k].abs() < 1e-8,
                            "{} deg {deg} scale {m} k {k}: {}",
                            bank.name(),
                            d.detail(m)[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let bank = FilterBank::<f64>::db2();
        assert!(dwt_forward(&[1.0; 8], &bank, 4).is_err());
        assert!(dwt_forward(&[1.0, f64::NAN, 0.0, 0.0], &bank, 1).is_err());
        assert!(build_w_matrix(24, &bank, 2).is_err());
        assert!(build_w_matrix(1 << 17, &bank, 2).is_err());
        // db4 filter (8 taps) longer than a 4-sample series.
        assert!(dwt_forward(&[1.0; 4], &FilterBank::<f64>::db4(), 1).is_err());
    }

    #[test]
    fn truncates_non_dyadic_input() {
        let y = random_series(100, 77);
        let d = dwt_forward(&y, &FilterBank::<f64>::haar(), 3).unwrap();
        assert_eq!(d.t_dyadic(), 64);
        let d64 = dwt_forward(&y[..64], &FilterBank::<f64>::haar(), 3).unwrap();
        assert_eq!(d.flatten(), d64.flatten());
    }

    #[test]
    fn f32_instantiation_round_trips() {
        let y: Vec<f32> = random_series(64, 21).iter().map(|&v| v as f32).collect();
        let bank = FilterBank::<f32>::db2();
        let d = dwt_forward(&y, &bank, 3).unwrap();
        let back = dwt_inverse(&d, &bank).unwrap();
        for (a, b) in y.iter().zip(&back) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
