//! Deterministic counter-based random number generation.
//!
//! Every stochastic unit of work (a voxel chain, a simulated series, a
//! regression component) owns a private stream identified by a 64-bit key
//! derived from the run seed and the unit's coordinates. Output depends
//! only on (key, counter), never on thread scheduling, so parallel runs
//! are bit-reproducible at any worker count.
//!
//! The generator is the SplitMix64 construction (Steele, Lea & Flood
//! 2014): output_i = mix64(key + i * GOLDEN_GAMMA), where `mix64` is the
//! Stafford "Mix13" finalizer. Gaussians are produced by applying the
//! AS241 normal quantile function (Wichura 1988, double-precision branch)
//! to the stream's uniforms, so a draw consumes exactly one counter step
//! and never rejects.

/// Weyl-sequence increment: 2^64 / phi, forced odd.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Stafford Mix13 constants).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream key by folding coordinate words into the seed.
///
/// Each part is pre-whitened with `mix64(part + GOLDEN_GAMMA)` so that
/// small integers (subject 0, voxel 1, ...) land far apart in key space.
pub fn stream_key(seed: u64, parts: &[u64]) -> u64 {
    let mut key = mix64(seed ^ GOLDEN_GAMMA);
    for &p in parts {
        key = mix64(key ^ mix64(p.wrapping_add(GOLDEN_GAMMA)));
    }
    key
}

/// Fold a string (e.g. a subject id) into a 64-bit word via FNV-1a.
pub fn fold_str(s: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = FNV_OFFSET;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Counter-based generator over a fixed stream key.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        CounterRng { key, counter: 0 }
    }

    /// Stream for a (seed, coordinates) unit of work.
    pub fn from_parts(seed: u64, parts: &[u64]) -> Self {
        CounterRng::new(stream_key(seed, parts))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in the open interval (0, 1), 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via the inverse-CDF transform of one uniform.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    /// Gamma(shape, rate) draw via Marsaglia–Tsang squeeze, with the
    /// shape<1 boost. Rejections only consume draws from this stream, so
    /// determinism is unaffected.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        debug_assert!(shape > 0.0 && rate > 0.0);
        if shape < 1.0 {
            let u = self.uniform();
            return self.gamma(shape + 1.0, rate) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v / rate;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v / rate;
            }
        }
    }

    /// Inverse-gamma(shape, rate) draw: reciprocal of a Gamma(shape, rate)
    /// variate (density ∝ x^(−shape−1) e^(−rate/x)).
    pub fn inv_gamma(&mut self, shape: f64, rate: f64) -> f64 {
        1.0 / self.gamma(shape, rate)
    }
}

/// Standard normal quantile, AS241 PPND16 (absolute error < 1e-15 over
/// p in (0,1)).
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly7(r, &A_CENTRAL) / poly7(r, &B_CENTRAL);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly7(r, &C_TAIL) / poly7(r, &D_TAIL)
    } else {
        r -= 5.0;
        poly7(r, &E_FAR_TAIL) / poly7(r, &F_FAR_TAIL)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn poly7(x: f64, c: &[f64; 8]) -> f64 {
    // c[0] + c[1] x + ... + c[7] x^7, Horner form.
    let mut acc = c[7];
    for k in (0..7).rev() {
        acc = acc * x + c[k];
    }
    acc
}

// Wichura (1988) algorithm AS241, PPND16 coefficient sets.
const A_CENTRAL: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B_CENTRAL: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C_TAIL: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D_TAIL: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E_FAR_TAIL: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F_FAR_TAIL: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn quantile_known_points() {
        assert!((normal_quantile(0.5)).abs() < 1e-15);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.025) + 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.8413447460685429) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-6] {
            let x = normal_quantile(p);
            assert!((n.cdf(x) - p).abs() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn cdf_matches_statrs() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in -40..=40 {
            let x = i as f64 * 0.2;
            assert!((normal_cdf(x) - n.cdf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = CounterRng::from_parts(7, &[1, 2]);
        let mut b = CounterRng::from_parts(7, &[1, 2]);
        let mut c = CounterRng::from_parts(7, &[2, 1]);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn uniform_in_open_interval() {
        let mut rng = CounterRng::new(42);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = CounterRng::new(1);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.normal();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gamma_moments_match() {
        // Gamma(shape, rate): mean shape/rate, var shape/rate^2.
        let mut rng = CounterRng::new(9);
        for &(shape, rate) in &[(0.5, 1.0), (2.0, 2.0), (7.5, 0.5)] {
            let n = 100_000;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let x = rng.gamma(shape, rate);
                s += x;
                s2 += x * x;
            }
            let mean = s / n as f64;
            let var = s2 / n as f64 - mean * mean;
            let true_mean = shape / rate;
            let true_var = shape / (rate * rate);
            assert!((mean - true_mean).abs() < 4.0 * (true_var / n as f64).sqrt() + 1e-3);
            assert!((var - true_var).abs() / true_var < 0.05);
        }
    }

    #[test]
    fn inv_gamma_mean() {
        // InvGamma(shape, rate) mean = rate / (shape - 1) for shape > 1.
        let mut rng = CounterRng::new(123);
        let (shape, rate) = (4.0, 6.0);
        let n = 200_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += rng.inv_gamma(shape, rate);
        }
        let mean = s / n as f64;
        assert!((mean - rate / (shape - 1.0)).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn fold_str_distinguishes_ids() {
        assert_ne!(fold_str("sub-01"), fold_str("sub-02"));
        assert_eq!(fold_str("sub-01"), fold_str("sub-01"));
    }
}
