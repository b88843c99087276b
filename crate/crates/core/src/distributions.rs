//! Special functions and samplers used by the data-generating process, the
//! true-coefficient computation and the bandwidth rule.
//!
//! The normal CDF goes through `erfc` from `libm`; the normal quantile uses
//! Wichura's AS241 rational approximation followed by one Halley correction.
//! The regularized incomplete gamma and beta functions use the usual
//! series / continued-fraction split.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const MAX_CF_ITER: usize = 500;
const CF_EPS: f64 = 1e-15;
const FPMIN: f64 = 1e-300;

/// Distribution of the latent innovation driving the random coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnovationDist {
    StdNormal,
    /// Standard (unscaled) Student-t with `df` degrees of freedom.
    StudentT {
        df: u32,
    },
}

impl InnovationDist {
    pub fn student_t(df: u32) -> Result<Self> {
        let dist = InnovationDist::StudentT { df };
        dist.validate()?;
        Ok(dist)
    }

    /// Student-t needs a finite variance, so `df >= 3`.
    pub fn validate(&self) -> Result<()> {
        match *self {
            InnovationDist::StdNormal => Ok(()),
            InnovationDist::StudentT { df } if df >= 3 => Ok(()),
            InnovationDist::StudentT { df } => {
                Err(Error::domain(format!("Student-t innovations need df >= 3, got {df}")))
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            InnovationDist::StdNormal => norm_cdf(x),
            InnovationDist::StudentT { df } => t_cdf(x, df),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        match *self {
            InnovationDist::StdNormal => norm_quantile(p),
            InnovationDist::StudentT { df } => t_quantile(p, df),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample(self, rng)
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF.
pub fn norm_quantile(p: f64) -> Result<f64> {
    check_probability(p, "probability")?;
    let x = ppnd16(p);
    // One Halley step on Phi(x) - p.
    let e = norm_cdf(x) - p;
    let u = e * SQRT_2PI * libm::exp(0.5 * x * x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

fn poly(coeffs: &[f64; 8], r: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c)
}

// Wichura (1988), algorithm AS241.
fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    let q = p - 0.5;
    if libm::fabs(q) <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = libm::sqrt(-libm::log(r));
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Gamma distribution function with the given shape and scale.
pub fn gamma_cdf(x: f64, shape: f64, scale: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain(format!("gamma_cdf needs x >= 0, got {x}")));
    }
    if !(shape > 0.0 && scale > 0.0) {
        return Err(Error::domain(format!(
            "gamma_cdf needs positive shape and scale, got ({shape}, {scale})"
        )));
    }
    Ok(regularized_gamma_p(shape, x / scale))
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub(crate) fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = -x + a * libm::log(x) - libm::lgamma(a);
    if x < a + 1.0 {
        // Series representation.
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_CF_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if libm::fabs(del) < libm::fabs(sum) * CF_EPS {
                break;
            }
        }
        (sum * libm::exp(log_prefactor)).min(1.0)
    } else {
        // Continued fraction for Q(a, x), modified Lentz.
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_CF_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if libm::fabs(d) < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if libm::fabs(c) < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if libm::fabs(del - 1.0) < CF_EPS {
                break;
            }
        }
        (1.0 - libm::exp(log_prefactor) * h).max(0.0)
    }
}

/// Regularized incomplete beta `I_x(a, b)`.
pub(crate) fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let bt = libm::exp(ln_bt);
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * beta_cf(a, b, x) / a
    } else {
        1.0 - bt * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_CF_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < CF_EPS {
            break;
        }
    }
    h
}

pub fn t_pdf(x: f64, df: u32) -> f64 {
    let v = df as f64;
    let log_norm = libm::lgamma(0.5 * (v + 1.0)) - libm::lgamma(0.5 * v) - 0.5 * libm::log(v * core::f64::consts::PI);
    libm::exp(log_norm - 0.5 * (v + 1.0) * libm::log1p(x * x / v))
}

/// Distribution function of the standard Student-t law.
pub fn t_cdf(x: f64, df: u32) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let v = df as f64;
    let tail = 0.5 * regularized_beta(0.5 * v, 0.5, v / (v + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`t_cdf`], by safeguarded Newton iteration inside a bisection bracket.
pub fn t_quantile(p: f64, df: u32) -> Result<f64> {
    check_probability(p, "probability")?;
    if df == 0 {
        return Err(Error::domain("t_quantile needs df >= 1"));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let upper = p > 0.5;
    let target = if upper { p } else { 1.0 - p };

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while t_cdf(hi, df) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut x = ppnd16(target).clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = t_cdf(x, df) - target;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - f / t_pdf(x, df);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if libm::fabs(next - x) <= 1e-15 * x.max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(if upper { x } else { -x })
}

/// One i.i.d. draw from the innovation distribution.
pub fn sample<R: Rng + ?Sized>(dist: &InnovationDist, rng: &mut R) -> f64 {
    match *dist {
        InnovationDist::StdNormal => StandardNormal.sample(rng),
        InnovationDist::StudentT { df } => StudentT::new(df as f64)
            .expect("degrees of freedom are positive")
            .sample(rng),
    }
}

/// Zero-mean Gaussian sampler with covariance `base^|j1 - j2|`.
#[derive(Debug, Clone)]
pub struct CovariateSampler {
    chol: DMatrix<f64>,
}

impl CovariateSampler {
    pub fn new(q: usize, correlation_base: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::domain("covariate dimension must be at least 1"));
        }
        if !(libm::fabs(correlation_base) < 1.0) {
            return Err(Error::domain(format!(
                "covariate correlation base must satisfy |base| < 1, got {correlation_base}"
            )));
        }
        let sigma = DMatrix::from_fn(q, q, |a, b| libm::pow(correlation_base, a.abs_diff(b) as f64));
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::domain("covariate covariance is not positive definite"))?;
        Ok(Self { chol: chol.l() })
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let q = self.dim();
        let e = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
        (&self.chol * e).iter().copied().collect()
    }
}

/// Draw one vector of node covariates.
pub fn sample_node_covariates<R: Rng + ?Sized>(q: usize, correlation_base: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(CovariateSampler::new(q, correlation_base)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_rng;
    use alloc::vec;
    use proptest::prelude::*;

    // Adaptive Simpson quadrature, used as an independent oracle.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn step<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || libm::fabs(left + right - whole) <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        step(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn normal_examples() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        let oracle = bisect(|x| norm_cdf(x) - 0.975, 0.0, 5.0, 1e-12);
        assert!((oracle - 1.959_964_0).abs() < 1e-7);
        assert!((norm_quantile(0.975).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(norm_quantile(p), Err(Error::Domain(_))));
            assert!(matches!(t_quantile(p, 5), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_cdf(0.0, 1.0, 2.0).unwrap(), 0.0);
        let expected = 1.0 - libm::exp(-1.0);
        assert!((gamma_cdf(2.0, 1.0, 2.0).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.632_120_6).abs() < 1e-7);

        // Shape 2, scale 2 density: x exp(-x/2) / 4.
        let density = |x: f64| x * libm::exp(-0.5 * x) / 4.0;
        let oracle = simpson(&density, 0.0, 4.0, 1e-12);
        assert!((gamma_cdf(4.0, 2.0, 2.0).unwrap() - oracle).abs() < 1e-9);
        // Both branches of the incomplete gamma.
        let far = simpson(&density, 0.0, 30.0, 1e-13);
        assert!((gamma_cdf(30.0, 2.0, 2.0).unwrap() - far).abs() < 1e-9);
        assert!(matches!(gamma_cdf(-1.0, 2.0, 2.0), Err(Error::Domain(_))));
        assert!((gamma_cdf(1e6, 3.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn t_examples() {
        assert_eq!(t_cdf(0.0, 5), 0.5);
        assert_eq!(t_quantile(0.5, 5).unwrap(), 0.0);
        let oracle = 0.5 + simpson(&|x| t_pdf(x, 5), 0.0, 2.015_048, 1e-12);
        assert!((oracle - 0.95).abs() < 1e-6);
        assert!((t_cdf(2.015_048, 5) - oracle).abs() < 1e-8);
        let q = t_quantile(0.9, 5).unwrap();
        let q_oracle = bisect(|x| t_cdf(x, 5) - 0.9, 0.0, 10.0, 1e-12);
        assert!((q - q_oracle).abs() < 1e-9);
        assert!((q - 1.475_884).abs() < 1e-5);
        // Density integrates to one against the CDF in the far tail.
        let tail = 0.5 + simpson(&|x| t_pdf(x, 3), 0.0, 50.0, 1e-12);
        assert!((t_cdf(50.0, 3) - tail).abs() < 1e-8);
    }

    #[test]
    fn student_t_requires_finite_variance() {
        assert!(InnovationDist::student_t(2).is_err());
        assert!(InnovationDist::student_t(5).is_ok());
    }

    proptest! {
        #[test]
        fn normal_cdf_quantile_inverse(p in 0.001f64..0.999) {
            let x = norm_quantile(p).unwrap();
            prop_assert!((norm_cdf(x) - p).abs() < 1e-12);
        }

        #[test]
        fn t_cdf_quantile_inverse(p in 0.001f64..0.999, df in 3u32..30) {
            let x = t_quantile(p, df).unwrap();
            prop_assert!((t_cdf(x, df) - p).abs() < 1e-10);
        }

        #[test]
        fn cdfs_are_bounded_and_monotone(x in -40.0f64..40.0, dx in 0.0f64..5.0) {
            for f in [norm_cdf as fn(f64) -> f64, |x| t_cdf(x, 5)] {
                let a = f(x);
                let b = f(x + dx);
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn gamma_scale_invariance(x in 0.0f64..50.0, a in 0.2f64..8.0, b in 0.1f64..5.0) {
            let lhs = gamma_cdf(x, a, b).unwrap();
            let rhs = gamma_cdf(x / b, a, 1.0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-14);
        }

        #[test]
        fn gamma_cdf_monotone(x in 0.0f64..30.0, dx in 0.0f64..3.0, a in 0.5f64..6.0) {
            prop_assert!(gamma_cdf(x + dx, a, 2.0).unwrap() >= gamma_cdf(x, a, 2.0).unwrap() - 1e-15);
        }
    }

    fn kolmogorov_distance(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                let lo = libm::fabs(f - i as f64 / n);
                let hi = libm::fabs((i + 1) as f64 / n - f);
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn samplers_match_their_cdfs() {
        let mut rng = replication_rng(11, 0);
        for dist in [InnovationDist::StdNormal, InnovationDist::StudentT { df: 5 }] {
            let draws: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
            let d = kolmogorov_distance(draws, |x| dist.cdf(x));
            assert!(d < 0.01, "{dist:?}: Kolmogorov distance {d}");
        }
    }

    #[test]
    fn student_t_draws_are_not_standardized() {
        let mut rng = replication_rng(5, 1);
        let n = 200_000;
        let dist = InnovationDist::StudentT { df: 5 };
        let var = (0..n).map(|_| dist.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 5.0 / 3.0).abs() < 0.1, "variance {var}");
    }

    fn sample_covariance(draws: &[Vec<f64>]) -> DMatrix<f64> {
        let q = draws[0].len();
        let n = draws.len() as f64;
        let mut mean = vec![0.0; q];
        for d in draws {
            for (m, x) in mean.iter_mut().zip(d) {
                *m += x / n;
            }
        }
        DMatrix::from_fn(q, q, |a, b| {
            draws.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b])).sum::<f64>() / (n - 1.0)
        })
    }

    #[test]
    fn covariates_match_target_covariance() {
        let mut rng = replication_rng(3, 0);
        let sampler = CovariateSampler::new(5, 0.5).unwrap();
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
        let cov = sample_covariance(&draws);
        for a in 0usize..5 {
            for b in 0..5 {
                let target = libm::pow(0.5, a.abs_diff(b) as f64);
                assert!((cov[(a, b)] - target).abs() < 0.02, "({a},{b}): {}", cov[(a, b)]);
            }
        }
    }

    #[test]
    fn covariate_edge_cases() {
        let mut rng = replication_rng(4, 0);
        assert_eq!(sample_node_covariates(1, 0.5, &mut rng).unwrap().len(), 1);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample_node_covariates(2, 0.0, &mut rng).unwrap())
            .collect();
        let cov = sample_covariance(&draws);
        let corr = cov[(0, 1)] / libm::sqrt(cov[(0, 0)] * cov[(1, 1)]);
        assert!(corr.abs() < 0.02);
        assert!(matches!(CovariateSampler::new(3, 1.0), Err(Error::Domain(_))));
        assert!(matches!(CovariateSampler::new(3, -1.2), Err(Error::Domain(_))));
    }
}
