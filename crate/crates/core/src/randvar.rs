//! Parametric nonnegative random variables with closed-form moments and
//! Laplace-Stieltjes transforms.
//!
//! Every family here has an exact first and second moment and an LST that
//! can be evaluated at complex arguments, which the exact engine needs for
//! transform evaluation and the simulator needs for sampling.
//!
//! The textual syntax used in configuration files is
//! `det(v)`, `exp(rate)`, `erlang(k,rate)`, `hyperexp(w1:r1,w2:r2,...)` and
//! `uniform(a,b)`. [`RandVar`] implements both [`std::fmt::Display`] and
//! [`std::str::FromStr`] for it.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

/// Tolerance on the sum of hyperexponential weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RandVarError {
    #[error("{family}: parameter `{param}` must be {requirement}, got {value}")]
    InvalidParameter {
        family: &'static str,
        param: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("hyperexp: weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("hyperexp: {weights} weights but {rates} rates")]
    LengthMismatch { weights: usize, rates: usize },
    #[error("no supported family matches mean {mean} and squared coefficient of variation {scv}")]
    NoTwoMomentFit { mean: f64, scv: f64 },
    #[error("cannot parse distribution `{input}`: {reason}")]
    Parse { input: String, reason: String },
}

/// The distribution family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Deterministic { value: f64 },
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    Uniform { lower: f64, upper: f64 },
}

/// A validated nonnegative random variable.
///
/// Values are immutable once built; all constructors check the parameter
/// invariants, so every accessor is infallible.
#[derive(Debug, Clone, PartialEq)]
pub struct RandVar {
    family: Family,
}

fn positive(family: &'static str, param: &'static str, value: f64) -> Result<(), RandVarError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(RandVarError::InvalidParameter {
            family,
            param,
            requirement: "finite and strictly positive",
            value,
        })
    }
}

impl RandVar {
    /// Point mass at `value`. A zero value is accepted so that zero
    /// switch-over times can be expressed.
    pub fn deterministic(value: f64) -> Result<Self, RandVarError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(RandVarError::InvalidParameter {
                family: "det",
                param: "value",
                requirement: "finite and nonnegative",
                value,
            });
        }
        Ok(Self {
            family: Family::Deterministic { value },
        })
    }

    pub fn zero() -> Self {
        Self {
            family: Family::Deterministic { value: 0.0 },
        }
    }

    pub fn exponential(rate: f64) -> Result<Self, RandVarError> {
        positive("exp", "rate", rate)?;
        Ok(Self {
            family: Family::Exponential { rate },
        })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self, RandVarError> {
        if shape == 0 {
            return Err(RandVarError::InvalidParameter {
                family: "erlang",
                param: "shape",
                requirement: "at least 1",
                value: 0.0,
            });
        }
        positive("erlang", "rate", rate)?;
        Ok(Self {
            family: Family::Erlang { shape, rate },
        })
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, RandVarError> {
        if weights.len() != rates.len() || weights.is_empty() {
            return Err(RandVarError::LengthMismatch {
                weights: weights.len(),
                rates: rates.len(),
            });
        }
        for &w in &weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(RandVarError::InvalidParameter {
                    family: "hyperexp",
                    param: "weight",
                    requirement: "finite and nonnegative",
                    value: w,
                });
            }
        }
        for &r in &rates {
            positive("hyperexp", "rate", r)?;
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(RandVarError::WeightSum(sum));
        }
        Ok(Self {
            family: Family::HyperExponential { weights, rates },
        })
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self, RandVarError> {
        if !(lower.is_finite() && lower >= 0.0) {
            return Err(RandVarError::InvalidParameter {
                family: "uniform",
                param: "lower",
                requirement: "finite and nonnegative",
                value: lower,
            });
        }
        if !(upper.is_finite() && upper > lower) {
            return Err(RandVarError::InvalidParameter {
                family: "uniform",
                param: "upper",
                requirement: "finite and greater than lower",
                value: upper,
            });
        }
        Ok(Self {
            family: Family::Uniform { lower, upper },
        })
    }

    /// Two-moment fit from a mean and a squared coefficient of variation.
    ///
    /// * `scv == 0`: deterministic
    /// * `scv == 1`: exponential
    /// * `scv > 1`: two-phase hyperexponential with balanced means
    /// * `1/scv` integral: Erlang
    /// * `scv <= 1/3`: uniform centred on the mean
    ///
    /// Anything else has no exact fit within the supported families.
    pub fn from_mean_scv(mean: f64, scv: f64) -> Result<Self, RandVarError> {
        positive("fit", "mean", mean)?;
        if !(scv.is_finite() && scv >= 0.0) {
            return Err(RandVarError::NoTwoMomentFit { mean, scv });
        }
        if scv == 0.0 {
            return Self::deterministic(mean);
        }
        if (scv - 1.0).abs() < 1e-12 {
            return Self::exponential(1.0 / mean);
        }
        if scv > 1.0 {
            let p1 = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
            let p2 = 1.0 - p1;
            return Self::hyperexponential(vec![p1, p2], vec![2.0 * p1 / mean, 2.0 * p2 / mean]);
        }
        let k = (1.0 / scv).round();
        if (1.0 / scv - k).abs() < 1e-9 && k <= u32::MAX as f64 {
            return Self::erlang(k as u32, k / mean);
        }
        if scv <= 1.0 / 3.0 {
            let half = (3.0 * scv).sqrt() * mean;
            return Self::uniform(mean - half, mean + half);
        }
        Err(RandVarError::NoTwoMomentFit { mean, scv })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn mean(&self) -> f64 {
        match &self.family {
            Family::Deterministic { value } => *value,
            Family::Exponential { rate } => 1.0 / rate,
            Family::Erlang { shape, rate } => f64::from(*shape) / rate,
            Family::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
            Family::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    /// Second raw moment `E[X^2]`.
    pub fn moment2(&self) -> f64 {
        match &self.family {
            Family::Deterministic { value } => value * value,
            Family::Exponential { rate } => 2.0 / (rate * rate),
            Family::Erlang { shape, rate } => {
                let k = f64::from(*shape);
                k * (k + 1.0) / (rate * rate)
            }
            Family::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| 2.0 * w / (r * r))
                .sum(),
            Family::Uniform { lower, upper } => {
                (lower * lower + lower * upper + upper * upper) / 3.0
            }
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.moment2() - m * m).max(0.0)
    }

    /// Squared coefficient of variation; zero for a point mass at zero.
    pub fn scv(&self) -> f64 {
        let m = self.mean();
        if m == 0.0 {
            0.0
        } else {
            self.variance() / (m * m)
        }
    }

    /// `E[exp(-omega X)]` for real `omega >= 0`.
    pub fn lst(&self, omega: f64) -> Result<f64, RandVarError> {
        if !(omega >= 0.0) {
            return Err(RandVarError::InvalidParameter {
                family: "lst",
                param: "omega",
                requirement: "nonnegative",
                value: omega,
            });
        }
        if omega == 0.0 {
            return Ok(1.0);
        }
        Ok(self.laplace(Complex64::new(omega, 0.0)).re)
    }

    /// The closed-form transform at a complex argument.
    ///
    /// Valid on `Re(s) >= 0`; the closed forms also continue analytically
    /// to a strip left of the imaginary axis, which finite-difference
    /// checks rely on. No domain check is performed.
    pub fn laplace(&self, s: Complex64) -> Complex64 {
        match &self.family {
            Family::Deterministic { value } => (-s * value).exp(),
            Family::Exponential { rate } => Complex64::new(*rate, 0.0) / (s + rate),
            Family::Erlang { shape, rate } => {
                (Complex64::new(*rate, 0.0) / (s + rate)).powu(*shape)
            }
            Family::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| Complex64::new(w * r, 0.0) / (s + r))
                .fold(Complex64::new(0.0, 0.0), |acc, x| acc + x),
            Family::Uniform { lower, upper } => {
                let width = upper - lower;
                (-s * lower).exp() * one_minus_exp_over(s * width)
            }
        }
    }

    /// Draws one variate. Only `rng.gen::<f64>()` is consumed, so the
    /// stream is fixed by the generator alone.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.family {
            Family::Deterministic { value } => *value,
            Family::Exponential { rate } => exp_variate(rng, *rate),
            Family::Erlang { shape, rate } => (0..*shape).map(|_| exp_variate(rng, *rate)).sum(),
            Family::HyperExponential { weights, rates } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut branch = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        branch = i;
                        break;
                    }
                }
                exp_variate(rng, rates[branch])
            }
            Family::Uniform { lower, upper } => {
                let u: f64 = rng.gen();
                lower + (upper - lower) * u
            }
        }
    }
}

fn exp_variate<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the logarithm is finite.
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

/// `(1 - e^{-x}) / x`, with a series near the origin.
fn one_minus_exp_over(x: Complex64) -> Complex64 {
    if x.norm() == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    -expm1(-x) / x
}

/// `exp(x) - 1` without cancellation near zero.
fn expm1(x: Complex64) -> Complex64 {
    let (a, b) = (x.re, x.im);
    let half = (0.5 * b).sin();
    Complex64::new(a.exp_m1() * b.cos() - 2.0 * half * half, a.exp() * b.sin())
}

impl fmt::Display for RandVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            Family::Deterministic { value } => write!(f, "det({value:?})"),
            Family::Exponential { rate } => write!(f, "exp({rate:?})"),
            Family::Erlang { shape, rate } => write!(f, "erlang({shape},{rate:?})"),
            Family::HyperExponential { weights, rates } => {
                write!(f, "hyperexp(")?;
                for (i, (w, r)) in weights.iter().zip(rates).enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{w:?}:{r:?}")?;
                }
                write!(f, ")")
            }
            Family::Uniform { lower, upper } => write!(f, "uniform({lower:?},{upper:?})"),
        }
    }
}

impl FromStr for RandVar {
    type Err = RandVarError;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| RandVarError::Parse {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let text = input.trim();
        let open = text.find('(').ok_or_else(|| fail("expected `name(args)`"))?;
        if !text.ends_with(')') {
            return Err(fail("missing closing parenthesis"));
        }
        let name = text[..open].trim().to_ascii_lowercase();
        let body = &text[open + 1..text.len() - 1];
        let args: Vec<&str> = body.split(',').map(str::trim).collect();
        let number = |s: &str| -> Result<f64, RandVarError> {
            s.parse::<f64>()
                .map_err(|_| fail(&format!("`{s}` is not a number")))
        };
        let arity = |n: usize| -> Result<(), RandVarError> {
            if args.len() == n && args.iter().all(|a| !a.is_empty()) {
                Ok(())
            } else {
                Err(fail(&format!("`{name}` takes {n} argument(s)")))
            }
        };
        match name.as_str() {
            "det" => {
                arity(1)?;
                Self::deterministic(number(args[0])?)
            }
            "exp" => {
                arity(1)?;
                Self::exponential(number(args[0])?)
            }
            "erlang" => {
                arity(2)?;
                let shape = args[0]
                    .parse::<u32>()
                    .map_err(|_| fail("erlang shape must be a positive integer"))?;
                Self::erlang(shape, number(args[1])?)
            }
            "uniform" => {
                arity(2)?;
                Self::uniform(number(args[0])?, number(args[1])?)
            }
            "hyperexp" => {
                let mut weights = Vec::with_capacity(args.len());
                let mut rates = Vec::with_capacity(args.len());
                for arg in &args {
                    let (w, r) = arg
                        .split_once(':')
                        .ok_or_else(|| fail("hyperexp phases are written `weight:rate`"))?;
                    weights.push(number(w.trim())?);
                    rates.push(number(r.trim())?);
                }
                Self::hyperexponential(weights, rates)
            }
            other => Err(fail(&format!("unknown family `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn families() -> Vec<RandVar> {
        vec![
            RandVar::deterministic(2.0).unwrap(),
            RandVar::exponential(1.0).unwrap(),
            RandVar::exponential(3.5).unwrap(),
            RandVar::erlang(3, 2.0).unwrap(),
            RandVar::hyperexponential(vec![0.3, 0.7], vec![0.5, 4.0]).unwrap(),
            RandVar::uniform(0.0, 1.0).unwrap(),
            RandVar::uniform(0.5, 2.5).unwrap(),
        ]
    }

    #[test]
    fn closed_form_moments() {
        assert_eq!(RandVar::exponential(1.0).unwrap().mean(), 1.0);
        assert_eq!(RandVar::deterministic(2.0).unwrap().mean(), 2.0);
        assert_eq!(RandVar::erlang(3, 2.0).unwrap().mean(), 1.5);
        assert_eq!(RandVar::exponential(1.0).unwrap().moment2(), 2.0);
        assert_eq!(RandVar::deterministic(2.0).unwrap().moment2(), 4.0);
        assert!((RandVar::uniform(0.0, 1.0).unwrap().moment2() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_lst() {
        let exp = RandVar::exponential(1.0).unwrap();
        assert!((exp.lst(1.0).unwrap() - 0.5).abs() < 1e-15);
        let det = RandVar::deterministic(2.0).unwrap();
        assert!((det.lst(1.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        for rv in families() {
            assert_eq!(rv.lst(0.0).unwrap(), 1.0);
        }
        assert!(exp.lst(-0.1).is_err());
    }

    #[test]
    fn lst_derivatives_match_moments() {
        for rv in families() {
            let f = |w: f64| rv.laplace(Complex64::new(w, 0.0)).re;
            let h1 = 1e-6;
            let d1 = -(f(h1) - f(-h1)) / (2.0 * h1);
            let m = rv.mean();
            assert!((d1 - m).abs() <= 1e-6 * m, "{rv}: {d1} vs {m}");
            // A 1e-6 step leaves ~1e-3 rounding noise in a second difference.
            let h2 = 1e-4;
            let d2 = (f(h2) - 2.0 * f(0.0) + f(-h2)) / (h2 * h2);
            let m2 = rv.moment2();
            assert!((d2 - m2).abs() <= 1e-4 * m2, "{rv}: {d2} vs {m2}");
        }
    }

    #[test]
    fn lst_monotone_and_bounded() {
        for rv in families() {
            let mut prev = 1.0;
            for k in 0..200 {
                let v = rv.lst(k as f64 * 0.05).unwrap();
                assert!(v > 0.0 && v <= 1.0);
                assert!(v <= prev + 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn sample_means_within_five_standard_errors() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let n = 1_000_000;
        for rv in families() {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += rv.sample(&mut rng);
            }
            let mean = sum / n as f64;
            let se = (rv.variance() / n as f64).sqrt();
            assert!((mean - rv.mean()).abs() <= 5.0 * se + 1e-12, "{rv}: {mean}");
        }
    }

    #[test]
    fn exponential_and_erlang_sample_statistics() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let n = 1_000_000;
        let exp = RandVar::exponential(1.0).unwrap();
        let mean = (0..n).map(|_| exp.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);

        let erl = RandVar::erlang(3, 2.0).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| erl.sample(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.75).abs() < 0.02, "{var}");
    }

    #[test]
    fn deterministic_sample_ignores_rng() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
        let det = RandVar::deterministic(2.0).unwrap();
        for _ in 0..10 {
            assert_eq!(det.sample(&mut rng), 2.0);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(RandVar::exponential(0.0).is_err());
        assert!(RandVar::exponential(f64::NAN).is_err());
        assert!(RandVar::erlang(0, 1.0).is_err());
        assert!(RandVar::uniform(1.0, 1.0).is_err());
        assert!(RandVar::uniform(-1.0, 1.0).is_err());
        assert!(RandVar::deterministic(-1.0).is_err());
        assert!(matches!(
            RandVar::hyperexponential(vec![0.5, 0.6], vec![1.0, 2.0]),
            Err(RandVarError::WeightSum(_))
        ));
        assert!(RandVar::hyperexponential(vec![1.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn mean_scv_fit() {
        for (mean, scv) in [(2.0, 0.0), (2.0, 1.0), (2.0, 4.0), (1.5, 0.25), (1.0, 0.1), (3.0, 0.5)] {
            let rv = RandVar::from_mean_scv(mean, scv).unwrap();
            assert!((rv.mean() - mean).abs() < 1e-12 * mean, "{rv}");
            assert!((rv.scv() - scv).abs() < 1e-9, "{rv}: {}", rv.scv());
        }
        assert!(matches!(
            RandVar::from_mean_scv(1.0, 0.4),
            Err(RandVarError::NoTwoMomentFit { .. })
        ));
        assert!(matches!(
            RandVar::from_mean_scv(1.0, 4.0).unwrap().family(),
            Family::HyperExponential { .. }
        ));
    }

    #[test]
    fn parse_syntax() {
        assert_eq!("det(2)".parse::<RandVar>().unwrap(), RandVar::deterministic(2.0).unwrap());
        assert_eq!(" exp( 1.5 ) ".parse::<RandVar>().unwrap(), RandVar::exponential(1.5).unwrap());
        assert_eq!("erlang(3, 2)".parse::<RandVar>().unwrap(), RandVar::erlang(3, 2.0).unwrap());
        assert_eq!(
            "hyperexp(0.25:1, 0.75:3)".parse::<RandVar>().unwrap(),
            RandVar::hyperexponential(vec![0.25, 0.75], vec![1.0, 3.0]).unwrap()
        );
        assert_eq!("uniform(0,1)".parse::<RandVar>().unwrap(), RandVar::uniform(0.0, 1.0).unwrap());
        for bad in ["gamma(1)", "exp", "exp(1", "exp()", "exp(1,2)", "erlang(1.5,2)", "hyperexp(1)", "det(x)"] {
            assert!(bad.parse::<RandVar>().is_err(), "{bad}");
        }
    }

    fn arb_randvar() -> impl Strategy<Value = RandVar> {
        prop_oneof![
            (0.0..10.0f64).prop_map(|v| RandVar::deterministic(v).unwrap()),
            (0.01..10.0f64).prop_map(|r| RandVar::exponential(r).unwrap()),
            (1u32..20, 0.01..10.0f64).prop_map(|(k, r)| RandVar::erlang(k, r).unwrap()),
            (0.0..1.0f64, 0.01..10.0f64, 0.01..10.0f64).prop_map(|(w, a, b)| {
                RandVar::hyperexponential(vec![w, 1.0 - w], vec![a, b]).unwrap()
            }),
            (0.0..5.0f64, 0.01..5.0f64).prop_map(|(a, d)| RandVar::uniform(a, a + d).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(rv in arb_randvar()) {
            let text = rv.to_string();
            let back: RandVar = text.parse().unwrap();
            prop_assert_eq!(back, rv);
        }

        #[test]
        fn lst_in_unit_interval(rv in arb_randvar(), w in 0.0..50.0f64) {
            let v = rv.lst(w).unwrap();
            prop_assert!(v > 0.0 || rv.mean() * w > 700.0);
            prop_assert!(v <= 1.0);
        }
    }
}
