//! The random environment: the law of the slot rate Λ, the (N, α, Δ) scaling,
//! and piecewise-constant rate paths.
//!
//! Only four closed-form families are supported. Everything downstream (PGF
//! products, log-MGF quadrature, exponential twisting) needs exact transforms,
//! so a new family has to provide the same contract: `mean`, `variance`,
//! `mgf`/`log_mgf` with an explicit finiteness domain, a sampler, a closed-form
//! twisted law and its essential supremum.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_nonnegative, require_positive, CoxqError, Result};

/// Distance from an open MGF-domain boundary inside which evaluation is refused.
pub const DOMAIN_MARGIN: f64 = 1e-12;

const PROB_SUM_TOL: f64 = 1e-12;

/// Parametric family of Λ. This is also the JSON form of [`EnvSpec`]:
///
/// ```json
/// {"family": "deterministic", "lambda": 2.0}
/// {"family": "gamma", "shape": 2.0, "scale": 0.5}
/// {"family": "exponential", "rate": 1.0}
/// {"family": "discrete_finite", "values": [1.0, 3.0], "probs": [0.5, 0.5]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvFamily {
    Deterministic { lambda: f64 },
    Gamma { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    DiscreteFinite { values: Vec<f64>, probs: Vec<f64> },
}

/// Validated law of the slot rate Λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvFamily", into = "EnvFamily")]
pub struct EnvSpec {
    family: EnvFamily,
    mean: f64,
    variance: f64,
}

impl TryFrom<EnvFamily> for EnvSpec {
    type Error = CoxqError;

    fn try_from(family: EnvFamily) -> Result<Self> {
        EnvSpec::new(family)
    }
}

impl From<EnvSpec> for EnvFamily {
    fn from(env: EnvSpec) -> Self {
        env.family
    }
}

impl EnvSpec {
    pub fn new(family: EnvFamily) -> Result<Self> {
        let (mean, variance) = match &family {
            EnvFamily::Deterministic { lambda } => {
                require_nonnegative("lambda", *lambda)?;
                (*lambda, 0.0)
            }
            EnvFamily::Gamma { shape, scale } => {
                require_positive("shape", *shape)?;
                require_positive("scale", *scale)?;
                (shape * scale, shape * scale * scale)
            }
            EnvFamily::Exponential { rate } => {
                require_positive("rate", *rate)?;
                (1.0 / rate, 1.0 / (rate * rate))
            }
            EnvFamily::DiscreteFinite { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(invalid(format!(
                        "discrete_finite needs equally long, nonempty values/probs (got {} and {})",
                        values.len(),
                        probs.len()
                    )));
                }
                for &v in values {
                    require_nonnegative("discrete value", v)?;
                }
                for &p in probs {
                    require_nonnegative("discrete probability", p)?;
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return Err(invalid(format!("discrete probabilities must sum to 1 (got {total})")));
                }
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                let variance: f64 = values.iter().zip(probs).map(|(v, p)| p * (v - mean) * (v - mean)).sum();
                (mean, variance)
            }
        };
        Ok(Self { family, mean, variance })
    }

    pub fn deterministic(lambda: f64) -> Result<Self> {
        Self::new(EnvFamily::Deterministic { lambda })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        Self::new(EnvFamily::Gamma { shape, scale })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(EnvFamily::Exponential { rate })
    }

    pub fn discrete_finite(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Self::new(EnvFamily::DiscreteFinite { values, probs })
    }

    pub fn family(&self) -> &EnvFamily {
        &self.family
    }

    /// 𝔼Λ
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// 𝕍arΛ
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Supremum of the (open) domain on which the MGF is finite.
    pub fn mgf_domain_upper(&self) -> f64 {
        match &self.family {
            EnvFamily::Gamma { scale, .. } => 1.0 / scale,
            EnvFamily::Exponential { rate } => *rate,
            _ => f64::INFINITY,
        }
    }

    /// Fails with [`CoxqError::Domain`] unless `theta` is strictly inside the
    /// MGF domain, with a margin of [`DOMAIN_MARGIN`] from the boundary.
    pub fn check_domain(&self, theta: f64) -> Result<()> {
        if theta.is_nan() {
            return Err(CoxqError::Domain("theta is NaN".into()));
        }
        let upper = self.mgf_domain_upper();
        if upper.is_finite() && theta >= upper - DOMAIN_MARGIN * upper.max(1.0) {
            return Err(CoxqError::Domain(format!(
                "theta = {theta} is not inside the MGF domain (-inf, {upper})"
            )));
        }
        if theta.is_infinite() {
            return Err(CoxqError::Domain(format!("theta = {theta} is not finite")));
        }
        Ok(())
    }

    /// 𝔼 e^{θΛ}
    pub fn mgf(&self, theta: f64) -> Result<f64> {
        Ok(self.log_mgf(theta)?.exp())
    }

    /// log 𝔼 e^{θΛ}; discrete laws are evaluated with a log-sum-exp.
    pub fn log_mgf(&self, theta: f64) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match &self.family {
            EnvFamily::Deterministic { lambda } => theta * lambda,
            EnvFamily::Gamma { shape, scale } => -shape * (-scale * theta).ln_1p(),
            EnvFamily::Exponential { rate } => -(-theta / rate).ln_1p(),
            EnvFamily::DiscreteFinite { values, probs } => log_sum_exp(
                values
                    .iter()
                    .zip(probs)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(v, p)| p.ln() + theta * v),
            ),
        })
    }

    /// First derivative of the log-MGF, i.e. the mean of the θ-twisted law.
    pub fn log_mgf_derivative(&self, theta: f64) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match &self.family {
            EnvFamily::Deterministic { lambda } => *lambda,
            EnvFamily::Gamma { shape, scale } => shape * scale / (1.0 - scale * theta),
            EnvFamily::Exponential { rate } => 1.0 / (rate - theta),
            EnvFamily::DiscreteFinite { values, probs } => {
                let w = twisted_weights(values, probs, theta);
                values.iter().zip(&w).map(|(v, w)| v * w).sum()
            }
        })
    }

    /// Second derivative of the log-MGF, i.e. the variance of the θ-twisted law.
    pub fn log_mgf_second_derivative(&self, theta: f64) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match &self.family {
            EnvFamily::Deterministic { .. } => 0.0,
            EnvFamily::Gamma { shape, scale } => {
                let s = scale / (1.0 - scale * theta);
                shape * s * s
            }
            EnvFamily::Exponential { rate } => 1.0 / ((rate - theta) * (rate - theta)),
            EnvFamily::DiscreteFinite { values, probs } => {
                let w = twisted_weights(values, probs, theta);
                let m: f64 = values.iter().zip(&w).map(|(v, w)| v * w).sum();
                values.iter().zip(&w).map(|(v, w)| w * (v - m) * (v - m)).sum()
            }
        })
    }

    /// y = inf{x > 0 : P(Λ ≤ x) = 1}; +∞ for the unbounded families.
    pub fn essential_sup(&self) -> f64 {
        match &self.family {
            EnvFamily::Deterministic { lambda } => *lambda,
            EnvFamily::Gamma { .. } | EnvFamily::Exponential { .. } => f64::INFINITY,
            EnvFamily::DiscreteFinite { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, &p)| p > 0.0)
                .map(|(v, _)| *v)
                .fold(0.0, f64::max),
        }
    }

    /// The exponentially twisted law Q(dx) ∝ e^{ηx} P(dx), which stays in the
    /// same family for all four built-ins.
    pub fn twisted(&self, eta: f64) -> Result<EnvSpec> {
        self.check_domain(eta)?;
        match &self.family {
            EnvFamily::Deterministic { .. } => Ok(self.clone()),
            EnvFamily::Gamma { shape, scale } => EnvSpec::gamma(*shape, scale / (1.0 - scale * eta)),
            EnvFamily::Exponential { rate } => EnvSpec::exponential(rate - eta),
            EnvFamily::DiscreteFinite { values, probs } => {
                let mut w = twisted_weights(values, probs, eta);
                // absorb rounding so the sum check passes
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= total);
                EnvSpec::discrete_finite(values.clone(), w)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    /// Draw from the η-twisted law.
    pub fn sample_twisted<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<f64> {
        Ok(self.twisted(eta)?.sample(rng))
    }

    /// A prepared sampler for hot loops.
    pub fn sampler(&self) -> RateSampler {
        match &self.family {
            EnvFamily::Deterministic { lambda } => RateSampler::Constant(*lambda),
            EnvFamily::Gamma { shape, scale } => {
                RateSampler::Gamma(Gamma::new(*shape, *scale).expect("validated gamma"))
            }
            EnvFamily::Exponential { rate } => RateSampler::Exp(Exp::new(*rate).expect("validated rate")),
            EnvFamily::DiscreteFinite { values, probs } => {
                let mut cum = Vec::with_capacity(probs.len());
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cum.push(acc);
                }
                RateSampler::Discrete {
                    values: values.clone(),
                    cum,
                }
            }
        }
    }

    /// P(slot count ≥ 1) for a slot whose count is mixed Poisson with parameter `c`·Λ.
    pub fn prob_nonempty_slot(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        // the Laplace transform is finite for every family
        -self.log_mgf(-c).expect("negative argument").exp_m1()
    }

    /// Draw a slot count from the mixed Poisson(`c`·Λ) law conditioned on being
    /// at least one. Used to skip runs of empty slots when slots vastly outnumber
    /// arrivals.
    pub fn sample_nonempty_slot_count<R: Rng + ?Sized>(&self, c: f64, rng: &mut R) -> u64 {
        match &self.family {
            EnvFamily::Deterministic { lambda } => zero_truncated_poisson(c * lambda, rng),
            EnvFamily::Exponential { rate } => {
                // geometric counts: P(n) ∝ q^n
                let q = c / (rate + c);
                let u: f64 = open01(rng);
                1 + (u.ln() / q.ln()).floor() as u64
            }
            EnvFamily::Gamma { shape, scale } => {
                let q = c * scale / (1.0 + c * scale);
                let p0 = (1.0 + c * scale).powf(-shape);
                let nonempty = 1.0 - p0;
                let u: f64 = open01(rng) * nonempty;
                let mut term = shape * q * p0;
                let mut acc = term;
                let mut n = 1u64;
                while acc < u && term > 0.0 {
                    term *= (n as f64 + shape) / (n as f64 + 1.0) * q;
                    acc += term;
                    n += 1;
                }
                n
            }
            EnvFamily::DiscreteFinite { values, probs } => {
                let weights: Vec<f64> = values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (-(-c * v).exp_m1()))
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut u: f64 = rng.random::<f64>() * total;
                let mut pick = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                zero_truncated_poisson(c * values[pick], rng)
            }
        }
    }
}

/// Sampler prepared once per [`EnvSpec`].
#[derive(Debug, Clone)]
pub enum RateSampler {
    Constant(f64),
    Gamma(Gamma<f64>),
    Exp(Exp<f64>),
    Discrete { values: Vec<f64>, cum: Vec<f64> },
}

impl RateSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RateSampler::Constant(x) => *x,
            RateSampler::Gamma(g) => g.sample(rng),
            RateSampler::Exp(e) => e.sample(rng),
            RateSampler::Discrete { values, cum } => {
                let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
                let i = cum.partition_point(|&c| c <= u).min(values.len() - 1);
                values[i]
            }
        }
    }
}

/// The (N, α, Δ) scaling: rates are multiplied by N and the slot length shrinks
/// to Δ·N^(−α).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRegime {
    pub n: u64,
    pub alpha: f64,
    pub delta: f64,
}

impl ScalingRegime {
    pub fn new(n: u64, alpha: f64, delta: f64) -> Result<Self> {
        let s = Self { n, alpha, delta };
        s.validate()?;
        Ok(s)
    }

    /// Unscaled system: N = 1, α = 0.
    pub fn unscaled(delta: f64) -> Result<Self> {
        Self::new(1, 0.0, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("N must be a positive integer"));
        }
        require_nonnegative("alpha", self.alpha)?;
        require_positive("delta", self.delta)?;
        if !(self.slot_length() > 0.0) {
            return Err(invalid("slot length delta * N^-alpha underflows to zero"));
        }
        Ok(())
    }

    pub fn n_f64(&self) -> f64 {
        self.n as f64
    }

    /// Δ_N = Δ·N^(−α)
    pub fn slot_length(&self) -> f64 {
        self.delta * self.n_f64().powf(-self.alpha)
    }

    /// γ = max{1, 2 − α}; the stationary variance grows like N^γ.
    pub fn gamma(&self) -> f64 {
        1f64.max(2.0 - self.alpha)
    }

    /// β = min{1, α} = 2 − γ.
    pub fn beta(&self) -> f64 {
        1f64.min(self.alpha)
    }
}

/// A realized piecewise-constant rate path; slot `j` covers
/// `[j·slot_length, (j+1)·slot_length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePath {
    slot_length: f64,
    rates: Vec<f64>,
    horizon: f64,
}

impl RatePath {
    pub fn new(slot_length: f64, rates: Vec<f64>, horizon: f64) -> Result<Self> {
        require_positive("slot_length", slot_length)?;
        require_positive("horizon", horizon)?;
        let expected = slot_count(horizon, slot_length);
        if rates.len() != expected {
            return Err(invalid(format!(
                "rate path over horizon {horizon} needs {expected} slots, got {}",
                rates.len()
            )));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("rates must be finite and >= 0"));
        }
        Ok(Self {
            slot_length,
            rates,
            horizon,
        })
    }

    pub fn slot_length(&self) -> f64 {
        self.slot_length
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Λ(t) for t in [0, horizon).
    pub fn rate_at(&self, t: f64) -> Result<f64> {
        if !(0.0..self.horizon).contains(&t) {
            return Err(CoxqError::Range(format!("t = {t} outside [0, {})", self.horizon)));
        }
        let j = ((t / self.slot_length).floor() as usize).min(self.rates.len() - 1);
        Ok(self.rates[j])
    }

    /// Ψ[Λ](t) = ∫_0^t Λ(s) ds, exact for the step path.
    pub fn cumulative_rate(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 || t > self.horizon {
            return Err(CoxqError::Range(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let full = ((t / self.slot_length).floor() as usize).min(self.rates.len());
        let head: f64 = self.rates[..full].iter().sum::<f64>() * self.slot_length;
        let rest = t - full as f64 * self.slot_length;
        if full < self.rates.len() && rest > 0.0 {
            Ok(head + self.rates[full] * rest)
        } else {
            Ok(head)
        }
    }
}

/// Free-function form of [`RatePath::cumulative_rate`].
pub fn cumulative_rate(path: &RatePath, t: f64) -> Result<f64> {
    path.cumulative_rate(t)
}

/// i.i.d. slot rates over `[0, horizon)` with slot length Δ·N^(−α). The queue
/// sees N times these rates; the factor N is not stored.
pub fn sample_rate_path<R: Rng + ?Sized>(
    env: &EnvSpec,
    scaling: &ScalingRegime,
    horizon: f64,
    rng: &mut R,
) -> Result<RatePath> {
    scaling.validate()?;
    require_positive("horizon", horizon)?;
    let slot = scaling.slot_length();
    let sampler = env.sampler();
    let rates = (0..slot_count(horizon, slot)).map(|_| sampler.sample(rng)).collect();
    RatePath::new(slot, rates, horizon)
}

/// ceil(horizon / slot), ignoring floating-point noise in exact multiples.
pub fn slot_count(horizon: f64, slot: f64) -> usize {
    let x = horizon / slot;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// floor(t / slot), ignoring floating-point noise in exact multiples.
pub fn full_slots(t: f64, slot: f64) -> usize {
    let x = t / slot;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

fn twisted_weights(values: &[f64], probs: &[f64], theta: f64) -> Vec<f64> {
    let logs: Vec<f64> = values
        .iter()
        .zip(probs)
        .map(|(v, p)| {
            if *p > 0.0 {
                p.ln() + theta * v
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let norm = log_sum_exp(logs.iter().copied());
    logs.iter().map(|l| (l - norm).exp()).collect()
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Poisson draw that accepts a zero mean.
pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

fn zero_truncated_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean >= 1.0 {
        loop {
            let n = poisson(mean, rng);
            if n > 0 {
                return n;
            }
        }
    }
    let u = open01(rng);
    let mut term = mean / mean.exp_m1();
    let mut acc = term;
    let mut n = 1u64;
    while acc < u && term > 0.0 {
        n += 1;
        term *= mean / n as f64;
        acc += term;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use approx::assert_relative_eq;

    fn families() -> Vec<EnvSpec> {
        vec![
            EnvSpec::deterministic(2.0).unwrap(),
            EnvSpec::gamma(2.0, 0.5).unwrap(),
            EnvSpec::exponential(1.5).unwrap(),
            EnvSpec::discrete_finite(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap(),
        ]
    }

    #[test]
    fn mgf_examples() {
        let det = EnvSpec::deterministic(2.0).unwrap();
        assert_relative_eq!(det.mgf(0.5).unwrap(), 1f64.exp(), epsilon = 1e-12);
        let exp = EnvSpec::exponential(1.0).unwrap();
        assert_relative_eq!(exp.mgf(0.5).unwrap(), 2.0, epsilon = 1e-12);
        for env in families() {
            assert_eq!(env.mgf(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn log_mgf_examples() {
        let det = EnvSpec::deterministic(2.0).unwrap();
        assert_relative_eq!(det.log_mgf(0.7).unwrap(), 1.4, epsilon = 1e-12);
        assert_eq!(EnvSpec::gamma(3.0, 2.0).unwrap().log_mgf(0.0).unwrap(), 0.0);
        let disc = EnvSpec::discrete_finite(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        let direct = (0.5 * 1f64.exp() + 0.5 * 3f64.exp()).ln();
        assert_relative_eq!(disc.log_mgf(1.0).unwrap(), direct, epsilon = 1e-12);
        assert_relative_eq!(direct, 2.433781, epsilon = 1e-6);
        // no overflow where a naive sum would overflow
        assert_relative_eq!(disc.log_mgf(1000.0).unwrap(), 3000.0 + 0.5f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn domain_errors() {
        let exp = EnvSpec::exponential(1.0).unwrap();
        assert!(matches!(exp.mgf(1.0), Err(CoxqError::Domain(_))));
        assert!(matches!(exp.mgf(1.0 - 1e-13), Err(CoxqError::Domain(_))));
        assert!(exp.mgf(1.0 - 1e-9).is_ok());
        let gamma = EnvSpec::gamma(2.0, 0.5).unwrap();
        assert!(matches!(gamma.log_mgf(2.5), Err(CoxqError::Domain(_))));
        assert!(EnvSpec::deterministic(1.0).unwrap().mgf(500.0).is_ok());
    }

    #[test]
    fn essential_sup_examples() {
        assert_eq!(EnvSpec::deterministic(2.0).unwrap().essential_sup(), 2.0);
        let disc = EnvSpec::discrete_finite(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(disc.essential_sup(), 3.0);
        assert_eq!(EnvSpec::exponential(1.0).unwrap().essential_sup(), f64::INFINITY);
    }

    #[test]
    fn cumulants_match_moments_by_finite_differences() {
        let h = 1e-4;
        for env in families() {
            let f = |x: f64| env.log_mgf(x).unwrap();
            let d1 = (f(h) - f(-h)) / (2.0 * h);
            let d2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            assert_relative_eq!(d1, env.mean(), max_relative = 1e-6);
            if env.variance() > 0.0 {
                assert_relative_eq!(d2, env.variance(), max_relative = 1e-6);
            } else {
                assert!(d2.abs() < 1e-6);
            }
            assert_relative_eq!(env.log_mgf_derivative(0.0).unwrap(), env.mean(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(EnvSpec::discrete_finite(vec![1.0], vec![0.9]).is_err());
        assert!(EnvSpec::discrete_finite(vec![-1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(EnvSpec::gamma(0.0, 1.0).is_err());
        assert!(EnvSpec::exponential(-1.0).is_err());
        assert!(EnvSpec::deterministic(f64::NAN).is_err());
    }

    #[test]
    fn json_roundtrip_and_field_names() {
        let env: EnvSpec = serde_json::from_str(r#"{"family": "gamma", "shape": 2.0, "scale": 0.5}"#).unwrap();
        assert_eq!(env, EnvSpec::gamma(2.0, 0.5).unwrap());
        let text = serde_json::to_string(&EnvSpec::discrete_finite(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(
            text,
            r#"{"family":"discrete_finite","values":[1.0,3.0],"probs":[0.5,0.5]}"#
        );
        assert!(serde_json::from_str::<EnvSpec>(r#"{"family":"exponential","rate":-1}"#).is_err());
    }

    #[test]
    fn rate_path_slots() {
        let env = EnvSpec::deterministic(2.0).unwrap();
        let mut rng = RandomStream::new(1);
        let path = sample_rate_path(&env, &ScalingRegime::new(1, 0.0, 1.0).unwrap(), 3.5, &mut rng).unwrap();
        assert_eq!(path.rates().len(), 4);
        assert!(path.rates().iter().all(|&r| r == 2.0));
        let scaled = ScalingRegime::new(100, 0.5, 1.0).unwrap();
        let path = sample_rate_path(&env, &scaled, 1.0, &mut rng).unwrap();
        assert_eq!(path.rates().len(), 10);
        assert_relative_eq!(path.slot_length(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn cumulative_rate_examples() {
        let constant = RatePath::new(1.0, vec![2.0; 3], 3.0).unwrap();
        assert_relative_eq!(constant.cumulative_rate(3.0).unwrap(), 6.0);
        assert_eq!(constant.cumulative_rate(0.0).unwrap(), 0.0);
        let steps = RatePath::new(1.0, vec![1.0, 3.0], 2.0).unwrap();
        assert_relative_eq!(cumulative_rate(&steps, 1.5).unwrap(), 2.5);
        assert!(matches!(steps.cumulative_rate(2.5), Err(CoxqError::Range(_))));
        assert_eq!(steps.rate_at(1.2).unwrap(), 3.0);
    }

    #[test]
    fn scaling_exponents() {
        for alpha in [0.0, 0.5, 1.0, 2.0] {
            let s = ScalingRegime::new(10, alpha, 1.0).unwrap();
            assert_relative_eq!(s.gamma() + s.beta(), 2.0);
        }
        assert!(ScalingRegime::new(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn twisted_families_in_closed_form() {
        let exp = EnvSpec::exponential(1.0).unwrap();
        assert_eq!(exp.twisted(0.5).unwrap(), EnvSpec::exponential(0.5).unwrap());
        let gamma = EnvSpec::gamma(2.0, 0.5).unwrap();
        let tw = gamma.twisted(1.0).unwrap();
        assert_relative_eq!(tw.mean(), gamma.log_mgf_derivative(1.0).unwrap(), epsilon = 1e-12);
        let disc = EnvSpec::discrete_finite(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        let far = disc.twisted(50.0).unwrap();
        assert!(far.mean() > 3.0 - 1e-12);
        let mut rng = RandomStream::new(3);
        for _ in 0..100 {
            assert_eq!(disc.sample_twisted(50.0, &mut rng).unwrap(), 3.0);
        }
        let det = EnvSpec::deterministic(4.0).unwrap();
        assert_eq!(det.sample_twisted(-3.0, &mut rng).unwrap(), 4.0);
    }

    #[test]
    fn nonempty_slot_counts_follow_the_truncated_law() {
        // compare empirical frequencies with P(n)/P(n >= 1) computed by direct
        // mixing over a fine enumeration of the rate law
        let mut rng = RandomStream::new(11);
        let c = 0.3;
        for env in families() {
            let p1 = env.prob_nonempty_slot(c);
            let reps = 200_000;
            let mut ones = 0usize;
            let mut total = 0u64;
            for _ in 0..reps {
                let n = env.sample_nonempty_slot_count(c, &mut rng);
                assert!(n >= 1);
                if n == 1 {
                    ones += 1;
                }
                total += n;
            }
            // E[n | n >= 1] = c E Λ / P(n >= 1)
            let mean_expected = c * env.mean() / p1;
            let mean = total as f64 / reps as f64;
            assert!(
                (mean - mean_expected).abs() < 0.01 * mean_expected,
                "{env:?} {mean} {mean_expected}"
            );
            // P(n = 1) = E[cΛ e^{-cΛ}] = c M'(-c)
            let p_one = c * env.log_mgf_derivative(-c).unwrap() * env.mgf(-c).unwrap() / p1;
            let freq = ones as f64 / reps as f64;
            assert!((freq - p_one).abs() < 0.005, "{env:?} {freq} {p_one}");
        }
    }
}
