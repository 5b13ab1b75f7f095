//! Closed-form pre-limit and limit quantities for the infinite-server queue
//! fed by the resampled mixed-Poisson stream.
//!
//! Service in queue i is exponential with rate μ_i. A job arriving at a uniform
//! epoch of a slot of length t is still present at the slot end with
//! probability q_t = (1 − e^{−μt})/(μt); see [`SurvivalConstants`].

use serde::{Deserialize, Serialize};

use crate::env::{full_slots, EnvSpec, ScalingRegime};
use crate::error::{invalid, require_nonnegative, require_positive, CoxqError, Result};

/// Service rates of the d coupled queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QueueParams {
    mu: Vec<f64>,
}

impl QueueParams {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(invalid("at least one queue is required"));
        }
        for &m in &mu {
            require_positive("service rate", m)?;
        }
        Ok(Self { mu })
    }

    pub fn single(mu: f64) -> Result<Self> {
        Self::new(vec![mu])
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

impl TryFrom<Vec<f64>> for QueueParams {
    type Error = CoxqError;
    fn try_from(mu: Vec<f64>) -> Result<Self> {
        QueueParams::new(mu)
    }
}

impl From<QueueParams> for Vec<f64> {
    fn from(q: QueueParams) -> Self {
        q.mu
    }
}

/// Survival constants for one service rate over a window of length t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalConstants {
    /// p_t = e^{−μt}
    pub p: f64,
    /// p̄_t = 1 − p_t, computed with expm1
    pub p_bar: f64,
    /// q_t = (1 − e^{−μt})/(μt), equal to 1 at t = 0
    pub q: f64,
    /// r_t = t·q_t = (1 − e^{−μt})/μ
    pub r: f64,
    /// C = (1 − p_t)/(1 + p_t) = tanh(μt/2)
    pub c_ratio: f64,
}

impl SurvivalConstants {
    pub fn new(mu: f64, t: f64) -> Result<Self> {
        require_positive("mu", mu)?;
        require_nonnegative("t", t)?;
        let x = mu * t;
        let p_bar = -(-x).exp_m1();
        let q = if x == 0.0 { 1.0 } else { p_bar / x };
        Ok(Self {
            p: (-x).exp(),
            p_bar,
            q,
            r: p_bar / mu,
            c_ratio: (0.5 * x).tanh(),
        })
    }
}

/// Which limit the scaling exponent α selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingBranch {
    /// α > 1: resampling outpaces the rate growth, Poisson-like behaviour.
    Fast,
    /// α < 1: the environment's variability dominates.
    Slow,
    /// α = 1
    Intermediate,
}

/// Tolerance on α when deciding whether α = 1.
pub const ALPHA_ONE_TOL: f64 = 1e-12;

impl ScalingBranch {
    pub fn of(alpha: f64) -> Self {
        if (alpha - 1.0).abs() <= ALPHA_ONE_TOL {
            ScalingBranch::Intermediate
        } else if alpha > 1.0 {
            ScalingBranch::Fast
        } else {
            ScalingBranch::Slow
        }
    }

    /// 1{α ≥ 1}
    pub fn poisson_part(self) -> bool {
        !matches!(self, ScalingBranch::Slow)
    }

    /// 1{α ≤ 1}
    pub fn environment_part(self) -> bool {
        !matches!(self, ScalingBranch::Fast)
    }
}

/// 𝔼M = 𝔼Λ/μ
pub fn stationary_mean(env: &EnvSpec, mu: f64) -> Result<f64> {
    require_positive("mu", mu)?;
    Ok(env.mean() / mu)
}

/// 𝕍ar M = 𝔼Λ/μ + C·𝕍arΛ/μ² with C = (1 − p_Δ)/(1 + p_Δ), observed at slot
/// boundaries.
pub fn stationary_variance(env: &EnvSpec, mu: f64, delta: f64) -> Result<f64> {
    require_positive("delta", delta)?;
    let c = SurvivalConstants::new(mu, delta)?.c_ratio;
    Ok(env.mean() / mu + c * env.variance() / (mu * mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of the queue length at time t, starting empty at time 0
/// with the slot clock anchored at 0.
///
/// M(t) is mixed Poisson with parameter κ_t = ∫_0^t Λ(s) e^{−μ(t−s)} ds, so
/// 𝕍ar M(t) = 𝔼κ_t + 𝕍ar κ_t. The n = ⌊t/Δ⌋ full slots contribute
/// 𝕍arΛ·r_Δ²·e^{−2μ(t−(j+1)Δ)} each and the trailing partial slot of length
/// τ = t − nΔ contributes 𝕍arΛ·((1 − e^{−μτ})/μ)².
pub fn transient_moments(env: &EnvSpec, mu: f64, delta: f64, t: f64) -> Result<Moments> {
    require_positive("delta", delta)?;
    require_nonnegative("t", t)?;
    let whole = SurvivalConstants::new(mu, t)?;
    let mean = env.mean() * whole.r;

    let n = full_slots(t, delta);
    let tau = (t - n as f64 * delta).max(0.0);
    let slot = SurvivalConstants::new(mu, delta)?;
    let partial = SurvivalConstants::new(mu, tau)?;
    // Σ_{j<n} e^{−2μ(τ + (n−1−j)Δ)} = e^{−2μτ} (1 − p_Δ^{2n}) / (1 − p_Δ²)
    let geometric = if n == 0 {
        0.0
    } else {
        (-2.0 * mu * tau).exp() * (-2.0 * mu * delta * n as f64).exp_m1() / (-2.0 * mu * delta).exp_m1()
    };
    let var_kappa = env.variance() * (slot.r * slot.r * geometric + partial.r * partial.r);
    Ok(Moments {
        mean,
        variance: mean + var_kappa,
    })
}

/// Truncated evaluation of the stationary PGF product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgfValue {
    pub value: f64,
    /// Bound on the relative error from dropping the remaining factors.
    pub tail_bound: f64,
    pub terms: usize,
}

const PGF_TERM_STOP: f64 = 1e-14;
const PGF_TAIL_LIMIT: f64 = 1e-9;

/// φ(z) = ∏_{k≥0} g(1 − (1 − z)p_Δ^k) with g(x) = 𝔼 exp(−Λ r_Δ (1 − x)).
///
/// Each dropped factor lies in [exp(−𝔼Λ r_Δ (1−z) p_Δ^k), 1] by Jensen, so after
/// K factors the relative error is at most
/// exp(𝔼Λ r_Δ (1−z) p_Δ^K/(1 − p_Δ)) − 1.
pub fn stationary_pgf(env: &EnvSpec, mu: f64, delta: f64, z: f64, k_max: usize) -> Result<PgfValue> {
    require_positive("delta", delta)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(CoxqError::Range(format!("z = {z} outside [0, 1]")));
    }
    let sc = SurvivalConstants::new(mu, delta)?;
    let base = sc.r * (1.0 - z);
    if base == 0.0 || env.mean() == 0.0 {
        return Ok(PgfValue {
            value: 1.0,
            tail_bound: 0.0,
            terms: 0,
        });
    }
    let tail = |k: usize| (env.mean() * base * sc.p.powi(k as i32) / sc.p_bar).exp_m1();
    let mut log_phi = 0.0;
    let mut weight = 1.0;
    for k in 0..k_max {
        let term = env.log_mgf(-base * weight)?;
        log_phi += term;
        weight *= sc.p;
        let bound = tail(k + 1);
        if term.abs() < PGF_TERM_STOP && bound <= PGF_TAIL_LIMIT {
            return Ok(PgfValue {
                value: log_phi.exp(),
                tail_bound: bound,
                terms: k + 1,
            });
        }
    }
    let bound = tail(k_max);
    if bound > PGF_TAIL_LIMIT {
        return Err(CoxqError::Convergence(format!(
            "PGF product truncated at {k_max} factors with tail bound {bound:e}"
        )));
    }
    Ok(PgfValue {
        value: log_phi.exp(),
        tail_bound: bound,
        terms: k_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledVariance {
    /// N𝔼Λ/μ + N²·C(Δ_N)·𝕍arΛ/μ²
    pub exact: f64,
    /// The matching branch of the large-N trichotomy.
    pub asymptotic: f64,
}

/// Stationary variance of the N-scaled queue and its large-N equivalent.
pub fn scaled_variance(env: &EnvSpec, mu: f64, scaling: &ScalingRegime) -> Result<ScaledVariance> {
    scaling.validate()?;
    let n = scaling.n_f64();
    let c = SurvivalConstants::new(mu, scaling.slot_length())?.c_ratio;
    let exact = n * env.mean() / mu + n * n * c * env.variance() / (mu * mu);
    let poisson = n * env.mean() / mu;
    let environment = n.powf(2.0 - scaling.alpha) * scaling.delta * env.variance() / (2.0 * mu);
    let asymptotic = match ScalingBranch::of(scaling.alpha) {
        ScalingBranch::Fast => poisson,
        ScalingBranch::Slow => environment,
        ScalingBranch::Intermediate => poisson + environment,
    };
    Ok(ScaledVariance { exact, asymptotic })
}

/// σ² = 𝔼Λ/μ·1{α≥1} + Δ𝕍arΛ/(2μ)·1{α≤1}
pub fn clt_sigma2(env: &EnvSpec, mu: f64, delta: f64, alpha: f64) -> Result<f64> {
    require_positive("mu", mu)?;
    require_positive("delta", delta)?;
    require_nonnegative("alpha", alpha)?;
    let branch = ScalingBranch::of(alpha);
    let mut s = 0.0;
    if branch.poisson_part() {
        s += env.mean() / mu;
    }
    if branch.environment_part() {
        s += delta * env.variance() / (2.0 * mu);
    }
    Ok(s)
}

/// ϱ(t) = ϱ₀e^{−μt} + (𝔼Λ/μ)(1 − e^{−μt})
pub fn fluid_limit(rho0: f64, env: &EnvSpec, mu: f64, t: f64) -> Result<f64> {
    let sc = SurvivalConstants::new(mu, t)?;
    Ok(rho0 * sc.p + env.mean() * sc.r)
}

/// Covariance matrix of the Gaussian limit of the centered, N^{β/2}-scaled
/// queue-length vector at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCovariance {
    pub matrix: Vec<Vec<f64>>,
    pub regime: ScalingBranch,
}

impl LimitCovariance {
    pub fn d(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.d();
        (0..d).all(|i| (0..d).all(|k| self.matrix[i][k] == self.matrix[k][i]))
    }

    /// Cholesky with diagonal pivots allowed down to −`tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let d = self.d();
        let mut l = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut diag = self.matrix[j][j];
            for k in 0..j {
                diag -= l[j][k] * l[j][k];
            }
            if diag < -tol {
                return false;
            }
            let root = diag.max(0.0).sqrt();
            l[j][j] = root;
            for i in j + 1..d {
                let mut v = self.matrix[i][j];
                for k in 0..j {
                    v -= l[i][k] * l[j][k];
                }
                l[i][j] = if root > tol { v / root } else { 0.0 };
                if root <= tol && v.abs() > tol.sqrt() {
                    return false;
                }
            }
        }
        true
    }
}

/// C(t) for d queues started on the fluid path at ϱ₀.
pub fn fclt_covariance(
    env: &EnvSpec,
    queues: &QueueParams,
    delta: f64,
    alpha: f64,
    rho0: &[f64],
    t: f64,
) -> Result<LimitCovariance> {
    require_positive("delta", delta)?;
    require_nonnegative("alpha", alpha)?;
    require_nonnegative("t", t)?;
    if rho0.len() != queues.d() {
        return Err(invalid(format!(
            "rho0 has {} entries for {} queues",
            rho0.len(),
            queues.d()
        )));
    }
    let branch = ScalingBranch::of(alpha);
    let (mean, var) = (env.mean(), env.variance());
    let mu = queues.mu();
    let d = queues.d();
    let mut matrix = vec![vec![0.0; d]; d];
    for i in 0..d {
        for k in 0..d {
            let v = if i == k {
                let m = mu[i];
                let p = (-m * t).exp();
                let mut v = 0.0;
                if branch.poisson_part() {
                    v += (mean / m + rho0[i] * p) * -(-m * t).exp_m1();
                }
                if branch.environment_part() {
                    v += delta * var / (2.0 * m) * -(-2.0 * m * t).exp_m1();
                }
                v
            } else {
                let s = mu[i] + mu[k];
                let mut level = 0.0;
                if branch.poisson_part() {
                    level += mean / s;
                }
                if branch.environment_part() {
                    level += delta * var / s;
                }
                level * -(-s * t).exp_m1()
            };
            matrix[i][k] = v;
        }
    }
    Ok(LimitCovariance { matrix, regime: branch })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryCorrelation {
    pub corr: f64,
    /// c_ik(α) ∈ [1, 2]
    pub c_const: f64,
}

/// Limiting stationary correlation between two queues sharing the arrival stream.
pub fn stationary_correlation(
    env: &EnvSpec,
    mu_i: f64,
    mu_k: f64,
    delta: f64,
    alpha: f64,
) -> Result<StationaryCorrelation> {
    require_positive("mu_i", mu_i)?;
    require_positive("mu_k", mu_k)?;
    require_positive("delta", delta)?;
    require_nonnegative("alpha", alpha)?;
    let branch = ScalingBranch::of(alpha);
    let mut num = 0.0;
    let mut den = 0.0;
    if branch.poisson_part() {
        num += env.mean();
        den += env.mean();
    }
    if branch.environment_part() {
        num += delta * env.variance();
        den += 0.5 * delta * env.variance();
    }
    if den <= 0.0 {
        return Err(CoxqError::Domain(
            "limiting variance is zero, correlation undefined".into(),
        ));
    }
    let c_const = num / den;
    Ok(StationaryCorrelation {
        corr: c_const * (mu_i * mu_k).sqrt() / (mu_i + mu_k),
        c_const,
    })
}

/// Large-N stationary covariance between two queues,
/// (𝔼Λ Δ N^{1−α} + 𝕍arΛ Δ² N^{2−2α}) / (1 − e^{−(μ_i+μ_k)ΔN^{−α}}).
///
/// Asymptotically exact only; finite-N covariances come from simulation.
pub fn scaled_covariance(env: &EnvSpec, mu_i: f64, mu_k: f64, scaling: &ScalingRegime) -> Result<f64> {
    require_positive("mu_i", mu_i)?;
    require_positive("mu_k", mu_k)?;
    scaling.validate()?;
    let n = scaling.n_f64();
    let (a, d) = (scaling.alpha, scaling.delta);
    let num = env.mean() * d * n.powf(1.0 - a) + env.variance() * d * d * n.powf(2.0 - 2.0 * a);
    Ok(num / -(-(mu_i + mu_k) * scaling.slot_length()).exp_m1())
}
