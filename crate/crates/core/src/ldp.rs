//! Logarithmic tail asymptotics of the scaled queue length M^{(N)}(t)/N and
//! importance-sampling estimators of the tail probabilities.
//!
//! Three regimes, each with its own speed s_N so that log P ≈ s_N·rate:
//! fast (α > 1, speed N), slow (α < 1, speed N^α/Δ, or N when the fluid
//! ceiling u(t) is below the level) and intermediate (α = 1, speed N/Δ).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::analytic::{QueueParams, ScalingBranch, SurvivalConstants};
use crate::env::{full_slots, poisson, EnvSpec, RateSampler, ScalingRegime};
use crate::error::{invalid, require_nonnegative, require_positive, CoxqError, Result};
use crate::quad::{integrate, QuadResult};
use crate::rng::RandomStream;

/// Absolute tolerance of the integrated log-MGF.
pub const QUAD_ABS_TOL: f64 = 1e-10;
// derivative integrals feed the root finder and need more digits
const DERIV_ABS_TOL: f64 = 1e-12;
const DERIV_REL_TOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 300;
const MULTI_MAX_ITER: usize = 500;
/// Projected-gradient norm accepted by the multivariate optimizer.
pub const MULTI_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateQuery {
    pub env: EnvSpec,
    pub mu: f64,
    pub delta: f64,
    pub alpha: f64,
    pub t: f64,
    pub a: f64,
}

impl RateQuery {
    pub fn validate(&self) -> Result<()> {
        require_positive("mu", self.mu)?;
        require_positive("delta", self.delta)?;
        require_nonnegative("alpha", self.alpha)?;
        require_positive("t", self.t)?;
        if !self.a.is_finite() {
            return Err(invalid("a must be finite"));
        }
        Ok(())
    }

    /// ρ(t) = (𝔼Λ/μ)(1 − e^{−μt})
    pub fn rho_t(&self) -> f64 {
        self.env.mean() * self.r_t()
    }

    /// u(t) = y(1 − e^{−μt})/μ with y the essential supremum of Λ.
    pub fn u_t(&self) -> f64 {
        let y = self.env.essential_sup();
        if y.is_infinite() {
            f64::INFINITY
        } else {
            y * self.r_t()
        }
    }

    fn r_t(&self) -> f64 {
        -(-self.mu * self.t).exp_m1() / self.mu
    }

    fn require_above_fluid(&self) -> Result<()> {
        self.validate()?;
        let rho = self.rho_t();
        if self.a <= rho {
            return Err(CoxqError::Domain(format!(
                "level a = {} is not above the fluid value rho(t) = {rho}",
                self.a
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdpRegime {
    Fast,
    SlowUnbounded,
    SlowBounded,
    Intermediate,
}

/// Normalizing sequence of a decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speed {
    #[serde(rename = "N")]
    N,
    #[serde(rename = "N^alpha/Delta")]
    NAlphaOverDelta,
    #[serde(rename = "N/Delta")]
    NOverDelta,
}

impl Speed {
    pub fn value(self, scaling: &ScalingRegime) -> f64 {
        let n = scaling.n_f64();
        match self {
            Speed::N => n,
            Speed::NAlphaOverDelta => n.powf(scaling.alpha) / scaling.delta,
            Speed::NOverDelta => n / scaling.delta,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Speed::N => "N",
            Speed::NAlphaOverDelta => "N^alpha/Delta",
            Speed::NOverDelta => "N/Delta",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Summed quadrature error estimate of the final objective evaluation.
    pub quad_error: f64,
    pub iterations: usize,
    /// |a − ∂Λ/∂θ| at θ*, or the projected-gradient norm for d > 1.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// lim log P / s_N, always ≤ 0
    pub rate: f64,
    pub theta_star: Vec<f64>,
    pub regime: LdpRegime,
    pub speed: Speed,
    pub diagnostics: Diagnostics,
}

impl RateResult {
    /// θ* of a univariate query.
    pub fn theta(&self) -> f64 {
        self.theta_star[0]
    }
}

fn quad(f: impl FnMut(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    integrate(f, a, b, tol, 0.0)
}

fn quad_deriv(f: impl FnMut(f64) -> Result<f64>, t: f64) -> Result<f64> {
    Ok(integrate(f, 0.0, t, DERIV_ABS_TOL, DERIV_REL_TOL)?.value)
}

/// ∫_0^t log M(θe^{−μs}) ds by adaptive quadrature in s.
pub fn integrated_log_mgf(env: &EnvSpec, mu: f64, t: f64, theta: f64) -> Result<f64> {
    Ok(integrated_log_mgf_quad(env, mu, t, theta)?.value)
}

pub fn integrated_log_mgf_quad(env: &EnvSpec, mu: f64, t: f64, theta: f64) -> Result<QuadResult> {
    require_positive("mu", mu)?;
    require_nonnegative("t", t)?;
    env.check_domain(theta)?;
    quad(|s| env.log_mgf(theta * (-mu * s).exp()), 0.0, t, QUAD_ABS_TOL)
}

/// The same integral through u = θe^{−μs}: (1/μ)∫_{θe^{−μt}}^{θ} log M(u)/u du.
pub fn integrated_log_mgf_substituted(env: &EnvSpec, mu: f64, t: f64, theta: f64) -> Result<f64> {
    require_positive("mu", mu)?;
    require_nonnegative("t", t)?;
    env.check_domain(theta)?;
    if theta == 0.0 {
        return Ok(0.0);
    }
    let lo = theta * (-mu * t).exp();
    let r = quad(|u| Ok(env.log_mgf(u)? / u), lo, theta, QUAD_ABS_TOL * mu)?;
    Ok(r.value / mu)
}

/// ∂/∂θ ∫_0^t log M(θe^{−μs}) ds = ∫_0^t e^{−μs} (log M)'(θe^{−μs}) ds
pub fn integrated_log_mgf_derivative(env: &EnvSpec, mu: f64, t: f64, theta: f64) -> Result<f64> {
    env.check_domain(theta)?;
    quad_deriv(
        |s| {
            let w = (-mu * s).exp();
            Ok(w * env.log_mgf_derivative(theta * w)?)
        },
        t,
    )
}

fn integrated_log_mgf_second(env: &EnvSpec, mu: f64, t: f64, theta: f64) -> Result<f64> {
    quad_deriv(
        |s| {
            let w = (-mu * s).exp();
            Ok(w * w * env.log_mgf_second_derivative(theta * w)?)
        },
        t,
    )
}

/// sup_θ (θa − ρ(e^θ − 1)) for a Poisson(ρ) count, returned as the rate
/// a log(ρ/a) − ρ + a together with θ* = log(a/ρ).
fn poisson_rate(rho: f64, a: f64) -> (f64, f64) {
    let ratio = rho / a;
    // a(log x − x + 1) with x = ρ/a, accurate as x → 1
    let rate = a * (ratio.ln() - (ratio - 1.0));
    (rate.min(0.0), (a / rho).ln())
}

/// Fast-regime rate a log(ρ(t)/a) − ρ(t) + a, speed N.
pub fn rate_fast(rho_t: f64, a: f64) -> Result<RateResult> {
    require_positive("rho_t", rho_t)?;
    if !(a > rho_t) || !a.is_finite() {
        return Err(CoxqError::Domain(format!(
            "level a = {a} is not above rho(t) = {rho_t}"
        )));
    }
    let (rate, theta) = poisson_rate(rho_t, a);
    Ok(RateResult {
        rate,
        theta_star: vec![theta],
        regime: LdpRegime::Fast,
        speed: Speed::N,
        diagnostics: Diagnostics::default(),
    })
}

/// Solves deriv(θ) = a on (0, upper) for an increasing `deriv`, by Newton
/// steps safeguarded with bisection.
fn solve_increasing<D, S>(a: f64, deriv: D, second: S, upper: f64) -> Result<(f64, f64, usize)>
where
    D: Fn(f64) -> Result<f64>,
    S: Fn(f64) -> Result<f64>,
{
    let mut lo = 0.0;
    let mut hi;
    let mut iterations = 0;
    if upper.is_finite() {
        // walk toward the pole; the integrand sharpens as θ approaches it
        hi = 0.5 * upper;
        while deriv(hi)? < a {
            lo = hi;
            hi = 0.5 * (hi + upper);
            iterations += 1;
            if upper - hi < 1e-9 * upper.max(1.0) {
                return Err(CoxqError::Convergence(format!(
                    "level {a} is not reached before the MGF boundary {upper}"
                )));
            }
        }
    } else {
        hi = 1.0;
        while deriv(hi)? < a {
            lo = hi;
            hi *= 2.0;
            iterations += 1;
            if hi > 1e8 {
                return Err(CoxqError::Regime(format!(
                    "level {a} is never reached by the tilted mean"
                )));
            }
        }
    }
    let mut theta = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    let tol = 1e-13 * a.abs().max(1.0);
    for _ in 0..ROOT_MAX_ITER {
        iterations += 1;
        let g = deriv(theta)? - a;
        residual = g.abs();
        if residual <= tol {
            break;
        }
        if g > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let slope = second(theta)?;
        let newton = theta - g / slope;
        theta = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok((theta, residual, iterations))
}

/// Slow-regime rate −sup_θ(θa − ∫_0^t log M(θe^{−μs})ds), speed N^α/Δ.
/// Valid when u(t) ≥ a.
pub fn rate_slow(query: &RateQuery) -> Result<RateResult> {
    query.require_above_fluid()?;
    let u = query.u_t();
    if u < query.a {
        return Err(CoxqError::Regime(format!(
            "u(t) = {u} < a = {}: the bounded slow-regime rate applies",
            query.a
        )));
    }
    let (env, mu, t) = (&query.env, query.mu, query.t);
    let (theta, residual, iterations) = solve_increasing(
        query.a,
        |th| integrated_log_mgf_derivative(env, mu, t, th),
        |th| integrated_log_mgf_second(env, mu, t, th),
        env.mgf_domain_upper(),
    )?;
    let integral = integrated_log_mgf_quad(env, mu, t, theta)?;
    Ok(RateResult {
        rate: (integral.value - theta * query.a).min(0.0),
        theta_star: vec![theta],
        regime: LdpRegime::SlowUnbounded,
        speed: Speed::NAlphaOverDelta,
        diagnostics: Diagnostics {
            quad_error: integral.abs_error,
            iterations,
            residual,
        },
    })
}

/// Slow-regime rate when the fluid ceiling u(t) is below a:
/// a log(u(t)/a) + a − u(t), speed N.
pub fn rate_slow_bounded(query: &RateQuery) -> Result<RateResult> {
    query.require_above_fluid()?;
    let u = query.u_t();
    if u.is_infinite() {
        return Err(CoxqError::UnsupportedFamily(
            "the bounded slow-regime rate needs a bounded rate distribution".into(),
        ));
    }
    if u >= query.a {
        return Err(CoxqError::Regime(format!(
            "u(t) = {u} >= a = {}: the unbounded slow-regime rate applies",
            query.a
        )));
    }
    let (rate, theta) = poisson_rate(u, query.a);
    Ok(RateResult {
        rate,
        theta_star: vec![theta],
        regime: LdpRegime::SlowBounded,
        speed: Speed::N,
        diagnostics: Diagnostics::default(),
    })
}

/// Intermediate-regime rate −sup_θ(θa − ∫_0^t log M(Δ(e^{θ/Δ}−1)e^{−μs})ds),
/// speed N/Δ.
pub fn rate_intermediate(query: &RateQuery) -> Result<RateResult> {
    query.require_above_fluid()?;
    let (env, mu, t, delta) = (&query.env, query.mu, query.t, query.delta);
    let b = env.mgf_domain_upper();
    // Δ(e^{θ/Δ} − 1) < b
    let upper = if b.is_finite() {
        delta * (b / delta).ln_1p()
    } else {
        f64::INFINITY
    };
    let arg = |th: f64| delta * (th / delta).exp_m1();
    let deriv = |th: f64| {
        let x = arg(th);
        let dx = (th / delta).exp();
        env.check_domain(x)?;
        quad_deriv(
            |s| {
                let w = (-mu * s).exp();
                Ok(dx * w * env.log_mgf_derivative(x * w)?)
            },
            t,
        )
    };
    let second = |th: f64| {
        let x = arg(th);
        let dx = (th / delta).exp();
        env.check_domain(x)?;
        quad_deriv(
            |s| {
                let w = (-mu * s).exp();
                Ok((dx * w).powi(2) * env.log_mgf_second_derivative(x * w)?
                    + dx * w / delta * env.log_mgf_derivative(x * w)?)
            },
            t,
        )
    };
    let (theta, residual, iterations) = solve_increasing(query.a, deriv, second, upper)?;
    let integral = integrated_log_mgf_quad(env, mu, t, arg(theta))?;
    Ok(RateResult {
        rate: (integral.value - theta * query.a).min(0.0),
        theta_star: vec![theta],
        regime: LdpRegime::Intermediate,
        speed: Speed::NOverDelta,
        diagnostics: Diagnostics {
            quad_error: integral.abs_error,
            iterations,
            residual,
        },
    })
}

pub fn classify_regime(query: &RateQuery) -> Result<LdpRegime> {
    query.require_above_fluid()?;
    Ok(match ScalingBranch::of(query.alpha) {
        ScalingBranch::Fast => LdpRegime::Fast,
        ScalingBranch::Intermediate => LdpRegime::Intermediate,
        ScalingBranch::Slow if query.u_t() >= query.a => LdpRegime::SlowUnbounded,
        ScalingBranch::Slow => LdpRegime::SlowBounded,
    })
}

/// The rate of whichever regime the query falls in.
pub fn rate(query: &RateQuery) -> Result<RateResult> {
    match classify_regime(query)? {
        LdpRegime::Fast => rate_fast(query.rho_t(), query.a),
        LdpRegime::SlowUnbounded => rate_slow(query),
        LdpRegime::SlowBounded => rate_slow_bounded(query),
        LdpRegime::Intermediate => rate_intermediate(query),
    }
}

/// Coupled tail query for the rectangle ∏[a_i, ∞).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRateQuery {
    pub env: EnvSpec,
    pub queues: QueueParams,
    pub delta: f64,
    pub alpha: f64,
    pub t: f64,
    pub a: Vec<f64>,
}

/// Value and gradient of a limiting log-MGF Λ(θ).
type Objective<'a> = Box<dyn Fn(&[f64]) -> Result<(f64, Vec<f64>, f64)> + Sync + 'a>;

fn multi_objective<'a>(q: &'a MultiRateQuery, branch: ScalingBranch) -> Objective<'a> {
    let mu = q.queues.mu();
    let (t, delta, env) = (q.t, q.delta, &q.env);
    let d = mu.len();
    // ∏_i (e^{−μ_i s}(e^{θ_i} − 1) + 1) and its partial derivatives
    let product = move |theta: &[f64], s: f64| {
        let factors: Vec<f64> = (0..d).map(|i| (-mu[i] * s).exp() * theta[i].exp_m1() + 1.0).collect();
        let p: f64 = factors.iter().product();
        let grads: Vec<f64> = (0..d)
            .map(|i| {
                let others: f64 = (0..d).filter(|&k| k != i).map(|k| factors[k]).product();
                (-mu[i] * s).exp() * theta[i].exp() * others
            })
            .collect();
        (p, grads)
    };
    // integrates [value, grad_1..grad_d] component by component
    let integrate_all = move |f: &dyn Fn(f64) -> Result<Vec<f64>>| -> Result<(f64, Vec<f64>, f64)> {
        let value = quad(|s| Ok(f(s)?[0]), 0.0, t, QUAD_ABS_TOL)?;
        let grad = (0..d)
            .map(|i| quad_deriv(|s| Ok(f(s)?[i + 1]), t))
            .collect::<Result<Vec<f64>>>()?;
        Ok((value.value, grad, value.abs_error))
    };
    match branch {
        ScalingBranch::Fast => Box::new(move |theta: &[f64]| {
            let mean = env.mean();
            integrate_all(&|s| {
                let (p, g) = product(theta, s);
                let mut out = vec![mean * (p - 1.0)];
                out.extend(g.iter().map(|x| mean * x));
                Ok(out)
            })
        }),
        // parameterized by θ' = Δθ so that d = 1 matches the univariate rate
        ScalingBranch::Intermediate => Box::new(move |scaled: &[f64]| {
            let theta: Vec<f64> = scaled.iter().map(|x| x / delta).collect();
            integrate_all(&|s| {
                let (p, g) = product(&theta, s);
                let x = delta * (p - 1.0);
                let dl = env.log_mgf_derivative(x)?;
                let mut out = vec![env.log_mgf(x)?];
                out.extend(g.iter().map(|gi| dl * gi));
                Ok(out)
            })
        }),
        ScalingBranch::Slow => Box::new(move |theta: &[f64]| {
            integrate_all(&|s| {
                let weights: Vec<f64> = mu.iter().map(|m| (-m * s).exp()).collect();
                let x: f64 = theta.iter().zip(&weights).map(|(a, b)| a * b).sum();
                let dl = env.log_mgf_derivative(x)?;
                let mut out = vec![env.log_mgf(x)?];
                out.extend(weights.iter().map(|w| dl * w));
                Ok(out)
            })
        }),
    }
}

fn cholesky_solve(h: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut diag = h[j][j];
        for k in 0..j {
            diag -= l[j][k] * l[j][k];
        }
        if !(diag > 0.0) {
            return None;
        }
        l[j][j] = diag.sqrt();
        for i in j + 1..n {
            let mut v = h[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / l[j][j];
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i][k] * y[k];
        }
        y[i] = v / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= l[k][i] * x[k];
        }
        x[i] = v / l[i][i];
    }
    Some(x)
}

/// Corner rate of the rectangle ∏[a_i, ∞):
/// −sup_{θ ≥ 0}(θ·a − Λ(θ)) with Λ the limiting log-MGF of the regime set by α.
/// The slow regime assumes the rectangle is reachable by the environment.
pub fn rate_multivariate(query: &MultiRateQuery) -> Result<RateResult> {
    require_positive("delta", query.delta)?;
    require_nonnegative("alpha", query.alpha)?;
    require_positive("t", query.t)?;
    let d = query.queues.d();
    if query.a.len() != d {
        return Err(invalid(format!("a has {} entries for {d} queues", query.a.len())));
    }
    for (i, (&a, &m)) in query.a.iter().zip(query.queues.mu()).enumerate() {
        let fluid = query.env.mean() * -(-m * query.t).exp_m1() / m;
        if !(a > fluid) {
            return Err(CoxqError::Domain(format!(
                "a[{i}] = {a} is not above the fluid value {fluid}"
            )));
        }
    }
    let branch = ScalingBranch::of(query.alpha);
    let lmgf = multi_objective(query, branch);
    let a = &query.a;
    // maximize f(θ) = θ·a − Λ(θ), concave
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>, f64)> {
        let (v, g, err) = lmgf(theta)?;
        let f = theta.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() - v;
        let grad = g.iter().zip(a).map(|(gi, ai)| ai - gi).collect();
        Ok((f, grad, err))
    };
    let projected = |theta: &[f64], g: &[f64]| -> f64 {
        theta
            .iter()
            .zip(g)
            .map(|(x, gi)| if *x <= 0.0 && *gi < 0.0 { 0.0 } else { gi * gi })
            .sum::<f64>()
            .sqrt()
    };
    let mut theta = vec![0.0; d];
    let (mut f, mut g, mut err) = eval(&theta)?;
    let mut iterations = 0;
    let mut norm = projected(&theta, &g);
    while norm > 1e-11 && iterations < MULTI_MAX_ITER {
        iterations += 1;
        let free: Vec<usize> = (0..d).filter(|&i| theta[i] > 0.0 || g[i] > 0.0).collect();
        // −Hessian of f on the free block, from differences of the gradient
        let h_step = 1e-5;
        let mut neg_h = vec![vec![0.0; free.len()]; free.len()];
        for (col, &k) in free.iter().enumerate() {
            let mut up = theta.clone();
            up[k] += h_step;
            let (_, g_up, _) = eval(&up)?;
            for (row, &i) in free.iter().enumerate() {
                neg_h[row][col] = -(g_up[i] - g[i]) / h_step;
            }
        }
        for r in 0..free.len() {
            for c in 0..r {
                let avg = 0.5 * (neg_h[r][c] + neg_h[c][r]);
                neg_h[r][c] = avg;
                neg_h[c][r] = avg;
            }
        }
        let rhs: Vec<f64> = free.iter().map(|&i| g[i]).collect();
        let mut ridge = 0.0;
        let step = loop {
            let mut m = neg_h.clone();
            for (r, row) in m.iter_mut().enumerate() {
                row[r] += ridge;
            }
            if let Some(x) = cholesky_solve(&m, &rhs) {
                break x;
            }
            ridge = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
        };
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = theta.clone();
            for (j, &i) in free.iter().enumerate() {
                trial[i] = (theta[i] + scale * step[j]).max(0.0);
            }
            let gain: f64 = (0..d).map(|i| g[i] * (trial[i] - theta[i])).sum();
            if let Ok((ft, gt, et)) = eval(&trial) {
                if ft >= f + 1e-4 * gain - 1e-15 * f.abs().max(1.0) {
                    theta = trial;
                    f = ft;
                    g = gt;
                    err = et;
                    moved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        norm = projected(&theta, &g);
        if !moved {
            break;
        }
    }
    if norm > MULTI_GRAD_TOL {
        return Err(CoxqError::Convergence(format!(
            "projected gradient norm {norm:e} after {iterations} iterations"
        )));
    }
    let (regime, speed) = match branch {
        ScalingBranch::Fast => (LdpRegime::Fast, Speed::N),
        ScalingBranch::Intermediate => (LdpRegime::Intermediate, Speed::NOverDelta),
        ScalingBranch::Slow => (LdpRegime::SlowUnbounded, Speed::NAlphaOverDelta),
    };
    Ok(RateResult {
        rate: (-f).min(0.0),
        theta_star: theta,
        regime,
        speed,
        diagnostics: Diagnostics {
            quad_error: err,
            iterations,
            residual: norm,
        },
    })
}

/// Importance-sampling estimate of a tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub prob: f64,
    /// log of `prob`, kept separately because `prob` may underflow
    pub log_prob: f64,
    /// sample sd / (estimate·√replications)
    pub rel_err: f64,
    pub hits: usize,
    pub replications: usize,
}

/// Combines per-replication log-contributions (−∞ for a miss) in replication order.
fn summarize(logs: &[f64]) -> Result<TailEstimate> {
    if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(CoxqError::NumericalUnderflow("non-finite likelihood ratio".into()));
    }
    let n = logs.len() as f64;
    let hits = logs.iter().filter(|l| l.is_finite()).count();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hits == 0 {
        return Ok(TailEstimate {
            prob: 0.0,
            log_prob: f64::NEG_INFINITY,
            rel_err: f64::INFINITY,
            hits,
            replications: logs.len(),
        });
    }
    let scaled: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let var = if logs.len() > 1 {
        scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        f64::INFINITY
    };
    let log_prob = top + mean.ln();
    Ok(TailEstimate {
        prob: log_prob.exp(),
        log_prob,
        rel_err: var.sqrt() / (mean * n.sqrt()),
        hits,
        replications: logs.len(),
    })
}

fn check_scaling(query: &RateQuery, scaling: &ScalingRegime) -> Result<()> {
    scaling.validate()?;
    if (query.alpha - scaling.alpha).abs() > 1e-12 || (query.delta - scaling.delta).abs() > 1e-12 {
        return Err(invalid(format!(
            "query (alpha {}, delta {}) does not match the scaling (alpha {}, delta {})",
            query.alpha, query.delta, scaling.alpha, scaling.delta
        )));
    }
    Ok(())
}

/// Samplers for Λ_j twisted by η_j, with log M(η_j) summed.
fn twisted_slots(env: &EnvSpec, etas: &[f64]) -> Result<(Vec<RateSampler>, f64)> {
    let mut log_norm = 0.0;
    let samplers = etas
        .iter()
        .map(|&eta| {
            log_norm += env.log_mgf(eta)?;
            Ok(env.twisted(eta)?.sampler())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samplers, log_norm))
}

/// One draw of the proxy k_t = Δ_N Σ_{j<⌊t/Δ_N⌋} Λ_j e^{−μjΔ_N} under the
/// measure that twists Λ_j by θe^{−μjΔ_N}, with its log likelihood ratio
/// Σ_j (log M(θe^{−μjΔ_N}) − θe^{−μjΔ_N}Λ_j).
pub struct ProxySampler {
    slot: f64,
    weights: Vec<f64>,
    etas: Vec<f64>,
    samplers: Vec<RateSampler>,
    log_norm: f64,
}

impl ProxySampler {
    pub fn new(query: &RateQuery, scaling: &ScalingRegime, theta: f64) -> Result<Self> {
        query.validate()?;
        check_scaling(query, scaling)?;
        let slot = scaling.slot_length();
        let n = full_slots(query.t, slot);
        let weights: Vec<f64> = (0..n).map(|j| (-query.mu * j as f64 * slot).exp()).collect();
        let etas: Vec<f64> = weights.iter().map(|w| theta * w).collect();
        let (samplers, log_norm) = twisted_slots(&query.env, &etas)?;
        Ok(Self {
            slot,
            weights,
            etas,
            samplers,
            log_norm,
        })
    }

    pub fn sample(&self, rng: &mut RandomStream) -> (f64, f64) {
        let mut k = 0.0;
        let mut log_lr = self.log_norm;
        for ((s, w), eta) in self.samplers.iter().zip(&self.weights).zip(&self.etas) {
            let x = s.sample(rng);
            k += w * x;
            log_lr -= eta * x;
        }
        (self.slot * k, log_lr)
    }

    /// 𝔼_Q k_t
    pub fn tilted_mean(&self, env: &EnvSpec) -> Result<f64> {
        let mut m = 0.0;
        for (w, eta) in self.weights.iter().zip(&self.etas) {
            m += w * env.log_mgf_derivative(*eta)?;
        }
        Ok(self.slot * m)
    }
}

fn run_replications<F>(replications: usize, seed: u64, draw: F) -> Result<TailEstimate>
where
    F: Fn(&mut RandomStream) -> f64 + Sync,
{
    if replications == 0 {
        return Err(invalid("replications must be positive"));
    }
    let logs: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|rep| draw(&mut RandomStream::substream(seed, rep as u64)))
        .collect();
    summarize(&logs)
}

/// P(k_t ≥ a) by twisting the slot rates with θ* from [`rate_slow`].
pub fn is_estimate_tail(
    query: &RateQuery,
    scaling: &ScalingRegime,
    replications: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if query.a <= query.rho_t() {
        return Err(CoxqError::DegenerateQuery(format!(
            "a = {} is not above rho(t) = {}; use plain Monte Carlo",
            query.a,
            query.rho_t()
        )));
    }
    let theta = rate_slow(query)?.theta();
    is_estimate_tail_with_tilt(query, scaling, theta, replications, seed)
}

/// As [`is_estimate_tail`] with an explicit tilt; θ = 0 is plain Monte Carlo.
pub fn is_estimate_tail_with_tilt(
    query: &RateQuery,
    scaling: &ScalingRegime,
    theta: f64,
    replications: usize,
    seed: u64,
) -> Result<TailEstimate> {
    let sampler = ProxySampler::new(query, scaling, theta)?;
    run_replications(replications, seed, |rng| {
        let (k, log_lr) = sampler.sample(rng);
        if k >= query.a {
            log_lr
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// P(Pois(λ) ≥ n)
pub fn poisson_tail(n: u64, lambda: f64) -> f64 {
    if n == 0 {
        1.0
    } else if lambda <= 0.0 {
        0.0
    } else {
        gamma_lr(n as f64, lambda)
    }
}

/// Weights w_j with κ_t = Σ_j w_j Λ_j for the slots meeting [0, t], slot clock
/// anchored at 0.
fn kappa_weights(mu: f64, t: f64, slot: f64) -> Result<Vec<f64>> {
    let full = full_slots(t, slot);
    let tau = (t - full as f64 * slot).max(0.0);
    let sc = SurvivalConstants::new(mu, slot)?;
    let mut w: Vec<f64> = (0..full)
        .map(|j| sc.r * (-mu * (t - (j + 1) as f64 * slot)).exp())
        .collect();
    if tau > 1e-12 * slot {
        w.push(SurvivalConstants::new(mu, tau)?.r);
    }
    Ok(w)
}

/// Change of measure used by [`is_estimate_queue_tail`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueTilt {
    pub regime: LdpRegime,
    /// exponential tilt of the Poisson layer
    pub phi: f64,
    /// θ* of the regime's rate
    pub theta_star: f64,
}

/// Cap on slots × replications for one estimate.
pub const IS_SLOT_BUDGET: f64 = 1e10;

/// P(M^{(N)}(t)/N ≥ a) for an empty start, by exponential twisting.
///
/// M^{(N)}(t) is Poisson(Nκ_t) given the slot rates, κ_t = Σ_j w_j Λ_j. In the
/// fast, intermediate and bounded slow regimes the pair (Λ, M) is twisted by
/// e^{φM}: M becomes Poisson(Nκ_t e^φ) and Λ_j is twisted by N w_j(e^φ − 1),
/// with φ = θ*, θ*/Δ and log(a/u(t)) respectively. In the unbounded slow
/// regime Λ_j alone is twisted by θ* w_j/Δ_N and the Poisson layer is
/// integrated out through its tail probability.
pub fn is_estimate_queue_tail(
    query: &RateQuery,
    scaling: &ScalingRegime,
    replications: usize,
    seed: u64,
) -> Result<(TailEstimate, QueueTilt)> {
    check_scaling(query, scaling)?;
    if query.a <= query.rho_t() {
        return Err(CoxqError::DegenerateQuery(format!(
            "a = {} is not above rho(t) = {}; use plain Monte Carlo",
            query.a,
            query.rho_t()
        )));
    }
    let result = rate(query)?;
    let theta = result.theta();
    let n = scaling.n_f64();
    let slot = scaling.slot_length();
    let weights = kappa_weights(query.mu, query.t, slot)?;
    if weights.len() as f64 * replications as f64 > IS_SLOT_BUDGET && query.env.variance() > 0.0 {
        return Err(CoxqError::Resource(format!(
            "{} slots x {replications} replications exceed the budget {IS_SLOT_BUDGET:e}",
            weights.len()
        )));
    }
    let level = (n * query.a - 1e-9 * n * query.a).ceil().max(0.0) as u64;
    let env = &query.env;
    let phi = match result.regime {
        LdpRegime::Fast => theta,
        LdpRegime::Intermediate => theta / query.delta,
        LdpRegime::SlowBounded => theta,
        LdpRegime::SlowUnbounded => 0.0,
    };
    let tilt = QueueTilt {
        regime: result.regime,
        phi,
        theta_star: theta,
    };
    let etas: Vec<f64> = if result.regime == LdpRegime::SlowUnbounded {
        weights.iter().map(|w| theta * w / slot).collect()
    } else {
        weights.iter().map(|w| n * w * phi.exp_m1()).collect()
    };
    let estimate = if env.variance() == 0.0 {
        // κ_t is deterministic and the slot twist only contributes constants
        let kappa: f64 = env.mean() * weights.iter().sum::<f64>();
        run_replications(replications, seed, |rng| {
            if phi == 0.0 {
                return poisson_tail(level, n * kappa).ln();
            }
            let x = poisson(n * kappa * phi.exp(), rng);
            if x >= level {
                -phi * x as f64 + n * kappa * phi.exp_m1()
            } else {
                f64::NEG_INFINITY
            }
        })?
    } else {
        let (samplers, log_norm) = twisted_slots(env, &etas)?;
        run_replications(replications, seed, |rng| {
            let mut kappa = 0.0;
            let mut tilt_sum = 0.0;
            for ((s, w), eta) in samplers.iter().zip(&weights).zip(&etas) {
                let x = s.sample(rng);
                kappa += w * x;
                tilt_sum += eta * x;
            }
            let log_lr = log_norm - tilt_sum;
            if phi == 0.0 {
                return log_lr + poisson_tail(level, n * kappa).ln();
            }
            let x = poisson(n * kappa * phi.exp(), rng);
            if x >= level {
                // e^{−φX}∏M(η_j) written with the slot twist made explicit
                log_lr - phi * x as f64 + n * kappa * phi.exp_m1()
            } else {
                f64::NEG_INFINITY
            }
        })?
    };
    Ok((estimate, tilt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp1() -> EnvSpec {
        EnvSpec::exponential(1.0).unwrap()
    }

    fn query(env: EnvSpec, alpha: f64, delta: f64, t: f64, a: f64) -> RateQuery {
        RateQuery {
            env,
            mu: 1.0,
            delta,
            alpha,
            t,
            a,
        }
    }

    /// Li₂(x) = Σ x^k/k²
    fn dilog(x: f64) -> f64 {
        (1..2000).map(|k| x.powi(k) / (k * k) as f64).sum()
    }

    #[test]
    fn integrated_log_mgf_examples() {
        let det = EnvSpec::deterministic(2.0).unwrap();
        let v = integrated_log_mgf(&det, 1.5, 3.0, 0.7).unwrap();
        assert_relative_eq!(v, 0.7 * 2.0 * (1.0 - (-4.5f64).exp()) / 1.5, epsilon = 1e-12);
        assert_eq!(integrated_log_mgf(&exp1(), 1.0, 3.0, 0.0).unwrap(), 0.0);
        let a = integrated_log_mgf(&exp1(), 1.0, 10.0, 0.5).unwrap();
        let b = integrated_log_mgf_substituted(&exp1(), 1.0, 10.0, 0.5).unwrap();
        assert!((a - b).abs() < 1e-9);
        // Exponential(1), t → ∞: ∫_0^θ −log(1−u)/u du = Li₂(θ)
        assert!((integrated_log_mgf(&exp1(), 1.0, 40.0, 0.5).unwrap() - dilog(0.5)).abs() < 1e-9);
        assert!(matches!(
            integrated_log_mgf(&exp1(), 1.0, 1.0, 1.0),
            Err(CoxqError::Domain(_))
        ));
    }

    #[test]
    fn rate_fast_examples() {
        let r = rate_fast(1.0, std::f64::consts::E).unwrap();
        assert_relative_eq!(r.rate, -1.0, epsilon = 1e-14);
        let r = rate_fast(1.0, 2.0).unwrap();
        assert_relative_eq!(r.rate, 1.0 - 2.0 * 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(r.rate, -0.386294, epsilon = 1e-6);
        // numeric sup over a θ grid
        let numeric = (0..200_000)
            .map(|i| i as f64 * 1e-5)
            .map(|th| th * 2.0 - th.exp_m1())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((r.rate + numeric).abs() < 1e-9);
        assert!(rate_fast(1.0, 1.0 + 1e-9).unwrap().rate.abs() < 1e-15);
        assert!(matches!(rate_fast(1.0, 1.0), Err(CoxqError::Domain(_))));
    }

    #[test]
    fn rate_slow_dilog_instance() {
        let q = query(exp1(), 0.5, 1.0, 40.0, 2.0);
        let r = rate_slow(&q).unwrap();
        let th = r.theta();
        assert!((1.0 - th - (-2.0 * th).exp()).abs() < 1e-9);
        assert!((th - 0.7968).abs() < 1e-3);
        let expected = -(2.0 * th - dilog(th));
        assert!((r.rate - expected).abs() < 1e-8);
        assert!((r.rate + 0.525224).abs() < 1e-6);
        assert!(r.diagnostics.residual < 1e-8);
        // grid-search oracle
        let grid_best = (1..1000)
            .map(|i| i as f64 * 1e-3)
            .map(|t| 2.0 * t - dilog(t))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((r.rate + grid_best).abs() < 1e-3);
        assert_eq!(r.speed, Speed::NAlphaOverDelta);
    }

    #[test]
    fn rate_slow_errors_and_boundary() {
        let det = EnvSpec::deterministic(1.0).unwrap();
        assert!(matches!(
            rate_slow(&query(det, 0.5, 1.0, 5.0, 2.0)),
            Err(CoxqError::Regime(_))
        ));
        let q = query(exp1(), 0.5, 1.0, 5.0, 0.5);
        assert!(matches!(rate_slow(&q), Err(CoxqError::Domain(_))));
        let rho = q.rho_t();
        let r = rate_slow(&query(exp1(), 0.5, 1.0, 5.0, rho * (1.0 + 1e-9))).unwrap();
        assert!(r.rate <= 0.0 && r.rate > -1e-6);
    }

    #[test]
    fn stationarity_by_central_differences() {
        for (env, t, a) in [
            (exp1(), 5.0, 1.5),
            (EnvSpec::gamma(2.0, 0.5).unwrap(), 3.0, 1.7),
            (
                EnvSpec::discrete_finite(vec![0.5, 3.0], vec![0.8, 0.2]).unwrap(),
                40.0,
                1.5,
            ),
        ] {
            let q = query(env.clone(), 0.5, 1.0, t, a);
            let th = rate_slow(&q).unwrap().theta();
            let h = 1e-4;
            let d = (integrated_log_mgf(&env, 1.0, t, th + h).unwrap()
                - integrated_log_mgf(&env, 1.0, t, th - h).unwrap())
                / (2.0 * h);
            assert!((a - d).abs() < 1e-6, "{a} vs {d}");
        }
    }

    #[test]
    fn bounded_slow_examples() {
        let disc = EnvSpec::discrete_finite(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        let q = query(disc.clone(), 0.5, 1.0, 40.0, 4.0);
        let r = rate_slow_bounded(&q).unwrap();
        assert_relative_eq!(r.rate, 4.0 * (0.75f64).ln() + 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.rate, -0.150728, epsilon = 1e-6);
        assert_eq!(classify_regime(&q).unwrap(), LdpRegime::SlowBounded);
        // Cramér for a Poisson count with mean u: numeric sup
        let numeric = (0..100_000)
            .map(|i| i as f64 * 1e-5)
            .map(|th| th * 4.0 - 3.0 * th.exp_m1())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((r.rate + numeric).abs() < 1e-9);
        assert!(matches!(
            rate_slow_bounded(&query(disc, 0.5, 1.0, 40.0, 2.5)),
            Err(CoxqError::Regime(_))
        ));
        assert!(matches!(
            rate_slow_bounded(&query(exp1(), 0.5, 1.0, 40.0, 2.5)),
            Err(CoxqError::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn deterministic_identities() {
        for (lambda, t, a) in [(1.0, 40.0, 2.0), (2.5, 1.3, 3.0), (0.4, 7.0, 0.41)] {
            let det = EnvSpec::deterministic(lambda).unwrap();
            let q = query(det, 0.5, 1.0, t, a);
            let fast = rate_fast(q.rho_t(), a).unwrap();
            let bounded = rate_slow_bounded(&q).unwrap();
            assert_eq!(bounded.rate, fast.rate);
            assert_eq!(bounded.theta_star, fast.theta_star);
            for delta in [0.1, 1.0, 3.0] {
                let qi = RateQuery {
                    delta,
                    alpha: 1.0,
                    ..q.clone()
                };
                let inter = rate_intermediate(&qi).unwrap();
                // speed N/Δ versus N
                assert!((inter.rate - delta * fast.rate).abs() < 1e-9 * delta.max(1.0));
            }
        }
    }

    #[test]
    fn intermediate_limits() {
        let fast = rate_fast(1.0 - (-40f64).exp(), 2.0).unwrap().rate;
        let q = query(exp1(), 1.0, 0.01, 40.0, 2.0);
        let inter = rate_intermediate(&q).unwrap();
        assert!((inter.rate / q.delta - fast).abs() < 0.02 * fast.abs());
        // large Δ: the environment term dominates, toward the slow rate
        let slow = rate_slow(&query(exp1(), 0.5, 1.0, 40.0, 2.0)).unwrap().rate;
        let mut last = f64::INFINITY;
        for delta in [1.0, 10.0, 100.0] {
            let r = rate_intermediate(&query(exp1(), 1.0, delta, 40.0, 2.0)).unwrap().rate;
            let gap = (r - slow).abs();
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn classification() {
        assert_eq!(
            classify_regime(&query(exp1(), 2.0, 1.0, 5.0, 2.0)).unwrap(),
            LdpRegime::Fast
        );
        assert_eq!(
            classify_regime(&query(exp1(), 0.5, 1.0, 5.0, 2.0)).unwrap(),
            LdpRegime::SlowUnbounded
        );
        assert_eq!(
            classify_regime(&query(exp1(), 1.0, 1.0, 5.0, 2.0)).unwrap(),
            LdpRegime::Intermediate
        );
        assert!(matches!(
            classify_regime(&query(exp1(), 2.0, 1.0, 5.0, 0.5)),
            Err(CoxqError::Domain(_))
        ));
    }

    #[test]
    fn rates_decrease_in_level() {
        for alpha in [0.5, 1.0, 2.0] {
            let rates: Vec<f64> = [1.2, 1.5, 2.0]
                .iter()
                .map(|&a| rate(&query(exp1(), alpha, 1.0, 5.0, a)).unwrap().rate)
                .collect();
            assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
        }
    }

    #[test]
    fn multivariate_reduces_to_univariate() {
        let single = QueueParams::single(1.0).unwrap();
        for (alpha, env) in [
            (2.0, exp1()),
            (1.0, exp1()),
            (0.5, exp1()),
            (0.5, EnvSpec::gamma(2.0, 0.5).unwrap()),
        ] {
            let q = query(env.clone(), alpha, 0.8, 5.0, 1.6);
            let uni = rate(&q).unwrap();
            let multi = rate_multivariate(&MultiRateQuery {
                env,
                queues: single.clone(),
                delta: 0.8,
                alpha,
                t: 5.0,
                a: vec![1.6],
            })
            .unwrap();
            assert!(
                (uni.rate - multi.rate).abs() < 1e-8,
                "{alpha}: {} vs {}",
                uni.rate,
                multi.rate
            );
            assert!((uni.theta() - multi.theta_star[0]).abs() < 1e-6);
            assert_eq!(uni.speed, multi.speed);
        }
    }

    #[test]
    fn multivariate_symmetric_pair() {
        let q = MultiRateQuery {
            env: exp1(),
            queues: QueueParams::new(vec![1.0, 1.0]).unwrap(),
            delta: 1.0,
            alpha: 0.5,
            t: 40.0,
            a: vec![1.5, 1.5],
        };
        let r = rate_multivariate(&q).unwrap();
        // 1-D reduction: sup_θ (2a₀θ − ∫ log M(2θe^{−s}) ds)
        let objective = |th: f64| 3.0 * th - integrated_log_mgf(&exp1(), 1.0, 40.0, 2.0 * th).unwrap();
        let (mut lo, mut hi) = (0.0, 0.5 - 1e-9);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if objective(m1) < objective(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let best = 0.5 * (lo + hi);
        assert!((r.rate + objective(best)).abs() < 1e-8);
        // equal service rates: only θ₁ + θ₂ is identified
        assert!((r.theta_star[0] + r.theta_star[1] - 2.0 * best).abs() < 1e-5);
        let uni = rate_slow(&query(exp1(), 0.5, 1.0, 40.0, 1.5)).unwrap();
        assert!((r.rate - uni.rate).abs() < 1e-8);
    }

    #[test]
    fn multivariate_rectangle_checks() {
        let q = MultiRateQuery {
            env: exp1(),
            queues: QueueParams::new(vec![1.0, 2.0]).unwrap(),
            delta: 1.0,
            alpha: 2.0,
            t: 3.0,
            a: vec![1.5, 0.2],
        };
        assert!(matches!(rate_multivariate(&q), Err(CoxqError::Domain(_))));
        let q = MultiRateQuery { a: vec![1.5, 0.8], ..q };
        let r = rate_multivariate(&q).unwrap();
        assert!(r.rate < 0.0);
        // the joint event is rarer than either marginal
        let m1 = rate_fast(q.env.mean() * (1.0 - (-3f64).exp()), 1.5).unwrap().rate;
        assert!(r.rate <= m1 + 1e-12);
    }

    #[test]
    fn objective_is_concave() {
        let env = exp1();
        let a = 1.5;
        let f = |th: f64| th * a - integrated_log_mgf(&env, 1.0, 5.0, th).unwrap();
        let h = 0.01;
        for i in 1..95 {
            let th = i as f64 * 0.01;
            assert!(f(th + h) - 2.0 * f(th) + f(th - h) < 0.0);
        }
    }

    #[test]
    fn tilted_proxy_mean_approaches_level() {
        let q = query(exp1(), 0.5, 1.0, 5.0, 1.5);
        let th = rate_slow(&q).unwrap().theta();
        let mut gaps = vec![];
        for n in [100, 10_000, 1_000_000] {
            let s = ScalingRegime::new(n, 0.5, 1.0).unwrap();
            let m = ProxySampler::new(&q, &s, th).unwrap().tilted_mean(&q.env).unwrap();
            gaps.push((m - 1.5).abs());
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] < 1e-2, "{gaps:?}");
        // empirical mean under Q
        let s = ScalingRegime::new(10_000, 0.5, 1.0).unwrap();
        let sampler = ProxySampler::new(&q, &s, th).unwrap();
        let mut rng = RandomStream::new(5);
        let draws: Vec<f64> = (0..20_000).map(|_| sampler.sample(&mut rng).0).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - sampler.tilted_mean(&q.env).unwrap()).abs() < 3e-3);
    }

    #[test]
    fn deterministic_proxy_has_constant_ratio() {
        let q = query(EnvSpec::deterministic(1.0).unwrap(), 0.5, 1.0, 2.0, 1.5);
        let s = ScalingRegime::new(16, 0.5, 1.0).unwrap();
        let sampler = ProxySampler::new(&q, &s, 0.3).unwrap();
        let mut rng = RandomStream::new(1);
        let first = sampler.sample(&mut rng);
        for _ in 0..10 {
            let next = sampler.sample(&mut rng);
            assert_eq!(next.0, first.0);
            assert!((next.1 - first.1).abs() < 1e-12);
            assert!(first.1.abs() < 1e-12);
        }
    }

    #[test]
    fn is_agrees_with_plain_monte_carlo() {
        // barely above the fluid value, so plain sampling sees the event often
        let s = ScalingRegime::new(16, 0.5, 1.0).unwrap();
        let base = query(exp1(), 0.5, 1.0, 2.0, 1.0);
        let q = RateQuery {
            a: base.rho_t() * 1.3,
            ..base
        };
        let is = is_estimate_tail(&q, &s, 40_000, 3).unwrap();
        let plain = is_estimate_tail_with_tilt(&q, &s, 0.0, 40_000, 4).unwrap();
        let se = ((is.prob * is.rel_err).powi(2) + (plain.prob * plain.rel_err).powi(2)).sqrt();
        assert!((is.prob - plain.prob).abs() < 3.0 * se, "{is:?} {plain:?}");
        assert!(is.rel_err < plain.rel_err);
    }

    #[test]
    fn is_rejects_degenerate_levels() {
        let s = ScalingRegime::new(16, 0.5, 1.0).unwrap();
        let q = query(exp1(), 0.5, 1.0, 2.0, 0.1);
        assert!(matches!(
            is_estimate_tail(&q, &s, 10, 1),
            Err(CoxqError::DegenerateQuery(_))
        ));
        assert!(matches!(
            is_estimate_queue_tail(&q, &s, 10, 1),
            Err(CoxqError::DegenerateQuery(_))
        ));
    }

    #[test]
    fn queue_tail_exact_for_deterministic_rates() {
        let q = query(EnvSpec::deterministic(1.0).unwrap(), 2.0, 1.0, 40.0, 2.0);
        let s = ScalingRegime::new(50, 2.0, 1.0).unwrap();
        let (est, tilt) = is_estimate_queue_tail(&q, &s, 20_000, 9).unwrap();
        assert_eq!(tilt.regime, LdpRegime::Fast);
        let exact = poisson_tail(100, 50.0 * q.rho_t());
        assert!((est.prob / exact - 1.0).abs() < 3.0 * est.rel_err, "{est:?} vs {exact}");
        assert!(est.rel_err < 0.05);
    }

    #[test]
    fn queue_tail_matches_plain_simulation() {
        use crate::sim::{simulate, SimConfig};
        let s = ScalingRegime::new(4, 0.5, 1.0).unwrap();
        let q = query(exp1(), 0.5, 1.0, 2.0, 1.5);
        let (est, _) = is_estimate_queue_tail(&q, &s, 40_000, 2).unwrap();
        let cfg = SimConfig::new(exp1(), QueueParams::single(1.0).unwrap(), s, 2.0, vec![2.0], 8, 200_000);
        let traj = simulate(&cfg).unwrap();
        let hits = traj.counts().iter().filter(|&&c| c >= 6).count() as f64;
        let p = hits / 200_000.0;
        let se = (p * (1.0 - p) / 200_000.0 + (est.prob * est.rel_err).powi(2)).sqrt();
        assert!((est.prob - p).abs() < 3.0 * se, "{est:?} vs {p}");
        // intermediate and fast tilts on the same small instance
        for alpha in [1.0, 2.0] {
            let s = ScalingRegime::new(4, alpha, 1.0).unwrap();
            let qa = RateQuery { alpha, ..q.clone() };
            let (est, _) = is_estimate_queue_tail(&qa, &s, 40_000, 2).unwrap();
            let cfg = SimConfig::new(exp1(), QueueParams::single(1.0).unwrap(), s, 2.0, vec![2.0], 8, 200_000);
            let traj = simulate(&cfg).unwrap();
            let p = traj.counts().iter().filter(|&&c| c >= 6).count() as f64 / 200_000.0;
            let se = (p * (1.0 - p) / 200_000.0 + (est.prob * est.rel_err).powi(2)).sqrt();
            assert!((est.prob - p).abs() < 3.0 * se, "alpha {alpha}: {est:?} vs {p}");
        }
    }

    #[test]
    fn estimates_are_reproducible() {
        let s = ScalingRegime::new(64, 0.5, 1.0).unwrap();
        let q = query(exp1(), 0.5, 1.0, 5.0, 1.5);
        assert_eq!(
            is_estimate_tail(&q, &s, 500, 1).unwrap(),
            is_estimate_tail(&q, &s, 500, 1).unwrap()
        );
    }

    #[test]
    fn poisson_tail_values() {
        assert_eq!(poisson_tail(0, 3.0), 1.0);
        assert_relative_eq!(poisson_tail(1, 2.0), 1.0 - (-2f64).exp(), epsilon = 1e-14);
        let direct: f64 = 1.0
            - (0..3)
                .map(|k| (-4f64).exp() * 4f64.powi(k) / [1.0, 1.0, 2.0][k as usize])
                .sum::<f64>();
        assert_relative_eq!(poisson_tail(3, 4.0), direct, epsilon = 1e-13);
    }

    #[test]
    fn rate_result_json() {
        let r = rate_fast(1.0, 2.0).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["speed"], "N");
        assert_eq!(v["regime"], "fast");
        let back: RateResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
