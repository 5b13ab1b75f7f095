//! One function per subcommand. Each returns the report together with every
//! file the run produces, so outputs can be compared byte for byte.

use std::io;
use std::path::Path;

use coxq_core::ldp::{integrated_log_mgf_substituted, is_estimate_queue_tail};
use coxq_core::sim::sample_moments;
use coxq_core::{
    clt_sigma2, estimate_moments, fclt_covariance, fluid_limit, integrated_log_mgf, normalized_endpoint, rate,
    rate_fast, rate_intermediate, rate_multivariate, rate_slow_bounded, sample_stationary, scaled_covariance,
    scaled_variance, simulate, stationary_correlation, stationary_mean, stationary_pgf, stationary_variance,
    stationary_warmup, transient_moments, LdpRegime, MultiRateQuery, RateQuery, ScalingRegime, SimConfig,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind, Start};
use crate::report::{Criterion, Report};
use crate::stats::{anderson_darling, skewness, weighted_line_fit};
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

const PGF_POINTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const PGF_MAX_TERMS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    /// report.json first, then the run's other files
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    fn new(report: Report, mut extra: Vec<Artifact>) -> Result<Self> {
        let mut artifacts = vec![json_artifact("report.json", &report)?];
        artifacts.append(&mut extra);
        Ok(Self { report, artifacts })
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for a in &self.artifacts {
            std::fs::write(dir.join(&a.name), &a.bytes)?;
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

fn json_artifact(name: &str, value: &impl Serialize) -> Result<Artifact> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    bytes.push(b'\n');
    Ok(Artifact {
        name: name.to_string(),
        bytes,
    })
}

fn to_value(value: &impl Serialize) -> Value {
    serde_json::to_value(value).expect("plain data serializes")
}

pub fn run(kind: Kind, config: &ExperimentConfig) -> Result<RunOutput> {
    if let Some(k) = config.kind {
        if k != kind {
            return Err(HarnessError::Config(format!("config is for {k}, not {kind}")));
        }
    }
    config.validate()?;
    match kind {
        Kind::Analytic => run_analytic(config),
        Kind::Simulate => run_simulate(config),
        Kind::CltCheck => run_clt_check(config),
        Kind::FcltCheck => run_fclt_check(config),
        Kind::LdpCheck => run_ldp_check(config),
        Kind::CorrCheck => run_corr_check(config),
    }
}

/// Replication seed for the k-th entry of the N grid.
fn seed_for(config: &ExperimentConfig, k: usize) -> u64 {
    config.seed.wrapping_add(k as u64)
}

fn sim_config(config: &ExperimentConfig, scaling: ScalingRegime, grid: Vec<f64>, seed: u64) -> SimConfig {
    let horizon = grid.last().copied().unwrap_or(0.0).max(scaling.slot_length());
    let mut sc = SimConfig::new(
        config.env.clone(),
        config.queues.clone(),
        scaling,
        horizon,
        grid,
        seed,
        config.replications,
    );
    if let Some(budget) = config.event_budget {
        sc.event_budget = budget;
    }
    sc
}

fn pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (i + 1..d).map(move |k| (i, k))).collect()
}

fn on_slot_boundary(t: f64, slot: f64) -> bool {
    let k = t / slot;
    (k - k.round()).abs() <= 1e-9 * k.max(1.0)
}

pub fn run_analytic(config: &ExperimentConfig) -> Result<RunOutput> {
    let env = &config.env;
    let tol = &config.tolerances;
    let mu = config.queues.mu();
    let mut criteria = Vec::new();
    let mut warnings = Vec::new();
    let mut queues = Vec::new();
    for (i, &m) in mu.iter().enumerate() {
        let pgf = PGF_POINTS
            .iter()
            .map(|&z| stationary_pgf(env, m, config.delta, z, PGF_MAX_TERMS))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let at_one = pgf.last().expect("nonempty").value;
        criteria.push(Criterion::within(
            format!("pgf normalization q{i}"),
            at_one,
            1.0,
            tol.pgf_abs,
            "phi(1) = 1",
        ));
        if env.variance() == 0.0 {
            let gap = PGF_POINTS
                .iter()
                .zip(&pgf)
                .map(|(&z, p)| (p.value - (env.mean() / m * (z - 1.0)).exp()).abs())
                .fold(0.0, f64::max);
            criteria.push(Criterion::at_most(
                format!("poisson pgf q{i}"),
                gap,
                tol.pgf_abs,
                "max |phi(z) - exp(lambda/mu (z-1))| over z in {0, .25, .5, .75, 1}",
            ));
        }
        let mut per_n = Vec::new();
        let mut ratios = Vec::new();
        for &n in &config.n_grid {
            let sv = scaled_variance(env, m, &config.scaling(n)?)?;
            let ratio = sv.exact / sv.asymptotic;
            ratios.push(ratio);
            per_n.push(json!({"N": n, "exact": sv.exact, "asymptotic": sv.asymptotic, "ratio": ratio}));
        }
        if config.n_grid.len() >= 2 {
            if ratios.iter().all(|r| r.is_finite()) {
                let gaps: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
                let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
                criteria.push(Criterion::flag(
                    format!("trichotomy monotone q{i}"),
                    monotone,
                    format!("|exact/asymptotic - 1| along N_grid: {gaps:?}"),
                ));
                criteria.push(Criterion::within(
                    format!("trichotomy ratio q{i}"),
                    *ratios.last().expect("nonempty"),
                    1.0,
                    tol.trichotomy_rel,
                    format!("exact/asymptotic at N = {}", config.n_grid.last().expect("nonempty")),
                ));
            } else {
                warnings.push(format!("q{i}: asymptotic scaled variance is 0, ratio undefined"));
            }
        }
        let mut entry = json!({
            "mu": m,
            "stationary_mean": stationary_mean(env, m)?,
            "stationary_variance": stationary_variance(env, m, config.delta)?,
            "clt_sigma2": clt_sigma2(env, m, config.delta, config.alpha)?,
            "pgf": PGF_POINTS.iter().zip(&pgf).map(|(z, p)| json!({"z": z, "value": p.value, "tail_bound": p.tail_bound, "terms": p.terms})).collect::<Vec<_>>(),
            "scaled_variance": per_n,
        });
        if let Some(t) = config.t {
            let tm = transient_moments(env, m, config.delta, t)?;
            entry["transient"] = json!({"t": t, "mean": tm.mean, "variance": tm.variance});
            entry["fluid"] = json!(fluid_limit(config.fluid_start()[i], env, m, t)?);
        }
        queues.push(entry);
    }
    let mut results = json!({"queues": queues});
    if let Some(t) = config.t {
        results["fclt_covariance"] = to_value(&fclt_covariance(
            env,
            &config.queues,
            config.delta,
            config.alpha,
            &config.fluid_start(),
            t,
        )?);
    }
    let mut pair_results = Vec::new();
    for (i, k) in pairs(mu.len()) {
        let corr = stationary_correlation(env, mu[i], mu[k], config.delta, config.alpha)?;
        let cov = config
            .n_grid
            .iter()
            .map(|&n| Ok(json!({"N": n, "covariance": scaled_covariance(env, mu[i], mu[k], &config.scaling(n)?)?})))
            .collect::<Result<Vec<_>>>()?;
        pair_results
            .push(json!({"i": i, "k": k, "correlation": corr.corr, "c": corr.c_const, "scaled_covariance": cov}));
    }
    if !pair_results.is_empty() {
        results["pairs"] = json!(pair_results);
    }
    let mut extra = Vec::new();
    if let Some(level) = &config.a {
        let rates = analytic_rates(config, &level.values(), &mut criteria)?;
        results["rates"] = rates.clone();
        extra.push(json_artifact("rates.json", &rates)?);
    }
    let report = Report::new(Kind::Analytic, config, results, criteria, warnings);
    RunOutput::new(report, extra)
}

/// Rates for the configured level plus the identities that tie the regimes
/// together.
fn analytic_rates(config: &ExperimentConfig, a: &[f64], criteria: &mut Vec<Criterion>) -> Result<Value> {
    let t = config.require_t()?;
    let tol = &config.tolerances;
    if a.len() != 1 || config.queues.d() != 1 {
        let q = multi_query(config, a, t)?;
        let r = rate_multivariate(&q)?;
        return Ok(json!({"query": q, "result": r}));
    }
    let q = rate_query(config, a[0], t)?;
    let r = rate(&q)?;
    let mut out = json!({"query": q, "result": r});
    if r.regime != LdpRegime::SlowBounded {
        let multi = rate_multivariate(&multi_query(config, a, t)?)?;
        criteria.push(Criterion::within(
            "multivariate reduction",
            multi.rate,
            r.rate,
            tol.identity_abs,
            "d = 1 multivariate rate against the univariate rate",
        ));
        out["multivariate"] = to_value(&multi);
    }
    if config.env.variance() == 0.0 {
        let fast = rate_fast(q.rho_t(), q.a)?;
        let bounded = rate_slow_bounded(&q)?;
        criteria.push(Criterion::within(
            "bounded slow equals fast",
            bounded.rate,
            fast.rate,
            0.0,
            "deterministic rates: the bounded slow rate is the fast rate",
        ));
        let inter = rate_intermediate(&RateQuery {
            alpha: 1.0,
            ..q.clone()
        })?;
        criteria.push(Criterion::within(
            "intermediate equals fast",
            inter.rate / q.delta,
            fast.rate,
            tol.identity_abs,
            "deterministic rates: intermediate rate per unit N equals the fast rate",
        ));
        out["identities"] = json!({"fast": fast, "slow_bounded": bounded, "intermediate": inter});
    }
    Ok(out)
}

fn rate_query(config: &ExperimentConfig, a: f64, t: f64) -> Result<RateQuery> {
    if config.queues.d() != 1 {
        return Err(HarnessError::Config("a scalar level needs a single queue".into()));
    }
    let q = RateQuery {
        env: config.env.clone(),
        mu: config.queues.mu()[0],
        delta: config.delta,
        alpha: config.alpha,
        t,
        a,
    };
    q.validate()?;
    if a <= q.rho_t() {
        return Err(HarnessError::Config(format!(
            "level a = {a} must exceed the fluid value rho(t) = {}",
            q.rho_t()
        )));
    }
    Ok(q)
}

fn multi_query(config: &ExperimentConfig, a: &[f64], t: f64) -> Result<MultiRateQuery> {
    if a.len() != config.queues.d() {
        return Err(HarnessError::Config(format!("a needs {} entries", config.queues.d())));
    }
    Ok(MultiRateQuery {
        env: config.env.clone(),
        queues: config.queues.clone(),
        delta: config.delta,
        alpha: config.alpha,
        t,
        a: a.to_vec(),
    })
}

pub fn run_simulate(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.n_grid.len() != 1 {
        return Err(HarnessError::Config("simulate takes a single N".into()));
    }
    let n = config.n_grid[0];
    let scaling = config.scaling(n)?;
    let grid = config.readout_grid()?;
    let mut sc = sim_config(config, scaling, grid.clone(), config.seed);
    let rho0 = config.fluid_start();
    match config.start {
        Start::Empty => {}
        Start::Fluid => {
            sc.initial_counts = rho0.iter().map(|r| (r * n as f64).round() as u64).collect();
        }
        Start::Stationary => sc.warmup = stationary_warmup(&config.queues, &scaling),
    }
    let traj = simulate(&sc)?;
    let moments = estimate_moments(&traj)?;
    let env = &config.env;
    let tol = &config.tolerances;
    let k = tol.se_multiplier;
    let nf = n as f64;
    let slot = scaling.slot_length();
    let mut criteria = Vec::new();
    let mut targets = Vec::new();
    for g in &moments.grid {
        for (i, &m) in config.queues.mu().iter().enumerate() {
            let t = g.time;
            let (mean, variance) = match config.start {
                Start::Empty => {
                    let tm = transient_moments(env, m, slot, t)?;
                    (nf * tm.mean, nf * tm.mean + nf * nf * (tm.variance - tm.mean))
                }
                Start::Fluid => {
                    let c = sc.initial_counts[i] as f64;
                    let p = (-m * t).exp();
                    (c * p + nf * (fluid_limit(0.0, env, m, t)?), f64::NAN)
                }
                Start::Stationary => {
                    let exact = scaled_variance(env, m, &scaling)?.exact;
                    let v = if on_slot_boundary(t, slot) { exact } else { f64::NAN };
                    (nf * stationary_mean(env, m)?, v)
                }
            };
            criteria.push(Criterion::within(
                format!("mean q{i} t={t}"),
                g.mean[i],
                mean,
                k * g.mean_se[i],
                format!("{k} standard errors"),
            ));
            if variance.is_finite() {
                criteria.push(Criterion::within(
                    format!("variance q{i} t={t}"),
                    g.variance[i],
                    variance,
                    k * g.variance_se[i],
                    format!("{k} standard errors"),
                ));
            }
            if config.start == Start::Stationary && variance.is_finite() {
                let ratio = g.variance[i] / g.mean[i];
                let se = ((g.variance_se[i] / g.mean[i]).powi(2)
                    + (g.variance[i] * g.mean_se[i] / (g.mean[i] * g.mean[i])).powi(2))
                .sqrt();
                criteria.push(Criterion::within(
                    format!("variance-to-mean q{i} t={t}"),
                    ratio,
                    variance / mean,
                    k * se,
                    format!("{k} standard errors, delta method"),
                ));
            }
            targets.push(json!({"time": t, "queue": i, "mean": mean, "variance": if variance.is_finite() { Some(variance) } else { None }}));
        }
    }
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let results = json!({
        "N": n,
        "slot_length": slot,
        "warmup": sc.warmup,
        "initial_counts": sc.initial_counts,
        "expected_events": sc.expected_events(),
        "moments": moments,
        "targets": targets,
    });
    let report = Report::new(Kind::Simulate, config, results, criteria, vec![]);
    RunOutput::new(
        report,
        vec![
            Artifact {
                name: "trajectories.csv".into(),
                bytes: csv,
            },
            json_artifact("moments.json", &moments)?,
        ],
    )
}

pub fn run_clt_check(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.queues.d() != 1 {
        return Err(HarnessError::Config("clt-check needs a single queue".into()));
    }
    let env = &config.env;
    let tol = &config.tolerances;
    let m = config.queues.mu()[0];
    let sigma2 = clt_sigma2(env, m, config.delta, config.alpha)?;
    let center = [stationary_mean(env, m)?];
    let mut per_n = Vec::new();
    let mut last = None;
    for (k, &n) in config.n_grid.iter().enumerate() {
        let scaling = config.scaling(n)?;
        let traj = sample_stationary(&sim_config(config, scaling, vec![0.0], seed_for(config, k)))?;
        let u = normalized_endpoint(&traj, &scaling, &center, 0.0)?;
        let moments = sample_moments(0.0, &u)?;
        let flat: Vec<f64> = u.iter().map(|r| r[0]).collect();
        let ad = anderson_darling(&flat);
        let exact = scaled_variance(env, m, &scaling)?.exact / (n as f64).powf(scaling.gamma());
        let ratio = moments.variance[0] / sigma2;
        per_n.push(json!({
            "N": n,
            "variance": moments.variance[0],
            "variance_se": moments.variance_se[0],
            "mean": moments.mean[0],
            "mean_se": moments.mean_se[0],
            "ratio": ratio,
            "finite_n_variance": exact,
            "skewness": skewness(&flat),
            "anderson_darling": ad,
        }));
        last = Some((n, ratio, ad));
    }
    let (n, ratio, ad) = last.expect("N_grid is nonempty");
    let criteria = vec![
        Criterion::within(
            "clt variance",
            ratio,
            1.0,
            tol.clt_variance_rel,
            format!("normalized variance / sigma^2 at N = {n}"),
        ),
        match ad {
            Some(ad) => Criterion::above(
                "normality",
                ad.p_value,
                tol.ad_p_min,
                format!("Anderson-Darling p-value at N = {n}, A*^2 = {}", ad.adjusted),
            ),
            None => Criterion::flag("normality", false, "sample too small or degenerate"),
        },
    ];
    let results = json!({"sigma2": sigma2, "center": center[0], "per_N": per_n});
    RunOutput::new(Report::new(Kind::CltCheck, config, results, criteria, vec![]), vec![])
}

pub fn run_fclt_check(config: &ExperimentConfig) -> Result<RunOutput> {
    let d = config.queues.d();
    if d < 2 {
        return Err(HarnessError::Config("fclt-check needs at least two queues".into()));
    }
    let env = &config.env;
    let tol = &config.tolerances;
    let grid = config.readout_grid()?;
    let mu = config.queues.mu();
    let mut per_n = Vec::new();
    let mut criteria = Vec::new();
    for (k, &n) in config.n_grid.iter().enumerate() {
        let scaling = config.scaling(n)?;
        let nf = n as f64;
        let mut sc = sim_config(config, scaling, grid.clone(), seed_for(config, k));
        sc.initial_counts = config.fluid_start().iter().map(|r| (r * nf).round() as u64).collect();
        // the fluid start the counts actually realize
        let rho0: Vec<f64> = sc.initial_counts.iter().map(|&c| c as f64 / nf).collect();
        let traj = simulate(&sc)?;
        let mut per_t = Vec::new();
        for &t in &grid {
            let center = mu
                .iter()
                .zip(&rho0)
                .map(|(&m, &r)| fluid_limit(r, env, m, t))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let u = normalized_endpoint(&traj, &scaling, &center, t)?;
            let emp = sample_moments(t, &u)?;
            let target = fclt_covariance(env, &config.queues, config.delta, config.alpha, &rho0, t)?;
            let mut worst: f64 = 0.0;
            let mut largest: f64 = 0.0;
            for i in 0..d {
                for j in 0..d {
                    largest = largest.max(emp.covariance[i][j].abs());
                    let c = target.matrix[i][j];
                    if c != 0.0 {
                        worst = worst.max((emp.covariance[i][j] / c - 1.0).abs());
                    }
                }
            }
            if n == *config.n_grid.last().expect("nonempty") {
                criteria.push(if t == 0.0 {
                    Criterion::at_most(
                        "fclt covariance t=0",
                        largest,
                        tol.covariance_zero_abs,
                        "largest empirical entry",
                    )
                } else {
                    Criterion::at_most(
                        format!("fclt covariance t={t}"),
                        worst,
                        tol.covariance_rel,
                        format!("largest relative entry error at N = {n}"),
                    )
                });
            }
            let target_corr: Vec<Vec<f64>> = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| target.matrix[i][j] / (target.matrix[i][i] * target.matrix[j][j]).sqrt())
                        .collect()
                })
                .collect();
            per_t.push(json!({
                "t": t,
                "empirical": emp.covariance,
                "standard_error": emp.covariance_se,
                "limit": target.matrix,
                "limit_correlation": target_corr,
                "max_relative_error": worst,
            }));
        }
        per_n.push(json!({"N": n, "rho0": rho0, "initial_counts": sc.initial_counts, "grid": per_t}));
    }
    let results = json!({"per_N": per_n});
    RunOutput::new(Report::new(Kind::FcltCheck, config, results, criteria, vec![]), vec![])
}

pub fn run_ldp_check(config: &ExperimentConfig) -> Result<RunOutput> {
    let t = config.require_t()?;
    let a = config
        .a
        .as_ref()
        .ok_or_else(|| HarnessError::Config("ldp-check needs a level a".into()))?
        .values();
    let tol = &config.tolerances;
    if a.len() != 1 || config.queues.d() != 1 {
        let q = multi_query(config, &a, t)?;
        let r = rate_multivariate(&q)?;
        let criteria = vec![Criterion::at_most(
            "multivariate optimizer",
            r.diagnostics.residual,
            tol.stationarity_residual,
            "projected gradient norm",
        )];
        let rates = json!({"query": q, "result": r});
        let report = Report::new(Kind::LdpCheck, config, json!({"rate": r}), criteria, vec![]);
        return RunOutput::new(report, vec![json_artifact("rates.json", &rates)?]);
    }
    let q = rate_query(config, a[0], t)?;
    let r = rate(&q)?;
    let mut criteria = Vec::new();
    let mut warnings = Vec::new();
    let mut extra_results = json!({});
    if r.regime == LdpRegime::SlowUnbounded {
        let th = r.theta();
        let h = 1e-4 * th.max(1e-2);
        let derivative =
            (integrated_log_mgf(&q.env, q.mu, t, th + h)? - integrated_log_mgf(&q.env, q.mu, t, th - h)?) / (2.0 * h);
        let residual = (q.a - derivative).abs();
        let direct = integrated_log_mgf(&q.env, q.mu, t, th)?;
        let substituted = integrated_log_mgf_substituted(&q.env, q.mu, t, th)?;
        criteria.push(Criterion::at_most(
            "stationarity residual",
            residual,
            tol.stationarity_residual,
            "|a - d/dtheta integrated log-MGF| at theta*, central differences",
        ));
        criteria.push(Criterion::within(
            "dual-route quadrature",
            substituted,
            direct,
            tol.dual_route_abs,
            "integral in s against the u = theta e^{-mu s} substitution at theta*",
        ));
        extra_results = json!({"stationarity_residual": residual, "direct": direct, "substituted": substituted});
    }
    let mut per_n = Vec::new();
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    let mut worst_rel = 0.0f64;
    for (k, &n) in config.n_grid.iter().enumerate() {
        let scaling = config.scaling(n)?;
        let (est, tilt) = is_estimate_queue_tail(&q, &scaling, config.replications, seed_for(config, k))?;
        let speed = r.speed.value(&scaling);
        worst_rel = worst_rel.max(est.rel_err);
        if est.rel_err > tol.warn_is_rel_err {
            warnings.push(format!(
                "N = {n}: relative error {:.3} exceeds {}",
                est.rel_err, tol.warn_is_rel_err
            ));
        }
        if est.hits > 0 && est.rel_err > 0.0 && est.rel_err.is_finite() {
            xs.push(speed);
            ys.push(est.log_prob);
            ws.push(1.0 / (est.rel_err * est.rel_err));
        }
        per_n.push(
            json!({"N": n, "speed": speed, "estimate": est, "tilt": tilt, "normalized_log_prob": est.log_prob / speed}),
        );
    }
    let fit = weighted_line_fit(&xs, &ys, &ws);
    criteria.push(Criterion::at_most(
        "is precision",
        worst_rel,
        tol.max_is_rel_err,
        "largest relative error over N_grid",
    ));
    criteria.push(match fit {
        Some(f) => Criterion::relative(
            "ldp slope",
            f.slope,
            r.rate,
            tol.slope_rel,
            format!("WLS slope of log P against the speed {}", r.speed.label()),
        ),
        None => Criterion::flag("ldp slope", false, "fewer than two usable estimates"),
    });
    let results = json!({"rate": r, "fit": fit, "per_N": per_n, "checks": extra_results});
    let rates = json!({"query": q, "result": r});
    let report = Report::new(Kind::LdpCheck, config, results, criteria, warnings);
    RunOutput::new(report, vec![json_artifact("rates.json", &rates)?])
}

pub fn run_corr_check(config: &ExperimentConfig) -> Result<RunOutput> {
    let d = config.queues.d();
    if d < 2 {
        return Err(HarnessError::Config("corr-check needs at least two queues".into()));
    }
    let env = &config.env;
    let tol = &config.tolerances;
    let mu = config.queues.mu();
    let mut per_n = Vec::new();
    let mut criteria = Vec::new();
    let nf_reps = config.replications as f64;
    for (k, &n) in config.n_grid.iter().enumerate() {
        let scaling = config.scaling(n)?;
        let traj = sample_stationary(&sim_config(config, scaling, vec![0.0], seed_for(config, k)))?;
        let m = &estimate_moments(&traj)?.grid[0];
        let mut entries = Vec::new();
        for (i, j) in pairs(d) {
            let corr = m.covariance[i][j] / (m.variance[i] * m.variance[j]).sqrt();
            let target = stationary_correlation(env, mu[i], mu[j], config.delta, config.alpha)?;
            let asym_cov = scaled_covariance(env, mu[i], mu[j], &scaling)?;
            if n == *config.n_grid.last().expect("nonempty") {
                criteria.push(Criterion::relative(
                    format!("correlation q{i} q{j}"),
                    corr,
                    target.corr,
                    tol.correlation_rel,
                    format!("stationary correlation at N = {n}, c = {}", target.c_const),
                ));
            }
            entries.push(json!({
                "i": i,
                "j": j,
                "correlation": corr,
                "correlation_se": (1.0 - corr * corr) / nf_reps.sqrt(),
                "limit_correlation": target.corr,
                "c": target.c_const,
                "covariance": m.covariance[i][j],
                "covariance_se": m.covariance_se[i][j],
                "scaled_covariance": asym_cov,
            }));
        }
        per_n.push(json!({"N": n, "pairs": entries, "mean": m.mean, "variance": m.variance}));
    }
    let results = json!({"per_N": per_n});
    RunOutput::new(Report::new(Kind::CorrCheck, config, results, criteria, vec![]), vec![])
}
