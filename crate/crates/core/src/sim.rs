//! Event-level Monte Carlo for d infinite-server queues fed by one shared
//! resampled mixed-Poisson arrival stream.
//!
//! Time runs from `-warmup` to `horizon`; the slot clock starts at `-warmup`.
//! In slot j the arrival count is Poisson(N·Λ_j·Δ_N), the epochs are uniform in
//! the slot and every arrival joins all d queues with an independent Exp(μ_i)
//! service time in queue i. Counts are read off at the grid times.

use std::io::{self, Write};

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{QueueParams, SurvivalConstants};
use crate::env::{full_slots, open01, poisson, slot_count, EnvSpec, RatePath, RateSampler, ScalingRegime};
use crate::error::{invalid, require_nonnegative, require_positive, CoxqError, Result};
use crate::rng::RandomStream;

pub const DEFAULT_EVENT_BUDGET: f64 = 1e9;

/// Stationary runs start this many mean service times (of the slowest queue)
/// before the readout.
pub const STATIONARY_HORIZON_MEANS: f64 = 40.0;

// dense slot loop is used unless slots are mostly empty
const SPARSE_THRESHOLD: f64 = 0.25;

/// Tolerance for matching a requested time against the grid.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub env: EnvSpec,
    pub queues: QueueParams,
    pub scaling: ScalingRegime,
    pub horizon: f64,
    /// Sorted readout times in [0, horizon].
    pub grid: Vec<f64>,
    /// Jobs present in each queue at time −warmup.
    pub initial_counts: Vec<u64>,
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "default_budget")]
    pub event_budget: f64,
    #[serde(default)]
    pub record_paths: bool,
}

fn default_budget() -> f64 {
    DEFAULT_EVENT_BUDGET
}

impl SimConfig {
    /// Empty start at time 0 with no warm-up.
    pub fn new(
        env: EnvSpec,
        queues: QueueParams,
        scaling: ScalingRegime,
        horizon: f64,
        grid: Vec<f64>,
        seed: u64,
        replications: usize,
    ) -> Self {
        let d = queues.d();
        Self {
            env,
            queues,
            scaling,
            horizon,
            grid,
            initial_counts: vec![0; d],
            warmup: 0.0,
            seed,
            replications,
            event_budget: DEFAULT_EVENT_BUDGET,
            record_paths: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scaling.validate()?;
        require_positive("horizon", self.horizon)?;
        require_nonnegative("warmup", self.warmup)?;
        require_positive("event_budget", self.event_budget)?;
        if self.replications == 0 {
            return Err(invalid("replications must be positive"));
        }
        if self.grid.is_empty() {
            return Err(invalid("grid must not be empty"));
        }
        if self.grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("grid must be sorted"));
        }
        if self.grid.iter().any(|&g| !(0.0..=self.horizon).contains(&g)) {
            return Err(invalid(format!("grid must lie in [0, {}]", self.horizon)));
        }
        if self.initial_counts.len() != self.queues.d() {
            return Err(invalid(format!(
                "initial_counts has {} entries for {} queues",
                self.initial_counts.len(),
                self.queues.d()
            )));
        }
        Ok(())
    }

    /// N·𝔼Λ·(warmup + horizon)·replications
    pub fn expected_events(&self) -> f64 {
        self.scaling.n_f64() * self.env.mean() * (self.warmup + self.horizon) * self.replications as f64
    }

    fn check_budget(&self) -> Result<()> {
        let events = self.expected_events();
        if events > self.event_budget {
            return Err(CoxqError::Resource(format!(
                "expected {events:e} arrivals exceed the event budget {:e}",
                self.event_budget
            )));
        }
        Ok(())
    }
}

/// Queue lengths per replication and grid time, stored flat as
/// `[replication][grid][queue]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    grid: Vec<f64>,
    d: usize,
    replications: usize,
    counts: Vec<u64>,
    /// Rate paths on the simulation clock, which starts at −warmup.
    realized_paths: Option<Vec<RatePath>>,
}

impl Trajectory {
    pub fn from_counts(grid: Vec<f64>, d: usize, replications: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != grid.len() * d * replications {
            return Err(invalid(format!(
                "{} counts for {} replications x {} grid points x {d} queues",
                counts.len(),
                replications,
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            d,
            replications,
            counts,
            realized_paths: None,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn replications(&self) -> usize {
        self.replications
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn realized_paths(&self) -> Option<&[RatePath]> {
        self.realized_paths.as_deref()
    }

    pub fn count(&self, rep: usize, k: usize, queue: usize) -> u64 {
        self.counts[(rep * self.grid.len() + k) * self.d + queue]
    }

    /// Counts of all queues for one replication at grid index `k`.
    pub fn state(&self, rep: usize, k: usize) -> &[u64] {
        let at = (rep * self.grid.len() + k) * self.d;
        &self.counts[at..at + self.d]
    }

    pub fn grid_index(&self, t: f64) -> Result<usize> {
        self.grid
            .iter()
            .position(|&g| (g - t).abs() <= GRID_TOL * t.abs().max(1.0))
            .ok_or_else(|| CoxqError::Range(format!("t = {t} is not a grid time")))
    }

    /// CSV with header `replication,time,queue,count`; queues are numbered from 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "replication,time,queue,count")?;
        for rep in 0..self.replications {
            for (k, t) in self.grid.iter().enumerate() {
                for (i, c) in self.state(rep, k).iter().enumerate() {
                    writeln!(out, "{rep},{t},{i},{c}")?;
                }
            }
        }
        Ok(())
    }
}

/// Sample moments of one grid time across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMoments {
    pub time: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub mean_se: Vec<f64>,
    pub variance_se: Vec<f64>,
    pub covariance_se: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub replications: usize,
    pub d: usize,
    pub grid: Vec<GridMoments>,
}

/// Unbiased mean, variance and covariance of the rows of `samples`, with
/// standard errors sd/√n of the corresponding per-replication terms.
pub fn sample_moments(time: f64, samples: &[Vec<f64>]) -> Result<GridMoments> {
    let n = samples.len();
    if n < 2 {
        return Err(CoxqError::InsufficientData(format!(
            "need at least 2 replications, got {n}"
        )));
    }
    let d = samples[0].len();
    if samples.iter().any(|row| row.len() != d) {
        return Err(invalid("ragged sample rows"));
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|r| r[i]).sum::<f64>() / nf).collect();
    let mut covariance = vec![vec![0.0; d]; d];
    let mut covariance_se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for k in i..d {
            let prods: Vec<f64> = samples.iter().map(|r| (r[i] - mean[i]) * (r[k] - mean[k])).collect();
            let sum: f64 = prods.iter().sum();
            let cov = sum / (nf - 1.0);
            let avg = sum / nf;
            let spread = prods.iter().map(|p| (p - avg) * (p - avg)).sum::<f64>() / (nf - 1.0);
            let se = (spread / nf).sqrt();
            covariance[i][k] = cov;
            covariance[k][i] = cov;
            covariance_se[i][k] = se;
            covariance_se[k][i] = se;
        }
    }
    let variance: Vec<f64> = (0..d).map(|i| covariance[i][i]).collect();
    Ok(GridMoments {
        time,
        mean_se: variance.iter().map(|v| (v / nf).sqrt()).collect(),
        variance_se: (0..d).map(|i| covariance_se[i][i]).collect(),
        mean,
        variance,
        covariance,
        covariance_se,
    })
}

pub fn estimate_moments(traj: &Trajectory) -> Result<MomentReport> {
    let grid = traj
        .grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let rows: Vec<Vec<f64>> = (0..traj.replications)
                .map(|rep| traj.state(rep, k).iter().map(|&c| c as f64).collect())
                .collect();
            sample_moments(t, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentReport {
        replications: traj.replications,
        d: traj.d,
        grid,
    })
}

/// N^{β/2}(M/N − center) per replication at grid time t.
pub fn normalized_endpoint(
    traj: &Trajectory,
    scaling: &ScalingRegime,
    center: &[f64],
    t: f64,
) -> Result<Vec<Vec<f64>>> {
    if center.len() != traj.d {
        return Err(invalid(format!(
            "center has {} entries for {} queues",
            center.len(),
            traj.d
        )));
    }
    let k = traj.grid_index(t)?;
    let n = scaling.n_f64();
    let factor = n.powf(0.5 * scaling.beta());
    Ok((0..traj.replications)
        .map(|rep| {
            traj.state(rep, k)
                .iter()
                .zip(center)
                .map(|(&c, &x)| factor * (c as f64 / n - x))
                .collect()
        })
        .collect())
}

/// Everything a replication needs, prepared once.
struct Plan<'a> {
    config: &'a SimConfig,
    sampler: RateSampler,
    mu: Vec<f64>,
    n: f64,
    slot: f64,
    /// grid on the simulation clock
    clock_grid: Vec<f64>,
    /// arrivals after this time are never observed
    last_readout: f64,
    /// P(slot non-empty) when the sparse loop is used
    sparse: Option<f64>,
}

impl<'a> Plan<'a> {
    fn new(config: &'a SimConfig) -> Self {
        let n = config.scaling.n_f64();
        let slot = config.scaling.slot_length();
        let clock_grid: Vec<f64> = config.grid.iter().map(|g| g + config.warmup).collect();
        let last_readout = *clock_grid.last().expect("validated grid");
        let p_nonempty = config.env.prob_nonempty_slot(n * slot);
        let sparse = (!config.record_paths && p_nonempty < SPARSE_THRESHOLD).then_some(p_nonempty);
        Self {
            config,
            sampler: config.env.sampler(),
            mu: config.queues.mu().to_vec(),
            n,
            slot,
            clock_grid,
            last_readout,
            sparse,
        }
    }

    /// Calls `present(queue, from, to)` for every job's stay in every queue.
    /// Returns the slot rates when paths are recorded.
    fn run<F: FnMut(usize, f64, f64)>(&self, rng: &mut RandomStream, mut present: F) -> Option<Vec<f64>> {
        for (i, (&m, &count)) in self.mu.iter().zip(&self.config.initial_counts).enumerate() {
            for _ in 0..count {
                let stay: f64 = Exp1.sample(rng);
                present(i, 0.0, stay / m);
            }
        }
        let mut arrivals = |start: f64, count: u64, rng: &mut RandomStream| {
            for _ in 0..count {
                let s = start + self.slot * open01(rng);
                for (i, &m) in self.mu.iter().enumerate() {
                    let stay: f64 = Exp1.sample(rng);
                    present(i, s, s + stay / m);
                }
            }
        };
        let observed = full_slots(self.last_readout, self.slot) + 1;
        match self.sparse {
            Some(p) => {
                if p <= 0.0 {
                    return None;
                }
                let log_empty = (-p).ln_1p();
                let mut j: u64 = 0;
                loop {
                    // empty slots before the next busy one
                    let gap = if p >= 1.0 {
                        0.0
                    } else {
                        (open01(rng).ln() / log_empty).floor()
                    };
                    let next = j as f64 + gap;
                    if next >= observed as f64 {
                        return None;
                    }
                    let slot_index = next as u64;
                    let count = self.config.env.sample_nonempty_slot_count(self.n * self.slot, rng);
                    arrivals(slot_index as f64 * self.slot, count, rng);
                    j = slot_index + 1;
                }
            }
            None => {
                let total = slot_count(self.config.warmup + self.config.horizon, self.slot);
                let mut rates = self.config.record_paths.then(|| Vec::with_capacity(total));
                for j in 0..total {
                    let rate = self.sampler.sample(rng);
                    if let Some(r) = rates.as_mut() {
                        r.push(rate);
                    } else if j >= observed {
                        break;
                    }
                    if j < observed {
                        let count = poisson(self.n * rate * self.slot, rng);
                        arrivals(j as f64 * self.slot, count, rng);
                    }
                }
                rates
            }
        }
    }

    fn replicate(&self, rep: usize) -> Result<(Vec<u64>, Option<RatePath>)> {
        let d = self.mu.len();
        let g = self.clock_grid.len();
        let mut diff = vec![0i64; d * (g + 1)];
        let mut rng = RandomStream::substream(self.config.seed, rep as u64);
        let grid = &self.clock_grid;
        let rates = self.run(&mut rng, |i, from, to| {
            let lo = grid.partition_point(|&x| x < from);
            let hi = grid.partition_point(|&x| x < to);
            if lo < hi {
                diff[i * (g + 1) + lo] += 1;
                diff[i * (g + 1) + hi] -= 1;
            }
        });
        let mut counts = vec![0u64; g * d];
        for i in 0..d {
            let mut level = 0i64;
            for k in 0..g {
                level += diff[i * (g + 1) + k];
                counts[k * d + i] = level as u64;
            }
        }
        let path = rates
            .map(|r| RatePath::new(self.slot, r, self.config.warmup + self.config.horizon))
            .transpose()?;
        Ok((counts, path))
    }
}

pub fn simulate(config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    config.check_budget()?;
    let plan = Plan::new(config);
    let reps: Vec<(Vec<u64>, Option<RatePath>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| plan.replicate(rep))
        .collect::<Result<_>>()?;
    let mut counts = Vec::with_capacity(config.replications * config.grid.len() * config.queues.d());
    let mut paths = Vec::new();
    for (c, p) in reps {
        counts.extend_from_slice(&c);
        paths.extend(p);
    }
    Ok(Trajectory {
        grid: config.grid.clone(),
        d: config.queues.d(),
        replications: config.replications,
        counts,
        realized_paths: config.record_paths.then_some(paths),
    })
}

/// One job's stay in one queue, on the simulation clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stay {
    pub queue: usize,
    pub arrival: f64,
    pub departure: f64,
}

/// Every job stay of replication `rep`, drawn from the same random stream as
/// [`simulate`] uses for that replication.
pub fn event_log(config: &SimConfig, rep: usize) -> Result<Vec<Stay>> {
    config.validate()?;
    let plan = Plan::new(config);
    let mut rng = RandomStream::substream(config.seed, rep as u64);
    let mut stays = Vec::new();
    plan.run(&mut rng, |queue, arrival, departure| {
        stays.push(Stay {
            queue,
            arrival,
            departure,
        })
    });
    Ok(stays)
}

/// Warm-up from empty after which the queues are stationary up to e^{−40}:
/// 40 mean service times of the slowest queue, rounded up to whole slots.
pub fn stationary_warmup(queues: &QueueParams, scaling: &ScalingRegime) -> f64 {
    let slot = scaling.slot_length();
    let slowest = queues.mu().iter().copied().fold(f64::INFINITY, f64::min);
    (STATIONARY_HORIZON_MEANS / (slowest * slot)).ceil() * slot
}

/// Independent draws of the stationary queue-length vector, read at a slot
/// boundary. Returned as a trajectory on the single grid time 0.
///
/// For d = 1 the count is drawn as Poisson(N·κ) with
/// κ = Σ_{k<K} Λ_k r_{Δ_N} p_{Δ_N}^k and K = ⌈40/(μΔ_N)⌉, unless slots are so
/// short that simulating the arrivals is cheaper. Otherwise the system is run
/// from empty over at least 40/min μ_i, rounded up to whole slots.
pub fn sample_stationary(config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let slot = config.scaling.slot_length();
    let n = config.scaling.n_f64();
    let d = config.queues.d();
    let warmup = stationary_warmup(&config.queues, &config.scaling);
    if d == 1 && n * config.env.mean() * slot >= 1.0 {
        let mu = config.queues.mu()[0];
        let sc = SurvivalConstants::new(mu, slot)?;
        let k_max = (warmup / slot).round() as usize;
        let sampler = config.env.sampler();
        let counts = (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let mut rng = RandomStream::substream(config.seed, rep as u64);
                let mut kappa = 0.0;
                let mut weight = sc.r;
                for _ in 0..k_max {
                    kappa += sampler.sample(&mut rng) * weight;
                    weight *= sc.p;
                }
                poisson(n * kappa, &mut rng)
            })
            .collect();
        return Trajectory::from_counts(vec![0.0], 1, config.replications, counts);
    }
    let warm = SimConfig {
        grid: vec![0.0],
        initial_counts: vec![0; d],
        warmup,
        record_paths: false,
        ..config.clone()
    };
    simulate(&warm)
}
