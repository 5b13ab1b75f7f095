//! Infinite-server queues driven by a mixed-Poisson arrival stream whose rate
//! is resampled at fixed intervals.
//!
//! [`env`] describes the random environment, [`analytic`] the closed-form
//! moments and limits, [`sim`] the event-level simulator and [`ldp`] the
//! large-deviations rates together with importance-sampling estimators.

pub mod analytic;
pub mod env;
pub mod error;
pub mod ldp;
pub mod quad;
pub mod rng;
pub mod sim;

pub use analytic::{
    clt_sigma2, fclt_covariance, fluid_limit, scaled_covariance, scaled_variance, stationary_correlation,
    stationary_mean, stationary_pgf, stationary_variance, transient_moments, LimitCovariance, QueueParams,
    ScalingBranch,
};
pub use env::{cumulative_rate, sample_rate_path, EnvFamily, EnvSpec, RatePath, ScalingRegime};
pub use error::{CoxqError, Result};
pub use ldp::{
    classify_regime, integrated_log_mgf, is_estimate_queue_tail, is_estimate_tail, poisson_tail, rate, rate_fast,
    rate_intermediate, rate_multivariate, rate_slow, rate_slow_bounded, LdpRegime, MultiRateQuery, RateQuery,
    RateResult, Speed, TailEstimate,
};
pub use rng::RandomStream;
pub use sim::{
    estimate_moments, normalized_endpoint, sample_stationary, simulate, stationary_warmup, GridMoments, MomentReport,
    SimConfig, Trajectory,
};
