//! Interval estimation around the point estimators.
//!
//! Every resampling method is a pure function of `(inputs, seed,
//! replications)`: replicate `r` draws from its own ChaCha stream keyed by
//! `(seed, r)`, so results do not depend on thread scheduling.

mod bootstrap;
mod pairwise;
mod randomization;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, PointEstimate};
use crate::exposure::ExposurePanel;
use crate::graph::BipartiteGraph;
use crate::numeric;

pub use bootstrap::{bootstrap_ci, bootstrap_distribution, BootstrapDistribution};
pub use pairwise::{
    pairwise_ci, pairwise_variance, DegeneracyPolicy, ExposureMomentTable, PairwiseOptions,
    PairwiseVariance,
};
pub use randomization::{randomization_ci, randomization_draws};

pub const MIN_REPLICATIONS: usize = 200;
pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InferenceMethod {
    /// Percentile interval from resampling outcome units.
    #[serde(rename = "BOOTSTRAP")]
    Bootstrap,
    /// Normal interval with the sd of re-randomized estimates.
    #[serde(rename = "RANDOMIZATION")]
    Randomization,
    /// Normal interval with the pairwise design-based variance estimate.
    #[serde(rename = "PAIRWISE_VAR")]
    PairwiseVar,
    /// Classical OLS standard error; regression estimators only.
    #[serde(rename = "ANALYTIC")]
    Analytic,
}

impl InferenceMethod {
    pub fn label(self) -> &'static str {
        match self {
            InferenceMethod::Bootstrap => "BOOTSTRAP",
            InferenceMethod::Randomization => "RANDOMIZATION",
            InferenceMethod::PairwiseVar => "PAIRWISE_VAR",
            InferenceMethod::Analytic => "ANALYTIC",
        }
    }
}

impl fmt::Display for InferenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InferenceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bootstrap" => Ok(InferenceMethod::Bootstrap),
            "randomization" => Ok(InferenceMethod::Randomization),
            "pairwise" | "pairwise_var" => Ok(InferenceMethod::PairwiseVar),
            "analytic" | "ols" => Ok(InferenceMethod::Analytic),
            other => Err(Error::InvalidArgument(format!(
                "unknown inference method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    pub level: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            level: DEFAULT_LEVEL,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
        }
    }
}

impl InferenceOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence level {} outside (0,1)",
                self.level
            )));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::InvalidArgument(format!(
                "at least {MIN_REPLICATIONS} replications required, got {}",
                self.replications
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: PointEstimate,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub method: InferenceMethod,
    pub replications: usize,
    pub seed: u64,
    /// Standard error behind normal-theory intervals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    /// Replicates that failed and were left out.
    pub failed_replications: usize,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rejects runs where more than 1% of replicates failed.
fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed * 100 > total {
        return Err(Error::ReplicateFailures { failed, total });
    }
    Ok(())
}

fn normal_interval(point: f64, se: f64, level: f64) -> (f64, f64) {
    let z = numeric::two_sided_z(level);
    (point - z * se, point + z * se)
}

/// Normal-theory interval from the classical OLS standard error.
pub fn analytic_ci(panel: &ExposurePanel, kind: EstimatorKind, level: f64) -> Result<IntervalEstimate> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} outside (0,1)")));
    }
    let point = match kind {
        EstimatorKind::Reg => crate::estimators::regression_estimate(panel, false)?,
        EstimatorKind::RegPre => crate::estimators::regression_estimate(panel, true)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "analytic intervals exist only for regression estimators, not {other}"
            )))
        }
    };
    let se = point.diagnostics["se_tau"];
    let (ci_low, ci_high) = normal_interval(point.tau_hat, se, level);
    Ok(IntervalEstimate {
        point,
        ci_low,
        ci_high,
        level,
        method: InferenceMethod::Analytic,
        replications: 0,
        seed: 0,
        se: Some(se),
        failed_replications: 0,
    })
}

/// Dispatches one estimator × method pair.
pub fn interval(
    graph: &BipartiteGraph,
    panel: &ExposurePanel,
    spec: &crate::estimators::EstimatorSpec,
    method: InferenceMethod,
    options: &InferenceOptions,
    pairwise: &PairwiseOptions,
) -> Result<IntervalEstimate> {
    match method {
        InferenceMethod::Bootstrap => bootstrap_ci(panel, spec, options),
        InferenceMethod::Randomization => randomization_ci(graph, panel, spec, options),
        InferenceMethod::PairwiseVar => {
            if spec.kind != EstimatorKind::Erl {
                return Err(Error::InvalidArgument(format!(
                    "pairwise variance is defined for ERL only, not {}",
                    spec.kind
                )));
            }
            pairwise_ci(graph, panel, options.level, pairwise).map(|(ci, _)| ci)
        }
        InferenceMethod::Analytic => analytic_ci(panel, spec.kind, options.level),
    }
}
