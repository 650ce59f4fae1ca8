use rand::Rng;
use rayon::prelude::*;

use super::{check_failures, replicate_rng, InferenceMethod, InferenceOptions, IntervalEstimate};
use crate::error::Result;
use crate::estimators::{estimate, EstimatorSpec, PointEstimate};
use crate::exposure::ExposurePanel;
use crate::numeric;

/// Sorted replicate estimates from an outcome-unit bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    pub point: PointEstimate,
    pub draws: Vec<f64>,
    pub failed: usize,
    pub replications: usize,
    pub seed: u64,
}

impl BootstrapDistribution {
    /// `[q_{α/2}, q_{1−α/2}]` of the replicate distribution.
    pub fn percentile_interval(&self, level: f64) -> (f64, f64) {
        let alpha = 1.0 - level;
        (
            numeric::quantile_sorted(&self.draws, alpha / 2.0),
            numeric::quantile_sorted(&self.draws, 1.0 - alpha / 2.0),
        )
    }

    pub fn to_interval(&self, level: f64) -> IntervalEstimate {
        let (ci_low, ci_high) = self.percentile_interval(level);
        IntervalEstimate {
            point: self.point.clone(),
            ci_low,
            ci_high,
            level,
            method: InferenceMethod::Bootstrap,
            replications: self.replications,
            seed: self.seed,
            se: Some(numeric::sample_sd(&self.draws)),
            failed_replications: self.failed,
        }
    }
}

/// Resamples panel rows with replacement and re-runs the estimator.
pub fn bootstrap_distribution(
    panel: &ExposurePanel,
    spec: &EstimatorSpec,
    replications: usize,
    seed: u64,
) -> Result<BootstrapDistribution> {
    let point = estimate(panel, spec)?;
    let n = panel.len();
    let results: Vec<Option<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            estimate(&panel.resample_columns(&idx), spec)
                .ok()
                .map(|e| e.tau_hat)
        })
        .collect();
    let mut draws: Vec<f64> = results.iter().flatten().copied().collect();
    let failed = replications - draws.len();
    check_failures(failed, replications)?;
    numeric::sort_floats(&mut draws);
    Ok(BootstrapDistribution {
        point,
        draws,
        failed,
        replications,
        seed,
    })
}

pub fn bootstrap_ci(
    panel: &ExposurePanel,
    spec: &EstimatorSpec,
    options: &InferenceOptions,
) -> Result<IntervalEstimate> {
    options.validate()?;
    Ok(bootstrap_distribution(panel, spec, options.replications, options.seed)?
        .to_interval(options.level))
}
