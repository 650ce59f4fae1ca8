//! Monte Carlo randomization inference.
//!
//! Each draw re-randomizes every buyer in the graph from the declared
//! design, recomputes exposures, and imputes outcomes under the fitted
//! constant-effect model: the zero-effect outcome `Y_i − τ̂ h_i` plus
//! `τ̂ h*_i`. The estimator is re-run on the imputed panel; the standard
//! deviation of the draws gives a symmetric normal interval around τ̂.

use rand::Rng;
use rayon::prelude::*;

use super::{check_failures, normal_interval, replicate_rng, InferenceMethod, InferenceOptions, IntervalEstimate};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorSpec};
use crate::exposure::{unit_exposure, ExposurePanel};
use crate::graph::BipartiteGraph;
use crate::numeric;

/// Estimates from re-randomized assignments, in replicate order. Failed
/// draws are `None`.
pub fn randomization_draws(
    graph: &BipartiteGraph,
    panel: &ExposurePanel,
    spec: &EstimatorSpec,
    tau_hat: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let p = panel.design().probability;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Design(format!(
            "randomization needs a treatment probability in (0,1), got {p}"
        )));
    }
    if panel.graph_index().iter().any(|&i| i >= graph.n_outcomes()) {
        return Err(Error::InvalidArgument(
            "panel does not index into this graph".into(),
        ));
    }
    let m = graph.n_diversion();
    let baseline: Vec<f64> = panel
        .y_in()
        .iter()
        .zip(panel.h())
        .map(|(y, h)| y - tau_hat * h)
        .collect();

    Ok((0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let z: Vec<bool> = (0..m).map(|_| rng.random_bool(p)).collect();
            let h: Vec<f64> = panel
                .graph_index()
                .iter()
                .map(|&g| unit_exposure(graph, g, &z))
                .collect();
            let y: Vec<f64> = baseline.iter().zip(&h).map(|(b, h)| b + tau_hat * h).collect();
            estimate(&panel.columns_only(h, y), spec).ok().map(|e| e.tau_hat)
        })
        .collect())
}

pub fn randomization_ci(
    graph: &BipartiteGraph,
    panel: &ExposurePanel,
    spec: &EstimatorSpec,
    options: &InferenceOptions,
) -> Result<IntervalEstimate> {
    options.validate()?;
    let point = estimate(panel, spec)?;
    let results = randomization_draws(
        graph,
        panel,
        spec,
        point.tau_hat,
        options.replications,
        options.seed,
    )?;
    let draws: Vec<f64> = results.into_iter().flatten().collect();
    let failed = options.replications - draws.len();
    check_failures(failed, options.replications)?;
    let sd = numeric::sample_sd(&draws);
    let (ci_low, ci_high) = normal_interval(point.tau_hat, sd, options.level);
    Ok(IntervalEstimate {
        point,
        ci_low,
        ci_high,
        level: options.level,
        method: InferenceMethod::Randomization,
        replications: options.replications,
        seed: options.seed,
        se: Some(sd),
        failed_replications: failed,
    })
}
