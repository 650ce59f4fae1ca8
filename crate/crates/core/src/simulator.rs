//! Synthetic bipartite experiments with known treatment effects.
//!
//! A simulated population is a view multigraph plus per-seller intercepts
//! `α_i`, slopes `β_i` and a pre-period covariate. The population is drawn
//! from one random stream and the assignment (with outcome noise) from
//! another, so re-randomizing leaves the population and its truth intact.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::exposure::{design_moments, exposure_into, ExposureDesign, ExposurePanel};
use crate::graph::{build_graph, BipartiteGraph, GraphBuildConfig, Weighting};
use crate::inference::{self, replicate_rng, InferenceMethod, InferenceOptions, PairwiseOptions};
use crate::ingest::{
    write_assignments, write_events, write_outcomes, AssignmentTable, DesignFile, InteractionEvent,
    Outcome, OutcomeTable, VariantSpec,
};
use crate::numeric;

pub const TREATMENT_LABEL: &str = "On";
pub const CONTROL_LABEL: &str = "Off";
pub const VIEW_KIND: &str = "view";
pub const FAVORITE_KIND: &str = "favorite";

const POPULATION_STREAM: u64 = 0;
const ASSIGNMENT_STREAM: u64 = 1;
/// Validation replicate `r` uses stream `VALIDATION_STREAM + r`.
const VALIDATION_STREAM: u64 = 1 << 32;
const TWO_WEEKS_MS: i64 = 14 * 24 * 3600 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DegreeDist {
    /// Every seller receives exactly `k` view events.
    Fixed { k: usize },
    /// View counts on `1..=k_max` with `P(k) ∝ k^-s`.
    Zipf { s: f64, k_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalParams {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Homoskedastic,
    /// Noise sd grows with exposure: `noise_sd · (0.5 + H_i)`.
    ExposureScaled,
}

/// Response shape. Ground truth stays `mean(β)` under every mode; the
/// violations are departures an estimator should not be credited for.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Violation {
    /// `Y = α + β H`
    #[default]
    None,
    /// `Y = α + β H + γ H²`
    Quadratic { gamma: f64 },
    /// `Y = α + β 1[H ≥ t]`
    Threshold { t: f64 },
}

/// Treatment-dependent favorite events layered on top of views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FavoriteChannel {
    /// Chance a control buyer's view also produces a favorite.
    pub rate_control: f64,
    /// Chance a treated buyer's view also produces a favorite.
    pub rate_treated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub degree_dist: DegreeDist,
    pub p_treat: f64,
    pub alpha_dist: NormalParams,
    pub beta_dist: NormalParams,
    pub noise_sd: f64,
    pub noise: NoiseMode,
    /// Correlation between `y_pre` and `α_i`.
    pub pre_corr: f64,
    pub violation: Violation,
    pub seed: u64,
    /// Seed for the assignment and noise stream; `seed` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub favorites: Option<FavoriteChannel>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 200,
            n: 150,
            degree_dist: DegreeDist::Zipf { s: 2.0, k_max: 20 },
            p_treat: 0.5,
            alpha_dist: NormalParams { mean: 0.0, sd: 1.0 },
            beta_dist: NormalParams { mean: 1.0, sd: 0.5 },
            noise_sd: 1.0,
            noise: NoiseMode::Homoskedastic,
            pre_corr: 0.0,
            violation: Violation::None,
            seed: 0,
            assignment_seed: None,
            favorites: None,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be at least 1".into());
        }
        if self.m > u32::MAX as usize {
            return bad(format!("m = {} exceeds the supported buyer count", self.m));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return bad(format!("p_treat {} outside (0,1)", self.p_treat));
        }
        if !(0.0..=1.0).contains(&self.pre_corr) {
            return bad(format!("pre_corr {} outside [0,1]", self.pre_corr));
        }
        for (name, v) in [
            ("alpha_dist.sd", self.alpha_dist.sd),
            ("beta_dist.sd", self.beta_dist.sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !self.alpha_dist.mean.is_finite() || !self.beta_dist.mean.is_finite() {
            return bad("distribution means must be finite".into());
        }
        match self.degree_dist {
            DegreeDist::Fixed { k } if k > 1_000_000 => return bad(format!("degree {k} too large")),
            DegreeDist::Zipf { s, k_max } if !(s > 0.0 && s.is_finite()) || k_max == 0 || k_max > 1_000_000 => {
                return bad("zipf needs s > 0 and 1 <= k_max <= 1e6".into())
            }
            _ => {}
        }
        match self.violation {
            Violation::Quadratic { gamma } if !gamma.is_finite() => return bad("gamma must be finite".into()),
            Violation::Threshold { t } if !t.is_finite() => return bad("threshold must be finite".into()),
            _ => {}
        }
        if let Some(f) = self.favorites {
            if !(0.0..=1.0).contains(&f.rate_control) || !(0.0..=1.0).contains(&f.rate_treated) {
                return bad("favorite rates must lie in [0,1]".into());
            }
        }
        Ok(())
    }

    fn assignment_seed(&self) -> u64 {
        self.assignment_seed.unwrap_or(self.seed)
    }
}

/// Graph and per-seller parameters; everything that does not depend on
/// the assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub buyer_ids: Vec<String>,
    /// Emitted sellers in id order; isolated sellers are left out.
    pub seller_ids: Vec<String>,
    /// Per emitted seller, `(buyer index, timestamp)` of each view.
    pub views: Vec<Vec<(u32, i64)>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub y_pre: Vec<f64>,
    pub isolated_sellers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub true_tau: f64,
    pub seller_ids: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// SHA-256 over the canonical view multigraph.
    pub graph_seed_digest: String,
    pub isolated_sellers: usize,
}

#[derive(Debug, Clone)]
pub struct SimExperiment {
    pub events: Vec<InteractionEvent>,
    pub assignments: AssignmentTable,
    pub outcomes: OutcomeTable,
    /// Realized view exposure per emitted seller, in `truth.seller_ids` order.
    pub exposure: Vec<f64>,
    pub truth: SimTruth,
}

fn id(prefix: char, i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn draw_population(config: &SimConfig) -> Result<Population> {
    config.validate()?;
    let mut rng = replicate_rng(config.seed, POPULATION_STREAM);
    let zipf = match config.degree_dist {
        DegreeDist::Zipf { s, k_max } => Some(
            Zipf::new(k_max as f64, s).map_err(|e| Error::InvalidArgument(format!("zipf: {e}")))?,
        ),
        DegreeDist::Fixed { .. } => None,
    };
    let buyer_ids = (0..config.m).map(|r| id('b', r, config.m)).collect();
    let mut pop = Population {
        buyer_ids,
        seller_ids: Vec::new(),
        views: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
        y_pre: Vec::new(),
        isolated_sellers: 0,
    };
    let rho = config.pre_corr;
    let (a, b) = (config.alpha_dist, config.beta_dist);
    for i in 0..config.n {
        let k = match (config.degree_dist, &zipf) {
            (DegreeDist::Fixed { k }, _) => k,
            (_, Some(z)) => z.sample(&mut rng) as usize,
            _ => unreachable!(),
        };
        let views: Vec<(u32, i64)> = (0..k)
            .map(|_| {
                (
                    rng.random_range(0..config.m) as u32,
                    rng.random_range(0..TWO_WEEKS_MS),
                )
            })
            .collect();
        let z_alpha = normal(&mut rng);
        let z_beta = normal(&mut rng);
        let xi = normal(&mut rng);
        if views.is_empty() {
            pop.isolated_sellers += 1;
            continue;
        }
        pop.seller_ids.push(id('s', i, config.n));
        pop.views.push(views);
        pop.alpha.push(a.mean + a.sd * z_alpha);
        pop.beta.push(b.mean + b.sd * z_beta);
        pop.y_pre
            .push(a.mean + a.sd * (rho * z_alpha + (1.0 - rho * rho).sqrt() * xi));
    }
    if pop.isolated_sellers > 0 {
        log::warn!("{} isolated sellers omitted from outcomes", pop.isolated_sellers);
    }
    Ok(pop)
}

impl Population {
    /// Count-proportional view exposure for each emitted seller.
    pub fn exposure(&self, z: &[bool]) -> Vec<f64> {
        self.views
            .iter()
            .map(|v| v.iter().filter(|(r, _)| z[*r as usize]).count() as f64 / v.len() as f64)
            .collect()
    }

    /// Canonical digest of the view multigraph: sorted `(seller, buyer, count)`.
    pub fn graph_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (seller, views) in self.seller_ids.iter().zip(&self.views) {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for (r, _) in views {
                *counts.entry(*r).or_default() += 1;
            }
            for (r, c) in counts {
                hasher.update(format!("{seller},{},{c}\n", self.buyer_ids[r as usize]));
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn true_tau(&self) -> f64 {
        numeric::mean(self.beta.iter().copied())
    }

    fn response(&self, i: usize, h: f64, config: &SimConfig, rng: &mut ChaCha8Rng) -> f64 {
        let (alpha, beta) = (self.alpha[i], self.beta[i]);
        let mean = match config.violation {
            Violation::None => alpha + beta * h,
            Violation::Quadratic { gamma } => alpha + beta * h + gamma * h * h,
            Violation::Threshold { t } => alpha + if h >= t { beta } else { 0.0 },
        };
        let sd = match config.noise {
            NoiseMode::Homoskedastic => config.noise_sd,
            NoiseMode::ExposureScaled => config.noise_sd * (0.5 + h),
        };
        mean + sd * normal(rng)
    }

    /// Outcomes for one assignment, drawing noise from `rng`.
    pub fn outcomes(&self, h: &[f64], config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        h.iter()
            .enumerate()
            .map(|(i, &h)| self.response(i, h, config, rng))
            .collect()
    }
}

fn design(p: f64) -> DesignFile {
    DesignFile {
        variants: vec![
            VariantSpec { label: CONTROL_LABEL.into(), probability: 1.0 - p, control: true },
            VariantSpec { label: TREATMENT_LABEL.into(), probability: p, control: false },
        ],
    }
}

pub fn simulate_experiment(config: &SimConfig) -> Result<SimExperiment> {
    let pop = draw_population(config)?;
    let mut rng = replicate_rng(config.assignment_seed(), ASSIGNMENT_STREAM);
    let z: Vec<bool> = (0..config.m).map(|_| rng.random_bool(config.p_treat)).collect();
    let h = pop.exposure(&z);
    let y = pop.outcomes(&h, config, &mut rng);

    let mut assignments = AssignmentTable::new(design(config.p_treat))?;
    for (buyer, &zr) in pop.buyer_ids.iter().zip(&z) {
        assignments.assign(buyer, if zr { TREATMENT_LABEL } else { CONTROL_LABEL })?;
    }

    let mut events = Vec::new();
    for (seller, views) in pop.seller_ids.iter().zip(&pop.views) {
        for &(r, ts) in views {
            events.push(InteractionEvent {
                buyer_id: pop.buyer_ids[r as usize].clone(),
                seller_id: seller.clone(),
                event_kind: VIEW_KIND.into(),
                timestamp_ms: ts,
            });
            if let Some(fav) = config.favorites {
                let rate = if z[r as usize] { fav.rate_treated } else { fav.rate_control };
                if rng.random_bool(rate) {
                    events.push(InteractionEvent {
                        buyer_id: pop.buyer_ids[r as usize].clone(),
                        seller_id: seller.clone(),
                        event_kind: FAVORITE_KIND.into(),
                        timestamp_ms: ts + rng.random_range(1..60_000),
                    });
                }
            }
        }
    }

    let mut outcomes = OutcomeTable::new(true);
    for (i, seller) in pop.seller_ids.iter().enumerate() {
        outcomes.insert(seller, Outcome { y_in: y[i], y_pre: Some(pop.y_pre[i]) })?;
    }
    let truth = SimTruth {
        true_tau: pop.true_tau(),
        graph_seed_digest: pop.graph_digest(),
        isolated_sellers: pop.isolated_sellers,
        seller_ids: pop.seller_ids,
        alpha: pop.alpha,
        beta: pop.beta,
    };
    Ok(SimExperiment { events, assignments, outcomes, exposure: h, truth })
}

/// `truth.json`: ground truth, config echo and file digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema: String,
    pub true_tau: f64,
    pub n_sellers: usize,
    pub isolated_sellers: usize,
    pub graph_seed_digest: String,
    pub config: SimConfig,
    pub digests: BTreeMap<String, String>,
    pub seller_ids: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

pub const TRUTH_SCHEMA: &str = "sellside.truth/v1";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `events.csv`, `assignments.csv`, `assignments.design.json`,
/// `outcomes.csv` and `truth.json` into `dir`.
pub fn write_experiment(dir: &Path, config: &SimConfig, sim: &SimExperiment) -> Result<TruthFile> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |e| Error::io(dir, e);
    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();

    let mut buf = Vec::new();
    write_events(&mut buf, &sim.events).map_err(io)?;
    files.push(("events.csv", buf));
    let mut buf = Vec::new();
    write_assignments(&mut buf, &sim.assignments).map_err(io)?;
    files.push(("assignments.csv", buf));
    let mut buf = serde_json::to_vec_pretty(&sim.assignments.design())?;
    buf.push(b'\n');
    files.push(("assignments.design.json", buf));
    let mut buf = Vec::new();
    write_outcomes(&mut buf, &sim.outcomes).map_err(io)?;
    files.push(("outcomes.csv", buf));

    let mut digests = BTreeMap::new();
    for (name, bytes) in &files {
        write_file(dir, name, bytes)?;
        digests.insert(name.to_string(), sha256_hex(bytes));
    }
    let truth = TruthFile {
        schema: TRUTH_SCHEMA.into(),
        true_tau: sim.truth.true_tau,
        n_sellers: sim.truth.seller_ids.len(),
        isolated_sellers: sim.truth.isolated_sellers,
        graph_seed_digest: sim.truth.graph_seed_digest.clone(),
        config: config.clone(),
        digests,
        seller_ids: sim.truth.seller_ids.clone(),
        alpha: sim.truth.alpha.clone(),
        beta: sim.truth.beta.clone(),
    };
    let mut buf = serde_json::to_vec_pretty(&truth)?;
    buf.push(b'\n');
    write_file(dir, "truth.json", &buf)?;
    Ok(truth)
}

/// One interval draw, or the error message that replaced it.
type Draw = std::result::Result<(f64, f64, f64), String>;

/// What a validation run estimates and how.
#[derive(Debug, Clone)]
pub struct ValidationPlan {
    pub estimators: Vec<EstimatorSpec>,
    pub methods: Vec<InferenceMethod>,
    pub sim_replications: usize,
    pub inference: InferenceOptions,
    pub pairwise: PairwiseOptions,
}

pub const MIN_SIM_REPLICATIONS: usize = 100;

/// Monte Carlo summary for one estimator × method pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub estimator: String,
    pub method: String,
    pub replicates: usize,
    pub failures: usize,
    pub true_tau: f64,
    pub mean_tau_hat: f64,
    pub bias: f64,
    pub mc_variance: f64,
    /// `sqrt(mc_variance / successes)`, the standard error of the bias.
    pub mc_se: f64,
    pub median_ci_width: f64,
    pub coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTable {
    pub rows: Vec<ValidationRow>,
    pub true_tau: f64,
    pub n_units: usize,
    /// Per replicate, per row: `(τ̂, ci_low, ci_high)` or `None` on failure.
    pub draws: Vec<Vec<Option<(f64, f64, f64)>>>,
}

impl ValidationTable {
    pub fn row(&self, estimator: &str, method: &str) -> Option<&ValidationRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.method == method)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "estimator", "method", "replicates", "failures", "true_tau", "mean_tau_hat", "bias",
            "mc_variance", "mc_se", "median_ci_width", "coverage", "first_error",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.estimator.clone(),
                r.method.clone(),
                r.replicates.to_string(),
                r.failures.to_string(),
                r.true_tau.to_string(),
                r.mean_tau_hat.to_string(),
                r.bias.to_string(),
                r.mc_variance.to_string(),
                r.mc_se.to_string(),
                r.median_ci_width.to_string(),
                r.coverage.to_string(),
                r.first_error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("validation table", e))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv write failed: {e}"))
}

impl fmt::Display for ValidationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "true_tau = {:.6}, {} outcome units", self.true_tau, self.n_units)?;
        writeln!(
            f,
            "{:<8} {:<14} {:>10} {:>10} {:>12} {:>10} {:>9} {:>6}",
            "est", "method", "mean", "bias", "mc_var", "ci_width", "coverage", "fail"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:<14} {:>10.5} {:>10.5} {:>12.3e} {:>10.5} {:>9.3} {:>6}",
                r.estimator, r.method, r.mean_tau_hat, r.bias, r.mc_variance, r.median_ci_width, r.coverage, r.failures
            )?;
        }
        Ok(())
    }
}

/// Re-randomizes the simulated experiment `sim_replications` times on a
/// fixed population and summarizes every estimator × method pair.
/// Replicate errors are counted per pair, never fatal.
pub fn run_validation(config: &SimConfig, plan: &ValidationPlan) -> Result<ValidationTable> {
    if plan.estimators.is_empty() || plan.methods.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one estimator and one method are required".into(),
        ));
    }
    if plan.sim_replications < MIN_SIM_REPLICATIONS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_SIM_REPLICATIONS} simulation replicates required, got {}",
            plan.sim_replications
        )));
    }
    plan.inference.validate()?;
    let pop = draw_population(config)?;
    if pop.seller_ids.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let true_tau = pop.true_tau();

    // The analysis graph is built through the regular pipeline; every
    // buyer is assigned so none are dropped.
    let mut table = AssignmentTable::new(design(config.p_treat))?;
    for buyer in &pop.buyer_ids {
        table.assign(buyer, CONTROL_LABEL)?;
    }
    let events: Vec<InteractionEvent> = pop
        .seller_ids
        .iter()
        .zip(&pop.views)
        .flat_map(|(s, v)| {
            v.iter().map(|&(r, ts)| InteractionEvent {
                buyer_id: pop.buyer_ids[r as usize].clone(),
                seller_id: s.clone(),
                event_kind: VIEW_KIND.into(),
                timestamp_ms: ts,
            })
        })
        .collect();
    let (graph, _) = build_graph(
        &events,
        &table,
        &GraphBuildConfig::new(Weighting::CountProportional, [VIEW_KIND])?,
    )?;
    drop(events);
    let frame = ValidationFrame::new(&pop, &graph, config.p_treat)?;

    let pairs: Vec<(EstimatorSpec, InferenceMethod)> = plan
        .estimators
        .iter()
        .flat_map(|e| plan.methods.iter().map(move |m| (*e, *m)))
        .collect();
    let results: Vec<Vec<Draw>> = (0..plan.sim_replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(config.seed, VALIDATION_STREAM + r as u64);
            let inference_seed: u64 = rng.random();
            let z: Vec<bool> = (0..config.m).map(|_| rng.random_bool(config.p_treat)).collect();
            let h_pop = pop.exposure(&z);
            let y_pop = pop.outcomes(&h_pop, config, &mut rng);
            let panel = frame.panel(&graph, &z, &y_pop);
            let options = InferenceOptions { seed: inference_seed, ..plan.inference };
            pairs
                .iter()
                .map(|(spec, method)| {
                    let panel = panel.as_ref().map_err(|e| e.to_string())?;
                    inference::interval(&graph, panel, spec, *method, &options, &plan.pairwise)
                        .map(|ci| (ci.point.tau_hat, ci.ci_low, ci.ci_high))
                        .map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    let rows = pairs
        .iter()
        .enumerate()
        .map(|(k, (spec, method))| {
            let ok: Vec<(f64, f64, f64)> = results.iter().filter_map(|r| r[k].clone().ok()).collect();
            let first_error = results.iter().find_map(|r| r[k].clone().err());
            let taus: Vec<f64> = ok.iter().map(|d| d.0).collect();
            let widths: Vec<f64> = ok.iter().map(|d| d.2 - d.1).collect();
            let mean = numeric::mean(taus.iter().copied());
            let var = numeric::sample_variance(&taus);
            ValidationRow {
                estimator: spec.kind.label().to_string(),
                method: method.label().to_string(),
                replicates: plan.sim_replications,
                failures: plan.sim_replications - ok.len(),
                true_tau,
                mean_tau_hat: mean,
                bias: mean - true_tau,
                mc_variance: var,
                mc_se: (var / ok.len() as f64).sqrt(),
                median_ci_width: if widths.is_empty() { f64::NAN } else { numeric::median(&widths) },
                coverage: ok.iter().filter(|d| d.1 <= true_tau && true_tau <= d.2).count() as f64
                    / ok.len() as f64,
                first_error,
            }
        })
        .collect();
    let draws = results
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.ok()).collect())
        .collect();
    Ok(ValidationTable { rows, true_tau, n_units: frame.ids.len(), draws })
}

/// Fixed pieces of the per-replicate panel, aligned with graph sellers.
struct ValidationFrame {
    ids: Vec<String>,
    /// Population index of each graph seller.
    pop_index: Vec<usize>,
    /// Population buyer index of each graph buyer.
    buyer_pop_index: Vec<usize>,
    e_h: Vec<f64>,
    var_h: Vec<f64>,
    y_pre: Vec<f64>,
    design: ExposureDesign,
}

impl ValidationFrame {
    fn new(pop: &Population, graph: &BipartiteGraph, p: f64) -> Result<Self> {
        let seller_pos: HashMap<&str, usize> =
            pop.seller_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let buyer_pos: HashMap<&str, usize> =
            pop.buyer_ids.iter().enumerate().map(|(i, b)| (b.as_str(), i)).collect();
        let pop_index: Vec<usize> =
            graph.outcome_ids().iter().map(|s| seller_pos[s.as_str()]).collect();
        let buyer_pop_index = graph.diversion_ids().iter().map(|b| buyer_pos[b.as_str()]).collect();
        let moments = design_moments(graph, p)?;
        Ok(Self {
            ids: graph.outcome_ids().to_vec(),
            y_pre: pop_index.iter().map(|&i| pop.y_pre[i]).collect(),
            pop_index,
            buyer_pop_index,
            e_h: moments.e_h,
            var_h: moments.var_h,
            design: ExposureDesign::with_probability(TREATMENT_LABEL, p)?,
        })
    }

    fn panel(&self, graph: &BipartiteGraph, z_pop: &[bool], y_pop: &[f64]) -> Result<ExposurePanel> {
        let z: Vec<bool> = self.buyer_pop_index.iter().map(|&r| z_pop[r]).collect();
        let mut h = vec![0.0; graph.n_outcomes()];
        exposure_into(graph, &z, &mut h);
        ExposurePanel::new(
            self.ids.clone(),
            (0..self.ids.len()).collect(),
            h,
            self.e_h.clone(),
            self.var_h.clone(),
            self.pop_index.iter().map(|&i| y_pop[i]).collect(),
            Some(self.y_pre.clone()),
            self.design.clone(),
        )
    }
}
