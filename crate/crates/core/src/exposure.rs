//! Exposure scores `H_i = Σ_r w_ir Z_r` and their design moments under
//! independent per-buyer Bernoulli assignment.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::ingest::{AssignmentTable, OutcomeTable};
use crate::numeric;

/// Units whose exposure variance is at or below this are not estimable.
pub const DEFAULT_EPS_VAR: f64 = 1e-12;

/// How the treatment indicator and its probability were derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum ExposureScheme {
    /// Full multi-variant graph; `Z_r = 1` iff buyer r is in the treatment arm.
    Normalized,
    /// Graph restricted to two arms; probability conditioned on those arms.
    Restricted { control: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureDesign {
    pub treatment: String,
    pub probability: f64,
    #[serde(flatten)]
    pub scheme: ExposureScheme,
}

impl ExposureDesign {
    /// `P(Z_r = 1) = p_treatment` over the full graph.
    pub fn normalized(assignments: &AssignmentTable, treatment: &str) -> Result<Self> {
        Ok(Self {
            treatment: treatment.to_string(),
            probability: assignments.probability(treatment)?,
            scheme: ExposureScheme::Normalized,
        })
    }

    /// `P(Z_r = 1) = p_t / (p_t + p_c)` for a graph restricted to two arms.
    pub fn restricted(assignments: &AssignmentTable, control: &str, treatment: &str) -> Result<Self> {
        if control == treatment {
            return Err(Error::InvalidArgument(
                "control and treatment variants must differ".into(),
            ));
        }
        let pt = assignments.probability(treatment)?;
        let pc = assignments.probability(control)?;
        Ok(Self {
            treatment: treatment.to_string(),
            probability: pt / (pt + pc),
            scheme: ExposureScheme::Restricted {
                control: control.to_string(),
            },
        })
    }

    /// A design with an explicit treatment probability in `[0, 1]`. The
    /// endpoints describe deterministic designs whose units are all
    /// degenerate.
    pub fn with_probability(treatment: &str, probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidArgument(format!(
                "treatment probability {probability} outside [0,1]"
            )));
        }
        Ok(Self {
            treatment: treatment.to_string(),
            probability,
            scheme: ExposureScheme::Normalized,
        })
    }
}

/// Treatment indicator per graph buyer.
pub fn treatment_indicator(
    graph: &BipartiteGraph,
    assignments: &AssignmentTable,
    treatment: &str,
) -> Result<Vec<bool>> {
    let t = assignments.variant_index(treatment)?;
    Ok(graph
        .diversion_ids()
        .iter()
        .map(|b| assignments.variant_of(b) == Some(t))
        .collect())
}

/// `h_i = Σ_r w_ir z_r`, summed in edge order.
pub fn exposure_from_indicator(graph: &BipartiteGraph, z: &[bool]) -> Vec<f64> {
    let mut h = vec![0.0; graph.n_outcomes()];
    exposure_into(graph, z, &mut h);
    h
}

pub(crate) fn exposure_into(graph: &BipartiteGraph, z: &[bool], h: &mut [f64]) {
    for (i, out) in h.iter_mut().enumerate() {
        *out = unit_exposure(graph, i, z);
    }
}

/// Exposure of one outcome unit. A fully treated neighborhood can sum to
/// one ulp above 1, so the result is clamped.
pub(crate) fn unit_exposure(graph: &BipartiteGraph, i: usize, z: &[bool]) -> f64 {
    let (offsets, buyers, weights) = graph.csr();
    let mut acc = 0.0;
    for e in offsets[i]..offsets[i + 1] {
        if z[buyers[e] as usize] {
            acc += weights[e];
        }
    }
    acc.min(1.0)
}

/// Realized exposure of every outcome unit to `treatment`.
pub fn realized_exposure(
    graph: &BipartiteGraph,
    assignments: &AssignmentTable,
    treatment: &str,
) -> Result<Vec<f64>> {
    let z = treatment_indicator(graph, assignments, treatment)?;
    Ok(exposure_from_indicator(graph, &z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMoments {
    pub e_h: Vec<f64>,
    pub var_h: Vec<f64>,
}

/// Closed-form `E[H_i] = p Σ_r w_ir` and `Var[H_i] = p(1-p) Σ_r w_ir²`.
pub fn design_moments(graph: &BipartiteGraph, p: f64) -> Result<DesignMoments> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "treatment probability {p} outside (0,1)"
        )));
    }
    Ok(moments_unchecked(graph, p))
}

fn moments_unchecked(graph: &BipartiteGraph, p: f64) -> DesignMoments {
    let n = graph.n_outcomes();
    let mut e_h = Vec::with_capacity(n);
    let mut var_h = Vec::with_capacity(n);
    for i in 0..n {
        let (s1, s2) = graph
            .edges(i)
            .fold((0.0, 0.0), |(a, b), e| (a + e.weight, b + e.weight * e.weight));
        e_h.push(p * s1);
        var_h.push(p * (1.0 - p) * s2);
    }
    DesignMoments { e_h, var_h }
}

/// Analysis-ready, index-aligned columns for the estimable outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePanel {
    outcome_ids: Vec<String>,
    graph_index: Vec<usize>,
    h: Vec<f64>,
    e_h: Vec<f64>,
    var_h: Vec<f64>,
    y_in: Vec<f64>,
    y_pre: Option<Vec<f64>>,
    design: ExposureDesign,
}

impl ExposurePanel {
    /// Builds a panel from explicit columns, checking the invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        outcome_ids: Vec<String>,
        graph_index: Vec<usize>,
        h: Vec<f64>,
        e_h: Vec<f64>,
        var_h: Vec<f64>,
        y_in: Vec<f64>,
        y_pre: Option<Vec<f64>>,
        design: ExposureDesign,
    ) -> Result<Self> {
        let n = h.len();
        let same = [outcome_ids.len(), graph_index.len(), e_h.len(), var_h.len(), y_in.len()]
            .iter()
            .all(|&l| l == n)
            && y_pre.as_ref().is_none_or(|v| v.len() == n);
        if !same {
            return Err(Error::InvalidArgument("panel columns differ in length".into()));
        }
        if let Some(i) = h.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("exposure h[{i}] outside [0,1]")));
        }
        if let Some(i) = var_h.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!("var_h[{i}] is not positive")));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&y_in) || !y_pre.as_deref().is_none_or(finite) || !finite(&e_h) {
            return Err(Error::InvalidArgument("panel values must be finite".into()));
        }
        Ok(Self {
            outcome_ids,
            graph_index,
            h,
            e_h,
            var_h,
            y_in,
            y_pre,
            design,
        })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn outcome_ids(&self) -> &[String] {
        &self.outcome_ids
    }

    /// Row of each panel unit in the graph it was built from.
    pub fn graph_index(&self) -> &[usize] {
        &self.graph_index
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn e_h(&self) -> &[f64] {
        &self.e_h
    }

    pub fn var_h(&self) -> &[f64] {
        &self.var_h
    }

    pub fn y_in(&self) -> &[f64] {
        &self.y_in
    }

    pub fn y_pre(&self) -> Option<&[f64]> {
        self.y_pre.as_deref()
    }

    pub fn design(&self) -> &ExposureDesign {
        &self.design
    }

    /// Centered, variance-scaled exposure `(h_i - E[H_i]) / Var[H_i]`.
    pub fn reweighting(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.h
            .iter()
            .zip(&self.e_h)
            .zip(&self.var_h)
            .map(|((h, e), v)| (h - e) / v)
    }

    /// Panel made of the rows at `idx` (with repetition).
    pub fn resample(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            outcome_ids: idx.iter().map(|&i| self.outcome_ids[i].clone()).collect(),
            graph_index: idx.iter().map(|&i| self.graph_index[i]).collect(),
            h: pick(&self.h),
            e_h: pick(&self.e_h),
            var_h: pick(&self.var_h),
            y_in: pick(&self.y_in),
            y_pre: self.y_pre.as_deref().map(pick),
            design: self.design.clone(),
        }
    }

    /// Same units and design with new exposure and outcome columns.
    pub fn with_draw(&self, h: Vec<f64>, y_in: Vec<f64>) -> Self {
        debug_assert_eq!(h.len(), self.len());
        debug_assert_eq!(y_in.len(), self.len());
        Self {
            outcome_ids: self.outcome_ids.clone(),
            graph_index: self.graph_index.clone(),
            h,
            e_h: self.e_h.clone(),
            var_h: self.var_h.clone(),
            y_in,
            y_pre: self.y_pre.clone(),
            design: self.design.clone(),
        }
    }

    /// Columns-only copy that skips the id strings; used by hot resampling
    /// loops that never report ids.
    pub(crate) fn columns_only(&self, h: Vec<f64>, y_in: Vec<f64>) -> Self {
        Self {
            outcome_ids: Vec::new(),
            graph_index: Vec::new(),
            h,
            e_h: self.e_h.clone(),
            var_h: self.var_h.clone(),
            y_in,
            y_pre: self.y_pre.clone(),
            design: self.design.clone(),
        }
    }

    pub(crate) fn resample_columns(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            outcome_ids: Vec::new(),
            graph_index: Vec::new(),
            h: pick(&self.h),
            e_h: pick(&self.e_h),
            var_h: pick(&self.var_h),
            y_in: pick(&self.y_in),
            y_pre: self.y_pre.as_deref().map(pick),
            design: self.design.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    #[serde(rename = "no outcome row")]
    NoOutcomeRow,
    #[serde(rename = "zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedUnit {
    pub seller_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateReport {
    pub excluded: Vec<ExcludedUnit>,
}

impl DegenerateReport {
    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.excluded.iter().filter(|u| u.reason == reason).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PanelOptions {
    pub allow_missing_outcomes: bool,
    pub eps_var: f64,
}

impl Default for PanelOptions {
    fn default() -> Self {
        Self {
            allow_missing_outcomes: false,
            eps_var: DEFAULT_EPS_VAR,
        }
    }
}

/// Joins graph, assignments and outcomes into an [`ExposurePanel`].
///
/// Units without an outcome row are an error unless
/// `allow_missing_outcomes` is set; units with `Var[H_i] <= eps_var` are
/// excluded. Every exclusion is listed in the returned report.
pub fn assemble_panel(
    graph: &BipartiteGraph,
    assignments: &AssignmentTable,
    outcomes: &OutcomeTable,
    design: &ExposureDesign,
    options: PanelOptions,
) -> Result<(ExposurePanel, DegenerateReport)> {
    let h_all = realized_exposure(graph, assignments, &design.treatment)?;
    let moments = moments_unchecked(graph, design.probability);

    let mut report = DegenerateReport::default();
    let mut ids = Vec::new();
    let mut index = Vec::new();
    let (mut h, mut e_h, mut var_h, mut y_in) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut y_pre = outcomes.has_pre().then(Vec::new);

    for (i, seller) in graph.outcome_ids().iter().enumerate() {
        let Some(outcome) = outcomes.get(seller) else {
            if !options.allow_missing_outcomes {
                return Err(Error::MissingOutcome(seller.clone()));
            }
            report.excluded.push(ExcludedUnit {
                seller_id: seller.clone(),
                reason: ExclusionReason::NoOutcomeRow,
            });
            continue;
        };
        if moments.var_h[i] <= options.eps_var {
            report.excluded.push(ExcludedUnit {
                seller_id: seller.clone(),
                reason: ExclusionReason::ZeroVariance,
            });
            continue;
        }
        ids.push(seller.clone());
        index.push(i);
        h.push(h_all[i]);
        e_h.push(moments.e_h[i]);
        var_h.push(moments.var_h[i]);
        y_in.push(outcome.y_in);
        if let (Some(col), Some(v)) = (y_pre.as_mut(), outcome.y_pre) {
            col.push(v);
        }
    }
    if !report.excluded.is_empty() {
        log::warn!("{} outcome units excluded from the panel", report.excluded.len());
    }
    let panel = ExposurePanel::new(ids, index, h, e_h, var_h, y_in, y_pre, design.clone())?;
    Ok((panel, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Uniform bins over `[0, 1]`; the last bin is closed on the right.
pub fn exposure_histogram(h: &[f64], bins: usize) -> Vec<HistogramBin> {
    let mut counts = vec![0u64; bins];
    for &v in h {
        // exposures are ratios of small integers; nudge exact bin edges
        // that land a hair below the boundary into the upper bin
        let b = ((v * bins as f64) + 1e-9).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect()
}

pub fn write_histogram<W: Write>(mut w: W, bins: &[HistogramBin]) -> io::Result<()> {
    writeln!(w, "bin_lower,bin_upper,count")?;
    for b in bins {
        writeln!(w, "{},{},{}", b.lower, b.upper, b.count)?;
    }
    w.flush()
}

/// Mean of the reweighting term, the slope of ERL under an outcome shift.
pub fn mean_reweighting(panel: &ExposurePanel) -> f64 {
    numeric::mean(panel.reweighting())
}
