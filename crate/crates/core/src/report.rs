//! End-to-end analysis: files in, a versioned JSON report and SVG figures out.
//!
//! Every requested estimator × method pair appears exactly once per
//! analyzed graph, either with its interval or with the error that stopped
//! it. Nothing in the report depends on wall-clock time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec, LambdaMode};
use crate::exposure::{
    assemble_panel, exposure_histogram, mean_reweighting, write_histogram, DegenerateReport,
    ExclusionReason, ExposureDesign, ExposurePanel, HistogramBin, PanelOptions, HISTOGRAM_BINS,
};
use crate::graph::{
    build_graph, graph_stats, per_variant_subgraphs, BipartiteGraph, BuildCounts, GraphBuildConfig,
    GraphStats, Weighting,
};
use crate::inference::{self, pairwise_ci, InferenceMethod, InferenceOptions, PairwiseOptions};
use crate::ingest::{
    self, create, parse_assignments_with_design, parse_events, parse_outcomes, AssignmentTable,
    DropCounts, EventFilter, MetricKind, OutcomeTable, DEFAULT_EVENT_KINDS,
};

pub const REPORT_SCHEMA: &str = "sellside.report/v1";

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub events: PathBuf,
    pub assignments: PathBuf,
    /// Design sidecar; defaults to the one next to the assignments file.
    pub design: Option<PathBuf>,
    pub outcomes: PathBuf,
    /// One kind set per exposure graph; kinds within a set are pooled.
    pub graphs: Vec<Vec<String>>,
    /// Extra kinds accepted on top of the default whitelist.
    pub extra_kinds: Vec<String>,
    pub time_window: Option<(i64, i64)>,
    pub treatment: String,
    /// Control arm; the design's control variant when absent.
    pub control: Option<String>,
    pub weighting: Weighting,
    pub estimators: Vec<EstimatorSpec>,
    pub methods: Vec<InferenceMethod>,
    pub level: f64,
    pub replications: usize,
    pub seed: u64,
    pub metric: MetricKind,
    pub allow_missing_outcomes: bool,
    pub pairwise: PairwiseOptions,
}

impl AnalysisConfig {
    /// Defaults for everything but the input paths.
    pub fn new(events: PathBuf, assignments: PathBuf, outcomes: PathBuf) -> Self {
        Self {
            events,
            assignments,
            design: None,
            outcomes,
            graphs: vec![vec!["view".into()]],
            extra_kinds: Vec::new(),
            time_window: None,
            treatment: "On".into(),
            control: None,
            weighting: Weighting::CountProportional,
            estimators: EstimatorKind::ALL.iter().map(|&k| k.into()).collect(),
            methods: vec![InferenceMethod::Bootstrap, InferenceMethod::Randomization],
            level: inference::DEFAULT_LEVEL,
            replications: inference::DEFAULT_REPLICATIONS,
            seed: 0,
            metric: MetricKind::Continuous,
            allow_missing_outcomes: false,
            pairwise: PairwiseOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no inference methods requested".into()));
        }
        if self.graphs.is_empty() || self.graphs.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("every graph needs at least one event kind".into()));
        }
        InferenceOptions {
            level: self.level,
            replications: self.replications,
            seed: self.seed,
        }
        .validate()
    }

    fn inference(&self) -> InferenceOptions {
        InferenceOptions {
            level: self.level,
            replications: self.replications,
            seed: self.seed,
        }
    }
}

/// Serializable echo of the analysis configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub events: String,
    pub assignments: String,
    pub design: String,
    pub outcomes: String,
    pub graphs: Vec<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_window: Option<(i64, i64)>,
    pub treatment: String,
    pub control: String,
    pub weighting: Weighting,
    pub estimators: Vec<EstimatorSpec>,
    pub methods: Vec<InferenceMethod>,
    pub level: f64,
    pub replications: usize,
    pub seed: u64,
    pub allow_missing_outcomes: bool,
    pub pairwise_n_max: usize,
    pub pairwise_eps_det: f64,
    pub degeneracy_policy: inference::DegeneracyPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub events_kept: usize,
    pub dropped: DropCounts,
    pub assigned_buyers: usize,
    pub outcome_rows: usize,
    pub has_pre_period: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

/// One analyzed exposure graph under one exposure scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSection {
    pub label: String,
    pub kinds: Vec<String>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<ExposureDesign>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub build_counts: Option<BuildCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<GraphStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<DegenerateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reweighting: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exposure_histogram: Option<Vec<HistogramBin>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateSummary {
    pub panel_units: usize,
    pub no_outcome_row: usize,
    pub zero_variance: usize,
    pub excluded: DegenerateReport,
}

/// One estimator × method result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub graph: String,
    pub estimator: EstimatorKind,
    pub method: InferenceMethod,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<inference::IntervalEstimate>,
    /// Caveat attached to methods that rest on a modelling choice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// The pair weights are not pinned down by unbiasedness alone.
pub const PAIRWISE_NOTE: &str = "pair weights R_ij fitted by moment matching on (1, H_i, H_j, H_i H_j); \
one unbiased choice among several";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema: String,
    pub metric: MetricKind,
    pub config: ConfigEcho,
    pub ingest: IngestSummary,
    pub graphs: Vec<GraphSection>,
    pub results: Vec<ResultEntry>,
}

impl EstimateReport {
    /// 0 when every pair succeeded, 1 when none did, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        let ok = self.results.iter().filter(|r| r.status == Status::Ok).count();
        if ok == self.results.len() {
            0
        } else if ok == 0 {
            1
        } else {
            2
        }
    }

    pub fn entry(&self, graph: &str, estimator: EstimatorKind, method: InferenceMethod) -> Option<&ResultEntry> {
        self.results
            .iter()
            .find(|r| r.graph == graph && r.estimator == estimator && r.method == method)
    }
}

fn graph_label(kinds: &[String]) -> String {
    kinds.join("+")
}

struct Inputs {
    events: Vec<ingest::InteractionEvent>,
    assignments: AssignmentTable,
    outcomes: OutcomeTable,
    summary: IngestSummary,
    design_path: PathBuf,
}

fn load(config: &AnalysisConfig) -> Result<Inputs> {
    let design_path = config
        .design
        .clone()
        .unwrap_or_else(|| ingest::design_sidecar_path(&config.assignments));
    let assignments = parse_assignments_with_design(&config.assignments, &design_path)?;
    let mut whitelist: std::collections::BTreeSet<String> =
        DEFAULT_EVENT_KINDS.iter().map(|s| s.to_string()).collect();
    whitelist.extend(config.extra_kinds.iter().cloned());
    let all_kinds: Vec<&String> = config.graphs.iter().flatten().collect();
    let mut filter = EventFilter::with_whitelist(all_kinds.iter().map(|s| s.as_str()), whitelist)?;
    if let Some((t0, t1)) = config.time_window {
        filter = filter.window(t0, t1)?;
    }
    let parsed = parse_events(&config.events, &filter)?;
    let outcomes = parse_outcomes(&config.outcomes)?;
    outcomes.check_metric(config.metric)?;
    let summary = IngestSummary {
        events_kept: parsed.events.len(),
        dropped: parsed.dropped,
        assigned_buyers: assignments.len(),
        outcome_rows: outcomes.len(),
        has_pre_period: outcomes.has_pre(),
    };
    Ok(Inputs {
        events: parsed.events,
        assignments,
        outcomes,
        summary,
        design_path,
    })
}

/// A prepared panel plus the graph it indexes.
struct Prepared {
    graph: BipartiteGraph,
    panel: ExposurePanel,
}

fn prepare(
    config: &AnalysisConfig,
    inputs: &Inputs,
    kinds: &[String],
    restricted_to: Option<&str>,
    section: &mut GraphSection,
) -> Result<Prepared> {
    let (full, counts) = build_graph(
        &inputs.events,
        &inputs.assignments,
        &GraphBuildConfig::new(config.weighting, kinds.iter().cloned())?,
    )?;
    section.build_counts = Some(counts);
    let (graph, design) = match restricted_to {
        None => (full, ExposureDesign::normalized(&inputs.assignments, &config.treatment)?),
        Some(control) => (
            per_variant_subgraphs(&full, &inputs.assignments, control, &config.treatment)?,
            ExposureDesign::restricted(&inputs.assignments, control, &config.treatment)?,
        ),
    };
    section.stats = Some(graph_stats(&graph));
    let options = PanelOptions {
        allow_missing_outcomes: config.allow_missing_outcomes,
        ..Default::default()
    };
    let (panel, degenerate) = assemble_panel(&graph, &inputs.assignments, &inputs.outcomes, &design, options)?;
    section.design = Some(design);
    section.degenerate = Some(DegenerateSummary {
        panel_units: panel.len(),
        no_outcome_row: degenerate.count(ExclusionReason::NoOutcomeRow),
        zero_variance: degenerate.count(ExclusionReason::ZeroVariance),
        excluded: degenerate,
    });
    if !panel.is_empty() {
        section.mean_reweighting = Some(mean_reweighting(&panel));
    }
    section.exposure_histogram = Some(exposure_histogram(panel.h(), HISTOGRAM_BINS));
    Ok(Prepared { graph, panel })
}

fn run_pair(
    config: &AnalysisConfig,
    prepared: &Prepared,
    spec: &EstimatorSpec,
    method: InferenceMethod,
) -> Result<inference::IntervalEstimate> {
    if method == InferenceMethod::PairwiseVar && spec.kind == EstimatorKind::Erl {
        let (mut ci, var) = pairwise_ci(&prepared.graph, &prepared.panel, config.level, &config.pairwise)?;
        ci.point
            .diagnostics
            .insert("degenerate_pairs".into(), var.degenerate_pairs.len() as f64);
        ci.point
            .diagnostics
            .insert("variance".into(), var.variance);
        return Ok(ci);
    }
    inference::interval(
        &prepared.graph,
        &prepared.panel,
        spec,
        method,
        &config.inference(),
        &config.pairwise,
    )
}

/// Runs the pipeline without touching the output directory. Input errors
/// are returned; per-graph and per-pair errors are recorded in the report.
pub fn run_analysis(config: &AnalysisConfig) -> Result<EstimateReport> {
    config.validate()?;
    let inputs = load(config)?;
    let control = match &config.control {
        Some(c) => {
            inputs.assignments.variant_index(c)?;
            c.clone()
        }
        None => inputs.assignments.control_label().to_string(),
    };
    inputs.assignments.variant_index(&config.treatment)?;
    if control == config.treatment {
        return Err(Error::InvalidArgument("treatment and control must differ".into()));
    }
    // With more than two arms the normalized and arm-restricted exposures
    // differ, and both are reported.
    let mut schemes: Vec<Option<&str>> = vec![None];
    if inputs.assignments.variants().len() > 2 {
        schemes.push(Some(control.as_str()));
    }

    let mut graphs = Vec::new();
    let mut results = Vec::new();
    for kinds in &config.graphs {
        for scheme in &schemes {
            let mut label = graph_label(kinds);
            if let Some(c) = scheme {
                let _ = write!(label, "|{}-vs-{}", config.treatment, c);
            }
            log::info!("analyzing graph {label}");
            let mut section = GraphSection {
                label: label.clone(),
                kinds: kinds.clone(),
                status: Status::Ok,
                error: None,
                design: None,
                build_counts: None,
                stats: None,
                degenerate: None,
                mean_reweighting: None,
                exposure_histogram: None,
            };
            let prepared = prepare(config, &inputs, kinds, *scheme, &mut section);
            if let Err(e) = &prepared {
                section.status = Status::Error;
                section.error = Some(e.to_string());
                log::error!("graph {label}: {e}");
            }
            for spec in &config.estimators {
                for &method in &config.methods {
                    let outcome = match &prepared {
                        Ok(p) => run_pair(config, p, spec, method).map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    if let Err(e) = &outcome {
                        log::warn!("{label} {} + {method}: {e}", spec.kind);
                    }
                    let (status, error, interval) = match outcome {
                        Ok(ci) => (Status::Ok, None, Some(ci)),
                        Err(e) => (Status::Error, Some(e), None),
                    };
                    results.push(ResultEntry {
                        graph: label.clone(),
                        estimator: spec.kind,
                        method,
                        status,
                        error,
                        interval,
                        note: (method == InferenceMethod::PairwiseVar).then(|| PAIRWISE_NOTE.to_string()),
                    });
                }
            }
            graphs.push(section);
        }
    }

    let echo = ConfigEcho {
        events: config.events.display().to_string(),
        assignments: config.assignments.display().to_string(),
        design: inputs.design_path.display().to_string(),
        outcomes: config.outcomes.display().to_string(),
        graphs: config.graphs.clone(),
        time_window: config.time_window,
        treatment: config.treatment.clone(),
        control,
        weighting: config.weighting,
        estimators: config.estimators.clone(),
        methods: config.methods.clone(),
        level: config.level,
        replications: config.replications,
        seed: config.seed,
        allow_missing_outcomes: config.allow_missing_outcomes,
        pairwise_n_max: config.pairwise.n_max,
        pairwise_eps_det: config.pairwise.eps_det,
        degeneracy_policy: config.pairwise.policy,
    };
    Ok(EstimateReport {
        schema: REPORT_SCHEMA.into(),
        metric: config.metric,
        config: echo,
        ingest: inputs.summary,
        graphs,
        results,
    })
}

/// File-name-safe version of a graph label.
fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `report.json`, `forest.svg` and, per graph, the exposure
/// histogram as CSV and SVG. Returns the paths written.
pub fn write_report(dir: &Path, report: &EstimateReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        w.write_all(bytes)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    put("report.json".into(), &json)?;
    put("forest.svg".into(), forest_svg(report).as_bytes())?;
    for g in &report.graphs {
        if let Some(bins) = &g.exposure_histogram {
            let stem = file_stem(&g.label);
            let mut csv = Vec::new();
            write_histogram(&mut csv, bins).map_err(|e| Error::io(dir, e))?;
            put(format!("exposure_histogram_{stem}.csv"), &csv)?;
            put(format!("exposure_histogram_{stem}.svg"), histogram_svg(&g.label, bins).as_bytes())?;
        }
    }
    Ok(written)
}

/// Writes the `(seller, buyer, weight)` edge list of every analyzed graph.
pub fn dump_graphs(config: &AnalysisConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let inputs = load(config)?;
    let mut written = Vec::new();
    for kinds in &config.graphs {
        let (graph, _) = build_graph(
            &inputs.events,
            &inputs.assignments,
            &GraphBuildConfig::new(config.weighting, kinds.iter().cloned())?,
        )?;
        let path = dir.join(format!("graph_{}.csv", file_stem(&graph_label(kinds))));
        let w = create(&path)?;
        graph.write_audit(w).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const ROW_HEIGHT: f64 = 22.0;
const LABEL_WIDTH: f64 = 300.0;
const PLOT_WIDTH: f64 = 420.0;
const MARGIN: f64 = 20.0;

/// Forest plot: one `<g class="row">` per report entry, grouped by graph.
pub fn forest_svg(report: &EstimateReport) -> String {
    let ok: Vec<&inference::IntervalEstimate> = report
        .results
        .iter()
        .filter_map(|r| r.interval.as_ref())
        .filter(|ci| ci.ci_low.is_finite() && ci.ci_high.is_finite())
        .collect();
    let mut lo = ok.iter().map(|ci| ci.ci_low).fold(0.0f64, f64::min);
    let mut hi = ok.iter().map(|ci| ci.ci_high).fold(0.0f64, f64::max);
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |v: f64| LABEL_WIDTH + (v - lo) / (hi - lo) * PLOT_WIDTH;

    let mut groups: Vec<(&str, Vec<&ResultEntry>)> = Vec::new();
    for r in &report.results {
        match groups.last_mut() {
            Some((g, rows)) if *g == r.graph => rows.push(r),
            _ => groups.push((&r.graph, vec![r])),
        }
    }
    let n_lines = report.results.len() + groups.len();
    let height = MARGIN * 2.0 + ROW_HEIGHT * (n_lines as f64 + 1.5);
    let width = LABEL_WIDTH + PLOT_WIDTH + MARGIN * 2.0 + 120.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-weight="bold">Treatment effect estimates ({:?} metric)</text>"#,
        MARGIN,
        report.metric
    );
    let mut y = MARGIN + ROW_HEIGHT;
    let top = y;
    for (graph, rows) in &groups {
        let _ = writeln!(
            s,
            r#"<text class="group" x="{MARGIN}" y="{y:.1}" font-weight="bold">{}</text>"#,
            escape(graph)
        );
        y += ROW_HEIGHT;
        for r in rows {
            let label = format!("{} + {}", r.estimator, r.method);
            let _ = writeln!(s, r#"<g class="row">"#);
            let _ = writeln!(s, r#"  <text x="{:.1}" y="{y:.1}">{}</text>"#, MARGIN + 12.0, escape(&label));
            match &r.interval {
                Some(ci) if ci.ci_low.is_finite() && ci.ci_high.is_finite() => {
                    let cy = y - 4.0;
                    let _ = writeln!(
                        s,
                        r#"  <line x1="{:.2}" x2="{:.2}" y1="{cy:.1}" y2="{cy:.1}" stroke="black"/>"#,
                        x(ci.ci_low),
                        x(ci.ci_high)
                    );
                    let _ = writeln!(
                        s,
                        r#"  <circle cx="{:.2}" cy="{cy:.1}" r="3.5" fill="black"/>"#,
                        x(ci.point.tau_hat)
                    );
                    let _ = writeln!(
                        s,
                        r#"  <text x="{:.1}" y="{y:.1}">{:.4} [{:.4}, {:.4}]</text>"#,
                        LABEL_WIDTH + PLOT_WIDTH + 10.0,
                        ci.point.tau_hat,
                        ci.ci_low,
                        ci.ci_high
                    );
                }
                _ => {
                    let _ = writeln!(
                        s,
                        r#"  <text x="{:.1}" y="{y:.1}" fill="firebrick">error</text>"#,
                        LABEL_WIDTH + 10.0
                    );
                }
            }
            let _ = writeln!(s, "</g>");
            y += ROW_HEIGHT;
        }
    }
    let zero = x(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.2}" x2="{zero:.2}" y1="{top:.1}" y2="{y:.1}" stroke="#888" stroke-dasharray="4 3"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{LABEL_WIDTH}" y="{:.1}">{lo:.4}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.4}</text>"#,
        y + 4.0,
        LABEL_WIDTH + PLOT_WIDTH,
        y + 4.0
    );
    s.push_str("</svg>\n");
    s
}

/// Bar chart of exposure counts per bin.
pub fn histogram_svg(title: &str, bins: &[HistogramBin]) -> String {
    let (w, h) = (520.0, 260.0);
    let (left, bottom, top) = (50.0, 30.0, 30.0);
    let plot_w = w - left - 20.0;
    let plot_h = h - bottom - top;
    let max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let bar = plot_w / bins.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18">Exposure histogram: {}</text>"#, escape(title));
    for (i, b) in bins.iter().enumerate() {
        let bh = b.count as f64 / max * plot_h;
        let _ = writeln!(
            s,
            r##"<rect class="bin" x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#4a7ab5"><title>[{}, {}): {}</title></rect>"##,
            left + i as f64 * bar,
            top + plot_h - bh,
            (bar - 1.0).max(0.5),
            b.lower,
            b.upper,
            b.count
        );
    }
    let base = top + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{left}" x2="{:.1}" y1="{base}" y2="{base}" stroke="black"/>"#,
        left + plot_w
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{:.1}">0</text><text x="{:.1}" y="{:.1}" text-anchor="end">1</text><text x="4" y="{:.1}">{}</text>"#,
        base + 15.0,
        left + plot_w,
        base + 15.0,
        top + 10.0,
        max as u64
    );
    s.push_str("</svg>\n");
    s
}

/// Default estimator specs with an optional fixed CR-ERL λ.
pub fn estimator_specs(kinds: &[EstimatorKind], lambda: Option<f64>) -> Vec<EstimatorSpec> {
    kinds
        .iter()
        .map(|&kind| EstimatorSpec {
            kind,
            lambda: lambda.map_or(LambdaMode::Optimal, LambdaMode::Fixed),
        })
        .collect()
}

/// Human-readable summary of a report.
pub fn summary_table(report: &EstimateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:<8} {:<14} {:>10} {:>10} {:>10}",
        "graph", "est", "method", "tau_hat", "ci_low", "ci_high"
    );
    for r in &report.results {
        match &r.interval {
            Some(ci) => {
                let _ = writeln!(
                    s,
                    "{:<24} {:<8} {:<14} {:>10.5} {:>10.5} {:>10.5}",
                    r.graph, r.estimator.label(), r.method.label(), ci.point.tau_hat, ci.ci_low, ci.ci_high
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "{:<24} {:<8} {:<14} error: {}",
                    r.graph,
                    r.estimator.label(),
                    r.method.label(),
                    r.error.as_deref().unwrap_or("")
                );
            }
        }
    }
    s
}

/// Grouped counts of result statuses, for log lines.
pub fn status_counts(report: &EstimateReport) -> BTreeMap<Status, usize> {
    let mut m = BTreeMap::new();
    for r in &report.results {
        *m.entry(r.status).or_insert(0) += 1;
    }
    m
}
