//! Design-based variance of the ERL estimator from pairwise weighting.
//!
//! `V̂ = (1/n²) Σ_i Σ_j Y_i Y_j R_ij(H_i, H_j)`. For each pair, `R_ij` is the
//! affine function of `(1, H_i, H_j, H_i H_j)` (of `(1, H_i, H_i²)` on the
//! diagonal) whose design expectation against `Y_i Y_j` equals
//! `Cov(τ̂_i, τ̂_j)` for every intercept and slope under the linear
//! response model. Its coefficients solve a small moment system built from
//! the exact joint exposure moments.
//!
//! Units that share no buyer have independent exposures; their system has
//! a zero right-hand side, so `R_ij ≡ 0` and they are skipped. The cost is
//! therefore driven by buyer co-occurrence, but the estimator stays guarded
//! by `n_max` since dense graphs are quadratic.

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{normal_interval, InferenceMethod, IntervalEstimate};
use crate::error::{Error, Result};
use crate::estimators::erl_estimate;
use crate::exposure::ExposurePanel;
use crate::graph::BipartiteGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyPolicy {
    /// Degenerate pairs contribute the product of per-unit sd estimates.
    #[default]
    Merge,
    /// Degenerate pairs are an error.
    Strict,
    /// Degenerate pairs contribute nothing.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseOptions {
    pub n_max: usize,
    /// Threshold on the correlation-normalized feature covariance determinant.
    pub eps_det: f64,
    pub policy: DegeneracyPolicy,
}

impl Default for PairwiseOptions {
    fn default() -> Self {
        Self {
            n_max: 5_000,
            eps_det: 1e-9,
            policy: DegeneracyPolicy::Merge,
        }
    }
}

/// Joint raw moments `E[H_i^s H_j^t]`, `s, t ≤ 2`, of a pair sharing buyers.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMoments {
    pub i: usize,
    pub j: usize,
    pub m: [[f64; 3]; 3],
}

/// Exact exposure moments for every panel unit and every pair of units
/// that share at least one buyer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMomentTable {
    /// `E[H_i^k]` for `k = 0..=4`.
    unit: Vec<[f64; 5]>,
    pairs: Vec<PairMoments>,
}

const BINOM: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Raw moments of `Σ_r w_r Z_r` with independent `Z_r ~ Bernoulli(p)`,
/// accumulated one buyer at a time.
fn univariate_moments(weights: impl Iterator<Item = f64>, p: f64) -> [f64; 5] {
    let mut u = [1.0, 0.0, 0.0, 0.0, 0.0];
    for w in weights {
        let mut x = [1.0; 5];
        for (k, xk) in x.iter_mut().enumerate().skip(1) {
            *xk = w.powi(k as i32) * p;
        }
        let mut next = [0.0; 5];
        for s in 0..5 {
            next[s] = (0..=s).map(|k| BINOM[s][k] * u[s - k] * x[k]).sum();
        }
        u = next;
    }
    u
}

/// Joint raw moments of `(Σ a_r Z_r, Σ b_r Z_r)` up to order 2 in each.
fn joint_moments(pairs: impl Iterator<Item = (f64, f64)>, p: f64) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    m[0][0] = 1.0;
    for (a, b) in pairs {
        let mut x = [[0.0; 3]; 3];
        for (k, row) in x.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                *v = if k + l == 0 {
                    1.0
                } else {
                    a.powi(k as i32) * b.powi(l as i32) * p
                };
            }
        }
        let mut next = [[0.0; 3]; 3];
        for s in 0..3 {
            for t in 0..3 {
                let mut acc = 0.0;
                for k in 0..=s {
                    for l in 0..=t {
                        acc += BINOM[s][k] * BINOM[t][l] * m[s - k][t - l] * x[k][l];
                    }
                }
                next[s][t] = acc;
            }
        }
        m = next;
    }
    m
}

impl ExposureMomentTable {
    pub fn build(graph: &BipartiteGraph, panel: &ExposurePanel) -> Result<Self> {
        let p = panel.design().probability;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Design(format!("treatment probability {p} outside (0,1)")));
        }
        let idx = panel.graph_index();
        if idx.iter().any(|&g| g >= graph.n_outcomes()) {
            return Err(Error::InvalidArgument("panel does not index into this graph".into()));
        }
        let unit = idx
            .iter()
            .map(|&g| univariate_moments(graph.edges(g).map(|e| e.weight), p))
            .collect();

        let mut by_buyer: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &g) in idx.iter().enumerate() {
            for e in graph.edges(g) {
                by_buyer.entry(e.buyer).or_default().push(i);
            }
        }
        let mut sharing: Vec<(usize, usize)> = Vec::new();
        for units in by_buyer.values() {
            for (a, &i) in units.iter().enumerate() {
                for &j in &units[a + 1..] {
                    sharing.push((i.min(j), i.max(j)));
                }
            }
        }
        sharing.sort_unstable();
        sharing.dedup();

        let pairs = sharing
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| {
                let ei: Vec<_> = graph.edges(idx[i]).collect();
                let ej: Vec<_> = graph.edges(idx[j]).collect();
                // merge the two buyer-sorted edge lists
                let mut merged = Vec::with_capacity(ei.len() + ej.len());
                let (mut x, mut y) = (0, 0);
                while x < ei.len() || y < ej.len() {
                    match (ei.get(x), ej.get(y)) {
                        (Some(a), Some(b)) if a.buyer == b.buyer => {
                            merged.push((a.weight, b.weight));
                            x += 1;
                            y += 1;
                        }
                        (Some(a), Some(b)) if a.buyer < b.buyer => {
                            merged.push((a.weight, 0.0));
                            x += 1;
                        }
                        (Some(a), None) => {
                            merged.push((a.weight, 0.0));
                            x += 1;
                        }
                        (_, Some(b)) => {
                            merged.push((0.0, b.weight));
                            y += 1;
                        }
                        (None, None) => unreachable!(),
                    }
                }
                PairMoments {
                    i,
                    j,
                    m: joint_moments(merged.into_iter(), p),
                }
            })
            .collect();
        Ok(Self { unit, pairs })
    }

    pub fn unit(&self, i: usize) -> [f64; 5] {
        self.unit[i]
    }

    pub fn pairs(&self) -> &[PairMoments] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseVariance {
    pub variance: f64,
    /// Pairs (by seller id) whose exposure features are degenerate; a unit
    /// paired with itself marks a degenerate diagonal term.
    pub degenerate_pairs: Vec<(String, String)>,
    pub pairs_evaluated: usize,
    pub policy: DegeneracyPolicy,
}

/// Determinant of a covariance matrix after scaling to unit diagonal;
/// zero when any feature is constant.
fn normalized_det<const D: usize>(cov: [[f64; D]; D]) -> f64 {
    let sd: Vec<f64> = (0..D).map(|a| cov[a][a].max(0.0).sqrt()).collect();
    if sd.iter().any(|&s| s <= 0.0) {
        return 0.0;
    }
    match D {
        2 => Matrix2::from_fn(|a, b| cov[a][b] / (sd[a] * sd[b])).determinant(),
        3 => Matrix3::from_fn(|a, b| cov[a][b] / (sd[a] * sd[b])).determinant(),
        _ => unreachable!(),
    }
}

/// Diagonal weight coefficients `(θ0, θ1, θ2)` for `R_ii = θ0 + θ1 H + θ2 H²`,
/// or `None` when degenerate.
fn diagonal_weights(u: [f64; 5], mu: f64, v: f64, eps_det: f64) -> Option<Vector3<f64>> {
    let cov = [
        [u[2] - u[1] * u[1], u[3] - u[1] * u[2]],
        [u[3] - u[1] * u[2], u[4] - u[2] * u[2]],
    ];
    if normalized_det(cov) <= eps_det {
        return None;
    }
    let m = Matrix3::from_fn(|a, b| u[a + b]);
    let c = Vector3::from_fn(|a, _| {
        let w2 = (u[a + 2] - 2.0 * mu * u[a + 1] + mu * mu * u[a]) / (v * v);
        if a == 2 {
            w2 - 1.0
        } else {
            w2
        }
    });
    m.lu().solve(&c)
}

const FEATURES: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Off-diagonal coefficients for `R_ij` over `(1, H_i, H_j, H_i H_j)`.
fn pair_weights(
    m: &[[f64; 3]; 3],
    (mu_i, v_i): (f64, f64),
    (mu_j, v_j): (f64, f64),
    eps_det: f64,
) -> Option<Vector4<f64>> {
    let mean = |f: (usize, usize)| m[f.0][f.1];
    let second = |f: (usize, usize), g: (usize, usize)| m[f.0 + g.0][f.1 + g.1];
    let mut cov = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let (fa, fb) = (FEATURES[a + 1], FEATURES[b + 1]);
            cov[a][b] = second(fa, fb) - mean(fa) * mean(fb);
        }
    }
    if normalized_det(cov) <= eps_det {
        return None;
    }
    let gram = Matrix4::from_fn(|a, b| second(FEATURES[a], FEATURES[b]));
    let c = Vector4::from_fn(|a, _| {
        let (s, t) = FEATURES[a];
        let ww = (m[s + 1][t + 1] - mu_j * m[s + 1][t] - mu_i * m[s][t + 1]
            + mu_i * mu_j * m[s][t])
            / (v_i * v_j);
        if a == 3 {
            ww - 1.0
        } else {
            ww
        }
    });
    gram.lu().solve(&c)
}

pub fn pairwise_variance(
    panel: &ExposurePanel,
    moments: &ExposureMomentTable,
    options: &PairwiseOptions,
) -> Result<PairwiseVariance> {
    let n = panel.len();
    if n > options.n_max {
        return Err(Error::TooLarge {
            n,
            n_max: options.n_max,
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty panel".into()));
    }
    if moments.len() != n {
        return Err(Error::InvalidArgument(
            "moment table does not match the panel".into(),
        ));
    }
    let (y, h, mu, v) = (panel.y_in(), panel.h(), panel.e_h(), panel.var_h());
    let ids = panel.outcome_ids();
    let mut degenerate: Vec<(usize, usize)> = Vec::new();

    let mut diag = vec![0.0; n];
    for i in 0..n {
        diag[i] = match diagonal_weights(moments.unit[i], mu[i], v[i], options.eps_det) {
            Some(t) => y[i] * y[i] * (t[0] + t[1] * h[i] + t[2] * h[i] * h[i]),
            None => {
                degenerate.push((i, i));
                // second moment of τ̂_i, an upper bound on its variance
                let w = (h[i] - mu[i]) / v[i];
                match options.policy {
                    DegeneracyPolicy::Drop => 0.0,
                    _ => y[i] * y[i] * w * w,
                }
            }
        };
    }
    let unit_sd: Vec<f64> = diag.iter().map(|d| d.max(0.0).sqrt()).collect();

    let mut total = crate::numeric::NeumaierSum::new();
    for d in &diag {
        total.add(*d);
    }
    for pair in &moments.pairs {
        let (i, j) = (pair.i, pair.j);
        let term = match pair_weights(&pair.m, (mu[i], v[i]), (mu[j], v[j]), options.eps_det) {
            Some(t) => y[i] * y[j] * (t[0] + t[1] * h[i] + t[2] * h[j] + t[3] * h[i] * h[j]),
            None => {
                degenerate.push((i, j));
                match options.policy {
                    DegeneracyPolicy::Drop => 0.0,
                    _ => unit_sd[i] * unit_sd[j],
                }
            }
        };
        total.add(2.0 * term);
    }

    degenerate.sort_unstable();
    let degenerate_pairs: Vec<(String, String)> = degenerate
        .iter()
        .map(|&(i, j)| (ids[i].clone(), ids[j].clone()))
        .collect();
    if !degenerate_pairs.is_empty() {
        if options.policy == DegeneracyPolicy::Strict {
            return Err(Error::DegeneratePairs(degenerate_pairs));
        }
        log::warn!(
            "{} degenerate exposure pairs handled by {:?} policy",
            degenerate_pairs.len(),
            options.policy
        );
    }
    Ok(PairwiseVariance {
        variance: total.total() / (n * n) as f64,
        degenerate_pairs,
        pairs_evaluated: n + moments.pairs.len(),
        policy: options.policy,
    })
}

/// ERL with a normal interval from the pairwise variance estimate.
pub fn pairwise_ci(
    graph: &BipartiteGraph,
    panel: &ExposurePanel,
    level: f64,
    options: &PairwiseOptions,
) -> Result<(IntervalEstimate, PairwiseVariance)> {
    if panel.len() > options.n_max {
        return Err(Error::TooLarge {
            n: panel.len(),
            n_max: options.n_max,
        });
    }
    let point = erl_estimate(panel)?;
    let table = ExposureMomentTable::build(graph, panel)?;
    let var = pairwise_variance(panel, &table, options)?;
    let se = var.variance.max(0.0).sqrt();
    let (ci_low, ci_high) = normal_interval(point.tau_hat, se, level);
    Ok((
        IntervalEstimate {
            point,
            ci_low,
            ci_high,
            level,
            method: InferenceMethod::PairwiseVar,
            replications: 0,
            seed: 0,
            se: Some(se),
            failed_replications: 0,
        },
        var,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::{assemble_panel, ExposureDesign, PanelOptions};
    use crate::graph::{build_graph, GraphBuildConfig, Weighting};
    use crate::ingest::{AssignmentTable, DesignFile, InteractionEvent, Outcome, OutcomeTable, VariantSpec};

    fn fixture(
        edges: &[(&str, &str)],
        y: &[(&str, f64)],
        p: f64,
    ) -> (BipartiteGraph, ExposurePanel) {
        let mut t = AssignmentTable::new(DesignFile {
            variants: vec![
                VariantSpec { label: "Off".into(), probability: 1.0 - p, control: true },
                VariantSpec { label: "On".into(), probability: p, control: false },
            ],
        })
        .unwrap();
        let mut buyers: Vec<&str> = edges.iter().map(|e| e.0).collect();
        buyers.sort();
        buyers.dedup();
        for (k, b) in buyers.iter().enumerate() {
            t.assign(b, if k % 2 == 0 { "On" } else { "Off" }).unwrap();
        }
        let events: Vec<_> = edges
            .iter()
            .map(|(b, s)| InteractionEvent { buyer_id: b.to_string(), seller_id: s.to_string(), event_kind: "view".into(), timestamp_ms: 0 })
            .collect();
        let mut out = OutcomeTable::new(false);
        for (s, v) in y {
            out.insert(s, Outcome { y_in: *v, y_pre: None }).unwrap();
        }
        let cfg = GraphBuildConfig::new(Weighting::CountProportional, ["view"]).unwrap();
        let (g, _) = build_graph(&events, &t, &cfg).unwrap();
        let d = ExposureDesign::normalized(&t, "On").unwrap();
        let (panel, _) = assemble_panel(&g, &t, &out, &d, PanelOptions::default()).unwrap();
        (g, panel)
    }

    #[test]
    fn univariate_moments_match_enumeration() {
        let w = [0.5, 0.3, 0.2];
        let p = 0.3;
        let u = univariate_moments(w.iter().copied(), p);
        let mut oracle = [0.0; 5];
        for mask in 0..8u32 {
            let prob: f64 = (0..3).map(|r| if mask >> r & 1 == 1 { p } else { 1.0 - p }).product();
            let h: f64 = (0..3).filter(|r| mask >> r & 1 == 1).map(|r| w[r]).sum();
            for (k, o) in oracle.iter_mut().enumerate() {
                *o += prob * h.powi(k as i32);
            }
        }
        for k in 0..5 {
            assert!((u[k] - oracle[k]).abs() < 1e-15, "k={k}");
        }
    }

    #[test]
    fn disjoint_units_have_no_cross_terms() {
        let (g, panel) = fixture(
            &[("a", "s1"), ("b", "s1"), ("c", "s2"), ("d", "s2"), ("e", "s2")],
            &[("s1", 2.0), ("s2", -1.5)],
            0.5,
        );
        let table = ExposureMomentTable::build(&g, &panel).unwrap();
        assert!(table.pairs().is_empty());
        let v = pairwise_variance(&panel, &table, &PairwiseOptions::default()).unwrap();
        let singles: f64 = (0..2)
            .map(|i| {
                let one = panel.resample(&[i]);
                let t1 = ExposureMomentTable { unit: vec![table.unit(i)], pairs: vec![] };
                pairwise_variance(&one, &t1, &PairwiseOptions::default()).unwrap().variance
            })
            .sum();
        assert!((v.variance - singles / 4.0).abs() < 1e-15);
        assert!(v.degenerate_pairs.is_empty());
    }

    #[test]
    fn identical_edges_flag_the_pair() {
        let (g, panel) = fixture(
            &[("a", "s1"), ("b", "s1"), ("a", "s2"), ("b", "s2"), ("b", "s3"), ("c", "s3"), ("d", "s3")],
            &[("s1", 1.0), ("s2", 2.0), ("s3", 3.0)],
            0.5,
        );
        let table = ExposureMomentTable::build(&g, &panel).unwrap();
        let v = pairwise_variance(&panel, &table, &PairwiseOptions::default()).unwrap();
        assert_eq!(v.degenerate_pairs, vec![("s1".to_string(), "s2".to_string())]);
        let strict = PairwiseOptions { policy: DegeneracyPolicy::Strict, ..Default::default() };
        assert!(matches!(pairwise_variance(&panel, &table, &strict), Err(Error::DegeneratePairs(_))));
        let drop = PairwiseOptions { policy: DegeneracyPolicy::Drop, ..Default::default() };
        let dropped = pairwise_variance(&panel, &table, &drop).unwrap();
        assert!(dropped.variance <= v.variance);
    }

    #[test]
    fn single_edge_units_have_degenerate_diagonals() {
        let (g, panel) = fixture(&[("a", "s1"), ("b", "s2")], &[("s1", 1.0), ("s2", 2.0)], 0.5);
        let table = ExposureMomentTable::build(&g, &panel).unwrap();
        let v = pairwise_variance(&panel, &table, &PairwiseOptions::default()).unwrap();
        assert_eq!(v.degenerate_pairs.len(), 2);
        assert!(v.degenerate_pairs.iter().all(|(a, b)| a == b));
    }

    #[test]
    fn unbiased_on_enumerable_fixture() {
        // 5 buyers, 4 sellers with overlapping neighborhoods
        let edges = [
            ("a", "s1"), ("b", "s1"), ("b", "s1"),
            ("b", "s2"), ("c", "s2"), ("d", "s2"),
            ("c", "s3"), ("d", "s3"), ("e", "s3"), ("e", "s3"),
            ("a", "s4"), ("e", "s4"), ("d", "s4"),
        ];
        let alpha = [1.0, -0.5, 2.0, 0.3];
        let beta = [0.7, 1.5, -1.0, 2.2];
        let p = 0.4;
        let (g, base) = fixture(&edges, &[("s1", 0.0), ("s2", 0.0), ("s3", 0.0), ("s4", 0.0)], p);
        let table = ExposureMomentTable::build(&g, &base).unwrap();
        let m = g.n_diversion();
        let (mut ev, mut et, mut et2) = (0.0, 0.0, 0.0);
        for mask in 0..(1u32 << m) {
            let z: Vec<bool> = (0..m).map(|r| mask >> r & 1 == 1).collect();
            let k = z.iter().filter(|&&b| b).count() as i32;
            let prob = p.powi(k) * (1.0 - p).powi(m as i32 - k);
            let h = crate::exposure::exposure_from_indicator(&g, &z);
            let y: Vec<f64> = (0..4).map(|i| alpha[i] + beta[i] * h[i]).collect();
            let panel = base.with_draw(h, y);
            let tau = erl_estimate(&panel).unwrap().tau_hat;
            let v = pairwise_variance(&panel, &table, &PairwiseOptions::default()).unwrap();
            assert!(v.degenerate_pairs.is_empty());
            ev += prob * v.variance;
            et += prob * tau;
            et2 += prob * tau * tau;
        }
        let true_var = et2 - et * et;
        assert!((et - beta.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert!((ev - true_var).abs() < 1e-8, "E[V̂]={ev} Var={true_var}");
    }

    #[test]
    fn size_guard() {
        let (g, panel) = fixture(&[("a", "s1"), ("b", "s2"), ("c", "s3")], &[("s1", 1.0), ("s2", 1.0), ("s3", 1.0)], 0.5);
        let opts = PairwiseOptions { n_max: 2, ..Default::default() };
        assert!(matches!(pairwise_ci(&g, &panel, 0.95, &opts), Err(Error::TooLarge { n: 3, n_max: 2 })));
    }
}
