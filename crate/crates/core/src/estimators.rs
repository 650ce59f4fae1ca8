//! Point estimators of the seller-side average treatment effect.
//!
//! * ERL: `τ̂ = (1/n) Σ Y_i (H_i − E[H_i]) / Var[H_i]`
//! * REG / REG_PRE: OLS slope on exposure, optionally adjusting for `y_pre`
//! * CR-ERL: ERL applied to `Y_i − λ f_i` with `f_i = y_pre_i`

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::ExposurePanel;
use crate::numeric::{self, NeumaierSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "ERL")]
    Erl,
    #[serde(rename = "REG")]
    Reg,
    #[serde(rename = "REG_PRE")]
    RegPre,
    #[serde(rename = "CRERL")]
    Crerl,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Erl,
        EstimatorKind::Reg,
        EstimatorKind::RegPre,
        EstimatorKind::Crerl,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Erl => "ERL",
            EstimatorKind::Reg => "REG",
            EstimatorKind::RegPre => "REG_PRE",
            EstimatorKind::Crerl => "CRERL",
        }
    }

    pub fn needs_pre(self) -> bool {
        matches!(self, EstimatorKind::RegPre | EstimatorKind::Crerl)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "erl" => Ok(EstimatorKind::Erl),
            "reg" => Ok(EstimatorKind::Reg),
            "reg_pre" | "regpre" => Ok(EstimatorKind::RegPre),
            "crerl" | "cr-erl" | "cr_erl" => Ok(EstimatorKind::Crerl),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Fixed(f64),
    /// Empirical variance minimizer `Ĉov(A, B) / V̂ar(B)`.
    #[default]
    Optimal,
}

/// An estimator together with its tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub lambda: LambdaMode,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            lambda: LambdaMode::Optimal,
        }
    }
}

impl From<EstimatorKind> for EstimatorSpec {
    fn from(kind: EstimatorKind) -> Self {
        Self::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub estimator: EstimatorKind,
    pub tau_hat: f64,
    pub n_units: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

pub fn estimate(panel: &ExposurePanel, spec: &EstimatorSpec) -> Result<PointEstimate> {
    match spec.kind {
        EstimatorKind::Erl => erl_estimate(panel),
        EstimatorKind::Reg => regression_estimate(panel, false),
        EstimatorKind::RegPre => regression_estimate(panel, true),
        EstimatorKind::Crerl => crerl_estimate(panel, spec.lambda),
    }
}

fn require_units(panel: &ExposurePanel, min: usize) -> Result<()> {
    if panel.len() < min {
        return Err(Error::InvalidArgument(format!(
            "estimator needs at least {min} outcome units, panel has {}",
            panel.len()
        )));
    }
    Ok(())
}

fn require_pre(panel: &ExposurePanel) -> Result<&[f64]> {
    panel
        .y_pre()
        .ok_or_else(|| Error::InvalidArgument("estimator requires the y_pre covariate".into()))
}

/// `(1/n) Σ (Y_i − λ f_i) W_i`; `λ = 0` reproduces ERL bit for bit.
fn adjusted_erl(panel: &ExposurePanel, lambda: f64, f: Option<&[f64]>) -> f64 {
    let mut acc = NeumaierSum::new();
    for (i, w) in panel.reweighting().enumerate() {
        let y = match f {
            Some(f) => panel.y_in()[i] - lambda * f[i],
            None => panel.y_in()[i],
        };
        acc.add(y * w);
    }
    acc.total() / panel.len() as f64
}

pub fn erl_estimate(panel: &ExposurePanel) -> Result<PointEstimate> {
    require_units(panel, 1)?;
    Ok(PointEstimate {
        estimator: EstimatorKind::Erl,
        tau_hat: adjusted_erl(panel, 0.0, None),
        n_units: panel.len(),
        lambda: None,
        diagnostics: BTreeMap::new(),
    })
}

pub fn crerl_estimate(panel: &ExposurePanel, mode: LambdaMode) -> Result<PointEstimate> {
    require_units(panel, 1)?;
    let f = require_pre(panel)?;
    let mut diagnostics = BTreeMap::new();
    let lambda = match mode {
        LambdaMode::Fixed(l) => {
            if !l.is_finite() {
                return Err(Error::InvalidArgument(format!("lambda {l} is not finite")));
            }
            l
        }
        LambdaMode::Optimal => {
            let (lambda, fallback) = optimal_lambda(panel, f);
            if fallback {
                log::warn!("covariate term has no variance; CR-ERL falls back to lambda = 0");
            }
            diagnostics.insert("lambda_fallback".into(), if fallback { 1.0 } else { 0.0 });
            lambda
        }
    };
    let mean_b = numeric::mean(panel.reweighting().zip(f).map(|(w, f)| f * w));
    diagnostics.insert("mean_covariate_term".into(), mean_b);
    Ok(PointEstimate {
        estimator: EstimatorKind::Crerl,
        tau_hat: adjusted_erl(panel, lambda, Some(f)),
        n_units: panel.len(),
        lambda: Some(lambda),
        diagnostics,
    })
}

/// `λ* = Ĉov(A, B) / V̂ar(B)` with `A_i = Y_i W_i`, `B_i = f_i W_i`.
/// Returns `(0, true)` when `B` has no usable variance.
fn optimal_lambda(panel: &ExposurePanel, f: &[f64]) -> (f64, bool) {
    let n = panel.len();
    if n < 2 {
        return (0.0, true);
    }
    let w: Vec<f64> = panel.reweighting().collect();
    let a: Vec<f64> = w.iter().zip(panel.y_in()).map(|(w, y)| y * w).collect();
    let b: Vec<f64> = w.iter().zip(f).map(|(w, f)| f * w).collect();
    let mean_a = numeric::mean(a.iter().copied());
    let mean_b = numeric::mean(b.iter().copied());
    let cov = numeric::sum(a.iter().zip(&b).map(|(a, b)| (a - mean_a) * (b - mean_b)));
    let var = numeric::sum(b.iter().map(|b| (b - mean_b) * (b - mean_b)));
    let scale = numeric::sum(b.iter().map(|b| b * b));
    if !(var > f64::EPSILON * scale) {
        return (0.0, true);
    }
    (cov / var, false)
}

/// Ordinary least squares fit with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept followed by one slope per regressor.
    pub coef: Vec<f64>,
    /// Classical standard errors, same layout as `coef` minus the intercept.
    pub slope_se: Vec<f64>,
    pub r2: f64,
    pub ssr: f64,
    pub residuals: Vec<f64>,
}

const RANK_TOL: f64 = 1e-10;

/// Solves OLS of `y` on an intercept and `regressors` through centered
/// normal equations and a fully pivoted LU of their correlation form.
/// Rank deficiency is an error, never silently pseudo-inverted.
pub fn ols(y: &[f64], regressors: &[&[f64]]) -> Result<OlsFit> {
    let n = y.len();
    let k = regressors.len();
    if n < k + 2 {
        return Err(Error::InvalidArgument(format!(
            "regression with {k} regressors needs at least {} units, got {n}",
            k + 2
        )));
    }
    let y_mean = numeric::mean(y.iter().copied());
    let means: Vec<f64> = regressors
        .iter()
        .map(|x| numeric::mean(x.iter().copied()))
        .collect();

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for a in 0..k {
        for b in a..k {
            let g = numeric::sum(
                regressors[a]
                    .iter()
                    .zip(regressors[b])
                    .map(|(xa, xb)| (xa - means[a]) * (xb - means[b])),
            );
            gram[(a, b)] = g;
            gram[(b, a)] = g;
        }
        rhs[a] = numeric::sum(
            regressors[a]
                .iter()
                .zip(y)
                .map(|(x, y)| (x - means[a]) * (y - y_mean)),
        );
    }

    let mut scale = vec![0.0; k];
    for a in 0..k {
        let raw = numeric::sum(regressors[a].iter().map(|x| x * x));
        if !(gram[(a, a)] > 1e-12 * raw) {
            return Err(Error::NoExposureVariation);
        }
        scale[a] = gram[(a, a)].sqrt();
    }
    let corr = DMatrix::from_fn(k, k, |a, b| gram[(a, b)] / (scale[a] * scale[b]));
    let lu = corr.clone().full_piv_lu();
    let u = lu.u();
    if (0..k).any(|i| u[(i, i)].abs() < RANK_TOL) {
        return Err(Error::NoExposureVariation);
    }
    let scaled_rhs = DVector::from_fn(k, |a, _| rhs[a] / scale[a]);
    let sol = lu.solve(&scaled_rhs).ok_or(Error::NoExposureVariation)?;
    let corr_inv = lu.try_inverse().ok_or(Error::NoExposureVariation)?;
    let slopes: Vec<f64> = (0..k).map(|a| sol[a] / scale[a]).collect();
    let intercept = y_mean - numeric::sum(slopes.iter().zip(&means).map(|(b, m)| b * m));

    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let fitted = intercept
                + numeric::sum(slopes.iter().zip(regressors).map(|(b, x)| b * x[i]));
            y[i] - fitted
        })
        .collect();
    let ssr = numeric::sum(residuals.iter().map(|r| r * r));
    let sst = numeric::sum(y.iter().map(|v| (v - y_mean) * (v - y_mean)));
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    let sigma2 = ssr / (n - k - 1) as f64;
    let slope_se = (0..k)
        .map(|a| (sigma2 * corr_inv[(a, a)] / (scale[a] * scale[a])).sqrt())
        .collect();

    let mut coef = Vec::with_capacity(k + 1);
    coef.push(intercept);
    coef.extend(slopes);
    Ok(OlsFit {
        coef,
        slope_se,
        r2,
        ssr,
        residuals,
    })
}

/// Koenker's studentized Breusch–Pagan statistic `n R²` from regressing
/// squared residuals on the same regressors.
fn breusch_pagan(residuals: &[f64], regressors: &[&[f64]]) -> f64 {
    let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    match ols(&sq, regressors) {
        Ok(aux) => residuals.len() as f64 * aux.r2,
        Err(_) => f64::NAN,
    }
}

pub fn regression_estimate(panel: &ExposurePanel, use_pre: bool) -> Result<PointEstimate> {
    let h = panel.h();
    let regressors: Vec<&[f64]> = if use_pre {
        vec![h, require_pre(panel)?]
    } else {
        vec![h]
    };
    let fit = ols(panel.y_in(), &regressors)?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("alpha".to_string(), fit.coef[0]);
    if use_pre {
        diagnostics.insert("psi".to_string(), fit.coef[2]);
    }
    diagnostics.insert("r2".to_string(), fit.r2);
    diagnostics.insert("se_tau".to_string(), fit.slope_se[0]);
    diagnostics.insert("df_resid".to_string(), (panel.len() - regressors.len() - 1) as f64);
    diagnostics.insert("bp_lm".to_string(), breusch_pagan(&fit.residuals, &regressors));
    diagnostics.insert("bp_df".to_string(), regressors.len() as f64);

    Ok(PointEstimate {
        estimator: if use_pre {
            EstimatorKind::RegPre
        } else {
            EstimatorKind::Reg
        },
        tau_hat: fit.coef[1],
        n_units: panel.len(),
        lambda: None,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::ExposureDesign;

    pub(crate) fn panel(h: &[f64], y: &[f64], pre: Option<&[f64]>, p: f64) -> ExposurePanel {
        let n = h.len();
        ExposurePanel::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..n).collect(),
            h.to_vec(),
            vec![p; n],
            vec![p * (1.0 - p); n],
            y.to_vec(),
            pre.map(<[f64]>::to_vec),
            ExposureDesign::with_probability("On", p).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn erl_single_zero_outcome() {
        let est = erl_estimate(&panel(&[1.0], &[0.0], None, 0.5)).unwrap();
        assert_eq!(est.tau_hat, 0.0);
        assert!(erl_estimate(&panel(&[], &[], None, 0.5)).is_err());
    }

    #[test]
    fn erl_zero_when_exposure_at_mean() {
        let est = erl_estimate(&panel(&[0.5; 4], &[1.0, 5.0, -2.0, 3.0], None, 0.5)).unwrap();
        assert_eq!(est.tau_hat, 0.0);
    }

    #[test]
    fn erl_is_horvitz_thompson_for_binary_exposure() {
        // p = 1/2, W = ±2
        let est = erl_estimate(&panel(&[1.0, 0.0, 1.0, 0.0], &[3.0, 1.0, 5.0, 2.0], None, 0.5)).unwrap();
        assert_eq!(est.tau_hat, (2.0 * 3.0 - 2.0 * 1.0 + 2.0 * 5.0 - 2.0 * 2.0) / 4.0);
    }

    #[test]
    fn regression_exact_fit() {
        let h = [0.0, 0.25, 0.5, 1.0, 0.75, 1.0 / 3.0];
        let y: Vec<f64> = h.iter().map(|h| 2.0 + 3.0 * h).collect();
        let est = regression_estimate(&panel(&h, &y, None, 0.5), false).unwrap();
        assert!((est.tau_hat - 3.0).abs() < 1e-9);
        assert!((est.diagnostics["alpha"] - 2.0).abs() < 1e-9);
        assert!((est.diagnostics["r2"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_with_pre_exact_fit() {
        let h = [0.0, 0.25, 0.5, 1.0, 0.75, 1.0 / 3.0];
        let pre = [4.0, -1.0, 2.5, 0.0, 7.0, 3.0];
        let y: Vec<f64> = h.iter().zip(&pre).map(|(h, p)| 2.0 + 3.0 * h + p).collect();
        let est = regression_estimate(&panel(&h, &y, Some(&pre), 0.5), true).unwrap();
        assert!((est.tau_hat - 3.0).abs() < 1e-9);
        assert!((est.diagnostics["psi"] - 1.0).abs() < 1e-9);
        assert!((est.diagnostics["alpha"] - 2.0).abs() < 1e-9);
        assert_eq!(est.estimator, EstimatorKind::RegPre);
    }

    #[test]
    fn constant_exposure_is_rank_deficient() {
        let err = regression_estimate(&panel(&[0.5; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], None, 0.5), false);
        assert!(matches!(err, Err(Error::NoExposureVariation)));
        let third = [1.0 / 3.0; 7];
        let err = regression_estimate(&panel(&third, &[1.0; 7], None, 0.5), false);
        assert!(matches!(err, Err(Error::NoExposureVariation)));
        // y_pre collinear with h
        let h = [0.0, 0.5, 1.0, 0.25];
        let pre: Vec<f64> = h.iter().map(|h| 2.0 * h + 1.0).collect();
        let err = regression_estimate(&panel(&h, &[1.0, 2.0, 0.0, 3.0], Some(&pre), 0.5), true);
        assert!(matches!(err, Err(Error::NoExposureVariation)));
    }

    #[test]
    fn regression_pre_requires_covariate() {
        let h = [0.0, 0.5, 1.0, 0.25];
        assert!(regression_estimate(&panel(&h, &[1.0, 2.0, 0.0, 3.0], None, 0.5), true).is_err());
    }

    #[test]
    fn crerl_lambda_zero_is_erl_bitwise() {
        let h = [0.0, 1.0, 0.5, 1.0 / 3.0, 0.75];
        let y = [1.3, 2.7, -0.4, 8.1, 0.01];
        let pre = [1.0, -2.0, 0.3, 5.0, 7.5];
        let p = panel(&h, &y, Some(&pre), 0.4);
        let erl = erl_estimate(&p).unwrap().tau_hat;
        let cr = crerl_estimate(&p, LambdaMode::Fixed(0.0)).unwrap();
        assert_eq!(cr.tau_hat.to_bits(), erl.to_bits());
        assert_eq!(cr.lambda, Some(0.0));
    }

    #[test]
    fn crerl_zero_covariate_is_erl() {
        let h = [0.0, 1.0, 0.5, 1.0 / 3.0, 0.75];
        let y = [1.3, 2.7, -0.4, 8.1, 0.01];
        let p = panel(&h, &y, Some(&[0.0; 5]), 0.4);
        let erl = erl_estimate(&p).unwrap().tau_hat;
        for l in [-3.0, 0.5, 10.0] {
            assert_eq!(crerl_estimate(&p, LambdaMode::Fixed(l)).unwrap().tau_hat, erl);
        }
        let opt = crerl_estimate(&p, LambdaMode::Optimal).unwrap();
        assert_eq!(opt.lambda, Some(0.0));
        assert_eq!(opt.diagnostics["lambda_fallback"], 1.0);
        assert_eq!(opt.tau_hat, erl);
    }

    #[test]
    fn crerl_requires_pre() {
        let p = panel(&[0.0, 1.0], &[1.0, 2.0], None, 0.5);
        assert!(crerl_estimate(&p, LambdaMode::Optimal).is_err());
    }

    #[test]
    fn optimal_lambda_recovers_exact_covariate() {
        // y = 3 f exactly: λ* = 3 and the adjusted outcomes vanish
        let h = [0.0, 1.0, 0.5, 0.25, 0.75, 1.0];
        let f = [1.0, 2.0, -1.0, 4.0, 0.5, 3.0];
        let y: Vec<f64> = f.iter().map(|f| 3.0 * f).collect();
        let est = crerl_estimate(&panel(&h, &y, Some(&f), 0.5), LambdaMode::Optimal).unwrap();
        assert!((est.lambda.unwrap() - 3.0).abs() < 1e-12);
        assert!(est.tau_hat.abs() < 1e-12);
    }

    #[test]
    fn estimator_names_parse() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.label().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("ols".parse::<EstimatorKind>().is_err());
    }
}
