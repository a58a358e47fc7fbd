//! Sparse prediction model built from a solved dual.
//!
//! Only points with `α_i` above the selection threshold are kept. The
//! decision function is `Σ β_i K(x_i, x) − b` with `β_i = α_i y_i`, and
//! `P(+1 | x)` is its logistic transform.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{apply_scaling, fit_scaling, Dataset, ScalingParams};
use crate::dual::{entropy_slope, extremes, DualState, Hyperparams};
use crate::error::{Result, SklrError};
use crate::kernel::{KernelCache, KernelSpec};
use crate::solver::{smo_train, SolveReport, SolverOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Intercept recovered from the KKT interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intercept {
    /// Offset in the decision function `Σ β_i K(x_i, x) − b`.
    pub b: f64,
    /// Width of `[min_{I_low} −y∇f, max_{I_up} −y∇f]`; at most the KKT
    /// tolerance for a converged state.
    pub interval_width: f64,
}

/// At a stationary point `∇f_i + b_kkt·y_i = 0` on interior indices, where
/// `b_kkt` is the midpoint of the `−y∇f` extremes. The decision function's
/// offset is its negation: training points then satisfy
/// `y_i (f(x_i) − b) = λ − G'(α_i/C)`.
pub fn compute_intercept(state: &DualState, h: &Hyperparams) -> Result<Intercept> {
    let ex = extremes(state, h)?;
    Ok(Intercept {
        b: -0.5 * (ex.max_up + ex.min_low),
        interval_width: ex.gap(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// Scaled coordinates.
    pub x: Vec<f64>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema_version: u32,
    pub kernel: KernelSpec,
    pub scaling: ScalingParams,
    pub support: Vec<SupportPoint>,
    pub intercept: f64,
    pub hyperparams: Hyperparams,
    pub selection_ratio: f64,
    pub n_train: usize,
    /// Raw class values for −1 and +1, when known.
    #[serde(default)]
    pub classes: Option<[String; 2]>,
    /// False when the solver stopped on the iteration limit.
    pub converged: bool,
}

/// Sparsifies a solved state. `d` is the (already scaled) training set the
/// state was solved on; `scaling` is what maps raw inputs onto it.
pub fn finalize(
    d: &Dataset,
    state: &DualState,
    h: &Hyperparams,
    kernel: KernelSpec,
    scaling: ScalingParams,
    converged: bool,
) -> Result<TrainedModel> {
    if d.len() != state.len() {
        return Err(SklrError::Dimension {
            expected: state.len(),
            found: d.len(),
        });
    }
    let intercept = compute_intercept(state, h)?;
    let support: Vec<SupportPoint> = state
        .alpha()
        .iter()
        .zip(state.labels())
        .enumerate()
        .filter(|(_, (&a, _))| a > h.selection_threshold)
        .map(|(i, (&a, &y))| SupportPoint {
            x: d.row(i).to_vec(),
            beta: a * y,
        })
        .collect();
    let selection_ratio = support.len() as f64 / d.len() as f64;
    Ok(TrainedModel {
        schema_version: SCHEMA_VERSION,
        kernel,
        scaling,
        support,
        intercept: intercept.b,
        hyperparams: h.clone(),
        selection_ratio,
        n_train: d.len(),
        classes: d.classes().cloned(),
        converged,
    })
}

/// A trained model together with the run that produced it.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: TrainedModel,
    pub report: SolveReport,
    pub diagnostics: PrimalDiagnostics,
}

/// Fits `[0,1]` scaling on `d`, solves the dual on the scaled data and
/// sparsifies the result.
pub fn train_model(
    d: &Dataset,
    kernel: KernelSpec,
    h: &Hyperparams,
    opts: SolverOptions,
) -> Result<Fitted> {
    let scaling = fit_scaling(d);
    let scaled = apply_scaling(d, &scaling)?;
    let sol = smo_train(&scaled, kernel, h, opts)?;
    let model = finalize(
        &scaled,
        &sol.state,
        h,
        kernel,
        scaling,
        sol.report.converged(),
    )?;
    Ok(Fitted {
        model,
        diagnostics: primal_diagnostics(&sol.state, h),
        report: sol.report,
    })
}

/// `1 / (1 + e^{−z})` without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub decision: f64,
    pub prob_pos: f64,
    pub label: f64,
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.scaling.dim()
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    /// Decision value for an already-scaled point.
    pub fn decision_scaled(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .support
            .iter()
            .map(|sp| sp.beta * self.kernel.eval(&sp.x, x))
            .sum();
        sum - self.intercept
    }

    pub fn decision_value(&self, x_raw: &[f64]) -> Result<f64> {
        let x = self.scaling.scale_row(x_raw)?;
        Ok(self.decision_scaled(&x))
    }

    /// `P(+1 | x)`.
    pub fn predict_proba(&self, x_raw: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.decision_value(x_raw)?))
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        let decision = self.decision_value(x_raw)?;
        Ok(Prediction {
            decision,
            prob_pos: sigmoid(decision),
            label: if decision >= 0.0 { 1.0 } else { -1.0 },
        })
    }

    pub fn predict_rows(&self, x_raw: &Array2<f64>) -> Result<Vec<Prediction>> {
        if x_raw.ncols() != self.n_features() {
            return Err(SklrError::Dimension {
                expected: self.n_features(),
                found: x_raw.ncols(),
            });
        }
        x_raw
            .rows()
            .into_iter()
            .map(|r| self.predict(&r.to_vec()))
            .collect()
    }

    /// Fraction of correctly classified points of a raw-feature dataset.
    pub fn accuracy(&self, d: &Dataset) -> Result<f64> {
        if d.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_rows(d.features())?;
        let correct = preds
            .iter()
            .zip(d.labels())
            .filter(|(p, &y)| p.label == y)
            .count();
        Ok(correct as f64 / d.len() as f64)
    }

    /// Raw class name for a ±1 label, falling back to "-1"/"1".
    pub fn class_name(&self, label: f64) -> String {
        let idx = usize::from(label > 0.0);
        match &self.classes {
            Some(c) => c[idx].clone(),
            None => if label > 0.0 { "1" } else { "-1" }.to_string(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SklrError::ModelFormat(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SklrError::ModelFormat(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| SklrError::ModelFormat("missing schema_version".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(SklrError::Version {
                found: version.min(u64::from(u32::MAX)) as u32,
                expected: SCHEMA_VERSION,
            });
        }
        let model: TrainedModel =
            serde_json::from_value(value).map_err(|e| SklrError::ModelFormat(e.to_string()))?;
        if model
            .support
            .iter()
            .any(|sp| sp.x.len() != model.scaling.dim())
        {
            return Err(SklrError::ModelFormat(
                "support point dimension differs from scaling dimension".into(),
            ));
        }
        Ok(model)
    }
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, m.to_json()?).map_err(|source| SklrError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SklrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TrainedModel::from_json(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDiagnostics {
    pub omega_norm_sq: f64,
    pub rho_recovered: f64,
    pub b_recovered: f64,
    /// Largest deviation of `ρ − y_i m_i + y_i b = G'(α_i/C)` over the
    /// equations used in the fit.
    pub rho_residual: f64,
    pub equations_used: usize,
}

/// Recovers the primal slack `ρ` and offset `b` by least squares from the
/// per-point stationarity equations `ρ + y_i b = G'(α_i/C) + y_i m_i`.
///
/// Equations of points sitting on the box are inequalities at the optimum,
/// so only interior points enter the fit unless fewer than two of them (or
/// only one class) remain.
pub fn primal_diagnostics(state: &DualState, h: &Hyperparams) -> PrimalDiagnostics {
    let (alpha, y, m) = (state.alpha(), state.labels(), state.m());
    let interior: Vec<usize> = (0..state.len())
        .filter(|&i| alpha[i] > h.lower() && alpha[i] < h.upper())
        .collect();
    let has_both =
        |idx: &[usize]| idx.iter().any(|&i| y[i] > 0.0) && idx.iter().any(|&i| y[i] < 0.0);
    let rows: Vec<usize> = if interior.len() >= 2 && has_both(&interior) {
        interior
    } else {
        (0..state.len()).collect()
    };

    let rhs = |i: usize| entropy_slope(alpha[i], h.c) + y[i] * m[i];
    let n = rows.len() as f64;
    let (mut sy, mut syy, mut sr, mut syr) = (0.0, 0.0, 0.0, 0.0);
    for &i in &rows {
        let r = rhs(i);
        sy += y[i];
        syy += y[i] * y[i];
        sr += r;
        syr += y[i] * r;
    }
    let det = n * syy - sy * sy;
    let rho = (syy * sr - sy * syr) / det;
    let b = (n * syr - sy * sr) / det;
    let rho_residual = rows
        .iter()
        .map(|&i| (rho + y[i] * b - rhs(i)).abs())
        .fold(0.0, f64::max);
    let omega_norm_sq = alpha
        .iter()
        .zip(y)
        .zip(m)
        .map(|((a, y), m)| a * y * m)
        .sum::<f64>()
        .max(0.0);
    PrimalDiagnostics {
        omega_norm_sq,
        rho_recovered: rho,
        b_recovered: b,
        rho_residual,
        equations_used: rows.len(),
    }
}

/// Decision values of the full (unsparsified) dual on arbitrary scaled points.
pub fn dense_decision(
    train: &Dataset,
    state: &DualState,
    b: f64,
    kernel: &KernelSpec,
    x: &[f64],
) -> f64 {
    let sum: f64 = (0..train.len())
        .map(|i| {
            let xi = train.row(i).to_vec();
            state.alpha()[i] * state.labels()[i] * kernel.eval(&xi, x)
        })
        .sum();
    sum - b
}

/// `‖ω‖²` recomputed from kernel rows.
pub fn omega_norm_sq(state: &DualState, cache: &mut KernelCache) -> f64 {
    let m = crate::dual::linear_term(state.alpha(), state.labels(), cache);
    state
        .alpha()
        .iter()
        .zip(state.labels())
        .zip(&m)
        .map(|((a, y), m)| a * y * m)
        .sum()
}
