//! Hyperparameter grids, the λ bound, and k-fold model selection.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_scaling, fit_scaling, stratified_kfold, validation_split_indices, Dataset,
};
use crate::dual::Hyperparams;
use crate::error::{Result, SklrError};
use crate::kernel::{KernelCache, KernelSpec};
use crate::model::{omega_norm_sq, train_model};
use crate::solver::{smo_train, SolverOptions};

pub const VALIDATION_FRACTION: f64 = 0.05;

/// `{10^r : −4 ≤ r ≤ 4}`.
pub fn c_grid() -> Vec<f64> {
    (-4..=4).map(|r| 10f64.powi(r)).collect()
}

/// `n` equally spaced values from 0 to `C`, both included.
pub fn lambda_grid(c: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    c
                } else {
                    c * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

pub fn lambda_choice(c: f64) -> f64 {
    c / 10.0
}

/// Estimate of the λ past which minority-class `α_i` saturate at `C − γ`:
/// `max_{i minority} Σ_j (C − γ − α_j(0)) y_j K_ji`, with labels oriented so
/// the minority class is −1. With balanced classes the maximum runs over
/// every point.
///
/// The estimate ignores the `ln((C − γ)/γ)` slope of the entropy term near
/// the upper bound, so some minority points can remain below `C − γ` at
/// λ = bound; check with [`saturation_diagnostic`].
///
/// `alpha0` is the λ = 0 solution on `d`.
pub fn lambda_upper_bound(
    d: &Dataset,
    k: &KernelSpec,
    c: f64,
    gamma: f64,
    alpha0: &[f64],
) -> Result<f64> {
    if alpha0.len() != d.len() {
        return Err(SklrError::Dimension {
            expected: d.len(),
            found: alpha0.len(),
        });
    }
    d.validate_for_training()?;
    let (n_pos, n_neg) = (d.n_pos(), d.n_neg());
    let orient = if n_pos < n_neg { -1.0 } else { 1.0 };
    let minority: Vec<usize> = (0..d.len())
        .filter(|&i| n_pos == n_neg || d.labels()[i] * orient < 0.0)
        .collect();

    let (worst, a_max) =
        minority
            .iter()
            .map(|&i| (i, alpha0[i]))
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, v| if v.1 > acc.1 { v } else { acc },
            );
    if !(gamma < c - a_max) {
        return Err(SklrError::Precondition(format!(
            "gamma = {gamma} is not below C − alpha_{worst}(0) = {c} − {a_max} = {}",
            c - a_max
        )));
    }
    let c_bar = c - gamma;
    let mut cache = KernelCache::full(*k, d.features());
    let y = d.labels();
    let bound = minority
        .iter()
        .map(|&i| {
            let row = cache.row(i);
            (0..d.len())
                .map(|j| (c_bar - alpha0[j]) * orient * y[j] * row[j])
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(bound)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub bound: f64,
    pub alpha0: Vec<f64>,
    pub minority_label: Option<f64>,
}

/// Solves at λ = 0 and evaluates [`lambda_upper_bound`].
pub fn lambda_bound_for(d: &Dataset, k: &KernelSpec, h: &Hyperparams) -> Result<BoundReport> {
    let sol = smo_train(d, *k, &h.with_lambda(0.0), SolverOptions::default())?;
    let alpha0 = sol.state.alpha().to_vec();
    let bound = lambda_upper_bound(d, k, h.c, h.gamma, &alpha0)?;
    let minority_label = match d.n_pos().cmp(&d.n_neg()) {
        std::cmp::Ordering::Less => Some(1.0),
        std::cmp::Ordering::Greater => Some(-1.0),
        std::cmp::Ordering::Equal => None,
    };
    Ok(BoundReport {
        bound,
        alpha0,
        minority_label,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub sum_alpha: f64,
    /// `2·C·n_min`.
    pub limit: f64,
    pub converged: bool,
}

pub fn saturation_diagnostic(d: &Dataset, k: &KernelSpec, h: &Hyperparams) -> Result<Saturation> {
    let sol = smo_train(d, *k, h, SolverOptions::default())?;
    let n_min = d.n_pos().min(d.n_neg()) as f64;
    Ok(Saturation {
        sum_alpha: sol.state.alpha().iter().sum(),
        limit: 2.0 * h.c * n_min,
        converged: sol.report.converged(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub c: f64,
    pub lambda: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub selection_ratio: f64,
    pub iterations: usize,
    pub seconds: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    BestAccuracy,
    SparsestOfTop3,
}

fn by_accuracy(a: &GridCell, b: &GridCell) -> std::cmp::Ordering {
    b.val_accuracy
        .total_cmp(&a.val_accuracy)
        .then(a.selection_ratio.total_cmp(&b.selection_ratio))
        .then(a.lambda.total_cmp(&b.lambda))
        .then(a.c.total_cmp(&b.c))
}

/// Highest validation accuracy; ties by lower ratio, then smaller λ, then
/// smaller C.
pub fn best_accuracy(cells: &[GridCell]) -> Result<GridCell> {
    cells
        .iter()
        .min_by(|a, b| by_accuracy(a, b))
        .cloned()
        .ok_or_else(|| SklrError::InvalidParam("no grid cells to select from".into()))
}

/// Among the three most accurate cells, the one with the lowest selection
/// ratio; ties by higher accuracy, then smaller λ, then smaller C.
pub fn sparsest_of_top3(cells: &[GridCell]) -> Result<GridCell> {
    if cells.is_empty() {
        return Err(SklrError::InvalidParam(
            "no grid cells to select from".into(),
        ));
    }
    let mut sorted: Vec<&GridCell> = cells.iter().collect();
    sorted.sort_by(|a, b| by_accuracy(a, b));
    sorted.truncate(3);
    Ok(sorted
        .into_iter()
        .min_by(|a, b| {
            a.selection_ratio
                .total_cmp(&b.selection_ratio)
                .then(b.val_accuracy.total_cmp(&a.val_accuracy))
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.c.total_cmp(&b.c))
        })
        .cloned()
        .expect("non-empty"))
}

impl SelectionRule {
    pub fn pick(&self, cells: &[GridCell]) -> Result<GridCell> {
        match self {
            SelectionRule::BestAccuracy => best_accuracy(cells),
            SelectionRule::SparsestOfTop3 => sparsest_of_top3(cells),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Grid { n: usize },
    Choice,
    Fixed(f64),
}

impl LambdaMode {
    pub fn values(&self, c: f64) -> Vec<f64> {
        match *self {
            LambdaMode::Grid { n } => lambda_grid(c, n),
            LambdaMode::Choice => vec![lambda_choice(c)],
            LambdaMode::Fixed(v) => vec![v],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub k_folds: usize,
    pub kernel: KernelSpec,
    pub base: Hyperparams,
    pub c_values: Vec<f64>,
    pub lambda_mode: LambdaMode,
    pub rule: SelectionRule,
    pub validation_fraction: f64,
    pub wss: crate::wss::WssKind,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k_folds: 5,
            kernel: KernelSpec::default(),
            base: Hyperparams::default(),
            c_values: c_grid(),
            lambda_mode: LambdaMode::Grid { n: 10 },
            rule: SelectionRule::BestAccuracy,
            validation_fraction: VALIDATION_FRACTION,
            wss: crate::wss::WssKind::SecondOrder,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.c_values
            .iter()
            .flat_map(|&c| self.lambda_mode.values(c).into_iter().map(move |l| (c, l)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub chosen: GridCell,
    pub test_accuracy: f64,
    pub selection_ratio: f64,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    /// Every evaluated cell as `(fold, cell)`, ordered by fold then grid order.
    pub cells: Vec<(usize, GridCell)>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub rule: SelectionRule,
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains on `train` (raw features) and scores on `eval`.
fn train_and_score(
    train: &Dataset,
    eval: &Dataset,
    kernel: KernelSpec,
    h: &Hyperparams,
    opts: SolverOptions,
) -> Result<GridCell> {
    let started = Instant::now();
    let fitted = train_model(train, kernel, h, opts)?;
    let acc = fitted.model.accuracy(eval)?;
    Ok(GridCell {
        c: h.c,
        lambda: h.lambda,
        val_accuracy: acc,
        test_accuracy: None,
        selection_ratio: fitted.model.selection_ratio,
        iterations: fitted.report.iterations,
        seconds: started.elapsed().as_secs_f64(),
        converged: fitted.report.converged(),
    })
}

/// Per fold: carve a stratified validation part off the training folds,
/// score every grid cell on it, pick a cell with the selection rule,
/// retrain on the whole training part and score on the held-out fold.
///
/// Cells that cannot be trained (for instance an infeasible start at tiny
/// C on imbalanced data) are left out of the selection.
pub fn kfold_grid_search(d: &Dataset, cfg: &CvConfig) -> Result<CvResult> {
    let plan = stratified_kfold(d, cfg.k_folds, cfg.seed)?;
    let opts = SolverOptions {
        wss: cfg.wss,
        audit: false,
    };
    let grid = cfg.cells();
    if grid.is_empty() {
        return Err(SklrError::InvalidParam("empty hyperparameter grid".into()));
    }

    struct FoldData {
        train: Dataset,
        test: Dataset,
        fit: Dataset,
        val: Dataset,
    }
    let folds: Vec<FoldData> = (0..cfg.k_folds)
        .map(|f| {
            let (tr, te) = plan.split(f);
            let train = d.subset(&tr);
            let test = d.subset(&te);
            let (fit_idx, val_idx) = validation_split_indices(
                &train,
                cfg.validation_fraction,
                cfg.seed.wrapping_add(f as u64),
            )?;
            Ok(FoldData {
                fit: train.subset(&fit_idx),
                val: train.subset(&val_idx),
                train,
                test,
            })
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, f64, f64)> = (0..cfg.k_folds)
        .flat_map(|f| grid.iter().map(move |&(c, l)| (f, c, l)))
        .collect();
    let evaluated: Vec<(usize, Option<GridCell>)> = jobs
        .par_iter()
        .map(|&(f, c, l)| {
            let h = Hyperparams {
                c,
                lambda: l,
                ..cfg.base.clone()
            };
            let fd = &folds[f];
            (
                f,
                train_and_score(&fd.fit, &fd.val, cfg.kernel, &h, opts).ok(),
            )
        })
        .collect();

    let cells: Vec<(usize, GridCell)> = evaluated
        .into_iter()
        .filter_map(|(f, c)| c.map(|c| (f, c)))
        .collect();

    let fold_results: Vec<FoldResult> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|f| {
            let mine: Vec<GridCell> = cells
                .iter()
                .filter(|(g, _)| *g == f)
                .map(|(_, c)| c.clone())
                .collect();
            let chosen = cfg.rule.pick(&mine).map_err(|_| {
                SklrError::InvalidData(format!("no grid cell could be trained in fold {f}"))
            })?;
            let h = Hyperparams {
                c: chosen.c,
                lambda: chosen.lambda,
                ..cfg.base.clone()
            };
            let fd = &folds[f];
            let scored = train_and_score(&fd.train, &fd.test, cfg.kernel, &h, opts)?;
            Ok(FoldResult {
                fold: f,
                chosen,
                test_accuracy: scored.val_accuracy,
                selection_ratio: scored.selection_ratio,
                iterations: scored.iterations,
                seconds: scored.seconds,
            })
        })
        .collect::<Result<_>>()?;

    let accs: Vec<f64> = fold_results.iter().map(|r| r.test_accuracy).collect();
    let ratios: Vec<f64> = fold_results.iter().map(|r| r.selection_ratio).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let (mean_ratio, std_ratio) = mean_std(&ratios);
    Ok(CvResult {
        folds: fold_results,
        cells,
        mean_accuracy,
        std_accuracy,
        mean_ratio,
        std_ratio,
        rule: cfg.rule,
    })
}

pub const CV_CSV_HEADER: [&str; 8] = [
    "fold",
    "C",
    "lambda",
    "val_acc",
    "test_acc",
    "selection_ratio",
    "iterations",
    "seconds",
];

fn csv_err(e: csv::Error) -> SklrError {
    SklrError::Csv(e)
}

/// One row per fold: the chosen cell, its validation accuracy and the
/// retrained model's test accuracy, ratio, iterations and time.
pub fn write_folds_csv<W: Write>(r: &CvResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CV_CSV_HEADER).map_err(csv_err)?;
    for f in &r.folds {
        w.write_record([
            f.fold.to_string(),
            f.chosen.c.to_string(),
            f.chosen.lambda.to_string(),
            f.chosen.val_accuracy.to_string(),
            f.test_accuracy.to_string(),
            f.selection_ratio.to_string(),
            f.iterations.to_string(),
            format!("{:.6}", f.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SklrError::Csv(e.into()))?;
    Ok(())
}

/// One row per evaluated grid cell; `test_acc` is empty.
pub fn write_cells_csv<W: Write>(r: &CvResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CV_CSV_HEADER).map_err(csv_err)?;
    for (f, c) in &r.cells {
        w.write_record([
            f.to_string(),
            c.c.to_string(),
            c.lambda.to_string(),
            c.val_accuracy.to_string(),
            c.test_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            c.selection_ratio.to_string(),
            c.iterations.to_string(),
            format!("{:.6}", c.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SklrError::Csv(e.into()))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub selection_ratio: f64,
    pub omega_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

/// Trains at each λ on `train` and scores on `test`. `omega_norm` is
/// `‖ω‖²` of the full dual solution.
pub fn lambda_sweep(
    train: &Dataset,
    test: &Dataset,
    kernel: KernelSpec,
    base: &Hyperparams,
    lambdas: &[f64],
    opts: SolverOptions,
) -> Result<Vec<SweepRow>> {
    let scaling = fit_scaling(train);
    let scaled = apply_scaling(train, &scaling)?;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let started = Instant::now();
            let h = base.with_lambda(lambda);
            let mut cache = KernelCache::full(kernel, scaled.features());
            let sol = crate::solver::solve(&mut cache, scaled.labels(), &h, opts)?;
            let model = crate::model::finalize(
                &scaled,
                &sol.state,
                &h,
                kernel,
                scaling.clone(),
                sol.report.converged(),
            )?;
            Ok(SweepRow {
                lambda,
                accuracy: model.accuracy(test)?,
                selection_ratio: model.selection_ratio,
                omega_norm: omega_norm_sq(&sol.state, &mut cache),
                iterations: sol.report.iterations,
                converged: sol.report.converged(),
                seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "lambda",
        "accuracy",
        "selection_ratio",
        "omega_norm",
        "iterations",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.lambda.to_string(),
            r.accuracy.to_string(),
            r.selection_ratio.to_string(),
            r.omega_norm.to_string(),
            r.iterations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SklrError::Csv(e.into()))?;
    Ok(())
}
