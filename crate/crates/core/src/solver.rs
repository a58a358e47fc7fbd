//! SMO main loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dual::{DualState, Hyperparams};
use crate::error::{Result, SklrError};
use crate::kernel::{KernelCache, KernelSpec, DEFAULT_FULL_THRESHOLD};
use crate::subproblem::{solve_pair, PairKernel, PairProblem};
use crate::wss::{satisfies_constant_fraction, select, Selection, WssKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub kkt_residual_final: f64,
    pub objective_final: f64,
    pub termination: Termination,
    pub wall_time: f64,
    pub wss_kind: WssKind,
    /// Iterations whose objective decrease fell short of `(2/C)‖Δα‖²`.
    pub decrease_audit_violations: usize,
    /// Second-order picks that kept less than the guaranteed fraction of the
    /// maximal violation.
    pub fraction_audit_violations: usize,
    pub audited_iterations: usize,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolverOptions {
    pub wss: WssKind,
    /// Check the sufficient-decrease inequality on every iteration.
    pub audit: bool,
}

/// Feasible starting point. Uses `1/n₊` and `1/n₋` when both fit in the box;
/// otherwise the majority class starts at `γ` and the minority class at
/// `γ·n_maj/n_min`, which keeps `Σ α y = 0`.
pub fn init_alpha(labels: &[f64], h: &Hyperparams) -> Result<Vec<f64>> {
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SklrError::InvalidData(
            "both classes must be present".into(),
        ));
    }
    let (lo, hi) = (h.lower(), h.upper());
    let fits = |a: f64| a >= lo && a <= hi;
    let (a_pos, a_neg) = (1.0 / n_pos as f64, 1.0 / n_neg as f64);
    let (a_pos, a_neg) = if fits(a_pos) && fits(a_neg) {
        (a_pos, a_neg)
    } else {
        let (n_maj, n_min) = (n_pos.max(n_neg) as f64, n_pos.min(n_neg) as f64);
        let minority = lo * (n_maj / n_min);
        if !fits(minority) {
            return Err(SklrError::Infeasible(format!(
                "gamma·n_maj/n_min = {minority} exceeds C − gamma = {hi}"
            )));
        }
        if n_pos >= n_neg {
            (lo, minority)
        } else {
            (minority, lo)
        }
    };
    Ok(labels
        .iter()
        .map(|&y| if y > 0.0 { a_pos } else { a_neg })
        .collect())
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub state: DualState,
    pub report: SolveReport,
}

/// Runs SMO on a prepared kernel cache.
pub fn solve(
    cache: &mut KernelCache,
    labels: &[f64],
    h: &Hyperparams,
    opts: SolverOptions,
) -> Result<Solution> {
    h.validate()?;
    if cache.len() != labels.len() {
        return Err(SklrError::Dimension {
            expected: cache.len(),
            found: labels.len(),
        });
    }
    let started = Instant::now();
    let alpha = init_alpha(labels, h)?;
    let mut state = DualState::new(alpha, labels, cache, h);
    let bound_factor = 2.0 / h.c;
    let mut decrease_violations = 0;
    let mut fraction_violations = 0;
    let mut audited = 0;

    let (termination, residual) = loop {
        let choice = match select(opts.wss, &state, h, cache)? {
            Selection::Optimal { residual } => break (Termination::Converged, residual),
            Selection::Pair(choice) => choice,
        };
        if state.iterations >= h.max_iter {
            break (Termination::MaxIter, choice.residual);
        }
        let (i, j) = (choice.i, choice.j);
        let row_i = cache.row(i);
        let row_j = cache.row(j);
        let k = PairKernel {
            kii: row_i[i],
            kjj: row_j[j],
            kij: row_i[j],
        };
        let step = solve_pair(&PairProblem::new(&state, h, i, j, k), h)?;
        if opts.audit
            && opts.wss == WssKind::SecondOrder
            && !satisfies_constant_fraction(&state, h, cache, &choice)
        {
            fraction_violations += 1;
        }
        let (old_i, old_j) = (state.alpha()[i], state.alpha()[j]);
        let delta = state.apply_pair(h, (i, j), (step.alpha_i, step.alpha_j), &row_i, &row_j);
        if opts.audit {
            audited += 1;
            let moved = (step.alpha_i - old_i).powi(2) + (step.alpha_j - old_j).powi(2);
            if -delta.change < bound_factor * moved - delta.roundoff() {
                decrease_violations += 1;
            }
        }
        state.iterations += 1;
    };

    let report = SolveReport {
        iterations: state.iterations,
        kkt_residual_final: residual,
        objective_final: crate::dual::objective(&state, h),
        termination,
        wall_time: started.elapsed().as_secs_f64(),
        wss_kind: opts.wss,
        decrease_audit_violations: decrease_violations,
        fraction_audit_violations: fraction_violations,
        audited_iterations: audited,
    };
    Ok(Solution { state, report })
}

/// Builds the kernel cache for `d` and trains.
pub fn smo_train(
    d: &Dataset,
    kernel: KernelSpec,
    h: &Hyperparams,
    opts: SolverOptions,
) -> Result<Solution> {
    d.validate_for_training()?;
    kernel.validate()?;
    h.validate()?;
    let mut cache = KernelCache::new(kernel, d.features(), DEFAULT_FULL_THRESHOLD);
    solve(&mut cache, d.labels(), h, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::kkt_residual_from_scratch;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n_pos: usize, n_neg: usize) -> Vec<f64> {
        std::iter::repeat_n(1.0, n_pos)
            .chain(std::iter::repeat_n(-1.0, n_neg))
            .collect()
    }

    fn eq_residual(a: &[f64], y: &[f64]) -> f64 {
        a.iter().zip(y).map(|(a, y)| a * y).sum()
    }

    #[test]
    fn balanced_init() {
        let y = labels(5, 5);
        let a = init_alpha(&y, &Hyperparams::new(10.0, 0.0)).unwrap();
        assert!(a.iter().all(|&v| v == 0.2));
        assert!(eq_residual(&a, &y).abs() <= 1e-15);
    }

    #[test]
    fn unbalanced_init() {
        let y = labels(100, 50);
        let a = init_alpha(&y, &Hyperparams::new(1.0, 0.0)).unwrap();
        assert_eq!(a[0], 0.01);
        assert_eq!(a[149], 0.02);
        assert!(eq_residual(&a, &y).abs() <= 1e-14);
    }

    #[test]
    fn fallback_init_for_tiny_c() {
        let h = Hyperparams::new(1e-4, 0.0);
        let y = labels(6, 3);
        let a = init_alpha(&y, &h).unwrap();
        assert_eq!(a[0], h.gamma);
        assert_relative_eq!(a[8], 2.0 * h.gamma);
        assert!(a.iter().all(|&v| v >= h.lower() && v <= h.upper()));
        assert!(eq_residual(&a, &y).abs() <= 1e-18);

        // ratio too large for the box
        let y = labels(20, 1);
        assert!(matches!(init_alpha(&y, &h), Err(SklrError::Infeasible(_))));
        assert!(init_alpha(&labels(3, 0), &h).is_err());
    }

    fn blobs(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let x = Array2::from_shape_fn((n, 2), |(i, _)| {
            rng.gen::<f64>() * 0.7 + if y[i] > 0.0 { 0.3 } else { 0.0 }
        });
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn converges_with_both_rules() {
        let d = blobs(1, 40);
        for c in [0.1, 1.0, 10.0] {
            let h = Hyperparams::new(c, c / 10.0);
            let mut objs = Vec::new();
            for wss in [WssKind::FirstOrder, WssKind::SecondOrder] {
                let sol = smo_train(
                    &d,
                    KernelSpec::default(),
                    &h,
                    SolverOptions { wss, audit: true },
                )
                .unwrap();
                let r = &sol.report;
                assert!(r.converged(), "{wss} C={c}: {r:?}");
                assert!(r.kkt_residual_final <= h.kkt_tol);
                assert_eq!(r.decrease_audit_violations, 0);
                assert_eq!(r.fraction_audit_violations, 0);
                assert_eq!(r.audited_iterations, r.iterations);
                let mut cache = KernelCache::full(KernelSpec::default(), d.features());
                let fresh =
                    kkt_residual_from_scratch(sol.state.alpha(), d.labels(), &mut cache, &h)
                        .unwrap();
                assert!(fresh <= h.kkt_tol, "fresh residual {fresh}");
                assert!(sol.state.equality_residual().abs() <= 1e-12);
                objs.push(r.objective_final);
            }
            assert!((objs[0] - objs[1]).abs() <= 1e-8 * objs[0].abs().max(1.0));
        }
    }

    #[test]
    fn max_iter_is_reported_not_an_error() {
        let d = blobs(2, 40);
        let mut h = Hyperparams::new(10.0, 0.0);
        h.max_iter = 3;
        let sol = smo_train(&d, KernelSpec::default(), &h, SolverOptions::default()).unwrap();
        assert_eq!(sol.report.termination, Termination::MaxIter);
        assert_eq!(sol.report.iterations, 3);
        assert!(sol.report.kkt_residual_final > h.kkt_tol);
    }

    #[test]
    fn objective_decreases_every_iteration() {
        let d = blobs(3, 30);
        let h = Hyperparams::new(5.0, 0.5);
        let mut cache = KernelCache::full(KernelSpec::default(), d.features());
        let mut last = f64::INFINITY;
        for iters in 1..40 {
            let mut hh = h.clone();
            hh.max_iter = iters;
            let sol = solve(&mut cache, d.labels(), &hh, SolverOptions::default()).unwrap();
            let f = sol.state.tracked_objective();
            if sol.report.iterations < iters {
                break;
            }
            assert!(f < last, "iteration {iters}: {f} !< {last}");
            last = f;
        }
    }
}
