//! Exact minimization of the two-variable SMO subproblem.
//!
//! Moving along the feasible direction `α_i += t·y_i`, `α_j −= t·y_j` keeps
//! `Σ α y` fixed. The restriction `φ(t)` is strictly convex with
//! `φ'' ≥ K_ii + K_jj − 2K_ij + 8/C`, so a bracketed Newton iteration finds
//! the minimizer to machine resolution.

use crate::dual::{c_entropy, entropy_curvature, entropy_slope, DualState, Hyperparams};
use crate::error::{Result, SklrError};

/// Target for `|φ'(t)|` at an interior minimizer.
pub const DERIV_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInterval {
    pub t_lo: f64,
    pub t_hi: f64,
}

/// Range of `t` keeping both updated variables inside `[γ, C − γ]`.
pub fn step_interval(
    alpha_i: f64,
    alpha_j: f64,
    y_i: f64,
    y_j: f64,
    h: &Hyperparams,
) -> StepInterval {
    let (lo, hi) = (h.lower(), h.upper());
    // α_i + t·y_i ∈ [lo, hi]
    let (li, ui) = if y_i > 0.0 {
        (lo - alpha_i, hi - alpha_i)
    } else {
        (alpha_i - hi, alpha_i - lo)
    };
    // α_j − t·y_j ∈ [lo, hi]
    let (lj, uj) = if y_j > 0.0 {
        (alpha_j - hi, alpha_j - lo)
    } else {
        (lo - alpha_j, hi - alpha_j)
    };
    StepInterval {
        t_lo: li.max(lj).min(0.0),
        t_hi: ui.min(uj).max(0.0),
    }
}

/// Kernel entries a pair update needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairKernel {
    pub kii: f64,
    pub kjj: f64,
    pub kij: f64,
}

/// The one-dimensional problem for a fixed pair, frozen at the current state.
#[derive(Clone, Debug)]
pub struct PairProblem {
    pub i: usize,
    pub j: usize,
    alpha_i: f64,
    alpha_j: f64,
    y_i: f64,
    y_j: f64,
    m_i: f64,
    m_j: f64,
    k: PairKernel,
    c: f64,
    lambda: f64,
    pub interval: StepInterval,
}

impl PairProblem {
    pub fn new(state: &DualState, h: &Hyperparams, i: usize, j: usize, k: PairKernel) -> Self {
        let (a, y, m) = (state.alpha(), state.labels(), state.m());
        Self {
            i,
            j,
            alpha_i: a[i],
            alpha_j: a[j],
            y_i: y[i],
            y_j: y[j],
            m_i: m[i],
            m_j: m[j],
            k,
            c: h.c,
            lambda: h.lambda,
            interval: step_interval(a[i], a[j], y[i], y[j], h),
        }
    }

    /// Updated `(α_i, α_j)` at step `t`.
    #[inline]
    pub fn alphas(&self, t: f64) -> (f64, f64) {
        (self.alpha_i + t * self.y_i, self.alpha_j - t * self.y_j)
    }

    fn check_open(&self, t: f64) -> Result<(f64, f64)> {
        let (ai, aj) = self.alphas(t);
        let inside = |a: f64| a > 0.0 && a < self.c;
        if inside(ai) && inside(aj) {
            Ok((ai, aj))
        } else {
            Err(SklrError::OutOfDomain {
                value: if inside(ai) { aj / self.c } else { ai / self.c },
            })
        }
    }

    /// `φ(t) − φ(0)`.
    pub fn phi_delta(&self, t: f64) -> Result<f64> {
        let (ai, aj) = self.check_open(t)?;
        let eta = self.k.kii + self.k.kjj - 2.0 * self.k.kij;
        let quad = t * (self.m_i - self.m_j) + 0.5 * t * t * eta;
        let ent = (c_entropy(ai, self.c) - c_entropy(self.alpha_i, self.c))
            + (c_entropy(aj, self.c) - c_entropy(self.alpha_j, self.c));
        let lin = -self.lambda * t * (self.y_i - self.y_j);
        Ok(quad + ent + lin)
    }

    /// `(φ'(t), φ''(t))`.
    pub fn derivs(&self, t: f64) -> Result<(f64, f64)> {
        let (ai, aj) = self.check_open(t)?;
        Ok(self.derivs_unchecked(t, ai, aj))
    }

    #[inline]
    fn derivs_unchecked(&self, t: f64, ai: f64, aj: f64) -> (f64, f64) {
        let k = &self.k;
        let grad_i =
            self.y_i * (self.m_i + t * (k.kii - k.kij)) + entropy_slope(ai, self.c) - self.lambda;
        let grad_j =
            self.y_j * (self.m_j + t * (k.kij - k.kjj)) + entropy_slope(aj, self.c) - self.lambda;
        let d1 = self.y_i * grad_i - self.y_j * grad_j;
        let d2 = k.kii + k.kjj - 2.0 * k.kij
            + entropy_curvature(ai, self.c)
            + entropy_curvature(aj, self.c);
        (d1, d2)
    }
}

pub fn phi_derivs(
    state: &DualState,
    h: &Hyperparams,
    i: usize,
    j: usize,
    k: PairKernel,
    t: f64,
) -> Result<(f64, f64)> {
    PairProblem::new(state, h, i, j, k).derivs(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub t: f64,
    pub alpha_i: f64,
    pub alpha_j: f64,
    pub newton_iterations: usize,
    /// True when the minimizer sits on the end of the step interval.
    pub at_bound: bool,
}

/// Minimizes `φ` over the step interval. The pair must be violating
/// (`φ'(0) < 0`), which puts the minimizer in `(0, t_hi]`.
pub fn solve_pair(p: &PairProblem, h: &Hyperparams) -> Result<Step> {
    let (d0, c0) = p.derivs(0.0)?;
    if !(d0 < 0.0) {
        return Err(SklrError::Contract(format!(
            "pair ({}, {}) is not violating: phi'(0) = {d0}",
            p.i, p.j
        )));
    }
    let t_hi = p.interval.t_hi;
    if !(t_hi > 0.0) {
        return Err(SklrError::Contract(format!(
            "pair ({}, {}) has no room to move",
            p.i, p.j
        )));
    }
    let finish = |t: f64, iters: usize, at_bound: bool| {
        let (ai, aj) = p.alphas(t);
        Step {
            t,
            alpha_i: ai.clamp(h.lower(), h.upper()),
            alpha_j: aj.clamp(h.lower(), h.upper()),
            newton_iterations: iters,
            at_bound,
        }
    };

    let (d_hi, _) = p.derivs(t_hi)?;
    if d_hi <= 0.0 {
        return Ok(finish(t_hi, 0, true));
    }

    // φ'(a) < 0 < φ'(b) throughout
    let (mut a, mut b) = (0.0, t_hi);
    let mut t = -d0 / c0;
    if !(t > a && t < b) {
        t = 0.5 * (a + b);
    }
    let mut iters = 0;
    while iters < MAX_NEWTON {
        iters += 1;
        let (d1, d2) = p.derivs(t)?;
        if d1.abs() <= DERIV_TOL {
            break;
        }
        if d1 < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let newton = t - d1 / d2;
        let next = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if next == t || b - a <= 4.0 * f64::EPSILON * b.abs() {
            t = next;
            break;
        }
        t = next;
    }
    Ok(finish(t, iters, false))
}

/// Convenience wrapper: builds the pair problem from the state and solves it.
pub fn solve_1d(
    state: &DualState,
    h: &Hyperparams,
    i: usize,
    j: usize,
    k: PairKernel,
) -> Result<f64> {
    Ok(solve_pair(&PairProblem::new(state, h, i, j, k), h)?.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelCache, KernelSpec};
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_kernel(cache: &mut KernelCache, i: usize, j: usize) -> PairKernel {
        PairKernel {
            kii: cache.diagonal()[i],
            kjj: cache.diagonal()[j],
            kij: cache.get(i, j),
        }
    }

    fn random_state(seed: u64, n: usize) -> (KernelCache, DualState, Hyperparams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen::<f64>());
        let mut cache = KernelCache::full(KernelSpec::default(), &x);
        let y: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let c = [0.1, 1.0, 10.0, 100.0][rng.gen_range(0..4)];
        let h = Hyperparams::new(c, rng.gen::<f64>() * c);
        let alpha = (0..n).map(|_| rng.gen_range(0.01..0.99) * c).collect();
        let state = DualState::new(alpha, &y, &mut cache, &h);
        (cache, state, h)
    }

    #[test]
    fn interval_examples() {
        let h = Hyperparams::new(2.0, 0.0);
        let iv = step_interval(1.0, 1.0, 1.0, 1.0, &h);
        assert_relative_eq!(iv.t_lo, -(1.0 - h.gamma), epsilon = 1e-15);
        assert_relative_eq!(iv.t_hi, 1.0 - h.gamma, epsilon = 1e-15);

        let iv = step_interval(h.gamma, 1.0, 1.0, 1.0, &h);
        assert_eq!(iv.t_lo, 0.0);

        // y_i = +1, y_j = −1: both variables move by +t
        let iv = step_interval(0.5, 1.5, 1.0, -1.0, &h);
        assert_relative_eq!(iv.t_hi, h.upper() - 1.5, epsilon = 1e-15);
        assert_relative_eq!(iv.t_lo, h.lower() - 0.5, epsilon = 1e-15);
    }

    #[test]
    fn curvature_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let (mut cache, state, h) = random_state(rng.gen(), 8);
            let i = rng.gen_range(0..8);
            let j = (i + rng.gen_range(1..8)) % 8;
            let k = pair_kernel(&mut cache, i, j);
            let p = PairProblem::new(&state, &h, i, j, k);
            let t = rng.gen_range(p.interval.t_lo..=p.interval.t_hi);
            let (_, d2) = p.derivs(t).unwrap();
            assert!(d2 >= 8.0 / h.c * (1.0 - 1e-12), "phi'' = {d2} < 8/C");
            checked += 1;
        }
    }

    #[test]
    fn symmetric_pair_is_stationary() {
        let h = Hyperparams::new(2.0, 0.0);
        let x = Array2::zeros((2, 1));
        let mut cache = KernelCache::full(KernelSpec::Linear, &x);
        let state = DualState::new(vec![1.0, 1.0], &[1.0, -1.0], &mut cache, &h);
        let k = pair_kernel(&mut cache, 0, 1);
        let (d1, _) = phi_derivs(&state, &h, 0, 1, k, 0.0).unwrap();
        assert_eq!(d1, 0.0);
        assert!(solve_1d(&state, &h, 0, 1, k).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for seed in 0..30 {
            let (mut cache, state, h) = random_state(seed, 6);
            let k = pair_kernel(&mut cache, 1, 4);
            let p = PairProblem::new(&state, &h, 1, 4, k);
            let t = 0.3 * p.interval.t_lo + 0.2 * p.interval.t_hi;
            let eps = 1e-6 * h.c.min(1.0);
            let (d1, d2) = p.derivs(t).unwrap();
            let fd1 = (p.phi_delta(t + eps).unwrap() - p.phi_delta(t - eps).unwrap()) / (2.0 * eps);
            let fd2 = (p.derivs(t + eps).unwrap().0 - p.derivs(t - eps).unwrap().0) / (2.0 * eps);
            assert!(
                (d1 - fd1).abs() <= 1e-5 * d1.abs().max(1.0),
                "seed {seed}: {d1} vs {fd1}"
            );
            assert!(
                (d2 - fd2).abs() <= 1e-5 * d2.abs().max(1.0),
                "seed {seed}: {d2} vs {fd2}"
            );
        }
    }

    #[test]
    fn phi_prime_at_zero_is_minus_violation() {
        for seed in 0..20 {
            let (mut cache, state, h) = random_state(seed, 6);
            let k = pair_kernel(&mut cache, 0, 3);
            let (d1, _) = phi_derivs(&state, &h, 0, 3, k, 0.0).unwrap();
            let v = state.score(&h, 0) - state.score(&h, 3);
            assert_eq!(d1, -v);
        }
    }

    /// Dense grid search over the interval, then local refinement.
    fn grid_minimizer(p: &PairProblem) -> f64 {
        let (lo, hi) = (p.interval.t_lo, p.interval.t_hi);
        let n = 20_000;
        let mut best = (f64::INFINITY, 0.0);
        for s in 0..=n {
            let t = lo + (hi - lo) * s as f64 / n as f64;
            let v = p.phi_delta(t).unwrap();
            if v < best.0 {
                best = (v, t);
            }
        }
        let step = (hi - lo) / n as f64;
        let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if p.phi_delta(m1).unwrap() < p.phi_delta(m2).unwrap() {
                b = m2;
            } else {
                a = m1;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn solution_matches_grid_and_decreases_enough() {
        let mut solved = 0;
        for seed in 0..60 {
            let (mut cache, state, h) = random_state(seed, 6);
            let (i, j) = if state.score(&h, 0) > state.score(&h, 1) {
                (0, 1)
            } else {
                (1, 0)
            };
            if !(state.in_up(&h, i) && state.in_low(&h, j)) {
                continue;
            }
            let k = pair_kernel(&mut cache, i, j);
            let p = PairProblem::new(&state, &h, i, j, k);
            let step = solve_pair(&p, &h).unwrap();
            let grid = grid_minimizer(&p);
            let width = p.interval.t_hi - p.interval.t_lo;
            assert!(
                (step.t - grid).abs() <= 1e-6 * width.max(1.0),
                "seed {seed}: {} vs {grid}",
                step.t
            );
            if !step.at_bound {
                let (d1, _) = p.derivs(step.t).unwrap();
                assert!(d1.abs() <= DERIV_TOL || step.newton_iterations < 100);
            }
            assert!(step.newton_iterations <= 60);
            let decrease = -p.phi_delta(step.t).unwrap();
            assert!(decrease >= 4.0 / h.c * step.t * step.t * (1.0 - 1e-9) - 1e-15);
            solved += 1;
        }
        assert!(solved >= 20);
    }

    #[test]
    fn newton_start_close_in_quadratic_regime() {
        // far from the bounds with a large kernel term the model step v/q is accurate
        let h = Hyperparams::new(100.0, 0.0);
        let x = Array2::from_shape_vec((2, 1), vec![0.0, 3.0]).unwrap();
        let mut cache = KernelCache::full(KernelSpec::Linear, &x);
        let state = DualState::new(vec![50.0, 50.0], &[1.0, -1.0], &mut cache, &h);
        // score_1 = 450 > score_0 = 0, so the violating order is (1, 0)
        let k = pair_kernel(&mut cache, 1, 0);
        let p = PairProblem::new(&state, &h, 1, 0, k);
        let (d0, c0) = p.derivs(0.0).unwrap();
        let model = -d0 / c0;
        let t = solve_pair(&p, &h).unwrap().t;
        let grid = grid_minimizer(&p);
        assert!((t - grid).abs() <= 1e-6);
        assert!((model - t).abs() <= 0.2 * t.abs(), "model {model} vs {t}");
    }

    #[test]
    fn clips_to_short_interval() {
        // α_i one micro-unit below the upper bound: interval [0, 1e−6]
        let h = Hyperparams::new(1.0, 20.0);
        let x = Array2::zeros((2, 1));
        let mut cache = KernelCache::full(KernelSpec::Linear, &x);
        let ai = h.upper() - 1e-6;
        let state = DualState::new(vec![ai, ai], &[1.0, -1.0], &mut cache, &h);
        let k = pair_kernel(&mut cache, 0, 1);
        let p = PairProblem::new(&state, &h, 0, 1, k);
        assert_relative_eq!(p.interval.t_hi, 1e-6, epsilon = 1e-15);
        let step = solve_pair(&p, &h).unwrap();
        assert!(step.at_bound);
        assert_eq!(step.t, p.interval.t_hi);
        assert_eq!(step.alpha_i, h.upper());
    }
}
