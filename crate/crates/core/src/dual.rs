//! The bounded dual objective, its gradient, and the KKT machinery.
//!
//! The solver keeps `m_s = Σ_t α_t y_t K_st` cached. Everything else the
//! optimality test needs (gradient, index sets, residual) is derived from
//! `m` pointwise, so a step costs two kernel rows and O(N) arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SklrError};
use crate::kernel::KernelCache;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub c: f64,
    pub lambda: f64,
    /// Margin between the box `[γ, C − γ]` and the natural bounds `(0, C)`.
    pub gamma: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub selection_threshold: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            c: 1.0,
            lambda: 0.0,
            gamma: 1e-5,
            kkt_tol: 1e-5,
            max_iter: 10_000,
            selection_threshold: 1e-5,
        }
    }
}

impl Hyperparams {
    pub fn new(c: f64, lambda: f64) -> Self {
        Self {
            c,
            lambda,
            ..Self::default()
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SklrError::InvalidParam(msg));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma < self.c / 2.0) {
            return bad(format!(
                "gamma must lie in (0, C/2), got gamma = {} with C = {}",
                self.gamma, self.c
            ));
        }
        if !(self.kkt_tol > 0.0) {
            return bad(format!(
                "kkt tolerance must be positive, got {}",
                self.kkt_tol
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.selection_threshold > 0.0) {
            return bad(format!(
                "selection threshold must be positive, got {}",
                self.selection_threshold
            ));
        }
        Ok(())
    }

    /// Lower box bound (γ).
    #[inline]
    pub fn lower(&self) -> f64 {
        self.gamma
    }

    /// Upper box bound (C − γ).
    #[inline]
    pub fn upper(&self) -> f64 {
        self.c - self.gamma
    }
}

fn check_unit(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(SklrError::OutOfDomain { value: delta })
    }
}

/// Binary entropy term `δ log δ + (1 − δ) log(1 − δ)`.
pub fn entropy_g(delta: f64) -> Result<f64> {
    check_unit(delta)?;
    Ok(delta * delta.ln() + (1.0 - delta) * (1.0 - delta).ln())
}

/// First derivative `log(δ / (1 − δ))`, the inverse of the logistic function.
pub fn entropy_gp(delta: f64) -> Result<f64> {
    check_unit(delta)?;
    Ok(delta.ln() - (1.0 - delta).ln())
}

/// Second derivative `1 / (δ (1 − δ))`, never below 4.
pub fn entropy_gpp(delta: f64) -> Result<f64> {
    check_unit(delta)?;
    Ok(1.0 / (delta * (1.0 - delta)))
}

// The solver works with α directly; these forms avoid forming 1 − α/C,
// which loses digits when α is close to C.

/// `C·G(α/C)`.
#[inline]
pub(crate) fn c_entropy(alpha: f64, c: f64) -> f64 {
    let rest = c - alpha;
    alpha * (alpha / c).ln() + rest * (rest / c).ln()
}

/// `G'(α/C)`.
#[inline]
pub(crate) fn entropy_slope(alpha: f64, c: f64) -> f64 {
    alpha.ln() - (c - alpha).ln()
}

/// `G''(α/C) / C`.
#[inline]
pub(crate) fn entropy_curvature(alpha: f64, c: f64) -> f64 {
    c / (alpha * (c - alpha))
}

/// Mutable solver state: α and the cached linear term `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    alpha: Vec<f64>,
    m: Vec<f64>,
    y: Vec<f64>,
    objective: f64,
    pub iterations: usize,
}

impl DualState {
    /// Builds a state and computes `m` and the objective from scratch.
    pub fn new(alpha: Vec<f64>, y: &[f64], cache: &mut KernelCache, h: &Hyperparams) -> Self {
        assert_eq!(alpha.len(), y.len());
        assert_eq!(alpha.len(), cache.len());
        let m = linear_term(&alpha, y, cache);
        let mut state = Self {
            alpha,
            m,
            y: y.to_vec(),
            objective: 0.0,
            iterations: 0,
        };
        state.objective = objective(&state, h);
        state
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Objective tracked incrementally across pair updates.
    pub fn tracked_objective(&self) -> f64 {
        self.objective
    }

    /// `Σ α_i y_i`, zero on the feasible set.
    pub fn equality_residual(&self) -> f64 {
        self.alpha.iter().zip(&self.y).map(|(a, y)| a * y).sum()
    }

    /// `−y_i ∇f(α)_i`, the quantity compared across the index sets.
    #[inline]
    pub fn score(&self, h: &Hyperparams, i: usize) -> f64 {
        -self.y[i] * self.grad(h, i)
    }

    #[inline]
    pub(crate) fn grad(&self, h: &Hyperparams, i: usize) -> f64 {
        self.y[i] * self.m[i] + entropy_slope(self.alpha[i], h.c) - h.lambda
    }

    #[inline]
    pub fn in_up(&self, h: &Hyperparams, i: usize) -> bool {
        in_up(self.alpha[i], self.y[i], h)
    }

    #[inline]
    pub fn in_low(&self, h: &Hyperparams, i: usize) -> bool {
        in_low(self.alpha[i], self.y[i], h)
    }

    /// Replaces α_i and α_j, updating `m` with kernel rows i and j.
    /// Returns the change of the objective (new − old), evaluated from the
    /// two touched coordinates only.
    pub(crate) fn apply_pair(
        &mut self,
        h: &Hyperparams,
        (i, j): (usize, usize),
        (new_i, new_j): (f64, f64),
        row_i: &[f64],
        row_j: &[f64],
    ) -> PairDelta {
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let u = (new_i - old_i) * self.y[i];
        let w = (new_j - old_j) * self.y[j];
        let lin_part = u * self.m[i] + w * self.m[j];
        let sq_part = 0.5 * (u * u * row_i[i] + w * w * row_j[j] + 2.0 * u * w * row_i[j]);
        let ents = [
            c_entropy(new_i, h.c),
            c_entropy(old_i, h.c),
            c_entropy(new_j, h.c),
            c_entropy(old_j, h.c),
        ];
        let ent = (ents[0] - ents[1]) + (ents[2] - ents[3]);
        let lin = -h.lambda * ((new_i - old_i) + (new_j - old_j));
        let change = lin_part + sq_part + ent + lin;
        let magnitude = (u * self.m[i]).abs()
            + (w * self.m[j]).abs()
            + sq_part.abs()
            + ents.iter().map(|e| e.abs()).sum::<f64>()
            + lin.abs();

        self.alpha[i] = new_i;
        self.alpha[j] = new_j;
        for ((ms, &ki), &kj) in self.m.iter_mut().zip(row_i).zip(row_j) {
            *ms += u * ki + w * kj;
        }
        self.objective += change;
        PairDelta { change, magnitude }
    }

    /// Recomputes `m` from scratch, e.g. to shed accumulated roundoff.
    pub fn refresh(&mut self, cache: &mut KernelCache, h: &Hyperparams) {
        self.m = linear_term(&self.alpha, &self.y, cache);
        self.objective = objective(self, h);
    }
}

/// Objective change of one pair update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairDelta {
    pub change: f64,
    /// Sum of absolute values of the terms that make up `change`.
    pub magnitude: f64,
}

impl PairDelta {
    /// Worst-case floating-point error of `change`.
    pub fn roundoff(&self) -> f64 {
        16.0 * f64::EPSILON * self.magnitude
    }
}

#[inline]
pub(crate) fn in_up(alpha: f64, y: f64, h: &Hyperparams) -> bool {
    (y > 0.0 && alpha < h.upper()) || (y < 0.0 && alpha > h.lower())
}

#[inline]
pub(crate) fn in_low(alpha: f64, y: f64, h: &Hyperparams) -> bool {
    (y < 0.0 && alpha < h.upper()) || (y > 0.0 && alpha > h.lower())
}

/// `m_s = Σ_t α_t y_t K_st`, computed row by row.
pub fn linear_term(alpha: &[f64], y: &[f64], cache: &mut KernelCache) -> Vec<f64> {
    let n = alpha.len();
    let mut m = vec![0.0; n];
    for (s, ms) in m.iter_mut().enumerate() {
        let row = cache.row(s);
        *ms = (0..n).map(|t| alpha[t] * y[t] * row[t]).sum();
    }
    m
}

/// Objective value from the cached `m`:
/// `½ Σ α_i y_i m_i + C Σ G(α_i / C) − λ Σ α_i`.
pub fn objective(state: &DualState, h: &Hyperparams) -> f64 {
    objective_parts(&state.alpha, &state.y, &state.m, h)
}

pub(crate) fn objective_parts(alpha: &[f64], y: &[f64], m: &[f64], h: &Hyperparams) -> f64 {
    let mut quad = 0.0;
    let mut ent = 0.0;
    let mut sum = 0.0;
    for ((&a, &yi), &mi) in alpha.iter().zip(y).zip(m) {
        quad += a * yi * mi;
        ent += c_entropy(a, h.c);
        sum += a;
    }
    0.5 * quad + ent - h.lambda * sum
}

/// Objective of an arbitrary α, building `m` from the cache.
pub fn objective_at(alpha: &[f64], y: &[f64], cache: &mut KernelCache, h: &Hyperparams) -> f64 {
    let m = linear_term(alpha, y, cache);
    objective_parts(alpha, y, &m, h)
}

/// `∇f(α)_i = y_i m_i + G'(α_i/C) − λ`.
pub fn gradient_component(state: &DualState, h: &Hyperparams, i: usize) -> Result<f64> {
    if i >= state.len() {
        return Err(SklrError::InvalidParam(format!(
            "index {i} out of range for {} variables",
            state.len()
        )));
    }
    Ok(state.grad(h, i))
}

/// Full gradient recomputed from scratch (no cached `m`).
pub fn gradient_from_scratch(
    alpha: &[f64],
    y: &[f64],
    cache: &mut KernelCache,
    h: &Hyperparams,
) -> Vec<f64> {
    let m = linear_term(alpha, y, cache);
    (0..alpha.len())
        .map(|i| y[i] * m[i] + entropy_slope(alpha[i], h.c) - h.lambda)
        .collect()
}

/// `(I_up, I_low)` with strict comparisons against γ and C − γ.
pub fn index_sets(state: &DualState, h: &Hyperparams) -> (Vec<usize>, Vec<usize>) {
    let up = (0..state.len()).filter(|&i| state.in_up(h, i)).collect();
    let low = (0..state.len()).filter(|&i| state.in_low(h, i)).collect();
    (up, low)
}

/// Extremes of `−y∇f` over the two index sets, ties going to the smaller index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremes {
    pub i_up: usize,
    pub max_up: f64,
    pub j_low: usize,
    pub min_low: f64,
}

impl Extremes {
    pub fn gap(&self) -> f64 {
        self.max_up - self.min_low
    }
}

pub fn extremes(state: &DualState, h: &Hyperparams) -> Result<Extremes> {
    extremes_of(state.alpha(), state.labels(), h, |i| state.score(h, i))
}

pub(crate) fn extremes_of(
    alpha: &[f64],
    y: &[f64],
    h: &Hyperparams,
    score: impl Fn(usize) -> f64,
) -> Result<Extremes> {
    let mut best_up: Option<(usize, f64)> = None;
    let mut best_low: Option<(usize, f64)> = None;
    for i in 0..alpha.len() {
        let s = score(i);
        if in_up(alpha[i], y[i], h) && best_up.is_none_or(|(_, v)| s > v) {
            best_up = Some((i, s));
        }
        if in_low(alpha[i], y[i], h) && best_low.is_none_or(|(_, v)| s < v) {
            best_low = Some((i, s));
        }
    }
    let (i_up, max_up) = best_up.ok_or(SklrError::EmptyIndexSet("I_up"))?;
    let (j_low, min_low) = best_low.ok_or(SklrError::EmptyIndexSet("I_low"))?;
    Ok(Extremes {
        i_up,
        max_up,
        j_low,
        min_low,
    })
}

/// `max_{I_up} −y_i∇f_i − min_{I_low} −y_i∇f_i`.
pub fn kkt_residual(state: &DualState, h: &Hyperparams) -> Result<f64> {
    Ok(extremes(state, h)?.gap())
}

/// KKT residual of an arbitrary α with the gradient recomputed from scratch.
pub fn kkt_residual_from_scratch(
    alpha: &[f64],
    y: &[f64],
    cache: &mut KernelCache,
    h: &Hyperparams,
) -> Result<f64> {
    let g = gradient_from_scratch(alpha, y, cache, h);
    Ok(extremes_of(alpha, y, h, |i| -y[i] * g[i])?.gap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_cache(n: usize) -> KernelCache {
        // linear kernel on unit vectors gives K = I
        let x = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 });
        KernelCache::full(KernelSpec::Linear, &x)
    }

    fn random_instance(seed: u64, n: usize) -> (KernelCache, Vec<f64>, Vec<f64>, Hyperparams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>());
        let cache = KernelCache::full(KernelSpec::default(), &x);
        let y: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let c = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
        let h = Hyperparams::new(c, rng.gen::<f64>() * c);
        let alpha = (0..n).map(|_| rng.gen_range(0.05..0.95) * c).collect();
        (cache, y, alpha, h)
    }

    #[test]
    fn entropy_values() {
        assert_relative_eq!(
            entropy_g(0.5).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_relative_eq!(entropy_g(0.25).unwrap(), -0.562335, epsilon = 1e-6);
        assert_relative_eq!(
            entropy_g(0.25).unwrap(),
            0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln(),
            epsilon = 1e-15
        );
        assert_eq!(entropy_gp(0.5).unwrap(), 0.0);
        assert_relative_eq!(entropy_gp(0.9).unwrap(), 9f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(entropy_gp(0.9).unwrap(), 2.197225, epsilon = 1e-6);
        assert_eq!(entropy_gpp(0.5).unwrap(), 4.0);
        assert_relative_eq!(entropy_gpp(0.1).unwrap(), 11.1111, epsilon = 1e-4);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(entropy_g(bad).is_err());
            assert!(entropy_gp(bad).is_err());
            assert!(entropy_gpp(bad).is_err());
        }
    }

    proptest! {
        #[test]
        fn entropy_symmetries(d in 1e-9f64..(1.0 - 1e-9)) {
            let g = entropy_g(d).unwrap();
            prop_assert!((g - entropy_g(1.0 - d).unwrap()).abs() <= 1e-12);
            prop_assert!((-std::f64::consts::LN_2 - 1e-15..0.0).contains(&g));
            prop_assert!((entropy_gp(d).unwrap() + entropy_gp(1.0 - d).unwrap()).abs() <= 1e-9);
            prop_assert!(entropy_gpp(d).unwrap() >= 4.0);
        }

        #[test]
        fn alpha_forms_match_delta_forms(a in 0.001f64..0.999, c in 0.01f64..100.0) {
            let alpha = a * c;
            prop_assert!((c_entropy(alpha, c) - c * entropy_g(a).unwrap()).abs() <= 1e-10 * c.max(1.0));
            prop_assert!((entropy_slope(alpha, c) - entropy_gp(a).unwrap()).abs() <= 1e-9);
            prop_assert!((entropy_curvature(alpha, c) * c / entropy_gpp(a).unwrap() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn two_point_objective_by_hand() {
        let c = 3.0;
        let h = Hyperparams::new(c, 0.0);
        let mut cache = identity_cache(2);
        let state = DualState::new(vec![c / 2.0, c / 2.0], &[1.0, -1.0], &mut cache, &h);
        // ½(α₁² + α₂²) + 2C·G(½) = C²/4 − 2C log 2
        let expected = c * c / 4.0 - 2.0 * c * std::f64::consts::LN_2;
        assert_relative_eq!(objective(&state, &h), expected, epsilon = 1e-13);
    }

    #[test]
    fn lambda_term_is_linear() {
        let (mut cache, y, alpha, h) = random_instance(5, 8);
        let h0 = h.with_lambda(0.0);
        let h1 = h.with_lambda(1.0);
        let s = DualState::new(alpha.clone(), &y, &mut cache, &h0);
        let sum: f64 = alpha.iter().sum();
        assert_relative_eq!(
            objective(&s, &h1) - objective(&s, &h0),
            -sum,
            epsilon = 1e-12
        );
        for i in 0..8 {
            let g0 = gradient_component(&s, &h0, i).unwrap();
            let g1 = gradient_component(&s, &h1, i).unwrap();
            assert_relative_eq!(g0 - g1, 1.0, epsilon = 1e-12);
        }
        assert!(gradient_component(&s, &h0, 8).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..20 {
            let (mut cache, y, alpha, h) = random_instance(seed, 6);
            let s = DualState::new(alpha.clone(), &y, &mut cache, &h);
            let eps = 1e-6;
            for i in 0..6 {
                let mut plus = alpha.clone();
                plus[i] += eps;
                let mut minus = alpha.clone();
                minus[i] -= eps;
                let fd = (objective_at(&plus, &y, &mut cache, &h)
                    - objective_at(&minus, &y, &mut cache, &h))
                    / (2.0 * eps);
                let g = gradient_component(&s, &h, i).unwrap();
                assert!((g - fd).abs() <= 1e-5, "seed {seed} i {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn centered_gradient_is_zero() {
        // α_i = C/2 with m_i = 0 (zero kernel) and λ = 0
        let h = Hyperparams::new(2.0, 0.0);
        let x = Array2::zeros((2, 1));
        let mut zero = KernelCache::full(KernelSpec::Linear, &x);
        let s = DualState::new(vec![1.0, 1.0], &[1.0, -1.0], &mut zero, &h);
        assert_eq!(s.m(), &[0.0, 0.0]);
        assert_eq!(gradient_component(&s, &h, 0).unwrap(), 0.0);
    }

    #[test]
    fn index_set_membership() {
        let h = Hyperparams::new(1.0, 0.0);
        let mut cache = identity_cache(4);
        let y = [1.0, 1.0, -1.0, -1.0];
        let interior = DualState::new(vec![0.5; 4], &y, &mut cache, &h);
        let (up, low) = index_sets(&interior, &h);
        assert_eq!(up, vec![0, 1, 2, 3]);
        assert_eq!(low, vec![0, 1, 2, 3]);

        let edge = DualState::new(
            vec![h.gamma, h.upper(), h.gamma, h.upper()],
            &y,
            &mut cache,
            &h,
        );
        let (up, low) = index_sets(&edge, &h);
        // +1 at γ: up only; +1 at C−γ: low only; −1 at γ: low only; −1 at C−γ: up only
        assert_eq!(up, vec![0, 3]);
        assert_eq!(low, vec![1, 2]);
    }

    #[test]
    fn unbalanced_pair_has_positive_residual() {
        // K = I, C = 1, λ = 0, y = (+1, −1), α = (0.2, 0.2):
        // m = (0.2, −0.2); ∇f = (0.2 + ln(0.25), 0.2 + ln(0.25)) on both;
        // scores: −∇f₁ = 1.1863, +∇f₂ = −1.1863 → residual 2.3726
        let h = Hyperparams::new(1.0, 0.0);
        let mut cache = identity_cache(2);
        let s = DualState::new(vec![0.2, 0.2], &[1.0, -1.0], &mut cache, &h);
        let g = 0.2 + (0.2f64 / 0.8).ln();
        assert_relative_eq!(kkt_residual(&s, &h).unwrap(), -2.0 * g, epsilon = 1e-12);
        assert!(kkt_residual(&s, &h).unwrap() > 0.0);
    }

    #[test]
    fn residual_is_permutation_invariant() {
        let (mut cache, y, alpha, h) = random_instance(11, 7);
        let s = DualState::new(alpha.clone(), &y, &mut cache, &h);
        let r = kkt_residual(&s, &h).unwrap();
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let m: Vec<f64> = perm.iter().map(|&p| s.m()[p]).collect();
        let pa: Vec<f64> = perm.iter().map(|&p| alpha[p]).collect();
        let py: Vec<f64> = perm.iter().map(|&p| y[p]).collect();
        let g: Vec<f64> = (0..7)
            .map(|i| py[i] * m[i] + entropy_slope(pa[i], h.c) - h.lambda)
            .collect();
        let r2 = extremes_of(&pa, &py, &h, |i| -py[i] * g[i]).unwrap().gap();
        assert_eq!(r, r2);
    }

    #[test]
    fn tracked_objective_matches_recomputation() {
        let (mut cache, y, alpha, h) = random_instance(21, 12);
        let mut s = DualState::new(alpha, &y, &mut cache, &h);
        // pair moves preserve whatever imbalance the start has
        let eq0 = s.equality_residual();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let i = rng.gen_range(0..12);
            let mut j = rng.gen_range(0..12);
            while j == i {
                j = rng.gen_range(0..12);
            }
            // feasible move along (y_i, −y_j)
            let lo_hi = |a: f64, dir: f64| {
                if dir > 0.0 {
                    (h.lower() - a, h.upper() - a)
                } else {
                    (a - h.upper(), a - h.lower())
                }
            };
            let (li, hi) = lo_hi(s.alpha()[i], y[i]);
            let (lj, hj) = lo_hi(s.alpha()[j], -y[j]);
            let t = rng.gen_range(li.max(lj)..=hi.min(hj)) * 0.5;
            let new_i = s.alpha()[i] + t * y[i];
            let new_j = s.alpha()[j] - t * y[j];
            let (ri, rj) = (cache.row(i), cache.row(j));
            s.apply_pair(&h, (i, j), (new_i, new_j), &ri, &rj);
        }
        let fresh = objective_at(s.alpha(), &y, &mut cache, &h);
        assert!((s.tracked_objective() - fresh).abs() <= 1e-8 * fresh.abs().max(1.0));
        assert!((objective(&s, &h) - fresh).abs() <= 1e-8 * fresh.abs().max(1.0));
        let m_fresh = linear_term(s.alpha(), &y, &mut cache);
        for (a, b) in s.m().iter().zip(&m_fresh) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
        assert!((s.equality_residual() - eq0).abs() <= 1e-10 * s.alpha().iter().sum::<f64>());
    }

    #[test]
    fn midpoint_convexity_and_entropy_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..20 {
            let (mut cache, y, a, h) = random_instance(seed, 6);
            let b: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..0.95) * h.c).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, z)| 0.5 * (x + z)).collect();
            let fa = objective_at(&a, &y, &mut cache, &h);
            let fb = objective_at(&b, &y, &mut cache, &h);
            let fm = objective_at(&mid, &y, &mut cache, &h);
            assert!(fm < 0.5 * (fa + fb) + 1e-12);
            let ent: f64 = a.iter().map(|&v| c_entropy(v, h.c)).sum();
            assert!(ent < 0.0 && ent >= -h.c * 6.0 * std::f64::consts::LN_2);
        }
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        assert!(Hyperparams::new(0.0, 0.0).validate().is_err());
        assert!(Hyperparams::new(1.0, -0.1).validate().is_err());
        assert!(Hyperparams::new(1e-5, 0.0).validate().is_err());
        let h = Hyperparams {
            kkt_tol: 0.0,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }
}
