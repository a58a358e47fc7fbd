//! Working-set selection.
//!
//! Both rules take `i` as the maximal violator in `I_up`. The first-order
//! rule pairs it with the minimal element of `I_low`; the second-order rule
//! picks the `j` whose quadratic model of the subproblem promises the
//! largest decrease `v² / q`.

use serde::{Deserialize, Serialize};

use crate::dual::{entropy_curvature, extremes, DualState, Hyperparams};
use crate::error::Result;
use crate::kernel::KernelCache;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WssKind {
    FirstOrder,
    #[default]
    SecondOrder,
}

impl std::fmt::Display for WssKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WssKind::FirstOrder => write!(f, "first_order"),
            WssKind::SecondOrder => write!(f, "second_order"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WssChoice {
    pub i: usize,
    pub j: usize,
    /// `−y_i∇f_i + y_j∇f_j` at selection time.
    pub violation: f64,
    /// `−v²/q` for the second-order rule, the violation for first order.
    pub score: f64,
    /// KKT residual (maximal violation) of the state the pair was chosen from.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    Optimal { residual: f64 },
    Pair(WssChoice),
}

impl Selection {
    pub fn pair(&self) -> Option<WssChoice> {
        match self {
            Selection::Pair(c) => Some(*c),
            Selection::Optimal { .. } => None,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            Selection::Pair(c) => c.residual,
            Selection::Optimal { residual } => *residual,
        }
    }
}

/// Curvature of the quadratic model for the pair `(i, j)`:
/// `K_ii + K_jj − 2K_ij + C/(α_i(C−α_i)) + C/(α_j(C−α_j))`.
#[inline]
pub fn pair_curvature(kii: f64, kjj: f64, kij: f64, alpha_i: f64, alpha_j: f64, c: f64) -> f64 {
    kii + kjj - 2.0 * kij + entropy_curvature(alpha_i, c) + entropy_curvature(alpha_j, c)
}

pub fn select_mvp(state: &DualState, h: &Hyperparams) -> Result<Selection> {
    let ex = extremes(state, h)?;
    let gap = ex.gap();
    if gap <= h.kkt_tol {
        return Ok(Selection::Optimal { residual: gap });
    }
    Ok(Selection::Pair(WssChoice {
        i: ex.i_up,
        j: ex.j_low,
        violation: gap,
        score: gap,
        residual: gap,
    }))
}

pub fn select_second_order(
    state: &DualState,
    h: &Hyperparams,
    cache: &mut KernelCache,
) -> Result<Selection> {
    let ex = extremes(state, h)?;
    let gap = ex.gap();
    if gap <= h.kkt_tol {
        return Ok(Selection::Optimal { residual: gap });
    }
    let i = ex.i_up;
    let top = ex.max_up;
    let row_i = cache.row(i);
    let diag = cache.diagonal();
    let alpha = state.alpha();

    let mut best: Option<(usize, f64, f64, f64)> = None;
    for j in 0..state.len() {
        if !state.in_low(h, j) {
            continue;
        }
        let s = state.score(h, j);
        if !(s < top) {
            continue;
        }
        let v = top - s;
        let q = pair_curvature(diag[i], diag[j], row_i[j], alpha[i], alpha[j], h.c);
        let gain = v * v / q;
        if best.is_none_or(|(_, g, _, _)| gain > g) {
            best = Some((j, gain, v, q));
        }
    }
    // the MVP partner is always eligible when gap > 0
    let (j, gain, v, _) = best.expect("eligible partner exists when the gap is positive");
    Ok(Selection::Pair(WssChoice {
        i,
        j,
        violation: v,
        score: -gain,
        residual: gap,
    }))
}

pub fn select(
    kind: WssKind,
    state: &DualState,
    h: &Hyperparams,
    cache: &mut KernelCache,
) -> Result<Selection> {
    match kind {
        WssKind::FirstOrder => select_mvp(state, h),
        WssKind::SecondOrder => select_second_order(state, h, cache),
    }
}

/// Checks that a second-order choice keeps a constant fraction of the
/// maximal violation: `violation ≥ sqrt(min q / max q) · residual`, with the
/// curvature range taken over all eligible partners of `i`.
pub fn satisfies_constant_fraction(
    state: &DualState,
    h: &Hyperparams,
    cache: &mut KernelCache,
    choice: &WssChoice,
) -> bool {
    let row_i = cache.row(choice.i);
    let diag = cache.diagonal();
    let alpha = state.alpha();
    let top = state.score(h, choice.i);
    let (mut q_min, mut q_max) = (f64::INFINITY, 0.0f64);
    for j in 0..state.len() {
        if state.in_low(h, j) && state.score(h, j) < top {
            let q = pair_curvature(
                diag[choice.i],
                diag[j],
                row_i[j],
                alpha[choice.i],
                alpha[j],
                h.c,
            );
            q_min = q_min.min(q);
            q_max = q_max.max(q);
        }
    }
    let theta = (q_min / q_max).sqrt();
    choice.violation >= theta * choice.residual * (1.0 - 1e-12)
}
