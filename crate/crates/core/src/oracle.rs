//! Reference solvers for small instances.
//!
//! Neither solver shares code with SMO beyond the kernel definition: the
//! Gram matrix, gradient and objective are rebuilt here from scratch.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::dual::Hyperparams;
use crate::error::{Result, SklrError};
use crate::kernel::KernelSpec;

pub const ORACLE_MAX_N: usize = 200;
pub const ORACLE_TOL: f64 = 1e-10;
pub const ORACLE_MAX_ITER: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub alpha: Vec<f64>,
    /// Multiplier of `yᵀα = 0`.
    pub psi: f64,
    /// `‖(∇f + ψy, yᵀα)‖∞` at the returned point.
    pub kkt_norm: f64,
    pub newton_iterations: usize,
}

fn gram(d: &Dataset, k: &KernelSpec) -> DMatrix<f64> {
    let n = d.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| d.row(i).to_vec()).collect();
    DMatrix::from_fn(n, n, |i, j| k.eval(&rows[i], &rows[j]))
}

/// `C·G(α/C)` for `α ∈ (0, C)`.
fn ent(a: f64, c: f64) -> f64 {
    a * (a / c).ln() + (c - a) * ((c - a) / c).ln()
}

struct Problem {
    q: DMatrix<f64>,
    y: DVector<f64>,
    c: f64,
    lambda: f64,
}

impl Problem {
    fn new(d: &Dataset, k: &KernelSpec, h: &Hyperparams) -> Self {
        let y = DVector::from_column_slice(d.labels());
        let kmat = gram(d, k);
        let q = DMatrix::from_fn(d.len(), d.len(), |i, j| y[i] * y[j] * kmat[(i, j)]);
        Problem {
            q,
            y,
            c: h.c,
            lambda: h.lambda,
        }
    }

    fn objective(&self, a: &DVector<f64>) -> f64 {
        let quad = 0.5 * a.dot(&(&self.q * a));
        let e: f64 = a.iter().map(|&v| ent(v, self.c)).sum();
        quad + e - self.lambda * a.sum()
    }

    fn gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.q * a;
        for (gi, &ai) in g.iter_mut().zip(a.iter()) {
            *gi += ai.ln() - (self.c - ai).ln() - self.lambda;
        }
        g
    }

    fn interior(&self, a: &DVector<f64>) -> bool {
        a.iter().all(|&v| v > 0.0 && v < self.c)
    }

    /// Least-squares multiplier and the resulting residual norm.
    fn residual(&self, a: &DVector<f64>) -> (f64, f64) {
        let g = self.gradient(a);
        let n = a.len() as f64;
        let psi = -self.y.dot(&g) / n;
        let stat = (g + &self.y * psi).amax();
        (psi, stat.max(self.y.dot(a).abs()))
    }
}

/// Damped Newton on the stationarity system of the γ-free dual:
/// `∇f(α) + ψy = 0`, `yᵀα = 0`, with `α` kept strictly inside `(0, C)`.
pub fn kkt_newton_solve(d: &Dataset, k: &KernelSpec, h: &Hyperparams) -> Result<OracleSolution> {
    d.validate_for_training()?;
    k.validate()?;
    if d.len() > ORACLE_MAX_N {
        return Err(SklrError::Precondition(format!(
            "oracle supports at most {ORACLE_MAX_N} points, got {}",
            d.len()
        )));
    }
    if !k.is_psd() {
        return Err(SklrError::Precondition(
            "oracle requires a PSD kernel".into(),
        ));
    }
    if !(h.c > 0.0 && h.lambda >= 0.0) {
        return Err(SklrError::InvalidParam("need C > 0 and lambda >= 0".into()));
    }
    let p = Problem::new(d, k, h);
    let n = d.len();
    let (n_pos, n_neg) = (d.n_pos() as f64, d.n_neg() as f64);
    // interior and feasible: each class holds half of C·n_min in total
    let mass = 0.5 * p.c * n_pos.min(n_neg);
    let mut a = DVector::from_fn(n, |i, _| {
        if p.y[i] > 0.0 {
            mass / n_pos
        } else {
            mass / n_neg
        }
    });

    for it in 0..ORACLE_MAX_ITER {
        let (psi, norm) = p.residual(&a);
        if norm <= ORACLE_TOL {
            return Ok(OracleSolution {
                alpha: a.iter().copied().collect(),
                psi,
                kkt_norm: norm,
                newton_iterations: it,
            });
        }
        let g = p.gradient(&a);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&p.q);
        for i in 0..n {
            jac[(i, i)] += p.c / (a[i] * (p.c - a[i]));
            jac[(i, n)] = p.y[i];
            jac[(n, i)] = p.y[i];
        }
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -g[i];
        }
        rhs[n] = -p.y.dot(&a);
        let sol = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SklrError::Contract("singular KKT matrix in oracle".into()))?;
        let dir = sol.rows(0, n).into_owned();

        let f0 = p.objective(&a);
        let slope = g.dot(&dir);
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial = &a + &dir * s;
            if p.interior(&trial) {
                let armijo = p.objective(&trial) <= f0 + 1e-4 * s * slope;
                // near the optimum objective differences drown in roundoff
                let smaller_residual = p.residual(&trial).1 < norm;
                if armijo || smaller_residual {
                    accepted = Some(trial);
                    break;
                }
            }
            s *= 0.5;
        }
        a = accepted.ok_or_else(|| {
            SklrError::Contract(format!("oracle line search failed at iteration {it}"))
        })?;
    }
    let (_, norm) = p.residual(&a);
    Err(SklrError::Contract(format!(
        "oracle Newton did not converge in {ORACLE_MAX_ITER} iterations (residual {norm:e})"
    )))
}

/// Objective of the γ-free dual at an arbitrary interior α, computed with the
/// oracle's own Gram matrix.
pub fn oracle_objective(d: &Dataset, k: &KernelSpec, h: &Hyperparams, alpha: &[f64]) -> f64 {
    Problem::new(d, k, h).objective(&DVector::from_column_slice(alpha))
}

/// Two points with opposite labels force `α₁ = α₂ = a`; minimizes
/// `f(a, a)` over `[γ, C − γ]` by a dense grid followed by bisection on the
/// sign of the derivative.
pub fn reduced_1d_oracle(d: &Dataset, k: &KernelSpec, h: &Hyperparams) -> Result<[f64; 2]> {
    if d.len() != 2 {
        return Err(SklrError::Precondition(format!(
            "reduced oracle needs exactly 2 points, got {}",
            d.len()
        )));
    }
    if d.labels()[0] == d.labels()[1] {
        return Err(SklrError::Precondition(
            "reduced oracle needs opposite labels".into(),
        ));
    }
    h.validate()?;
    let (x0, x1) = (d.row(0).to_vec(), d.row(1).to_vec());
    let curv = k.eval(&x0, &x0) + k.eval(&x1, &x1) - 2.0 * k.eval(&x0, &x1);
    let (c, lambda) = (h.c, h.lambda);
    let f = |a: f64| 0.5 * curv * a * a + 2.0 * ent(a, c) - 2.0 * lambda * a;
    let df = |a: f64| curv * a + 2.0 * (a.ln() - (c - a).ln()) - 2.0 * lambda;

    let (lo, hi) = (h.lower(), h.upper());
    const GRID: usize = 2000;
    let at = |i: usize| lo + (hi - lo) * i as f64 / GRID as f64;
    let best = (0..=GRID)
        .min_by(|&i, &j| f(at(i)).total_cmp(&f(at(j))))
        .unwrap_or(0);
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(GRID)));
    if df(a) >= 0.0 {
        return Ok([a, a]);
    }
    if df(b) <= 0.0 {
        return Ok([b, b]);
    }
    while b - a > 1e-13 * c.max(1.0) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if df(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    let m = 0.5 * (a + b);
    Ok([m, m])
}
