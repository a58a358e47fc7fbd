//! Kernel functions and the row cache used by the solver.

use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SklrError};

/// Above this many points the cache switches from a full matrix to LRU rows.
pub const DEFAULT_FULL_THRESHOLD: usize = 8000;
const MIN_LRU_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Linear,
    Polynomial { degree: u32, coef: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { sigma: 1.0 }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                SklrError::InvalidParam(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            KernelSpec::Polynomial { degree: 0, .. } => Err(SklrError::InvalidParam(
                "polynomial degree must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Evaluates the kernel on two equal-length slices.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match *self {
            KernelSpec::Gaussian { sigma } => {
                let mut d2 = 0.0;
                for (x, y) in a.iter().zip(b) {
                    let d = x - y;
                    d2 += d * d;
                }
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, coef } => (dot(a, b) + coef).powi(degree as i32),
        }
    }

    /// True when the induced Gram matrix is guaranteed positive semidefinite.
    pub fn is_psd(&self) -> bool {
        match *self {
            KernelSpec::Gaussian { .. } | KernelSpec::Linear => true,
            KernelSpec::Polynomial { coef, .. } => coef >= 0.0,
        }
    }

    /// Upper bound on |K(x, y)| when known independently of the data.
    pub fn abs_bound(&self) -> Option<f64> {
        match self {
            KernelSpec::Gaussian { .. } => Some(1.0),
            _ => None,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SklrError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(spec.eval(a, b))
}

enum Storage {
    Full(Vec<Arc<[f64]>>),
    Lru(LruCache<usize, Arc<[f64]>>),
}

/// Kernel matrix access for one training set.
///
/// Rows are handed out as `Arc<[f64]>` so the solver can hold two rows at
/// once. Full mode is cheap to clone and share between solvers; an LRU
/// cache belongs to a single solver.
pub struct KernelCache {
    spec: KernelSpec,
    points: Arc<Array2<f64>>,
    storage: Storage,
    diagonal: Vec<f64>,
    hits: u64,
    misses: u64,
}

impl Clone for KernelCache {
    fn clone(&self) -> Self {
        let storage = match &self.storage {
            Storage::Full(rows) => Storage::Full(rows.clone()),
            Storage::Lru(lru) => Storage::Lru(LruCache::new(lru.cap())),
        };
        Self {
            spec: self.spec,
            points: Arc::clone(&self.points),
            storage,
            diagonal: self.diagonal.clone(),
            hits: 0,
            misses: 0,
        }
    }
}

impl KernelCache {
    pub fn new(spec: KernelSpec, points: &Array2<f64>, full_threshold: usize) -> Self {
        let n = points.nrows();
        let capacity = (2 * points.ncols()).max(MIN_LRU_ROWS);
        if n <= full_threshold {
            Self::full(spec, points)
        } else {
            Self::lru(spec, points, capacity)
        }
    }

    pub fn full(spec: KernelSpec, points: &Array2<f64>) -> Self {
        let points = Arc::new(points.as_standard_layout().to_owned());
        let n = points.nrows();
        let rows: Vec<Arc<[f64]>> = (0..n)
            .into_par_iter()
            .map(|i| compute_row(&spec, &points, i))
            .collect();
        let diagonal = (0..n).map(|i| rows[i][i]).collect();
        Self {
            spec,
            points,
            storage: Storage::Full(rows),
            diagonal,
            hits: 0,
            misses: 0,
        }
    }

    pub fn lru(spec: KernelSpec, points: &Array2<f64>, capacity: usize) -> Self {
        let points = Arc::new(points.as_standard_layout().to_owned());
        let diagonal = (0..points.nrows())
            .map(|i| {
                let x = points.row(i);
                let x = x.as_slice().expect("standard layout");
                spec.eval(x, x)
            })
            .collect();
        let cap = NonZeroUsize::new(capacity.max(2)).expect("nonzero");
        Self {
            spec,
            points,
            storage: Storage::Lru(LruCache::new(cap)),
            diagonal,
            hits: 0,
            misses: 0,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn is_full(&self) -> bool {
        matches!(self.storage, Storage::Full(_))
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn row(&mut self, i: usize) -> Arc<[f64]> {
        match &mut self.storage {
            Storage::Full(rows) => Arc::clone(&rows[i]),
            Storage::Lru(lru) => {
                if let Some(row) = lru.get(&i) {
                    self.hits += 1;
                    return Arc::clone(row);
                }
                self.misses += 1;
                let row = compute_row(&self.spec, &self.points, i);
                lru.put(i, Arc::clone(&row));
                row
            }
        }
    }

    pub fn get(&mut self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal[i];
        }
        self.row(i)[j]
    }
}

fn compute_row(spec: &KernelSpec, points: &Array2<f64>, i: usize) -> Arc<[f64]> {
    let xi = points.row(i);
    let xi = xi.as_slice().expect("standard layout");
    points
        .rows()
        .into_iter()
        .map(|xj| spec.eval(xi, xj.as_slice().expect("standard layout")))
        .collect()
}

/// Builds the cache for a training set.
pub fn build_cache(spec: KernelSpec, d: &Dataset, full_threshold: usize) -> KernelCache {
    KernelCache::new(spec, d.features(), full_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_points(n: usize, p: usize, seed: u64) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.gen::<f64>())
    }

    #[test]
    fn eval_examples() {
        let g = KernelSpec::Gaussian { sigma: 1.0 };
        assert_eq!(g.eval(&[0.3, 0.7], &[0.3, 0.7]), 1.0);
        assert_relative_eq!(g.eval(&[0.0, 0.0], &[1.0, 1.0]), (-1.0f64).exp());
        assert_relative_eq!(g.eval(&[0.0, 0.0], &[1.0, 1.0]), 0.367879, epsilon = 1e-6);
        assert_eq!(KernelSpec::Linear.eval(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        let poly = KernelSpec::Polynomial {
            degree: 2,
            coef: 1.0,
        };
        assert_eq!(poly.eval(&[1.0, 2.0], &[3.0, 4.0]), 144.0);
        assert!(kernel_eval(&g, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::Gaussian { sigma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial {
            degree: 0,
            coef: 1.0
        }
        .validate()
        .is_err());
        assert!(KernelSpec::Linear.validate().is_ok());
    }

    #[test]
    fn full_mode_small_dataset() {
        let x = random_points(100, 3, 1);
        let mut cache = KernelCache::new(KernelSpec::default(), &x, DEFAULT_FULL_THRESHOLD);
        assert!(cache.is_full());
        assert!(cache.diagonal().iter().all(|&d| d == 1.0));
        for i in 0..100 {
            let ri = cache.row(i);
            for j in 0..100 {
                assert_eq!(ri[j], cache.row(j)[i]);
            }
            assert_eq!(ri[i], cache.diagonal()[i]);
        }
    }

    #[test]
    fn lru_mode_above_threshold_counts_hits() {
        let x = random_points(10_000, 2, 2);
        let mut cache = KernelCache::new(KernelSpec::default(), &x, DEFAULT_FULL_THRESHOLD);
        assert!(!cache.is_full());
        let a = cache.row(3);
        assert_eq!((cache.hits(), cache.misses()), (0, 1));
        let b = cache.row(3);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
        assert_eq!(&a[..], &b[..]);
    }

    #[test]
    fn lru_eviction_recomputes_identically() {
        let x = random_points(40, 2, 3);
        let mut lru = KernelCache::lru(KernelSpec::default(), &x, 2);
        let first = lru.row(0);
        lru.row(1);
        lru.row(2);
        let again = lru.row(0);
        assert_eq!(lru.misses(), 4);
        assert_eq!(&first[..], &again[..]);
    }

    #[test]
    fn gaussian_gram_is_psd() {
        for seed in 0..10 {
            let n = 10 + (seed as usize * 4);
            let x = random_points(n, 3, seed);
            let mut cache = KernelCache::full(KernelSpec::default(), &x);
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cache.row(i)[j]);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-8, "min eigenvalue {}", eig.min());
        }
    }

    proptest! {
        #[test]
        fn lru_and_full_rows_agree(seed in 0u64..1000, n in 2usize..30, p in 1usize..5) {
            let x = random_points(n, p, seed);
            for spec in [KernelSpec::default(), KernelSpec::Linear, KernelSpec::Polynomial { degree: 3, coef: 0.5 }] {
                let mut full = KernelCache::full(spec, &x);
                let mut lru = KernelCache::lru(spec, &x, 3);
                for i in 0..n {
                    let a = full.row(i);
                    let b = lru.row(i);
                    prop_assert_eq!(&a[..], &b[..]);
                    for j in 0..n {
                        prop_assert_eq!(a[j], full.row(j)[i]);
                    }
                }
                prop_assert_eq!(full.diagonal(), lru.diagonal());
            }
        }
    }
}
