//! Deterministic synthetic datasets for tests, benchmarks and the CLI.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;

/// Two isotropic gaussian clouds in `p` dimensions whose centers are
/// `separation` apart along the diagonal. Positives come first.
pub fn gaussian_blobs(n_pos: usize, n_neg: usize, p: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let offset = separation / (2.0 * (p as f64).sqrt());
    let n = n_pos + n_neg;
    let labels: Vec<f64> = (0..n).map(|i| if i < n_pos { 1.0 } else { -1.0 }).collect();
    let x = Array2::from_shape_fn((n, p), |(i, _)| labels[i] * offset + noise.sample(&mut rng));
    Dataset::new(x, labels).expect("both classes present")
}

/// 99 points in the plane, 50 positive and 49 negative. Most points lie
/// well away from a tilted line, a few straddle it, so no line separates the
/// classes while a linear boundary remains sensible.
pub fn planar_99(seed: u64) -> Dataset {
    banded_plane(50, 49, 0.05, 0.3, seed)
}

/// Two classes on either side of the line `x₂ = 0.3·x₁`. A point's distance
/// across the line is `u^shape·(1 + overlap) − overlap` for uniform `u`, so
/// `shape < 1` pushes mass away from the line and `overlap` lets each class
/// reach into the other side.
pub fn banded_plane(n_pos: usize, n_neg: usize, overlap: f64, shape: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_pos + n_neg;
    let (cos, sin) = (1.0 / 1.09f64.sqrt(), 0.3 / 1.09f64.sqrt());
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i < n_pos { 1.0 } else { -1.0 };
        let along = rng.gen_range(-1.0..1.0);
        let across = y * (rng.gen::<f64>().powf(shape) * (1.0 + overlap) - overlap);
        rows.push(vec![along * cos - across * sin, along * sin + across * cos]);
        labels.push(y);
    }
    Dataset::from_rows(&rows, labels).expect("both classes present")
}

/// Uniform points in `[0,1]^p` labelled by a noisy curved boundary; both
/// classes are guaranteed to appear.
pub fn curved_uniform(n: usize, p: usize, flip: f64, seed: u64) -> Dataset {
    assert!(n >= 2 && p >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.gen::<f64>());
    let mut y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| {
            let s: f64 = r
                .iter()
                .enumerate()
                .map(|(j, v)| (3.0 * v + j as f64).sin())
                .sum();
            let label = if s > 0.5 * p as f64 * 0.6 { 1.0 } else { -1.0 };
            if rng.gen::<f64>() < flip {
                -label
            } else {
                label
            }
        })
        .collect();
    if y.iter().all(|&v| v > 0.0) {
        y[0] = -1.0;
    }
    if y.iter().all(|&v| v < 0.0) {
        y[0] = 1.0;
    }
    Dataset::new(x, y).expect("both classes present")
}

/// A small random instance of at most `max_n` points and `max_p` features.
pub fn random_small(max_n: usize, max_p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_n.max(2));
    let p = rng.gen_range(1..=max_p.max(1));
    let x = Array2::from_shape_fn((n, p), |_| rng.gen::<f64>());
    let mut y: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    y[0] = 1.0;
    y[1] = -1.0;
    Dataset::new(x, y).expect("both classes present")
}

/// A mixed suite of moderately sized instances: blobs at several
/// separations and imbalance levels plus curved-boundary sets.
pub fn suite(count: usize, seed: u64) -> Vec<Dataset> {
    (0..count)
        .map(|k| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            match k % 3 {
                0 => gaussian_blobs(60, 40, 2, 2.0 + (k % 4) as f64 * 0.5, s),
                1 => gaussian_blobs(50, 50, 3, 3.0, s),
                _ => curved_uniform(100, 2, 0.05, s),
            }
        })
        .collect()
}
