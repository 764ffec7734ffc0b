#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustlr::{SparseDataset, SparseRow};

/// Sparse random design with labels from a noisy logistic model.
pub fn random_instance(seed: u64) -> SparseDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..60);
    let m = rng.random_range(2..8);
    let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        let mut eta = 0.3;
        for (j, t) in theta.iter().enumerate() {
            if rng.random_bool(0.7) {
                let v: f64 = rng.random_range(-2.0..2.0);
                idx.push(j);
                val.push(v);
                eta += t * v;
            }
        }
        rows.push(SparseRow::new(idx, val).unwrap());
        let p = 1.0 / (1.0 + (-eta).exp());
        labels.push(u8::from(rng.random_bool(p)));
    }
    SparseDataset::new(rows, labels, m).unwrap()
}

pub fn random_point(m: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    (
        rng.random_range(-1.0..1.0),
        (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
}
