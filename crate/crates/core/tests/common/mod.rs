#![allow(dead_code)]

use hypsep::diffkit::Tensor;
use hypsep::nn::{HierarchySpec, FAR, NEAR};
use hypsep::train::cross_entropy;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn all_perms(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in all_perms(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Random groupwise-normalized predictions and one-hot child targets.
pub fn pit_instance(rng: &mut ChaCha8Rng, spec: &HierarchySpec, rows: usize) -> (Tensor, [Tensor; 2]) {
    let k = spec.leaves();
    let mut pred = Tensor::zeros((rows, k));
    for p in [NEAR, FAR] {
        let r = spec.leaf_range(p);
        for i in 0..rows {
            let raw: Vec<f64> = r.clone().map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (j, v) in r.clone().zip(raw) {
                pred[[i, j]] = v / s;
            }
        }
    }
    let targets = [NEAR, FAR].map(|p| {
        let c = spec.children[p];
        let mut t = Tensor::zeros((rows, c));
        for i in 0..rows {
            t[[i, rng.random_range(0..c)]] = 1.0;
        }
        t
    });
    (pred, targets)
}

/// Minimum over every joint assignment of prediction slots to target slots.
pub fn exhaustive_pit(pred: &Tensor, targets: &[Tensor; 2], spec: &HierarchySpec) -> f64 {
    let columns = |p: usize, perm: &[usize]| {
        let off = spec.leaf_range(p).start;
        Tensor::from_shape_fn((pred.nrows(), perm.len()), |(i, j)| pred[[i, off + perm[j]]])
    };
    let mut best = f64::INFINITY;
    for pn in all_perms(spec.children[NEAR]) {
        for pf in all_perms(spec.children[FAR]) {
            let loss = cross_entropy(&columns(NEAR, &pn), &targets[NEAR]).unwrap()
                + cross_entropy(&columns(FAR, &pf), &targets[FAR]).unwrap();
            best = best.min(loss);
        }
    }
    best
}
