//! Brute-force references for the ranking metrics. Quadratic on purpose.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (in, ood) pairs ranked correctly, ties counting one half.
pub fn pairwise_auroc(in_s: &[f64], ood_s: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &a in in_s {
        for &b in ood_s {
            if a > b {
                acc += 1.0;
            } else if a == b {
                acc += 0.5;
            }
        }
    }
    acc / (in_s.len() * ood_s.len()) as f64
}

/// Average precision by enumerating every distinct in-distribution score as a
/// threshold and counting positives at or above it.
pub fn enumerated_aupr(in_s: &[f64], ood_s: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = in_s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n = in_s.len() as f64;
    thresholds
        .iter()
        .map(|&t| {
            let tp = in_s.iter().filter(|&&s| s >= t).count() as f64;
            let fp = ood_s.iter().filter(|&&s| s >= t).count() as f64;
            let hits = in_s.iter().filter(|&&s| s == t).count() as f64;
            tp / (tp + fp) * hits / n
        })
        .sum()
}

/// Sweeps every observed score as a `≥` threshold and keeps the largest one
/// whose TPR reaches `target`.
pub fn swept_fpr(in_s: &[f64], ood_s: &[f64], target: f64) -> f64 {
    let mut best: Option<f64> = None;
    for &t in in_s.iter().chain(ood_s) {
        let tpr = in_s.iter().filter(|&&s| s >= t).count() as f64 / in_s.len() as f64;
        if tpr >= target && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum score always reaches full TPR");
    ood_s.iter().filter(|&&s| s >= t).count() as f64 / ood_s.len() as f64
}

/// Random scores with a controllable amount of exact ties.
pub fn random_instance(seed: u64, max_len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_len);
    let m = rng.gen_range(1..=max_len);
    // Coarse grids produce ties; fine ones almost never do.
    let levels: f64 = [3.0, 20.0, 1e9][rng.gen_range(0..3)];
    let shift: f64 = rng.gen_range(-1.0..1.5);
    let draw = |offset: f64, rng: &mut ChaCha8Rng| ((rng.gen::<f64>() + offset) * levels).round() / levels;
    let in_s = (0..n).map(|_| draw(shift, &mut rng)).collect();
    let ood_s = (0..m).map(|_| draw(0.0, &mut rng)).collect();
    (in_s, ood_s)
}
