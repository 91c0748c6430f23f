//! Independent brute-force references shared by the unit and acceptance tests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use routedk::decode::{normalize, NormalizedBundleSet, Voter};

/// Brute force over item bitmasks: a predicted bundle is a hit when its mask
/// has no bits outside some truth mask.
pub fn metrics_oracle(pred: &[Vec<usize>], truth: &[Vec<usize>]) -> (f64, f64, Option<f64>) {
    let mask = |b: &[usize]| b.iter().fold(0u32, |m, &i| m | (1 << i));
    let tm: Vec<u32> = truth.iter().map(|g| mask(g)).collect();
    let mut hits = 0;
    let mut ratios = Vec::new();
    for b in pred {
        let bm = mask(b);
        let mut best: Option<f64> = None;
        for (g, &gm) in truth.iter().zip(&tm) {
            if bm & !gm == 0 {
                let r = (bm & gm).count_ones() as f64 / g.len() as f64;
                best = Some(best.map_or(r, |x: f64| x.max(r)));
            }
        }
        if let Some(r) = best {
            hits += 1;
            ratios.push(r);
        }
    }
    let found = tm.iter().filter(|&&gm| pred.iter().any(|b| mask(b) & !gm == 0)).count();
    let p = if pred.is_empty() { 0.0 } else { hits as f64 / pred.len() as f64 };
    let cov = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    (p, found as f64 / truth.len() as f64, cov)
}

pub fn random_session(rng: &mut ChaCha8Rng) -> (NormalizedBundleSet, Vec<Vec<usize>>) {
    let mut items: Vec<usize> = (0..10).collect();
    items.shuffle(rng);
    let mut truth = Vec::new();
    let mut rest = &items[..];
    for _ in 0..rng.gen_range(1..=3) {
        let k = rng.gen_range(2..=3).min(rest.len());
        if k < 2 {
            break;
        }
        let mut g = rest[..k].to_vec();
        g.sort();
        truth.push(g);
        rest = &rest[k..];
    }
    let pred: Vec<Vec<usize>> = (0..rng.gen_range(0..=5))
        .map(|_| {
            let k = rng.gen_range(2..=4);
            // Bias toward subsets of truth so hits are common.
            if rng.gen_bool(0.6) {
                let g = &truth[rng.gen_range(0..truth.len())];
                g.choose_multiple(rng, k.min(g.len())).copied().collect()
            } else {
                (0..10).collect::<Vec<_>>().choose_multiple(rng, k).copied().collect()
            }
        })
        .collect();
    (normalize(&pred), truth)
}

/// Frequency count by pairwise comparison of sets, no hashing or sorting.
pub fn vote_oracle(voters: &[Voter]) -> NormalizedBundleSet {
    let mut best: Option<(usize, f64, usize, &NormalizedBundleSet)> = None;
    for v in voters {
        let same: Vec<&Voter> = voters.iter().filter(|w| w.set == v.set).collect();
        let count = same.len();
        let mean = same.iter().map(|w| w.log_prob).sum::<f64>() / count as f64;
        let first = same.iter().map(|w| w.sample_index).min().unwrap();
        let better = match best {
            None => true,
            Some((c, m, f, _)) => count > c || (count == c && (mean > m || (mean == m && first < f))),
        };
        if better {
            best = Some((count, mean, first, &v.set));
        }
    }
    best.unwrap().3.clone()
}

/// Up to nine voters over five fixed answers, with shuffled sample indices.
pub fn random_voters(rng: &mut ChaCha8Rng) -> Vec<Voter> {
    let pool: Vec<NormalizedBundleSet> = (0..5)
        .map(|i| normalize(&[vec![i, i + 10], vec![20 + i % 2, 30]]))
        .collect();
    let n = rng.gen_range(1..=9);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices
        .into_iter()
        .map(|i| Voter {
            set: pool[rng.gen_range(0..pool.len())].clone(),
            // Coarse values make log-probability ties common.
            log_prob: -(rng.gen_range(0..3) as f64),
            sample_index: i,
        })
        .collect()
}
