//! Independent oracles and seeded fixtures shared by the integration tests.
//!
//! Nothing here calls into the library's own scoring code: each oracle is a
//! from-scratch reimplementation used to cross-check it.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use protoseg::analysis::{EpisodeTable, Heuristic, HeuristicRow, HeuristicVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Spherical k-means cost of a partition with optimal centroids:
/// `sum_j (|S_j| - ||sum of unit vectors in S_j||)`.
pub fn partition_cost(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        let u = unit(p);
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(&u) {
            *s += x;
        }
    }
    (0..k)
        .map(|j| counts[j] as f64 - sums[j].iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum()
}

/// Optimal 2-clustering cost by enumerating every split into two nonempty groups.
pub fn brute_force_two_cluster_cost(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    assert!((2..=16).contains(&n));
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for mask in 1u32..(1 << n) - 1 {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((mask >> i) & 1) as usize;
        }
        best = best.min(partition_cost(points, &labels, 2));
    }
    best
}

/// `n` points in R^3 around two unit centers at least 60 degrees apart, with
/// per-coordinate Gaussian spread `spread`; both groups nonempty.
pub fn two_cluster_instance(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Vec<f64>> {
    let centers = loop {
        let a = unit(&gaussian(rng, 3));
        let b = unit(&gaussian(rng, 3));
        if a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() <= 0.5 {
            break [a, b];
        }
    };
    let mut groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    groups[0] = 0;
    groups[1] = 1;
    groups
        .iter()
        .map(|&g| {
            centers[g]
                .iter()
                .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// mIoU of two label grids over classes `1..=num_classes` by per-class pixel
/// sets; `None` when no foreground class occurs on either side.
pub fn set_intersection_miou(pred: &[u8], gt: &[u8], num_classes: u8) -> Option<f64> {
    let set = |labels: &[u8], c: u8| -> u32 {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .fold(0u32, |acc, (i, _)| acc | (1 << i))
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 1..=num_classes {
        let (p, g) = (set(pred, c), set(gt, c));
        let union = (p | g).count_ones();
        if union > 0 {
            total += (p & g).count_ones() as f64 / union as f64;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// A random heuristic table with roughly `missing` of entries unavailable.
pub fn random_table(rng: &mut ChaCha8Rng, layers: usize, missing: f64) -> EpisodeTable {
    let rows = (0..layers)
        .map(|_| {
            let mut row = HeuristicRow::default();
            for h in Heuristic::ALL {
                if rng.random_bool(missing) {
                    continue;
                }
                let v = match h {
                    Heuristic::Fisher => rng.random_range(0.0..50.0),
                    Heuristic::Entropy => rng.random_range(0.0..2.0),
                    _ => rng.random_range(0.0..1.0),
                };
                row.set(h, Some(v));
            }
            row
        })
        .collect();
    EpisodeTable {
        heuristics: HeuristicVector { rows },
        miou: (0..layers).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

/// Direction and transform the table columns are scored with.
fn direction(h: Heuristic) -> f64 {
    match h {
        Heuristic::Fisher | Heuristic::ReverseMiou | Heuristic::SelfIou => 1.0,
        Heuristic::GramDist | Heuristic::RegRatio | Heuristic::Entropy => -1.0,
    }
}

fn transform(h: Heuristic, x: f64) -> f64 {
    if h == Heuristic::Fisher {
        (1.0 + x).ln()
    } else {
        x
    }
}

/// Per-layer scaled column: min-max over available values, missing values
/// imputed as worst, constant column all zeros; `None` if nothing is available.
fn scaled(t: &EpisodeTable, h: Heuristic) -> Option<Vec<f64>> {
    let vals: Vec<Option<f64>> = t
        .heuristics
        .rows
        .iter()
        .map(|r| r.get(h).map(|x| transform(h, x)))
        .collect();
    let present: Vec<f64> = vals.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = if direction(h) > 0.0 { 0.0 } else { 1.0 };
    Some(
        vals.iter()
            .map(|v| match v {
                _ if hi == lo => 0.0,
                Some(x) => (x - lo) / (hi - lo),
                None => worst,
            })
            .collect(),
    )
}

fn first_max(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |b, i| if xs[i] > xs[b] { i } else { b })
}

/// Brute-force lattice search for exactly three heuristics: nested loops over
/// integer weight levels, strict improvement only, so the lexicographically
/// first optimum wins. Returns (levels, mean mIoU of the selected layers).
pub fn brute_force_grid3(
    tables: &[EpisodeTable],
    hs: [Heuristic; 3],
    levels: usize,
) -> ([usize; 3], f64) {
    let denom = (levels - 1) as f64;
    let cols: Vec<Vec<Option<Vec<f64>>>> = tables
        .iter()
        .map(|t| hs.iter().map(|&h| scaled(t, h)).collect())
        .collect();
    let mut best = ([0; 3], f64::NEG_INFINITY);
    for a in 0..levels {
        for b in 0..levels {
            for c in 0..levels {
                if a + b + c == 0 {
                    continue;
                }
                let w = [a, b, c];
                let mut total = 0.0;
                for (t, tc) in tables.iter().zip(&cols) {
                    let mut s = vec![0.0; t.miou.len()];
                    for m in 0..3 {
                        if w[m] == 0 {
                            continue;
                        }
                        if let Some(col) = &tc[m] {
                            let wd = w[m] as f64 / denom * direction(hs[m]);
                            for (sl, n) in s.iter_mut().zip(col) {
                                *sl += wd * n;
                            }
                        }
                    }
                    total += t.miou[first_max(&s)];
                }
                let value = total / tables.len() as f64;
                if value > best.1 {
                    best = (w, value);
                }
            }
        }
    }
    best
}
