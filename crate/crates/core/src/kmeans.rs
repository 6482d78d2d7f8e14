//! Spherical k-means: Lloyd iterations on the unit sphere under cosine distance,
//! seeded with k-means++, then single-point moves until no move lowers the
//! objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, normalized};

/// Two unit vectors closer than this in cosine distance count as one direction.
const SAME_DIRECTION: f64 = 1e-12;

/// Smallest objective decrease that justifies a refining move.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 5,
            max_iter: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Unit-norm centroids, `n_eff = min(k, distinct directions)` of them.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input vector, in input order.
    pub assignments: Vec<usize>,
    /// Sum of cosine distances after every assignment step and every
    /// refining move; non-increasing.
    pub objective: Vec<f64>,
    pub converged: bool,
}

/// Clusters `vectors` (each of length `dim`, nonzero) by cosine distance.
///
/// The result depends only on the multiset of input directions and the seed:
/// points are put into a canonical order and exact duplicates are merged into
/// weighted points before seeding. Weights are divided by their gcd, so
/// repeating every input the same number of times changes nothing but the
/// objective's scale.
pub fn fit(vectors: &[Vec<f64>], params: KMeansParams) -> Result<KMeansFit> {
    if params.k == 0 || params.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "k-means needs k >= 1 and max_iter >= 1".into(),
        ));
    }
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("k-means on an empty set".into()));
    }
    let mut units = Vec::with_capacity(vectors.len());
    for v in vectors {
        units.push(normalized(v).ok_or(Error::DegenerateFeature)?);
    }

    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| {
        units[a]
            .iter()
            .zip(&units[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut points: Vec<&[f64]> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut slot = vec![0; units.len()];
    for &i in &order {
        let u = units[i].as_slice();
        if points.last() != Some(&u) {
            points.push(u);
            counts.push(0);
        }
        *counts.last_mut().expect("pushed above") += 1;
        slot[i] = points.len() - 1;
    }
    let g = counts.iter().copied().fold(0, gcd);
    let weights: Vec<f64> = counts.iter().map(|&c| (c / g) as f64).collect();
    let set = Weighted {
        points: &points,
        weights: &weights,
    };

    let k = params.k.min(count_directions(&points, params.k));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_plus_plus(&set, k, &mut rng);

    let (mut assign, j0) = assign_points(&set, &centroids);
    let mut objective = vec![j0];
    let mut converged = false;
    for _ in 0..params.max_iter {
        update_centroids(&set, &assign, &mut centroids);
        let (next, j) = assign_points(&set, &centroids);
        objective.push(j);
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }
    if refine(&set, &mut assign, centroids.len(), &mut objective) {
        update_centroids(&set, &assign, &mut centroids);
    }

    // scaling by a positive constant keeps the trace non-increasing
    let scale = g as f64;
    objective.iter_mut().for_each(|j| *j *= scale);
    Ok(KMeansFit {
        centroids,
        assignments: slot.iter().map(|&u| assign[u]).collect(),
        objective,
        converged,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Distinct unit points, each standing for `weight` identical inputs.
struct Weighted<'a> {
    points: &'a [&'a [f64]],
    weights: &'a [f64],
}

impl Weighted<'_> {
    fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

/// Number of distinct directions among `points`, counting no further than `cap`.
fn count_directions(points: &[&[f64]], cap: usize) -> usize {
    let mut reps: Vec<&[f64]> = Vec::new();
    for p in points {
        if reps.iter().all(|r| 1.0 - dot(r, p) > SAME_DIRECTION) {
            reps.push(p);
            if reps.len() >= cap {
                break;
            }
        }
    }
    reps.len()
}

/// Greedy k-means++: each step draws `2 + ln k` candidates with probability
/// proportional to weighted distance from the chosen centroids and keeps the
/// one that leaves the smallest total weighted distance.
fn seed_plus_plus(set: &Weighted, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let points = set.points;
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = sample_weighted(
        set.weights,
        rng.random::<f64>() * set.weights.iter().sum::<f64>(),
    );
    let mut centroids = vec![points[first].to_vec()];
    let mut dist: Vec<f64> = set
        .iter()
        .map(|(p, w)| w * cos_dist(p, points[first]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = sample_weighted(&dist, rng.random::<f64>() * total);
            let next: Vec<f64> = dist
                .iter()
                .zip(set.iter())
                .map(|(&d, (p, w))| d.min(w * cos_dist(p, points[pick])))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least two trials");
        dist = next;
        centroids.push(points[pick].to_vec());
    }
    centroids
}

/// Index whose cumulative weight first exceeds `target`; only positive weights qualify.
fn sample_weighted(weights: &[f64], mut target: f64) -> usize {
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 && target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let d = 1.0 - dot(a, b);
    if d > SAME_DIRECTION {
        d
    } else {
        0.0
    }
}

/// Nearest centroid per point (ties to the lowest index) and the weighted objective.
fn assign_points(set: &Weighted, centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assign = set
        .iter()
        .map(|(p, w)| {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let s = dot(p, c);
                if s > best_sim {
                    best_sim = s;
                    best = j;
                }
            }
            total += w * (1.0 - best_sim);
            best
        })
        .collect();
    (assign, total)
}

/// Moves single weighted points between clusters while a move strictly lowers
/// the objective `W - sum_j |S_j|`, where `S_j` is the weighted sum of cluster
/// `j`'s points and `W` the total weight. Clusters never empty. Returns whether
/// any point moved.
fn refine(set: &Weighted, assign: &mut [usize], k: usize, objective: &mut Vec<f64>) -> bool {
    if k < 2 {
        return false;
    }
    let dim = set.points[0].len();
    let total: f64 = set.weights.iter().sum();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for ((p, w), &a) in set.iter().zip(assign.iter()) {
        mass[a] += w;
        sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += w * x);
    }
    let len = |v: &[f64]| dot(v, v).sqrt();
    let shifted = |s: &[f64], p: &[f64], by: f64| -> f64 {
        s.iter()
            .zip(p)
            .map(|(a, b)| (a + by * b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut norms: Vec<f64> = sums.iter().map(|s| len(s)).collect();
    let mut moved = false;
    let mut improved = true;
    while improved {
        improved = false;
        for (i, (p, w)) in set.iter().enumerate() {
            let a = assign[i];
            if mass[a] <= w {
                continue;
            }
            let without = shifted(&sums[a], p, -w);
            let mut best: Option<(usize, f64, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let with = shifted(&sums[b], p, w);
                let gain = without + with - norms[a] - norms[b];
                if gain > MIN_GAIN && best.is_none_or(|(_, g, _)| gain > g) {
                    best = Some((b, gain, with));
                }
            }
            if let Some((b, _, with)) = best {
                sums[a].iter_mut().zip(p).for_each(|(s, x)| *s -= w * x);
                sums[b].iter_mut().zip(p).for_each(|(s, x)| *s += w * x);
                mass[a] -= w;
                mass[b] += w;
                norms[a] = without;
                norms[b] = with;
                assign[i] = b;
                objective.push(total - norms.iter().sum::<f64>());
                moved = true;
                improved = true;
            }
        }
    }
    moved
}

fn update_centroids(set: &Weighted, assign: &[usize], centroids: &mut [Vec<f64>]) {
    let points = set.points;
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut members = vec![0usize; k];
    for ((p, w), &a) in set.iter().zip(assign) {
        members[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += w * x;
        }
    }

    let mut reseeded: Vec<usize> = Vec::new();
    for j in 0..k {
        if members[j] == 0 {
            // move the empty cluster onto the worst-served point
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !reseeded.contains(i))
                .map(|(i, p)| (i, 1.0 - dot(p, &centroids[assign[i]])))
                .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                reseeded.push(i);
                centroids[j] = points[i].to_vec();
            }
        } else if let Some(c) = normalized(&sums[j]) {
            centroids[j] = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_points_collapse_to_one_centroid() {
        let pts = vec![vec![3.0, 4.0]; 7];
        let fit = fit(
            &pts,
            KMeansParams {
                k: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.centroids.len(), 1);
        assert!((fit.centroids[0][0] - 0.6).abs() < 1e-12);
        assert!((fit.centroids[0][1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_groups_are_separated() {
        let mut pts = vec![e(3, 0); 10];
        pts.extend(vec![e(3, 1); 10]);
        let fit = fit(
            &pts,
            KMeansParams {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mut cs = fit.centroids.clone();
        cs.sort_by(|a, b| b[0].total_cmp(&a[0]));
        assert_eq!(cs, vec![e(3, 0), e(3, 1)]);
        assert!(fit.assignments[..10]
            .iter()
            .all(|&a| a == fit.assignments[0]));
        assert!(fit.assignments[10..]
            .iter()
            .all(|&a| a != fit.assignments[0]));
    }

    #[test]
    fn single_cluster_is_normalized_mean_of_directions() {
        let pts = vec![vec![2.0, 0.0], vec![0.0, 5.0], vec![1.0, 1.0]];
        let fit = fit(
            &pts,
            KMeansParams {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let s = 1.0 + 0.5f64.sqrt();
        let expect = normalized(&[s, s]).unwrap();
        assert!((fit.centroids[0][0] - expect[0]).abs() < 1e-12);
        assert!((fit.centroids[0][1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(matches!(
            fit(&[vec![0.0, 0.0]], KMeansParams::default()),
            Err(Error::DegenerateFeature)
        ));
    }

    #[test]
    fn uniform_repetition_changes_only_the_objective_scale() {
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                vec![
                    (i as f64).cos(),
                    (i as f64 * 0.7).sin(),
                    0.3 + i as f64 % 3.0,
                ]
            })
            .collect();
        let tripled: Vec<Vec<f64>> = pts.iter().flat_map(|p| vec![p.clone(); 3]).collect();
        let params = KMeansParams {
            k: 3,
            seed: 4,
            ..Default::default()
        };
        let one = fit(&pts, params).unwrap();
        let three = fit(&tripled, params).unwrap();
        assert_eq!(one.centroids, three.centroids);
        for (i, a) in one.assignments.iter().enumerate() {
            assert!(three.assignments[3 * i..3 * i + 3].iter().all(|b| b == a));
        }
        for (x, y) in one.objective.iter().zip(&three.objective) {
            assert_eq!(3.0 * x, *y);
        }
    }

    #[test]
    fn k_is_capped_by_distinct_directions() {
        let pts = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]];
        let fit = fit(
            &pts,
            KMeansParams {
                k: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.centroids.len(), 2);
    }
}
