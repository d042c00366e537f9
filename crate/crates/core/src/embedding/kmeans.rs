use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{canonicalize, check_points, sq_dist, Centers, ClusterMethod, ClusterModel, ClusterOptions};
use crate::error::Result;

/// Per-restart generator; restarts are independent streams of one seed.
pub(crate) fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64 + 1);
    rng
}

/// k-means++: first center uniform, then proportional to squared distance
/// from the nearest chosen center. Returns point indices.
pub(crate) fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("positive total")
        } else {
            // every point coincides with a center; pick an unused index
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// One Lloyd run from k-means++ seeding. Returns labels, centroids, inertia.
fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    opts: &ClusterOptions,
    restart: usize,
) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let mut rng = restart_rng(opts.seed, restart);
    let dim = points[0].len();
    let mut centers: Vec<Vec<f64>> = plus_plus(points, k, &mut rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut labels = vec![usize::MAX; points.len()];
    let mut prev = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut changed = false;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            changed |= labels[i] != j;
            labels[i] = j;
            dist[i] = d;
        }
        repair_empty(&mut labels, &mut dist, k);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
        let inertia = total_inertia(points, &labels, &centers);
        let converged = !changed || prev - inertia <= opts.tol * prev.max(f64::MIN_POSITIVE);
        prev = inertia;
        if converged {
            break;
        }
    }
    (labels, centers, prev)
}

/// Moves the point farthest from its center into each empty cluster.
fn repair_empty(labels: &mut [usize], dist: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("n >= k leaves a cluster with two members");
        labels[far] = empty;
        dist[far] = 0.0;
    }
}

pub(crate) fn total_inertia(points: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding, best of `opts.restarts`.
pub fn kmeans(points: &[Vec<f64>], k: usize, opts: &ClusterOptions) -> Result<ClusterModel> {
    check_points(points, k)?;
    let runs: Vec<_> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(points, k, opts, r))
        .collect();
    let (labels, centers, inertia) = runs
        .into_iter()
        .reduce(|best, run| if run.2 < best.2 { run } else { best })
        .expect("at least one restart");
    let (labels, order) = canonicalize(&labels, k);
    Ok(ClusterModel {
        k,
        method: ClusterMethod::Kmeans,
        labels,
        centers: Centers::Centroids(order.into_iter().map(|j| centers[j].clone()).collect()),
        inertia,
    })
}
