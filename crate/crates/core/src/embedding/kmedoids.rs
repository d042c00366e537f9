use rayon::prelude::*;

use super::kmeans::{plus_plus, restart_rng};
use super::{canonicalize, check_points, sq_dist, Centers, ClusterMethod, ClusterModel, ClusterOptions};
use crate::error::Result;

struct Dist {
    n: usize,
    d: Vec<f64>,
}

impl Dist {
    fn new(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = sq_dist(&points[i], &points[j]);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Dist { n, d }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Nearest medoid per point; a medoid always labels itself, other ties go
/// to the lowest cluster index.
fn assign(dist: &Dist, medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let labels = (0..dist.n)
        .map(|i| {
            if let Some(own) = medoids.iter().position(|&m| m == i) {
                return own;
            }
            let mut best = (0, f64::INFINITY);
            for (j, &m) in medoids.iter().enumerate() {
                let d = dist.at(i, m);
                if d < best.1 {
                    best = (j, d);
                }
            }
            cost += best.1;
            best.0
        })
        .collect();
    (labels, cost)
}

fn cost_of(dist: &Dist, medoids: &[usize]) -> f64 {
    assign(dist, medoids).1
}

fn pam(dist: &Dist, k: usize, opts: &ClusterOptions, restart: usize, points: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut rng = restart_rng(opts.seed, restart);
    let mut medoids = plus_plus(points, k, &mut rng);

    // Voronoi alternation: re-centre each cluster on its cheapest member.
    for _ in 0..opts.max_iter {
        let (labels, _) = assign(dist, &medoids);
        let mut next = medoids.clone();
        for (j, slot) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..dist.n).filter(|&i| labels[i] == j).collect();
            let mut best = (*slot, f64::INFINITY);
            for &c in &members {
                let within: f64 = members.iter().map(|&i| dist.at(i, c)).sum();
                if within < best.1 || (within == best.1 && c < best.0) {
                    best = (c, within);
                }
            }
            *slot = best.0;
        }
        if next == medoids {
            break;
        }
        medoids = next;
    }

    // Swap phase: take the best strictly improving (medoid, non-medoid) swap.
    let mut cost = cost_of(dist, &medoids);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for cand in 0..dist.n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = cost_of(dist, &trial);
                if c < cost - 1e-12 * cost.abs() && best.is_none_or(|b| c < b.2) {
                    best = Some((slot, cand, c));
                }
            }
        }
        match best {
            Some((slot, cand, c)) => {
                medoids[slot] = cand;
                cost = c;
            }
            None => break,
        }
    }
    (medoids, cost)
}

/// PAM-style k-medoids: k-means++ seeding, Voronoi alternation, then a
/// full swap phase; best of `opts.restarts`, ties to the lexicographically
/// smallest medoid set.
pub fn kmedoids(points: &[Vec<f64>], k: usize, opts: &ClusterOptions) -> Result<ClusterModel> {
    check_points(points, k)?;
    let dist = Dist::new(points);
    let runs: Vec<(Vec<usize>, f64)> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let (mut m, c) = pam(&dist, k, opts, r, points);
            m.sort_unstable();
            (m, c)
        })
        .collect();
    let (medoids, inertia) = runs
        .into_iter()
        .reduce(|best, run| match run.1.total_cmp(&best.1) {
            std::cmp::Ordering::Less => run,
            std::cmp::Ordering::Equal if run.0 < best.0 => run,
            _ => best,
        })
        .expect("at least one restart");
    let (raw, _) = assign(&dist, &medoids);
    let (labels, order) = canonicalize(&raw, k);
    Ok(ClusterModel {
        k,
        method: ClusterMethod::Kmedoids,
        labels,
        centers: Centers::Medoids(order.into_iter().map(|j| medoids[j]).collect()),
        inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_points_are_their_own_medoids() {
        let m = kmedoids(&pts(&[0.0, 10.0]), 2, &ClusterOptions::default()).unwrap();
        assert_eq!(m.centers, Centers::Medoids(vec![0, 1]));
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_indices() {
        let m = kmedoids(&pts(&[0.0, 1.0, 9.0, 10.0]), 2, &ClusterOptions::default()).unwrap();
        assert_eq!(m.centers, Centers::Medoids(vec![0, 2]));
        assert_eq!(m.labels, vec![0, 0, 1, 1]);
        assert!((m.inertia - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_single_medoid() {
        let m = kmedoids(&pts(&[4.0; 6]), 1, &ClusterOptions::default()).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(matches!(m.centers, Centers::Medoids(ref v) if v.len() == 1));
    }

    #[test]
    fn medoids_belong_to_their_clusters() {
        let p = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 5.0], vec![5.0, 5.0], vec![5.0, 5.1]];
        let m = kmedoids(&p, 3, &ClusterOptions::default()).unwrap();
        let Centers::Medoids(c) = &m.centers else { panic!() };
        for (j, &i) in c.iter().enumerate() {
            assert_eq!(m.labels[i], j);
        }
    }
}
