//! Clustering concordance, stability across points in time, and forecast
//! error curves.

mod assignment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use assignment::max_assignment;

use crate::data::{EntityKey, EntityRecord};
use crate::error::{Error, Result};
use crate::model::LstmModel;

/// Rows follow clustering A, columns clustering B.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Usage("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(labels_a: &[usize], labels_b: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Usage(format!(
            "label vectors differ in length ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if let Some(l) = labels_a.iter().chain(labels_b).find(|&&l| l >= k) {
        return Err(Error::Usage(format!("label {l} is not below k = {k}")));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        counts[a][b] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Largest diagonal fraction over column permutations. `perm[i]` is the
/// column matched to row `i`.
pub fn permutation_accuracy(matrix: &ConfusionMatrix) -> Result<(f64, Vec<usize>)> {
    let n = matrix.total();
    if matrix.k() == 0 || n == 0 {
        return Err(Error::Usage("empty confusion matrix".into()));
    }
    let (best, perm) = if matrix.k() <= 8 {
        exhaustive(&matrix.counts)
    } else {
        max_assignment(&matrix.counts)
    };
    Ok((best as f64 / n as f64, perm))
}

/// Every permutation in lexicographic order; the first maximum wins.
fn exhaustive(counts: &[Vec<u64>]) -> (u64, Vec<usize>) {
    let k = counts.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (0u64, perm.clone());
    let mut first = true;
    loop {
        let s: u64 = (0..k).map(|i| counts[i][perm[i]]).sum();
        if first || s > best.0 {
            best = (s, perm.clone());
            first = false;
        }
        // next permutation
        let Some(i) = (0..k.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else {
            break;
        };
        let j = (i + 1..k).rev().find(|&j| perm[j] > perm[i]).expect("successor exists");
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    best
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Pair-counting adjusted Rand index. When the chance-corrected denominator
/// vanishes the result is 1 for identical partitions and 0 otherwise.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Usage(format!(
            "label vectors differ in length ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len() as u64;
    if n < 2 {
        return Err(Error::Usage("ARI needs at least two labels".into()));
    }
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *cells.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        let same = cells.len() == rows.len() && cells.len() == cols.len();
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub best_permutation: Vec<usize>,
    pub ari: f64,
    /// Number of entities whose label agrees under the best permutation.
    pub matched: u64,
    pub n: u64,
}

/// Agreement between two labelings of the same entities.
pub fn cluster_stability(
    labels_t1: &BTreeMap<EntityKey, usize>,
    labels_t2: &BTreeMap<EntityKey, usize>,
    k: usize,
) -> Result<StabilityReport> {
    let only_a: Vec<&str> = labels_t1.keys().filter(|k| !labels_t2.contains_key(*k)).map(|k| k.as_str()).collect();
    let only_b: Vec<&str> = labels_t2.keys().filter(|k| !labels_t1.contains_key(*k)).map(|k| k.as_str()).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::Usage(format!(
            "entity sets differ: only in first {only_a:?}, only in second {only_b:?}"
        )));
    }
    let a: Vec<usize> = labels_t1.values().copied().collect();
    let b: Vec<usize> = labels_t2.values().copied().collect();
    let matrix = confusion_matrix(&a, &b, k)?;
    let (accuracy, best_permutation) = permutation_accuracy(&matrix)?;
    let matched = (0..k).map(|i| matrix.counts[i][best_permutation[i]]).sum();
    let ari = if a.len() >= 2 { adjusted_rand_index(&a, &b)? } else { 1.0 };
    Ok(StabilityReport {
        n: matrix.total(),
        matrix,
        accuracy,
        best_permutation,
        ari,
        matched,
    })
}

/// `|actual - embedding| / actual`: how far an embedding-based count falls
/// from the count observed on the actual series.
pub fn relative_count_error(n_actual: u64, n_embedding: u64) -> Result<f64> {
    if n_actual == 0 {
        return Err(Error::Usage("reference count must be positive".into()));
    }
    Ok((n_actual as f64 - n_embedding as f64).abs() / n_actual as f64)
}

/// Trailing mean over `min(window, t + 1)` values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Usage("moving-average window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            series[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect())
}

/// Denominator floor for relative errors against zero actuals.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// Signed relative error `(pred - actual) / actual`.
pub fn relative_error(pred: f64, actual: f64) -> f64 {
    (pred - actual) / actual.abs().max(RELATIVE_FLOOR)
}

/// Unsigned relative error between the final `window`-day moving averages
/// of a forecast and the matching actuals.
pub fn moving_average_error(pred: &[f64], actual: &[f64], window: usize) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "forecast of {} days against {} actual days",
            pred.len(),
            actual.len()
        )));
    }
    let p = *moving_average(pred, window)?.last().expect("non-empty");
    let a = *moving_average(actual, window)?.last().expect("non-empty");
    Ok(relative_error(p, a).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: usize,
    pub rel_err_infections: f64,
    pub rel_err_deaths: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonCurve {
    pub rows: Vec<HorizonRow>,
    pub forecast: Vec<[f64; 2]>,
    pub actual: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
}

/// Recursive forecast from the train/test cut, compared day by day with
/// the withheld actuals.
pub fn horizon_errors(
    model: &LstmModel,
    entity: &EntityRecord,
    test_days: usize,
    horizons: usize,
) -> Result<HorizonCurve> {
    let len = entity.series.len();
    if test_days >= len {
        return Err(Error::Data(format!("{}: no training prefix before the test buffer", entity.key)));
    }
    let cut = len - test_days;
    let mut warnings = Vec::new();
    let h = if horizons > test_days {
        warnings.push(format!(
            "{}: horizon {horizons} exceeds the {test_days}-day test segment; truncated",
            entity.key
        ));
        test_days
    } else {
        horizons
    };
    let history = entity.series.prefix(cut).channels();
    let forecast = model.rollout(&history, &entity.statics, h)?;
    let actual: Vec<[f64; 2]> = (cut..cut + h)
        .map(|t| [entity.series.infections[t], entity.series.deaths[t]])
        .collect();
    let rows = forecast
        .iter()
        .zip(&actual)
        .enumerate()
        .map(|(d, (p, a))| HorizonRow {
            horizon: d + 1,
            rel_err_infections: relative_error(p[0], a[0]),
            rel_err_deaths: relative_error(p[1], a[1]),
        })
        .collect();
    Ok(HorizonCurve {
        rows,
        forecast,
        actual,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_error_example() {
        // trailing 2-day means end at 3.5 and 4.0
        let e = moving_average_error(&[1.0, 3.0, 4.0], &[2.0, 4.0, 4.0], 2).unwrap();
        assert!((e - 0.125).abs() < 1e-15);
        assert!(moving_average_error(&[1.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion_matrix(&[0, 0, 1], &[0, 0, 1], 2).unwrap().counts, vec![vec![2, 0], vec![0, 1]]);
        assert_eq!(confusion_matrix(&[0, 1], &[1, 0], 2).unwrap().counts, vec![vec![0, 1], vec![1, 0]]);
        assert!(matches!(confusion_matrix(&[0], &[0, 1], 2), Err(Error::Usage(_))));
    }

    /// Old clusters of sizes 10/4/3; of the first, 3 moved to cluster 1 and
    /// 3 to cluster 2, and so on.
    fn shifted_scenario() -> (Vec<usize>, Vec<usize>) {
        let cells = [[4, 3, 3], [2, 1, 1], [1, 1, 1]];
        let (mut a, mut b) = (vec![], vec![]);
        for (i, row) in cells.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    a.push(i);
                    b.push(j);
                }
            }
        }
        (a, b)
    }

    #[test]
    fn shifted_scenario_accuracy() {
        let (a, b) = shifted_scenario();
        let m = confusion_matrix(&a, &b, 3).unwrap();
        assert_eq!(m.counts, vec![vec![4, 3, 3], vec![2, 1, 1], vec![1, 1, 1]]);
        let (acc, _) = permutation_accuracy(&m).unwrap();
        assert_eq!(acc, 6.0 / 17.0);
    }

    #[test]
    fn accuracy_examples() {
        let diag = ConfusionMatrix::from_counts(vec![vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 5]]).unwrap();
        assert_eq!(permutation_accuracy(&diag).unwrap(), (1.0, vec![0, 1, 2]));
        let anti = ConfusionMatrix::from_counts(vec![vec![0, 5], vec![5, 0]]).unwrap();
        assert_eq!(permutation_accuracy(&anti).unwrap(), (1.0, vec![1, 0]));
        let empty = ConfusionMatrix::from_counts(vec![vec![0]]).unwrap();
        assert!(permutation_accuracy(&empty).is_err());
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % 9
        };
        for k in 1..=7 {
            for _ in 0..20 {
                let counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| next()).collect()).collect();
                let (s, p) = max_assignment(&counts);
                let sum: u64 = (0..k).map(|i| counts[i][p[i]]).sum();
                assert_eq!(sum, s);
                assert_eq!(s, exhaustive(&counts).0);
            }
        }
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 1, 2, 3]).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
    }

    #[test]
    fn stability_examples() {
        let (a, b) = shifted_scenario();
        let keys: Vec<EntityKey> = (0..17).map(|i| EntityKey::from_parts(39, 2 * i + 1).unwrap()).collect();
        let t1: BTreeMap<_, _> = keys.iter().cloned().zip(a.clone()).collect();
        let t2: BTreeMap<_, _> = keys.iter().cloned().zip(b).collect();
        let r = cluster_stability(&t1, &t2, 3).unwrap();
        assert_eq!(r.accuracy, 6.0 / 17.0);
        assert_eq!(r.matched, 6);
        assert!(r.accuracy >= r.matrix.trace() as f64 / r.n as f64);
        let same = cluster_stability(&t1, &t1, 3).unwrap();
        assert_eq!((same.accuracy, same.ari), (1.0, 1.0));

        let mut t3 = t1.clone();
        t3.remove(&keys[0]);
        let err = cluster_stability(&t1, &t3, 3).unwrap_err();
        assert!(err.to_string().contains("39001"));
    }

    #[test]
    fn count_error_examples() {
        let pct = |a, e| (relative_count_error(a, e).unwrap() * 100.0).round() as i64;
        assert_eq!(pct(13, 6), 54);
        assert_eq!(pct(13, 7), 46);
        assert_eq!(pct(17, 10), 41);
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[3.0; 5], 10).unwrap(), vec![3.0; 5]);
        assert_eq!(moving_average(&[0.0, 10.0], 10).unwrap(), vec![0.0, 5.0]);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 2).unwrap(), vec![1.0, 1.5, 2.5]);
        assert!(moving_average(&[1.0], 0).is_err());
    }

    /// Counts agreeing pairs directly.
    fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                both += (sa && sb) as u8 as f64;
                in_a += sa as u8 as f64;
                in_b += sb as u8 as f64;
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let expected = in_a * in_b / pairs;
        let max = (in_a + in_b) / 2.0;
        if max == expected {
            let same = (0..n).all(|i| (0..n).all(|j| (a[i] == a[j]) == (b[i] == b[j])));
            return if same { 1.0 } else { 0.0 };
        }
        (both - expected) / (max - expected)
    }

    fn labels(n: usize, k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (proptest::collection::vec(0..k, n), proptest::collection::vec(0..k, n))
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting((a, b) in (2usize..=12, 1usize..=4).prop_flat_map(|(n, k)| labels(n, k))) {
            let fast = adjusted_rand_index(&a, &b).unwrap();
            prop_assert!((fast - brute_ari(&a, &b)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&fast));
        }

        #[test]
        fn accuracy_ignores_relabeling(
            (a, b) in (2usize..=12, 1usize..=4).prop_flat_map(|(n, k)| labels(n, k)),
            shift in 0usize..4,
        ) {
            let k = 4;
            let base = permutation_accuracy(&confusion_matrix(&a, &b, k).unwrap()).unwrap().0;
            let relabeled: Vec<usize> = b.iter().map(|l| (l + shift) % k).collect();
            let moved = permutation_accuracy(&confusion_matrix(&a, &relabeled, k).unwrap()).unwrap().0;
            prop_assert_eq!(base, moved);
            prop_assert_eq!(permutation_accuracy(&confusion_matrix(&a, &a, k).unwrap()).unwrap().0, 1.0);
            prop_assert!((adjusted_rand_index(&b, &relabeled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn moving_average_preserves_monotonicity(
            steps in proptest::collection::vec(0.0f64..10.0, 1..60),
            window in 1usize..15,
        ) {
            let series: Vec<f64> = steps.iter().scan(0.0, |s, d| { *s += d; Some(*s) }).collect();
            let ma = moving_average(&series, window).unwrap();
            prop_assert!(ma.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
    }
}
