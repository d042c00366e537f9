/// Maximum-weight perfect matching on a square matrix (Hungarian method
/// with potentials, O(k³)). Returns the total and `perm[row] = column`.
pub fn max_assignment(weights: &[Vec<u64>]) -> (u64, Vec<usize>) {
    let n = weights.len();
    if n == 0 {
        return (0, Vec::new());
    }
    let top = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    // minimise top - w, 1-based with a virtual column 0
    let cost = |i: usize, j: usize| top - weights[i - 1][j - 1] as i64;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| weights[i][perm[i]]).sum();
    (total, perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(max_assignment(&[vec![7]]), (7, vec![0]));
        assert_eq!(max_assignment(&[vec![0, 5], vec![5, 0]]), (10, vec![1, 0]));
        let m = vec![vec![4, 3, 3], vec![2, 1, 1], vec![1, 1, 1]];
        assert_eq!(max_assignment(&m).0, 6);
    }

    #[test]
    fn large_permutation_matrix() {
        let k = 12;
        let m: Vec<Vec<u64>> = (0..k)
            .map(|i| (0..k).map(|j| if j == (i * 5 + 3) % k { 9 } else { 1 }).collect())
            .collect();
        let (total, perm) = max_assignment(&m);
        assert_eq!(total, 9 * k as u64);
        assert!((0..k).all(|i| perm[i] == (i * 5 + 3) % k));
    }
}
