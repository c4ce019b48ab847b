//! Exact minimum-cost perfect matching (Kuhn-Munkres).
//!
//! The shortest-augmenting-path Hungarian method gives an optimal matching
//! together with optimal dual potentials `u`, `v`. By complementary
//! slackness a perfect matching is optimal iff every edge it uses is tight
//! (`c[i][j] == u[i] + v[j]`), so the lexicographically smallest optimal
//! assignment is found by a greedy row-by-row search over the tight-edge
//! graph, repairing the current matching with alternating paths.

use serde::Serialize;

use crate::error::{Error, Result};

/// Square, finite, non-negative cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "cost matrix of order {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(index) = data.iter().position(|&v| v < 0.0) {
            return Err(Error::Shape(format!("negative cost at flat index {index}")));
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("cost matrix must be square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sum of `c[i][mapping[i]]`.
    pub fn total(&self, mapping: &[usize]) -> f64 {
        mapping.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    /// Row `i` is assigned column `mapping[i]`.
    pub mapping: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost perfect matching; among optimal matchings, the one whose
/// mapping vector is lexicographically smallest.
pub fn hungarian_assign(cost: &CostMatrix) -> Assignment {
    let n = cost.order();
    if n == 0 {
        return Assignment {
            mapping: Vec::new(),
            cost: 0.0,
        };
    }
    let (mut col_of_row, u, v) = solve(cost);

    let scale = cost.data.iter().fold(1.0f64, |m, &x| m.max(x.abs()));
    let eps = 1e-9 * scale * n as f64;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| cost.get(i, j) - u[i] - v[j] <= eps).collect())
        .collect();

    let mut row_of_col = vec![0; n];
    for (i, &j) in col_of_row.iter().enumerate() {
        row_of_col[j] = i;
    }
    let mut fixed = vec![false; n];
    for i in 0..n {
        for &j in &tight[i] {
            if col_of_row[i] == j {
                break;
            }
            // Hand column j to row i; the displaced row must reach i's old column.
            let displaced = row_of_col[j];
            if fixed[displaced] {
                continue;
            }
            let freed = col_of_row[i];
            let mut trial_cols = col_of_row.clone();
            let mut trial_rows = row_of_col.clone();
            trial_cols[i] = j;
            trial_rows[j] = i;
            fixed[i] = true;
            let mut visited = vec![false; n];
            visited[j] = true;
            if augment(
                displaced,
                freed,
                &tight,
                &fixed,
                &mut visited,
                &mut trial_cols,
                &mut trial_rows,
            ) {
                col_of_row = trial_cols;
                row_of_col = trial_rows;
                break;
            }
            fixed[i] = false;
        }
        fixed[i] = true;
    }

    let total = cost.total(&col_of_row);
    Assignment {
        mapping: col_of_row,
        cost: total,
    }
}

/// Alternating-path search from unmatched `row` to the single free column.
fn augment(
    row: usize,
    free_col: usize,
    tight: &[Vec<usize>],
    fixed: &[bool],
    visited: &mut [bool],
    col_of_row: &mut [usize],
    row_of_col: &mut [usize],
) -> bool {
    for &j in &tight[row] {
        if visited[j] {
            continue;
        }
        visited[j] = true;
        let reachable = if j == free_col {
            true
        } else {
            let next = row_of_col[j];
            !fixed[next] && augment(next, free_col, tight, fixed, visited, col_of_row, row_of_col)
        };
        if reachable {
            col_of_row[row] = j;
            row_of_col[j] = row;
            return true;
        }
    }
    false
}

/// O(n³) Hungarian method. Returns the matching and the row/column potentials.
fn solve(cost: &CostMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.order();
    // 1-based with a virtual column 0
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    (col_of_row, u[1..].to_vec(), v[1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// First permutation in lexicographic order attaining the minimum.
    fn brute_force(cost: &CostMatrix) -> (Vec<usize>, f64) {
        fn rec(cost: &CostMatrix, prefix: &mut Vec<usize>, used: &mut [bool], best: &mut Option<(Vec<usize>, f64)>) {
            let n = cost.order();
            if prefix.len() == n {
                let total = cost.total(prefix);
                if best.as_ref().is_none_or(|(_, b)| total < *b) {
                    *best = Some((prefix.clone(), total));
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    prefix.push(j);
                    rec(cost, prefix, used, best);
                    prefix.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = None;
        rec(cost, &mut Vec::new(), &mut vec![false; cost.order()], &mut best);
        best.unwrap()
    }

    #[test]
    fn two_by_two() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = hungarian_assign(&c);
        assert_eq!(a.mapping, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn diagonal_zero_prefers_identity() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| if i == j { 0.0 } else { 1.0 + (i * j) as f64 })
                    .collect()
            })
            .collect();
        assert_eq!(
            hungarian_assign(&CostMatrix::from_rows(&rows).unwrap()).mapping,
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn all_equal_costs_give_identity() {
        let c = CostMatrix::new(5, vec![3.0; 25]).unwrap();
        assert_eq!(hungarian_assign(&c).mapping, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // only the two 3-cycles [1, 2, 0] and [2, 0, 1] reach cost 3
        let c = CostMatrix::from_rows(&[vec![2.0, 1.0, 1.0], vec![1.0, 2.0, 1.0], vec![1.0, 1.0, 2.0]]).unwrap();
        let a = hungarian_assign(&c);
        assert_eq!(a.cost, 3.0);
        assert_eq!(a.mapping, vec![1, 2, 0]);
        assert_eq!(a.mapping, brute_force(&c).0);
    }

    #[test]
    fn empty_and_single() {
        assert!(hungarian_assign(&CostMatrix::new(0, vec![]).unwrap())
            .mapping
            .is_empty());
        assert_eq!(
            hungarian_assign(&CostMatrix::new(1, vec![4.0]).unwrap()).mapping,
            vec![0]
        );
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(CostMatrix::new(2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(CostMatrix::new(2, vec![0.0, f64::INFINITY, 0.0, 0.0]).is_err());
        assert!(CostMatrix::new(2, vec![0.0, -1.0, 0.0, 0.0]).is_err());
        assert!(CostMatrix::from_rows(&[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn six_by_six_matches_brute_force() {
        let rows = vec![
            vec![7.0, 3.0, 9.0, 2.0, 8.0, 4.0],
            vec![5.0, 6.0, 1.0, 9.0, 3.0, 7.0],
            vec![2.0, 8.0, 6.0, 4.0, 9.0, 1.0],
            vec![9.0, 1.0, 4.0, 7.0, 2.0, 6.0],
            vec![3.0, 7.0, 8.0, 1.0, 5.0, 9.0],
            vec![6.0, 4.0, 2.0, 8.0, 7.0, 3.0],
        ];
        let c = CostMatrix::from_rows(&rows).unwrap();
        let (perm, best) = brute_force(&c);
        let a = hungarian_assign(&c);
        assert_eq!(a.cost, best);
        assert_eq!(a.mapping, perm);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn agrees_with_brute_force(n in 1usize..=6, entries in proptest::collection::vec(0u8..6, 36)) {
            let data: Vec<f64> = entries[..n * n].iter().map(|&v| f64::from(v)).collect();
            let c = CostMatrix::new(n, data).unwrap();
            let (perm, best) = brute_force(&c);
            let a = hungarian_assign(&c);
            prop_assert_eq!(a.cost, best);
            prop_assert_eq!(a.mapping, perm);
        }
    }
}
