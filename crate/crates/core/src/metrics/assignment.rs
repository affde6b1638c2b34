//! Minimum-cost bipartite assignment via shortest augmenting paths with
//! potentials, O(n^2 m).

/// Cost marking an impossible pairing. Kept far above any real cost but
/// small enough that potential updates stay well inside f64 precision.
pub(crate) const FORBIDDEN_COST: f64 = 1e6;

/// Solves the min-cost assignment over a rectangular cost matrix.
///
/// Returns, per row, the assigned column. Rows left out when there are more
/// rows than columns, or whose only matches are forbidden, get `None`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    debug_assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    let mut assignment = if n <= m {
        solve(cost)
    } else {
        let transposed: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..n).map(|i| cost[i][j]).collect())
            .collect();
        let mut out = vec![None; n];
        for (j, row) in solve(&transposed).iter().enumerate() {
            if let Some(i) = row {
                out[*i] = Some(j);
            }
        }
        out
    };
    for (i, slot) in assignment.iter_mut().enumerate() {
        if let Some(j) = slot {
            if cost[i][*j] >= FORBIDDEN_COST / 2.0 {
                *slot = None;
            }
        }
    }
    assignment
}

/// Core solver; requires rows <= columns. Indices are 1-based internally,
/// column 0 being the virtual source.
fn solve(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost[0].len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
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
    let mut result = vec![None; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            result[row_of[j] - 1] = Some(j - 1);
        }
    }
    result
}
