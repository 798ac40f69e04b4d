//! Minimum-cost assignment on a square matrix (shortest augmenting paths with potentials).

/// Column assigned to each row minimizing the total cost. `cost` is row-major `n × n`.
pub fn solve(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "square cost matrix expected");
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials u (rows), v (cols); p[j] = row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Partial matching of a rectangular `rows × cols` matrix where leaving a row or
/// a column unmatched costs `unmatched` and pairs listed as `None` are forbidden.
/// Returns `(row, col)` pairs.
pub fn match_with_dummies(cost: &[Option<f64>], rows: usize, cols: usize, unmatched: f64) -> Vec<(usize, usize)> {
    let n = rows + cols;
    let forbidden = 1e12 + unmatched.abs() * 1e3;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = match (i < rows, j < cols) {
                (true, true) => cost[i * cols + j].unwrap_or(forbidden),
                (true, false) => {
                    if j - cols == i {
                        unmatched
                    } else {
                        forbidden
                    }
                }
                (false, true) => {
                    if i - rows == j {
                        unmatched
                    } else {
                        forbidden
                    }
                }
                (false, false) => 0.0,
            };
        }
    }
    solve(&m, n)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < rows && j < cols && cost[i * cols + j].is_some())
        .collect()
}
