//! Minimum-cost bipartite assignment (Kuhn–Munkres with row/column
//! potentials, O(n²m)).

use crate::error::Result;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; `min(n, m)` of them.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Solves the rectangular assignment problem for an `n×m` cost matrix.
///
/// Rows are inserted in ascending order and the column scan takes the first
/// strict minimum, so equal-cost ties resolve the same way on every run.
pub fn hungarian<T: Element>(cost: &Tensor<T>) -> Result<Assignment> {
    let (n, m) = cost.dims2("cost matrix")?;
    cost.ensure_finite("cost matrix")?;
    let c: Vec<f64> = cost
        .as_slice()
        .iter()
        .map(|v| v.to_f64().expect("finite float"))
        .collect();
    let pairs = if n <= m {
        solve(n, m, |i, j| c[i * m + j])
    } else {
        let mut p: Vec<(usize, usize)> = solve(m, n, |i, j| c[j * m + i])
            .into_iter()
            .map(|(col, row)| (row, col))
            .collect();
        p.sort_unstable();
        p
    };
    let total = pairs.iter().map(|&(i, j)| c[i * m + j]).sum();
    Ok(Assignment { pairs, total })
}

/// Core solver for `rows <= cols`.
fn solve(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based internally; column 0 is the virtual source.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}
