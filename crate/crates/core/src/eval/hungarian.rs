/// Optimal assignment for a rectangular cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row; `None` only when there are more rows
    /// than columns.
    pub row_to_col: Vec<Option<usize>>,
    pub cost: f64,
}

/// Minimum-cost assignment (shortest augmenting paths with potentials,
/// O(n^2 m)). Each row gets a distinct column when `rows <= cols`,
/// otherwise each column gets a distinct row.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    if n == 0 {
        return Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        };
    }
    let m = cost[0].len();
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let sub = hungarian(&t);
        let mut row_to_col = vec![None; n];
        for (j, i) in sub.row_to_col.iter().enumerate() {
            if let Some(i) = i {
                row_to_col[*i] = Some(j);
            }
        }
        return Assignment {
            row_to_col,
            cost: sub.cost,
        };
    }

    // 1-based arrays; column 0 is the virtual source.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = Some(j - 1);
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost[i][c]))
        .sum();
    Assignment {
        row_to_col,
        cost: total,
    }
}
