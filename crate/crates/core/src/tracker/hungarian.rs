use crate::error::{Error, Result};

/// A minimum-cost maximal matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs in increasing row order.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched costs, accumulated in row order.
    pub cost: f64,
}

fn check(cost: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    for (i, row) in cost.iter().enumerate() {
        if row.len() != m {
            return Err(Error::shape(format!("cost row {i} has {} entries, expected {m}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("cost ({i}, {j}) is not finite")));
        }
    }
    Ok((n, m))
}

fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}

/// Shortest augmenting path with potentials for `n <= m`. Returns the column
/// of every row.
fn solve_wide(cost: &[Vec<f64>], n: usize, m: usize) -> Vec<usize> {
    // 1-based arrays, index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
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
            }
            for j in 0..=m {
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
    let mut col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

fn solve_pairs(cost: &[Vec<f64>], n: usize, m: usize) -> Vec<(usize, usize)> {
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if n <= m {
        solve_wide(cost, n, m).into_iter().enumerate().collect()
    } else {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = solve_wide(&t, m, n).into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Minimum-cost assignment of `min(n, m)` pairs without tie-breaking.
/// Rectangular inputs are solved on the narrow side directly.
pub fn hungarian_any(cost: &[Vec<f64>]) -> Result<Assignment> {
    let (n, m) = check(cost)?;
    let pairs = solve_pairs(cost, n, m);
    Ok(Assignment {
        cost: total(cost, &pairs),
        pairs,
    })
}

/// Minimum-cost assignment of `min(n, m)` pairs. Among optimal assignments
/// the lexicographically smallest (rows in order, each row's column as small
/// as possible, an unassigned row ranking last) is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let (n, m) = check(cost)?;
    if n == 0 || m == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            cost: 0.0,
        });
    }
    let best = total(cost, &solve_pairs(cost, n, m));
    let tol = 1e-9 * (1.0 + best.abs());
    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..m).collect();
    let mut fixed: Vec<(usize, usize)> = Vec::new();
    let mut fixed_cost = 0.0;
    while let Some(&r) = rows.first() {
        let rest_rows = &rows[1..];
        let mut chosen = None;
        for (ci, &c) in cols.iter().enumerate() {
            let rest_cols: Vec<usize> = cols.iter().enumerate().filter(|&(k, _)| k != ci).map(|(_, &c)| c).collect();
            let sub = submatrix(cost, rest_rows, &rest_cols);
            let sub_opt = total(&sub, &solve_pairs(&sub, rest_rows.len(), rest_cols.len()));
            if fixed_cost + cost[r][c] + sub_opt <= best + tol {
                chosen = Some(ci);
                break;
            }
        }
        // No column only happens with more rows than columns: r stays unmatched.
        if let Some(ci) = chosen {
            let c = cols.remove(ci);
            fixed_cost += cost[r][c];
            fixed.push((r, c));
        }
        rows.remove(0);
    }
    Ok(Assignment {
        cost: total(cost, &fixed),
        pairs: fixed,
    })
}

fn submatrix(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.cost, 2.0);
    }

    #[test]
    fn one_by_one_and_empty() {
        assert_eq!(hungarian(&[vec![3.5]]).unwrap().pairs, vec![(0, 0)]);
        assert!(hungarian(&[]).unwrap().pairs.is_empty());
        assert!(hungarian(&[vec![], vec![]]).unwrap().pairs.is_empty());
    }

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(hungarian(&[vec![1.0, f64::NAN]]).is_err());
        assert!(hungarian(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let a = hungarian(&vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let a = hungarian(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let a = hungarian(&[vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 5.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn tall_matrix() {
        let a = hungarian(&[vec![4.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.cost, 1.0);
    }
}
