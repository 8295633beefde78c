use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stif::tracker::{hungarian, hungarian_any};

const MAX_SIDE: usize = 7;
const MATRICES_PER_SHAPE: usize = 100;

/// Every maximal injective assignment, in lexicographic order of the
/// per-row column (unassigned last).
fn enumerate(n: usize, m: usize, f: &mut impl FnMut(&[Option<usize>])) {
    fn rec(row: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, f: &mut impl FnMut(&[Option<usize>])) {
        if row == n {
            if cur.iter().flatten().count() == n.min(m) {
                f(cur);
            }
            return;
        }
        for c in 0..m {
            if !used[c] {
                used[c] = true;
                cur.push(Some(c));
                rec(row + 1, n, m, used, cur, f);
                cur.pop();
                used[c] = false;
            }
        }
        cur.push(None);
        rec(row + 1, n, m, used, cur, f);
        cur.pop();
    }
    rec(0, n, m, &mut vec![false; m], &mut Vec::new(), f);
}

/// Exhaustive minimum, first (lexicographically smallest) optimum on ties.
fn brute_force(cost: &[Vec<f64>], m: usize) -> (f64, Vec<(usize, usize)>) {
    let mut best = f64::INFINITY;
    let mut best_pairs = Vec::new();
    enumerate(cost.len(), m, &mut |a| {
        let c: f64 = a.iter().enumerate().filter_map(|(i, j)| j.map(|j| cost[i][j])).sum();
        if c < best {
            best = c;
            best_pairs = a.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
        }
    });
    (best, best_pairs)
}

fn is_valid(pairs: &[(usize, usize)], n: usize, m: usize) -> bool {
    let mut rows = vec![false; n];
    let mut cols = vec![false; m];
    for &(i, j) in pairs {
        if i >= n || j >= m || rows[i] || cols[j] {
            return false;
        }
        rows[i] = true;
        cols[j] = true;
    }
    pairs.len() == n.min(m)
}

pub fn integer_costs_match_exhaustive_minimum_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=MAX_SIDE {
        for m in 1..=MAX_SIDE {
            for _ in 0..MATRICES_PER_SHAPE {
                // Small integer range: exact sums and plenty of ties.
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0..10) as f64).collect()).collect();
                let (opt, lex) = brute_force(&cost, m);
                let a = hungarian(&cost).unwrap();
                assert_eq!(a.cost, opt, "{n}x{m} {cost:?}");
                assert!(is_valid(&a.pairs, n, m));
                assert_eq!(a.pairs, lex, "tie-break on {cost:?}");
                let b = hungarian_any(&cost).unwrap();
                assert_eq!(b.cost, opt);
                assert!(is_valid(&b.pairs, n, m));
            }
        }
    }
}

pub fn real_costs_match_exhaustive_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=MAX_SIDE {
        for m in 1..=MAX_SIDE {
            for _ in 0..MATRICES_PER_SHAPE {
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
                let (opt, _) = brute_force(&cost, m);
                let a = hungarian(&cost).unwrap();
                assert!(is_valid(&a.pairs, n, m));
                // Summation order differs from the brute force only when the
                // optimum is tied, which has probability zero here.
                assert_eq!(a.cost, opt, "{n}x{m} {cost:?}");
            }
        }
    }
}

#[cfg(test)]
mod cases {
    #[test]
    fn integer_costs_match_exhaustive_minimum_exactly() {
        super::integer_costs_match_exhaustive_minimum_exactly()
    }

    #[test]
    fn real_costs_match_exhaustive_minimum() {
        super::real_costs_match_exhaustive_minimum()
    }
}
