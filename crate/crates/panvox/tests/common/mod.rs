//! Shared helpers for integration tests. The assignment oracle here is a
//! plain exhaustive search, kept deliberately independent of the solver.

/// Minimum total cost over all injective row->column maps, by exhaustive
/// enumeration. Only viable for min(rows, cols) <= ~8.
pub fn brute_force_min_cost(costs: &[Vec<f64>]) -> f64 {
    let n = costs.len();
    let m = costs.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return 0.0;
    }
    if n > m {
        // Transpose so we always enumerate the smaller side's maps.
        let t: Vec<Vec<f64>> = (0..m).map(|c| (0..n).map(|r| costs[r][c]).collect()).collect();
        return brute_force_min_cost(&t);
    }
    let mut best = f64::INFINITY;
    let mut taken = vec![false; m];
    fn recurse(costs: &[Vec<f64>], row: usize, taken: &mut [bool], acc: f64, best: &mut f64) {
        if row == costs.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for col in 0..taken.len() {
            if !taken[col] {
                taken[col] = true;
                recurse(costs, row + 1, taken, acc + costs[row][col], best);
                taken[col] = false;
            }
        }
    }
    recurse(costs, 0, &mut taken, 0.0, &mut best);
    best
}

#[allow(dead_code)]
pub fn random_cost_rows(
    rng: &mut impl rand::Rng,
    max_dim: usize,
    integer: bool,
) -> Vec<Vec<f64>> {
    let n = rng.gen_range(1..=max_dim);
    let m = rng.gen_range(1..=max_dim);
    (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if integer {
                        rng.gen_range(0..=100) as f64
                    } else {
                        rng.gen_range(0.0..100.0)
                    }
                })
                .collect()
        })
        .collect()
}
