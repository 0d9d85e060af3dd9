//! Exact rectangular Linear Assignment Problem solver.
//!
//! Shortest-augmenting-path variant of the Hungarian method with row/column
//! potentials (Jonker-Volgenant style), O(n * m^2). Rectangular matrices with
//! more rows than columns are transposed internally and the result mapped
//! back, so callers always get a complete matching of min(rows, cols) pairs.

use thiserror::Error;

/// Finite sentinel for forbidden cells. Large enough to dominate any
/// -log-likelihood cost while keeping the solver's finiteness precondition.
pub const FORBIDDEN_COST: f64 = 1e9;

#[derive(Debug, Error, PartialEq)]
pub enum LapError {
    #[error("cost matrix entry ({row}, {col}) is not finite: {value}")]
    NonFinite { row: usize, col: usize, value: f64 },
}

/// Dense row-major cost matrix between frame segments (rows) and candidate
/// map instances plus any augmentation columns (cols). Lower cost = better.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Number of real columns before dummy augmentation, when augmented.
    original_cols: Option<usize>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost data length must be rows*cols");
        Self { rows, cols, data, original_cols: None }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for row in rows {
            assert_eq!(row.len(), m, "ragged cost matrix");
            data.extend_from_slice(row);
        }
        Self::new(n, m, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Appends one private dummy column per row: column `k + j` costs
    /// `new_instance_cost` in row `j` and [`FORBIDDEN_COST`] elsewhere, so
    /// every row keeps an individual "start a new instance" option and any
    /// number of rows can take it simultaneously.
    pub fn augment(&self, new_instance_cost: f64) -> CostMatrix {
        assert!(new_instance_cost.is_finite(), "new-instance cost must be finite");
        let (n, k) = (self.rows, self.cols);
        let cols = k + n;
        let mut data = vec![FORBIDDEN_COST; n * cols];
        for r in 0..n {
            data[r * cols..r * cols + k].copy_from_slice(&self.data[r * k..(r + 1) * k]);
            data[r * cols + k + r] = new_instance_cost;
        }
        CostMatrix { rows: n, cols, data, original_cols: Some(k) }
    }

    /// Index of the first dummy column, when this matrix was augmented.
    pub fn original_cols(&self) -> Option<usize> {
        self.original_cols
    }

    pub fn is_dummy_col(&self, col: usize) -> bool {
        self.original_cols.is_some_and(|k| col >= k)
    }

    fn transposed(&self) -> CostMatrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.get(r, c);
            }
        }
        CostMatrix { rows: self.cols, cols: self.rows, data, original_cols: None }
    }

    fn check_finite(&self) -> Result<(), LapError> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let value = self.get(r, c);
                if !value.is_finite() {
                    return Err(LapError::NonFinite { row: r, col: c, value });
                }
            }
        }
        Ok(())
    }
}

/// A complete minimum-cost matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (row, col) pairs, sorted by row; each row exactly once, each col at
    /// most once; exactly min(rows, cols) entries.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the selected cost entries.
    pub total_cost: f64,
}

impl Assignment {
    /// Column matched to `row`, if any.
    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(r, _)| r == row).map(|&(_, c)| c)
    }
}

/// Minimum-cost complete matching of all min(rows, cols) rows.
pub fn solve(costs: &CostMatrix) -> Result<Assignment, LapError> {
    costs.check_finite()?;
    if costs.rows == 0 || costs.cols == 0 {
        return Ok(Assignment { pairs: Vec::new(), total_cost: 0.0 });
    }
    if costs.rows > costs.cols {
        let flipped = solve_wide(&costs.transposed());
        let mut pairs: Vec<(usize, usize)> = flipped.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(r, c)| costs.get(r, c)).sum();
        return Ok(Assignment { pairs, total_cost });
    }
    let pairs = solve_wide(costs);
    let total_cost = pairs.iter().map(|&(r, c)| costs.get(r, c)).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Core shortest-augmenting-path loop. Requires rows <= cols; returns pairs
/// sorted by row.
fn solve_wide(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let n = costs.rows;
    let m = costs.cols;
    debug_assert!(n <= m);

    // 1-based arrays; column 0 is the virtual start of each augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut assigned_row = vec![0usize; m + 1]; // col -> row (0 = free)
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        assigned_row[0] = row;
        let mut j0 = 0usize;
        let mut min_reduced = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];

        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;

            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_reduced[j] {
                    min_reduced[j] = reduced;
                    way[j] = j0;
                }
                if min_reduced[j] < delta {
                    delta = min_reduced[j];
                    j1 = j;
                }
            }

            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_reduced[j] -= delta;
                }
            }

            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }

        // Walk the alternating path back, flipping assignments.
        while j0 != 0 {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| assigned_row[j] != 0)
        .map(|j| (assigned_row[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}
