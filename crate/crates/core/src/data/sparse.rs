//! Row-major sparse rating matrix. Rows keep their entries sorted by column,
//! which makes every iteration order deterministic.

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_cols,
            rows: vec![Vec::new(); n_rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Insert or overwrite an entry. Zero values are stored as absent.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(row < self.rows.len() && col < self.n_cols, "index in range");
        let r = &mut self.rows[row];
        match r.binary_search_by_key(&col, |&(c, _)| c) {
            Ok(pos) => {
                if value == 0.0 {
                    r.remove(pos);
                } else {
                    r[pos].1 = value;
                }
            }
            Err(pos) => {
                if value != 0.0 {
                    r.insert(pos, (col, value));
                }
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row]
            .binary_search_by_key(&col, |&(c, _)| c)
            .map(|pos| self.rows[row][pos].1)
            .unwrap_or(0.0)
    }

    /// Entries of one row, sorted by column.
    pub fn row(&self, row: usize) -> &[(usize, f64)] {
        &self.rows[row]
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.rows[row].len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// All entries in (row, col) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    /// Dense copy of one row.
    pub fn row_dense(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for &(c, v) in &self.rows[row] {
            out[c] = v;
        }
        out
    }

    /// New matrix with every nonzero replaced by 1.0.
    pub fn binarized(&self) -> SparseMatrix {
        SparseMatrix {
            n_cols: self.n_cols,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(c, _)| (c, 1.0)).collect())
                .collect(),
        }
    }

    /// Append a row given as (col, value) pairs; pairs may be unsorted.
    pub fn push_row(&mut self, mut entries: Vec<(usize, f64)>) {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(c, _)| c);
        for &(c, _) in &entries {
            assert!(c < self.n_cols, "column in range");
        }
        self.rows.push(entries);
    }
}

/// Binarize a rating matrix: every nonzero becomes 1, zeros stay 0.
/// The input is untouched.
pub fn binarize(ratings: &SparseMatrix) -> SparseMatrix {
    ratings.binarized()
}
