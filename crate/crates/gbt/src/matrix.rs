/// Missing-value marker. Trees route it through each split's default branch.
pub const MISSING: f64 = f64::NAN;

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize) -> Self {
        Self { n_rows: 0, n_cols, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(n_cols: usize, rows: &[R]) -> Self {
        let mut m = Self::with_capacity(n_cols, rows.len());
        for r in rows {
            m.push_row(r.as_ref());
        }
        m
    }

    pub fn with_capacity(n_cols: usize, rows: usize) -> Self {
        Self { n_rows: 0, n_cols, data: Vec::with_capacity(rows * n_cols) }
    }

    /// Panics if `row.len() != n_cols`.
    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row width");
        self.data.extend_from_slice(row);
        self.n_rows += 1;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    /// Selects a subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut m = Self::with_capacity(self.n_cols, indices.len());
        for &i in indices {
            m.push_row(self.row(i));
        }
        m
    }
}
