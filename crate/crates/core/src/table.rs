use serde::{Deserialize, Serialize};

/// Dense per-path table, one row per Monte Carlo path and one column per
/// grid node or cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTable {
    paths: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PathTable {
    pub fn zeros(paths: usize, cols: usize) -> Self {
        Self::filled(paths, cols, 0.0)
    }

    pub fn filled(paths: usize, cols: usize, value: f64) -> Self {
        Self {
            paths,
            cols,
            data: vec![value; paths * cols],
        }
    }

    /// Builds a table from row vectors; all rows must share a length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let paths = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(paths * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend(row);
        }
        Self { paths, cols, data }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, path: usize, col: usize) -> f64 {
        self.data[path * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, path: usize, col: usize, value: f64) {
        self.data[path * self.cols + col] = value;
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.data[path * self.cols..(path + 1) * self.cols]
    }

    pub fn row_mut(&mut self, path: usize) -> &mut [f64] {
        &mut self.data[path * self.cols..(path + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.paths).map(|p| self.get(p, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.paths);
        for (p, v) in values.iter().enumerate() {
            self.set(p, col, *v);
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.paths)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            paths: self.paths,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn column_mean(&self, col: usize) -> f64 {
        mean(&self.column(col))
    }

    /// Largest per-column sample variance across paths.
    pub fn max_column_variance(&self) -> f64 {
        (0..self.cols)
            .map(|c| variance(&self.column(c)))
            .fold(0.0, f64::max)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}
