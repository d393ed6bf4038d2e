use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// State features `φ(x) ∈ R^k`, materialized as the `|X| × k` matrix `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn from_matrix(phi: DMatrix<f64>) -> Self {
        FeatureMap { phi }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::InvalidArgument("feature rows must be non-empty".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, actual: r.len() });
        }
        Ok(FeatureMap { phi: DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]) })
    }

    pub fn from_fn(n_states: usize, k: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..n_states).map(&mut f).collect();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!("feature function must return {k} values")));
        }
        Self::from_rows(&rows)
    }

    /// One-hot features; `Φ = I`.
    pub fn tabular(n_states: usize) -> Self {
        FeatureMap { phi: DMatrix::identity(n_states, n_states) }
    }

    /// Reads one comma-separated row per state; `#` lines are comments.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad feature '{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        self.phi.row(x).iter().copied().collect()
    }

    /// `Φw` as a state-indexed vector.
    pub fn values(&self, w: &DVector<f64>) -> Vec<f64> {
        (&self.phi * w).iter().copied().collect()
    }

    pub fn has_full_column_rank(&self) -> bool {
        self.phi.nrows() >= self.phi.ncols() && self.phi.rank(1e-10) == self.phi.ncols()
    }
}
