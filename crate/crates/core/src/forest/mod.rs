//! Bagged regression forest whose individual tree predictions are exposed, so
//! the same model serves as a committee (per-tree spread) and as a predictor
//! (tree average).

mod container;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use container::{deserialize_forest, serialize_forest, read_forest, write_forest, FORMAT_VERSION, MAGIC};
pub use tree::{Node, RegressionTree};

use tree::SortedColumns;

/// Row-major matrix of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        let mut cols = None;
        for r in rows {
            let r = r.as_ref();
            match cols {
                None => cols = Some(r.len()),
                Some(c) if c != r.len() => {
                    return Err(Error::Dimension(format!("row {n} has {} columns, expected {c}", r.len())))
                }
                _ => {}
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Self::new(n, cols.unwrap_or(0), data)
    }

    pub fn with_cols(cols: usize) -> Self {
        FeatureMatrix {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Dimension(format!("row of {} into {} columns", row.len(), self.cols)));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Appends all rows of `other`.
    pub fn extend(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.cols != self.cols {
            return Err(Error::Dimension(format!("{} columns into {}", other.cols, self.cols)));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Predictions of every ensemble member: one row per input, one column per member.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    rows: usize,
    members: usize,
    data: Vec<f64>,
}

impl PredictionMatrix {
    pub fn new(rows: usize, members: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * members {
            return Err(Error::Dimension(format!(
                "{} values for {rows} rows of {members} members",
                data.len()
            )));
        }
        Ok(PredictionMatrix { rows, members, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.members..(r + 1) * self.members]
    }

    pub fn row_means(&self) -> Vec<f64> {
        (0..self.rows).map(|r| mean(self.row(r))).collect()
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divide by M) of each row. Rows where every member
/// agrees are exactly zero.
pub fn ensemble_variance(predictions: &PredictionMatrix) -> Result<Vec<f64>> {
    if predictions.members() < 2 {
        return Err(Error::InsufficientEnsemble(predictions.members()));
    }
    Ok((0..predictions.rows())
        .map(|r| population_variance(predictions.row(r)))
        .collect())
}

pub(crate) fn population_variance(row: &[f64]) -> f64 {
    if row.iter().all(|&v| v == row[0]) {
        return 0.0;
    }
    let m = mean(row);
    row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / row.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    trees: Vec<RegressionTree>,
    n_features: usize,
    seed: u64,
}

impl RegressionForest {
    /// Trains `n_trees` trees, each on its own bootstrap sample of the rows.
    ///
    /// Tree `i` draws its bootstrap from a ChaCha stream keyed by a seed taken
    /// from `rng` and the tree index, so the result does not depend on how the
    /// trees are scheduled across threads.
    pub fn fit<R: Rng + ?Sized>(x: &FeatureMatrix, y: &[f64], n_trees: usize, rng: &mut R) -> Result<Self> {
        Self::fit_seeded(x, y, n_trees, rng.random())
    }

    pub fn fit_seeded(x: &FeatureMatrix, y: &[f64], n_trees: usize, seed: u64) -> Result<Self> {
        if n_trees == 0 {
            return Err(Error::Fit("a forest needs at least one tree".into()));
        }
        if y.is_empty() {
            return Err(Error::Fit("empty training set".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::Fit(format!("{} feature rows but {} targets", x.rows(), y.len())));
        }
        if x.cols() == 0 {
            return Err(Error::Fit("no features".into()));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("non-finite target {v}")));
        }
        let sorted = SortedColumns::new(x);
        let n = y.len();
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let mut weights = vec![0u32; n];
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
                RegressionTree::fit_presorted(&sorted, x.cols(), y, &weights)
            })
            .collect();
        Ok(RegressionForest {
            trees,
            n_features: x.cols(),
            seed,
        })
    }

    pub(crate) fn from_trees(trees: Vec<RegressionTree>, n_features: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Corrupt("forest without trees".into()));
        }
        if trees.iter().any(|t| t.n_features() != n_features) {
            return Err(Error::Corrupt("trees disagree on feature count".into()));
        }
        Ok(RegressionForest {
            trees,
            n_features,
            seed: 0,
        })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Seed the bootstrap streams were derived from (0 for deserialized forests).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_dims(&self, x: &FeatureMatrix) -> Result<()> {
        if x.cols() != self.n_features {
            return Err(Error::Dimension(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn predict_per_tree(&self, x: &FeatureMatrix) -> Result<PredictionMatrix> {
        self.check_dims(x)?;
        let m = self.trees.len();
        let mut data = vec![0.0; x.rows() * m];
        // tree-major within a block of rows keeps one tree's nodes in cache
        const BLOCK: usize = 2048;
        data.par_chunks_mut((m * BLOCK).max(1))
            .enumerate()
            .for_each(|(b, out)| {
                let first = b * BLOCK;
                for (j, t) in self.trees.iter().enumerate() {
                    for (i, row_out) in out.chunks_mut(m).enumerate() {
                        row_out[j] = t.predict_row(x.row(first + i));
                    }
                }
            });
        PredictionMatrix::new(x.rows(), m, data)
    }

    /// Mean over trees. Identical to the row means of [`Self::predict_per_tree`].
    pub fn predict_mean(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.predict_per_tree(x)?.row_means())
    }
}
