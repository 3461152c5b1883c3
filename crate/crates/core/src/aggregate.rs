//! Collapsing the m beams of each demonstration set into one row of the
//! L×|Y| matrix A.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::stable_sum;
use crate::records::QuestionBundle;
use crate::registry::{Named, Registry};

/// Dense row-major matrix of nonnegative label mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).ok_or(Error::Empty("matrix rows"))?;
        if cols == 0 {
            return Err(Error::Dimension("matrix has zero columns".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension(format!(
                "ragged matrix: expected {cols} columns, found {}",
                bad.len()
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Column-wise sum over rows, order independent.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| {
                let col: Vec<f64> = self.iter_rows().map(|r| r[j]).collect();
                stable_sum(&col)
            })
            .collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

/// Strategy for turning one set's beams into a single label-mass row.
pub trait BeamAggregator: Named + Send + Sync {
    fn aggregate_set(&self, bundle: &QuestionBundle, set: usize) -> Result<Vec<f64>>;

    fn aggregate(&self, bundle: &QuestionBundle) -> Result<ProbMatrix> {
        let rows = (0..bundle.num_sets())
            .map(|l| self.aggregate_set(bundle, l))
            .collect::<Result<Vec<_>>>()?;
        ProbMatrix::from_rows(&rows)
    }
}

/// Unweighted mean of the beam vectors.
pub struct MeanAggregator;

impl Named for MeanAggregator {
    fn name(&self) -> &'static str {
        "mean"
    }
}

impl BeamAggregator for MeanAggregator {
    fn aggregate_set(&self, bundle: &QuestionBundle, set: usize) -> Result<Vec<f64>> {
        let m = bundle.beams_per_set();
        Ok((0..bundle.num_labels())
            .map(|j| {
                let col: Vec<f64> = (0..m).map(|b| bundle.beam(set, b)[j]).collect();
                stable_sum(&col) / m as f64
            })
            .collect())
    }
}

/// Convex combination with weights softmax(sequence_score).
pub struct ScoreWeightedAggregator;

impl Named for ScoreWeightedAggregator {
    fn name(&self) -> &'static str {
        "score_weighted"
    }
}

impl BeamAggregator for ScoreWeightedAggregator {
    fn aggregate_set(&self, bundle: &QuestionBundle, set: usize) -> Result<Vec<f64>> {
        let m = bundle.beams_per_set();
        let scores = (0..m)
            .map(|b| bundle.sequence_score(set, b))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::MissingSequenceScore {
                context: format!("question {:?}, set {set}", bundle.question_id()),
            })?;
        let weights = crate::numeric::softmax(&scores);
        Ok((0..bundle.num_labels())
            .map(|j| {
                let terms: Vec<f64> = (0..m).map(|b| weights[b] * bundle.beam(set, b)[j]).collect();
                stable_sum(&terms)
            })
            .collect())
    }
}

pub fn registry() -> Registry<dyn BeamAggregator> {
    Registry::new("aggregation mode")
        .with(Arc::new(MeanAggregator) as Arc<dyn BeamAggregator>)
        .with(Arc::new(ScoreWeightedAggregator) as Arc<dyn BeamAggregator>)
}

pub const DEFAULT_MODE: &str = "mean";

/// Aggregates `bundle` with the aggregator registered under `mode`.
pub fn aggregate_beams(bundle: &QuestionBundle, mode: &str) -> Result<ProbMatrix> {
    registry().get(mode)?.aggregate(bundle)
}
