use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::linalg::pairwise_sum;
use crate::model::{forward_all, half_sq_error, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of `½‖y_n − out_n‖²` over the evaluated nodes.
    pub mean_l2_error: f64,
    /// Fraction of nodes whose output argmax differs from the label argmax
    /// (only reported for `k >= 2`).
    pub classification_error: Option<f64>,
    pub node_count: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mean_half_sq_error,classification_error,eval_nodes";

    pub fn csv_fields(&self) -> String {
        let cls = self.classification_error.map_or(String::new(), |c| format!("{c:?}"));
        format!("{:?},{cls},{}", self.mean_l2_error, self.node_count)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Metrics from precomputed `k × N` outputs.
pub fn report_from_outputs(out: &Array2<f64>, y: ArrayView2<'_, f64>, nodes: &[usize]) -> Result<EvalReport> {
    if nodes.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if out.dim() != y.dim() {
        return Err(Error::dims(format!("outputs {:?} vs labels {:?}", out.dim(), y.dim())));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    if let Some(&bad) = sorted.iter().find(|&&n| n >= out.ncols()) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            num_nodes: out.ncols(),
        });
    }
    let losses: Vec<f64> = sorted
        .iter()
        .map(|&n| half_sq_error(out.column(n).iter().copied(), y.column(n).iter().copied()))
        .collect();
    let count = sorted.len() as f64;
    let classification_error = (out.nrows() >= 2).then(|| {
        let wrong = sorted
            .iter()
            .filter(|&&n| argmax(out.column(n)) != argmax(y.column(n)))
            .count();
        wrong as f64 / count
    });
    Ok(EvalReport {
        mean_l2_error: pairwise_sum(&losses) / count,
        classification_error,
        node_count: sorted.len(),
    })
}

pub fn evaluate(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    a_eval1: &SparseMatrix,
    a_eval2: &SparseMatrix,
    nodes: &[usize],
    y: ArrayView2<'_, f64>,
) -> Result<EvalReport> {
    if nodes.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let out = forward_all(x, a_eval1, a_eval2, params)?;
    report_from_outputs(&out, y, nodes)
}
