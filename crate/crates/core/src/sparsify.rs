//! Adjacency pruning: degree-block budgets and the effective adjacency `A*`, the
//! block-wise and global-fraction Bernoulli samplers, deterministic band
//! retention, and the ℓ1 deviation metric.
//!
//! Every sampler reduces to a per-entry retention probability over the stored
//! entries of the input matrix (a [`RetentionPlan`]). Column `c` of a draw is
//! sampled from the stream `stream.child(c)`, so a whole-matrix draw and a lazy
//! column-by-column draw from the same stream produce identical entries.

use std::cmp::Ordering;

use log::warn;
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{merge_columns, DegreeGrouping, SparseMatrix};
use crate::rng::Stream;

/// Whether a block's retention budget `K_ij` counts entries per column of the
/// block or over the whole block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScope {
    /// Each column keeps its `K_ij` largest entries among rows of group `i`.
    #[default]
    PerColumn,
    /// The block `B_ij` as a whole keeps its `K_ij` largest entries.
    PerBlock,
}

fn ceil_budget(x: f64) -> usize {
    ((x - 1e-9).ceil().max(1.0)) as usize
}

/// `K_ij = ⌈d_1 √(d_i / d_j)⌉` below the diagonal (`i > j`), `⌈d_1⌉` elsewhere.
/// Row index `i` is the row group, `j` the column group.
pub fn block_counts(grouping: &DegreeGrouping) -> Array2<usize> {
    let d = grouping.representative_degrees();
    let d1 = grouping.lowest_degree();
    let l = d.len();
    Array2::from_shape_fn((l, l), |(i, j)| {
        if i > j {
            ceil_budget(d1 * (d[i] / d[j]).sqrt())
        } else {
            ceil_budget(d1)
        }
    })
}

/// Ranking order shared by every sampler: value descending, then row, then column.
#[inline]
fn rank_order(a: (f64, usize, usize), b: (f64, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Marks, per stored entry of `a`, whether it belongs to its block's top `K_ij`.
pub fn effective_mask(a: &SparseMatrix, grouping: &DegreeGrouping, scope: BudgetScope) -> Result<Vec<bool>> {
    if a.rows() != grouping.num_nodes() || a.cols() != grouping.num_nodes() {
        return Err(Error::dims(format!(
            "matrix is {:?}, grouping covers {} nodes",
            a.dims(),
            grouping.num_nodes()
        )));
    }
    let k = block_counts(grouping);
    let l = grouping.num_groups();
    let rows = a.row_indices();
    let vals = a.values();
    let mut top = vec![false; a.nnz()];
    match scope {
        BudgetScope::PerColumn => {
            let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); l];
            for c in 0..a.cols() {
                let gj = grouping.group_of(c);
                buckets.iter_mut().for_each(Vec::clear);
                for e in a.col_range(c) {
                    buckets[grouping.group_of(rows[e])].push(e);
                }
                for (gi, bucket) in buckets.iter_mut().enumerate() {
                    let budget = k[[gi, gj]];
                    if bucket.len() > budget {
                        bucket.sort_by(|&x, &y| rank_order((vals[x], rows[x], c), (vals[y], rows[y], c)));
                    }
                    for &e in bucket.iter().take(budget) {
                        top[e] = true;
                    }
                }
            }
        }
        BudgetScope::PerBlock => {
            let mut blocks: Vec<Vec<(usize, usize)>> = vec![Vec::new(); l * l];
            for c in 0..a.cols() {
                let gj = grouping.group_of(c);
                for e in a.col_range(c) {
                    blocks[grouping.group_of(rows[e]) * l + gj].push((e, c));
                }
            }
            for (b, block) in blocks.iter_mut().enumerate() {
                let budget = k[[b / l, b % l]];
                if block.len() > budget {
                    block.sort_by(|&(x, cx), &(y, cy)| rank_order((vals[x], rows[x], cx), (vals[y], rows[y], cy)));
                }
                for &(e, _) in block.iter().take(budget) {
                    top[e] = true;
                }
            }
        }
    }
    Ok(top)
}

/// The sparse effective adjacency `A*`: every block's top `K_ij` entries keep
/// their values, everything else is zeroed.
pub fn build_effective_adjacency(
    a: &SparseMatrix,
    grouping: &DegreeGrouping,
    scope: BudgetScope,
) -> Result<SparseMatrix> {
    let mask = effective_mask(a, grouping, scope)?;
    Ok(a.filter_entries(|e| mask[e]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPruneConfig {
    /// `p_ij`: probability of pruning the top entries of block `(i, j)`; the
    /// remaining entries are kept with the same probability.
    pub prune_prob: Array2<f64>,
    pub scope: BudgetScope,
}

impl BlockPruneConfig {
    pub fn uniform(num_groups: usize, p: f64) -> Self {
        Self {
            prune_prob: Array2::from_elem((num_groups, num_groups), p),
            scope: BudgetScope::default(),
        }
    }

    pub fn validate(&self, num_groups: usize) -> Result<()> {
        if self.prune_prob.dim() != (num_groups, num_groups) {
            return Err(Error::config(format!(
                "prune_prob is {:?}, expected {num_groups}x{num_groups}",
                self.prune_prob.dim()
            )));
        }
        if self.prune_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("prune probabilities must lie in [0, 1]"));
        }
        if self.prune_prob.iter().any(|&p| p > 0.5) {
            warn!("block prune probabilities above 1/2 retain small entries more often than large ones");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPruneConfig {
    pub top_fraction: f64,
    #[serde(default = "default_retain_top")]
    pub retain_top_prob: f64,
    #[serde(default = "default_retain_rest")]
    pub retain_rest_prob: f64,
}

fn default_retain_top() -> f64 {
    0.99
}

fn default_retain_rest() -> f64 {
    0.01
}

impl GlobalPruneConfig {
    pub fn new(top_fraction: f64) -> Self {
        Self {
            top_fraction,
            retain_top_prob: default_retain_top(),
            retain_rest_prob: default_retain_rest(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("top_fraction", self.top_fraction),
            ("retain_top_prob", self.retain_top_prob),
            ("retain_rest_prob", self.retain_rest_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRetainConfig {
    pub band_start: f64,
    #[serde(default = "default_band_width")]
    pub band_width: f64,
}

fn default_band_width() -> f64 {
    0.5
}

impl BandRetainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.band_start)
            && self.band_width > 0.0
            && self.band_width <= 1.0
            && self.band_start + self.band_width <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "band [{}, {}+{}) is not inside [0, 1]",
                self.band_start, self.band_start, self.band_width
            )))
        }
    }
}

/// Global rank of every stored entry (0 = largest) under [`rank_order`].
pub fn global_ranks(a: &SparseMatrix) -> Vec<usize> {
    let cols = a.entry_cols();
    let rows = a.row_indices();
    let vals = a.values();
    let mut order: Vec<usize> = (0..a.nnz()).collect();
    order.sort_by(|&x, &y| rank_order((vals[x], rows[x], cols[x]), (vals[y], rows[y], cols[y])));
    let mut rank = vec![0; a.nnz()];
    for (r, e) in order.into_iter().enumerate() {
        rank[e] = r;
    }
    rank
}

/// Number of entries in the top `q` fraction of `nnz`: `⌈q · nnz⌉`.
pub fn top_count(q: f64, nnz: usize) -> usize {
    (((q * nnz as f64) - 1e-9).ceil().max(0.0) as usize).min(nnz)
}

/// Per-entry retention probabilities over the stored entries of a base matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionPlan {
    probs: Vec<f64>,
}

impl RetentionPlan {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn blockwise(a: &SparseMatrix, grouping: &DegreeGrouping, cfg: &BlockPruneConfig) -> Result<Self> {
        cfg.validate(grouping.num_groups())?;
        let top = effective_mask(a, grouping, cfg.scope)?;
        let rows = a.row_indices();
        let mut probs = Vec::with_capacity(a.nnz());
        for c in 0..a.cols() {
            let gj = grouping.group_of(c);
            for e in a.col_range(c) {
                let p = cfg.prune_prob[[grouping.group_of(rows[e]), gj]];
                probs.push(if top[e] { 1.0 - p } else { p });
            }
        }
        Ok(Self { probs })
    }

    pub fn global(a: &SparseMatrix, cfg: &GlobalPruneConfig) -> Result<Self> {
        cfg.validate()?;
        let keep_top = top_count(cfg.top_fraction, a.nnz());
        let probs = global_ranks(a)
            .into_iter()
            .map(|r| {
                if r < keep_top {
                    cfg.retain_top_prob
                } else {
                    cfg.retain_rest_prob
                }
            })
            .collect();
        Ok(Self { probs })
    }

    /// Draw column `c`, calling `visit(storage position, kept)` for every
    /// stored entry of the column in storage order.
    #[inline]
    pub fn sample_column(&self, a: &SparseMatrix, stream: &Stream, c: usize, mut visit: impl FnMut(usize, bool)) {
        let mut rng = stream.child(c as u64).rng();
        for e in a.col_range(c) {
            let u: f64 = rng.gen();
            visit(e, u < self.probs[e]);
        }
    }

    /// Kept `(row, value)` pairs of column `c`.
    pub fn sample_column_entries(&self, a: &SparseMatrix, stream: &Stream, c: usize) -> Vec<(usize, f64)> {
        let rows = a.row_indices();
        let vals = a.values();
        let mut out = Vec::new();
        self.sample_column(a, stream, c, |e, keep| {
            if keep {
                out.push((rows[e], vals[e]));
            }
        });
        out
    }

    pub fn sample(&self, a: &SparseMatrix, stream: &Stream) -> SparseMatrix {
        assert_eq!(self.probs.len(), a.nnz(), "plan built for a different matrix");
        let mut keep = vec![false; a.nnz()];
        for c in 0..a.cols() {
            self.sample_column(a, stream, c, |e, k| keep[e] = k);
        }
        a.filter_entries(|e| keep[e])
    }

    /// Expected ℓ1 mass of column `c` that disagrees with the `top` mask.
    pub fn expected_column_deviation(&self, a: &SparseMatrix, top: &[bool], c: usize) -> f64 {
        a.col_range(c)
            .map(|e| {
                let miss = if top[e] { 1.0 - self.probs[e] } else { self.probs[e] };
                miss * a.values()[e].abs()
            })
            .sum()
    }
}

pub fn sample_blockwise(
    a: &SparseMatrix,
    grouping: &DegreeGrouping,
    cfg: &BlockPruneConfig,
    stream: &Stream,
) -> Result<SparseMatrix> {
    Ok(RetentionPlan::blockwise(a, grouping, cfg)?.sample(a, stream))
}

pub fn sample_global_fraction(a: &SparseMatrix, cfg: &GlobalPruneConfig, stream: &Stream) -> Result<SparseMatrix> {
    Ok(RetentionPlan::global(a, cfg)?.sample(a, stream))
}

/// Keep the entries whose global rank fraction `rank / nnz` lies in `[s, s + w)`.
pub fn band_retain(a: &SparseMatrix, cfg: &BandRetainConfig) -> Result<SparseMatrix> {
    cfg.validate()?;
    let nnz = a.nnz() as f64;
    let hi = cfg.band_start + cfg.band_width;
    let ranks = global_ranks(a);
    Ok(a.filter_entries(|e| {
        let f = ranks[e] as f64 / nnz;
        f >= cfg.band_start && (f < hi || hi >= 1.0)
    }))
}

/// `‖sampled − effective‖₁` (maximum absolute column sum of the difference).
pub fn deviation_l1(sampled: &SparseMatrix, effective: &SparseMatrix) -> Result<f64> {
    if sampled.dims() != effective.dims() {
        return Err(Error::dims(format!(
            "sampled {:?} vs effective {:?}",
            sampled.dims(),
            effective.dims()
        )));
    }
    let mut best = 0.0f64;
    for c in 0..sampled.cols() {
        let mut s = 0.0;
        merge_columns(sampled.col(c), effective.col(c), |_, x, y| s += (x - y).abs());
        best = best.max(s);
    }
    Ok(best)
}

/// Independent draws of `‖Aᵗ − A*‖₁`, one per draw index, each from
/// `stream.child(draw)`. Results come back in draw order.
pub fn monte_carlo_deviation(
    a: &SparseMatrix,
    plan: &RetentionPlan,
    effective: &SparseMatrix,
    draws: usize,
    stream: &Stream,
) -> Result<Vec<f64>> {
    (0..draws)
        .into_par_iter()
        .map(|t| deviation_l1(&plan.sample(a, &stream.child(t as u64)), effective))
        .collect()
}

/// CSV lines `iteration,layer,deviation_l1`.
pub fn deviation_report_csv(rows: &[(usize, usize, f64)]) -> String {
    let mut s = String::from("iteration,layer,deviation_l1\n");
    for (it, layer, dev) in rows {
        s.push_str(&format!("{it},{layer},{dev:?}\n"));
    }
    s
}

/// Block prune probabilities as written in a config file: one number for every
/// block, or a full `L × L` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PruneProb {
    Uniform(f64),
    Table(Vec<Vec<f64>>),
}

impl PruneProb {
    pub fn to_matrix(&self, num_groups: usize) -> Result<Array2<f64>> {
        match self {
            PruneProb::Uniform(p) => Ok(Array2::from_elem((num_groups, num_groups), *p)),
            PruneProb::Table(rows) => {
                if rows.len() != num_groups || rows.iter().any(|r| r.len() != num_groups) {
                    return Err(Error::config(format!(
                        "prune_prob table must be {num_groups}x{num_groups}"
                    )));
                }
                Ok(Array2::from_shape_fn((num_groups, num_groups), |(i, j)| rows[i][j]))
            }
        }
    }

    pub fn scaled(&self, s: f64) -> PruneProb {
        match self {
            PruneProb::Uniform(p) => PruneProb::Uniform((p * s).clamp(0.0, 1.0)),
            PruneProb::Table(rows) => PruneProb::Table(
                rows.iter()
                    .map(|r| r.iter().map(|p| (p * s).clamp(0.0, 1.0)).collect())
                    .collect(),
            ),
        }
    }
}

/// One layer's sparsifier as it appears in a config file section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplerConfig {
    #[default]
    None,
    Blockwise {
        prune_prob: PruneProb,
        #[serde(default)]
        scope: BudgetScope,
    },
    Global(GlobalPruneConfig),
    Band(BandRetainConfig),
}

impl SamplerConfig {
    pub fn mode_name(&self) -> &'static str {
        match self {
            SamplerConfig::None => "none",
            SamplerConfig::Blockwise { .. } => "blockwise",
            SamplerConfig::Global(_) => "global",
            SamplerConfig::Band(_) => "band",
        }
    }

    /// Turn the config into a concrete sampler over base matrix `a`.
    pub fn resolve(&self, a: &SparseMatrix, grouping: Option<&DegreeGrouping>) -> Result<LayerSampler> {
        Ok(match self {
            SamplerConfig::None => LayerSampler::Fixed(a.clone()),
            SamplerConfig::Band(cfg) => LayerSampler::Fixed(band_retain(a, cfg)?),
            SamplerConfig::Global(cfg) => LayerSampler::Random(RetentionPlan::global(a, cfg)?),
            SamplerConfig::Blockwise { prune_prob, scope } => {
                let grouping = grouping.ok_or_else(|| Error::config("blockwise sampling needs a degree grouping"))?;
                let cfg = BlockPruneConfig {
                    prune_prob: prune_prob.to_matrix(grouping.num_groups())?,
                    scope: *scope,
                };
                LayerSampler::Random(RetentionPlan::blockwise(a, grouping, &cfg)?)
            }
        })
    }
}

/// A resolved per-layer sampler over a fixed base matrix.
#[derive(Debug, Clone)]
pub enum LayerSampler {
    /// Deterministic matrix reused every iteration (no sparsifier, or band retention).
    Fixed(SparseMatrix),
    /// Fresh Bernoulli draw of the base matrix per iteration.
    Random(RetentionPlan),
}

impl LayerSampler {
    pub fn is_random(&self) -> bool {
        matches!(self, LayerSampler::Random(_))
    }

    /// Materialize the matrix for one stream.
    pub fn draw(&self, base: &SparseMatrix, stream: &Stream) -> SparseMatrix {
        match self {
            LayerSampler::Fixed(m) => m.clone(),
            LayerSampler::Random(plan) => plan.sample(base, stream),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{assign_degree_groups, build_normalized_adjacency, DegreeMode, Graph, GroupAssignment};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn grouping_with(degrees: &[f64], assignment: Vec<usize>) -> DegreeGrouping {
        // test-only constructor through JSON to avoid a public unchecked constructor
        let mut sizes = vec![0; degrees.len()];
        for &g in &assignment {
            sizes[g] += 1;
        }
        serde_json::from_value(serde_json::json!({
            "group_of": assignment,
            "group_sizes": sizes,
            "representative_degree": degrees,
        }))
        .unwrap()
    }

    #[test]
    fn block_count_examples() {
        let g1 = DegreeGrouping::single(3, 200.0);
        assert_eq!(block_counts(&g1)[[0, 0]], 200);
        let g2 = grouping_with(&[200.0, 800.0], vec![0, 1]);
        let k = block_counts(&g2);
        assert_eq!(k[[1, 0]], 400);
        assert_eq!(k[[0, 1]], 200);
        assert_eq!(k[[1, 1]], 200);
        assert_eq!(k[[0, 0]], 200);
    }

    /// Brute force: list every entry of each block, sort, keep the top K.
    fn brute_force_effective(a: &Array2<f64>, groups: &[usize], k: &Array2<usize>, per_column: bool) -> Array2<f64> {
        let n = a.nrows();
        let l = k.nrows();
        let mut out = Array2::zeros((n, n));
        for gi in 0..l {
            for gj in 0..l {
                let col_sets: Vec<Vec<usize>> = if per_column {
                    (0..n).filter(|&c| groups[c] == gj).map(|c| vec![c]).collect()
                } else {
                    vec![(0..n).filter(|&c| groups[c] == gj).collect()]
                };
                for cols in col_sets {
                    let mut entries = vec![];
                    for &c in &cols {
                        for r in 0..n {
                            if groups[r] == gi && a[[r, c]] != 0.0 {
                                entries.push((a[[r, c]], r, c));
                            }
                        }
                    }
                    entries.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
                    for &(v, r, c) in entries.iter().take(k[[gi, gj]]) {
                        out[[r, c]] = v;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_group_with_large_budget_is_identity_map() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let a = build_normalized_adjacency(&g, DegreeMode::FromTildePlusIdentity).unwrap();
        let grouping = DegreeGrouping::single(4, 10.0);
        for scope in [BudgetScope::PerBlock, BudgetScope::PerColumn] {
            assert_eq!(build_effective_adjacency(&a, &grouping, scope).unwrap(), a);
        }
    }

    #[test]
    fn four_node_two_group_toy_matches_brute_force() {
        // hand-listed entries with ties
        let dense = array![
            [0.50, 0.20, 0.10, 0.30],
            [0.20, 0.40, 0.30, 0.00],
            [0.10, 0.30, 0.25, 0.25],
            [0.30, 0.00, 0.25, 0.20],
        ];
        let a = SparseMatrix::from_dense(dense.view());
        let groups = vec![0, 0, 1, 1];
        let grouping = grouping_with(&[1.0, 4.0], groups.clone());
        let k = block_counts(&grouping);
        // K = [[1, 1], [2, 1]]
        assert_eq!(k, array![[1, 1], [2, 1]]);
        for (scope, per_col) in [(BudgetScope::PerBlock, false), (BudgetScope::PerColumn, true)] {
            let got = build_effective_adjacency(&a, &grouping, scope).unwrap().to_dense();
            assert_eq!(got, brute_force_effective(&dense, &groups, &k, per_col), "{scope:?}");
        }
        // per-block, block (1, 1) holds 0.25 at (2,2), 0.25 at (3,2), 0.25 at (2,3), 0.20:
        // tie broken by row then column -> (2,2) survives
        let blk = build_effective_adjacency(&a, &grouping, BudgetScope::PerBlock).unwrap();
        assert_eq!(blk.get(2, 2), 0.25);
        assert_eq!(blk.get(3, 2), 0.0);
        assert_eq!(blk.get(2, 3), 0.0);
    }

    #[test]
    fn blockwise_limits() {
        let g = Graph::new(6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (0, 3)]).unwrap();
        let a = build_normalized_adjacency(&g, DegreeMode::FromTildePlusIdentity).unwrap();
        let grouping = DegreeGrouping::single(6, 1.0);
        let eff = build_effective_adjacency(&a, &grouping, BudgetScope::PerColumn).unwrap();
        let s = Stream::new(9);
        let p0 = sample_blockwise(&a, &grouping, &BlockPruneConfig::uniform(1, 0.0), &s).unwrap();
        assert_eq!(p0, eff);
        let p1 = sample_blockwise(&a, &grouping, &BlockPruneConfig::uniform(1, 1.0), &s).unwrap();
        let mask = effective_mask(&a, &grouping, BudgetScope::PerColumn).unwrap();
        assert_eq!(p1, a.filter_entries(|e| !mask[e]));
    }

    #[test]
    fn global_fraction_examples() {
        let dense = array![[0.6, 0.1, 0.0], [0.5, 0.0, 0.2], [0.0, 0.3, 0.4]];
        let a = SparseMatrix::from_dense(dense.view());
        let s = Stream::new(1);
        let all = GlobalPruneConfig {
            top_fraction: 1.0,
            retain_top_prob: 1.0,
            retain_rest_prob: 0.0,
        };
        assert_eq!(sample_global_fraction(&a, &all, &s).unwrap(), a);
        let none = GlobalPruneConfig {
            top_fraction: 0.5,
            retain_top_prob: 0.0,
            retain_rest_prob: 0.0,
        };
        assert_eq!(sample_global_fraction(&a, &none, &s).unwrap().nnz(), 0);
        let half = GlobalPruneConfig {
            top_fraction: 0.5,
            retain_top_prob: 1.0,
            retain_rest_prob: 0.0,
        };
        let got = sample_global_fraction(&a, &half, &s).unwrap();
        assert_eq!(
            got.to_dense(),
            array![[0.6, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.4]]
        );
        assert!(GlobalPruneConfig::new(1.5).validate().is_err());
    }

    #[test]
    fn band_examples() {
        let dense = array![[0.4, 0.1], [0.3, 0.2]];
        let a = SparseMatrix::from_dense(dense.view());
        let full = band_retain(
            &a,
            &BandRetainConfig {
                band_start: 0.0,
                band_width: 1.0,
            },
        )
        .unwrap();
        assert_eq!(full, a);
        let top = band_retain(
            &a,
            &BandRetainConfig {
                band_start: 0.0,
                band_width: 0.5,
            },
        )
        .unwrap();
        assert_eq!(top.to_dense(), array![[0.4, 0.0], [0.3, 0.0]]);
        assert!(band_retain(
            &a,
            &BandRetainConfig {
                band_start: 0.7,
                band_width: 0.5
            }
        )
        .is_err());
    }

    #[test]
    fn deviation_examples() {
        let a = SparseMatrix::from_dense(array![[0.4, 0.1], [0.3, 0.2]].view());
        assert_eq!(deviation_l1(&a, &a).unwrap(), 0.0);
        assert_eq!(deviation_l1(&SparseMatrix::zeros(2, 2), &a).unwrap(), a.l1_norm());
        assert!(deviation_l1(&SparseMatrix::zeros(3, 3), &a).is_err());
        let b = SparseMatrix::from_dense(array![[0.0, 0.5], [0.3, 0.0]].view());
        // dense oracle: |a - b| column sums (0.4, 0.6)
        let diff = a.to_dense() - b.to_dense();
        let oracle = crate::graph::dense_l1_norm(diff.view());
        assert!((deviation_l1(&b, &a).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn sampler_config_parses_from_toml() {
        let s: SamplerConfig = toml::from_str("mode = \"global\"\ntop_fraction = 0.3\n").unwrap();
        assert_eq!(s, SamplerConfig::Global(GlobalPruneConfig::new(0.3)));
        let b: SamplerConfig = toml::from_str("mode = \"blockwise\"\nprune_prob = [[0.1, 0.2], [0.2, 0.3]]\n").unwrap();
        assert!(matches!(
            b,
            SamplerConfig::Blockwise {
                prune_prob: PruneProb::Table(_),
                ..
            }
        ));
        let band: SamplerConfig = toml::from_str("mode = \"band\"\nband_start = 0.5\n").unwrap();
        assert_eq!(
            band,
            SamplerConfig::Band(BandRetainConfig {
                band_start: 0.5,
                band_width: 0.5
            })
        );
        let none: SamplerConfig = toml::from_str("mode = \"none\"\n").unwrap();
        assert_eq!(none, SamplerConfig::None);
    }

    fn random_graph_strategy() -> impl Strategy<Value = (Graph, u64)> {
        (4usize..40, any::<u64>(), 0.05f64..0.5).prop_map(|(n, seed, density)| {
            let mut rng = Stream::new(seed).rng();
            let mut edges = vec![];
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.gen::<f64>() < density {
                        edges.push((u, v));
                    }
                }
            }
            (Graph::new(n, edges).unwrap(), seed)
        })
    }

    fn two_groups(g: &Graph) -> Option<DegreeGrouping> {
        let deg = g.degrees();
        let mut sorted = deg.clone();
        sorted.sort_unstable();
        let cut = sorted[sorted.len() / 2] as f64 + 0.5;
        assign_degree_groups(g, &GroupAssignment::Thresholds(vec![cut]))
            .or_else(|_| assign_degree_groups(g, &GroupAssignment::Thresholds(vec![])))
            .ok()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn effective_is_idempotent((g, _) in random_graph_strategy()) {
            let a = build_normalized_adjacency(&g, DegreeMode::FromTildePlusIdentity).unwrap();
            if let Some(grouping) = two_groups(&g) {
                for scope in [BudgetScope::PerColumn, BudgetScope::PerBlock] {
                    let once = build_effective_adjacency(&a, &grouping, scope).unwrap();
                    let twice = build_effective_adjacency(&once, &grouping, scope).unwrap();
                    prop_assert_eq!(&once, &twice);
                }
            }
        }

        #[test]
        fn samplers_are_dominated_and_deterministic((g, seed) in random_graph_strategy(), p in 0.0f64..1.0, q in 0.0f64..1.0, s in 0.0f64..0.5) {
            let a = build_normalized_adjacency(&g, DegreeMode::FromTildePlusIdentity).unwrap();
            let stream = Stream::new(seed);
            let mut outs = vec![
                sample_global_fraction(&a, &GlobalPruneConfig::new(q), &stream).unwrap(),
                band_retain(&a, &BandRetainConfig { band_start: s, band_width: 0.5 }).unwrap(),
            ];
            if let Some(grouping) = two_groups(&g) {
                let cfg = BlockPruneConfig::uniform(grouping.num_groups(), p);
                let x = sample_blockwise(&a, &grouping, &cfg, &stream).unwrap();
                prop_assert_eq!(&x, &sample_blockwise(&a, &grouping, &cfg, &stream).unwrap());
                outs.push(x);
                outs.push(build_effective_adjacency(&a, &grouping, BudgetScope::PerBlock).unwrap());
            }
            for o in &outs {
                prop_assert!(o.is_dominated_by(&a));
            }
            prop_assert_eq!(&outs[0], &sample_global_fraction(&a, &GlobalPruneConfig::new(q), &stream).unwrap());
        }

        #[test]
        fn bands_partition_the_entries((g, _) in random_graph_strategy()) {
            let a = build_normalized_adjacency(&g, DegreeMode::FromTildePlusIdentity).unwrap();
            let lo = band_retain(&a, &BandRetainConfig { band_start: 0.0, band_width: 0.5 }).unwrap();
            let hi = band_retain(&a, &BandRetainConfig { band_start: 0.5, band_width: 0.5 }).unwrap();
            prop_assert_eq!(lo.nnz() + hi.nnz(), a.nnz());
            for (r, c, v) in a.iter() {
                let in_lo = lo.get(r, c) == v;
                let in_hi = hi.get(r, c) == v;
                prop_assert!(in_lo ^ in_hi);
            }
        }
    }

    #[test]
    fn lazy_columns_match_whole_matrix_draw() {
        let g = Graph::new(8, (0..8).flat_map(|u| ((u + 1)..8).map(move |v| (u, v))).collect()).unwrap();
        let a = build_normalized_adjacency(&g, DegreeMode::FromTildePlusIdentity).unwrap();
        let plan = RetentionPlan::global(
            &a,
            &GlobalPruneConfig {
                top_fraction: 0.4,
                retain_top_prob: 0.7,
                retain_rest_prob: 0.3,
            },
        )
        .unwrap();
        let s = Stream::new(77).child(3);
        let whole = plan.sample(&a, &s);
        for c in 0..8 {
            let (rows, vals) = whole.col(c);
            let lazy = plan.sample_column_entries(&a, &s, c);
            assert_same_column(rows, vals, &lazy);
        }
    }

    fn assert_same_column(rows: &[usize], vals: &[f64], lazy: &[(usize, f64)]) {
        assert_eq!(rows.len(), lazy.len());
        for ((r, v), (lr, lv)) in rows.iter().zip(vals).zip(lazy) {
            assert_eq!((*r, *v), (*lr, *lv));
        }
    }
}
