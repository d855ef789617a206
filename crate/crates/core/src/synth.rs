//! Synthetic benchmark: degree-group random graphs, unit-norm Gaussian features
//! and labels from `H = F + α G(F)` with
//!
//! ```text
//! F = C W* X A*,   G(F) = C (sin(V* F A*) ⊙ tanh(V* F A*))
//! ```

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    assign_degree_groups, build_normalized_adjacency, right_multiply, DegreeGrouping, DegreeMode, Graph,
    GroupAssignment, SparseMatrix,
};
use crate::rng::{tag, Stream};
use crate::sparsify::{build_effective_adjacency, BudgetScope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeGroupSpec {
    pub size: usize,
    pub mean_degree: f64,
    pub degree_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGraphSpec {
    pub groups: Vec<DegreeGroupSpec>,
    #[serde(default = "default_clamp")]
    pub degree_clamp: (f64, f64),
}

fn default_clamp() -> (f64, f64) {
    (0.0, 500.0)
}

impl SyntheticGraphSpec {
    pub fn new(groups: Vec<DegreeGroupSpec>) -> Self {
        Self {
            groups,
            degree_clamp: default_clamp(),
        }
    }

    /// Two groups: `n1` nodes around `d1`, `n2` nodes around `d2`, shared `std`.
    pub fn two_group(n1: usize, d1: f64, n2: usize, d2: f64, std: f64) -> Self {
        Self::new(vec![
            DegreeGroupSpec {
                size: n1,
                mean_degree: d1,
                degree_std: std,
            },
            DegreeGroupSpec {
                size: n2,
                mean_degree: d2,
                degree_std: std,
            },
        ])
    }

    pub fn num_nodes(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::config("graph spec needs at least one group"));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.size == 0 || !(g.mean_degree > 0.0) || !(g.degree_std >= 0.0) {
                return Err(Error::config(format!(
                    "group {i}: size must be >= 1, mean degree > 0, std >= 0"
                )));
            }
        }
        let (lo, hi) = self.degree_clamp;
        if !(lo < hi) || lo < 0.0 {
            return Err(Error::config(format!(
                "degree clamp ({lo}, {hi}) must satisfy 0 <= lo < hi"
            )));
        }
        Ok(())
    }

    /// Group index per node; nodes are numbered group by group.
    pub fn group_assignment(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, spec)| std::iter::repeat_n(g, spec.size))
            .collect()
    }
}

/// Per-node target degree: a Gaussian draw clamped to the spec range, then rounded.
pub fn target_degrees(spec: &SyntheticGraphSpec, stream: &Stream) -> Result<Vec<usize>> {
    spec.validate()?;
    let (lo, hi) = spec.degree_clamp;
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(spec.num_nodes());
    for (i, g) in spec.groups.iter().enumerate() {
        if g.mean_degree > hi || g.mean_degree < lo {
            log::warn!(
                "group {i}: mean degree {} lies outside the degree clamp ({lo}, {hi})",
                g.mean_degree
            );
        }
        let normal = Normal::new(g.mean_degree, g.degree_std).map_err(|e| Error::config(e.to_string()))?;
        for _ in 0..g.size {
            let x: f64 = normal.sample(&mut rng);
            out.push(x.clamp(lo, hi).round() as usize);
        }
    }
    Ok(out)
}

/// Inclusion probability of pair `(u, v)` under expected-degree wiring.
pub fn inclusion_probability(t_u: f64, t_v: f64, total: f64) -> f64 {
    (t_u * t_v / total).min(1.0)
}

/// Expected-degree (Chung–Lu) graph. Each pair `u < v` is included independently
/// with [`inclusion_probability`]; pairs are visited with geometric skips so the
/// cost is linear in the number of edges.
pub fn chung_lu(targets: &[usize], stream: &Stream) -> Result<Graph> {
    let n = targets.len();
    let total: f64 = targets.iter().map(|&t| t as f64).sum();
    if total == 0.0 {
        return Err(Error::DegenerateSpec("every target degree is 0".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| targets[b].cmp(&targets[a]).then(a.cmp(&b)));
    let w: Vec<f64> = order.iter().map(|&i| targets[i] as f64).collect();
    let mut rng = stream.rng();
    let mut edges = Vec::new();
    for u in 0..n {
        if w[u] == 0.0 {
            break;
        }
        let mut v = u + 1;
        let mut p = if v < n {
            inclusion_probability(w[u], w[v], total)
        } else {
            0.0
        };
        while v < n && p > 0.0 {
            if p < 1.0 {
                let r: f64 = rng.gen();
                // number of pairs skipped before the next candidate
                let skip = ((1.0 - r).ln() / (1.0 - p).ln()).floor();
                if !skip.is_finite() || skip >= (n - v) as f64 {
                    break;
                }
                v += skip as usize;
            }
            if v >= n {
                break;
            }
            let q = inclusion_probability(w[u], w[v], total);
            if rng.gen::<f64>() < q / p {
                edges.push((order[u], order[v]));
            }
            p = q;
            v += 1;
        }
    }
    Graph::new(n, edges)
}

pub fn generate_graph(spec: &SyntheticGraphSpec, stream: &Stream) -> Result<Graph> {
    let targets = target_degrees(spec, &stream.child(0))?;
    chung_lu(&targets, &stream.child(1))
}

/// `d × n` matrix with i.i.d. standard Gaussian columns scaled to unit ℓ2 norm.
pub fn generate_features(n: usize, d: usize, stream: &Stream) -> Array2<f64> {
    let mut rng = stream.rng();
    let mut x = Array2::zeros((d, n));
    for mut col in x.columns_mut() {
        loop {
            col.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFunctionSpec {
    #[serde(default = "default_d")]
    pub feature_dim: usize,
    #[serde(default = "default_k")]
    pub output_dim: usize,
    #[serde(default = "default_r")]
    pub hidden_dim: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_d() -> usize {
    100
}
fn default_k() -> usize {
    5
}
fn default_r() -> usize {
    30
}
fn default_alpha() -> f64 {
    0.5
}

impl Default for TargetFunctionSpec {
    fn default() -> Self {
        Self {
            feature_dim: default_d(),
            output_dim: default_k(),
            hidden_dim: default_r(),
            alpha: default_alpha(),
        }
    }
}

impl TargetFunctionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.output_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config("target dims d, k, r must be >= 1"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::config("alpha must be >= 0"));
        }
        Ok(())
    }
}

/// Target weights: `W*` (r × d), `V*` (r × k), `C` (k × r).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights {
    pub w_star: Array2<f64>,
    pub v_star: Array2<f64>,
    pub c: Array2<f64>,
}

impl TargetWeights {
    pub fn sample(spec: &TargetFunctionSpec, stream: &Stream) -> Result<Self> {
        spec.validate()?;
        let (d, k, r) = (spec.feature_dim, spec.output_dim, spec.hidden_dim);
        let draw = |rows, cols, s: Stream| {
            let mut rng = s.rng();
            Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
        };
        Ok(Self {
            w_star: draw(r, d, stream.child(0)),
            v_star: draw(r, k, stream.child(1)),
            c: draw(k, r, stream.child(2)),
        })
    }

    pub fn evaluate(&self, x: &Array2<f64>, a_star: &SparseMatrix, alpha: f64) -> Result<Array2<f64>> {
        let (r, d) = self.w_star.dim();
        let (k, rc) = self.c.dim();
        if self.v_star.dim() != (r, k) || rc != r || x.nrows() != d {
            return Err(Error::dims(format!(
                "W* {:?}, V* {:?}, C {:?}, X {:?}",
                self.w_star.dim(),
                self.v_star.dim(),
                self.c.dim(),
                x.dim()
            )));
        }
        let xa = right_multiply(x.view(), a_star)?;
        let f = self.c.dot(&self.w_star.dot(&xa));
        if alpha == 0.0 {
            return Ok(f);
        }
        let mut p = right_multiply(self.v_star.dot(&f).view(), a_star)?;
        p.mapv_inplace(|v| v.sin() * v.tanh());
        let g = self.c.dot(&p);
        let mut h = f;
        Zip::from(&mut h).and(&g).for_each(|h, &g| *h += alpha * g);
        Ok(h)
    }
}

/// Labels `H = F + α G(F)`, a `k × N` matrix, with freshly drawn target weights.
pub fn generate_labels(
    x: &Array2<f64>,
    a_star: &SparseMatrix,
    spec: &TargetFunctionSpec,
    stream: &Stream,
) -> Result<Array2<f64>> {
    TargetWeights::sample(spec, stream)?.evaluate(x, a_star, spec.alpha)
}

/// Everything needed to build one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub graph: SyntheticGraphSpec,
    #[serde(default)]
    pub target: TargetFunctionSpec,
    #[serde(default)]
    pub degree_mode: DegreeMode,
    #[serde(default)]
    pub budget_scope: BudgetScope,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub graph: Graph,
    pub adjacency: SparseMatrix,
    pub effective: SparseMatrix,
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub grouping: DegreeGrouping,
}

impl GeneratedDataset {
    pub fn to_dataset(&self) -> crate::data::Dataset {
        crate::data::Dataset {
            graph: self.graph.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            classes: None,
            groups: Some(self.grouping.assignment().to_vec()),
        }
    }
}

/// Grouping by the generator's group membership, representative degree = median realized degree.
pub fn spec_grouping(spec: &SyntheticGraphSpec, graph: &Graph) -> Result<DegreeGrouping> {
    assign_degree_groups(graph, &GroupAssignment::Explicit(spec.group_assignment()))
}

pub fn generate_dataset(spec: &DatasetSpec, stream: &Stream) -> Result<GeneratedDataset> {
    spec.graph.validate()?;
    spec.target.validate()?;
    let graph = generate_graph(&spec.graph, &stream.child(tag::GRAPH))?;
    let grouping = spec_grouping(&spec.graph, &graph)?;
    let adjacency = build_normalized_adjacency(&graph, spec.degree_mode)?;
    let effective = build_effective_adjacency(&adjacency, &grouping, spec.budget_scope)?;
    let features = generate_features(graph.num_nodes(), spec.target.feature_dim, &stream.child(tag::FEATURES));
    let labels = generate_labels(&features, &effective, &spec.target, &stream.child(tag::TARGET))?;
    Ok(GeneratedDataset {
        graph,
        adjacency,
        effective,
        features,
        labels,
        grouping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn near_complete_inclusion_probability() {
        assert!((inclusion_probability(9.0, 9.0, 90.0) - 0.9).abs() < 1e-15);
        let spec = SyntheticGraphSpec::new(vec![DegreeGroupSpec {
            size: 10,
            mean_degree: 9.0,
            degree_std: 0.0,
        }]);
        let mut edges = 0usize;
        let runs = 400;
        for s in 0..runs {
            let g = generate_graph(&spec, &Stream::new(s)).unwrap();
            edges += g.num_edges();
        }
        let freq = edges as f64 / (runs as f64 * 45.0);
        // 18000 pair trials, standard error ≈ 0.0022
        assert!((freq - 0.9).abs() < 0.012, "edge frequency {freq}");
    }

    #[test]
    fn chung_lu_matches_pairwise_probabilities() {
        // small irregular target sequence, frequency per pair vs min(1, t_u t_v / S)
        let targets = [1usize, 2, 3, 5, 8];
        let total: f64 = targets.iter().sum::<usize>() as f64;
        let runs = 6000;
        let mut counts = [[0usize; 5]; 5];
        for s in 0..runs {
            for &(u, v) in chung_lu(&targets, &Stream::new(s)).unwrap().edges() {
                counts[u][v] += 1;
            }
        }
        for u in 0..5 {
            for v in (u + 1)..5 {
                let p = inclusion_probability(targets[u] as f64, targets[v] as f64, total);
                let f = counts[u][v] as f64 / runs as f64;
                let se = (p * (1.0 - p) / runs as f64).sqrt().max(1e-9);
                assert!((f - p).abs() < 5.0 * se + 1e-12, "pair ({u},{v}): {f} vs {p}");
            }
        }
    }

    #[test]
    fn degenerate_spec_is_rejected() {
        let spec = SyntheticGraphSpec {
            groups: vec![DegreeGroupSpec {
                size: 5,
                mean_degree: 0.2,
                degree_std: 0.0,
            }],
            degree_clamp: (0.0, 500.0),
        };
        assert!(matches!(
            generate_graph(&spec, &Stream::new(1)),
            Err(Error::DegenerateSpec(_))
        ));
        let bad = SyntheticGraphSpec {
            degree_clamp: (5.0, 5.0),
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generated_graph_is_simple() {
        let spec = SyntheticGraphSpec::two_group(30, 8.0, 60, 16.0, 3.0);
        let g = generate_graph(&spec, &Stream::new(3)).unwrap();
        assert!(g.edges().iter().all(|&(u, v)| u < v));
        let mut e = g.edges().to_vec();
        e.dedup();
        assert_eq!(e.len(), g.num_edges());
    }

    #[test]
    fn two_group_scale_group_one_mean_degree() {
        let spec = SyntheticGraphSpec::two_group(200, 200.0, 1800, 400.0, 20.0);
        for s in 0..5 {
            let g = generate_graph(&spec, &Stream::new(s)).unwrap();
            let deg = g.degrees();
            let mean = deg[..200].iter().sum::<usize>() as f64 / 200.0;
            assert!((mean - 200.0).abs() < 20.0, "seed {s}: mean degree {mean}");
        }
    }

    #[test]
    fn features_are_unit_norm_and_deterministic() {
        let x = generate_features(50, 7, &Stream::new(4));
        for col in x.columns() {
            assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-12);
        }
        assert_eq!(x, generate_features(50, 7, &Stream::new(4)));
        let signs = generate_features(20, 1, &Stream::new(5));
        assert!(signs.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    fn toy() -> (Array2<f64>, SparseMatrix, TargetWeights) {
        let x = array![[0.6, -1.0], [0.8, 0.0]];
        let a = SparseMatrix::from_dense(array![[0.5, 0.25], [0.25, 0.5]].view());
        let w = TargetWeights {
            w_star: array![[1.0, -2.0]],
            v_star: array![[0.7]],
            c: array![[1.5]],
        };
        (x, a, w)
    }

    #[test]
    fn toy_labels_by_scalar_evaluation() {
        let (x, a, w) = toy();
        let h = w.evaluate(&x, &a, 0.5).unwrap();
        // scalar walk-through of the composition
        let wx: [f64; 2] = [0.6 - 1.6, -1.0];
        let f = [1.5 * (wx[0] * 0.5 + wx[1] * 0.25), 1.5 * (wx[0] * 0.25 + wx[1] * 0.5)];
        let vf = [0.7 * f[0], 0.7 * f[1]];
        let p = [vf[0] * 0.5 + vf[1] * 0.25, vf[0] * 0.25 + vf[1] * 0.5];
        for n in 0..2 {
            let expect = f[n] + 0.5 * 1.5 * (p[n].sin() * p[n].tanh());
            assert!((h[[0, n]] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn label_edge_cases() {
        let (x, a, mut w) = toy();
        let f = w.evaluate(&x, &a, 0.0).unwrap();
        let linear =
            w.c.dot(&w.w_star.dot(&crate::graph::right_multiply(x.view(), &a).unwrap()));
        assert_eq!(f, linear);
        let mut scaled = w.clone();
        scaled.c *= 3.0;
        assert_eq!(scaled.evaluate(&x, &a, 0.0).unwrap(), f.mapv(|v| v * 3.0));
        w.w_star.fill(0.0);
        assert!(w.evaluate(&x, &a, 0.5).unwrap().iter().all(|&v| v == 0.0));
        assert!(w.evaluate(&array![[1.0, 2.0]], &a, 0.5).is_err());
    }

    #[test]
    fn composite_term_is_bounded() {
        let spec = TargetFunctionSpec {
            feature_dim: 6,
            output_dim: 3,
            hidden_dim: 5,
            alpha: 1.0,
        };
        let x = generate_features(8, 6, &Stream::new(1));
        let a = SparseMatrix::identity(8);
        let w = TargetWeights::sample(&spec, &Stream::new(2)).unwrap();
        let h = w.evaluate(&x, &a, 1.0).unwrap();
        let f = w.evaluate(&x, &a, 0.0).unwrap();
        let c_fro = w.c.mapv(|v| v * v).sum().sqrt();
        for n in 0..8 {
            let g = (&h.column(n) - &f.column(n)).mapv(|v| v * v).sum().sqrt();
            assert!(g <= c_fro * (5f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn small_dataset_is_consistent() {
        let spec = DatasetSpec {
            graph: SyntheticGraphSpec::two_group(20, 5.0, 40, 10.0, 1.0),
            target: TargetFunctionSpec {
                feature_dim: 4,
                output_dim: 2,
                hidden_dim: 3,
                alpha: 0.5,
            },
            degree_mode: DegreeMode::default(),
            budget_scope: BudgetScope::default(),
        };
        let ds = generate_dataset(&spec, &Stream::new(11)).unwrap();
        assert_eq!(ds.features.dim(), (4, 60));
        assert_eq!(ds.labels.dim(), (2, 60));
        assert!(ds.effective.is_dominated_by(&ds.adjacency));
        let again = generate_dataset(&spec, &Stream::new(11)).unwrap();
        assert_eq!(again.labels, ds.labels);
        assert_eq!(again.graph, ds.graph);
    }
}
