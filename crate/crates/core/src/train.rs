//! SGD with layer-wise sparsification. Every iteration draws fresh adjacency
//! matrices for the two layers, samples one labeled node and steps `W` and `V`
//! along the node's loss gradient.
//!
//! Random streams: iteration `t` uses `Stream(seed)/TRAIN/t`; the node draw comes
//! from its `NODE` child and layer `l`'s matrix from `LAYER/l`, column `c` of
//! which is sampled from `LAYER/l/c`. Only the columns an iteration touches are
//! ever drawn.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{aggregate_all, node_major, DegreeGrouping, SparseMatrix};
use crate::linalg::axpy;
use crate::model::{
    backward_into, column_entries, forward_all_from_xa, forward_core, half_sq_error, mean_loss, ModelParams,
};
use crate::rng::{tag, Stream};
use crate::sparsify::{deviation_l1, LayerSampler, RetentionPlan, SamplerConfig};

/// Matrices used when the trainer reports risk and when a run is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalAdjacency {
    /// The unsparsified base matrix in both layers.
    #[default]
    Full,
    /// The effective adjacency `A*` in both layers.
    Effective,
    /// One fresh draw from each layer's sampler.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub eta_w: f64,
    /// Defaults to `eta_w · τ_v² / τ_w²` when both caps are set, else `eta_w`.
    #[serde(default)]
    pub eta_v: Option<f64>,
    #[serde(default)]
    pub layer1: SamplerConfig,
    #[serde(default)]
    pub layer2: SamplerConfig,
    #[serde(default = "yes")]
    pub resample_every_iteration: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tau_w_cap: Option<f64>,
    #[serde(default)]
    pub tau_v_cap: Option<f64>,
    /// Log stride; 0 logs only the initial and final state.
    #[serde(default)]
    pub log_every: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub eval_adjacency: EvalAdjacency,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn new(iterations: usize, eta_w: f64) -> Self {
        Self {
            iterations,
            eta_w,
            eta_v: None,
            layer1: SamplerConfig::None,
            layer2: SamplerConfig::None,
            resample_every_iteration: true,
            seed: 0,
            tau_w_cap: None,
            tau_v_cap: None,
            log_every: 0,
            batch_size: 1,
            eval_adjacency: EvalAdjacency::Full,
        }
    }

    pub fn effective_eta_v(&self) -> f64 {
        match (self.eta_v, self.tau_w_cap, self.tau_v_cap) {
            (Some(v), _, _) => v,
            (None, Some(tw), Some(tv)) if tw > 0.0 => self.eta_w * tv * tv / (tw * tw),
            _ => self.eta_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        let eta_v = self.effective_eta_v();
        if !(self.eta_w >= 0.0 && eta_v >= 0.0 && self.eta_w.is_finite() && eta_v.is_finite()) {
            return Err(Error::config("step sizes must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Inputs of one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    /// `d × N` features.
    pub x: ArrayView2<'a, f64>,
    /// Base matrix the samplers draw from; `none` layers use it as is.
    pub a: &'a SparseMatrix,
    /// Reference for deviation logging and `effective` evaluation.
    pub a_star: Option<&'a SparseMatrix>,
    /// Needed by block-wise samplers.
    pub grouping: Option<&'a DegreeGrouping>,
    /// `k × N` targets.
    pub y: ArrayView2<'a, f64>,
    pub omega: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub risk: f64,
    pub node_loss: Option<f64>,
    pub w_dev_fro: f64,
    pub v_dev_fro: f64,
    pub dev1_l1: Option<f64>,
    pub dev2_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    /// Largest `‖(W − W⁰) − Σ updates‖_F` seen at a logged iteration.
    pub max_identity_gap: f64,
    /// First iteration at which `‖W_t‖_F` (or `‖V_t‖_F`) passed its cap.
    pub w_cap_exceeded_at: Option<usize>,
    pub v_cap_exceeded_at: Option<usize>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,risk,node_loss,w_dev_fro,v_dev_fro,dev1_l1,dev2_l1";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:?},{},{:?},{:?},{},{}",
                r.iteration,
                r.risk,
                opt(r.node_loss),
                r.w_dev_fro,
                r.v_dev_fro,
                opt(r.dev1_l1),
                opt(r.dev2_l1)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean logged deviation of layer `layer` (1 or 2).
    pub fn mean_deviation(&self, layer: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| if layer == 1 { r.dev1_l1 } else { r.dev2_l1 })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Uniform draw from the labeled set.
pub fn sample_labeled_node<R: Rng + ?Sized>(omega: &[usize], rng: &mut R) -> Result<usize> {
    if omega.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    Ok(omega[rng.gen_range(0..omega.len())])
}

/// Per-layer state of a training run.
enum Layer {
    Fixed(SparseMatrix),
    Random {
        plan: RetentionPlan,
        /// Entries kept with probability at least 1/2.
        majority: Vec<bool>,
    },
}

impl Layer {
    fn new(sampler: LayerSampler, base: &SparseMatrix, resample: bool, stream: &Stream) -> Self {
        match sampler {
            LayerSampler::Fixed(m) => Layer::Fixed(m),
            LayerSampler::Random(plan) if !resample => Layer::Fixed(plan.sample(base, stream)),
            LayerSampler::Random(plan) => {
                let majority = plan.probs().iter().map(|&p| p >= 0.5).collect();
                Layer::Random { plan, majority }
            }
        }
    }

    fn draw(&self, base: &SparseMatrix, stream: &Stream) -> SparseMatrix {
        match self {
            Layer::Fixed(m) => m.clone(),
            Layer::Random { plan, .. } => plan.sample(base, stream),
        }
    }

    fn column(&self, base: &SparseMatrix, stream: &Stream, c: usize) -> Vec<(usize, f64)> {
        match self {
            Layer::Fixed(m) => column_entries(m, c),
            Layer::Random { plan, .. } => plan.sample_column_entries(base, stream, c),
        }
    }
}

/// `X a1_i` for the first layer: precomputed for a fixed matrix; for a random
/// one, `X` times the majority entries plus per-draw corrections for the
/// entries whose outcome differs from the majority.
struct FirstLayerInputs<'a> {
    xn: &'a [f64],
    d: usize,
    base: &'a SparseMatrix,
    layer: &'a Layer,
    xa: Vec<f64>,
}

impl<'a> FirstLayerInputs<'a> {
    fn new(xn: &'a [f64], d: usize, base: &'a SparseMatrix, layer: &'a Layer) -> Self {
        let xa = match layer {
            Layer::Fixed(m) => aggregate_all(xn, d, m),
            Layer::Random { majority, .. } => aggregate_all(xn, d, &base.filter_entries(|e| majority[e])),
        };
        Self { xn, d, base, layer, xa }
    }

    fn fill(&self, stream: &Stream, i: usize, buf: &mut [f64]) {
        let d = self.d;
        buf.copy_from_slice(&self.xa[i * d..(i + 1) * d]);
        if let Layer::Random { plan, majority } = self.layer {
            let rows = self.base.row_indices();
            let vals = self.base.values();
            plan.sample_column(self.base, stream, i, |e, keep| {
                if keep != majority[e] {
                    let sign = if keep { 1.0 } else { -1.0 };
                    let r = rows[e];
                    axpy(buf, sign * vals[e], &self.xn[r * d..(r + 1) * d]);
                }
            });
        }
    }
}

/// Evaluation matrices for both layers.
pub fn eval_matrices(
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mode: EvalAdjacency,
    stream: &Stream,
) -> Result<(SparseMatrix, SparseMatrix)> {
    Ok(match mode {
        EvalAdjacency::Full => (data.a.clone(), data.a.clone()),
        EvalAdjacency::Effective => {
            let a = data
                .a_star
                .ok_or_else(|| Error::config("effective evaluation needs A*"))?;
            (a.clone(), a.clone())
        }
        EvalAdjacency::Sampled => {
            let s1 = cfg.layer1.resolve(data.a, data.grouping)?;
            let s2 = cfg.layer2.resolve(data.a, data.grouping)?;
            (
                s1.draw(data.a, &stream.path(&[tag::LAYER, 1])),
                s2.draw(data.a, &stream.path(&[tag::LAYER, 2])),
            )
        }
    })
}

fn check_data(data: &TrainData<'_>, params: &ModelParams) -> Result<()> {
    let (d, n) = data.x.dim();
    if d != params.d() {
        return Err(Error::dims(format!(
            "X has {d} feature rows, model expects {}",
            params.d()
        )));
    }
    if data.a.dims() != (n, n) {
        return Err(Error::dims(format!("A is {:?}, X has {n} nodes", data.a.dims())));
    }
    if let Some(s) = data.a_star {
        if s.dims() != (n, n) {
            return Err(Error::dims(format!("A* is {:?}, X has {n} nodes", s.dims())));
        }
    }
    if data.y.dim() != (params.k(), n) {
        return Err(Error::dims(format!(
            "labels {:?}, expected ({}, {n})",
            data.y.dim(),
            params.k()
        )));
    }
    if data.omega.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    if let Some(&bad) = data.omega.iter().find(|&&v| v >= n) {
        return Err(Error::NodeOutOfRange {
            node: bad,
            num_nodes: n,
        });
    }
    Ok(())
}

fn fro(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Run `cfg.iterations` SGD steps from `model`. Returns the final params, whose
/// initialization snapshots are unchanged, and the log.
pub fn train(data: &TrainData<'_>, mut model: ModelParams, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    check_data(data, &model)?;
    let (m, d, k) = (model.m(), model.d(), model.k());
    let eta_w = cfg.eta_w;
    let eta_v = cfg.effective_eta_v();
    let root = Stream::new(cfg.seed).child(tag::TRAIN);
    let base = data.a;

    let s1 = cfg.layer1.resolve(base, data.grouping)?;
    let s2 = cfg.layer2.resolve(base, data.grouping)?;
    let fixed_stream = root.child(u64::MAX);
    let layer1 = Layer::new(
        s1,
        base,
        cfg.resample_every_iteration,
        &fixed_stream.path(&[tag::LAYER, 1]),
    );
    let layer2 = Layer::new(
        s2,
        base,
        cfg.resample_every_iteration,
        &fixed_stream.path(&[tag::LAYER, 2]),
    );

    let xn = node_major(data.x);
    let inputs = FirstLayerInputs::new(&xn, d, base, &layer1);

    let (e1, e2) = eval_matrices(data, cfg, cfg.eval_adjacency, &root.child(tag::EVAL))?;
    let eval_xa = aggregate_all(&xn, d, &e1);
    let risk = |p: &ModelParams| mean_loss(&forward_all_from_xa(p, &eval_xa, &e2), data.y, data.omega);

    // deviations of fixed layers never change
    let fixed_dev = |layer: &Layer| -> Result<Option<f64>> {
        match (layer, data.a_star) {
            (Layer::Fixed(mat), Some(s)) => Ok(Some(deviation_l1(mat, s)?)),
            _ => Ok(None),
        }
    };
    let fixed_dev1 = fixed_dev(&layer1)?;
    let fixed_dev2 = fixed_dev(&layer2)?;
    let deviation = |layer: &Layer, fixed: Option<f64>, stream: &Stream| -> Result<Option<f64>> {
        match (layer, data.a_star) {
            (Layer::Random { .. }, Some(s)) => Ok(Some(deviation_l1(&layer.draw(base, stream), s)?)),
            _ => Ok(fixed),
        }
    };

    let mut log = TrainLog::default();
    let mut acc_w = vec![0.0; m * d];
    let mut acc_v = vec![0.0; m * k];
    log.rows.push(TrainLogRow {
        iteration: 0,
        risk: risk(&model)?,
        node_loss: None,
        w_dev_fro: 0.0,
        v_dev_fro: 0.0,
        dev1_l1: fixed_dev1,
        dev2_l1: fixed_dev2,
    });

    let mut gw = vec![0.0; m * d];
    let mut gv = vec![0.0; m * k];
    let scale = 1.0 / cfg.batch_size as f64;
    for t in 0..cfg.iterations {
        let its = root.child(t as u64);
        let l1_stream = its.path(&[tag::LAYER, 1]);
        let l2_stream = its.path(&[tag::LAYER, 2]);
        let mut node_rng = its.child(tag::NODE).rng();
        gw.iter_mut().for_each(|g| *g = 0.0);
        gv.iter_mut().for_each(|g| *g = 0.0);
        let mut node_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let n = sample_labeled_node(data.omega, &mut node_rng)?;
            let mut xa1 = |i: usize, buf: &mut [f64]| inputs.fill(&l1_stream, i, buf);
            let cache = forward_core(&model, n, &mut xa1, layer2.column(base, &l2_stream, n));
            let y: Vec<f64> = data.y.column(n).to_vec();
            let loss = half_sq_error(cache.out().iter().copied(), y.iter().copied());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: t, loss });
            }
            node_loss += loss * scale;
            backward_into(&cache, &y, &model, scale, &mut gw, &mut gv);
        }
        model.apply_step(eta_w, &gw, eta_v, &gv);
        if eta_w != 0.0 {
            axpy(&mut acc_w, -eta_w, &gw);
        }
        if eta_v != 0.0 {
            axpy(&mut acc_v, -eta_v, &gv);
        }

        let done = t + 1;
        let logged = done == cfg.iterations || (cfg.log_every > 0 && done % cfg.log_every == 0);
        let check_caps = logged || cfg.tau_w_cap.is_some() || cfg.tau_v_cap.is_some();
        if !check_caps {
            continue;
        }
        let wd = model.w_deviation();
        let vd = model.v_deviation();
        let w_dev_fro = fro(wd.as_slice().expect("standard layout"));
        let v_dev_fro = fro(vd.as_slice().expect("standard layout"));
        if let (Some(cap), None) = (cfg.tau_w_cap, log.w_cap_exceeded_at) {
            if w_dev_fro > cap {
                warn!("iteration {done}: ‖W_t‖_F = {w_dev_fro:.4} exceeds cap {cap}");
                log.w_cap_exceeded_at = Some(done);
            }
        }
        if let (Some(cap), None) = (cfg.tau_v_cap, log.v_cap_exceeded_at) {
            if v_dev_fro > cap {
                warn!("iteration {done}: ‖V_t‖_F = {v_dev_fro:.4} exceeds cap {cap}");
                log.v_cap_exceeded_at = Some(done);
            }
        }
        if !logged {
            continue;
        }
        let gap_w: Vec<f64> = wd.iter().zip(&acc_w).map(|(a, b)| a - b).collect();
        let gap_v: Vec<f64> = vd.iter().zip(&acc_v).map(|(a, b)| a - b).collect();
        log.max_identity_gap = log.max_identity_gap.max(fro(&gap_w)).max(fro(&gap_v));
        let r = risk(&model)?;
        if !r.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: t, loss: r });
        }
        log.rows.push(TrainLogRow {
            iteration: done,
            risk: r,
            node_loss: Some(node_loss),
            w_dev_fro,
            v_dev_fro,
            dev1_l1: deviation(&layer1, fixed_dev1, &l1_stream)?,
            dev2_l1: deviation(&layer2, fixed_dev2, &l2_stream)?,
        });
    }
    Ok((model, log))
}

/// The two layer matrices of iteration `t`, exactly as the trainer draws them.
pub fn iteration_matrices(data: &TrainData<'_>, cfg: &TrainConfig, t: usize) -> Result<(SparseMatrix, SparseMatrix)> {
    let root = Stream::new(cfg.seed).child(tag::TRAIN);
    let its = root.child(t as u64);
    let fixed_stream = root.child(u64::MAX);
    let mut out = Vec::with_capacity(2);
    for (l, sc) in [(1u64, &cfg.layer1), (2, &cfg.layer2)] {
        let layer = Layer::new(
            sc.resolve(data.a, data.grouping)?,
            data.a,
            cfg.resample_every_iteration,
            &fixed_stream.path(&[tag::LAYER, l]),
        );
        out.push(layer.draw(data.a, &its.path(&[tag::LAYER, l])));
    }
    let a2 = out.pop().expect("two layers");
    let a1 = out.pop().expect("two layers");
    Ok((a1, a2))
}

/// Node sampled at iteration `t` (first of the batch).
pub fn iteration_node(omega: &[usize], cfg: &TrainConfig, t: usize) -> Result<usize> {
    let its = Stream::new(cfg.seed).child(tag::TRAIN).child(t as u64);
    sample_labeled_node(omega, &mut its.child(tag::NODE).rng())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_normalized_adjacency, DegreeMode, Graph};
    use crate::model::{backward_node, forward_node, init_params, InitConfig};
    use crate::sparsify::GlobalPruneConfig;
    use crate::synth::generate_features;
    use ndarray::Array2;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    struct Fixture {
        x: Array2<f64>,
        a: SparseMatrix,
        y: Array2<f64>,
        omega: Vec<usize>,
        params: ModelParams,
    }

    impl Fixture {
        fn data(&self) -> TrainData<'_> {
            TrainData {
                x: self.x.view(),
                a: &self.a,
                a_star: Some(&self.a),
                grouping: None,
                y: self.y.view(),
                omega: &self.omega,
            }
        }
    }

    fn fixture(n: usize, seed: u64) -> Fixture {
        let mut rng = Stream::new(seed).rng();
        let mut edges = vec![];
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < 0.4 {
                    edges.push((u, v));
                }
            }
        }
        let a = build_normalized_adjacency(&Graph::new(n, edges).unwrap(), DegreeMode::FromTildePlusIdentity).unwrap();
        let x = generate_features(n, 4, &Stream::new(seed + 1));
        let y = Array2::from_shape_fn((2, n), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4);
        let params = init_params(4, 2, &InitConfig::with_defaults(8), &Stream::new(seed + 2)).unwrap();
        Fixture {
            x,
            a,
            y,
            omega: (0..n).collect(),
            params,
        }
    }

    #[test]
    fn zero_step_keeps_params_bit_identical() {
        let f = fixture(9, 1);
        let mut cfg = TrainConfig::new(50, 0.0);
        cfg.log_every = 10;
        let (p, log) = train(&f.data(), f.params.clone(), &cfg).unwrap();
        assert_eq!(p, f.params);
        assert_eq!(log.rows.len(), 6);
        assert!(log.rows.iter().all(|r| r.risk == log.rows[0].risk));
    }

    #[test]
    fn single_step_replay_is_exact() {
        let f = fixture(10, 2);
        let cfg = TrainConfig::new(1, 0.3);
        let (p, _) = train(&f.data(), f.params.clone(), &cfg).unwrap();
        let n = iteration_node(&f.omega, &cfg, 0).unwrap();
        let (_, cache) = forward_node(f.x.view(), &f.a, &f.a, &f.params, n).unwrap();
        let (gw, gv) = backward_node(&cache, f.y.column(n), &f.params).unwrap();
        assert_eq!(p.w(), &(f.params.w() - &(gw * 0.3)));
        assert_eq!(p.v(), &(f.params.v() - &(gv * 0.3)));
    }

    #[test]
    fn single_step_replay_with_sampled_layers() {
        let f = fixture(12, 3);
        let mut cfg = TrainConfig::new(1, 0.3);
        cfg.layer1 = SamplerConfig::Global(GlobalPruneConfig {
            top_fraction: 0.4,
            retain_top_prob: 0.8,
            retain_rest_prob: 0.3,
        });
        cfg.layer2 = SamplerConfig::Global(GlobalPruneConfig::new(0.5));
        cfg.seed = 17;
        let (p, _) = train(&f.data(), f.params.clone(), &cfg).unwrap();
        let (a1, a2) = iteration_matrices(&f.data(), &cfg, 0).unwrap();
        assert_ne!(a1, f.a);
        let n = iteration_node(&f.omega, &cfg, 0).unwrap();
        let (_, cache) = forward_node(f.x.view(), &a1, &a2, &f.params, n).unwrap();
        let (gw, gv) = backward_node(&cache, f.y.column(n), &f.params).unwrap();
        let ew = f.params.w() - &(gw * 0.3);
        let ev = f.params.v() - &(gv * 0.3);
        assert!(p.w().iter().zip(ew.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(p.v().iter().zip(ev.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn runs_are_reproducible_and_track_deviation() {
        let f = fixture(11, 4);
        let mut cfg = TrainConfig::new(300, 0.2);
        cfg.log_every = 50;
        cfg.layer1 = SamplerConfig::Global(GlobalPruneConfig::new(0.6));
        let (p1, l1) = train(&f.data(), f.params.clone(), &cfg).unwrap();
        let (p2, l2) = train(&f.data(), f.params.clone(), &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1.to_csv(), l2.to_csv());
        assert_eq!(p1.w_init(), f.params.w());
        assert!(l1.max_identity_gap <= 1e-12 * (1.0 + l1.rows.last().unwrap().w_dev_fro));
        assert!(l1.rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
        assert!(l1.rows[1..]
            .iter()
            .all(|r| r.dev1_l1.unwrap() > 0.0 && r.dev2_l1 == Some(0.0)));
        assert!(l1.to_csv().starts_with(TrainLog::CSV_HEADER));
    }

    #[test]
    fn gradient_descent_and_sgd_reduce_risk() {
        let f = fixture(10, 5);
        let data = f.data();
        // full-batch gradient descent reference
        let mut p = f.params.clone();
        let risk0 = crate::model::empirical_risk(&p, f.x.view(), &f.a, &f.a, &f.omega, f.y.view()).unwrap();
        for _ in 0..200 {
            let mut gw = Array2::<f64>::zeros(p.w().dim());
            let mut gv = Array2::<f64>::zeros(p.v().dim());
            for &n in &f.omega {
                let (_, cache) = forward_node(f.x.view(), &f.a, &f.a, &p, n).unwrap();
                let (a, b) = backward_node(&cache, f.y.column(n), &p).unwrap();
                gw += &a;
                gv += &b;
            }
            let scale = 0.2 / f.omega.len() as f64;
            let w = p.w() - &(gw * scale);
            let v = p.v() - &(gv * scale);
            p.set_w(w).unwrap();
            p.set_v(v).unwrap();
        }
        let gd_risk = crate::model::empirical_risk(&p, f.x.view(), &f.a, &f.a, &f.omega, f.y.view()).unwrap();
        assert!(gd_risk < risk0);

        let mut cfg = TrainConfig::new(5000, 0.2);
        cfg.log_every = 1;
        let (_, log) = train(&data, f.params.clone(), &cfg).unwrap();
        let losses: Vec<f64> = log.rows[1..].iter().map(|r| r.node_loss.unwrap()).collect();
        let start: f64 = losses[..500].iter().sum::<f64>() / 500.0;
        let end: f64 = losses[losses.len() - 500..].iter().sum::<f64>() / 500.0;
        assert!(end < start, "windowed loss {start} -> {end}");
    }

    #[test]
    fn diverging_steps_abort() {
        let f = fixture(8, 6);
        let cfg = TrainConfig::new(2000, 1e6);
        match train(&f.data(), f.params.clone(), &cfg) {
            Err(Error::NonFiniteLoss { iteration, .. }) => assert!(iteration < 2000),
            other => panic!("expected NonFiniteLoss, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn label_set_errors() {
        let mut f = fixture(6, 7);
        f.omega.clear();
        assert!(matches!(
            train(&f.data(), f.params.clone(), &TrainConfig::new(1, 0.1)),
            Err(Error::EmptyLabelSet)
        ));
        assert!(matches!(
            sample_labeled_node(&[], &mut Stream::new(1).rng()),
            Err(Error::EmptyLabelSet)
        ));
        assert!(TrainConfig::new(0, 0.1).validate().is_err());
    }

    #[test]
    fn node_sampling_is_uniform() {
        let mut rng = Stream::new(8).rng();
        assert!((0..100).all(|_| sample_labeled_node(&[4], &mut rng).unwrap() == 4));
        let omega: Vec<usize> = (10..20).collect();
        let draws = 100_000;
        let mut counts = [0usize; 10];
        let mut rng = Stream::new(9).rng();
        for _ in 0..draws {
            counts[sample_labeled_node(&omega, &mut rng).unwrap() - 10] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
        assert!(p_value > 0.001, "chi2 {chi2}, p {p_value}");
        let seq = |s| {
            let mut r = Stream::new(s).rng();
            (0..20)
                .map(|_| sample_labeled_node(&omega, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));
    }

    #[test]
    fn eta_v_follows_cap_ratio() {
        let mut cfg = TrainConfig::new(1, 2.0);
        assert_eq!(cfg.effective_eta_v(), 2.0);
        cfg.tau_w_cap = Some(2.0);
        cfg.tau_v_cap = Some(1.0);
        assert_eq!(cfg.effective_eta_v(), 0.5);
        cfg.eta_v = Some(0.7);
        assert_eq!(cfg.effective_eta_v(), 0.7);
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: TrainConfig = toml::from_str(
            "iterations = 10\neta_w = 0.5\nlog_every = 5\n[layer1]\nmode = \"global\"\ntop_fraction = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.layer1.mode_name(), "global");
        assert_eq!(cfg.layer2, SamplerConfig::None);
        assert!(cfg.resample_every_iteration);
        assert_eq!(cfg.batch_size, 1);
    }
}
