//! Two-hidden-layer GCN with a jumping connection, in the `U = V C` form:
//!
//! ```text
//! out_n = C relu(W X a1_n) + C relu(V g_n),   g_n = Σ_i a2_{i n} C relu(W X a1_i)
//! ```
//!
//! `W` is `m × d`, `V` is `m × k`, `C` is `k × m` and never trained. ReLU masks
//! use `1{x >= 0}`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{aggregate_column, node_major, SparseMatrix};
use crate::linalg::{axpy, matvec, matvec_t};
use crate::rng::{mix64, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub m: usize,
    pub sigma_w: f64,
    pub sigma_v: f64,
}

impl InitConfig {
    /// `σ_w = m^{-1/4}`, `σ_v = ln m` (floored at 1 so tiny widths stay non-degenerate).
    pub fn with_defaults(m: usize) -> Self {
        Self {
            m,
            sigma_w: default_sigma_w(m),
            sigma_v: default_sigma_v(m),
        }
    }
}

pub fn default_sigma_w(m: usize) -> f64 {
    (m as f64).powf(-0.25)
}

pub fn default_sigma_v(m: usize) -> f64 {
    (m as f64).ln().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    w: Array2<f64>,
    v: Array2<f64>,
    c: Array2<f64>,
    w_init: Array2<f64>,
    v_init: Array2<f64>,
    sigma_w: f64,
    sigma_v: f64,
    seed: u64,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, stream: &Stream) -> Array2<f64> {
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = stream.rng();
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
}

/// `C ~ N(0, 1/m)`, `W0 ~ N(0, σ_w²)`, `V0 ~ N(0, σ_v²/m)`, entrywise.
pub fn init_params(d: usize, k: usize, cfg: &InitConfig, stream: &Stream) -> Result<ModelParams> {
    let m = cfg.m;
    if m == 0 || d == 0 || k == 0 {
        return Err(Error::config(format!(
            "model dims must be positive (m={m}, d={d}, k={k})"
        )));
    }
    if !(cfg.sigma_w >= 0.0 && cfg.sigma_v >= 0.0 && cfg.sigma_w.is_finite() && cfg.sigma_v.is_finite()) {
        return Err(Error::config(
            "init standard deviations must be finite and non-negative",
        ));
    }
    let mf = m as f64;
    let c = gaussian_matrix(k, m, (1.0 / mf).sqrt(), &stream.child(0));
    let w = gaussian_matrix(m, d, cfg.sigma_w, &stream.child(1));
    let v = gaussian_matrix(m, k, cfg.sigma_v / mf.sqrt(), &stream.child(2));
    Ok(ModelParams {
        w_init: w.clone(),
        v_init: v.clone(),
        w,
        v,
        c,
        sigma_w: cfg.sigma_w,
        sigma_v: cfg.sigma_v,
        seed: stream.key(),
    })
}

impl ModelParams {
    /// Params from explicit matrices; the snapshots are set to `w` and `v`.
    pub fn from_parts(w: Array2<f64>, v: Array2<f64>, c: Array2<f64>) -> Result<Self> {
        let (m, _) = w.dim();
        let (k, mc) = c.dim();
        if v.dim() != (m, k) || mc != m {
            return Err(Error::dims(format!(
                "W {:?}, V {:?}, C {:?} are inconsistent",
                w.dim(),
                v.dim(),
                c.dim()
            )));
        }
        let std = |a: Array2<f64>| a.as_standard_layout().into_owned();
        let (w, v, c) = (std(w), std(v), std(c));
        Ok(Self {
            w_init: w.clone(),
            v_init: v.clone(),
            w,
            v,
            c,
            sigma_w: f64::NAN,
            sigma_v: f64::NAN,
            seed: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn c(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn w_init(&self) -> &Array2<f64> {
        &self.w_init
    }

    pub fn v_init(&self) -> &Array2<f64> {
        &self.v_init
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `W_t = W − W⁰`.
    pub fn w_deviation(&self) -> Array2<f64> {
        &self.w - &self.w_init
    }

    /// `V_t = V − V⁰`.
    pub fn v_deviation(&self) -> Array2<f64> {
        &self.v - &self.v_init
    }

    pub fn set_w(&mut self, w: Array2<f64>) -> Result<()> {
        if w.dim() != self.w.dim() {
            return Err(Error::dims(format!("W must be {:?}, got {:?}", self.w.dim(), w.dim())));
        }
        self.w = w.as_standard_layout().into_owned();
        Ok(())
    }

    pub fn set_v(&mut self, v: Array2<f64>) -> Result<()> {
        if v.dim() != self.v.dim() {
            return Err(Error::dims(format!("V must be {:?}, got {:?}", self.v.dim(), v.dim())));
        }
        self.v = v.as_standard_layout().into_owned();
        Ok(())
    }

    pub(crate) fn w_slice(&self) -> &[f64] {
        self.w.as_slice().expect("standard layout")
    }

    pub(crate) fn v_slice(&self) -> &[f64] {
        self.v.as_slice().expect("standard layout")
    }

    pub(crate) fn c_slice(&self) -> &[f64] {
        self.c.as_slice().expect("standard layout")
    }

    /// `W -= eta_w * gw`, `V -= eta_v * gv` with row-major gradient buffers.
    pub(crate) fn apply_step(&mut self, eta_w: f64, gw: &[f64], eta_v: f64, gv: &[f64]) {
        if eta_w != 0.0 {
            axpy(self.w.as_slice_mut().expect("standard layout"), -eta_w, gw);
        }
        if eta_v != 0.0 {
            axpy(self.v.as_slice_mut().expect("standard layout"), -eta_v, gv);
        }
    }

    /// Hash of the trained tensors, used to detect caches from other params.
    pub fn fingerprint(&self) -> u64 {
        let mut h = mix64(self.m() as u64 ^ ((self.d() as u64) << 20) ^ ((self.k() as u64) << 40));
        for x in self.w.iter().chain(self.v.iter()) {
            h = mix64(h ^ x.to_bits());
        }
        h
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v >= 0.0 { v } else { 0.0 }).collect()
}

/// Intermediates of one node's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    node: usize,
    fingerprint: u64,
    d: usize,
    m: usize,
    xa_n: Vec<f64>,
    h1_n: Vec<f64>,
    /// `(i, a2_{i n})` in the column's stored order.
    neighbors: Vec<(usize, f64)>,
    /// `X a1_i` per neighbor, `d` values each.
    xa_nb: Vec<f64>,
    /// `W X a1_i` per neighbor, `m` values each.
    h1_nb: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
    out: Vec<f64>,
}

impl ForwardCache {
    pub fn node(&self) -> usize {
        self.node
    }

    pub fn out(&self) -> &[f64] {
        &self.out
    }

    /// First-layer pre-activation `W X a1_n`.
    pub fn h1(&self) -> &[f64] {
        &self.h1_n
    }

    /// Composite-branch pre-activation `V g_n`.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn mask1(&self) -> Vec<f64> {
        self.h1_n.iter().map(|&h| if h >= 0.0 { 1.0 } else { 0.0 }).collect()
    }

    pub fn mask_u(&self) -> Vec<f64> {
        self.u.iter().map(|&h| if h >= 0.0 { 1.0 } else { 0.0 }).collect()
    }

    /// Every pre-activation the output depends on: `h1_n`, `u_n` and each neighbor's `h1_i`.
    pub fn pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.h1_n.iter().chain(&self.u).chain(&self.h1_nb).copied()
    }

    pub fn neighbors(&self) -> &[(usize, f64)] {
        &self.neighbors
    }
}

/// `C relu(h1) + C relu(V g)`, shared by the node-wise and batched paths.
fn node_output(params: &ModelParams, h1: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, k) = (params.m(), params.k());
    let mut u = vec![0.0; m];
    matvec(params.v_slice(), g, &mut u);
    let mut out1 = vec![0.0; k];
    let mut out2 = vec![0.0; k];
    matvec(params.c_slice(), &relu(h1), &mut out1);
    matvec(params.c_slice(), &relu(&u), &mut out2);
    let out = out1.iter().zip(&out2).map(|(a, b)| a + b).collect();
    (out, u)
}

/// `C relu(W xa)` into `o1`, returning the pre-activation.
fn first_layer(params: &ModelParams, xa: &[f64], o1: &mut [f64]) -> Vec<f64> {
    let mut h = vec![0.0; params.m()];
    matvec(params.w_slice(), xa, &mut h);
    matvec(params.c_slice(), &relu(&h), o1);
    h
}

/// Forward pass for node `n`. `xa1(i, buf)` writes `X a1_i` into `buf`;
/// `a2_col` lists the stored `(i, a2_{i n})` of column `n`.
pub(crate) fn forward_core(
    params: &ModelParams,
    n: usize,
    xa1: &mut dyn FnMut(usize, &mut [f64]),
    a2_col: Vec<(usize, f64)>,
) -> ForwardCache {
    let (m, d, k) = (params.m(), params.d(), params.k());
    let mut xa_n = vec![0.0; d];
    xa1(n, &mut xa_n);
    let mut h1_n = vec![0.0; m];
    matvec(params.w_slice(), &xa_n, &mut h1_n);

    let mut xa_nb = vec![0.0; a2_col.len() * d];
    let mut h1_nb = Vec::with_capacity(a2_col.len() * m);
    let mut g = vec![0.0; k];
    let mut o1 = vec![0.0; k];
    for (j, &(i, a)) in a2_col.iter().enumerate() {
        let buf = &mut xa_nb[j * d..(j + 1) * d];
        xa1(i, buf);
        let h = first_layer(params, buf, &mut o1);
        axpy(&mut g, a, &o1);
        h1_nb.extend_from_slice(&h);
    }
    let (out, u) = node_output(params, &h1_n, &g);
    ForwardCache {
        node: n,
        fingerprint: params.fingerprint(),
        d,
        m,
        xa_n,
        h1_n,
        neighbors: a2_col,
        xa_nb,
        h1_nb,
        g,
        u,
        out,
    }
}

fn check_inputs(x: ArrayView2<'_, f64>, a1: &SparseMatrix, a2: &SparseMatrix, params: &ModelParams) -> Result<()> {
    let (d, n) = x.dim();
    if d != params.d() {
        return Err(Error::dims(format!("X has {d} feature rows, W expects {}", params.d())));
    }
    for (name, a) in [("A1", a1), ("A2", a2)] {
        if a.dims() != (n, n) {
            return Err(Error::dims(format!("{name} is {:?}, X has {n} nodes", a.dims())));
        }
    }
    Ok(())
}

pub(crate) fn column_entries(a: &SparseMatrix, c: usize) -> Vec<(usize, f64)> {
    let (rows, vals) = a.col(c);
    rows.iter().copied().zip(vals.iter().copied()).collect()
}

/// Output of node `n` with per-layer adjacencies `a1`, `a2`, plus the cache for [`backward_node`].
pub fn forward_node(
    x: ArrayView2<'_, f64>,
    a1: &SparseMatrix,
    a2: &SparseMatrix,
    params: &ModelParams,
    n: usize,
) -> Result<(Array1<f64>, ForwardCache)> {
    check_inputs(x, a1, a2, params)?;
    let num_nodes = x.ncols();
    if n >= num_nodes {
        return Err(Error::NodeOutOfRange { node: n, num_nodes });
    }
    let xn = node_major(x);
    let d = params.d();
    let mut xa1 = |i: usize, buf: &mut [f64]| {
        buf.iter_mut().for_each(|b| *b = 0.0);
        aggregate_column(&xn, d, a1, i, buf);
    };
    let cache = forward_core(params, n, &mut xa1, column_entries(a2, n));
    Ok((Array1::from(cache.out.clone()), cache))
}

/// Batched forward from node-major `X A1` (N rows of width `d`). Column `n` of
/// the `k × N` result is bit-identical to the node-wise path.
pub(crate) fn forward_all_from_xa(params: &ModelParams, xa: &[f64], a2: &SparseMatrix) -> Array2<f64> {
    let (d, k) = (params.d(), params.k());
    let n = a2.cols();
    let per_node: Vec<(Vec<f64>, Vec<f64>)> = xa
        .par_chunks_exact(d)
        .map(|xa_i| {
            let mut o1 = vec![0.0; k];
            let h = first_layer(params, xa_i, &mut o1);
            (h, o1)
        })
        .collect();
    let o1: Vec<f64> = per_node.iter().flat_map(|(_, o)| o.iter().copied()).collect();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; k];
            aggregate_column(&o1, k, a2, c, &mut g);
            node_output(params, &per_node[c].0, &g).0
        })
        .collect();
    Array2::from_shape_fn((k, n), |(r, c)| cols[c][r])
}

/// Outputs for every node as a `k × N` matrix.
pub fn forward_all(
    x: ArrayView2<'_, f64>,
    a1: &SparseMatrix,
    a2: &SparseMatrix,
    params: &ModelParams,
) -> Result<Array2<f64>> {
    check_inputs(x, a1, a2, params)?;
    let xa = crate::graph::aggregate_all(&node_major(x), params.d(), a1);
    Ok(forward_all_from_xa(params, &xa, a2))
}

/// `½‖y − out‖²`.
pub fn loss_node(out: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if out.len() != y.len() {
        return Err(Error::dims(format!(
            "output has {} entries, label {}",
            out.len(),
            y.len()
        )));
    }
    Ok(half_sq_error(out.iter().copied(), y.iter().copied()))
}

pub(crate) fn half_sq_error(out: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    0.5 * out.zip(y).map(|(o, t)| (t - o) * (t - o)).sum::<f64>()
}

/// Adds `scale · ∂loss/∂W` and `scale · ∂loss/∂V` into row-major buffers.
pub(crate) fn backward_into(
    cache: &ForwardCache,
    y: &[f64],
    params: &ModelParams,
    scale: f64,
    gw: &mut [f64],
    gv: &mut [f64],
) {
    let (m, d, k) = (cache.m, cache.d, params.k());
    let r: Vec<f64> = cache.out.iter().zip(y).map(|(o, t)| o - t).collect();
    if r.iter().all(|&x| x == 0.0) {
        return;
    }
    let mut t = vec![0.0; m];
    matvec_t(params.c_slice(), &r, &mut t);
    // V gradient: (mask_u ⊙ Cᵀr) g_nᵀ
    let du: Vec<f64> = t
        .iter()
        .zip(&cache.u)
        .map(|(&ti, &ui)| if ui >= 0.0 { ti } else { 0.0 })
        .collect();
    for (j, &dj) in du.iter().enumerate() {
        if dj != 0.0 {
            axpy(&mut gv[j * k..(j + 1) * k], scale * dj, &cache.g);
        }
    }
    // direct branch: (mask1_n ⊙ Cᵀr) (X a1_n)ᵀ
    for j in 0..m {
        if cache.h1_n[j] >= 0.0 && t[j] != 0.0 {
            axpy(&mut gw[j * d..(j + 1) * d], scale * t[j], &cache.xa_n);
        }
    }
    // composite branch through every neighbor's first layer
    let mut vt = vec![0.0; k];
    matvec_t(params.v_slice(), &du, &mut vt);
    let mut s = vec![0.0; m];
    matvec_t(params.c_slice(), &vt, &mut s);
    for (idx, &(_, a)) in cache.neighbors.iter().enumerate() {
        let h = &cache.h1_nb[idx * m..(idx + 1) * m];
        let xa = &cache.xa_nb[idx * d..(idx + 1) * d];
        for j in 0..m {
            if h[j] >= 0.0 && s[j] != 0.0 {
                axpy(&mut gw[j * d..(j + 1) * d], scale * a * s[j], xa);
            }
        }
    }
}

/// Gradients of `½‖out_n − y‖²` with respect to `W` and `V`.
pub fn backward_node(
    cache: &ForwardCache,
    y: ArrayView1<'_, f64>,
    params: &ModelParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if cache.fingerprint != params.fingerprint() || cache.m != params.m() || cache.d != params.d() {
        return Err(Error::StaleCache);
    }
    if y.len() != params.k() {
        return Err(Error::dims(format!(
            "label has {} entries, model outputs {}",
            y.len(),
            params.k()
        )));
    }
    let (m, d, k) = (params.m(), params.d(), params.k());
    let mut gw = vec![0.0; m * d];
    let mut gv = vec![0.0; m * k];
    let y: Vec<f64> = y.to_vec();
    backward_into(cache, &y, params, 1.0, &mut gw, &mut gv);
    Ok((
        Array2::from_shape_vec((m, d), gw).expect("shape"),
        Array2::from_shape_vec((m, k), gv).expect("shape"),
    ))
}

/// Mean loss over the labeled set `omega`.
pub fn empirical_risk(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    a1: &SparseMatrix,
    a2: &SparseMatrix,
    omega: &[usize],
    y: ArrayView2<'_, f64>,
) -> Result<f64> {
    if omega.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let out = forward_all(x, a1, a2, params)?;
    if y.dim() != out.dim() {
        return Err(Error::dims(format!("labels {:?} vs outputs {:?}", y.dim(), out.dim())));
    }
    mean_loss(&out, y, omega)
}

pub(crate) fn mean_loss(out: &Array2<f64>, y: ArrayView2<'_, f64>, nodes: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &n in nodes {
        if n >= out.ncols() {
            return Err(Error::NodeOutOfRange {
                node: n,
                num_nodes: out.ncols(),
            });
        }
        total += half_sq_error(out.column(n).iter().copied(), y.column(n).iter().copied());
    }
    Ok(total / nodes.len() as f64)
}

const CHECKPOINT_MAGIC: &str = "LWSGCN-CHECKPOINT v1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    m: usize,
    d: usize,
    k: usize,
    sigma_w: f64,
    sigma_v: f64,
    seed: u64,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        m: params.m(),
        d: params.d(),
        k: params.k(),
        sigma_w: params.sigma_w,
        sigma_v: params.sigma_v,
        seed: params.seed,
    };
    let mut buf = Vec::new();
    writeln!(buf, "{CHECKPOINT_MAGIC}")?;
    // NaN sigmas (params built from parts) are not valid JSON numbers
    let mut json = serde_json::to_value(&header)?;
    for key in ["sigma_w", "sigma_v"] {
        if json[key].is_null() {
            json[key] = serde_json::Value::String("nan".into());
        }
    }
    writeln!(buf, "{json}")?;
    for t in [&params.w, &params.v, &params.c, &params.w_init, &params.v_init] {
        for x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let mut json: serde_json::Value = serde_json::from_str(line.trim_end())?;
    for key in ["sigma_w", "sigma_v"] {
        if json[key].as_str() == Some("nan") {
            json[key] = serde_json::Value::Null;
        }
    }
    let sig = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    let (sw, sv) = (sig(&json["sigma_w"]), sig(&json["sigma_v"]));
    json["sigma_w"] = 0.0.into();
    json["sigma_v"] = 0.0.into();
    let h: CheckpointHeader = serde_json::from_value(json)?;
    let mut read = |rows: usize, cols: usize| -> Result<Array2<f64>> {
        let mut bytes = vec![0u8; rows * cols * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
        let vals = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("shape"))
    };
    let w = read(h.m, h.d)?;
    let v = read(h.m, h.k)?;
    let c = read(h.k, h.m)?;
    let w_init = read(h.m, h.d)?;
    let v_init = read(h.m, h.k)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(ModelParams {
        w,
        v,
        c,
        w_init,
        v_init,
        sigma_w: sw,
        sigma_v: sv,
        seed: h.seed,
    })
}
