//! Block-recurrent transformer (BRT) estimator.
//!
//! A block is a vertical stack of cells. Each cell reads the token
//! embeddings `x` (`T×N_h` per sample) and its memory state `c`
//! (`N_s×N_h` per sample):
//!
//! * vertical: `x₁ = x + W_o^v [SA(Q_e^v; K_e, V_e) ; CA(Q_b^v; K_b, V_b)]`,
//!   `x₂ = x₁ + MLP(LN(x₁))`
//! * horizontal: `v = W_o^h [SA(Q_b^h; K_b, V_b) ; CA(Q_e^h; K_e, V_e)]`,
//!   `c₁ = gate₁(c, v)`, `c₂ = gate₂(c₁, MLP(LN(c₁)))`
//!
//! Keys and values `K_e, V_e` (from `LN(x)`) and `K_b, V_b` (from `LN(c)`)
//! are computed once and shared by both directions. Both directions read the
//! state as it was before this cell's update.
//!
//! The estimate is refined recurrently, reusing the same block:
//! `ĥ_t = ĥ_{t−1} − β_t·p_t`, with `p_t` the block output for `ĥ_{t−1}`.
//!
//! Batches stack samples along rows: sample `b` owns token rows
//! `b·T..(b+1)·T` and state rows `b·N_s..(b+1)·N_s`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Purpose};
use crate::tensor::{Graph, Mat, ParamId, ParamStore, Scalar, Var};
use crate::{Error, Result};

/// Initial value of every `β_t`.
pub const BETA_INIT: f64 = 0.1;
/// Hidden width of the MLPs relative to `N_h`.
pub const MLP_EXPANSION: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrtHyperParams {
    /// Cells per block, `N_l`.
    pub depth: usize,
    /// Embedding width `N_h`.
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Refinement iterations `N_t`.
    pub iters: usize,
    /// Input tokens per sample: 1 narrowband, `K` wideband.
    pub tokens: usize,
    /// State tokens per sample, `N_s`.
    pub state_tokens: usize,
    /// Token width `2·S·S̄`.
    pub token_width: usize,
    /// Start every state at zero instead of a learned `c₀`.
    #[serde(default)]
    pub zero_initial_state: bool,
}

impl BrtHyperParams {
    /// Full-scale sizes for a given token width.
    pub fn full_scale(token_width: usize, tokens: usize) -> Self {
        Self { depth: 3, hidden: 2048, heads: 1, head_dim: 1024, iters: 5, tokens, state_tokens: tokens, token_width, zero_initial_state: false }
    }

    /// Desk-scale model used by the toy preset.
    pub fn toy(token_width: usize, tokens: usize) -> Self {
        Self { depth: 2, hidden: 32, heads: 2, head_dim: 16, iters: 2, tokens, state_tokens: tokens, token_width, zero_initial_state: false }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("iters", self.iters),
            ("tokens", self.tokens),
            ("state_tokens", self.state_tokens),
            ("token_width", self.token_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be >= 1")));
        }
        Ok(())
    }

    /// Width of the concatenated heads.
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn projects(&self) -> bool {
        self.hidden != self.token_width
    }
}

#[derive(Debug, Clone)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Mlp {
    norm: Norm,
    up: Affine,
    down: Affine,
}

#[derive(Debug, Clone)]
struct Gate {
    u_z: ParamId,
    s_z: ParamId,
    s_g: ParamId,
}

#[derive(Debug, Clone)]
struct CellIds {
    norm_e: Norm,
    norm_b: Norm,
    k_e: ParamId,
    v_e: ParamId,
    k_b: ParamId,
    v_b: ParamId,
    q_ev: ParamId,
    q_bv: ParamId,
    q_eh: ParamId,
    q_bh: ParamId,
    out_v: Affine,
    out_h: Affine,
    mlp_v: Mlp,
    mlp_h: Mlp,
    gate1: Gate,
    gate2: Gate,
}

#[derive(Debug, Clone)]
struct Layout {
    in_proj: Option<Affine>,
    out_proj: Option<Affine>,
    pos: Option<ParamId>,
    c0: Vec<Option<ParamId>>,
    cells: Vec<CellIds>,
    betas: Vec<ParamId>,
}

struct Builder<'r, R: Rng> {
    store: ParamStore<f64>,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn add(&mut self, name: String, m: Mat<f64>) -> Result<ParamId> {
        self.store.add(name, m)
    }

    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let m = Mat::from_fn(fan_in, fan_out, |_, _| dist.sample(self.rng));
        self.add(name, m)
    }

    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let m = Mat::from_fn(rows, cols, |_, _| dist.sample(self.rng));
        self.add(name, m)
    }

    fn fill(&mut self, name: String, cols: usize, v: f64) -> Result<ParamId> {
        self.add(name, Mat::filled(1, cols, v))
    }

    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Affine> {
        Ok(Affine { w: self.xavier(format!("{name}.w"), fan_in, fan_out)?, b: self.fill(format!("{name}.b"), fan_out, 0.0)? })
    }

    fn norm(&mut self, name: &str, n: usize) -> Result<Norm> {
        Ok(Norm { gain: self.fill(format!("{name}.gain"), n, 1.0)?, bias: self.fill(format!("{name}.bias"), n, 0.0)? })
    }

    fn mlp(&mut self, name: &str, n: usize) -> Result<Mlp> {
        Ok(Mlp {
            norm: self.norm(&format!("{name}.norm"), n)?,
            up: self.affine(&format!("{name}.up"), n, MLP_EXPANSION * n)?,
            down: self.affine(&format!("{name}.down"), MLP_EXPANSION * n, n)?,
        })
    }

    fn gate(&mut self, name: &str, n: usize) -> Result<Gate> {
        Ok(Gate {
            u_z: self.xavier(format!("{name}.u_z"), n, n)?,
            s_z: self.fill(format!("{name}.s_z"), n, 0.0)?,
            s_g: self.fill(format!("{name}.s_g"), n, 0.0)?,
        })
    }

    fn cell(&mut self, l: usize, h: &BrtHyperParams) -> Result<CellIds> {
        let (n, a) = (h.hidden, h.attn_width());
        let p = format!("cell.{l}");
        Ok(CellIds {
            norm_e: self.norm(&format!("{p}.norm_e"), n)?,
            norm_b: self.norm(&format!("{p}.norm_b"), n)?,
            k_e: self.xavier(format!("{p}.k_e"), n, a)?,
            v_e: self.xavier(format!("{p}.v_e"), n, a)?,
            k_b: self.xavier(format!("{p}.k_b"), n, a)?,
            v_b: self.xavier(format!("{p}.v_b"), n, a)?,
            q_ev: self.xavier(format!("{p}.q_ev"), n, a)?,
            q_bv: self.xavier(format!("{p}.q_bv"), n, a)?,
            q_eh: self.xavier(format!("{p}.q_eh"), n, a)?,
            q_bh: self.xavier(format!("{p}.q_bh"), n, a)?,
            out_v: self.affine(&format!("{p}.out_v"), 2 * a, n)?,
            out_h: self.affine(&format!("{p}.out_h"), 2 * a, n)?,
            mlp_v: self.mlp(&format!("{p}.mlp_v"), n)?,
            mlp_h: self.mlp(&format!("{p}.mlp_h"), n)?,
            gate1: self.gate(&format!("{p}.gate1"), n)?,
            gate2: self.gate(&format!("{p}.gate2"), n)?,
        })
    }
}

fn build(h: &BrtHyperParams, seed: u64) -> Result<(Layout, ParamStore<f64>)> {
    h.validate()?;
    let mut rng = rng::stream(seed, Purpose::ParamInit, 0, 0);
    let mut b = Builder { store: ParamStore::new(), rng: &mut rng };
    let in_proj = if h.projects() { Some(b.affine("in_proj", h.token_width, h.hidden)?) } else { None };
    let out_proj = if h.projects() { Some(b.affine("out_proj", h.hidden, h.token_width)?) } else { None };
    let pos = if h.tokens > 1 { Some(b.normal("pos".into(), h.tokens, h.hidden, 0.02)?) } else { None };
    let mut c0 = Vec::with_capacity(h.depth);
    let mut cells = Vec::with_capacity(h.depth);
    for l in 0..h.depth {
        c0.push(if h.zero_initial_state { None } else { Some(b.normal(format!("c0.{l}"), h.state_tokens, h.hidden, 0.02)?) });
        cells.push(b.cell(l, h)?);
    }
    let betas = (0..h.iters).map(|t| b.add(format!("beta.{t}"), Mat::filled(1, 1, BETA_INIT))).collect::<Result<_>>()?;
    Ok((Layout { in_proj, out_proj, pos, c0, cells, betas }, b.store))
}

/// Intermediate estimates `ĥ₀ … ĥ_{N_t}` of a batch, each `B·T × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace<T> {
    pub estimates: Vec<Mat<T>>,
    pub betas: Vec<T>,
}

impl<T: Scalar> RefinementTrace<T> {
    pub fn initial(&self) -> &Mat<T> {
        &self.estimates[0]
    }

    pub fn last(&self) -> &Mat<T> {
        self.estimates.last().expect("trace holds ĥ₀")
    }

    /// `r_t = ĥ_{t−1} − ĥ_t` for `t = 1..N_t`.
    pub fn residuals(&self) -> Vec<Mat<T>> {
        self.estimates
            .windows(2)
            .map(|w| Mat::from_fn(w[0].rows(), w[0].cols(), |i, j| w[0].get(i, j) - w[1].get(i, j)))
            .collect()
    }
}

/// A BRT estimator with its parameters.
#[derive(Debug, Clone)]
pub struct BrtModel<T> {
    hyper: BrtHyperParams,
    layout: Layout,
    params: ParamStore<T>,
}

impl BrtModel<f64> {
    /// Fresh model with parameters drawn from the `ParamInit` stream of `seed`.
    pub fn new(hyper: BrtHyperParams, seed: u64) -> Result<Self> {
        let (layout, params) = build(&hyper, seed)?;
        Ok(Self { hyper, layout, params })
    }

    /// Wraps an existing parameter store; names and shapes must match the
    /// layout implied by `hyper`.
    pub fn from_params(hyper: BrtHyperParams, params: ParamStore<f64>) -> Result<Self> {
        let (layout, template) = build(&hyper, 0)?;
        if template.len() != params.len() {
            return Err(Error::Config(format!("checkpoint has {} tensors, model expects {}", params.len(), template.len())));
        }
        for ((_, tn, tm), (_, pn, pm)) in template.iter().zip(params.iter()) {
            if tn != pn || tm.shape() != pm.shape() {
                return Err(Error::Config(format!("checkpoint tensor {pn} {:?} does not match {tn} {:?}", pm.shape(), tm.shape())));
            }
        }
        Ok(Self { hyper, layout, params })
    }

    /// Copy of this model for a different token / state-token count.
    /// Positional embeddings and initial states keep their first rows and
    /// gain zero rows when extended.
    pub fn resized(&self, tokens: usize, state_tokens: usize) -> Result<Self> {
        let hyper = BrtHyperParams { tokens, state_tokens, ..self.hyper.clone() };
        let (_, template) = build(&hyper, 0)?;
        let mut store = ParamStore::new();
        for (_, name, t) in template.iter() {
            let value = match self.params.by_name(name) {
                Some(old) if old.shape() == t.shape() => old.clone(),
                Some(old) => Mat::from_fn(t.rows(), t.cols(), |i, j| if i < old.rows() { old.get(i, j) } else { 0.0 }),
                None => Mat::zeros(t.rows(), t.cols()),
            };
            store.add(name, value)?;
        }
        Self::from_params(hyper, store)
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }

    /// Single-precision copy for inference.
    pub fn to_f32(&self) -> BrtModel<f32> {
        BrtModel { hyper: self.hyper.clone(), layout: self.layout.clone(), params: self.params.cast() }
    }

    /// Sets every `β_t`.
    pub fn set_betas(&mut self, beta: f64) {
        for &id in &self.layout.betas {
            self.params.replace(id, Mat::filled(1, 1, beta));
        }
    }
}

impl<T: Scalar> BrtModel<T> {
    pub fn hyper(&self) -> &BrtHyperParams {
        &self.hyper
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Total trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Scalars excluding the per-iteration `β_t`.
    pub fn num_block_params(&self) -> usize {
        self.num_params() - self.layout.betas.len()
    }

    pub fn beta_ids(&self) -> &[ParamId] {
        &self.layout.betas
    }

    fn check_rows(&self, rows: usize, cols: usize, batch: usize) -> Result<()> {
        let h = &self.hyper;
        if cols != h.token_width || batch == 0 || rows != batch * h.tokens {
            return Err(Error::Shape(format!(
                "estimate input {rows}x{cols} for batch {batch} with {} tokens of width {}",
                h.tokens, h.token_width
            )));
        }
        Ok(())
    }

    /// Builds the recurrent refinement on `graph` from `h0`
    /// (`batch·T × token_width`). Returns `[ĥ₀, ĥ₁, …, ĥ_{N_t}]`.
    pub fn refine_graph<'a>(&'a self, g: &mut Graph<'a, T>, h0: Var, batch: usize) -> Result<Vec<Var>> {
        let (rows, cols) = g.shape(h0);
        self.check_rows(rows, cols, batch)?;
        let mut states = Vec::with_capacity(self.hyper.depth);
        for c0 in &self.layout.c0 {
            states.push(match c0 {
                Some(id) => {
                    let c = g.param(&self.params, *id);
                    g.tile_rows(c, batch)?
                }
                None => g.constant(Mat::zeros(batch * self.hyper.state_tokens, self.hyper.hidden)),
            });
        }
        let mut trace = vec![h0];
        for &beta in &self.layout.betas {
            let prev = *trace.last().expect("non-empty");
            let p = self.block(g, prev, &mut states, batch)?;
            let b = g.param(&self.params, beta);
            let r = g.scale_by(p, b)?;
            trace.push(g.sub(prev, r)?);
        }
        Ok(trace)
    }

    /// One pass through all cells; updates `states` in place.
    fn block<'a>(&'a self, g: &mut Graph<'a, T>, h: Var, states: &mut [Var], batch: usize) -> Result<Var> {
        let mut x = match &self.layout.in_proj {
            Some(a) => self.affine(g, h, a)?,
            None => h,
        };
        if let Some(pos) = self.layout.pos {
            let p = g.param(&self.params, pos);
            let tiled = g.tile_rows(p, batch)?;
            x = g.add(x, tiled)?;
        }
        for (cell, state) in self.layout.cells.iter().zip(states.iter_mut()) {
            let (x_next, c_next) = self.cell(g, cell, x, *state, batch)?;
            x = x_next;
            *state = c_next;
        }
        match &self.layout.out_proj {
            Some(a) => self.affine(g, x, a),
            None => Ok(x),
        }
    }

    fn p<'a>(&'a self, g: &mut Graph<'a, T>, id: ParamId) -> Var {
        g.param(&self.params, id)
    }

    fn affine<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, a: &Affine) -> Result<Var> {
        let (w, b) = (self.p(g, a.w), self.p(g, a.b));
        g.linear(x, w, Some(b))
    }

    fn norm<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, n: &Norm) -> Result<Var> {
        let (gain, bias) = (self.p(g, n.gain), self.p(g, n.bias));
        g.layer_norm(x, gain, bias)
    }

    fn proj<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, id: ParamId) -> Result<Var> {
        let w = self.p(g, id);
        g.matmul(x, w)
    }

    fn mlp<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, m: &Mlp) -> Result<Var> {
        let n = self.norm(g, x, &m.norm)?;
        let u = self.affine(g, n, &m.up)?;
        let a = g.gelu(u)?;
        self.affine(g, a, &m.down)
    }

    /// `c ⊙ σ(s_g) + (v·U_z + s_z) ⊙ (1 − σ(s_g))`.
    fn gate<'a>(&'a self, g: &mut Graph<'a, T>, c: Var, v: Var, gate: &Gate) -> Result<Var> {
        let (u, s_z, s_g) = (self.p(g, gate.u_z), self.p(g, gate.s_z), self.p(g, gate.s_g));
        let z = g.linear(v, u, Some(s_z))?;
        fixed_gate(g, c, z, s_g)
    }

    fn cell<'a>(&'a self, g: &mut Graph<'a, T>, ids: &CellIds, x: Var, c: Var, batch: usize) -> Result<(Var, Var)> {
        let heads = self.hyper.heads;
        let xe = self.norm(g, x, &ids.norm_e)?;
        let cb = self.norm(g, c, &ids.norm_b)?;
        let k_e = self.proj(g, xe, ids.k_e)?;
        let v_e = self.proj(g, xe, ids.v_e)?;
        let k_b = self.proj(g, cb, ids.k_b)?;
        let v_b = self.proj(g, cb, ids.v_b)?;

        let q_ev = self.proj(g, xe, ids.q_ev)?;
        let q_bv = self.proj(g, xe, ids.q_bv)?;
        let self_v = g.attention(q_ev, k_e, v_e, batch, heads)?;
        let cross_v = g.attention(q_bv, k_b, v_b, batch, heads)?;
        let joined = g.concat_cols(&[self_v, cross_v])?;
        let upd = self.affine(g, joined, &ids.out_v)?;
        let x1 = g.add(x, upd)?;
        let m = self.mlp(g, x1, &ids.mlp_v)?;
        let x2 = g.add(x1, m)?;

        let q_bh = self.proj(g, cb, ids.q_bh)?;
        let q_eh = self.proj(g, cb, ids.q_eh)?;
        let self_h = g.attention(q_bh, k_b, v_b, batch, heads)?;
        let cross_h = g.attention(q_eh, k_e, v_e, batch, heads)?;
        let joined = g.concat_cols(&[self_h, cross_h])?;
        let v = self.affine(g, joined, &ids.out_h)?;
        let c1 = self.gate(g, c, v, &ids.gate1)?;
        let m = self.mlp(g, c1, &ids.mlp_h)?;
        let c2 = self.gate(g, c1, m, &ids.gate2)?;
        Ok((x2, c2))
    }

    /// Runs the refinement on `h0` and returns every intermediate estimate.
    pub fn refine(&self, h0: &Mat<T>, batch: usize) -> Result<RefinementTrace<T>> {
        let mut g = Graph::new();
        let x = g.input(h0);
        let trace = self.refine_graph(&mut g, x, batch)?;
        Ok(RefinementTrace {
            estimates: trace.iter().map(|&v| g.value(v).clone()).collect(),
            betas: self.layout.betas.iter().map(|&id| self.params.get(id).get(0, 0)).collect(),
        })
    }

    /// Final estimate `ĥ_{N_t}` for `h0`.
    pub fn estimate(&self, h0: &Mat<T>, batch: usize) -> Result<Mat<T>> {
        let mut g = Graph::new();
        let x = g.input(h0);
        let trace = self.refine_graph(&mut g, x, batch)?;
        Ok(g.value(*trace.last().expect("non-empty")).clone())
    }
}

/// Fixed gate: `c ⊙ g + z ⊙ (1 − g)` with `g = σ(s_g)` a `1×n` row.
pub fn fixed_gate<T: Scalar>(g: &mut Graph<'_, T>, c: Var, z: Var, s_g: Var) -> Result<Var> {
    let gate = g.sigmoid(s_g)?;
    let keep = g.mul_row(c, gate)?;
    let inv = g.one_minus(gate)?;
    let write = g.mul_row(z, inv)?;
    g.add(keep, write)
}

/// NMSE loss of the final estimate against `truth`.
pub fn refinement_loss(model: &BrtModel<f64>, h0: &Mat<f64>, truth: &Mat<f64>, batch: usize, grads: Option<&mut crate::tensor::Gradients<f64>>) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(h0);
    let trace = model.refine_graph(&mut g, x, batch)?;
    let t = g.input(truth);
    let loss = g.nmse_loss(*trace.last().expect("non-empty"), t, batch)?;
    if let Some(grads) = grads {
        g.backward(loss, Some(grads))?;
    }
    Ok(g.value(loss).get(0, 0))
}

/// Compares the backward gradient of [`refinement_loss`] for every parameter
/// tensor with central finite differences of step `step`. Returns
/// `(name, normwise relative error)` per tensor.
pub fn check_param_gradients(model: &BrtModel<f64>, h0: &Mat<f64>, truth: &Mat<f64>, batch: usize, step: f64) -> Result<Vec<(String, f64)>> {
    let mut grads = crate::tensor::Gradients::zeros_like(model.params());
    refinement_loss(model, h0, truth, batch, Some(&mut grads))?;
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.params().len());
    for id in model.params().ids() {
        let mut numeric = Mat::zeros(model.params().get(id).rows(), model.params().get(id).cols());
        for i in 0..numeric.len() {
            let x0 = model.params().get(id).as_slice()[i];
            probe.params_mut().get_mut(id).as_mut_slice()[i] = x0 + step;
            let fp = refinement_loss(&probe, h0, truth, batch, None)?;
            probe.params_mut().get_mut(id).as_mut_slice()[i] = x0 - step;
            let fm = refinement_loss(&probe, h0, truth, batch, None)?;
            probe.params_mut().get_mut(id).as_mut_slice()[i] = x0;
            numeric.as_mut_slice()[i] = (fp - fm) / (2.0 * step);
        }
        out.push((model.params().name(id).to_string(), crate::tensor::relative_error(grads.get(id), &numeric)));
    }
    Ok(out)
}
