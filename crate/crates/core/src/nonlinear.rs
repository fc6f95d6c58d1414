//! GRU and LSTM cells with a bias-free linear readout and hand-written
//! backpropagation through time.
//!
//! GRU:
//!   z = σ(W_z x + U_z h + b_z),  r = σ(W_r x + U_r h + b_r)
//!   h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h),  h' = (1 − z) ⊙ h + z ⊙ h̃
//!
//! LSTM:
//!   i, f, o = σ(W x + U h + b),  g = tanh(W_g x + U_g h + b_g)
//!   c' = f ⊙ c + i ⊙ g,  h' = o ⊙ tanh(c')
//!
//! Output `ŷ = R h_k`. Parameters are stored flat, gate by gate as
//! `[W (d×n), U (d×d), b (d)]`, followed by `R (m×d)`, all row-major.

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{Sequence, SequenceModel};
use crate::rng;
use crate::training::{DatasetLoss, Parameters};

const STREAM_CELL_INIT: u64 = 12;
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

// GRU gate order: update, reset, candidate. LSTM: input, forget, output, candidate.
const GRU_Z: usize = 0;
const GRU_R: usize = 1;
const GRU_H: usize = 2;
const LSTM_I: usize = 0;
const LSTM_F: usize = 1;
const LSTM_O: usize = 2;
const LSTM_G: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    d: usize,
    n: usize,
    m: usize,
    gates: usize,
}

impl Layout {
    fn gate_len(&self) -> usize {
        self.d * self.n + self.d * self.d + self.d
    }
    fn w(&self, g: usize) -> Range<usize> {
        let s = g * self.gate_len();
        s..s + self.d * self.n
    }
    fn u(&self, g: usize) -> Range<usize> {
        let s = g * self.gate_len() + self.d * self.n;
        s..s + self.d * self.d
    }
    fn b(&self, g: usize) -> Range<usize> {
        let s = g * self.gate_len() + self.d * self.n + self.d * self.d;
        s..s + self.d
    }
    fn r(&self) -> Range<usize> {
        let s = self.gates * self.gate_len();
        s..s + self.m * self.d
    }
    fn len(&self) -> usize {
        self.gates * self.gate_len() + self.m * self.d
    }
}

#[derive(Clone, PartialEq)]
pub struct GatedCell {
    kind: CellKind,
    layout: Layout,
    params: Vec<f64>,
}

impl fmt::Debug for GatedCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GatedCell({}, d={}, n={}, m={}, {} params)",
            self.kind,
            self.layout.d,
            self.layout.n,
            self.layout.m,
            self.params.len()
        )
    }
}

/// `out += M v` for row-major `M` of shape `out.len() × v.len()`.
fn gemv_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ v` for row-major `M` of shape `v.len() × out.len()`.
fn gemv_t_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&vi, row) in v.iter().zip(m.chunks_exact(cols)) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += vi * a;
        }
    }
}

/// `M += a bᵀ`.
fn outer_acc(m: &mut [f64], a: &[f64], b: &[f64]) {
    for (&ai, row) in a.iter().zip(m.chunks_exact_mut(b.len())) {
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediates of one forward pass, indexed by time step.
#[derive(Debug, Clone)]
pub struct CellCache {
    /// `h_0 … h_k` (`h_0 = 0`).
    pub hidden: Vec<Vec<f64>>,
    /// LSTM cell states `c_0 … c_k`; empty for GRU.
    pub cell: Vec<Vec<f64>>,
    /// Post-activation gate values per step, gate-major.
    pub gates: Vec<Vec<Vec<f64>>>,
}

impl GatedCell {
    /// Xavier-normal weights, zero biases.
    pub fn xavier(kind: CellKind, d: usize, n: usize, m: usize, seed: u64) -> Result<Self> {
        let mut cell = GatedCell::zeros(kind, d, n, m)?;
        let mut g = rng::stream(seed, STREAM_CELL_INIT);
        let l = cell.layout;
        let sd = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();
        for gate in 0..l.gates {
            for v in &mut cell.params[l.w(gate)] {
                *v = sd(n, d) * rng::normal(&mut g);
            }
            for v in &mut cell.params[l.u(gate)] {
                *v = sd(d, d) * rng::normal(&mut g);
            }
        }
        for v in &mut cell.params[l.r()] {
            *v = sd(d, m) * rng::normal(&mut g);
        }
        Ok(cell)
    }

    pub fn zeros(kind: CellKind, d: usize, n: usize, m: usize) -> Result<Self> {
        if d == 0 || n == 0 || m == 0 {
            return Err(Error::Precondition("cell dimensions must be positive".into()));
        }
        let layout = Layout { d, n, m, gates: kind.gates() };
        Ok(GatedCell {
            kind,
            layout,
            params: vec![0.0; layout.len()],
        })
    }

    pub fn from_flat(kind: CellKind, d: usize, n: usize, m: usize, params: Vec<f64>) -> Result<Self> {
        let mut cell = GatedCell::zeros(kind, d, n, m)?;
        if params.len() != cell.params.len() {
            return Err(Error::dim("GatedCell::from_flat", cell.params.len(), params.len()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GatedCell::from_flat"));
        }
        cell.params = params;
        Ok(cell)
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }
    pub fn hidden_dim(&self) -> usize {
        self.layout.d
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Input weights of gate `g` (`d×n`, row-major).
    pub fn w(&self, g: usize) -> &[f64] {
        &self.params[self.layout.w(g)]
    }
    /// Recurrent weights of gate `g` (`d×d`).
    pub fn u(&self, g: usize) -> &[f64] {
        &self.params[self.layout.u(g)]
    }
    pub fn bias(&self, g: usize) -> &[f64] {
        &self.params[self.layout.b(g)]
    }
    /// Readout `R` (`m×d`).
    pub fn readout(&self) -> &[f64] {
        &self.params[self.layout.r()]
    }
    /// Position of the readout inside the flat parameter vector.
    pub fn readout_range(&self) -> Range<usize> {
        self.layout.r()
    }

    fn preact(&self, g: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.bias(g).to_vec();
        gemv_acc(self.w(g), x, &mut a);
        gemv_acc(self.u(g), h, &mut a);
        a
    }

    fn run(&self, flat: &[f64], keep: bool) -> (Vec<f64>, Option<CellCache>) {
        let Layout { d, n, .. } = self.layout;
        let steps = flat.len() / n;
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut cache = keep.then(|| CellCache {
            hidden: vec![h.clone()],
            cell: if self.kind == CellKind::Lstm { vec![c.clone()] } else { Vec::new() },
            gates: Vec::with_capacity(steps),
        });
        for x in flat.chunks_exact(n) {
            let gates = match self.kind {
                CellKind::Gru => {
                    let z: Vec<f64> = self.preact(GRU_Z, x, &h).into_iter().map(sigmoid).collect();
                    let r: Vec<f64> = self.preact(GRU_R, x, &h).into_iter().map(sigmoid).collect();
                    let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
                    let mut a = self.bias(GRU_H).to_vec();
                    gemv_acc(self.w(GRU_H), x, &mut a);
                    gemv_acc(self.u(GRU_H), &rh, &mut a);
                    let hh: Vec<f64> = a.into_iter().map(f64::tanh).collect();
                    for i in 0..d {
                        h[i] = (1.0 - z[i]) * h[i] + z[i] * hh[i];
                    }
                    vec![z, r, hh]
                }
                CellKind::Lstm => {
                    let i: Vec<f64> = self.preact(LSTM_I, x, &h).into_iter().map(sigmoid).collect();
                    let f: Vec<f64> = self.preact(LSTM_F, x, &h).into_iter().map(sigmoid).collect();
                    let o: Vec<f64> = self.preact(LSTM_O, x, &h).into_iter().map(sigmoid).collect();
                    let g: Vec<f64> = self.preact(LSTM_G, x, &h).into_iter().map(f64::tanh).collect();
                    for j in 0..d {
                        c[j] = f[j] * c[j] + i[j] * g[j];
                        h[j] = o[j] * c[j].tanh();
                    }
                    vec![i, f, o, g]
                }
            };
            if let Some(cache) = cache.as_mut() {
                cache.hidden.push(h.clone());
                if self.kind == CellKind::Lstm {
                    cache.cell.push(c.clone());
                }
                cache.gates.push(gates);
            }
        }
        let mut y = vec![0.0; self.layout.m];
        gemv_acc(self.readout(), &h, &mut y);
        (y, cache)
    }

    /// Output and intermediates for one sequence.
    pub fn cell_forward(&self, x: &Sequence) -> Result<(Vec<f64>, CellCache)> {
        if x.dim() != self.layout.n {
            return Err(Error::dim("cell_forward", format!("input dim {}", self.layout.n), format!("input dim {}", x.dim())));
        }
        if x.is_empty() {
            return Err(Error::Precondition("cell_forward needs a non-empty sequence".into()));
        }
        let (y, cache) = self.run(x.as_flat(), true);
        Ok((y, cache.expect("cache requested")))
    }

    /// Accumulates `∂(½‖ŷ − y‖²)` for one sequence into `grad`; returns the loss.
    fn backward_one(&self, x: &[f64], label: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let (d, n) = (l.d, l.n);
        let (yhat, cache) = self.run(x, true);
        let cache = cache.expect("cache requested");
        let e: Vec<f64> = yhat.iter().zip(label).map(|(a, b)| a - b).collect();
        let loss = 0.5 * e.iter().map(|v| v * v).sum::<f64>();
        let steps = cache.gates.len();

        outer_acc(&mut grad[l.r()], &e, &cache.hidden[steps]);
        let mut dh = vec![0.0; d];
        gemv_t_acc(self.readout(), &e, &mut dh);
        let mut dc = vec![0.0; d];

        let acc_gate = |grad: &mut [f64], g: usize, da: &[f64], xt: &[f64], hin: &[f64]| {
            outer_acc(&mut grad[l.w(g)], da, xt);
            outer_acc(&mut grad[l.u(g)], da, hin);
            for (b, v) in grad[l.b(g)].iter_mut().zip(da) {
                *b += v;
            }
        };

        for t in (0..steps).rev() {
            let xt = &x[t * n..(t + 1) * n];
            let hp = &cache.hidden[t];
            let gs = &cache.gates[t];
            let mut dh_prev = vec![0.0; d];
            match self.kind {
                CellKind::Gru => {
                    let (z, r, hh) = (&gs[GRU_Z], &gs[GRU_R], &gs[GRU_H]);
                    let mut da_z = vec![0.0; d];
                    let mut da_h = vec![0.0; d];
                    for i in 0..d {
                        let dz = dh[i] * (hh[i] - hp[i]);
                        da_z[i] = dz * z[i] * (1.0 - z[i]);
                        da_h[i] = dh[i] * z[i] * (1.0 - hh[i] * hh[i]);
                        dh_prev[i] = dh[i] * (1.0 - z[i]);
                    }
                    let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
                    acc_gate(grad, GRU_H, &da_h, xt, &rh);
                    let mut drh = vec![0.0; d];
                    gemv_t_acc(self.u(GRU_H), &da_h, &mut drh);
                    let mut da_r = vec![0.0; d];
                    for i in 0..d {
                        da_r[i] = drh[i] * hp[i] * r[i] * (1.0 - r[i]);
                        dh_prev[i] += drh[i] * r[i];
                    }
                    acc_gate(grad, GRU_Z, &da_z, xt, hp);
                    acc_gate(grad, GRU_R, &da_r, xt, hp);
                    gemv_t_acc(self.u(GRU_Z), &da_z, &mut dh_prev);
                    gemv_t_acc(self.u(GRU_R), &da_r, &mut dh_prev);
                }
                CellKind::Lstm => {
                    let (ig, fg, og, gg) = (&gs[LSTM_I], &gs[LSTM_F], &gs[LSTM_O], &gs[LSTM_G]);
                    let (cp, ct) = (&cache.cell[t], &cache.cell[t + 1]);
                    let mut da = vec![vec![0.0; d]; 4];
                    for j in 0..d {
                        let tc = ct[j].tanh();
                        let dct = dc[j] + dh[j] * og[j] * (1.0 - tc * tc);
                        da[LSTM_O][j] = dh[j] * tc * og[j] * (1.0 - og[j]);
                        da[LSTM_I][j] = dct * gg[j] * ig[j] * (1.0 - ig[j]);
                        da[LSTM_F][j] = dct * cp[j] * fg[j] * (1.0 - fg[j]);
                        da[LSTM_G][j] = dct * ig[j] * (1.0 - gg[j] * gg[j]);
                        dc[j] = dct * fg[j];
                    }
                    for (g, dag) in da.iter().enumerate() {
                        acc_gate(grad, g, dag, xt, hp);
                        gemv_t_acc(self.u(g), dag, &mut dh_prev);
                    }
                }
            }
            dh = dh_prev;
        }
        loss
    }

    fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        data.validate(self.layout.n, self.layout.m)
    }

    /// `(1/2N) Σ ‖ŷ − y‖²` over all sequences.
    pub fn loss(&self, data: &LabeledDataset) -> Result<f64> {
        self.check_data(data)?;
        let mut total = 0.0;
        for group in &data.groups {
            for (x, y) in group.iter() {
                let yhat = self.predict(x);
                total += 0.5 * yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
        Ok(total / data.total() as f64)
    }

    /// Loss and exact gradient of [`GatedCell::loss`], laid out like
    /// [`Parameters::to_flat`]. Sequences are processed in fixed chunks and
    /// reduced in order.
    pub fn cell_bptt(&self, data: &LabeledDataset) -> Result<(f64, Vec<f64>)> {
        self.check_data(data)?;
        let p = self.params.len();
        let mut grad = vec![0.0; p];
        let mut loss = 0.0;
        for group in &data.groups {
            let idx: Vec<usize> = (0..group.count()).collect();
            let partials: Vec<(f64, Vec<f64>)> = idx
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; p];
                    let mut l = 0.0;
                    for &i in chunk {
                        l += self.backward_one(group.input(i), group.label(i), &mut g);
                    }
                    (l, g)
                })
                .collect();
            for (l, g) in partials {
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        let scale = 1.0 / data.total() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }
}

impl SequenceModel for GatedCell {
    fn input_dim(&self) -> usize {
        self.layout.n
    }
    fn output_dim(&self) -> usize {
        self.layout.m
    }
    fn predict(&self, flat: &[f64]) -> Vec<f64> {
        self.run(flat, false).0
    }
}

impl Parameters for GatedCell {
    fn num_params(&self) -> usize {
        self.params.len()
    }
    fn to_flat(&self) -> Vec<f64> {
        self.params.clone()
    }
    fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.params.len(), "flat parameter length");
        self.params.copy_from_slice(values);
    }
}

impl DatasetLoss for GatedCell {
    fn dataset_loss(&self, data: &LabeledDataset) -> Result<f64> {
        self.loss(data)
    }
    fn dataset_loss_grad(&self, data: &LabeledDataset) -> Result<(f64, Vec<f64>)> {
        self.cell_bptt(data)
    }
}
