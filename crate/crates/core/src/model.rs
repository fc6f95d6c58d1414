//! Linear recurrent network `s_{t+1} = A s_t + B x_{t+1}`, `ŷ_t = C s_t`, with `s_0 = 0`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRNN {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl LinearRNN {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim("LinearRNN::new", "square A", format!("{}x{}", a.rows(), a.cols())));
        }
        let d = a.rows();
        if b.rows() != d {
            return Err(Error::dim("LinearRNN::new", format!("B with {d} rows"), b.rows()));
        }
        if c.cols() != d {
            return Err(Error::dim("LinearRNN::new", format!("C with {d} cols"), c.cols()));
        }
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::NonFinite("LinearRNN::new"));
        }
        Ok(LinearRNN { a, b, c })
    }

    /// Scalar system `a, b, c`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        LinearRNN {
            a: Matrix::scalar(a),
            b: Matrix::scalar(b),
            c: Matrix::scalar(c),
        }
    }

    pub fn zeros(d: usize, n: usize, m: usize) -> Self {
        LinearRNN {
            a: Matrix::zeros(d, d),
            b: Matrix::zeros(d, n),
            c: Matrix::zeros(m, d),
        }
    }

    #[inline]
    pub fn a(&self) -> &Matrix {
        &self.a
    }
    #[inline]
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    #[inline]
    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b, &mut self.c)
    }

    pub fn into_parts(self) -> (Matrix, Matrix, Matrix) {
        (self.a, self.b, self.c)
    }

    /// State dimension.
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn is_siso(&self) -> bool {
        self.input_dim() == 1 && self.output_dim() == 1
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    fn check_input(&self, x: &Sequence, op: &'static str) -> Result<()> {
        if x.dim() != self.input_dim() {
            return Err(Error::dim(op, format!("input dim {}", self.input_dim()), x.dim()));
        }
        Ok(())
    }

    /// States `s_1..s_k` and outputs `ŷ_1..ŷ_k`.
    pub fn rollout(&self, x: &Sequence) -> Result<Rollout> {
        self.check_input(x, "rollout")?;
        let d = self.state_dim();
        let mut states = Vec::with_capacity(x.len());
        let mut outputs = Vec::with_capacity(x.len());
        let mut s = vec![0.0; d];
        for xt in x.steps() {
            let mut next = self.a.matvec(&s);
            self.b.matvec_acc(xt, &mut next);
            s = next;
            outputs.push(self.c.matvec(&s));
            states.push(s.clone());
        }
        Ok(Rollout { states, outputs })
    }

    /// Final output `ŷ_k = Σ_i C A^{k−i} B x_i`.
    ///
    /// Evaluated as a running state so each step costs one `d×d` matvec.
    pub fn forward(&self, x: &Sequence) -> Result<Vec<f64>> {
        self.check_input(x, "forward")?;
        Ok(self.forward_unchecked(x.as_flat(), x.dim()))
    }

    /// `flat` is a time-major `len × n` block; `n` must equal the input dim.
    pub(crate) fn forward_unchecked(&self, flat: &[f64], n: usize) -> Vec<f64> {
        let d = self.state_dim();
        let mut s = vec![0.0; d];
        let mut next = vec![0.0; d];
        for xt in flat.chunks_exact(n) {
            for (i, ni) in next.iter_mut().enumerate() {
                *ni = self.a.row_slice(i).iter().zip(&s).map(|(p, q)| p * q).sum::<f64>()
                    + self.b.row_slice(i).iter().zip(xt).map(|(p, q)| p * q).sum::<f64>();
            }
            std::mem::swap(&mut s, &mut next);
        }
        self.c.matvec(&s)
    }

    /// `[C A^j B for j = 0..=horizon]`.
    pub fn impulse_response(&self, horizon: usize) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(horizon + 1);
        let mut ajb = self.b.clone();
        for j in 0..=horizon {
            if j > 0 {
                ajb = &self.a * &ajb;
            }
            out.push(&self.c * &ajb);
        }
        out
    }
}

/// Anything that maps a time-major input block to a final output.
///
/// Implemented by the linear network and the gated cells so data labelling
/// and Monte-Carlo evaluation can treat them uniformly.
pub trait SequenceModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// `flat` holds `len × input_dim` values, time-major.
    fn predict(&self, flat: &[f64]) -> Vec<f64>;
    /// The linear weights, if the model has a closed-form impulse response.
    fn as_linear(&self) -> Option<&LinearRNN> {
        None
    }
}

impl SequenceModel for LinearRNN {
    fn input_dim(&self) -> usize {
        self.b.cols()
    }
    fn output_dim(&self) -> usize {
        self.c.rows()
    }
    fn predict(&self, flat: &[f64]) -> Vec<f64> {
        self.forward_unchecked(flat, self.b.cols())
    }
    fn as_linear(&self) -> Option<&LinearRNN> {
        Some(self)
    }
}

/// Per-step trajectory of a rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// Input sequence `x_1..x_k`, each step a vector of length `n`, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    dim: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::dim("Sequence::new", "input dim >= 1", 0));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::dim("Sequence::new", format!("non-empty multiple of {dim}"), data.len()));
        }
        Ok(Sequence { dim, data })
    }

    /// One-dimensional sequence from scalars.
    pub fn scalars(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "empty sequence");
        Sequence {
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_steps(steps: &[Vec<f64>]) -> Result<Self> {
        let dim = steps.first().map_or(0, |s| s.len());
        let mut data = Vec::with_capacity(dim * steps.len());
        for s in steps {
            if s.len() != dim {
                return Err(Error::dim("Sequence::from_steps", dim, s.len()));
            }
            data.extend_from_slice(s);
        }
        Sequence::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn linear_combination(alpha: f64, x: &Sequence, beta: f64, z: &Sequence) -> Sequence {
        assert_eq!(x.dim, z.dim);
        assert_eq!(x.data.len(), z.data.len());
        Sequence {
            dim: x.dim,
            data: x.data.iter().zip(&z.data).map(|(p, q)| alpha * p + beta * q).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{make_cyclic_bad, make_diag_bad};

    #[test]
    fn memoryless_identity_chain() {
        let m = LinearRNN::scalar(0.0, 1.0, 1.0);
        let r = m.rollout(&Sequence::scalars(&[3.0, 5.0])).unwrap();
        assert_eq!(r.outputs, vec![vec![3.0], vec![5.0]]);
    }

    #[test]
    fn scalar_unrolling_accumulates() {
        let m = LinearRNN::scalar(1.0, 1.0, 1.0);
        assert_eq!(m.forward(&Sequence::scalars(&[1.0, 1.0, 1.0])).unwrap(), vec![3.0]);
    }

    #[test]
    fn cyclic_construction_rollout() {
        let m = make_cyclic_bad(3, 3, &Matrix::scalar(2.0)).unwrap();
        let r = m.rollout(&Sequence::scalars(&[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(r.outputs[3], vec![4.0]);
    }

    #[test]
    fn cyclic_forward_keeps_lags_zero_and_d() {
        for d in 2..6 {
            let m = make_cyclic_bad(d, 2, &Matrix::scalar(1.5)).unwrap();
            let x: Vec<f64> = (0..=d).map(|i| (i as f64 + 1.0) * 0.7 - 1.0).collect();
            let y = m.forward(&Sequence::scalars(&x)).unwrap();
            let expect = 1.5 * (x[0] + x[d]);
            let roll = m.rollout(&Sequence::scalars(&x)).unwrap();
            assert!((y[0] - expect).abs() < 1e-14);
            assert_eq!(roll.outputs[d][0], y[0]);
        }
    }

    #[test]
    fn diag_construction_forward() {
        let m = make_diag_bad(3, 4, 1.0, 0.01).unwrap();
        let y = m.forward(&Sequence::scalars(&[1.0, 1.0, 1.0])).unwrap();
        assert!((y[0] - 1.07).abs() < 1e-12, "{}", y[0]);
    }

    #[test]
    fn zero_transition_forward_is_cb_x_last() {
        let m = LinearRNN::new(
            Matrix::zeros(3, 3),
            Matrix::from_rows(&[&[1.0, 2.0], &[0.0, -1.0], &[0.5, 0.5]]),
            Matrix::from_rows(&[&[1.0, 1.0, 1.0]]),
        )
        .unwrap();
        let x = Sequence::from_steps(&[vec![9.0, 9.0], vec![-3.0, 2.0], vec![1.0, 4.0]]).unwrap();
        let cb = m.c() * m.b();
        let expect = cb.matvec(&[1.0, 4.0]);
        assert_eq!(m.forward(&x).unwrap(), expect);
        let ir = m.impulse_response(3);
        assert_eq!(ir[0], cb);
        for h in &ir[1..] {
            assert_eq!(h.norm(), 0.0);
        }
    }

    #[test]
    fn impulse_response_of_cyclic() {
        let d = 4;
        let m = make_cyclic_bad(d, 3, &Matrix::scalar(2.0)).unwrap();
        for (j, h) in m.impulse_response(2 * d).iter().enumerate() {
            let expect = if j % d == 0 { 2.0 } else { 0.0 };
            assert_eq!(h[(0, 0)], expect, "lag {j}");
        }
    }

    #[test]
    fn impulse_response_of_diag_construction() {
        let (w, delta) = (1.3, 0.02);
        let m = make_diag_bad(3, 5, w, delta).unwrap();
        let ir = m.impulse_response(12);
        for (j, h) in ir.iter().enumerate() {
            // oracle: explicit power of the diagonal transition
            let pow = m.a().pow(j as u32).unwrap();
            let brute = &(m.c() * &pow) * m.b();
            let closed = if j == 0 { w } else { 0.0 } + 2f64.powi(j as i32) * delta;
            assert!((h[(0, 0)] - brute[(0, 0)]).abs() <= 1e-12 * brute[(0, 0)].abs().max(1.0));
            assert!((h[(0, 0)] - closed).abs() <= 1e-12 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_errors() {
        let m = LinearRNN::zeros(2, 2, 1);
        assert!(matches!(m.forward(&Sequence::scalars(&[1.0])), Err(Error::Dimension { .. })));
        assert!(LinearRNN::new(Matrix::zeros(2, 3), Matrix::zeros(2, 1), Matrix::zeros(1, 2)).is_err());
        assert!(LinearRNN::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1), Matrix::zeros(1, 2)).is_err());
        assert!(LinearRNN::new(Matrix::zeros(2, 2), Matrix::zeros(2, 1), Matrix::zeros(1, 3)).is_err());
        assert!(Sequence::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
