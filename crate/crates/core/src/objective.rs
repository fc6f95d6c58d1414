//! Losses and gradients for the linear network.
//!
//! The population loss against a memoryless teacher `W*` at training length `k`
//! has the closed form
//!
//! ```text
//! L(A, B, C) = ½ Σ_{j=1}^{k−1} ‖C A^j B‖_F² + ½ ‖C B − W*‖_F²
//! ```
//!
//! for i.i.d. zero-mean identity-covariance inputs. Its gradients are sums of
//! products of the vectors `A^i B` and `(Aᵀ)^i Cᵀ`, which are computed once per
//! call and shared between all three blocks.

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::LinearRNN;

/// Memoryless teacher `y = W* x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorylessTeacher {
    w: Matrix,
}

impl MemorylessTeacher {
    pub fn new(w: Matrix) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::NonFinite("MemorylessTeacher::new"));
        }
        if w.norm() == 0.0 {
            return Err(Error::Domain("memoryless teacher gain must be nonzero".into()));
        }
        Ok(MemorylessTeacher { w })
    }

    pub fn siso(w: f64) -> Result<Self> {
        MemorylessTeacher::new(Matrix::scalar(w))
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    /// Square and symmetric, as needed for symmetry-preserving MIMO training.
    pub fn is_symmetric(&self) -> bool {
        self.w.is_square() && self.w.asymmetry() == 0.0
    }
}

/// Gradient with respect to `(A, B, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTriple {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl GradTriple {
    pub fn zeros_like(model: &LinearRNN) -> Self {
        GradTriple {
            a: Matrix::zeros(model.state_dim(), model.state_dim()),
            b: Matrix::zeros(model.state_dim(), model.input_dim()),
            c: Matrix::zeros(model.output_dim(), model.state_dim()),
        }
    }

    pub fn dot(&self, other: &GradTriple) -> f64 {
        self.a.dot(&other.a) + self.b.dot(&other.b) + self.c.dot(&other.c)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> GradTriple {
        GradTriple {
            a: self.a.scale(s),
            b: self.b.scale(s),
            c: self.c.scale(s),
        }
    }

    /// Flattened as `A`, then `B`, then `C`, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.a.as_slice().len() + self.b.as_slice().len() + self.c.as_slice().len());
        v.extend_from_slice(self.a.as_slice());
        v.extend_from_slice(self.b.as_slice());
        v.extend_from_slice(self.c.as_slice());
        v
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Domain(format!("training length k must be at least 2, got {k}")));
    }
    Ok(())
}

fn check_teacher(model: &LinearRNN, teacher: &MemorylessTeacher) -> Result<()> {
    let want = (model.output_dim(), model.input_dim());
    if teacher.w().shape() != want {
        return Err(Error::dim(
            "population loss",
            format!("W* of shape {}x{}", want.0, want.1),
            format!("{}x{}", teacher.w().rows(), teacher.w().cols()),
        ));
    }
    Ok(())
}

/// `u_i = A^i B` and `z_i = (Aᵀ)^i Cᵀ` for `i < k`.
///
/// `z` is propagated through an explicit copy of `Aᵀ` with the same kernel as
/// `u`, so a bitwise-symmetric configuration yields bitwise-identical sequences.
struct Propagated {
    u: Vec<Matrix>,
    z: Vec<Matrix>,
}

fn propagate(model: &LinearRNN, k: usize) -> Propagated {
    let at = model.a().transpose();
    let mut u = Vec::with_capacity(k);
    let mut z = Vec::with_capacity(k);
    u.push(model.b().clone());
    z.push(model.c().transpose());
    for i in 1..k {
        let next_u = model.a() * &u[i - 1];
        let next_z = &at * &z[i - 1];
        u.push(next_u);
        z.push(next_z);
    }
    Propagated { u, z }
}

/// Residuals `E_0 = CB − W*`, `E_j = C A^j B` for `j = 1..k−1`.
fn residuals(model: &LinearRNN, teacher: &MemorylessTeacher, p: &Propagated) -> Vec<Matrix> {
    p.u.iter()
        .enumerate()
        .map(|(j, u)| {
            let h = model.c() * u;
            if j == 0 {
                &h - teacher.w()
            } else {
                h
            }
        })
        .collect()
}

fn loss_from_residuals(e: &[Matrix]) -> f64 {
    0.5 * e.iter().map(Matrix::norm_sq).sum::<f64>()
}

/// Closed-form population loss at training length `k ≥ 2`.
pub fn population_loss(model: &LinearRNN, teacher: &MemorylessTeacher, k: usize) -> Result<f64> {
    check_k(k)?;
    check_teacher(model, teacher)?;
    let mut ajb = model.b().clone();
    let mut total = (&(model.c() * &ajb) - teacher.w()).norm_sq();
    for _ in 1..k {
        ajb = model.a() * &ajb;
        total += (model.c() * &ajb).norm_sq();
    }
    Ok(0.5 * total)
}

/// Analytic gradient of [`population_loss`].
pub fn population_grad(model: &LinearRNN, teacher: &MemorylessTeacher, k: usize) -> Result<GradTriple> {
    population_loss_grad(model, teacher, k).map(|(_, g)| g)
}

/// Loss and gradient in one pass.
///
/// ```text
/// ∂L/∂B = Σ_{i=0}^{k−1} (Aᵀ)^i Cᵀ E_i
/// ∂L/∂C = Σ_{i=0}^{k−1} E_i (A^i B)ᵀ
/// ∂L/∂A = Σ_{i=1}^{k−1} Σ_{r=0}^{i−1} (Aᵀ)^r Cᵀ E_i Bᵀ (Aᵀ)^{i−r−1}
/// ```
pub fn population_loss_grad(
    model: &LinearRNN,
    teacher: &MemorylessTeacher,
    k: usize,
) -> Result<(f64, GradTriple)> {
    check_k(k)?;
    check_teacher(model, teacher)?;
    let p = propagate(model, k);
    let e = residuals(model, teacher, &p);
    let loss = loss_from_residuals(&e);

    let mut g = GradTriple::zeros_like(model);
    for i in 0..k {
        g.b.axpy(1.0, &(&p.z[i] * &e[i]));
        g.c.axpy(1.0, &e[i].mul_transpose(&p.u[i]));
    }
    // ∂L/∂A = Σ_r z_r R_r with R_r = Σ_{i>r} E_i u_{i−1−r}ᵀ
    for r in 0..k.saturating_sub(1) {
        let mut rr = Matrix::zeros(model.output_dim(), model.state_dim());
        for i in (r + 1)..k {
            rr.axpy(1.0, &e[i].mul_transpose(&p.u[i - 1 - r]));
        }
        g.a.axpy(1.0, &(&p.z[r] * &rr));
    }
    Ok((loss, g))
}

/// Mean and standard error of per-sequence losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

/// Streaming mean/variance (Welford).
#[derive(Debug, Default, Clone, Copy)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn estimate(&self) -> LossEstimate {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        LossEstimate {
            mean: self.mean,
            std_err: (var / self.count.max(1) as f64).sqrt(),
            count: self.count,
        }
    }
}

fn check_dataset(model: &LinearRNN, data: &LabeledDataset) -> Result<()> {
    data.validate(model.input_dim(), model.output_dim())
}

fn sq_err(pred: &[f64], label: &[f64]) -> f64 {
    pred.iter().zip(label).map(|(p, y)| (p - y) * (p - y)).sum()
}

/// `(1/2N) Σ_i ‖ŷ(xⁱ) − yⁱ‖²` over every sequence in every group.
pub fn empirical_loss(model: &LinearRNN, data: &LabeledDataset) -> Result<f64> {
    Ok(empirical_loss_estimate(model, data)?.mean)
}

/// Per-sequence halved squared errors summarised as mean ± standard error.
pub fn empirical_loss_estimate(model: &LinearRNN, data: &LabeledDataset) -> Result<LossEstimate> {
    check_dataset(model, data)?;
    let n = model.input_dim();
    let mut acc = Welford::default();
    for g in &data.groups {
        for (x, y) in g.iter() {
            acc.push(0.5 * sq_err(&model.forward_unchecked(x, n), y));
        }
    }
    Ok(acc.estimate())
}

/// Reverse-mode gradient of [`empirical_loss`].
pub fn bptt_grad(model: &LinearRNN, data: &LabeledDataset) -> Result<GradTriple> {
    empirical_loss_grad(model, data).map(|(_, g)| g)
}

/// Empirical loss and its gradient by backpropagation through time.
///
/// One forward pass stores the states, one backward pass accumulates
/// `∂A += g_t s_{t−1}ᵀ`, `∂B += g_t x_tᵀ` with `g_{t−1} = Aᵀ g_t`.
pub fn empirical_loss_grad(model: &LinearRNN, data: &LabeledDataset) -> Result<(f64, GradTriple)> {
    check_dataset(model, data)?;
    let (d, n) = (model.state_dim(), model.input_dim());
    let mut grad = GradTriple::zeros_like(model);
    let mut loss = 0.0;
    let mut states: Vec<Vec<f64>> = Vec::new();
    for group in &data.groups {
        let len = group.len();
        states.resize(len + 1, vec![0.0; d]);
        for (x, y) in group.iter() {
            states[0].iter_mut().for_each(|v| *v = 0.0);
            for t in 0..len {
                let mut next = model.a().matvec(&states[t]);
                model.b().matvec_acc(&x[t * n..(t + 1) * n], &mut next);
                states[t + 1] = next;
            }
            let pred = model.c().matvec(&states[len]);
            let err: Vec<f64> = pred.iter().zip(y).map(|(p, q)| p - q).collect();
            loss += 0.5 * err.iter().map(|e| e * e).sum::<f64>();

            grad.c.rank1_update(1.0, &err, &states[len]);
            let mut g = model.c().matvec_t(&err);
            for t in (0..len).rev() {
                grad.a.rank1_update(1.0, &g, &states[t]);
                grad.b.rank1_update(1.0, &g, &x[t * n..(t + 1) * n]);
                if t > 0 {
                    g = model.a().matvec_t(&g);
                }
            }
        }
    }
    let inv = 1.0 / data.total() as f64;
    Ok((loss * inv, grad.scale(inv)))
}
