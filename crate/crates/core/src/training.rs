//! Initialisation, optimisers, the training loop and the explicit
//! zero-loss-but-non-extrapolating constructions.

use crate::datagen::{adversarial_groups, echo_groups, honest_group, Corruption, LabeledDataset, Provenance, Teacher};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::LinearRNN;
use crate::objective::{empirical_loss_estimate, empirical_loss_grad, population_loss, population_loss_grad, MemorylessTeacher};
use crate::rng;

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

const STREAM_INIT: u64 = 10;
const STREAM_BATCH: u64 = 11;

/// A model whose trainable weights can be viewed as one flat vector.
pub trait Parameters: Clone {
    fn num_params(&self) -> usize;
    fn to_flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, values: &[f64]);
    fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
    /// Norms tracked in the trajectory, when meaningful for the model.
    fn weight_stats(&self) -> Option<WeightStats> {
        None
    }
}

impl Parameters for LinearRNN {
    fn num_params(&self) -> usize {
        let d = self.state_dim();
        d * d + d * self.input_dim() + self.output_dim() * d
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.a().as_slice());
        v.extend_from_slice(self.b().as_slice());
        v.extend_from_slice(self.c().as_slice());
        v
    }

    fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let (a, b, c) = self.parts_mut();
        let (na, nb) = (a.as_slice().len(), b.as_slice().len());
        a.as_mut_slice().copy_from_slice(&values[..na]);
        b.as_mut_slice().copy_from_slice(&values[na..na + nb]);
        c.as_mut_slice().copy_from_slice(&values[na + nb..]);
    }

    fn is_finite(&self) -> bool {
        LinearRNN::is_finite(self)
    }

    fn weight_stats(&self) -> Option<WeightStats> {
        Some(WeightStats::of(self))
    }
}

/// Weight norms and symmetry drift of a linear network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm_c: f64,
    /// `‖A − Aᵀ‖_F`.
    pub asym_a: f64,
    /// `‖B − Cᵀ‖_F`, or NaN when `n ≠ m`.
    pub asym_bc: f64,
}

impl WeightStats {
    pub fn of(model: &LinearRNN) -> Self {
        let asym_bc = if model.b().shape() == (model.c().cols(), model.c().rows()) {
            (model.b() - &model.c().transpose()).norm()
        } else {
            f64::NAN
        };
        WeightStats {
            norm_a: model.a().norm(),
            norm_b: model.b().norm(),
            norm_c: model.c().norm(),
            asym_a: model.a().asymmetry(),
            asym_bc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// `B = sign·Cᵀ`, `C ~ N(0, σ²)`, and `A = αI` if `alpha` is given,
    /// else `A = σ·(G + Gᵀ)/2` for standard normal `G`.
    Symmetric { alpha: Option<f64>, sign: f64 },
    /// Every weight `N(0, 2/(fan_in + fan_out))`.
    Xavier,
    /// `A = αI`; `B`, `C` independent `N(0, σ²)`.
    IdentityScaled { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub sigma2: f64,
    pub seed: u64,
}

impl InitSpec {
    pub fn symmetric(sigma2: f64, seed: u64) -> Self {
        InitSpec {
            scheme: InitScheme::Symmetric { alpha: None, sign: 1.0 },
            sigma2,
            seed,
        }
    }

    pub fn xavier(seed: u64) -> Self {
        InitSpec {
            scheme: InitScheme::Xavier,
            sigma2: 1.0,
            seed,
        }
    }

    pub fn identity_scaled(alpha: f64, sigma2: f64, seed: u64) -> Self {
        InitSpec {
            scheme: InitScheme::IdentityScaled { alpha },
            sigma2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Precondition(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        match self.scheme {
            InitScheme::Symmetric { alpha, sign } => {
                if alpha.is_some_and(|a| !a.is_finite()) {
                    return Err(Error::Precondition("alpha must be finite".into()));
                }
                if sign != 1.0 && sign != -1.0 {
                    return Err(Error::Precondition(format!("sign must be +1 or -1, got {sign}")));
                }
            }
            InitScheme::IdentityScaled { alpha } if !alpha.is_finite() => {
                return Err(Error::Precondition("alpha must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn init(d: usize, n: usize, m: usize, spec: &InitSpec) -> Result<LinearRNN> {
    if d == 0 || n == 0 || m == 0 {
        return Err(Error::Precondition("init dimensions must be positive".into()));
    }
    spec.validate()?;
    let mut g = rng::stream(spec.seed, STREAM_INIT);
    let sigma = spec.sigma2.sqrt();
    let mut gauss = |r: usize, c: usize, sd: f64| Matrix::from_fn(r, c, |_, _| sd * rng::normal(&mut g));
    match spec.scheme {
        InitScheme::Symmetric { alpha, sign } => {
            if n != m {
                return Err(Error::Precondition(format!("symmetric init needs n == m, got n={n}, m={m}")));
            }
            let a = match alpha {
                Some(alpha) => Matrix::identity(d).scale(alpha),
                None => gauss(d, d, sigma).symmetrized(),
            };
            let c = gauss(m, d, sigma);
            let b = c.transpose().scale(sign);
            LinearRNN::new(a, b, c)
        }
        InitScheme::Xavier => {
            let sd = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();
            let a = gauss(d, d, sd(d, d));
            let b = gauss(d, n, sd(n, d));
            let c = gauss(m, d, sd(d, m));
            LinearRNN::new(a, b, c)
        }
        InitScheme::IdentityScaled { alpha } => {
            let a = Matrix::identity(d).scale(alpha);
            let b = gauss(d, n, sigma);
            let c = gauss(m, d, sigma);
            LinearRNN::new(a, b, c)
        }
    }
}

/// Validates caller-provided weights against the expected dimensions.
pub fn init_explicit(d: usize, n: usize, m: usize, model: LinearRNN) -> Result<LinearRNN> {
    if (model.state_dim(), model.input_dim(), model.output_dim()) != (d, n, m) {
        return Err(Error::dim(
            "init_explicit",
            format!("d={d}, n={n}, m={m}"),
            format!("d={}, n={}, m={}", model.state_dim(), model.input_dim(), model.output_dim()),
        ));
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("init_explicit"));
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    GdBacktracking,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    /// Step size; the initial trial step for backtracking.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_steps: usize,
    pub stop_tol: f64,
}

impl OptimizerSpec {
    pub fn gd(lr: f64, max_steps: usize, stop_tol: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Gd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            max_steps,
            stop_tol,
        }
    }

    pub fn backtracking(lr: f64, max_steps: usize, stop_tol: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::GdBacktracking,
            ..OptimizerSpec::gd(lr, max_steps, stop_tol)
        }
    }

    /// Adam with Keras defaults (`β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-7`).
    pub fn adam(lr: f64, max_steps: usize, stop_tol: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adam,
            ..OptimizerSpec::gd(lr, max_steps, stop_tol)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Precondition(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Precondition("Adam momenta must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Precondition("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `W ← W − η·∂W` for each block.
pub fn gd_step<P: Parameters>(model: &P, grad: &[f64], lr: f64) -> P {
    let mut flat = model.to_flat();
    assert_eq!(flat.len(), grad.len(), "gradient length");
    for (w, g) in flat.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    let mut out = model.clone();
    out.set_flat(&flat);
    out
}

/// First and second moment estimates; empty before the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Bias-corrected Adam update.
pub fn adam_step<P: Parameters>(model: &P, grad: &[f64], mut state: AdamState, spec: &OptimizerSpec) -> (P, AdamState) {
    let n = grad.len();
    if state.m.is_empty() {
        state.m = vec![0.0; n];
        state.v = vec![0.0; n];
        state.t = 0;
    }
    assert_eq!(state.m.len(), n, "Adam state shape");
    state.t += 1;
    let bc1 = 1.0 - spec.beta1.powi(state.t as i32);
    let bc2 = 1.0 - spec.beta2.powi(state.t as i32);
    let mut flat = model.to_flat();
    for i in 0..n {
        let g = grad[i];
        state.m[i] = spec.beta1 * state.m[i] + (1.0 - spec.beta1) * g;
        state.v[i] = spec.beta2 * state.v[i] + (1.0 - spec.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        flat[i] -= spec.lr * mhat / (vhat.sqrt() + spec.eps);
    }
    let mut out = model.clone();
    out.set_flat(&flat);
    (out, state)
}

/// Source of loss and gradient for the training loop.
pub trait Objective<P> {
    /// Called once at the start of every step, before any evaluation.
    fn prepare(&mut self, _step: usize) -> Result<()> {
        Ok(())
    }
    fn loss(&self, model: &P) -> Result<f64>;
    fn loss_grad(&self, model: &P) -> Result<(f64, Vec<f64>)>;
}

/// Closed-form population loss against a memoryless teacher.
#[derive(Debug, Clone)]
pub struct PopulationObjective {
    pub teacher: MemorylessTeacher,
    pub k: usize,
}

impl Objective<LinearRNN> for PopulationObjective {
    fn loss(&self, model: &LinearRNN) -> Result<f64> {
        population_loss(model, &self.teacher, self.k)
    }

    fn loss_grad(&self, model: &LinearRNN) -> Result<(f64, Vec<f64>)> {
        population_loss_grad(model, &self.teacher, self.k).map(|(l, g)| (l, g.to_flat()))
    }
}

/// Models that can be trained on labelled sequence data.
pub trait DatasetLoss: Parameters {
    fn dataset_loss(&self, data: &LabeledDataset) -> Result<f64>;
    fn dataset_loss_grad(&self, data: &LabeledDataset) -> Result<(f64, Vec<f64>)>;
}

impl DatasetLoss for LinearRNN {
    fn dataset_loss(&self, data: &LabeledDataset) -> Result<f64> {
        empirical_loss_estimate(self, data).map(|e| e.mean)
    }

    fn dataset_loss_grad(&self, data: &LabeledDataset) -> Result<(f64, Vec<f64>)> {
        empirical_loss_grad(self, data).map(|(l, g)| (l, g.to_flat()))
    }
}

/// Fixed dataset, full-batch.
#[derive(Debug, Clone)]
pub struct DatasetObjective(pub LabeledDataset);

impl<P: DatasetLoss> Objective<P> for DatasetObjective {
    fn loss(&self, model: &P) -> Result<f64> {
        model.dataset_loss(&self.0)
    }
    fn loss_grad(&self, model: &P) -> Result<(f64, Vec<f64>)> {
        model.dataset_loss_grad(&self.0)
    }
}

/// Fresh minibatches drawn from a teacher every step.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pub teacher: Teacher,
    pub k: usize,
    pub batch: usize,
    /// `(L_adv, corruption)` for adversarial data; requires a memoryless teacher.
    pub adversarial: Option<(usize, Corruption)>,
    pub seed: u64,
}

impl BatchSampler {
    /// Batch for `step`. Adversarial batches split `batch` evenly over the
    /// lengths `k..=L_adv` (rounding up).
    pub fn draw(&self, step: usize) -> Result<LabeledDataset> {
        let mut g = rng::stream(self.seed, rng::substream(STREAM_BATCH, step as u64));
        let groups = match (&self.adversarial, &self.teacher) {
            (None, t) => vec![honest_group(t, self.batch, self.k, &mut g)],
            (Some((l_adv, corruption)), Teacher::Memoryless(t)) => {
                if *l_adv <= self.k {
                    return Err(Error::Precondition(format!("L_adv ({l_adv}) must exceed k ({})", self.k)));
                }
                let per = self.batch.div_ceil(l_adv - self.k + 1);
                adversarial_groups(t, self.k, *l_adv, per, *corruption, &mut g)
            }
            (Some((l_adv, corruption)), t) => {
                if *l_adv <= self.k {
                    return Err(Error::Precondition(format!("L_adv ({l_adv}) must exceed k ({})", self.k)));
                }
                if *corruption != Corruption::CyclicEcho {
                    return Err(Error::Precondition("teachers with memory only support the cyclic-echo corruption".into()));
                }
                let per = self.batch.div_ceil(l_adv - self.k + 1);
                echo_groups(t, self.k, *l_adv, per, &mut g)
            }
        };
        Ok(LabeledDataset {
            groups,
            provenance: Provenance {
                teacher: self.teacher.to_string(),
                adversarial: self.adversarial.is_some(),
                seed: self.seed,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct SampledObjective {
    sampler: BatchSampler,
    current: Option<LabeledDataset>,
}

impl SampledObjective {
    pub fn new(sampler: BatchSampler) -> Self {
        SampledObjective { sampler, current: None }
    }

    fn batch(&self) -> Result<&LabeledDataset> {
        self.current
            .as_ref()
            .ok_or_else(|| Error::Precondition("sampled objective used before prepare()".into()))
    }
}

impl<P: DatasetLoss> Objective<P> for SampledObjective {
    fn prepare(&mut self, step: usize) -> Result<()> {
        self.current = Some(self.sampler.draw(step)?);
        Ok(())
    }
    fn loss(&self, model: &P) -> Result<f64> {
        model.dataset_loss(self.batch()?)
    }
    fn loss_grad(&self, model: &P) -> Result<(f64, Vec<f64>)> {
        model.dataset_loss_grad(self.batch()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub stats: Option<WeightStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Loss reached `stop_tol`.
    Converged,
    MaxSteps,
    /// Backtracking found no descent step (gradient below roundoff).
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord<P> {
    pub records: Vec<StepRecord>,
    pub final_model: P,
    pub final_loss: f64,
    /// Optimiser updates applied.
    pub steps: usize,
    pub stop: StopReason,
}

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_MAX_HALVINGS: usize = 60;

/// Runs the optimiser until the loss reaches `stop_tol` or `max_steps`
/// updates have been applied, recording every `record_every` steps plus the
/// first and last.
pub fn train<P: Parameters, O: Objective<P>>(
    model0: P,
    objective: &mut O,
    spec: &OptimizerSpec,
    record_every: usize,
) -> Result<TrainRecord<P>> {
    spec.validate()?;
    let record_every = record_every.max(1);
    let mut model = model0;
    let mut records: Vec<StepRecord> = Vec::new();
    let mut adam = AdamState::default();

    let mut step = 0;
    loop {
        objective.prepare(step)?;
        let (loss, grad) = objective.loss_grad(&model)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS || !model.is_finite() {
            return Err(Error::Diverged {
                step,
                loss,
                last: records.last().copied(),
                trajectory: records,
            });
        }
        let rec = StepRecord {
            step,
            loss,
            stats: model.weight_stats(),
        };
        let done = if loss <= spec.stop_tol {
            Some(StopReason::Converged)
        } else if step >= spec.max_steps {
            Some(StopReason::MaxSteps)
        } else {
            None
        };
        if step % record_every == 0 || done.is_some() {
            records.push(rec);
        }
        if let Some(stop) = done {
            return Ok(TrainRecord {
                records,
                final_model: model,
                final_loss: loss,
                steps: step,
                stop,
            });
        }

        model = match spec.kind {
            OptimizerKind::Gd => gd_step(&model, &grad, spec.lr),
            OptimizerKind::Adam => {
                let (next, state) = adam_step(&model, &grad, std::mem::take(&mut adam), spec);
                adam = state;
                next
            }
            OptimizerKind::GdBacktracking => {
                let gsq: f64 = grad.iter().map(|g| g * g).sum();
                let mut eta = spec.lr;
                let mut accepted = None;
                for _ in 0..ARMIJO_MAX_HALVINGS {
                    let trial = gd_step(&model, &grad, eta);
                    let tl = objective.loss(&trial)?;
                    if tl.is_finite() && tl <= loss - ARMIJO_C * eta * gsq {
                        accepted = Some(trial);
                        break;
                    }
                    eta *= ARMIJO_SHRINK;
                }
                match accepted {
                    Some(next) => next,
                    None => {
                        if records.last().map(|r| r.step) != Some(step) {
                            records.push(rec);
                        }
                        return Ok(TrainRecord {
                            records,
                            final_model: model,
                            final_loss: loss,
                            steps: step,
                            stop: StopReason::Stalled,
                        });
                    }
                }
            }
        };
        step += 1;
    }
}

/// Period-`d` cyclic shift network fitting a memoryless teacher exactly on
/// lengths up to `k ≤ d`, while repeating the teacher gain at every lag that
/// is a multiple of `d`.
///
/// `w` is `1×1` for SISO; for MIMO it must be `w*·e₁e₁ᵀ` and `B`, `C` are the
/// SISO vectors padded with zero columns/rows.
pub fn make_cyclic_bad(d: usize, k: usize, w: &Matrix) -> Result<LinearRNN> {
    if k < 2 || d < k {
        return Err(Error::Precondition(format!("cyclic construction needs d >= k >= 2 (d={d}, k={k})")));
    }
    let (m, n) = w.shape();
    let w_star = w[(0, 0)];
    let padded_ok = w.as_slice().iter().enumerate().all(|(i, &v)| i == 0 || v == 0.0);
    if w_star == 0.0 || !padded_ok {
        return Err(Error::Precondition(
            "cyclic construction needs W* = w*·e1·e1ᵀ with w* != 0".into(),
        ));
    }
    let mut a = Matrix::zeros(d, d);
    a[(0, d - 1)] = 1.0;
    for i in 1..d {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = Matrix::zeros(d, n);
    b[(0, 0)] = 1.0;
    let mut c = Matrix::zeros(m, d);
    c[(0, 0)] = w_star;
    LinearRNN::new(a, b, c)
}

/// Symmetric network with `C = Bᵀ = (√w*, 0, …, 0, √δ)` and
/// `A = diag(0, …, 0, 2)`: population loss `½δ²(4ᵏ − 1)/3`, impulse response
/// `w*·𝟙[j=0] + 2ʲδ`.
pub fn make_diag_bad(k: usize, d: usize, w_star: f64, delta: f64) -> Result<LinearRNN> {
    if k < 2 || d < k {
        return Err(Error::Precondition(format!("diagonal construction needs d >= k >= 2 (d={d}, k={k})")));
    }
    if !(w_star > 0.0) || !(delta > 0.0) {
        return Err(Error::Precondition("diagonal construction needs w* > 0 and delta > 0".into()));
    }
    let mut diag = vec![0.0; d];
    diag[d - 1] = 2.0;
    let mut v = vec![0.0; d];
    v[0] = w_star.sqrt();
    v[d - 1] = delta.sqrt();
    LinearRNN::new(Matrix::from_diag(&diag), Matrix::column(&v), Matrix::row(&v))
}

/// Closed-form population loss of [`make_diag_bad`] at training length `k`.
pub fn diag_bad_loss(k: usize, delta: f64) -> f64 {
    0.5 * delta * delta * (4f64.powi(k as i32) - 1.0) / 3.0
}
