//! Extrapolation measurements: length-wise squared error, the lag-gap check,
//! the Cayley–Hamilton certificate, the slackness profile and symmetry drift.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::datagen::Teacher;
use crate::error::{Error, Result};
use crate::linalg::{char_poly, sym_eig, CHAR_POLY_MAX_DIM};
use crate::model::{LinearRNN, SequenceModel};
use crate::objective::{LossEstimate, MemorylessTeacher, Welford};
use crate::rng;

pub const DEFAULT_TOL: f64 = 1e-5;
/// Relative asymmetry above which the slackness profile is refused.
pub const SLACKNESS_ASYMMETRY_TOL: f64 = 1e-6;

const MC_SHARD: usize = 4096;
const STREAM_MC: u64 = 0x100;

/// Default number of lags checked: `20·d`.
pub fn default_horizon(d: usize) -> usize {
    20 * d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MseMode {
    /// Exact, from impulse responses. Linear students only.
    ClosedForm,
    MonteCarlo { n_mc: usize, seed: u64 },
}

/// Expected (unhalved) squared error at one length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub mse: f64,
    /// Zero in closed form.
    pub std_err: f64,
}

fn check_lengths(lengths: &[usize]) -> Result<()> {
    if lengths.contains(&0) {
        return Err(Error::Precondition("evaluation lengths must be >= 1".into()));
    }
    Ok(())
}

fn check_io(student: &dyn SequenceModel, teacher: &Teacher) -> Result<()> {
    if (student.input_dim(), student.output_dim()) != (teacher.input_dim(), teacher.output_dim()) {
        return Err(Error::dim(
            "extrapolation_mse",
            format!("n={}, m={}", teacher.input_dim(), teacher.output_dim()),
            format!("n={}, m={}", student.input_dim(), student.output_dim()),
        ));
    }
    Ok(())
}

/// `MSE(ℓ) = Σ_{j<ℓ} ‖C Aʲ B − C*(A*)ʲB*‖_F²` for each requested length.
pub fn closed_form_mse(student: &LinearRNN, teacher: &Teacher, lengths: &[usize]) -> Result<BTreeMap<usize, f64>> {
    check_lengths(lengths)?;
    check_io(student, teacher)?;
    let Some(&max_len) = lengths.iter().max() else {
        return Ok(BTreeMap::new());
    };
    let hs = student.impulse_response(max_len - 1);
    let ht = teacher.impulse_response(max_len - 1);
    let mut cumulative = Vec::with_capacity(max_len);
    let mut acc = 0.0;
    for (s, t) in hs.iter().zip(&ht) {
        acc += (s - t).norm_sq();
        cumulative.push(acc);
    }
    Ok(lengths.iter().map(|&l| (l, cumulative[l - 1])).collect())
}

/// Monte-Carlo estimate over `n_mc` standard-normal sequences per length.
///
/// Sequences are drawn in fixed shards, each from its own stream, and
/// reduced in shard order, so the result does not depend on thread count.
pub fn monte_carlo_mse<S: SequenceModel + Sync + ?Sized>(
    student: &S,
    teacher: &Teacher,
    lengths: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<BTreeMap<usize, MseEstimate>> {
    check_lengths(lengths)?;
    if n_mc < 2 {
        return Err(Error::Precondition("Monte-Carlo evaluation needs n_mc >= 2".into()));
    }
    if (student.input_dim(), student.output_dim()) != (teacher.input_dim(), teacher.output_dim()) {
        return Err(Error::dim(
            "monte_carlo_mse",
            format!("n={}, m={}", teacher.input_dim(), teacher.output_dim()),
            format!("n={}, m={}", student.input_dim(), student.output_dim()),
        ));
    }
    let n = teacher.input_dim();
    let shards = n_mc.div_ceil(MC_SHARD);
    let mut out = BTreeMap::new();
    for &len in lengths {
        let per_shard: Vec<Vec<f64>> = (0..shards)
            .into_par_iter()
            .map(|s| {
                let count = MC_SHARD.min(n_mc - s * MC_SHARD);
                let mut g = rng::stream(seed, rng::substream(STREAM_MC + len as u64, s as u64));
                let mut x = vec![0.0; len * n];
                (0..count)
                    .map(|_| {
                        rng::fill_normal(&mut g, &mut x);
                        let yhat = student.predict(&x);
                        let y = teacher.label_one(&x);
                        yhat.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum()
                    })
                    .collect()
            })
            .collect();
        let mut w = Welford::default();
        per_shard.iter().flatten().for_each(|&e| w.push(e));
        let LossEstimate { mean, std_err, .. } = w.estimate();
        out.insert(len, MseEstimate { mse: mean, std_err });
    }
    Ok(out)
}

/// Closed form for linear students; nonlinear students require Monte-Carlo.
pub fn extrapolation_mse<S: SequenceModel + Sync + ?Sized>(
    student: &S,
    teacher: &Teacher,
    lengths: &[usize],
    mode: MseMode,
) -> Result<BTreeMap<usize, MseEstimate>> {
    match mode {
        MseMode::ClosedForm => {
            let lin = student.as_linear().ok_or(Error::Mode)?;
            Ok(closed_form_mse(lin, teacher, lengths)?
                .into_iter()
                .map(|(l, mse)| (l, MseEstimate { mse, std_err: 0.0 }))
                .collect())
        }
        MseMode::MonteCarlo { n_mc, seed } => monte_carlo_mse(student, teacher, lengths, n_mc, seed),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationCheck {
    /// `‖CB − W*‖_F`.
    pub cb_gap: f64,
    /// `‖C Aʲ B‖_F` for `j = 1..=J`.
    pub power_gaps: Vec<f64>,
    pub max_power_gap: f64,
    /// Lag attaining `max_power_gap`.
    pub worst_lag: usize,
    pub tol: f64,
    pub extrapolates: bool,
}

/// Finite-horizon version of the memoryless extrapolation conditions.
pub fn check_extrapolation(model: &LinearRNN, teacher: &MemorylessTeacher, horizon: usize, tol: f64) -> Result<ExtrapolationCheck> {
    if horizon == 0 {
        return Err(Error::Precondition("extrapolation check needs J >= 1".into()));
    }
    if teacher.w().shape() != (model.output_dim(), model.input_dim()) {
        return Err(Error::dim(
            "check_extrapolation",
            format!("W* {}x{}", model.output_dim(), model.input_dim()),
            format!("W* {}x{}", teacher.w().rows(), teacher.w().cols()),
        ));
    }
    let cb_gap = (&(model.c() * model.b()) - teacher.w()).norm();
    let mut u = model.b().clone();
    let mut power_gaps = Vec::with_capacity(horizon);
    let (mut max_power_gap, mut worst_lag) = (0.0f64, 1);
    for j in 1..=horizon {
        u = model.a() * &u;
        let g = (model.c() * &u).norm();
        if g > max_power_gap || !g.is_finite() {
            max_power_gap = g;
            worst_lag = j;
        }
        power_gaps.push(g);
    }
    let extrapolates = cb_gap <= tol && max_power_gap <= tol;
    Ok(ExtrapolationCheck {
        cb_gap,
        power_gaps,
        max_power_gap,
        worst_lag,
        tol,
        extrapolates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChCertificate {
    /// `‖C Aʲ B‖_F` for `j = 1..=d`.
    pub gaps: Vec<f64>,
    /// `‖A^d + Σ ρᵢ Aⁱ‖_F`.
    pub residual: f64,
    /// `Σ |ρᵢ|`: growth factor of error per propagated lag.
    pub rho_abs_sum: f64,
    pub tol: f64,
    /// Every lag `1..=d` is within `tol`, so all higher lags vanish up to
    /// the propagated error.
    pub clean: bool,
}

pub fn ch_certificate(model: &LinearRNN, tol: f64) -> Result<ChCertificate> {
    let d = model.state_dim();
    if d > CHAR_POLY_MAX_DIM {
        return Err(Error::SizeLimit {
            op: "ch_certificate",
            size: d,
            limit: CHAR_POLY_MAX_DIM,
        });
    }
    let cp = char_poly(model.a())?;
    let mut u = model.b().clone();
    let mut gaps = Vec::with_capacity(d);
    for _ in 0..d {
        u = model.a() * &u;
        gaps.push((model.c() * &u).norm());
    }
    let clean = gaps.iter().all(|&g| g <= tol);
    Ok(ChCertificate {
        gaps,
        residual: cp.residual,
        rho_abs_sum: cp.abs_sum(),
        tol,
        clean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackEntry {
    /// Eigenvalue index `s` (descending `|λ|`).
    pub index: usize,
    /// Input column `i`; always 0 for SISO.
    pub input: usize,
    pub lambda: f64,
    /// `(VᵀB)_{s,i}`.
    pub u: f64,
    /// `|λ_s · u_{s,i}|`.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlacknessProfile {
    pub entries: Vec<SlackEntry>,
    pub max_product: f64,
    pub max_abs_lambda: f64,
    /// `‖VᵀB‖_F`.
    pub u_norm: f64,
}

impl SlacknessProfile {
    /// `max |λu| ≤ rel·(1 + max|λ|)·(1 + ‖u‖)`.
    pub fn within(&self, rel: f64) -> bool {
        self.max_product <= rel * (1.0 + self.max_abs_lambda) * (1.0 + self.u_norm)
    }
}

pub fn slackness_profile(model: &LinearRNN) -> Result<SlacknessProfile> {
    let a = model.a();
    let asymmetry = a.asymmetry();
    if asymmetry > SLACKNESS_ASYMMETRY_TOL * (1.0 + a.norm()) {
        return Err(Error::Asymmetric {
            op: "slackness_profile",
            asymmetry,
        });
    }
    let eig = sym_eig(a)?;
    let u = eig.eigenvectors.transpose_mul(model.b());
    let mut entries = Vec::with_capacity(u.rows() * u.cols());
    for s in 0..u.rows() {
        let lambda = eig.eigenvalues[s];
        for i in 0..u.cols() {
            let us = u[(s, i)];
            entries.push(SlackEntry {
                index: s,
                input: i,
                lambda,
                u: us,
                product: (lambda * us).abs(),
            });
        }
    }
    Ok(SlacknessProfile {
        max_product: entries.iter().map(|e| e.product).fold(0.0, f64::max),
        max_abs_lambda: eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max),
        u_norm: u.norm(),
        entries,
    })
}

/// `(‖A − Aᵀ‖_F, ‖B − Cᵀ‖_F)`; the second is `None` when `n ≠ m`.
pub fn symmetry_drift(model: &LinearRNN) -> (f64, Option<f64>) {
    let bc = (model.input_dim() == model.output_dim()).then(|| (model.b() - &model.c().transpose()).norm());
    (model.a().asymmetry(), bc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub mse_by_length: BTreeMap<usize, f64>,
    pub cb_gap: f64,
    pub max_power_gap: f64,
    /// `None` when `d` exceeds the characteristic-polynomial guard.
    pub ch_residual: Option<f64>,
    /// `None` when `A` is too asymmetric for the profile.
    pub slackness: Option<SlacknessProfile>,
    pub symmetry: (f64, Option<f64>),
    pub horizon: usize,
    pub tol: f64,
    pub extrapolates: bool,
}

/// Everything above for a linear student of a memoryless teacher.
/// `horizon` defaults to `20·d`.
pub fn diagnose(
    model: &LinearRNN,
    teacher: &MemorylessTeacher,
    lengths: &[usize],
    horizon: Option<usize>,
    tol: f64,
) -> Result<DiagnosticsReport> {
    let horizon = horizon.unwrap_or_else(|| default_horizon(model.state_dim()));
    let check = check_extrapolation(model, teacher, horizon, tol)?;
    let mse_by_length = closed_form_mse(model, &Teacher::Memoryless(teacher.clone()), lengths)?;
    let ch_residual = if model.state_dim() <= CHAR_POLY_MAX_DIM {
        Some(char_poly(model.a())?.residual)
    } else {
        None
    };
    let slackness = match slackness_profile(model) {
        Ok(p) => Some(p),
        Err(Error::Asymmetric { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(DiagnosticsReport {
        mse_by_length,
        cb_gap: check.cb_gap,
        max_power_gap: check.max_power_gap,
        ch_residual,
        slackness,
        symmetry: symmetry_drift(model),
        horizon,
        tol,
        extrapolates: check.extrapolates,
    })
}

/// `‖C Aʲ B − C*(A*)ʲB*‖_F` at a single lag.
pub fn lag_gap(model: &LinearRNN, teacher: &Teacher, lag: usize) -> f64 {
    let hs = model.impulse_response(lag).pop().expect("non-empty");
    let ht = teacher.impulse_response(lag).pop().expect("non-empty");
    (&hs - &ht).norm()
}
