//! Subcommand bodies. Each one trains, evaluates and writes its CSVs.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use extrapol_core::datagen::{make_honest, Corruption, Teacher};
use extrapol_core::diagnostics::{
    check_extrapolation, closed_form_mse, diagnose, monte_carlo_mse, slackness_profile, DEFAULT_TOL,
};
use extrapol_core::linalg::Matrix;
use extrapol_core::model::LinearRNN;
use extrapol_core::nonlinear::{CellKind, GatedCell};
use extrapol_core::objective::{population_grad, population_loss, MemorylessTeacher};
use extrapol_core::rng::{self, Rng};
use extrapol_core::training::{
    diag_bad_loss, init, make_cyclic_bad, make_diag_bad, train, BatchSampler, InitSpec, OptimizerSpec, Parameters,
    PopulationObjective, SampledObjective, StepRecord, TrainRecord,
};
use extrapol_core::Error;
use rayon::prelude::*;

use crate::config::{ConfigError, Experiment, ExperimentSpec, InitKind, ModelKind, OptimizerName};
use crate::csv::{Cell, Table};

const STREAM_ALPHA: u64 = 20;
const STREAM_GRADCHECK: u64 = 21;
const DIAG_BAD_DELTA: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{0} (partial results written)")]
    Diverged(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Diverged(_) => 3,
            RunError::Io(_) => 4,
            RunError::Core(_) | RunError::Check(_) => 1,
        }
    }
}

/// Files written plus human-readable summary lines.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

pub fn run(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    match spec.experiment {
        Experiment::Fig1 | Experiment::Fig2 => extrapolation_grid(spec),
        Experiment::Fig3 => fig3(spec),
        Experiment::Fig4 => fig4(spec),
        Experiment::SweepDstar => sweep_dstar(spec),
        Experiment::Train => train_one(spec),
        Experiment::Certify => certify(spec),
        Experiment::Gradcheck => gradcheck(spec),
        Experiment::BadSolutions => bad_solutions(spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Honest,
    Adversarial,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::Honest => "honest",
            Regime::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    model: ModelKind,
    regime: Regime,
    dstar: Option<usize>,
}

impl Job {
    fn label(&self) -> String {
        match self.dstar {
            Some(ds) => format!("model={} regime={} dstar={ds}", self.model, self.regime.name()),
            None => format!("model={} regime={}", self.model, self.regime.name()),
        }
    }
}

struct JobResult {
    mse: BTreeMap<usize, f64>,
    records: Vec<StepRecord>,
    final_loss: f64,
    steps: usize,
}

fn teacher(spec: &ExperimentSpec, dstar: Option<usize>) -> Result<Teacher, Error> {
    match dstar {
        Some(ds) => Teacher::random_lds(ds, 1, 1, spec.k, spec.seed.wrapping_mul(1000) + 500 + ds as u64),
        None => Teacher::memoryless(spec.wstar),
    }
}

fn optimizer(spec: &ExperimentSpec) -> OptimizerSpec {
    match spec.optimizer {
        OptimizerName::Gd => OptimizerSpec::gd(spec.lr, spec.steps, spec.stop_tol),
        OptimizerName::Backtracking => OptimizerSpec::backtracking(spec.lr, spec.steps, spec.stop_tol),
        OptimizerName::Adam => OptimizerSpec::adam(spec.lr, spec.steps, spec.stop_tol),
    }
}

/// Identity-scaled inits draw `α ~ U[0, 1]` from a dedicated stream.
fn identity_alpha(seed: u64) -> f64 {
    rng::uniform(&mut rng::stream(seed, STREAM_ALPHA))
}

fn linear_init(spec: &ExperimentSpec) -> Result<LinearRNN, Error> {
    let init_spec = match spec.init {
        InitKind::Xavier => InitSpec::xavier(spec.seed),
        InitKind::Symmetric => InitSpec::symmetric(spec.sigma2, spec.seed),
        InitKind::Identity => InitSpec::identity_scaled(identity_alpha(spec.seed), spec.sigma2, spec.seed),
    };
    init(spec.d, 1, 1, &init_spec)
}

fn sampled_objective(spec: &ExperimentSpec, teacher: &Teacher, regime: Regime) -> SampledObjective {
    SampledObjective::new(BatchSampler {
        teacher: teacher.clone(),
        k: spec.k,
        batch: spec.batch,
        adversarial: (regime == Regime::Adversarial).then_some((spec.l_adv, Corruption::CyclicEcho)),
        seed: spec.seed + 100,
    })
}

fn run_job(spec: &ExperimentSpec, job: Job) -> Result<JobResult, Error> {
    let teacher = teacher(spec, job.dstar)?;
    let mut obj = sampled_objective(spec, &teacher, job.regime);
    let opt = optimizer(spec);
    match job.model {
        ModelKind::Linear => {
            let rec = train(linear_init(spec)?, &mut obj, &opt, 100)?;
            let mse = closed_form_mse(&rec.final_model, &teacher, &spec.lengths)?;
            Ok(JobResult { mse, records: rec.records, final_loss: rec.final_loss, steps: rec.steps })
        }
        ModelKind::Gru | ModelKind::Lstm => {
            let kind = if job.model == ModelKind::Gru { CellKind::Gru } else { CellKind::Lstm };
            let cell = GatedCell::xavier(kind, spec.d, 1, 1, spec.seed)?;
            let rec = train(cell, &mut obj, &opt, 100)?;
            let est = monte_carlo_mse(&rec.final_model, &teacher, &spec.lengths, spec.n_mc, spec.seed + 200)?;
            let mse = est.into_iter().map(|(l, e)| (l, e.mse)).collect();
            Ok(JobResult { mse, records: rec.records, final_loss: rec.final_loss, steps: rec.steps })
        }
    }
}

fn run_jobs(spec: &ExperimentSpec, jobs: &[Job]) -> Vec<Result<JobResult, Error>> {
    jobs.par_iter().map(|&job| run_job(spec, job)).collect()
}

fn regimes(spec: &ExperimentSpec) -> Vec<Regime> {
    if spec.adversarial {
        vec![Regime::Honest, Regime::Adversarial]
    } else {
        vec![Regime::Honest]
    }
}

fn divergence_note(job: &Job, err: &Error) -> String {
    match err {
        Error::Diverged { step, loss, .. } => format!("{} diverged at step {step} (loss {loss:e})", job.label()),
        other => format!("{} failed: {other}", job.label()),
    }
}

/// Collects failures into table notes; fatal if any job failed.
fn finish(mut outcome: Outcome, failures: Vec<String>) -> Result<Outcome, RunError> {
    if failures.is_empty() {
        Ok(outcome)
    } else {
        outcome.summary.extend(failures.iter().cloned());
        Err(RunError::Diverged(failures.join("; ")))
    }
}

fn extrapolation_table(spec: &ExperimentSpec, jobs: &[Job], results: &[Result<JobResult, Error>]) -> (Table, Vec<String>) {
    let mut table = Table::new(spec, &["model", "regime", "length", "mse"]);
    let mut failures = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(r) => {
                for (&l, &v) in &r.mse {
                    table.row(&[job.model.to_string().as_str().into(), job.regime.name().into(), l.into(), v.into()]);
                }
            }
            Err(e) => {
                let note = divergence_note(job, e);
                table.note(&note);
                failures.push(note);
            }
        }
    }
    (table, failures)
}

fn max_beyond_k(spec: &ExperimentSpec, mse: &BTreeMap<usize, f64>) -> f64 {
    mse.range(spec.k + 1..).map(|(_, &v)| v).fold(f64::NAN, f64::max)
}

fn extrapolation_grid(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let dstar = spec.dstar.first().copied().filter(|_| spec.experiment == Experiment::Fig2);
    let jobs: Vec<Job> = spec
        .models
        .iter()
        .flat_map(|&model| regimes(spec).into_iter().map(move |regime| Job { model, regime, dstar }))
        .collect();
    let results = run_jobs(spec, &jobs);
    let (table, failures) = extrapolation_table(spec, &jobs, &results);
    let mut out = Outcome { files: vec![table.write(&spec.out, "extrapolation.csv")?], ..Default::default() };
    for (job, res) in jobs.iter().zip(&results) {
        if let Ok(r) = res {
            out.summary.push(format!(
                "{}: train loss {:.3e}, max MSE beyond k {:.3e}",
                job.label(),
                r.final_loss,
                max_beyond_k(spec, &r.mse)
            ));
        }
    }
    finish(out, failures)
}

fn sweep_dstar(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let jobs: Vec<Job> = spec
        .dstar
        .iter()
        .flat_map(|&ds| spec.models.iter().map(move |&model| Job { model, regime: Regime::Honest, dstar: Some(ds) }))
        .collect();
    let results = run_jobs(spec, &jobs);
    let mut table = Table::new(spec, &["model", "dstar", "mean_extrap_mse"]);
    let mut out = Outcome::default();
    let mut failures = Vec::new();
    for (job, res) in jobs.iter().zip(&results) {
        match res {
            Ok(r) => {
                let mean = r.mse.values().sum::<f64>() / r.mse.len() as f64;
                let ds = job.dstar.expect("sweep jobs have a teacher dimension");
                table.row(&[job.model.to_string().as_str().into(), ds.into(), mean.into()]);
                out.summary.push(format!("{}: mean MSE {mean:.3e}", job.label()));
            }
            Err(e) => {
                let note = divergence_note(job, e);
                table.note(&note);
                failures.push(note);
            }
        }
    }
    out.files.push(table.write(&spec.out, "dstar.csv")?);
    finish(out, failures)
}

fn dynamics_table(spec: &ExperimentSpec, records: &[StepRecord]) -> Table {
    let mut table = Table::new(spec, &["step", "loss", "norm_A", "norm_B", "norm_C", "asym_A", "asym_BC"]);
    for r in records {
        let s = r.stats;
        let f = |g: fn(&extrapol_core::training::WeightStats) -> f64| s.as_ref().map_or(f64::NAN, g);
        table.row(&[
            r.step.into(),
            r.loss.into(),
            f(|s| s.norm_a).into(),
            f(|s| s.norm_b).into(),
            f(|s| s.norm_c).into(),
            f(|s| s.asym_a).into(),
            f(|s| s.asym_bc).into(),
        ]);
    }
    table
}

fn train_one(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let regime = if spec.adversarial { Regime::Adversarial } else { Regime::Honest };
    let job = Job { model: spec.models[0], regime, dstar: spec.dstar.first().copied() };
    let results = run_jobs(spec, &[job]);
    let (table, failures) = extrapolation_table(spec, &[job], &results);
    let mut out = Outcome { files: vec![table.write(&spec.out, "extrapolation.csv")?], ..Default::default() };
    let records = match &results[0] {
        Ok(r) => {
            out.summary.push(format!(
                "{}: {} steps, train loss {:.3e}, max MSE beyond k {:.3e}",
                job.label(),
                r.steps,
                r.final_loss,
                max_beyond_k(spec, &r.mse)
            ));
            r.records.clone()
        }
        Err(Error::Diverged { trajectory, .. }) => trajectory.clone(),
        Err(_) => Vec::new(),
    };
    let mut dyn_table = dynamics_table(spec, &records);
    for f in &failures {
        dyn_table.note(f);
    }
    out.files.push(dyn_table.write(&spec.out, "dynamics.csv")?);
    finish(out, failures)
}

fn population_run(spec: &ExperimentSpec, record_every: usize) -> Result<TrainRecord<LinearRNN>, Error> {
    let mut obj = PopulationObjective { teacher: MemorylessTeacher::siso(spec.wstar)?, k: spec.k };
    train(linear_init(spec)?, &mut obj, &optimizer(spec), record_every)
}

fn fig3(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let rec = population_run(spec, 1000)?;
    let prof = slackness_profile(&rec.final_model)?;
    let mut table = Table::new(spec, &["index", "lambda", "u", "product"]);
    for e in &prof.entries {
        table.row(&[e.index.into(), e.lambda.into(), e.u.into(), e.product.into()]);
    }
    let t = MemorylessTeacher::siso(spec.wstar)?;
    let check = check_extrapolation(&rec.final_model, &t, 200, DEFAULT_TOL)?;
    Ok(Outcome {
        files: vec![table.write(&spec.out, "slackness.csv")?],
        summary: vec![
            format!("{} steps ({:?}), final loss {:.3e}", rec.steps, rec.stop, rec.final_loss),
            format!("max |λ·u| {:.3e}, max |λ| {:.3e}, ‖u‖ {:.3e}", prof.max_product, prof.max_abs_lambda, prof.u_norm),
            format!("extrapolates (J = 200, tol {DEFAULT_TOL:e}): {}", yes_no(check.extrapolates)),
        ],
    })
}

fn fig4(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let alpha = identity_alpha(spec.seed);
    match population_run(spec, 1) {
        Ok(rec) => {
            let table = dynamics_table(spec, &rec.records);
            Ok(Outcome {
                files: vec![table.write(&spec.out, "dynamics.csv")?],
                summary: vec![format!(
                    "alpha {alpha:.6}, {} steps ({:?}), final loss {:.3e}",
                    rec.steps, rec.stop, rec.final_loss
                )],
            })
        }
        Err(Error::Diverged { step, loss, trajectory, .. }) => {
            let mut table = dynamics_table(spec, &trajectory);
            let note = format!("diverged at step {step} (loss {loss:e})");
            table.note(&note);
            table.write(&spec.out, "dynamics.csv")?;
            Err(RunError::Diverged(note))
        }
        Err(e) => Err(e.into()),
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn pass_fail(b: bool) -> &'static str {
    if b {
        "PASS"
    } else {
        "FAIL"
    }
}

fn certify(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let rec = population_run(spec, 1000)?;
    let t = MemorylessTeacher::siso(spec.wstar)?;
    let report = diagnose(&rec.final_model, &t, &spec.lengths, None, DEFAULT_TOL)?;
    let mut table = Table::new(spec, &["model", "regime", "length", "mse"]);
    for (&l, &v) in &report.mse_by_length {
        table.row(&[Cell::Text("linear"), Cell::Text("population"), l.into(), v.into()]);
    }
    let mut summary = vec![
        format!("{} steps ({:?}), final loss {:.3e}", rec.steps, rec.stop, rec.final_loss),
        format!("|CB - w*| = {:.3e}", report.cb_gap),
        format!("max_(1<=j<={}) |CA^jB| = {:.3e}", report.horizon, report.max_power_gap),
    ];
    if let Some(r) = report.ch_residual {
        summary.push(format!("characteristic-polynomial residual {r:.3e}"));
    }
    if let Some(p) = &report.slackness {
        summary.push(format!("max |λ·u| {:.3e}", p.max_product));
    }
    summary.push(format!("symmetry drift |A-Aᵀ| {:.3e}", report.symmetry.0));
    summary.push(format!("{} extrapolates (tol {:e}): {}", pass_fail(report.extrapolates), report.tol, yes_no(report.extrapolates)));
    let out = Outcome { files: vec![table.write(&spec.out, "extrapolation.csv")?], summary };
    if report.extrapolates {
        Ok(out)
    } else {
        print_summary(&out);
        Err(RunError::Check("trained model does not extrapolate".into()))
    }
}

/// `‖analytic − fd‖_∞ / ‖fd‖_∞` with central differences of step `h`.
pub fn fd_rel_error<P: Parameters>(p: &P, analytic: &[f64], loss: impl Fn(&P) -> f64, h: f64) -> f64 {
    let base = p.to_flat();
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    let mut probe = p.clone();
    for i in 0..base.len() {
        let mut q = base.clone();
        q[i] = base[i] + h;
        probe.set_flat(&q);
        let fp = loss(&probe);
        q[i] = base[i] - h;
        probe.set_flat(&q);
        let fm = loss(&probe);
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs());
        scale = scale.max(fd.abs());
    }
    worst / scale.max(1e-12)
}

fn gauss(g: &mut Rng, r: usize, c: usize, sd: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| sd * rng::normal(g))
}

fn draw(g: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + (rng::uniform(g) * (hi - lo + 1) as f64) as usize
}

fn gradcheck(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let mut g = rng::stream(spec.seed, STREAM_GRADCHECK);
    let mut linear = 0.0f64;
    for i in 0..50 {
        let d = draw(&mut g, 1, 8);
        let k = draw(&mut g, 2, 8);
        let n = if i < 40 { 1 } else { draw(&mut g, 2, 3) };
        let s = 1.0 / (d as f64).sqrt();
        let model = LinearRNN::new(gauss(&mut g, d, d, 0.8 * s), gauss(&mut g, d, n, s), gauss(&mut g, n, d, s))?;
        let t = MemorylessTeacher::new(gauss(&mut g, n, n, 1.0))?;
        let grad = population_grad(&model, &t, k)?.to_flat();
        linear = linear.max(fd_rel_error(&model, &grad, |m| population_loss(m, &t, k).unwrap_or(f64::NAN), 1e-6));
    }
    let mut gated = BTreeMap::new();
    for kind in [CellKind::Gru, CellKind::Lstm] {
        let mut worst = 0.0f64;
        for i in 0..20 {
            let d = draw(&mut g, 1, 4);
            let len = draw(&mut g, 1, 5);
            let size = GatedCell::zeros(kind, d, 1, 1)?.num_params();
            let params: Vec<f64> = (0..size).map(|_| 0.5 * rng::normal(&mut g)).collect();
            let cell = GatedCell::from_flat(kind, d, 1, 1, params)?;
            let data = make_honest(&Teacher::memoryless(spec.wstar)?, 4, len, spec.seed * 100 + i)?;
            let (_, grad) = cell.cell_bptt(&data)?;
            worst = worst.max(fd_rel_error(&cell, &grad, |c| c.loss(&data).unwrap_or(f64::NAN), 1e-5));
        }
        gated.insert(kind.to_string(), worst);
    }
    let lin_ok = linear <= 1e-6;
    let gated_ok = gated.values().all(|&v| v <= 1e-5);
    let mut summary = vec![format!("{} linear population gradient: max rel error {linear:.2e} (<= 1e-6)", pass_fail(lin_ok))];
    for (k, v) in &gated {
        summary.push(format!("{} {k} BPTT gradient: max rel error {v:.2e} (<= 1e-5)", pass_fail(*v <= 1e-5)));
    }
    let out = Outcome { files: Vec::new(), summary };
    if lin_ok && gated_ok {
        Ok(out)
    } else {
        print_summary(&out);
        Err(RunError::Check("gradient mismatch".into()))
    }
}

fn bad_solutions(spec: &ExperimentSpec) -> Result<Outcome, RunError> {
    let (d, k, w) = (spec.d, spec.k, spec.wstar);
    let t = MemorylessTeacher::siso(w)?;
    let teacher = Teacher::Memoryless(t.clone());
    let horizon = 20 * d;
    let mut table = Table::new(spec, &["model", "regime", "length", "mse"]);
    let mut summary = Vec::new();
    let mut ok = true;

    let cyc = make_cyclic_bad(d, k, &Matrix::scalar(w))?;
    let loss = population_loss(&cyc, &t, k)?;
    let lag_d = cyc.impulse_response(d)[d][(0, 0)];
    let check = check_extrapolation(&cyc, &t, horizon, DEFAULT_TOL)?;
    let cyc_ok = loss <= 1e-15 && lag_d == w && !check.extrapolates;
    ok &= cyc_ok;
    summary.push(format!(
        "{} cyclic (d={d}, k={k}): loss {loss:.3e}, CA^dB = {lag_d}, extrapolates: {} (worst lag {})",
        pass_fail(cyc_ok),
        yes_no(check.extrapolates),
        check.worst_lag
    ));
    for (&l, &v) in &closed_form_mse(&cyc, &teacher, &spec.lengths)? {
        table.row(&[Cell::Text("cyclic"), Cell::Text("construction"), l.into(), v.into()]);
    }

    let diag = make_diag_bad(k, d, w, DIAG_BAD_DELTA)?;
    let loss = population_loss(&diag, &t, k)?;
    let expect = diag_bad_loss(k, DIAG_BAD_DELTA);
    let check = check_extrapolation(&diag, &t, horizon, DEFAULT_TOL)?;
    let diag_ok = (loss - expect).abs() <= 1e-12 && !check.extrapolates;
    ok &= diag_ok;
    summary.push(format!(
        "{} diagonal (d={d}, k={k}, delta={DIAG_BAD_DELTA:e}): loss {loss:.6e} (closed form {expect:.6e}), extrapolates: {}",
        pass_fail(diag_ok),
        yes_no(check.extrapolates)
    ));
    for (&l, &v) in &closed_form_mse(&diag, &teacher, &spec.lengths)? {
        table.row(&[Cell::Text("diagonal"), Cell::Text("construction"), l.into(), v.into()]);
    }

    let out = Outcome { files: vec![table.write(&spec.out, "extrapolation.csv")?], summary };
    if ok {
        Ok(out)
    } else {
        print_summary(&out);
        Err(RunError::Check("bad-solution construction mismatch".into()))
    }
}

pub fn print_summary(out: &Outcome) {
    for line in &out.summary {
        println!("{line}");
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
}
