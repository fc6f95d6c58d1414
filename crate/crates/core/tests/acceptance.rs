//! Acceptance suite. One line per criterion:
//!
//!     cargo test -p extrapol-core --test acceptance            # all
//!     cargo test -p extrapol-core --test acceptance -- 3 4     # a subset
//!
//! Criteria listed in `KNOWN_RED` are reported as FAIL without failing the
//! process; the README explains each one.

use std::process::ExitCode;
use std::time::Instant;

use extrapol_core::datagen::{make_honest, Corruption, Teacher};
use extrapol_core::diagnostics::{check_extrapolation, closed_form_mse, monte_carlo_mse, slackness_profile};
use extrapol_core::linalg::{char_poly, Matrix};
use extrapol_core::model::LinearRNN;
use extrapol_core::nonlinear::{CellKind, GatedCell};
use extrapol_core::objective::{empirical_loss_estimate, population_grad, population_loss, MemorylessTeacher};
use extrapol_core::rng::{self, Rng};
use extrapol_core::training::{
    init, make_cyclic_bad, make_diag_bad, train, BatchSampler, InitScheme, InitSpec, OptimizerSpec, Parameters,
    PopulationObjective, SampledObjective, WeightStats,
};

const KNOWN_RED: &[usize] = &[5, 8, 10, 11];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gauss(g: &mut Rng, r: usize, c: usize, sd: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| sd * rng::normal(g))
}

fn random_model(g: &mut Rng, d: usize, n: usize, m: usize) -> LinearRNN {
    let a = gauss(g, d, d, 0.8 / (d as f64).sqrt());
    let b = gauss(g, d, n, 1.0 / (d as f64).sqrt());
    let c = gauss(g, m, d, 1.0 / (d as f64).sqrt());
    LinearRNN::new(a, b, c).unwrap()
}

fn random_teacher(g: &mut Rng, n: usize, m: usize) -> MemorylessTeacher {
    loop {
        let w = gauss(g, m, n, 1.0);
        if w.norm() > 0.1 {
            return MemorylessTeacher::new(w).unwrap();
        }
    }
}

/// `‖analytic − fd‖_∞ / ‖fd‖_∞` with central differences.
fn fd_rel_error<P: Parameters>(p: &P, analytic: &[f64], loss: impl Fn(&P) -> f64, h: f64) -> f64 {
    let base = p.to_flat();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..base.len() {
        let mut q = base.clone();
        let mut probe = p.clone();
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

fn ac1() -> Outcome {
    let mut g = rng::stream(2024, 1);
    let mut worst = 0.0f64;
    let mut run = |siso: bool, g: &mut Rng| {
        let d = 1 + (rng::uniform(g) * 8.0) as usize;
        let k = 2 + (rng::uniform(g) * 7.0) as usize;
        let n = if siso { 1 } else { 2 + (rng::uniform(g) * 2.0) as usize };
        let model = random_model(g, d, n, n);
        let t = random_teacher(g, n, n);
        let grad = population_grad(&model, &t, k).unwrap().to_flat();
        let err = fd_rel_error(&model, &grad, |m| population_loss(m, &t, k).unwrap(), 1e-6);
        worst = worst.max(err);
    };
    for _ in 0..200 {
        run(true, &mut g);
    }
    for _ in 0..50 {
        run(false, &mut g);
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} over 200 SISO + 50 MIMO (<= 1e-6)"))
}

fn ac2() -> Outcome {
    let mut g = rng::stream(2024, 2);
    let mut worst_z = 0.0f64;
    for i in 0..20 {
        let d = 1 + (rng::uniform(&mut g) * 6.0) as usize;
        let k = 2 + (rng::uniform(&mut g) * 5.0) as usize;
        let model = random_model(&mut g, d, 1, 1);
        let t = random_teacher(&mut g, 1, 1);
        let pop = population_loss(&model, &t, k).unwrap();
        let data = make_honest(&Teacher::Memoryless(t), 200_000, k, 7000 + i).unwrap();
        let est = empirical_loss_estimate(&model, &data).unwrap();
        worst_z = worst_z.max((est.mean - pop).abs() / est.std_err);
    }
    outcome(worst_z <= 5.0, format!("max |empirical - population| = {worst_z:.2} standard errors over 20 models (<= 5)"))
}

fn ac3() -> Outcome {
    let delta = 1e-3;
    let m = make_diag_bad(3, 4, 1.0, delta).unwrap();
    let loss = population_loss(&m, &MemorylessTeacher::siso(1.0).unwrap(), 3).unwrap();
    let mse = closed_form_mse(&m, &Teacher::memoryless(1.0).unwrap(), &[10]).unwrap()[&10];
    let expect = delta * delta * (4f64.powi(10) - 1.0) / 3.0;
    let loss_err = (loss - 10.5e-6).abs();
    let mse_rel = (mse - expect).abs() / expect;
    outcome(
        loss_err <= 1e-12 && mse_rel <= 1e-9,
        format!("loss {loss:.6e} (|err| {loss_err:.1e}), MSE(10) {mse:.6e} (rel err {mse_rel:.1e})"),
    )
}

fn ac4() -> Outcome {
    let w = 1.7;
    let t = MemorylessTeacher::siso(w).unwrap();
    let mut ok = true;
    let mut worst_loss = 0.0f64;
    for d in 3..=8 {
        let m = make_cyclic_bad(d, d, &Matrix::scalar(w)).unwrap();
        let loss = population_loss(&m, &t, d).unwrap();
        worst_loss = worst_loss.max(loss);
        let lag_d = m.impulse_response(d)[d][(0, 0)];
        let check = check_extrapolation(&m, &t, 20 * d, 1e-5).unwrap();
        ok &= loss <= 1e-15 && lag_d == w && !check.extrapolates && check.worst_lag % d == 0;
    }
    outcome(ok, format!("d = 3..8: max loss {worst_loss:.1e}, lag-d entry = w* exactly, verdict no"))
}

fn ac5() -> Outcome {
    let t = MemorylessTeacher::siso(1.0).unwrap();
    let (mut a_ok, mut b_ok, mut c_ok, mut conv) = (true, true, true, true);
    let (mut drift, mut gap, mut slack_ratio, mut steps) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for seed in 0..5 {
        let spec = InitSpec {
            scheme: InitScheme::Symmetric { alpha: None, sign: 1.0 },
            sigma2: 0.01,
            seed,
        };
        let m0 = init(10, 1, 1, &spec).unwrap();
        let mut obj = PopulationObjective { teacher: t.clone(), k: 3 };
        let rec = train(m0, &mut obj, &OptimizerSpec::backtracking(1.0, 100_000, 1e-12), 1).unwrap();
        conv &= rec.final_loss <= 1e-10;
        steps = steps.max(rec.steps);
        for r in &rec.records {
            let s = r.stats.unwrap();
            let rel = s.asym_a.max(s.asym_bc) / (1.0 + s.norm_a + s.norm_b);
            drift = drift.max(rel);
        }
        a_ok &= drift <= 1e-10;
        let check = check_extrapolation(&rec.final_model, &t, 200, 1e-5).unwrap();
        b_ok &= check.extrapolates;
        gap = gap.max(check.cb_gap.max(check.max_power_gap));
        let prof = slackness_profile(&rec.final_model).unwrap();
        c_ok &= prof.within(1e-4);
        let bound = 1e-4 * (1.0 + prof.max_abs_lambda) * (1.0 + prof.u_norm);
        slack_ratio = slack_ratio.max(prof.max_product / bound);
    }
    let mark = |b: bool| if b { "ok" } else { "FAIL" };
    outcome(
        conv && a_ok && b_ok && c_ok,
        format!(
            "loss <= 1e-10 within {steps} steps: {}; (a) drift {drift:.1e}: {}; (b) max gap {gap:.2e}: {}; (c) max|u·λ| / bound = {slack_ratio:.1}: {}",
            mark(conv),
            mark(a_ok),
            mark(b_ok),
            mark(c_ok)
        ),
    )
}

fn ac6() -> Outcome {
    let t = MemorylessTeacher::siso(1.0).unwrap();
    let mut ok = true;
    let (mut gap, mut ch_ratio) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let m0 = init(4, 1, 1, &InitSpec::xavier(seed)).unwrap();
        let mut obj = PopulationObjective { teacher: t.clone(), k: 6 };
        let rec = train(m0, &mut obj, &OptimizerSpec::backtracking(0.5, 1_000_000, 1e-14), 1000).unwrap();
        let m = &rec.final_model;
        let check = check_extrapolation(m, &t, 200, 1e-6).unwrap();
        let cp = char_poly(m.a()).unwrap();
        let limit = 1e-8 * (1.0 + m.a().norm()).powi(4);
        gap = gap.max(check.max_power_gap);
        ch_ratio = ch_ratio.max(cp.residual / limit);
        ok &= rec.final_loss <= 1e-12 && check.max_power_gap <= 1e-6 && cp.residual <= limit;
    }
    outcome(ok, format!("5 Xavier seeds: max ‖CAʲB‖ (j <= 200) {gap:.2e} (<= 1e-6), residual/limit {ch_ratio:.1e}"))
}

const LENGTHS_1_15: [usize; 15] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15];

fn sampled_linear(teacher: &Teacher, adversarial: Option<(usize, Corruption)>, d: usize, steps: usize, seed: u64) -> LinearRNN {
    let m0 = init(d, 1, 1, &InitSpec::xavier(seed)).unwrap();
    let mut obj = SampledObjective::new(BatchSampler {
        teacher: teacher.clone(),
        k: 5,
        batch: 128,
        adversarial,
        seed: seed + 100,
    });
    train(m0, &mut obj, &OptimizerSpec::adam(1e-3, steps, 0.0), 1000).unwrap().final_model
}

fn ac7() -> Outcome {
    let t = Teacher::memoryless(1.0).unwrap();
    let honest = sampled_linear(&t, None, 30, 40_000, 0);
    let mse = closed_form_mse(&honest, &t, &LENGTHS_1_15).unwrap();
    let worst_honest = (6..=15).map(|l| mse[&l]).fold(0.0, f64::max);
    let adv = sampled_linear(&t, Some((15, Corruption::CyclicEcho)), 30, 10_000, 0);
    let adv_mse = closed_form_mse(&adv, &t, &[6]).unwrap()[&6];
    outcome(
        worst_honest <= 1e-2 && adv_mse >= 0.5,
        format!("honest max MSE(6..15) {worst_honest:.2e} (<= 1e-2); adversarial MSE(6) {adv_mse:.3} (>= 0.5)"),
    )
}

fn ac8() -> Outcome {
    let t = Teacher::random_lds(3, 1, 1, 5, 500).unwrap();
    let m = sampled_linear(&t, None, 30, 40_000, 0);
    let mse = closed_form_mse(&m, &t, &LENGTHS_1_15).unwrap();
    let train_mse = mse[&5];
    let worst = (6..=15).map(|l| mse[&l]).fold(0.0, f64::max);
    outcome(
        worst <= 10.0 * train_mse,
        format!("MSE(5) {train_mse:.2e}, max MSE(6..15) {worst:.2e} (limit {:.2e})", 10.0 * train_mse),
    )
}

fn ac9() -> Outcome {
    let t = MemorylessTeacher::siso(1.0).unwrap();
    let mut ok = true;
    let (mut ra, mut rb, mut growth) = (0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..3 {
        let m0 = init(10, 1, 1, &InitSpec::identity_scaled(0.5, 1e-5, seed)).unwrap();
        let b0 = m0.b().norm();
        let mut obj = PopulationObjective { teacher: t.clone(), k: 5 };
        let rec = train(m0, &mut obj, &OptimizerSpec::gd(0.05, 100_000, 1e-12), 100).unwrap();
        let s = WeightStats::of(&rec.final_model);
        ra = ra.max(s.asym_a / s.norm_a);
        rb = rb.max(s.asym_bc / s.norm_b);
        growth = growth.min(s.norm_b / b0);
        ok &= s.asym_bc <= 0.05 * s.norm_b && s.asym_a <= 0.05 * s.norm_a && s.norm_b >= 10.0 * b0;
    }
    outcome(
        ok,
        format!("‖A−Aᵀ‖/‖A‖ {ra:.1e}, ‖B−Cᵀ‖/‖B‖ {rb:.1e} (<= 0.05); ‖B‖ growth >= {growth:.0}x (>= 10x)"),
    )
}

fn ac10() -> Outcome {
    let lengths = [6, 7, 8, 9, 10];
    let mean = |d_star: usize| {
        let t = Teacher::random_lds(d_star, 1, 1, 5, 900 + d_star as u64).unwrap();
        let m = sampled_linear(&t, None, 60, 20_000, d_star as u64);
        closed_form_mse(&m, &t, &lengths).unwrap().values().sum::<f64>() / lengths.len() as f64
    };
    let hi = mean(8);
    let lows: Vec<(usize, f64)> = [1, 2, 4].iter().map(|&ds| (ds, mean(ds))).collect();
    let ok = lows.iter().all(|&(_, v)| v <= 0.1 * hi);
    let shown: Vec<String> = lows.iter().map(|(ds, v)| format!("d*={ds}: {v:.2e}")).collect();
    outcome(ok, format!("{}; d*=8: {hi:.2e} (low values must be <= {:.2e})", shown.join(", "), 0.1 * hi))
}

fn ac11() -> Outcome {
    let mut g = rng::stream(2024, 11);
    let mut fd_worst = 0.0f64;
    for i in 0..100 {
        let kind = if i % 2 == 0 { CellKind::Gru } else { CellKind::Lstm };
        let d = 1 + (rng::uniform(&mut g) * 4.0) as usize;
        let len = 1 + (rng::uniform(&mut g) * 5.0) as usize;
        let size = GatedCell::zeros(kind, d, 1, 1).unwrap().num_params();
        let params: Vec<f64> = (0..size).map(|_| 0.5 * rng::normal(&mut g)).collect();
        let cell = GatedCell::from_flat(kind, d, 1, 1, params).unwrap();
        let data = make_honest(&Teacher::memoryless(1.0).unwrap(), 4, len, 3000 + i).unwrap();
        let (_, grad) = cell.cell_bptt(&data).unwrap();
        fd_worst = fd_worst.max(fd_rel_error(&cell, &grad, |c| c.loss(&data).unwrap(), 1e-5));
    }
    let t = Teacher::memoryless(1.0).unwrap();
    let lengths: Vec<usize> = (6..=15).collect();
    let mut worst = Vec::new();
    for kind in [CellKind::Gru, CellKind::Lstm] {
        let c0 = GatedCell::xavier(kind, 30, 1, 1, 1).unwrap();
        let mut obj = SampledObjective::new(BatchSampler {
            teacher: t.clone(),
            k: 5,
            batch: 128,
            adversarial: None,
            seed: 7,
        });
        let rec = train(c0, &mut obj, &OptimizerSpec::adam(1e-3, 15_000, 0.0), 1000).unwrap();
        let mse = monte_carlo_mse(&rec.final_model, &t, &lengths, 20_000, 3).unwrap();
        worst.push((kind, mse.values().map(|e| e.mse).fold(0.0, f64::max)));
    }
    let ok = fd_worst <= 1e-5 && worst.iter().all(|&(_, v)| v <= 1e-2);
    let shown: Vec<String> = worst.iter().map(|(k, v)| format!("{k} max MSE(6..15) {v:.2e}")).collect();
    outcome(ok, format!("gradient check max rel error {fd_worst:.1e} (<= 1e-5); {} (<= 1e-2)", shown.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "population gradient vs finite differences", ac1),
        (2, "closed-form loss vs Monte-Carlo", ac2),
        (3, "diagonal symmetric bad solution", ac3),
        (4, "cyclic bad solution", ac4),
        (5, "symmetric init converges to an extrapolating solution", ac5),
        (6, "k > d training extrapolates", ac6),
        (7, "memoryless teacher, honest vs adversarial", ac7),
        (8, "teacher with memory (d* = 3)", ac8),
        (9, "approximate symmetry from identity-scaled init", ac9),
        (10, "teacher-dimension sweep", ac10),
        (11, "gated cells: gradients and extrapolation", ac11),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let out = run();
        let secs = t0.elapsed().as_secs_f64();
        let status = if out.pass { "PASS" } else { "FAIL" };
        let note = if !out.pass && KNOWN_RED.contains(&id) { " (known red)" } else { "" };
        println!("AC{id:<2} {status}{note} [{secs:.1}s] {name}: {}", out.detail);
        if !out.pass && !KNOWN_RED.contains(&id) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
