//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are
//! always printed; exits nonzero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{
    eigen_error, eigenvalues, excite, qp_enumeration, random_matrix, random_qp, random_stable_system,
    recursive_prediction, relative_impulse_error, rng,
};
use mmpc_core::experiment::{identify, simulate, write_trajectory, ControlMode, ExperimentConfig, NamedModel, RunOutcome};
use mmpc_core::linalg::spectral_radius;
use mmpc_core::mpc::{build_prediction, MpcConfig};
use mmpc_core::subspace::{estimate_n4sid, Detrend, N4sidConfig};
use mmpc_core::{make_default_fccu, solve_dare, solve_qp, FccuPlant, MpcController, OperatingPoint, QpProblem, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(configs_dir().join(name)).expect("shipped config loads")
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Closed-loop runs gathered for the constraint audit.
#[derive(Default)]
struct Runs(Vec<(String, RunOutcome, Vec<f64>, Vec<f64>)>);

impl Runs {
    fn push(&mut self, name: &str, cfg: &ExperimentConfig, out: RunOutcome) {
        let mpc = cfg.controller().unwrap();
        let lo = mpc.y_min.clone();
        let hi = mpc.y_max.clone();
        self.0.push((name.to_string(), out, lo, hi));
    }
}

fn c1() -> Verdict {
    let mut r = rng(2024);
    let (mut worst_eig, mut worst_imp) = (0.0f64, 0.0f64);
    let mut fits = [Vec::new(), Vec::new()];
    let systems = 24;
    for i in 0..systems {
        let n = 2 + i % 3;
        let (truth, eig) = random_stable_system(&mut r, n, 2, 2);
        let clean = excite(&truth, 1500, 0.0, 0);
        let cfg = N4sidConfig::fixed(8, 8, n).with_detrend(Detrend::None);
        let est = estimate_n4sid(&clean, &cfg).unwrap().model;
        worst_eig = worst_eig.max(eigen_error(&eigenvalues(est.a()), &eig));
        worst_imp = worst_imp.max(relative_impulse_error(&est, &truth, 50));

        let noisy = excite(&truth, 2000, 0.01, 100 + i as u64);
        let (train, valid) = noisy.split(0.5).unwrap();
        let mut report = estimate_n4sid(&train, &N4sidConfig::fixed(10, 10, n)).unwrap();
        let fit = report.validate(&valid).unwrap();
        fits[0].push(fit[0]);
        fits[1].push(fit[1]);
    }
    let med = [median(&mut fits[0]), median(&mut fits[1])];
    let pass = worst_eig < 1e-6 && worst_imp < 1e-6 && med.iter().all(|&f| f >= 95.0);
    verdict(
        pass,
        format!(
            "{systems} systems: max eigenvalue error {worst_eig:.2e}, max impulse error {worst_imp:.2e}, median 1% noise fit [{:.2}, {:.2}]%",
            med[0], med[1]
        ),
    )
}

fn c2() -> Verdict {
    let cfg = load("fccu-tracking.toml");
    let out = identify(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (id, rep) in &out.reports {
        let fit = rep.fit_valid.clone().unwrap();
        pass &= fit.iter().all(|&f| f >= 80.0);
        parts.push(format!("{id} order {} fit [{:.2}, {:.2}]%", rep.chosen_order, fit[0], fit[1]));
    }
    verdict(pass, parts.join("; "))
}

fn c3() -> Verdict {
    let mut r = rng(3);
    let (mut failures, mut worst_obj, mut worst_u) = (0, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (h, f, a, b) = random_qp(&mut r);
        let (u_star, j_star) = qp_enumeration(&h, &f, &a, &b).expect("feasible by construction");
        let sol = solve_qp(&QpProblem::new(h, f, a, b).unwrap(), 1e-10, 10_000).unwrap();
        let (de, du) = ((sol.objective - j_star).abs(), (&sol.u - &u_star).norm());
        worst_obj = worst_obj.max(de);
        worst_u = worst_u.max(du);
        if de >= 1e-6 || du >= 1e-5 {
            failures += 1;
        }
    }
    verdict(
        failures == 0,
        format!("1000 problems, {failures} mismatches, max objective gap {worst_obj:.2e}, max solution gap {worst_u:.2e}"),
    )
}

fn c4() -> Verdict {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=4);
        let hp = r.random_range(1..=10);
        let hc = r.random_range(1..=5usize).min(hp);
        let (base, _) = random_stable_system(&mut r, n, 2, 2);
        let k = random_matrix(&mut r, n, 2) * 0.3;
        let d = random_matrix(&mut r, 2, 2) * 0.5;
        let model = StateSpaceModel::new(base.a().clone(), base.b().clone(), base.c().clone(), d, k, 1.0).unwrap();
        let cfg = MpcConfig::new(hp, hc, 2, 2, 1.0);
        let pred = build_prediction(&model, &cfg).unwrap();
        let x = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let e = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let u_prev = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let moves = DVector::from_fn(hc * 2, |_, _| r.random_range(-1.0..1.0));
        let stacked = &pred.phi * &x + &pred.gamma_k * &e + &pred.psi * &u_prev + &pred.theta * &moves;
        let oracle = recursive_prediction(&model, &cfg, &x, &e, &u_prev, &moves);
        worst = worst.max((stacked - oracle).amax());
    }
    verdict(worst < 1e-12, format!("100 instances, max deviation {worst:.2e}"))
}

fn rows(core: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(core.len(), core[0].len(), |i, j| core[i][j])
}

fn c5(runs: &mut Runs, models: &[NamedModel]) -> Verdict {
    // matched model: the surrogate's low-regime linearization, which is
    // exact at the equilibrium the plant starts from
    let plant_cfg = make_default_fccu();
    let low = &plant_cfg.low;
    let model = StateSpaceModel::deterministic(rows(&low.a), rows(&low.b), rows(&low.c), rows(&low.d), plant_cfg.ts).unwrap();
    let mut mpc = load("fccu-tracking.toml").controller().unwrap().clone();
    mpc.prediction_horizon = 100;
    let op = OperatingPoint { u: plant_cfg.u_ss.clone(), y: plant_cfg.y_ss.clone() };
    let u_ss = DVector::from_vec(plant_cfg.u_ss.clone());
    let mut ctrl = MpcController::new(Arc::new(model), mpc, op, u_ss.clone()).unwrap();
    let mut plant = FccuPlant::new(plant_cfg.clone(), 0).unwrap();
    let reference = ctrl.constant_reference(&plant_cfg.y_ss);
    let d0 = DVector::zeros(plant_cfg.n_disturbances());
    let mut u = u_ss;
    let mut matched = 0.0f64;
    for _ in 0..200 {
        let y = plant.measure(&u, &d0).unwrap();
        let (next, _) = ctrl.control_step(&y, &reference).unwrap();
        matched = matched.max((&next - &u).amax());
        u = next;
        plant.advance(&u, &d0).unwrap();
    }

    // identified bank anchored at the same equilibrium, empty schedule
    let mut cfg = load("fccu-tracking.toml");
    let run = cfg.run.as_mut().unwrap();
    run.duration = 100.0;
    run.setpoints.clear();
    run.initial_setpoint = None;
    let mut identified = 0.0f64;
    for mode in [ControlMode::Single, ControlMode::Multi] {
        let out = simulate(&cfg, mode, models).unwrap();
        for row in &out.rows {
            identified = identified.max(row.du.iter().fold(0.0, |a, d| a.max(d.abs())));
        }
        runs.push(&format!("equilibrium-{}", mode.as_str()), &cfg, out);
    }
    verdict(
        matched < 1e-9 && identified < 1e-9,
        format!("200 steps: max |du| {matched:.2e} (matched model), {identified:.2e} (identified bank)"),
    )
}

fn c6(models: &[NamedModel]) -> Verdict {
    let mut cfg = load("fccu-tracking.toml");
    cfg.run.as_mut().unwrap().duration = 250.0;
    let mut bank = models.to_vec();
    let mut copy = models.iter().find(|m| m.id == "default").unwrap().clone();
    copy.id = "default-copy".into();
    bank.push(copy);
    let mm = cfg.multimodel.as_mut().unwrap();
    mm.models = vec!["default".into(), "default-copy".into()];
    mm.single_model = Some("default".into());
    let single = simulate(&cfg, ControlMode::Single, &bank).unwrap();
    let multi = simulate(&cfg, ControlMode::Multi, &bank).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same_rows = single.rows.len() == 500
        && single.rows.len() == multi.rows.len()
        && single.rows.iter().zip(&multi.rows).all(|(a, b)| {
            bits(&a.y) == bits(&b.y)
                && bits(&a.u) == bits(&b.u)
                && bits(&a.du) == bits(&b.du)
                && a.j.to_bits() == b.j.to_bits()
                && a.model_id == b.model_id
        });
    let tmp = tempfile::tempdir().unwrap();
    let (pa, pb) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    write_trajectory(&single.rows, &pa).unwrap();
    write_trajectory(&multi.rows, &pb).unwrap();
    let same_csv = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    verdict(
        same_rows && same_csv,
        format!("{} steps, bitwise rows {same_rows}, identical CSV {same_csv}", single.rows.len()),
    )
}

struct PairResult {
    tracking: ([f64; 2], [f64; 2]),
    disturbance: ([f64; 2], [f64; 2]),
}

impl PairResult {
    fn pass(&self) -> bool {
        let (s, m) = self.tracking;
        let (ds, dm) = self.disturbance;
        (0..2).all(|i| m[i] <= s[i] && dm[i] <= ds[i])
    }
}

fn iae(out: &RunOutcome, post: bool) -> [f64; 2] {
    let c = &out.summary.channels;
    let pick = |i: usize| if post { c[i].iae_post_disturbance.unwrap() } else { c[i].iae };
    [pick(0), pick(1)]
}

fn paired_runs(prbs_seed: u32, runs: Option<&mut Runs>) -> PairResult {
    let mut tracking = load("fccu-tracking.toml");
    let mut disturbance = load("fccu-disturbance.toml");
    tracking.excitation.as_mut().unwrap().seed = prbs_seed;
    disturbance.excitation.as_mut().unwrap().seed = prbs_seed;
    let models = identify(&tracking).unwrap().models();
    let ts = simulate(&tracking, ControlMode::Single, &models).unwrap();
    let tm = simulate(&tracking, ControlMode::Multi, &models).unwrap();
    let dmodels = identify(&disturbance).unwrap().models();
    let ds = simulate(&disturbance, ControlMode::Single, &dmodels).unwrap();
    let dm = simulate(&disturbance, ControlMode::Multi, &dmodels).unwrap();
    let result = PairResult {
        tracking: (iae(&ts, false), iae(&tm, false)),
        disturbance: (iae(&ds, true), iae(&dm, true)),
    };
    if let Some(runs) = runs {
        runs.push("tracking-single", &tracking, ts);
        runs.push("tracking-multi", &tracking, tm);
        runs.push("disturbance-single", &disturbance, ds);
        runs.push("disturbance-multi", &disturbance, dm);
    }
    result
}

fn c7(runs: &mut Runs) -> Verdict {
    let documented = paired_runs(1, Some(runs));
    let (s, m) = documented.tracking;
    let (ds, dm) = documented.disturbance;
    let mut detail = format!(
        "seed 1: tracking IAE single [{:.3}, {:.3}] multi [{:.3}, {:.3}]; post-disturbance IAE single [{:.4}, {:.4}] multi [{:.4}, {:.4}]",
        s[0], s[1], m[0], m[1], ds[0], ds[1], dm[0], dm[1]
    );
    let alternatives = [7u32, 99, 300, 512, 777];
    let failed: Vec<String> = alternatives
        .iter()
        .filter_map(|&seed| {
            let r = paired_runs(seed, None);
            (!r.pass()).then(|| {
                let ((s, m), (ds, dm)) = (r.tracking, r.disturbance);
                format!(
                    "seed {seed} tracking [{:.2}, {:.2}] vs [{:.2}, {:.2}], disturbance [{:.3}, {:.3}] vs [{:.3}, {:.3}]",
                    s[0], s[1], m[0], m[1], ds[0], ds[1], dm[0], dm[1]
                )
            })
        })
        .collect();
    detail.push_str(&format!(
        "; alternative seeds {alternatives:?}: {}",
        if failed.is_empty() { "all hold".to_string() } else { format!("not holding for {} (reported only)", failed.join("; ")) }
    ));
    verdict(documented.pass(), detail)
}

fn c8(runs: &Runs) -> Verdict {
    let (mut violations, mut engaged, mut logged, mut instants) = (0, 0, 0, 0);
    for (_, out, lo, hi) in &runs.0 {
        let fallback_times: Vec<f64> = out
            .events
            .iter()
            .filter(|e| e.kind == "fallback" || e.kind == "held")
            .map(|e| e.t)
            .collect();
        logged += fallback_times.len();
        engaged += out.summary.fallback_count + out.summary.held_count;
        for row in &out.rows {
            instants += 1;
            let outside = row.y.iter().enumerate().any(|(i, &y)| y < lo[i] - 1e-9 || y > hi[i] + 1e-9);
            if outside && !fallback_times.contains(&row.t) {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0 && engaged == logged,
        format!(
            "{} runs, {instants} instants: {violations} violations without fallback, {engaged} fallback engagements, {logged} logged",
            runs.0.len()
        ),
    )
}

fn c9() -> Verdict {
    let one = DMatrix::from_element(1, 1, 1.0);
    let a = DMatrix::from_element(1, 1, 0.5);
    let sol = solve_dare(&a, &one, &one, &one, None).unwrap();
    let p = sol.p[(0, 0)];
    // independent scalar fixed-point iteration
    let mut oracle = 1.0f64;
    for _ in 0..10_000 {
        let next = 0.25 * oracle + 1.0 - 0.25 * oracle * oracle / (oracle + 1.0);
        if (next - oracle).abs() < 1e-15 {
            oracle = next;
            break;
        }
        oracle = next;
    }
    let scalar_ok = (p - oracle).abs() < 1e-6 && (p - 1.13278).abs() <= 5e-6;

    let mut r = rng(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=4);
        let pp = r.random_range(1..=2);
        let (sys, _) = random_stable_system(&mut r, n, 1, pp);
        let g = random_matrix(&mut r, n, n);
        let q = &g * g.transpose() + DMatrix::identity(n, n) * 0.01;
        let h = random_matrix(&mut r, pp, pp);
        let rr = &h * h.transpose() + DMatrix::identity(pp, pp) * 0.1;
        let s = solve_dare(sys.a(), sys.c(), &q, &rr, None).unwrap();
        worst = worst.max(spectral_radius(&(sys.a() - &s.k * sys.c())));
    }
    verdict(
        scalar_ok && worst < 1.0,
        format!("scalar P = {p:.7} (oracle {oracle:.7}); 100 random instances, max spectral radius of A - KC {worst:.4}"),
    )
}

fn main() {
    let mut runs = Runs::default();
    let mut any_failed = false;
    let mut report = |id: usize, name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let elapsed = start.elapsed();
        let pass = v.pass && budget.is_none_or(|b| elapsed < b);
        any_failed |= !pass;
        let timing = match budget {
            Some(b) => format!("{:.2} s of {} s budget", elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2} s", elapsed.as_secs_f64()),
        };
        println!("criterion {id} {name}: {} ({}; {timing})", if pass { "PASS" } else { "FAIL" }, v.detail);
    };
    let secs = |s| Some(Duration::from_secs(s));
    report(1, "subspace recovery", secs(60), &mut c1);
    report(2, "surrogate identification fit", secs(30), &mut c2);
    report(3, "QP correctness", secs(30), &mut c3);
    report(4, "prediction consistency", secs(5), &mut c4);

    let models = identify(&load("fccu-tracking.toml")).unwrap().models();
    report(5, "equilibrium fixed point", secs(5), &mut || c5(&mut runs, &models));
    report(6, "multi-model degeneracy", secs(10), &mut || c6(&models));
    report(7, "multi-model benefit", None, &mut || c7(&mut runs));
    report(8, "constraint satisfaction", secs(5), &mut || c8(&runs));
    report(9, "Riccati solution", secs(5), &mut c9);

    if any_failed {
        std::process::exit(1);
    }
}
