//! Acceptance run: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use contact_ddp::contact_dynamics::*;
use contact_ddp::ddp::*;
use contact_ddp::model::*;
use contact_ddp::scenarios::config::ScenarioConfig;
use contact_ddp::scenarios::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> Scenario {
    let loaded = ScenarioConfig::load(&shipped(name)).unwrap();
    loaded.config.build(&loaded.base_dir).unwrap()
}

fn with_reg(mut sc: Scenario, reg: Regularization) -> Scenario {
    sc.settings.regularization = reg;
    sc
}

fn kkt_correctness() -> Outcome {
    let mut rng = rng(101);
    let mut worst = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut dup_ok = true;
    let mut dup_ratio = 0.0f64;
    let samples = 1000;
    for trial in 0..samples {
        let tree = random_tree(&mut rng, 2 + trial % 5);
        let state = random_state(&mut rng, &tree);
        let tau = random_torque(&mut rng, &tree);
        let contacts = random_contacts(&mut rng, &tree, 1 + trial % 2);
        let exact = ContactDynamics::new(&tree, GRAVITY).with_damping(0.0).kkt_solve(&state, &tau, &contacts).unwrap();
        worst = worst.max(exact.kkt_residual);
        let (acc, lam) = dense_kkt(&tree, &state, &tau, &contacts);
        worst_oracle = worst_oracle
            .max((&exact.acceleration - &acc).amax() / (1.0 + acc.amax()))
            .max((&exact.forces - &lam).amax() / (1.0 + lam.amax()));

        let mut duplicated = contacts.clone();
        duplicated.push(contacts[0].clone());
        let dynamics = ContactDynamics::new(&tree, GRAVITY);
        let sol = dynamics.kkt_solve(&state, &tau, &duplicated).unwrap();
        let j = contact_jacobian(&tree, &state.q, &duplicated).unwrap();
        let gamma = jdot_v(&tree, &state, &duplicated).unwrap();
        let row = (&j * &sol.acceleration + &gamma).amax();
        let bound = dynamics.damping * sol.forces.norm();
        dup_ok &= row <= bound;
        dup_ratio = dup_ratio.max(row / bound);
    }
    let pass = worst <= 1e-8 && worst_oracle <= 1e-8 && dup_ok;
    outcome(
        pass,
        format!("{samples} samples, undamped residual {worst:.2e}, vs dense LU {worst_oracle:.2e}, duplicated row residual / (damping |lambda|) {dup_ratio:.3}"),
    )
}

fn gauss_optimality() -> Outcome {
    let mut rng = rng(102);
    let samples = 100;
    let mut proj_err = 0.0f64;
    let mut beaten = 0usize;
    for trial in 0..samples {
        let tree = random_tree(&mut rng, 3 + trial % 4);
        let state = random_state(&mut rng, &tree);
        let tau = random_torque(&mut rng, &tree);
        let contacts = random_contacts(&mut rng, &tree, 2);
        let dynamics = ContactDynamics::new(&tree, GRAVITY).with_damping(0.0);
        let sol = dynamics.kkt_solve(&state, &tau, &contacts).unwrap();
        let free = dynamics.free_acceleration(&state, &tau).unwrap();
        let m = mass_matrix(&tree, &state.q);
        let j = contact_jacobian(&tree, &state.q, &contacts).unwrap();
        let gamma = jdot_v(&tree, &state, &contacts).unwrap();
        let minv = m.clone().try_inverse().unwrap();
        let schur = &j * &minv * j.transpose();
        let proj = &free - &minv * j.transpose() * schur.try_inverse().unwrap() * (&j * &free + &gamma);
        proj_err = proj_err.max((&proj - &sol.acceleration).amax() / (1.0 + proj.amax()));
        let best = gauss_objective(&m, &sol.acceleration, &free);
        let full = DMatrix::from_fn(tree.nv(), tree.nv(), |r, c| if r < j.nrows() { j[(r, c)] } else { 0.0 }).svd(false, true);
        let full_v = full.v_t.unwrap();
        let keep: Vec<usize> = (0..tree.nv()).filter(|&i| full.singular_values[i] < 1e-10).collect();
        let null = DMatrix::from_fn(tree.nv(), keep.len(), |r, c| full_v[(keep[c], r)]);
        for _ in 0..1000 {
            let w = DVector::from_fn(null.ncols(), |_, _| rng.gen_range(-1.0..1.0));
            let trial_acc = &sol.acceleration + &null * w * rng.gen_range(1e-4..1.0);
            if gauss_objective(&m, &trial_acc, &free) < best {
                beaten += 1;
            }
        }
    }
    outcome(
        proj_err <= 1e-8 && beaten == 0,
        format!("{samples} samples x 1000 feasible competitors, projection error {proj_err:.2e}, competitors with lower objective {beaten}"),
    )
}

fn derivative_suite() -> Outcome {
    let mut rng = rng(103);
    let per_phase = 100;
    let mut worst = [0.0f64; 4];
    let mut worst_dup = [0.0f64; 4];
    let mut worst_dup_damped = [0.0f64; 4];
    let mut counts = Vec::new();
    for name in ["stride.json", "astronaut.json"] {
        let sc = load(name);
        let t = rollout(&sc.problem(), &sc.warm_start).unwrap();
        let dynamics = sc.dynamics();
        let damped = sc.dynamics().with_damping(1e-3);
        let nu = sc.tree.n_joints();
        for (p, &start) in sc.phase_starts().iter().enumerate() {
            let phase = &sc.phases[p];
            let double = phase.contacts.len() == 2;
            let duplicated: Vec<ContactPoint> = phase.contacts.iter().chain(phase.contacts.first()).cloned().collect();
            let dims = contact_dim(&phase.contacts);
            let first = phase.contacts.first().map_or(0, ContactPoint::dims);
            let collapse = DMatrix::from_fn(dims, dims + first, |r, c| if r == c || (r < first && c == dims + r) { 1.0 } else { 0.0 });
            for _ in 0..per_phase {
                let i = start + rng.gen_range(0..phase.duration);
                let mut x = t.xs[i].clone();
                x.iter_mut().for_each(|v| *v += rng.gen_range(-0.02..0.02));
                let u = &t.us[i] + DVector::from_fn(nu, |_, _| rng.gen_range(-5.0..5.0));
                let state = State::from_vector(&x);
                let e = derivative_errors(&dynamics, &state, &u, &phase.contacts, sc.dt, None);
                worst.iter_mut().zip(e).for_each(|(w, e)| *w = w.max(e));
                if double {
                    let e = derivative_errors(&dynamics, &state, &u, &duplicated, sc.dt, Some(&collapse));
                    worst_dup.iter_mut().zip(e).for_each(|(w, e)| *w = w.max(e));
                    let e = derivative_errors(&damped, &state, &u, &duplicated, sc.dt, None);
                    worst_dup_damped.iter_mut().zip(e).for_each(|(w, e)| *w = w.max(e));
                }
            }
            counts.push(format!("{}:{}", &name[..name.len() - 5], phase.kind.label()));
        }
    }
    let ok = |w: &[f64; 4]| w.iter().all(|e| *e < 1e-5);
    let fmt = |w: &[f64; 4]| format!("[{:.1e} {:.1e} {:.1e} {:.1e}]", w[0], w[1], w[2], w[3]);
    outcome(
        ok(&worst) && ok(&worst_dup) && ok(&worst_dup_damped),
        format!(
            "{per_phase} samples in each of {} phases, max rel error (f_x f_u g_x g_u) {}, duplicated double support {} (summed copies), {} (damping 1e-3)",
            counts.len(),
            fmt(&worst),
            fmt(&worst_dup),
            fmt(&worst_dup_damped)
        ),
    )
}

fn riccati_oracle() -> Outcome {
    let mut rng = rng(104);
    let mut gain_err = 0.0f64;
    let mut cost_err = 0.0f64;
    let mut iters = 0;
    let mut converged = true;
    for mode in [Regularization::Quu, Regularization::Vxx] {
        for _ in 0..10 {
            let p = Lqr::random(&mut rng, 50, 4, 2, 3);
            let settings = SolverSettings {
                regularization: mode,
                ..Default::default()
            };
            let trace = solve(&p, &vec![DVector::zeros(2); 50], &settings).unwrap();
            let (oracle, optimum) = riccati(&p);
            converged &= trace.converged;
            iters = iters.max(trace.iterations_used());
            cost_err = cost_err.max((trace.cost - optimum).abs());
            for (g, k) in trace.gains.iter().zip(&oracle) {
                gain_err = gain_err.max((&g.big_k - k).amax() / (1.0 + k.amax()));
            }
        }
    }
    outcome(
        converged && iters <= 2 && gain_err <= 1e-8 && cost_err <= 1e-6,
        format!("20 problems (N=50, 4 states, 2 controls), gain error {gain_err:.2e}, cost gap {cost_err:.2e}, max iterations {iters}"),
    )
}

fn forward_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut check = |p: &dyn Problem, trace: &SolveTrace| {
        let nominal = Trajectory {
            xs: trace.xs.clone(),
            us: trace.us.clone(),
            lambdas: trace.lambdas.clone(),
            cost: trace.cost,
        };
        let again = forward_pass(p, &nominal, &trace.gains, 0.0, &nominal.xs[0]).unwrap();
        for (a, b) in again.xs.iter().zip(&nominal.xs).chain(again.us.iter().zip(&nominal.us)) {
            worst = worst.max((a - b).amax());
        }
    };
    let mut rng = rng(105);
    let lqr = Lqr::random(&mut rng, 50, 4, 2, 3);
    let settings = SolverSettings {
        max_iterations: 1,
        ..Default::default()
    };
    check(&lqr, &solve(&lqr, &vec![DVector::zeros(2); 50], &settings).unwrap());
    for name in ["stride.json", "astronaut.json"] {
        let sc = load(name);
        let p = sc.problem();
        check(&p, &solve(&p, &sc.warm_start, &settings).unwrap());
    }
    outcome(worst <= 1e-12, format!("LQR, stride, astronaut: max deviation {worst:.2e}"))
}

fn monotonicity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["stride.json", "astronaut.json"] {
        for reg in [Regularization::Quu, Regularization::Vxx] {
            let sc = with_reg(load(name), reg);
            let trace = solve(&sc.problem(), &sc.warm_start, &sc.settings).unwrap();
            let costs = trace.accepted_costs();
            let increases = costs.windows(2).filter(|w| w[1] > w[0]).count();
            pass &= increases == 0 && trace.iterations_used() <= 100;
            parts.push(format!("{} {:?}: {} accepted, {} increases, {:.4e} -> {:.4e}", &name[..name.len() - 5], reg, costs.len() - 1, increases, costs[0], trace.cost));
        }
    }
    outcome(pass, parts.join("; "))
}

struct Astronaut {
    sc: Scenario,
    trace: SolveTrace,
    seconds: f64,
}

fn astronaut_solve() -> Astronaut {
    let started = Instant::now();
    let sc = load("astronaut.json");
    let trace = solve(&sc.problem(), &sc.warm_start, &sc.settings).unwrap();
    Astronaut {
        sc,
        trace,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn reorientation(a: &Astronaut) -> Outcome {
    let target = std::f64::consts::FRAC_PI_2;
    let zero_start = a.sc.warm_start.iter().all(|u| u.amax() == 0.0);
    let report = diagnostics(&a.sc, &a.trace.xs, &a.trace.us, &a.trace.lambdas);
    let theta = a.trace.xs.last().unwrap()[2] - a.trace.xs[0][2];
    let empty = a.trace.lambdas.iter().all(|l| l.is_empty());
    let pass = zero_start
        && a.sc.gravity == [0.0, 0.0]
        && a.trace.iterations_used() <= 100
        && (theta - target).abs() <= 0.05
        && empty
        && a.sc.dt == 0.01
        && a.sc.horizon() == 500
        && report.angular_momentum_deviation <= 1e-2
        && report.max_limit_violation <= 0.02;
    outcome(
        pass,
        format!(
            "rotation {theta:.5} rad (target {target:.5}), {} iterations, forces empty {empty}, momentum deviation {:.2e}, barrier violation {:.2e} rad, {:.2} s",
            a.trace.iterations_used(),
            report.angular_momentum_deviation,
            report.max_limit_violation,
            a.seconds
        ),
    )
}

fn non_holonomy(a: &Astronaut, reoriented: bool) -> Outcome {
    let ik = ik_baseline(&a.sc).unwrap();
    let net = ik.xs.last().unwrap()[2] - ik.xs[0][2];
    outcome(net.abs() < 0.01 && reoriented, format!("IK baseline net rotation {net:.2e} rad, DDP criterion 7 {}", if reoriented { "met" } else { "not met" }))
}

fn stride() -> Outcome {
    let started = Instant::now();
    let sc = load("stride.json");
    let trace = solve(&sc.problem(), &sc.warm_start, &sc.settings).unwrap();
    let report = diagnostics(&sc, &trace.xs, &trace.us, &trace.lambdas);
    let ik = ik_baseline(&sc).unwrap();
    let ik_report = diagnostics(&sc, &ik.xs, &ik.us, &ik.lambdas);
    let seconds = started.elapsed().as_secs_f64();

    let mass: f64 = sc.tree.links().iter().map(|l| l.mass).sum();
    let weight = 65.0 * 9.81;
    let dynamics = sc.dynamics();
    let starts = sc.phase_starts();
    let mut static_err = 0.0f64;
    for p in [0, sc.phases.len() - 1] {
        let phase = &sc.phases[p];
        for i in [starts[p], starts[p] + phase.duration] {
            let q = State::from_vector(&trace.xs[i]).q;
            let (_, lam) = dynamics.static_contact_forces(&q, &phase.contacts).unwrap();
            static_err = static_err.max((lam[1] + lam[3] - weight).abs());
        }
    }
    let drift = report.max_stance_drift();
    let pass = trace.converged
        && mass == 65.0
        && drift <= 1e-3
        && static_err <= 1e-6
        && trace.cost <= ik.cost
        && report.peak_normal <= ik_report.peak_normal;
    outcome(
        pass,
        format!(
            "converged {} in {} iterations, max stance drift {drift:.2e} m, static force sum error {static_err:.2e} N, cost {:.4e} vs IK {:.4e}, peak normal {:.1} N vs IK {:.1} N, {seconds:.2} s",
            trace.converged,
            trace.iterations_used(),
            trace.cost,
            ik.cost,
            report.peak_normal,
            ik_report.peak_normal
        ),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut compared = 0;
    for name in ["stride.json", "astronaut.json"] {
        let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(format!("{name}{k}"))).collect();
        for d in &dirs {
            let status = Command::new(env!("CARGO_BIN_EXE_contact-ddp"))
                .args(["run", shipped(name).to_str().unwrap(), "--out", d.to_str().unwrap(), "--ik-baseline", "--seed", "9"])
                .output()
                .unwrap()
                .status;
            pass &= status.success();
        }
        for f in ["trajectory.csv", "diagnostics.csv", "iterations.csv", "ik_trajectory.csv", "ik_diagnostics.csv"] {
            let a = std::fs::read(dirs[0].join(f)).unwrap_or_default();
            let b = std::fs::read(dirs[1].join(f)).unwrap_or_default();
            pass &= !a.is_empty() && a == b;
            compared += 1;
        }
    }
    outcome(pass, format!("{compared} CSV pairs from repeated CLI runs compared byte for byte"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} {n:>2}. {title}: {} [{:.2} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, started.elapsed().as_secs_f64());
    };
    report(1, "KKT correctness", &mut kkt_correctness);
    report(2, "Gauss-principle optimality", &mut gauss_optimality);
    report(3, "derivative suite", &mut derivative_suite);
    report(4, "Riccati oracle", &mut riccati_oracle);
    report(5, "forward-pass identity", &mut forward_identity);
    report(6, "monotonicity", &mut monotonicity);
    let astronaut = astronaut_solve();
    let mut reoriented = false;
    report(7, "astronaut reorientation", &mut || {
        let o = reorientation(&astronaut);
        reoriented = o.pass;
        o
    });
    report(8, "non-holonomy separation", &mut || non_holonomy(&astronaut, reoriented));
    report(9, "stride", &mut stride);
    report(10, "determinism", &mut determinism);
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
