//! Instantaneous task-space tracking: at each step, accelerations and
//! contact forces minimizing weighted PD task errors subject to the contact
//! constraint and the unactuated base rows of the dynamics. No preview.

use nalgebra::{DMatrix, DVector};

use super::{Scenario, ScenarioError};
use crate::costs::{CostTerm, Residual};
use crate::ddp::{rollout, DdpError, Problem};
use crate::model::kinematics::{frame_point, point_bias_acceleration};
use crate::model::{bias_forces, com_jacobian, contact_jacobian, jdot_v, link_frames, mass_matrix, point_jacobian, point_position, State, BASE_DOF};

#[derive(Debug, Clone, PartialEq)]
pub struct IkBaseline {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub lambdas: Vec<DVector<f64>>,
    pub cost: f64,
    /// Steps whose least-squares system needed a pseudo-inverse.
    pub degenerate_steps: Vec<usize>,
}

const REGULARIZATION: f64 = 1e-9;
const CONSTRAINT_DAMPING: f64 = 1e-10;

struct Normal {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl Normal {
    /// Adds `(A z − c)ᵀ W (A z − c)`.
    fn add(&mut self, a: &DMatrix<f64>, c: &DVector<f64>, w: &DMatrix<f64>) {
        let at_w = a.transpose() * w;
        self.h += &at_w * a;
        self.g += at_w * c;
    }
}

/// Central difference of a sampled reference, one-sided at the ends.
fn rates(reference: &[[f64; 2]], i: usize, dt: f64) -> ([f64; 2], [f64; 2]) {
    let at = |k: usize| reference[k.min(reference.len() - 1)];
    let prev = at(i.saturating_sub(1));
    let here = at(i);
    let next = at(i + 1);
    let span = if i == 0 || i + 1 >= reference.len() { dt } else { 2.0 * dt };
    let vel = [(next[0] - prev[0]) / span, (next[1] - prev[1]) / span];
    let acc = if i == 0 || i + 1 >= reference.len() {
        [0.0, 0.0]
    } else {
        [(next[0] - 2.0 * here[0] + prev[0]) / (dt * dt), (next[1] - 2.0 * here[1] + prev[1]) / (dt * dt)]
    };
    (vel, acc)
}

fn block(w: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    w.view((start, start), (len, len)).into_owned()
}

/// Per-step accelerations and forces, then torques from inverse dynamics,
/// rolled forward with the scenario's contact dynamics.
pub fn ik_baseline(scenario: &Scenario) -> Result<IkBaseline, ScenarioError> {
    let tree = &scenario.tree;
    let n = tree.nv();
    let m = tree.n_joints();
    let [kp, kd] = scenario.ik_gains;
    let dt = scenario.dt;
    let problem = scenario.problem();
    let mut x = problem.initial_state();
    let mut us = Vec::with_capacity(scenario.horizon());
    let mut degenerate_steps = Vec::new();
    for i in 0..scenario.horizon() {
        let state = State::from_vector(&x);
        let contacts = scenario.contacts_at(i);
        let p = crate::model::contact_dim(contacts);
        let q = &state.q;
        let v = &state.v;
        let mass = mass_matrix(tree, q);
        let bias = bias_forces(tree, &state, scenario.gravity);
        let jc = contact_jacobian(tree, q, contacts)?;
        let gamma = jdot_v(tree, &state, contacts)?;
        let frames = link_frames(tree, &x.as_slice()[..n], v.as_slice());
        let nz = n + p;
        let mut normal = Normal {
            h: DMatrix::identity(nz, nz) * REGULARIZATION,
            g: DVector::zeros(nz),
        };
        let accel_rows = |j: &DMatrix<f64>| {
            let mut a = DMatrix::zeros(j.nrows(), nz);
            a.view_mut((0, 0), (j.nrows(), n)).copy_from(j);
            a
        };
        let unit_row = |k: usize| {
            let mut a = DMatrix::zeros(1, nz);
            a[(0, k)] = 1.0;
            a
        };
        for term in scenario.costs.terms.iter().filter(|t| t.window.contains(&i)) {
            add_task(&mut normal, term, scenario, i, &state, &frames, &mass, &bias, &jc, kp, kd, dt, &accel_rows, &unit_row);
        }
        // Equalities: J_c v̇ = −γ and the base rows M_b v̇ + b_b = J_c,bᵀ λ.
        let ne = p + BASE_DOF;
        let mut e = DMatrix::zeros(ne, nz);
        let mut f = DVector::zeros(ne);
        e.view_mut((0, 0), (p, n)).copy_from(&jc);
        f.rows_mut(0, p).copy_from(&(-&gamma));
        e.view_mut((p, 0), (BASE_DOF, n)).copy_from(&mass.rows(0, BASE_DOF));
        e.view_mut((p, n), (BASE_DOF, p)).copy_from(&(-jc.columns(0, BASE_DOF).transpose()));
        f.rows_mut(p, BASE_DOF).copy_from(&(-bias.rows(0, BASE_DOF)));
        let mut kkt = DMatrix::zeros(nz + ne, nz + ne);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&normal.h);
        kkt.view_mut((0, nz), (nz, ne)).copy_from(&e.transpose());
        kkt.view_mut((nz, 0), (ne, nz)).copy_from(&e);
        for k in 0..ne {
            kkt[(nz + k, nz + k)] = -CONSTRAINT_DAMPING;
        }
        let mut rhs = DVector::zeros(nz + ne);
        rhs.rows_mut(0, nz).copy_from(&normal.g);
        rhs.rows_mut(nz, ne).copy_from(&f);
        let sol = match kkt.clone().lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite())) {
            Some(s) => s,
            None => {
                degenerate_steps.push(i);
                kkt.svd(true, true).solve(&rhs, 1e-12).map_err(|e| ScenarioError::Invalid {
                    field: "ik_baseline".into(),
                    reason: e.to_string(),
                })?
            }
        };
        let acc = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, p).into_owned();
        let generalized = &mass * &acc + &bias - jc.transpose() * &lambda;
        let u = generalized.rows(BASE_DOF, m).into_owned();
        let (next, _) = problem
            .step(i, &x, &u)
            .map_err(|source| ScenarioError::Solver(DdpError::Rollout { step: i, source }))?;
        x = next;
        us.push(u);
    }
    let traj = rollout(&problem, &us)?;
    Ok(IkBaseline {
        xs: traj.xs,
        us: traj.us,
        lambdas: traj.lambdas,
        cost: traj.cost,
        degenerate_steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_task(
    normal: &mut Normal,
    term: &CostTerm,
    scenario: &Scenario,
    i: usize,
    state: &State,
    frames: &[crate::model::LinkFrame<f64>],
    mass: &DMatrix<f64>,
    bias: &DVector<f64>,
    jc: &DMatrix<f64>,
    kp: f64,
    kd: f64,
    dt: f64,
    accel_rows: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>,
    unit_row: &dyn Fn(usize) -> DMatrix<f64>,
) {
    let tree = &scenario.tree;
    let n = tree.nv();
    let m = tree.n_joints();
    let p = jc.nrows();
    let nz = n + p;
    let q = &state.q;
    let v = &state.v;
    let w = &term.weight;
    // Point task: J v̇ + J̇v = a_ref − kp e − kd ė.
    let point_task = |normal: &mut Normal, jac: DMatrix<f64>, drift: [f64; 2], pos: [f64; 2], reference: &[[f64; 2]], w: &DMatrix<f64>| {
        let (rv, ra) = rates(reference, i, dt);
        let vel = &jac * v;
        let target = reference[i];
        let c = DVector::from_fn(2, |k, _| ra[k] - kp * (pos[k] - target[k]) - kd * (vel[k] - rv[k]) - drift[k]);
        normal.add(&accel_rows(&jac), &c, w);
    };
    match &term.residual {
        Residual::ComTracking { reference } => {
            let jac = com_jacobian(tree, q);
            let mut drift = [0.0; 2];
            for (link, frame) in tree.links().iter().zip(frames) {
                let r = frame_point(frame, link.com_offset);
                let a = point_bias_acceleration(frame, &r);
                drift[0] += link.mass * a[0] / tree.total_mass();
                drift[1] += link.mass * a[1] / tree.total_mass();
            }
            let pos = crate::model::com(tree, q);
            point_task(normal, jac, drift, pos, reference, w);
        }
        Residual::FrameTracking {
            link,
            offset,
            reference,
            velocity,
        } => {
            let jac = point_jacobian(tree, q, *link, *offset);
            let r = frame_point(&frames[*link], *offset);
            let drift = point_bias_acceleration(&frames[*link], &r);
            let pos = point_position(tree, q, *link, *offset);
            point_task(normal, jac.clone(), drift, pos, reference, &block(w, 0, 2));
            if *velocity {
                let vel = &jac * v;
                let c = DVector::from_fn(2, |k, _| -kd * vel[k] - drift[k]);
                normal.add(&accel_rows(&jac), &c, &block(w, 2, 2));
            }
        }
        Residual::OrientationGoal { target } => {
            let c = DVector::from_element(1, -kp * (q.base[2] - target) - kd * v[2]);
            normal.add(&unit_row(2), &c, w);
        }
        Residual::StateReg { reference } => {
            let qv = q.to_vec();
            for j in 0..n {
                let (wq, wv) = (w[(j, j)], w[(n + j, n + j)]);
                if wq > 0.0 {
                    let c = DVector::from_element(1, -kp * (qv[j] - reference[j]) - kd * (v[j] - reference[n + j]));
                    normal.add(&unit_row(j), &c, &DMatrix::from_element(1, 1, wq));
                }
                if wv > 0.0 {
                    let c = DVector::from_element(1, -kd * (v[j] - reference[n + j]));
                    normal.add(&unit_row(j), &c, &DMatrix::from_element(1, 1, wv));
                }
            }
        }
        Residual::JointLimitBarrier {
            lower,
            upper,
            margin,
            stiffness,
        } => {
            for j in 0..m {
                let qj = q.joints[j];
                let bound = if qj < lower[j] + margin {
                    lower[j] + margin
                } else if qj > upper[j] - margin {
                    upper[j] - margin
                } else {
                    continue;
                };
                let c = DVector::from_element(1, kp * (bound - qj) - kd * v[BASE_DOF + j]);
                normal.add(&unit_row(BASE_DOF + j), &c, &DMatrix::from_element(1, 1, w[(j, j)] * stiffness * stiffness));
            }
        }
        Residual::ControlReg { reference } => {
            // τ = [M v̇ + b − J_cᵀ λ]_joints
            let mut a = DMatrix::zeros(m, nz);
            a.view_mut((0, 0), (m, n)).copy_from(&mass.rows(BASE_DOF, m));
            a.view_mut((0, n), (m, p)).copy_from(&(-jc.columns(BASE_DOF, m).transpose()));
            let c = &reference[i] - bias.rows(BASE_DOF, m);
            normal.add(&a, &c, w);
        }
        Residual::ForceTracking { reference } => {
            let mut a = DMatrix::zeros(p, nz);
            a.view_mut((0, n), (p, p)).copy_from(&DMatrix::identity(p, p));
            normal.add(&a, &reference[i], w);
        }
        Residual::FrictionCone { .. } => {}
    }
}
