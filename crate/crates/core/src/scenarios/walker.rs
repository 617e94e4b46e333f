//! Five-link point-foot biped and the multi-step stride scenario.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{invalid, ik_baseline, ContactPhase, PhaseKind, References, Scenario, ScenarioError, Setup};
use crate::costs::{CostModel, CostTerm, Residual};
use crate::model::{
    com, com_jacobian, point_jacobian, point_position, Configuration, ContactPoint, KinematicTree, Link, ModelDescription, Placement, State,
    BASE_DOF,
};

const THIGH: f64 = 0.35;
const SHANK: f64 = 0.35;

/// Torso (floating base, hip at its origin) with two thigh/shank legs.
/// 53 kg torso, 4 kg thighs, 2 kg shanks: 65 kg in total.
pub fn walker_model() -> ModelDescription {
    let leg = |side: &str, parent: usize| {
        [
            Link::new(format!("{side}_thigh"), 4.0, [0.0, -THIGH / 2.0], 4.0 * THIGH * THIGH / 12.0).attached(parent, Placement::default()),
            Link::new(format!("{side}_shank"), 2.0, [0.0, -SHANK / 2.0], 2.0 * SHANK * SHANK / 12.0),
        ]
    };
    let [lt, ls] = leg("left", 0);
    let [rt, rs] = leg("right", 0);
    let knee = Placement {
        angle: 0.0,
        translation: [0.0, -THIGH],
    };
    let links = vec![Link::new("torso", 53.0, [0.0, 0.3], 2.0), lt, ls.attached(1, knee), rt, rs.attached(3, knee)];
    let tree = KinematicTree::new(links).expect("valid walker");
    let mut contacts = BTreeMap::new();
    contacts.insert("left_foot".to_string(), ContactPoint::point(2, [0.0, -SHANK]));
    contacts.insert("right_foot".to_string(), ContactPoint::point(4, [0.0, -SHANK]));
    ModelDescription { tree, contacts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrideWeights {
    pub com: [f64; 2],
    pub torso: f64,
    pub posture: f64,
    pub velocity: f64,
    pub control: f64,
    pub swing: f64,
    /// Position and velocity weights on the swing foot before touchdown.
    pub touchdown: [f64; 2],
    /// Position and velocity weights on the feet in contact.
    pub stance: [f64; 2],
    pub force: f64,
    pub friction: f64,
    pub barrier: f64,
    pub terminal_com: f64,
    pub terminal_velocity: f64,
}

impl Default for StrideWeights {
    fn default() -> Self {
        Self {
            com: [1e4, 1e4],
            torso: 1e3,
            posture: 1.0,
            velocity: 0.1,
            control: 1e-4,
            swing: 1e4,
            touchdown: [1e5, 1e3],
            stance: [1e4, 1e4],
            force: 1e-5,
            friction: 1.0,
            barrier: 1.0,
            terminal_com: 1e5,
            terminal_velocity: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrideConfig {
    /// Distance each foot travels per swing (m); the feet stand half of
    /// it apart in double support.
    pub stride_length: f64,
    pub steps: usize,
    pub swing_height: f64,
    /// Phase durations (s).
    pub initial_double_support: f64,
    pub single_support: f64,
    pub double_support: f64,
    pub final_double_support: f64,
    /// Length of the pre-touchdown window (s).
    pub touchdown_window: f64,
    pub friction: f64,
    pub hip_limits: [f64; 2],
    pub knee_limits: [f64; 2],
    pub limit_margin: f64,
    pub barrier_stiffness: f64,
    pub ik_gains: [f64; 2],
    pub weights: StrideWeights,
}

impl Default for StrideConfig {
    fn default() -> Self {
        Self {
            stride_length: 0.4,
            steps: 3,
            swing_height: 0.05,
            initial_double_support: 0.6,
            single_support: 0.6,
            double_support: 0.2,
            final_double_support: 0.6,
            touchdown_window: 0.05,
            friction: 0.7,
            hip_limits: [-1.6, 1.6],
            knee_limits: [-2.4, 0.0],
            limit_margin: 0.1,
            barrier_stiffness: 10.0,
            ik_gains: [100.0, 20.0],
            weights: StrideWeights::default(),
        }
    }
}

impl StrideConfig {
    pub fn new(stride_length: f64, steps: usize) -> Self {
        Self {
            stride_length,
            steps,
            ..Default::default()
        }
    }

    /// Total duration implied by the phase timings (s).
    pub fn duration(&self) -> f64 {
        if self.steps == 0 {
            return self.initial_double_support + self.final_double_support;
        }
        self.initial_double_support
            + self.steps as f64 * self.single_support
            + (self.steps - 1) as f64 * self.double_support
            + self.final_double_support
    }

    /// Hip height for the stride, or an unreachability reason.
    fn hip_height(&self, leg: f64) -> Result<f64, String> {
        let reach = 0.97 * leg;
        let half = self.stride_length / 2.0;
        let sq = reach * reach - half * half;
        if sq <= 0.0 {
            return Err(format!("feet {half} m apart exceed the {reach:.3} m leg reach"));
        }
        Ok((0.9 * leg).min(sq.sqrt()))
    }
}

/// Steps in `seconds`, which must be a whole multiple of `dt`.
pub(crate) fn to_steps(field: &str, seconds: f64, dt: f64) -> Result<usize, ScenarioError> {
    let steps = seconds / dt;
    if !(seconds >= 0.0) || (steps - steps.round()).abs() > 1e-6 {
        return Err(invalid(field, format!("{seconds} s is not a whole number of {dt} s steps")));
    }
    Ok(steps.round() as usize)
}

/// CoM trajectory of the linear inverted pendulum `c̈ = ω²(c − p)` with
/// zero velocity at both ends, discretized on the step grid.
pub fn lip_com_reference(zmp: &[f64], dt: f64, height: f64, gravity: f64) -> Vec<f64> {
    let n = zmp.len();
    if n < 3 {
        return zmp.to_vec();
    }
    let w2 = gravity / height;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    a[(0, 0)] = -1.0;
    a[(0, 1)] = 1.0;
    a[(n - 1, n - 2)] = -1.0;
    a[(n - 1, n - 1)] = 1.0;
    let h2 = dt * dt;
    for i in 1..n - 1 {
        a[(i, i - 1)] = 1.0 / h2;
        a[(i, i)] = -2.0 / h2 - w2;
        a[(i, i + 1)] = 1.0 / h2;
        b[i] = -w2 * zmp[i];
    }
    a.lu().solve(&b).expect("pendulum system is nonsingular").iter().copied().collect()
}

/// Quintic smoothstep on [0, 1].
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Newton solve for a configuration with the given CoM, base angle and
/// contact-point positions. Returns the final residual norm on failure.
pub fn kinematic_ik(
    tree: &KinematicTree,
    com_target: [f64; 2],
    base_angle: f64,
    points: &[(ContactPoint, [f64; 2])],
    guess: &Configuration,
) -> Result<Configuration, f64> {
    let n = tree.nv();
    let rows = 3 + 2 * points.len();
    let mut q = guess.to_vector();
    let residual = |q: &DVector<f64>| {
        let cfg = Configuration::from_slice(q.as_slice());
        let c = com(tree, &cfg);
        let mut r = DVector::zeros(rows);
        r[0] = c[0] - com_target[0];
        r[1] = c[1] - com_target[1];
        r[2] = q[2] - base_angle;
        for (k, (p, target)) in points.iter().enumerate() {
            let at = point_position(tree, &cfg, p.link, p.offset);
            r[3 + 2 * k] = at[0] - target[0];
            r[4 + 2 * k] = at[1] - target[1];
        }
        r
    };
    let mut r = residual(&q);
    for _ in 0..100 {
        if r.amax() < 1e-12 {
            break;
        }
        let cfg = Configuration::from_slice(q.as_slice());
        let mut jac = DMatrix::zeros(rows, n);
        jac.rows_mut(0, 2).copy_from(&com_jacobian(tree, &cfg));
        jac[(2, 2)] = 1.0;
        for (k, (p, _)) in points.iter().enumerate() {
            jac.rows_mut(3 + 2 * k, 2).copy_from(&point_jacobian(tree, &cfg, p.link, p.offset));
        }
        let jt = jac.transpose();
        let normal = &jac * &jt + DMatrix::identity(rows, rows) * 1e-12;
        let Some(step) = normal.cholesky().map(|c| &jt * c.solve(&r)) else {
            return Err(r.norm());
        };
        let mut alpha = 1.0;
        loop {
            let trial = &q - &step * alpha;
            let rt = residual(&trial);
            if rt.norm() < r.norm() || alpha < 1e-4 {
                q = trial;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if r.amax() < 1e-9 {
        Ok(Configuration::from_slice(q.as_slice()))
    } else {
        Err(r.norm())
    }
}

/// Hip and knee angles putting the foot at `d` from the hip (knee forward).
fn leg_ik(d: [f64; 2]) -> Option<[f64; 2]> {
    let dist2 = d[0] * d[0] + d[1] * d[1];
    let cos_k = (dist2 - THIGH * THIGH - SHANK * SHANK) / (2.0 * THIGH * SHANK);
    if !(-1.0..=1.0).contains(&cos_k) {
        return None;
    }
    let knee = -cos_k.acos();
    let dir = d[0].atan2(-d[1]);
    let lean = (SHANK * knee.sin()).atan2(THIGH + SHANK * knee.cos());
    Some([dir - lean, knee])
}

struct Plan {
    phases: Vec<(PhaseKind, Vec<&'static str>, usize)>,
    /// Per step, `(left x, right x)` references and swing lift.
    feet: Vec<[[f64; 2]; 2]>,
    zmp: Vec<f64>,
    /// Per single-support phase: swing foot index and step window.
    swings: Vec<(usize, usize, usize)>,
}

fn plan(cfg: &StrideConfig, dt: f64) -> Result<Plan, ScenarioError> {
    let s = cfg.stride_length / 2.0;
    let ds0 = to_steps("initial_double_support", cfg.initial_double_support, dt)?;
    let fin = to_steps("final_double_support", cfg.final_double_support, dt)?;
    let both = vec!["left_foot", "right_foot"];
    if s == 0.0 || cfg.steps == 0 {
        let n = ds0 + fin;
        return Ok(Plan {
            phases: vec![(PhaseKind::DoubleSupport, both, n)],
            feet: vec![[[0.0, 0.0], [0.0, 0.0]]; n + 1],
            zmp: vec![0.0; n + 1],
            swings: vec![],
        });
    }
    let ss = to_steps("single_support", cfg.single_support, dt)?;
    let ds = to_steps("double_support", cfg.double_support, dt)?;
    let mut phases = vec![(PhaseKind::DoubleSupport, both.clone(), ds0)];
    for k in 0..cfg.steps {
        let stance = if k % 2 == 0 { "right_foot" } else { "left_foot" };
        phases.push((PhaseKind::SingleSupport, vec![stance], ss));
        let last = k + 1 == cfg.steps;
        phases.push((PhaseKind::DoubleSupport, both.clone(), if last { fin } else { ds }));
    }
    let n: usize = phases.iter().map(|p| p.2).sum();
    let mut x = [0.0, s];
    let mut feet = Vec::with_capacity(n + 1);
    let mut zmp = Vec::with_capacity(n + 1);
    let mut swings = Vec::new();
    let mut start = 0;
    for (pi, (kind, _, len)) in phases.iter().enumerate() {
        for j in 0..*len {
            let t = j as f64 / *len as f64;
            let step = pi.div_ceil(2);
            match kind {
                PhaseKind::SingleSupport => {
                    let swing = (step - 1) % 2;
                    let sigma = smoothstep(t);
                    let mut f = [[x[0], 0.0], [x[1], 0.0]];
                    f[swing] = [x[swing] + 2.0 * s * sigma, cfg.swing_height * (std::f64::consts::PI * sigma).sin()];
                    feet.push(f);
                    zmp.push(x[1 - swing]);
                }
                _ => {
                    feet.push([[x[0], 0.0], [x[1], 0.0]]);
                    let mid = 0.5 * (x[0] + x[1]);
                    let z = if pi == 0 {
                        let front = x[1];
                        if t < 0.5 {
                            mid
                        } else {
                            mid + (front - mid) * smoothstep(2.0 * t - 1.0)
                        }
                    } else if pi + 1 == phases.len() {
                        let from = if cfg.steps % 2 == 1 { x[1] } else { x[0] };
                        if t < 0.5 {
                            from + (mid - from) * smoothstep(2.0 * t)
                        } else {
                            mid
                        }
                    } else {
                        let (from, to) = if step % 2 == 1 { (x[1], x[0]) } else { (x[0], x[1]) };
                        from + (to - from) * smoothstep(t)
                    };
                    zmp.push(z);
                }
            }
        }
        if *kind == PhaseKind::SingleSupport {
            let swing = pi.div_ceil(2) - 1;
            let foot = swing % 2;
            swings.push((foot, start, start + len));
            x[foot] += 2.0 * s;
        }
        start += len;
    }
    feet.push([[x[0], 0.0], [x[1], 0.0]]);
    zmp.push(*zmp.last().expect("non-empty"));
    Ok(Plan { phases, feet, zmp, swings })
}

/// Multi-step walking: alternating single and double support, LIP CoM
/// reference at constant height, half-sine swing-foot lift, static force
/// references per phase, IK-baseline warm start.
pub fn build_stride(model: &ModelDescription, cfg: &StrideConfig, setup: &Setup) -> Result<Scenario, ScenarioError> {
    let s = cfg.stride_length;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid("stride_length", "must be a non-negative length"));
    }
    let unreachable = |reason: String| ScenarioError::Unreachable { stride: s, reason };
    let tree = model.tree.clone();
    if tree.n_joints() != 4 {
        return Err(invalid("model", "stride needs a torso with two two-link legs"));
    }
    let left = model.contact("left_foot")?;
    let right = model.contact("right_foot")?;
    let dt = setup.dt;
    let plan = plan(cfg, dt)?;
    let n = plan.feet.len() - 1;
    let leg = THIGH + SHANK;
    let hip = cfg.hip_height(leg).map_err(unreachable)?;

    // Posture at the start, to fix the CoM height.
    let feet0 = plan.feet[0];
    let mid0 = 0.5 * (feet0[0][0] + feet0[1][0]);
    let leg_guess = |hip_x: f64, feet: &[[f64; 2]; 2]| -> Result<Configuration, ScenarioError> {
        let mut joints = Vec::new();
        for f in feet {
            let a = leg_ik([f[0] - hip_x, f[1] - hip]).ok_or_else(|| unreachable(format!("foot at {:?} is outside the leg workspace", f)))?;
            joints.extend(a);
        }
        Ok(Configuration::new([hip_x, hip, 0.0], joints))
    };
    let q0 = leg_guess(mid0, &feet0)?;
    let height = com(&tree, &q0)[1];
    let g = -setup.gravity[1];
    let com_x = if g > 0.0 { lip_com_reference(&plan.zmp, dt, height, g) } else { plan.zmp.clone() };
    let com_ref: Vec<[f64; 2]> = com_x.iter().map(|&x| [x, height]).collect();

    // Reference postures along the horizon.
    let mut postures = Vec::with_capacity(n + 1);
    let mut guess = q0.clone();
    for i in 0..=n {
        let f = plan.feet[i];
        let targets = [(left.clone(), f[0]), (right.clone(), f[1])];
        if i == 0 {
            guess = leg_guess(com_x[i], &f)?;
        }
        let q = kinematic_ik(&tree, com_ref[i], 0.0, &targets, &guess)
            .map_err(|r| unreachable(format!("no posture reaches the references at step {i} (residual {r:.2e})")))?;
        guess = q.clone();
        postures.push(q);
    }

    let mut phases = Vec::new();
    let mut starts = Vec::new();
    let mut start = 0;
    for (kind, names, len) in &plan.phases {
        let contacts = names.iter().map(|nm| model.contact(nm)).collect::<Result<Vec<_>, _>>()?;
        phases.push(ContactPhase {
            kind: *kind,
            contact_names: names.iter().map(|s| s.to_string()).collect(),
            contacts,
            duration: *len,
        });
        starts.push(start);
        start += len;
    }

    let dynamics = crate::contact_dynamics::ContactDynamics::new(&tree, setup.gravity).with_damping(setup.damping);
    let mut force_refs = Vec::with_capacity(n);
    let mut phase_forces = Vec::new();
    for (phase, &st) in phases.iter().zip(&starts) {
        let (_, lambda) = dynamics.static_contact_forces(&postures[st + phase.duration / 2], &phase.contacts)?;
        for _ in 0..phase.duration {
            force_refs.push(lambda.clone());
        }
        phase_forces.push(lambda);
    }

    let w = &cfg.weights;
    let nv = tree.nv();
    let m = tree.n_joints();
    let standing = postures[0].to_vector();
    let mut x_ref = DVector::zeros(2 * nv);
    x_ref.rows_mut(0, nv).copy_from(&standing);
    let mut posture_w = vec![0.0; 2 * nv];
    posture_w[BASE_DOF..nv].fill(w.posture);
    posture_w[nv..].fill(w.velocity);
    let mut terminal_w = vec![0.0; 2 * nv];
    terminal_w[nv..].fill(w.terminal_velocity);
    let mut terms = vec![
        CostTerm::diagonal("com", Residual::ComTracking { reference: com_ref.clone() }, &w.com, 0..n),
        CostTerm::diagonal("torso", Residual::OrientationGoal { target: 0.0 }, &[w.torso], 0..n),
        CostTerm::diagonal("posture", Residual::StateReg { reference: x_ref.clone() }, &posture_w, 0..n),
        CostTerm::diagonal("control", Residual::ControlReg { reference: vec![DVector::zeros(m); n] }, &vec![w.control; m], 0..n),
        CostTerm::diagonal(
            "limits",
            Residual::JointLimitBarrier {
                lower: vec![cfg.hip_limits[0], cfg.knee_limits[0], cfg.hip_limits[0], cfg.knee_limits[0]],
                upper: vec![cfg.hip_limits[1], cfg.knee_limits[1], cfg.hip_limits[1], cfg.knee_limits[1]],
                margin: cfg.limit_margin,
                stiffness: cfg.barrier_stiffness,
            },
            &vec![w.barrier; m],
            0..n + 1,
        ),
        CostTerm::diagonal("terminal#com", Residual::ComTracking { reference: com_ref.clone() }, &[w.terminal_com; 2], n..n + 1),
        CostTerm::diagonal("terminal#velocity", Residual::StateReg { reference: x_ref }, &terminal_w, n..n + 1),
    ];
    let touchdown = to_steps("touchdown_window", cfg.touchdown_window, dt)?;
    let feet_pts = [left.clone(), right.clone()];
    let mut foot_refs: Vec<(String, Vec<[f64; 2]>)> = vec![("left_foot".into(), vec![]), ("right_foot".into(), vec![])];
    for f in &plan.feet {
        foot_refs[0].1.push(f[0]);
        foot_refs[1].1.push(f[1]);
    }
    for (k, &(foot, a, b)) in plan.swings.iter().enumerate() {
        let p = &feet_pts[foot];
        let cut = b.saturating_sub(touchdown).max(a);
        terms.push(CostTerm::diagonal(
            format!("swing#{}", k + 1),
            Residual::FrameTracking {
                link: p.link,
                offset: p.offset,
                reference: foot_refs[foot].1.clone(),
                velocity: false,
            },
            &[w.swing; 2],
            a..cut,
        ));
        terms.push(CostTerm::diagonal(
            format!("touchdown#{}", k + 1),
            Residual::FrameTracking {
                link: p.link,
                offset: p.offset,
                reference: foot_refs[foot].1.clone(),
                velocity: true,
            },
            &[w.touchdown[0], w.touchdown[0], w.touchdown[1], w.touchdown[1]],
            cut..b + 1,
        ));
    }
    for (pi, (phase, &st)) in phases.iter().zip(&starts).enumerate() {
        for name in &phase.contact_names {
            let foot = usize::from(name == "right_foot");
            let p = &feet_pts[foot];
            terms.push(CostTerm::diagonal(
                format!("stance#{pi}{}", &name[..1]),
                Residual::FrameTracking {
                    link: p.link,
                    offset: p.offset,
                    reference: foot_refs[foot].1.clone(),
                    velocity: true,
                },
                &[w.stance[0], w.stance[0], w.stance[1], w.stance[1]],
                st..st + phase.duration + 1,
            ));
        }
        let p = phase_forces[pi].len();
        let window = st..st + phase.duration;
        let mut reference = vec![DVector::zeros(0); st];
        reference.extend(std::iter::repeat_n(phase_forces[pi].clone(), phase.duration));
        terms.push(CostTerm::diagonal(format!("force#{pi}"), Residual::ForceTracking { reference }, &vec![w.force; p], window.clone()));
        let mut row = 0;
        let mut pairs = Vec::new();
        for c in &phase.contacts {
            if c.tangential && c.normal {
                pairs.push((row, row + 1));
            }
            row += c.dims();
        }
        let mut all = vec![vec![]; st];
        all.extend(std::iter::repeat_n(pairs.clone(), phase.duration));
        terms.push(CostTerm::diagonal(
            format!("friction#{pi}"),
            Residual::FrictionCone { pairs: all, mu: cfg.friction },
            &vec![w.friction; 2 * pairs.len()],
            window,
        ));
    }
    let costs = CostModel::new(tree.clone(), terms);
    let contact_points = model.contacts.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let name = if s == 0.0 { "standing" } else { "stride" };
    let mut scenario = Scenario::new(
        name,
        tree,
        contact_points,
        phases,
        dt,
        setup.gravity,
        setup.damping,
        State::at_rest(postures[0].clone()),
        costs,
        References {
            com: com_ref,
            zmp: plan.zmp,
            feet: foot_refs,
            forces: force_refs,
        },
        setup.settings.clone(),
        cfg.ik_gains,
    )?;
    scenario.warm_start = ik_baseline(&scenario)?.us;
    Ok(scenario)
}
