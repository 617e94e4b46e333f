//! Free-floating three-link body reorienting itself in zero gravity.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::walker::to_steps;
use super::{invalid, ContactPhase, PhaseKind, References, Scenario, ScenarioError, Setup};
use crate::costs::{CostModel, CostTerm, Residual};
use crate::model::{Configuration, KinematicTree, Link, ModelDescription, Placement, State, BASE_DOF};

/// Torso base with a thigh and shank in the sagittal plane.
pub fn astronaut_model() -> ModelDescription {
    let tree = KinematicTree::new(vec![
        Link::new("torso", 20.0, [0.0, 0.25], 0.5),
        Link::new("thigh", 8.0, [0.0, -0.2], 8.0 * 0.16 / 12.0).attached(0, Placement::default()),
        Link::new("shank", 4.0, [0.0, -0.2], 4.0 * 0.16 / 12.0).attached(
            1,
            Placement {
                angle: 0.0,
                translation: [0.0, -0.4],
            },
        ),
    ])
    .expect("valid astronaut");
    ModelDescription {
        tree,
        contacts: BTreeMap::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AstronautWeights {
    pub orientation: f64,
    pub terminal_velocity: f64,
    pub posture: f64,
    pub velocity: f64,
    pub control: f64,
    pub barrier: f64,
}

impl Default for AstronautWeights {
    fn default() -> Self {
        Self {
            orientation: 1e4,
            terminal_velocity: 1e2,
            posture: 1e-2,
            velocity: 1e-3,
            control: 1e-2,
            barrier: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AstronautConfig {
    /// Base rotation goal (rad).
    pub target_rotation: f64,
    /// Horizon length (s).
    pub duration: f64,
    pub joint_limits: [f64; 2],
    pub limit_margin: f64,
    pub barrier_stiffness: f64,
    pub ik_gains: [f64; 2],
    pub weights: AstronautWeights,
}

impl Default for AstronautConfig {
    fn default() -> Self {
        Self {
            target_rotation: std::f64::consts::FRAC_PI_2,
            duration: 5.0,
            joint_limits: [-2.5, 2.5],
            limit_margin: 0.1,
            barrier_stiffness: 10.0,
            ik_gains: [100.0, 20.0],
            weights: AstronautWeights::default(),
        }
    }
}

impl AstronautConfig {
    pub fn new(target_rotation: f64, duration: f64) -> Self {
        Self {
            target_rotation,
            duration,
            ..Default::default()
        }
    }
}

/// Flight phase over the whole horizon, terminal orientation goal, posture
/// and torque regularization, joint barriers, zero warm start.
pub fn build_astronaut(model: &ModelDescription, cfg: &AstronautConfig, setup: &Setup) -> Result<Scenario, ScenarioError> {
    if !(cfg.target_rotation.abs() <= 2.0 * std::f64::consts::PI) {
        return Err(invalid("target_rotation", "must lie within [-2π, 2π]"));
    }
    let n = to_steps("duration", cfg.duration, setup.dt)?;
    if n == 0 {
        return Err(invalid("duration", "must be at least one step"));
    }
    let tree = model.tree.clone();
    let nv = tree.nv();
    let m = tree.n_joints();
    let q0 = Configuration::neutral(&tree);
    let mut x_ref = DVector::zeros(2 * nv);
    x_ref.rows_mut(0, nv).copy_from(&q0.to_vector());
    let w = &cfg.weights;
    let mut posture = vec![0.0; 2 * nv];
    let mut terminal = vec![0.0; 2 * nv];
    posture[BASE_DOF..nv].fill(w.posture);
    posture[nv..].fill(w.velocity);
    terminal[nv..].fill(w.terminal_velocity);
    let terms = vec![
        CostTerm::diagonal("posture", Residual::StateReg { reference: x_ref.clone() }, &posture, 0..n),
        CostTerm::diagonal("control", Residual::ControlReg { reference: vec![DVector::zeros(m); n] }, &vec![w.control; m], 0..n),
        CostTerm::diagonal(
            "limits",
            Residual::JointLimitBarrier {
                lower: vec![cfg.joint_limits[0]; m],
                upper: vec![cfg.joint_limits[1]; m],
                margin: cfg.limit_margin,
                stiffness: cfg.barrier_stiffness,
            },
            &vec![w.barrier; m],
            0..n + 1,
        ),
        CostTerm::diagonal("terminal#orientation", Residual::OrientationGoal { target: cfg.target_rotation }, &[w.orientation], n..n + 1),
        CostTerm::diagonal("terminal#velocity", Residual::StateReg { reference: x_ref }, &terminal, n..n + 1),
    ];
    let phases = vec![ContactPhase {
        kind: PhaseKind::Flight,
        contact_names: vec![],
        contacts: vec![],
        duration: n,
    }];
    Scenario::new(
        "astronaut",
        tree.clone(),
        vec![],
        phases,
        setup.dt,
        [0.0, 0.0],
        setup.damping,
        State::at_rest(q0),
        CostModel::new(tree, terms),
        References {
            forces: vec![DVector::zeros(0); n],
            ..Default::default()
        },
        setup.settings.clone(),
        cfg.ik_gains,
    )
}
