//! Planar optimal-control scenarios: multi-phase walking with scripted
//! references and zero-gravity reorientation, plus an instantaneous IK
//! baseline for comparison.

mod astronaut;
pub mod config;
mod diagnostics;
mod ik;
mod walker;

pub use astronaut::{astronaut_model, build_astronaut, AstronautConfig, AstronautWeights};
pub use diagnostics::{diagnostics, kkt_dump, write_diagnostics_csv, write_trajectory_csv, DiagnosticsReport, DiagnosticsRow};
pub use ik::{ik_baseline, IkBaseline};
pub use walker::{build_stride, kinematic_ik, lip_com_reference, walker_model, StrideConfig, StrideWeights};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact_dynamics::{ContactDynamics, DynamicsDerivatives, DynamicsError};
use crate::costs::{CostError, CostExpansion, CostModel};
use crate::ddp::{DdpError, Problem, SolverSettings};
use crate::model::{ContactPoint, KinematicTree, ModelError, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Solver(#[from] DdpError),
    #[error("stride of {stride} m is unreachable: {reason}")]
    Unreachable { stride: f64, reason: String },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    DoubleSupport,
    SingleSupport,
    Flight,
}

impl PhaseKind {
    pub fn label(&self) -> &'static str {
        match self {
            PhaseKind::DoubleSupport => "double_support",
            PhaseKind::SingleSupport => "single_support",
            PhaseKind::Flight => "flight",
        }
    }
}

/// A window of steps with a constant contact set.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPhase {
    pub kind: PhaseKind,
    pub contact_names: Vec<String>,
    pub contacts: Vec<ContactPoint>,
    /// Number of steps.
    pub duration: usize,
}

/// Scripted references over the horizon (`N + 1` samples).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct References {
    pub com: Vec<[f64; 2]>,
    pub zmp: Vec<f64>,
    /// Per named contact, the reference position of its point.
    pub feet: Vec<(String, Vec<[f64; 2]>)>,
    /// Per running step, reference forces of the active contacts.
    pub forces: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub tree: KinematicTree,
    /// Named contact points of the model, in model order.
    pub contact_points: Vec<(String, ContactPoint)>,
    pub phases: Vec<ContactPhase>,
    pub dt: f64,
    pub gravity: [f64; 2],
    pub damping: f64,
    pub initial_state: State,
    pub costs: CostModel,
    pub references: References,
    pub settings: SolverSettings,
    pub warm_start: Vec<DVector<f64>>,
    /// Proportional and derivative gains of the IK baseline tasks.
    pub ik_gains: [f64; 2],
    phase_of_step: Vec<usize>,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        tree: KinematicTree,
        contact_points: Vec<(String, ContactPoint)>,
        phases: Vec<ContactPhase>,
        dt: f64,
        gravity: [f64; 2],
        damping: f64,
        initial_state: State,
        costs: CostModel,
        references: References,
        settings: SolverSettings,
        ik_gains: [f64; 2],
    ) -> Result<Self, ScenarioError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(damping >= 0.0) {
            return Err(invalid("damping", "must be non-negative"));
        }
        let mut phase_of_step = Vec::new();
        for (i, phase) in phases.iter().enumerate() {
            if phase.duration == 0 {
                return Err(invalid(&format!("phases[{i}]"), "duration must be at least one step"));
            }
            for c in &phase.contacts {
                tree.validate_contact(c)?;
            }
            phase_of_step.extend(std::iter::repeat_n(i, phase.duration));
        }
        let horizon = phase_of_step.len();
        if horizon == 0 {
            return Err(invalid("phases", "empty horizon"));
        }
        if initial_state.nv() != tree.nv() {
            return Err(ModelError::Dimension {
                expected: tree.nv(),
                found: initial_state.nv(),
            }
            .into());
        }
        let dims: Vec<usize> = phase_of_step.iter().map(|&p| crate::model::contact_dim(&phases[p].contacts)).collect();
        costs.validate(horizon, &dims)?;
        settings.validate()?;
        let warm_start = vec![DVector::zeros(tree.n_joints()); horizon];
        Ok(Self {
            name: name.into(),
            tree,
            contact_points,
            phases,
            dt,
            gravity,
            damping,
            initial_state,
            costs,
            references,
            settings,
            warm_start,
            ik_gains,
            phase_of_step,
        })
    }

    pub fn horizon(&self) -> usize {
        self.phase_of_step.len()
    }

    pub fn phase_index(&self, step: usize) -> usize {
        self.phase_of_step[step.min(self.horizon() - 1)]
    }

    pub fn contacts_at(&self, step: usize) -> &[ContactPoint] {
        &self.phases[self.phase_index(step)].contacts
    }

    /// First step of each phase.
    pub fn phase_starts(&self) -> Vec<usize> {
        let mut start = 0;
        self.phases
            .iter()
            .map(|p| {
                let s = start;
                start += p.duration;
                s
            })
            .collect()
    }

    pub fn dynamics(&self) -> ContactDynamics<'_> {
        ContactDynamics::new(&self.tree, self.gravity).with_damping(self.damping)
    }

    pub fn problem(&self) -> RobotProblem<'_> {
        RobotProblem { scenario: self }
    }

    /// Same scenario with a different solver configuration.
    pub fn with_settings(mut self, settings: SolverSettings) -> Result<Self, ScenarioError> {
        settings.validate()?;
        self.settings = settings;
        Ok(self)
    }
}

/// Time step, environment and solver configuration shared by the builders.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub dt: f64,
    pub gravity: [f64; 2],
    pub damping: f64,
    pub settings: SolverSettings,
}

impl Setup {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            gravity: [0.0, -9.81],
            damping: crate::contact_dynamics::DEFAULT_DAMPING,
            settings: SolverSettings::default(),
        }
    }
}

/// Cost-term group shown in reports: the name up to the first `#`.
pub fn term_group(name: &str) -> &str {
    name.split('#').next().unwrap_or(name)
}

/// [`Problem`] over a scenario's contact dynamics and cost model.
pub struct RobotProblem<'a> {
    pub scenario: &'a Scenario,
}

impl RobotProblem<'_> {
    fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.scenario.costs.terms {
            let g = term_group(&t.name);
            if !out.iter().any(|o| o == g) {
                out.push(g.to_string());
            }
        }
        out
    }
}

impl Problem for RobotProblem<'_> {
    fn horizon(&self) -> usize {
        self.scenario.horizon()
    }

    fn state_dim(&self) -> usize {
        2 * self.scenario.tree.nv()
    }

    fn control_dim(&self) -> usize {
        self.scenario.tree.n_joints()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.scenario.initial_state.to_vector()
    }

    fn step(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), DynamicsError> {
        let s = self.scenario;
        let (next, lambda) = s.dynamics().step(&State::from_vector(x), u, s.contacts_at(i), s.dt)?;
        Ok((next.to_vector(), lambda))
    }

    fn derivatives(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DynamicsDerivatives, DynamicsError> {
        let s = self.scenario;
        s.dynamics().derivatives(&State::from_vector(x), u, s.contacts_at(i), s.dt)
    }

    fn running_cost(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> CostExpansion {
        self.scenario.costs.evaluate(x, Some(u), Some(lambda), i)
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> CostExpansion {
        self.scenario.costs.evaluate(x, None, None, self.horizon())
    }

    fn term_names(&self) -> Vec<String> {
        self.groups()
    }

    fn term_values(&self, i: usize, x: &DVector<f64>, u: Option<&DVector<f64>>, lambda: Option<&DVector<f64>>) -> Vec<f64> {
        let groups = self.groups();
        let mut out = vec![0.0; groups.len()];
        let values = self.scenario.costs.term_values(x, u, lambda, i);
        for (t, v) in self.scenario.costs.terms.iter().zip(values) {
            let g = groups.iter().position(|g| g == term_group(&t.name)).expect("known group");
            out[g] += v;
        }
        out
    }
}
