//! Weighted residual costs `½‖r(x, u, λ)‖²_Q` with exact gradients and
//! Gauss-Newton Hessians.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::kinematics::{frame_point, point_velocity_of};
use crate::model::scalar::Dual;
use crate::model::{com, com_jacobian, link_frames, point_jacobian, point_position, Configuration, KinematicTree, BASE_DOF};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost term {term:?}: {reason}")]
    Invalid { term: String, reason: String },
}

/// Derivatives of a stage cost. Terminal expansions have empty `u`/`λ` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion {
    pub value: f64,
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_lambda: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
    pub l_ux: DMatrix<f64>,
    pub l_ll: DMatrix<f64>,
}

impl CostExpansion {
    pub fn zeros(nx: usize, nu: usize, nl: usize) -> Self {
        Self {
            value: 0.0,
            l_x: DVector::zeros(nx),
            l_u: DVector::zeros(nu),
            l_lambda: DVector::zeros(nl),
            l_xx: DMatrix::zeros(nx, nx),
            l_uu: DMatrix::zeros(nu, nu),
            l_ux: DMatrix::zeros(nu, nx),
            l_ll: DMatrix::zeros(nl, nl),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    ComTracking,
    FrameTracking,
    ForceTracking,
    ControlReg,
    StateReg,
    JointLimitBarrier,
    OrientationGoal,
    FrictionCone,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Residual {
    /// `c(q) − c_ref[i]`.
    ComTracking { reference: Vec<[f64; 2]> },
    /// Position of a link point against `reference[i]`; with `velocity`,
    /// the point velocity is appended and tracked to zero.
    FrameTracking {
        link: usize,
        offset: [f64; 2],
        reference: Vec<[f64; 2]>,
        velocity: bool,
    },
    /// `λ − λ_ref[i]`.
    ForceTracking { reference: Vec<DVector<f64>> },
    /// `u − u_ref[i]`.
    ControlReg { reference: Vec<DVector<f64>> },
    /// `x − x_ref`.
    StateReg { reference: DVector<f64> },
    /// One-sided ramp outside `[lower + margin, upper − margin]` per joint.
    JointLimitBarrier {
        lower: Vec<f64>,
        upper: Vec<f64>,
        margin: f64,
        stiffness: f64,
    },
    /// Base angle minus target.
    OrientationGoal { target: f64 },
    /// `max(0, ±λ_t − μ λ_n)` for each `(tangential row, normal row)` pair.
    FrictionCone { pairs: Vec<Vec<(usize, usize)>>, mu: f64 },
}

impl Residual {
    pub fn kind(&self) -> CostKind {
        match self {
            Residual::ComTracking { .. } => CostKind::ComTracking,
            Residual::FrameTracking { .. } => CostKind::FrameTracking,
            Residual::ForceTracking { .. } => CostKind::ForceTracking,
            Residual::ControlReg { .. } => CostKind::ControlReg,
            Residual::StateReg { .. } => CostKind::StateReg,
            Residual::JointLimitBarrier { .. } => CostKind::JointLimitBarrier,
            Residual::OrientationGoal { .. } => CostKind::OrientationGoal,
            Residual::FrictionCone { .. } => CostKind::FrictionCone,
        }
    }

    fn needs_control(&self) -> bool {
        matches!(self, Residual::ControlReg { .. })
    }

    fn needs_forces(&self) -> bool {
        matches!(self, Residual::ForceTracking { .. } | Residual::FrictionCone { .. })
    }

    fn dim(&self, tree: &KinematicTree, step: usize) -> usize {
        match self {
            Residual::ComTracking { .. } => 2,
            Residual::OrientationGoal { .. } => 1,
            Residual::FrameTracking { velocity: true, .. } => 4,
            Residual::FrameTracking { velocity: false, .. } => 2,
            Residual::ForceTracking { reference } => reference[step].len(),
            Residual::ControlReg { reference } => reference[step].len(),
            Residual::StateReg { reference } => reference.len(),
            Residual::JointLimitBarrier { .. } => tree.n_joints(),
            Residual::FrictionCone { pairs, .. } => 2 * pairs[step].len(),
        }
    }
}

pub fn joint_limit_barrier(q: &[f64], lower: &[f64], upper: &[f64], margin: f64, stiffness: f64) -> DVector<f64> {
    DVector::from_fn(q.len(), |j, _| {
        stiffness * ((lower[j] + margin - q[j]).max(0.0) + (q[j] - (upper[j] - margin)).max(0.0))
    })
}

pub fn force_tracking(lambda: &DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    lambda - reference
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub name: String,
    pub residual: Residual,
    pub weight: DMatrix<f64>,
    /// Active steps; the terminal step is `N`.
    pub window: Range<usize>,
}

impl CostTerm {
    pub fn new(name: impl Into<String>, residual: Residual, weight: DMatrix<f64>, window: Range<usize>) -> Self {
        Self {
            name: name.into(),
            residual,
            weight,
            window,
        }
    }

    /// Diagonal weight helper.
    pub fn diagonal(name: impl Into<String>, residual: Residual, weights: &[f64], window: Range<usize>) -> Self {
        Self::new(name, residual, DMatrix::from_diagonal(&DVector::from_column_slice(weights)), window)
    }

    pub fn kind(&self) -> CostKind {
        self.residual.kind()
    }

    fn active(&self, step: usize, terminal: bool) -> bool {
        self.window.contains(&step)
            && !(terminal && (self.residual.needs_control() || self.residual.needs_forces()))
    }
}

/// Residual, and its Jacobians with respect to `x`, `u` and `λ`.
struct Linearized {
    r: DVector<f64>,
    r_x: Option<DMatrix<f64>>,
    r_u: Option<DMatrix<f64>>,
    r_l: Option<DMatrix<f64>>,
}

/// A set of cost terms over a fixed model and horizon.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub tree: KinematicTree,
    pub terms: Vec<CostTerm>,
}

impl CostModel {
    pub fn new(tree: KinematicTree, terms: Vec<CostTerm>) -> Self {
        Self { tree, terms }
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    /// Checks weights and references against the horizon and, per running
    /// step, the force dimension.
    pub fn validate(&self, horizon: usize, force_dims: &[usize]) -> Result<(), CostError> {
        let nx = 2 * self.tree.nv();
        let nu = self.tree.n_joints();
        for term in &self.terms {
            let bad = |reason: String| CostError::Invalid {
                term: term.name.clone(),
                reason,
            };
            let w = &term.weight;
            if w.nrows() != w.ncols() {
                return Err(bad("weight must be square".into()));
            }
            if (w - w.transpose()).amax() > 1e-12 || w.iter().any(|v| !v.is_finite()) {
                return Err(bad("weight must be symmetric and finite".into()));
            }
            if w.nrows() > 0 && w.clone().symmetric_eigenvalues().min() < -1e-12 {
                return Err(bad("weight must be positive semidefinite".into()));
            }
            if term.window.end > horizon + 1 {
                return Err(bad(format!("window {:?} exceeds the horizon {horizon}", term.window)));
            }
            let need = |len: usize, what: &str| {
                if len < term.window.end {
                    Err(bad(format!("{what} has {len} samples, window needs {}", term.window.end)))
                } else {
                    Ok(())
                }
            };
            match &term.residual {
                Residual::ComTracking { reference } => need(reference.len(), "reference")?,
                Residual::FrameTracking { link, reference, .. } => {
                    if *link >= self.tree.n_links() {
                        return Err(bad(format!("unknown link {link}")));
                    }
                    need(reference.len(), "reference")?
                }
                Residual::ForceTracking { reference } => need(reference.len(), "reference")?,
                Residual::ControlReg { reference } => need(reference.len(), "reference")?,
                Residual::FrictionCone { pairs, mu } => {
                    need(pairs.len(), "contact pairs")?;
                    if !(*mu > 0.0) {
                        return Err(bad("friction coefficient must be positive".into()));
                    }
                }
                Residual::StateReg { reference } => {
                    if reference.len() != nx {
                        return Err(bad(format!("reference has {} entries, expected {nx}", reference.len())));
                    }
                }
                Residual::JointLimitBarrier { lower, upper, margin, stiffness } => {
                    if lower.len() != nu || upper.len() != nu {
                        return Err(bad(format!("limits need {nu} entries")));
                    }
                    if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                        return Err(bad("lower limit must be below upper limit".into()));
                    }
                    if *margin < 0.0 || *stiffness < 0.0 {
                        return Err(bad("margin and stiffness must be non-negative".into()));
                    }
                }
                Residual::OrientationGoal { .. } => {}
            }
            for step in term.window.clone() {
                let terminal = step == horizon;
                if !term.active(step, terminal) {
                    continue;
                }
                let dim = term.residual.dim(&self.tree, step);
                if dim != w.nrows() {
                    return Err(bad(format!("step {step}: residual has {dim} entries, weight is {}x{}", w.nrows(), w.ncols())));
                }
                if let Residual::ControlReg { reference } = &term.residual {
                    if reference[step].len() != nu {
                        return Err(bad(format!("step {step}: control reference needs {nu} entries")));
                    }
                }
                if !terminal {
                    let p = force_dims.get(step).copied().unwrap_or(0);
                    match &term.residual {
                        Residual::ForceTracking { reference } if reference[step].len() != p => {
                            return Err(bad(format!(
                                "step {step}: force reference has {} entries, contact set has {p}",
                                reference[step].len()
                            )));
                        }
                        Residual::FrictionCone { pairs, .. } if pairs[step].iter().any(|&(t, n)| t >= p || n >= p) => {
                            return Err(bad(format!("step {step}: force rows out of range for {p} contact dims")));
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    fn linearize(&self, term: &CostTerm, x: &DVector<f64>, u: Option<&DVector<f64>>, lambda: Option<&DVector<f64>>, step: usize, jac: bool) -> Linearized {
        let tree = &self.tree;
        let n = tree.nv();
        let q = Configuration::from_slice(&x.as_slice()[..n]);
        let state_only = |r: DVector<f64>, r_x: Option<DMatrix<f64>>| Linearized { r, r_x, r_u: None, r_l: None };
        let q_block = |j: DMatrix<f64>| {
            let mut full = DMatrix::zeros(j.nrows(), 2 * n);
            full.view_mut((0, 0), (j.nrows(), n)).copy_from(&j);
            full
        };
        match &term.residual {
            Residual::ComTracking { reference } => {
                let c = com(tree, &q);
                let r = DVector::from_vec(vec![c[0] - reference[step][0], c[1] - reference[step][1]]);
                state_only(r, jac.then(|| q_block(com_jacobian(tree, &q))))
            }
            Residual::FrameTracking {
                link,
                offset,
                reference,
                velocity,
            } => {
                let p = point_position(tree, &q, *link, *offset);
                let target = reference[step];
                if !*velocity {
                    let r = DVector::from_vec(vec![p[0] - target[0], p[1] - target[1]]);
                    return state_only(r, jac.then(|| q_block(point_jacobian(tree, &q, *link, *offset))));
                }
                let jp = point_jacobian(tree, &q, *link, *offset);
                let pv = &jp * x.rows(n, n);
                let r = DVector::from_vec(vec![p[0] - target[0], p[1] - target[1], pv[0], pv[1]]);
                let r_x = jac.then(|| {
                    let mut full = DMatrix::zeros(4, 2 * n);
                    full.view_mut((0, 0), (2, n)).copy_from(&jp);
                    full.view_mut((2, n), (2, n)).copy_from(&jp);
                    let qv = &x.as_slice()[..n];
                    let vd: Vec<Dual> = x.as_slice()[n..].iter().map(|&v| Dual::constant(v)).collect();
                    for k in 0..n {
                        let frames = link_frames(tree, &Dual::seed(qv, Some(k)), &vd);
                        let at = frame_point(&frames[*link], *offset);
                        let vel = point_velocity_of(&frames[*link].velocity, &at);
                        full[(2, k)] = vel[0].eps;
                        full[(3, k)] = vel[1].eps;
                    }
                    full
                });
                state_only(r, r_x)
            }
            Residual::ForceTracking { reference } => {
                let l = lambda.expect("force term evaluated without forces");
                Linearized {
                    r: force_tracking(l, &reference[step]),
                    r_x: None,
                    r_u: None,
                    r_l: jac.then(|| DMatrix::identity(l.len(), l.len())),
                }
            }
            Residual::ControlReg { reference } => {
                let u = u.expect("control term evaluated without controls");
                Linearized {
                    r: u - &reference[step],
                    r_x: None,
                    r_u: jac.then(|| DMatrix::identity(u.len(), u.len())),
                    r_l: None,
                }
            }
            Residual::StateReg { reference } => state_only(x - reference, jac.then(|| DMatrix::identity(2 * n, 2 * n))),
            Residual::JointLimitBarrier {
                lower,
                upper,
                margin,
                stiffness,
            } => {
                let joints = &x.as_slice()[BASE_DOF..n];
                let r = joint_limit_barrier(joints, lower, upper, *margin, *stiffness);
                let r_x = jac.then(|| {
                    let mut full = DMatrix::zeros(joints.len(), 2 * n);
                    for (j, &qj) in joints.iter().enumerate() {
                        if qj < lower[j] + margin {
                            full[(j, BASE_DOF + j)] = -stiffness;
                        } else if qj > upper[j] - margin {
                            full[(j, BASE_DOF + j)] = *stiffness;
                        }
                    }
                    full
                });
                state_only(r, r_x)
            }
            Residual::OrientationGoal { target } => {
                let r = DVector::from_element(1, x[2] - target);
                state_only(
                    r,
                    jac.then(|| {
                        let mut full = DMatrix::zeros(1, 2 * n);
                        full[(0, 2)] = 1.0;
                        full
                    }),
                )
            }
            Residual::FrictionCone { pairs, mu } => {
                let l = lambda.expect("friction term evaluated without forces");
                let pairs = &pairs[step];
                let mut r = DVector::zeros(2 * pairs.len());
                let mut r_l = DMatrix::zeros(2 * pairs.len(), l.len());
                for (k, &(t, nr)) in pairs.iter().enumerate() {
                    for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                        let excess = sign * l[t] - mu * l[nr];
                        if excess > 0.0 {
                            r[2 * k + s] = excess;
                            r_l[(2 * k + s, t)] = sign;
                            r_l[(2 * k + s, nr)] = -mu;
                        }
                    }
                }
                Linearized {
                    r,
                    r_x: None,
                    r_u: None,
                    r_l: jac.then_some(r_l),
                }
            }
        }
    }

    /// Per-term values at `step`; `u`/`λ` are `None` on the terminal step.
    pub fn term_values(&self, x: &DVector<f64>, u: Option<&DVector<f64>>, lambda: Option<&DVector<f64>>, step: usize) -> Vec<f64> {
        let terminal = u.is_none();
        self.terms
            .iter()
            .map(|term| {
                if !term.active(step, terminal) {
                    return 0.0;
                }
                let lin = self.linearize(term, x, u, lambda, step, false);
                0.5 * lin.r.dot(&(&term.weight * &lin.r))
            })
            .collect()
    }

    pub fn value(&self, x: &DVector<f64>, u: Option<&DVector<f64>>, lambda: Option<&DVector<f64>>, step: usize) -> f64 {
        self.term_values(x, u, lambda, step).iter().sum()
    }

    /// Value, gradients and Gauss-Newton Hessians at `step`.
    pub fn evaluate(&self, x: &DVector<f64>, u: Option<&DVector<f64>>, lambda: Option<&DVector<f64>>, step: usize) -> CostExpansion {
        let terminal = u.is_none();
        let nu = u.map_or(0, |u| u.len());
        let nl = lambda.map_or(0, |l| l.len());
        let mut out = CostExpansion::zeros(x.len(), nu, nl);
        for term in &self.terms {
            if !term.active(step, terminal) {
                continue;
            }
            let lin = self.linearize(term, x, u, lambda, step, true);
            let wr = &term.weight * &lin.r;
            out.value += 0.5 * lin.r.dot(&wr);
            if let Some(j) = &lin.r_x {
                out.l_x += j.transpose() * &wr;
                out.l_xx += j.transpose() * &term.weight * j;
            }
            if let Some(j) = &lin.r_u {
                out.l_u += j.transpose() * &wr;
                out.l_uu += j.transpose() * &term.weight * j;
            }
            if let Some(j) = &lin.r_l {
                out.l_lambda += j.transpose() * &wr;
                out.l_ll += j.transpose() * &term.weight * j;
            }
        }
        out
    }
}
