//! Differential dynamic programming over dynamics that also return contact
//! forces: `x⁺ = f(x, u)`, `λ = g(x, u)`, with stage costs `l(x, u, λ)`.

mod trace;

pub use trace::{IterationRecord, SolveTrace};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact_dynamics::{DynamicsDerivatives, DynamicsError};
use crate::costs::CostExpansion;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdpError {
    #[error("rollout diverged at step {step}: {source}")]
    Rollout { step: usize, source: DynamicsError },
    #[error("initial controls: expected {expected} steps of dimension {dim}, found {found}")]
    Guess { expected: usize, dim: usize, found: String },
    #[error("invalid solver settings: {0}")]
    Settings(String),
}

/// An optimal control problem over the augmented dynamics.
pub trait Problem {
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    /// Next state and the forces acting during step `i`.
    fn step(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), DynamicsError>;
    fn derivatives(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DynamicsDerivatives, DynamicsError>;
    fn running_cost(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> CostExpansion;
    fn terminal_cost(&self, x: &DVector<f64>) -> CostExpansion;
    fn term_names(&self) -> Vec<String>;
    /// Per-term values; `u`/`λ` are `None` on the terminal step.
    fn term_values(&self, i: usize, x: &DVector<f64>, u: Option<&DVector<f64>>, lambda: Option<&DVector<f64>>) -> Vec<f64>;
    /// `b ⊖ a` on the state manifold.
    fn state_difference(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        b - a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    /// `Q_uu + μI`.
    Quu,
    /// `V'_xx + μI`, i.e. `Q_uu + μ f_uᵀf_u`, `Q_ux + μ f_uᵀf_x`.
    Vxx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub alphas: Vec<f64>,
    pub mu_init: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    pub regularization: Regularization,
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    /// Minimum ratio of actual to expected reduction.
    pub acceptance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            alphas: (0..=10).map(|k| 0.5f64.powi(k)).collect(),
            mu_init: 1e-9,
            mu_min: 1e-12,
            mu_max: 1e6,
            mu_increase: 10.0,
            mu_decrease: 2.0,
            regularization: Regularization::Quu,
            cost_tolerance: 1e-9,
            step_tolerance: 1e-9,
            acceptance: 1e-4,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), DdpError> {
        let positive = [
            ("mu_init", self.mu_init),
            ("mu_min", self.mu_min),
            ("mu_max", self.mu_max),
            ("cost_tolerance", self.cost_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("acceptance", self.acceptance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DdpError::Settings(format!("{name} must be positive")));
            }
        }
        if !(self.mu_min <= self.mu_init && self.mu_init <= self.mu_max) {
            return Err(DdpError::Settings("need mu_min <= mu_init <= mu_max".into()));
        }
        if !(self.mu_increase > 1.0 && self.mu_decrease > 1.0) {
            return Err(DdpError::Settings("mu scale factors must exceed 1".into()));
        }
        if self.alphas.first() != Some(&1.0) || self.alphas.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
            return Err(DdpError::Settings("alphas must decrease strictly from 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QExpansion {
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
    pub q_ux: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueExpansion {
    pub v_x: DVector<f64>,
    pub v_xx: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub k: DVector<f64>,
    pub big_k: DMatrix<f64>,
}

/// State, control and force trajectories with their cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub lambdas: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Result of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    pub gains: Vec<Gains>,
    pub values: Vec<ValueExpansion>,
    /// `(Σ kᵀQ_u, Σ kᵀQ_uu k)`; the model reduction at `α` is
    /// `α·d1 + ½α²·d2`.
    pub expected: (f64, f64),
    /// `max_i ‖Q_u‖_∞`.
    pub gradient_norm: f64,
}

impl BackwardPass {
    pub fn expected_change(&self, alpha: f64) -> f64 {
        alpha * self.expected.0 + 0.5 * alpha * alpha * self.expected.1
    }
}

/// `Q_uu` was not positive definite at `step` for the given regularization.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("Q_uu is not positive definite at step {step}")]
pub struct NotPositiveDefinite {
    pub step: usize,
}

/// Gauss-Newton Q coefficients, including the force terms through `g_x`, `g_u`.
pub fn q_expansion(d: &DynamicsDerivatives, l: &CostExpansion, next: &ValueExpansion) -> QExpansion {
    let fx_t = d.f_x.transpose();
    let fu_t = d.f_u.transpose();
    let vxx_fx = &next.v_xx * &d.f_x;
    let vxx_fu = &next.v_xx * &d.f_u;
    let mut q_x = &l.l_x + &fx_t * &next.v_x;
    let mut q_u = &l.l_u + &fu_t * &next.v_x;
    let mut q_xx = &l.l_xx + &fx_t * &vxx_fx;
    let mut q_uu = &l.l_uu + &fu_t * &vxx_fu;
    let mut q_ux = &l.l_ux + &fu_t * &vxx_fx;
    if !l.l_lambda.is_empty() {
        let gx_t = d.g_x.transpose();
        let gu_t = d.g_u.transpose();
        let lll_gx = &l.l_ll * &d.g_x;
        q_x += &gx_t * &l.l_lambda;
        q_u += &gu_t * &l.l_lambda;
        q_xx += &gx_t * &lll_gx;
        q_uu += &gu_t * &l.l_ll * &d.g_u;
        q_ux += &gu_t * &lll_gx;
    }
    QExpansion { q_x, q_u, q_xx, q_uu, q_ux }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Riccati-like sweep from the terminal cost backwards.
pub fn backward_pass(
    derivatives: &[DynamicsDerivatives],
    running: &[CostExpansion],
    terminal: &CostExpansion,
    mu: f64,
    mode: Regularization,
) -> Result<BackwardPass, NotPositiveDefinite> {
    let n = derivatives.len();
    let mut value = ValueExpansion {
        v_x: terminal.l_x.clone(),
        v_xx: terminal.l_xx.clone(),
    };
    symmetrize(&mut value.v_xx);
    let mut gains = Vec::with_capacity(n);
    let mut values = vec![value.clone()];
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let mut gradient_norm: f64 = 0.0;
    for i in (0..n).rev() {
        let d = &derivatives[i];
        let mut q = q_expansion(d, &running[i], &value);
        match mode {
            Regularization::Quu => {
                for j in 0..q.q_uu.nrows() {
                    q.q_uu[(j, j)] += mu;
                }
            }
            Regularization::Vxx => {
                let fu_t = d.f_u.transpose();
                q.q_uu += &fu_t * &d.f_u * mu;
                q.q_ux += &fu_t * &d.f_x * mu;
            }
        }
        symmetrize(&mut q.q_uu);
        gradient_norm = gradient_norm.max(q.q_u.amax());
        let chol = Cholesky::new(q.q_uu.clone()).ok_or(NotPositiveDefinite { step: i })?;
        let k = -chol.solve(&q.q_u);
        let big_k = -chol.solve(&q.q_ux);
        if k.iter().chain(big_k.iter()).any(|v| !v.is_finite()) {
            return Err(NotPositiveDefinite { step: i });
        }
        let quu_k = &q.q_uu * &k;
        d1 += k.dot(&q.q_u);
        d2 += k.dot(&quu_k);
        let kt = big_k.transpose();
        let ux_t = q.q_ux.transpose();
        let v_x = &q.q_x + &kt * &quu_k + &kt * &q.q_u + &ux_t * &k;
        let mut v_xx = &q.q_xx + &kt * &q.q_uu * &big_k + &kt * &q.q_ux + &ux_t * &big_k;
        symmetrize(&mut v_xx);
        value = ValueExpansion { v_x, v_xx };
        values.push(value.clone());
        gains.push(Gains { k, big_k });
    }
    gains.reverse();
    values.reverse();
    Ok(BackwardPass {
        gains,
        values,
        expected: (d1, d2),
        gradient_norm,
    })
}

/// Rolls out the whole trajectory from the problem's initial state.
pub fn rollout<P: Problem + ?Sized>(problem: &P, us: &[DVector<f64>]) -> Result<Trajectory, DdpError> {
    let mut xs = vec![problem.initial_state()];
    let mut lambdas = Vec::with_capacity(us.len());
    for (i, u) in us.iter().enumerate() {
        let (next, lambda) = problem.step(i, &xs[i], u).map_err(|source| DdpError::Rollout { step: i, source })?;
        xs.push(next);
        lambdas.push(lambda);
    }
    let cost = trajectory_cost(problem, &xs, us, &lambdas);
    Ok(Trajectory {
        xs,
        us: us.to_vec(),
        lambdas,
        cost,
    })
}

/// Sum of the running and terminal cost terms.
pub fn trajectory_cost<P: Problem + ?Sized>(problem: &P, xs: &[DVector<f64>], us: &[DVector<f64>], lambdas: &[DVector<f64>]) -> f64 {
    term_totals(problem, xs, us, lambdas).iter().sum()
}

/// Per-term totals over the whole trajectory.
pub fn term_totals<P: Problem + ?Sized>(problem: &P, xs: &[DVector<f64>], us: &[DVector<f64>], lambdas: &[DVector<f64>]) -> Vec<f64> {
    let n = us.len();
    let mut totals = problem.term_values(n, &xs[n], None, None);
    for i in 0..n {
        for (t, v) in totals.iter_mut().zip(problem.term_values(i, &xs[i], Some(&us[i]), Some(&lambdas[i]))) {
            *t += v;
        }
    }
    totals
}

/// `û_i = u_i + α k_i + K_i (x̂_i ⊖ x_i)`, `x̂_{i+1} = step(x̂_i, û_i)` from `x̂_0`.
pub fn forward_pass<P: Problem + ?Sized>(
    problem: &P,
    nominal: &Trajectory,
    gains: &[Gains],
    alpha: f64,
    start: &DVector<f64>,
) -> Result<Trajectory, DdpError> {
    let n = nominal.us.len();
    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    xs.push(start.clone());
    for i in 0..n {
        let dx = problem.state_difference(&nominal.xs[i], &xs[i]);
        let u = &nominal.us[i] + &gains[i].k * alpha + &gains[i].big_k * dx;
        let (next, lambda) = problem.step(i, &xs[i], &u).map_err(|source| DdpError::Rollout { step: i, source })?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DdpError::Rollout {
                step: i,
                source: DynamicsError::NonFinite,
            });
        }
        xs.push(next);
        us.push(u);
        lambdas.push(lambda);
    }
    let cost = trajectory_cost(problem, &xs, &us, &lambdas);
    Ok(Trajectory { xs, us, lambdas, cost })
}

fn linearize<P: Problem + ?Sized>(problem: &P, traj: &Trajectory) -> Result<(Vec<DynamicsDerivatives>, Vec<CostExpansion>, CostExpansion), DdpError> {
    let n = traj.us.len();
    let mut derivs = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for i in 0..n {
        derivs.push(
            problem
                .derivatives(i, &traj.xs[i], &traj.us[i])
                .map_err(|source| DdpError::Rollout { step: i, source })?,
        );
        costs.push(problem.running_cost(i, &traj.xs[i], &traj.us[i], &traj.lambdas[i]));
    }
    Ok((derivs, costs, problem.terminal_cost(&traj.xs[n])))
}

fn record<P: Problem + ?Sized>(problem: &P, iteration: usize, traj: &Trajectory, alpha: f64, mu: f64, gradient_norm: f64, accepted: bool) -> IterationRecord {
    IterationRecord {
        iteration,
        cost: traj.cost,
        terms: term_totals(problem, &traj.xs, &traj.us, &traj.lambdas),
        alpha,
        mu,
        gradient_norm,
        accepted,
    }
}

/// Iterates backward and forward passes from `initial_controls`.
pub fn solve<P: Problem + ?Sized>(problem: &P, initial_controls: &[DVector<f64>], settings: &SolverSettings) -> Result<SolveTrace, DdpError> {
    settings.validate()?;
    let n = problem.horizon();
    let m = problem.control_dim();
    if initial_controls.len() != n || initial_controls.iter().any(|u| u.len() != m) {
        return Err(DdpError::Guess {
            expected: n,
            dim: m,
            found: format!("{} steps", initial_controls.len()),
        });
    }
    let mut traj = rollout(problem, initial_controls)?;
    let mut mu = settings.mu_init;
    let mut iterations = vec![record(problem, 0, &traj, 0.0, mu, f64::NAN, true)];
    let mut converged = false;
    let mut last_gains = Vec::new();
    let start = problem.initial_state();
    'outer: for iteration in 1..=settings.max_iterations {
        let (derivs, costs, terminal) = linearize(problem, &traj)?;
        let pass = loop {
            match backward_pass(&derivs, &costs, &terminal, mu, settings.regularization) {
                Ok(pass) => break pass,
                Err(_) => {
                    if mu >= settings.mu_max {
                        break 'outer;
                    }
                    mu = (mu * settings.mu_increase).min(settings.mu_max);
                }
            }
        };
        let step_norm = pass.gains.iter().map(|g| g.k.amax()).fold(0.0, f64::max);
        let predicted = -pass.expected_change(1.0);
        last_gains = pass.gains.clone();
        if step_norm < settings.step_tolerance || predicted < settings.cost_tolerance {
            converged = true;
            break;
        }
        let mut accepted = None;
        for &alpha in &settings.alphas {
            let Ok(candidate) = forward_pass(problem, &traj, &pass.gains, alpha, &start) else {
                continue;
            };
            let expected = -pass.expected_change(alpha);
            let actual = traj.cost - candidate.cost;
            if candidate.cost.is_finite() && actual > 0.0 && actual >= settings.acceptance * expected {
                accepted = Some((alpha, candidate));
                break;
            }
        }
        match accepted {
            Some((alpha, candidate)) => {
                let reduction = traj.cost - candidate.cost;
                traj = candidate;
                iterations.push(record(problem, iteration, &traj, alpha, mu, pass.gradient_norm, true));
                mu = (mu / settings.mu_decrease).max(settings.mu_min);
                if reduction < settings.cost_tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                iterations.push(record(problem, iteration, &traj, 0.0, mu, pass.gradient_norm, false));
                if mu >= settings.mu_max {
                    break;
                }
                mu = (mu * settings.mu_increase).min(settings.mu_max);
            }
        }
    }
    Ok(SolveTrace {
        term_names: problem.term_names(),
        iterations,
        xs: traj.xs,
        us: traj.us,
        lambdas: traj.lambdas,
        cost: traj.cost,
        converged,
        gains: last_gains,
    })
}
