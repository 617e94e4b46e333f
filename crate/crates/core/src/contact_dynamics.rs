//! Rigid-contact forward dynamics through the KKT system
//!
//! ```text
//! [ M   J_cᵀ ] [  v̇ ]   [ S τ − b ]
//! [ J_c  0   ] [ −λ ] = [ −J̇_c v  ]
//! ```
//!
//! Sign convention: `M v̇ = τ_b + J_cᵀ λ`, so `λ` is the force applied *to*
//! the robot at the contact points.
//!
//! The system is solved through the dual Schur complement
//! `(J_c M⁻¹ J_cᵀ + δI) λ = −(J_c v̇_free + J̇_c v)`, with `δ` the damping used
//! for rank-deficient contact sets. The damped system is differentiated
//! exactly, so the derivatives match the discrete step that is simulated.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::model::kinematics::{contact_drift, contact_rows};
use crate::model::scalar::Dual;
use crate::model::{
    self, contact_dim, integrate_state, link_frames, mass_matrix, ContactPoint, KinematicTree,
    ModelError, State, BASE_DOF,
};

/// Default Schur-complement damping.
pub const DEFAULT_DAMPING: f64 = 1e-8;

/// Relative pivot threshold below which the Schur complement is treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("mass matrix is not positive definite")]
    MassMatrix,
    #[error("contact set {contacts:?} is singular even with damping {damping:e}")]
    ContactDegenerate {
        contacts: Vec<ContactPoint>,
        damping: f64,
    },
    #[error("expected {expected} joint torques, found {found}")]
    ControlDimension { expected: usize, found: usize },
    #[error("non-finite value in the dynamics")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub acceleration: DVector<f64>,
    pub forces: DVector<f64>,
    /// ∞-norm of the undamped KKT residual.
    pub kkt_residual: f64,
}

/// First-order model of the augmented dynamics `x⁺ = f(x, u)`, `λ = g(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsDerivatives {
    pub f_x: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub g_x: DMatrix<f64>,
    pub g_u: DMatrix<f64>,
}

/// Factorized KKT system at one `(q, v)`.
pub struct KktSystem {
    mass: DMatrix<f64>,
    mass_chol: Cholesky<f64, Dyn>,
    jacobian: DMatrix<f64>,
    minv_jt: DMatrix<f64>,
    schur_chol: Option<Cholesky<f64, Dyn>>,
    /// `b(q, v)`.
    pub bias: DVector<f64>,
    /// `J̇_c v`.
    pub drift: DVector<f64>,
}

impl KktSystem {
    pub fn mass_matrix(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn mass_inverse_times(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.mass_chol.solve(rhs)
    }

    /// Solves `M a − J_cᵀ μ = r1`, `J_c a + δ μ = r2` for `(a, μ)`.
    pub fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let free = self.mass_chol.solve(r1);
        match &self.schur_chol {
            None => (free, DVector::zeros(0)),
            Some(schur) => {
                let mu = schur.solve(&(r2 - &self.jacobian * &free));
                let a = free + &self.minv_jt * &mu;
                (a, mu)
            }
        }
    }
}

/// Dynamics of a tree under gravity with a damped dual contact solve.
#[derive(Debug, Clone, Copy)]
pub struct ContactDynamics<'a> {
    pub tree: &'a KinematicTree,
    pub gravity: [f64; 2],
    pub damping: f64,
}

impl<'a> ContactDynamics<'a> {
    pub fn new(tree: &'a KinematicTree, gravity: [f64; 2]) -> Self {
        Self {
            tree,
            gravity,
            damping: DEFAULT_DAMPING,
        }
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    fn check(&self, state: &State, tau: &DVector<f64>, contacts: &[ContactPoint]) -> Result<(), DynamicsError> {
        let n = self.tree.nv();
        if state.nv() != n || state.q.nq() != n {
            return Err(ModelError::Dimension {
                expected: n,
                found: state.nv(),
            }
            .into());
        }
        if tau.len() != self.tree.n_joints() {
            return Err(DynamicsError::ControlDimension {
                expected: self.tree.n_joints(),
                found: tau.len(),
            });
        }
        for c in contacts {
            self.tree.validate_contact(c)?;
        }
        Ok(())
    }

    /// Builds and factorizes the KKT system at `state`.
    pub fn factorize(&self, state: &State, contacts: &[ContactPoint]) -> Result<KktSystem, DynamicsError> {
        let tree = self.tree;
        let n = tree.nv();
        let q = state.q.to_vec();
        let frames = link_frames(tree, &q, state.v.as_slice());
        let mass = mass_matrix(tree, &state.q);
        let bias = DVector::from_vec(model::dynamics::rnea(tree, &frames, &vec![0.0; n], self.gravity));
        let mass_chol = Cholesky::new(mass.clone()).ok_or(DynamicsError::MassMatrix)?;
        let rows = contact_rows(tree, &frames, contacts);
        let jacobian = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        let drift = DVector::from_vec(contact_drift(&frames, contacts));
        let (minv_jt, schur_chol) = if rows.is_empty() {
            (DMatrix::zeros(n, 0), None)
        } else {
            let minv_jt = mass_chol.solve(&jacobian.transpose());
            let mut schur = &jacobian * &minv_jt;
            schur = (&schur + schur.transpose()) * 0.5;
            for i in 0..schur.nrows() {
                schur[(i, i)] += self.damping;
            }
            let scale = schur.diagonal().amax().max(f64::MIN_POSITIVE);
            let degenerate = || DynamicsError::ContactDegenerate {
                contacts: contacts.to_vec(),
                damping: self.damping,
            };
            let chol = Cholesky::new(schur).ok_or_else(degenerate)?;
            let l = chol.l_dirty();
            if (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] < PIVOT_TOLERANCE * scale) {
                return Err(degenerate());
            }
            (minv_jt, Some(chol))
        };
        Ok(KktSystem {
            mass,
            mass_chol,
            jacobian,
            minv_jt,
            schur_chol,
            bias,
            drift,
        })
    }

    /// `v̇_free = M⁻¹ (S τ − b)`.
    pub fn free_acceleration(&self, state: &State, tau: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        self.check(state, tau, &[])?;
        let sys = self.factorize(state, &[])?;
        Ok(sys.mass_inverse_times(&(self.tree.select(tau) - &sys.bias)))
    }

    pub fn kkt_solve(&self, state: &State, tau: &DVector<f64>, contacts: &[ContactPoint]) -> Result<KktSolution, DynamicsError> {
        self.check(state, tau, contacts)?;
        let sys = self.factorize(state, contacts)?;
        Ok(self.solve_with(&sys, tau))
    }

    pub(crate) fn solve_with(&self, sys: &KktSystem, tau: &DVector<f64>) -> KktSolution {
        let tau_b = self.tree.select(tau) - &sys.bias;
        let (acceleration, forces) = sys.solve(&tau_b, &(-&sys.drift));
        let r1 = &sys.mass * &acceleration - sys.jacobian.transpose() * &forces - &tau_b;
        let r2 = &sys.jacobian * &acceleration + &sys.drift;
        let kkt_residual = r1.amax().max(if r2.is_empty() { 0.0 } else { r2.amax() });
        KktSolution {
            acceleration,
            forces,
            kkt_residual,
        }
    }

    /// One step of the augmented dynamics: the next state and the contact
    /// forces acting during this step.
    pub fn step(&self, state: &State, tau: &DVector<f64>, contacts: &[ContactPoint], dt: f64) -> Result<(State, DVector<f64>), DynamicsError> {
        let sol = self.kkt_solve(state, tau, contacts)?;
        let next = integrate_state(state, &sol.acceleration, dt);
        if !next.v.iter().chain(next.q.to_vec().iter()).all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok((next, sol.forces))
    }

    /// Exact derivatives of [`step`](Self::step) and of the contact forces.
    pub fn derivatives(&self, state: &State, tau: &DVector<f64>, contacts: &[ContactPoint], dt: f64) -> Result<DynamicsDerivatives, DynamicsError> {
        self.check(state, tau, contacts)?;
        let tree = self.tree;
        let n = tree.nv();
        let m = tree.n_joints();
        let p = contact_dim(contacts);
        let sys = self.factorize(state, contacts)?;
        let sol = self.solve_with(&sys, tau);

        let accel: Vec<Dual> = sol.acceleration.iter().map(|&a| Dual::constant(a)).collect();
        let q = state.q.to_vec();
        let v = state.v.as_slice();
        let mut dacc_x = DMatrix::zeros(n, 2 * n);
        let mut dlam_x = DMatrix::zeros(p, 2 * n);
        for k in 0..2 * n {
            let qd = Dual::seed(&q, (k < n).then_some(k));
            let vd = Dual::seed(v, (k >= n).then(|| k - n));
            let frames = link_frames(tree, &qd, &vd);
            let id = model::dynamics::rnea(tree, &frames, &accel, self.gravity);
            let rows = contact_rows(tree, &frames, contacts);
            let drift = contact_drift(&frames, contacts);
            let mut r1 = DVector::from_fn(n, |i, _| -id[i].eps);
            let mut r2 = DVector::zeros(p);
            for (row_idx, row) in rows.iter().enumerate() {
                let lam = sol.forces[row_idx];
                let mut ja = drift[row_idx];
                for (j, entry) in row.iter().enumerate() {
                    r1[j] += entry.eps * lam;
                    ja += *entry * accel[j];
                }
                r2[row_idx] = -ja.eps;
            }
            let (da, dl) = sys.solve(&r1, &r2);
            dacc_x.set_column(k, &da);
            if p > 0 {
                dlam_x.set_column(k, &dl);
            }
        }
        let mut dacc_u = DMatrix::zeros(n, m);
        let mut dlam_u = DMatrix::zeros(p, m);
        let zero_p = DVector::zeros(p);
        for j in 0..m {
            let mut r1 = DVector::zeros(n);
            r1[BASE_DOF + j] = 1.0;
            let (da, dl) = sys.solve(&r1, &zero_p);
            dacc_u.set_column(j, &da);
            if p > 0 {
                dlam_u.set_column(j, &dl);
            }
        }

        // v⁺ = v + Δt v̇,  q⁺ = q + Δt v⁺
        let mut dv_x = dacc_x * dt;
        for i in 0..n {
            dv_x[(i, n + i)] += 1.0;
        }
        let mut dq_x = &dv_x * dt;
        for i in 0..n {
            dq_x[(i, i)] += 1.0;
        }
        let dv_u = dacc_u * dt;
        let dq_u = &dv_u * dt;
        let mut f_x = DMatrix::zeros(2 * n, 2 * n);
        f_x.rows_mut(0, n).copy_from(&dq_x);
        f_x.rows_mut(n, n).copy_from(&dv_x);
        let mut f_u = DMatrix::zeros(2 * n, m);
        f_u.rows_mut(0, n).copy_from(&dq_u);
        f_u.rows_mut(n, n).copy_from(&dv_u);
        Ok(DynamicsDerivatives {
            f_x,
            f_u,
            g_x: dlam_x,
            g_u: dlam_u,
        })
    }

    /// Torques and contact forces holding `q` at rest. The base translation
    /// rows are met exactly (so the normal forces carry the full weight);
    /// the remaining rows are solved in the least-squares, minimum-norm sense.
    pub fn static_contact_forces(&self, q: &model::Configuration, contacts: &[ContactPoint]) -> Result<(DVector<f64>, DVector<f64>), DynamicsError> {
        let tree = self.tree;
        for c in contacts {
            tree.validate_contact(c)?;
        }
        let n = tree.nv();
        let m = tree.n_joints();
        let state = State::at_rest(q.clone());
        let b = model::bias_forces(tree, &state, self.gravity);
        let jac = model::contact_jacobian(tree, q, contacts)?;
        let p = jac.nrows();
        // [S  J_cᵀ] z = b with z = (τ, λ).
        let mut a = DMatrix::zeros(n, m + p);
        for j in 0..m {
            a[(BASE_DOF + j, j)] = 1.0;
        }
        a.view_mut((0, m), (n, p)).copy_from(&jac.transpose());
        let hard = a.rows(0, 2).into_owned();
        let soft = a.rows(2, n - 2).into_owned();
        let b_hard = b.rows(0, 2).into_owned();
        let b_soft = b.rows(2, n - 2).into_owned();
        let cols = m + p;
        let mut square = DMatrix::zeros(cols.max(2), cols);
        square.rows_mut(0, 2).copy_from(&hard);
        let svd = square.svd(true, true);
        let mut rhs = DVector::zeros(cols.max(2));
        rhs.rows_mut(0, 2).copy_from(&b_hard);
        let z_p = svd.solve(&rhs, 1e-12).map_err(|_| DynamicsError::NonFinite)?;
        let v_t = svd.v_t.expect("requested");
        let null_rows: Vec<usize> = (0..cols).filter(|&i| svd.singular_values[i] <= 1e-12).collect();
        let null = DMatrix::from_fn(cols, null_rows.len(), |r, c| v_t[(null_rows[c], r)]);
        let reduced = &soft * &null;
        let y = reduced
            .svd(true, true)
            .solve(&(b_soft - &soft * &z_p), 1e-12)
            .map_err(|_| DynamicsError::NonFinite)?;
        let z = z_p + null * y;
        Ok((z.rows(0, m).into_owned(), z.rows(m, p).into_owned()))
    }
}

/// `½ ‖v̇ − v̇_free‖²_M`.
pub fn gauss_objective(mass: &DMatrix<f64>, acceleration: &DVector<f64>, free: &DVector<f64>) -> f64 {
    let d = acceleration - free;
    0.5 * d.dot(&(mass * &d))
}
