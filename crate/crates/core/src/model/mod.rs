//! Planar articulated rigid-body model with a free-floating base.
//!
//! Coordinates: the base carries three velocity coordinates `(ẋ, ż, θ̇)`
//! (world-frame translation rate of the base origin and its rotation rate),
//! followed by one coordinate per revolute joint. Link `i >= 1` is moved by
//! joint `i`, whose velocity index is `2 + i`.

mod description;
pub(crate) mod dynamics;
pub(crate) mod kinematics;
pub mod scalar;

pub use description::{ContactSpec, LinkSpec, ModelDescription, PlacementSpec};
pub use dynamics::{bias_forces, inverse_dynamics, mass_matrix};
pub use kinematics::{
    centroidal_angular_momentum, com, com_jacobian, com_velocity, contact_jacobian,
    contact_positions, contact_velocities, jdot_v, link_frames, point_jacobian, point_position,
    LinkFrame,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of velocity coordinates of the floating base.
pub const BASE_DOF: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("link {index} ({name}): {reason}")]
    InvalidLink {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("model has no links")]
    Empty,
    #[error("actuation selector: {0}")]
    Actuation(String),
    #[error("contact references link {link} but the model has {n_links} links")]
    ContactLink { link: usize, n_links: usize },
    #[error("contact point has no constrained dimension")]
    ContactDims,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("model description: {0}")]
    Description(String),
}

/// Rigid placement of a joint frame in its parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Placement {
    pub angle: f64,
    pub translation: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    /// CoM in the link frame.
    pub com_offset: [f64; 2],
    /// Rotational inertia about the link CoM (out-of-plane axis).
    pub inertia: f64,
    /// `None` only for the floating base (link 0).
    pub parent: Option<usize>,
    pub joint_placement: Placement,
}

impl Link {
    pub fn new(name: impl Into<String>, mass: f64, com_offset: [f64; 2], inertia: f64) -> Self {
        Self {
            name: name.into(),
            mass,
            com_offset,
            inertia,
            parent: None,
            joint_placement: Placement::default(),
        }
    }

    pub fn attached(mut self, parent: usize, placement: Placement) -> Self {
        self.parent = Some(parent);
        self.joint_placement = placement;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    links: Vec<Link>,
    actuation: Vec<bool>,
}

impl KinematicTree {
    /// Builds a tree; the first link is the floating base and every joint is
    /// actuated.
    pub fn new(links: Vec<Link>) -> Result<Self, ModelError> {
        let n = links.len().saturating_sub(1) + BASE_DOF;
        let actuation = (0..n).map(|i| i >= BASE_DOF).collect();
        Self::with_actuation(links, actuation)
    }

    pub fn with_actuation(links: Vec<Link>, actuation: Vec<bool>) -> Result<Self, ModelError> {
        if links.is_empty() {
            return Err(ModelError::Empty);
        }
        for (index, link) in links.iter().enumerate() {
            let bad = |reason: &str| ModelError::InvalidLink {
                index,
                name: link.name.clone(),
                reason: reason.to_string(),
            };
            if !(link.mass.is_finite() && link.mass > 0.0) {
                return Err(bad("mass must be positive"));
            }
            if !(link.inertia.is_finite() && link.inertia >= 0.0) {
                return Err(bad("inertia must be non-negative"));
            }
            let finite = link.com_offset.iter().all(|c| c.is_finite())
                && link.joint_placement.angle.is_finite()
                && link.joint_placement.translation.iter().all(|c| c.is_finite());
            if !finite {
                return Err(bad("non-finite geometry"));
            }
            match (index, link.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(bad("the base link cannot have a parent")),
                (_, None) => return Err(bad("only the base link may omit its parent")),
                (_, Some(p)) if p >= index => {
                    return Err(bad("parent index must precede the link (tree order)"))
                }
                _ => {}
            }
        }
        let n = links.len() - 1 + BASE_DOF;
        if actuation.len() != n {
            return Err(ModelError::Actuation(format!(
                "expected {n} entries, found {}",
                actuation.len()
            )));
        }
        if actuation[..BASE_DOF].iter().any(|&a| a) {
            return Err(ModelError::Actuation(
                "base coordinates cannot be actuated".into(),
            ));
        }
        if actuation[BASE_DOF..].iter().any(|&a| !a) {
            return Err(ModelError::Actuation(
                "every joint coordinate must be actuated".into(),
            ));
        }
        Ok(Self { links, actuation })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_joints(&self) -> usize {
        self.links.len() - 1
    }

    /// Velocity dimension `n = 3 + n_joints`.
    pub fn nv(&self) -> usize {
        BASE_DOF + self.n_joints()
    }

    pub fn actuation(&self) -> &[bool] {
        &self.actuation
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Velocity index of the joint moving `link` (`link >= 1`).
    pub fn joint_dof(link: usize) -> usize {
        BASE_DOF - 1 + link
    }

    /// Links from `link` up to (and including) the base.
    pub fn ancestors(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(link), move |&i| self.links[i].parent)
    }

    /// Embeds a joint-space vector into the velocity space (`S·τ`).
    pub fn select(&self, tau: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nv());
        out.rows_mut(BASE_DOF, self.n_joints()).copy_from(tau);
        out
    }

    pub fn validate_contact(&self, contact: &ContactPoint) -> Result<(), ModelError> {
        if contact.link >= self.n_links() {
            return Err(ModelError::ContactLink {
                link: contact.link,
                n_links: self.n_links(),
            });
        }
        if contact.dims() == 0 {
            return Err(ModelError::ContactDims);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactDim {
    Tangential,
    Normal,
}

/// A point on a link whose world-frame translation is constrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub link: usize,
    pub offset: [f64; 2],
    pub tangential: bool,
    pub normal: bool,
}

impl ContactPoint {
    /// Point contact constraining both planar directions.
    pub fn point(link: usize, offset: [f64; 2]) -> Self {
        Self {
            link,
            offset,
            tangential: true,
            normal: true,
        }
    }

    pub fn dims(&self) -> usize {
        usize::from(self.tangential) + usize::from(self.normal)
    }

    /// World axes constrained by this contact (0 = x, 1 = z).
    pub fn axes(&self) -> impl Iterator<Item = usize> {
        [(self.tangential, 0usize), (self.normal, 1usize)]
            .into_iter()
            .filter_map(|(on, axis)| on.then_some(axis))
    }
}

/// Total number of constraint rows for a contact set.
pub fn contact_dim(contacts: &[ContactPoint]) -> usize {
    contacts.iter().map(ContactPoint::dims).sum()
}

/// Configuration on SE(2) × R^nj, stored unwrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    /// `(x, z, θ)` of the base frame.
    pub base: [f64; 3],
    pub joints: Vec<f64>,
}

impl Configuration {
    pub fn new(base: [f64; 3], joints: Vec<f64>) -> Self {
        Self { base, joints }
    }

    pub fn neutral(tree: &KinematicTree) -> Self {
        Self::new([0.0; 3], vec![0.0; tree.n_joints()])
    }

    pub fn nq(&self) -> usize {
        BASE_DOF + self.joints.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.base.iter().chain(self.joints.iter()).copied().collect()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_vec())
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self::new([q[0], q[1], q[2]], q[BASE_DOF..].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Configuration,
    pub v: DVector<f64>,
}

impl State {
    pub fn new(q: Configuration, v: DVector<f64>) -> Result<Self, ModelError> {
        if v.len() != q.nq() {
            return Err(ModelError::Dimension {
                expected: q.nq(),
                found: v.len(),
            });
        }
        Ok(Self { q, v })
    }

    pub fn at_rest(q: Configuration) -> Self {
        let n = q.nq();
        Self {
            q,
            v: DVector::zeros(n),
        }
    }

    pub fn nv(&self) -> usize {
        self.v.len()
    }

    /// Flat `(q, v)` vector of length `2n`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.nv();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q.to_vector());
        x.rows_mut(n, n).copy_from(&self.v);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            q: Configuration::from_slice(&x.as_slice()[..n]),
            v: x.rows(n, n).into_owned(),
        }
    }
}

/// Semi-implicit Euler: `v⁺ = v + Δt·v̇`, `q⁺ = q ⊕ Δt·v⁺`.
pub fn integrate_state(state: &State, acceleration: &DVector<f64>, dt: f64) -> State {
    let v = &state.v + acceleration * dt;
    let q = configuration_plus(&state.q, &(&v * dt));
    State { q, v }
}

/// `q ⊕ dq`: componentwise on the unwrapped coordinates.
pub fn configuration_plus(q: &Configuration, dq: &DVector<f64>) -> Configuration {
    let mut base = q.base;
    for (b, d) in base.iter_mut().zip(dq.iter()) {
        *b += d;
    }
    let joints = q
        .joints
        .iter()
        .zip(dq.iter().skip(BASE_DOF))
        .map(|(a, d)| a + d)
        .collect();
    Configuration { base, joints }
}

/// Tangent-space difference `b ⊖ a` as a `2n` vector `(δq, δv)`.
pub fn state_difference(a: &State, b: &State) -> Result<DVector<f64>, ModelError> {
    if a.nv() != b.nv() || a.q.nq() != b.q.nq() {
        return Err(ModelError::Dimension {
            expected: a.nv(),
            found: b.nv(),
        });
    }
    Ok(b.to_vector() - a.to_vector())
}

/// `a ⊕ d` for a `2n` tangent vector `d`.
pub fn state_plus(a: &State, d: &DVector<f64>) -> State {
    let n = a.nv();
    State {
        q: configuration_plus(&a.q, &d.rows(0, n).into_owned()),
        v: &a.v + d.rows(n, n),
    }
}
