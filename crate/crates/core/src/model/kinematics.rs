//! Forward kinematics in world coordinates.
//!
//! Spatial motion vectors are `(ω, vx, vz)` where `(vx, vz)` is the velocity
//! of the body-fixed point currently at the world origin. All Jacobians are
//! built from the per-DOF motion vectors, so no frame transforms are needed.

use nalgebra::{DMatrix, DVector};

use super::scalar::Real;
use super::{ContactPoint, KinematicTree, State, BASE_DOF};

pub type Motion<T> = [T; 3];

#[derive(Debug, Clone, Copy)]
pub struct LinkFrame<T> {
    /// World orientation of the link frame.
    pub angle: T,
    /// World position of the link frame origin (the joint).
    pub origin: [T; 2],
    /// Spatial velocity at the world origin.
    pub velocity: Motion<T>,
    /// Velocity-product spatial acceleration (`Σ Ṡ q̇` along the chain).
    pub bias: Motion<T>,
}

#[inline]
pub(crate) fn rotate<T: Real>(angle: T, p: [f64; 2]) -> [T; 2] {
    let (s, c) = (angle.sin(), angle.cos());
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Velocity of the body point at world position `r` given the spatial velocity.
#[inline]
pub(crate) fn point_velocity_of<T: Real>(m: &Motion<T>, r: &[T; 2]) -> [T; 2] {
    [m[1] - m[0] * r[1], m[2] + m[0] * r[0]]
}

/// Motion vector of a unit rotation about the world point `p`.
#[inline]
pub(crate) fn rotation_about<T: Real>(p: &[T; 2]) -> Motion<T> {
    [T::cst(1.0), p[1], -p[0]]
}

pub fn link_frames<T: Real>(tree: &KinematicTree, q: &[T], v: &[T]) -> Vec<LinkFrame<T>> {
    let mut frames: Vec<LinkFrame<T>> = Vec::with_capacity(tree.n_links());
    let (x, z, theta) = (q[0], q[1], q[2]);
    let (xd, zd, thd) = (v[0], v[1], v[2]);
    frames.push(LinkFrame {
        angle: theta,
        origin: [x, z],
        velocity: [thd, xd + thd * z, zd - thd * x],
        bias: [T::zero(), thd * zd, -(thd * xd)],
    });
    for (i, link) in tree.links().iter().enumerate().skip(1) {
        let parent = frames[link.parent.expect("validated tree order")];
        let dof = KinematicTree::joint_dof(i);
        let offset = rotate(parent.angle, link.joint_placement.translation);
        let origin = [parent.origin[0] + offset[0], parent.origin[1] + offset[1]];
        let axis = rotation_about(&origin);
        let qd = v[dof];
        let joint_vel = point_velocity_of(&parent.velocity, &origin);
        let velocity = [
            parent.velocity[0] + qd,
            parent.velocity[1] + axis[1] * qd,
            parent.velocity[2] + axis[2] * qd,
        ];
        let bias = [
            parent.bias[0],
            parent.bias[1] + joint_vel[1] * qd,
            parent.bias[2] - joint_vel[0] * qd,
        ];
        frames.push(LinkFrame {
            angle: parent.angle + q[dof] + link.joint_placement.angle,
            origin,
            velocity,
            bias,
        });
    }
    frames
}

/// World position of a point given in link coordinates.
#[inline]
pub(crate) fn frame_point<T: Real>(frame: &LinkFrame<T>, offset: [f64; 2]) -> [T; 2] {
    let r = rotate(frame.angle, offset);
    [frame.origin[0] + r[0], frame.origin[1] + r[1]]
}

/// Motion vector of velocity coordinate `dof`.
pub(crate) fn dof_motion<T: Real>(frames: &[LinkFrame<T>], dof: usize) -> Motion<T> {
    match dof {
        0 => [T::zero(), T::cst(1.0), T::zero()],
        1 => [T::zero(), T::zero(), T::cst(1.0)],
        2 => rotation_about(&frames[0].origin),
        _ => rotation_about(&frames[dof + 1 - BASE_DOF].origin),
    }
}

/// Velocity coordinates that move `link` (its own joint, ancestors, base).
pub(crate) fn supporting_dofs(tree: &KinematicTree, link: usize) -> Vec<usize> {
    let mut dofs: Vec<usize> = tree
        .ancestors(link)
        .filter(|&l| l > 0)
        .map(KinematicTree::joint_dof)
        .collect();
    dofs.extend(0..BASE_DOF);
    dofs
}

/// 2×n Jacobian rows (x then z) of a world point attached to `link`.
pub(crate) fn point_rows<T: Real>(
    tree: &KinematicTree,
    frames: &[LinkFrame<T>],
    link: usize,
    r: &[T; 2],
) -> [Vec<T>; 2] {
    let n = tree.nv();
    let mut rows = [vec![T::zero(); n], vec![T::zero(); n]];
    for dof in supporting_dofs(tree, link) {
        let s = dof_motion(frames, dof);
        let pv = point_velocity_of(&s, r);
        rows[0][dof] = pv[0];
        rows[1][dof] = pv[1];
    }
    rows
}

/// Stacked constrained rows of the contact Jacobian.
pub(crate) fn contact_rows<T: Real>(
    tree: &KinematicTree,
    frames: &[LinkFrame<T>],
    contacts: &[ContactPoint],
) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    for c in contacts {
        let r = frame_point(&frames[c.link], c.offset);
        let rows = point_rows(tree, frames, c.link, &r);
        for axis in c.axes() {
            out.push(rows[axis].clone());
        }
    }
    out
}

/// Classical acceleration of a body point when `q̈ = 0`.
pub(crate) fn point_bias_acceleration<T: Real>(frame: &LinkFrame<T>, r: &[T; 2]) -> [T; 2] {
    let a = point_velocity_of(&frame.bias, r);
    let vel = point_velocity_of(&frame.velocity, r);
    let w = frame.velocity[0];
    [a[0] - w * vel[1], a[1] + w * vel[0]]
}

pub(crate) fn contact_drift<T: Real>(frames: &[LinkFrame<T>], contacts: &[ContactPoint]) -> Vec<T> {
    let mut out = Vec::new();
    for c in contacts {
        let frame = &frames[c.link];
        let r = frame_point(frame, c.offset);
        let acc = point_bias_acceleration(frame, &r);
        for axis in c.axes() {
            out.push(acc[axis]);
        }
    }
    out
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

fn frames_at(tree: &KinematicTree, state: &State) -> Vec<LinkFrame<f64>> {
    link_frames(tree, &state.q.to_vec(), state.v.as_slice())
}

fn frames_at_rest(tree: &KinematicTree, q: &super::Configuration) -> Vec<LinkFrame<f64>> {
    let qv = q.to_vec();
    link_frames(tree, &qv, &vec![0.0; qv.len()])
}

/// Contact Jacobian `J_c(q)`; rows follow contact order, tangential before normal.
pub fn contact_jacobian(
    tree: &KinematicTree,
    q: &super::Configuration,
    contacts: &[ContactPoint],
) -> Result<DMatrix<f64>, super::ModelError> {
    for c in contacts {
        tree.validate_contact(c)?;
    }
    let frames = frames_at_rest(tree, q);
    Ok(rows_to_matrix(&contact_rows(tree, &frames, contacts), tree.nv()))
}

/// Drift term `J̇_c v`.
pub fn jdot_v(
    tree: &KinematicTree,
    state: &State,
    contacts: &[ContactPoint],
) -> Result<DVector<f64>, super::ModelError> {
    for c in contacts {
        tree.validate_contact(c)?;
    }
    let frames = frames_at(tree, state);
    Ok(DVector::from_vec(contact_drift(&frames, contacts)))
}

pub fn point_position(tree: &KinematicTree, q: &super::Configuration, link: usize, offset: [f64; 2]) -> [f64; 2] {
    let frames = frames_at_rest(tree, q);
    frame_point(&frames[link], offset)
}

/// 2×n Jacobian of a link-fixed point.
pub fn point_jacobian(tree: &KinematicTree, q: &super::Configuration, link: usize, offset: [f64; 2]) -> DMatrix<f64> {
    let frames = frames_at_rest(tree, q);
    let r = frame_point(&frames[link], offset);
    let rows = point_rows(tree, &frames, link, &r);
    rows_to_matrix(&rows, tree.nv())
}

/// World positions of each contact point.
pub fn contact_positions(tree: &KinematicTree, q: &super::Configuration, contacts: &[ContactPoint]) -> Vec<[f64; 2]> {
    let frames = frames_at_rest(tree, q);
    contacts.iter().map(|c| frame_point(&frames[c.link], c.offset)).collect()
}

/// World velocities of each contact point.
pub fn contact_velocities(tree: &KinematicTree, state: &State, contacts: &[ContactPoint]) -> Vec<[f64; 2]> {
    let frames = frames_at(tree, state);
    contacts
        .iter()
        .map(|c| {
            let r = frame_point(&frames[c.link], c.offset);
            point_velocity_of(&frames[c.link].velocity, &r)
        })
        .collect()
}

pub(crate) fn com_generic<T: Real>(tree: &KinematicTree, frames: &[LinkFrame<T>]) -> [T; 2] {
    let mut acc = [T::zero(), T::zero()];
    for (link, frame) in tree.links().iter().zip(frames) {
        let c = frame_point(frame, link.com_offset);
        acc[0] += c[0] * link.mass;
        acc[1] += c[1] * link.mass;
    }
    let inv = 1.0 / tree.total_mass();
    [acc[0] * inv, acc[1] * inv]
}

/// Centre of mass.
pub fn com(tree: &KinematicTree, q: &super::Configuration) -> [f64; 2] {
    com_generic(tree, &frames_at_rest(tree, q))
}

/// 2×n CoM Jacobian (mass-weighted link CoM Jacobians).
pub fn com_jacobian(tree: &KinematicTree, q: &super::Configuration) -> DMatrix<f64> {
    let frames = frames_at_rest(tree, q);
    let n = tree.nv();
    let mut jac = DMatrix::zeros(2, n);
    for (i, (link, frame)) in tree.links().iter().zip(&frames).enumerate() {
        let c = frame_point(frame, link.com_offset);
        let rows = point_rows(tree, &frames, i, &c);
        for j in 0..n {
            jac[(0, j)] += link.mass * rows[0][j];
            jac[(1, j)] += link.mass * rows[1][j];
        }
    }
    jac / tree.total_mass()
}

pub fn com_velocity(tree: &KinematicTree, state: &State) -> [f64; 2] {
    let v = com_jacobian(tree, &state.q) * &state.v;
    [v[0], v[1]]
}

/// Out-of-plane angular momentum about the CoM, computed from the total
/// spatial momentum at the world origin shifted to the CoM.
pub fn centroidal_angular_momentum(tree: &KinematicTree, state: &State) -> f64 {
    let frames = frames_at(tree, state);
    let mut h = [0.0; 3];
    for (link, frame) in tree.links().iter().zip(&frames) {
        let c = frame_point(frame, link.com_offset);
        let hi = super::dynamics::spatial_inertia_times(link, &c, &frame.velocity);
        for k in 0..3 {
            h[k] += hi[k];
        }
    }
    let c = com_generic(tree, &frames);
    h[0] - (c[0] * h[2] - c[1] * h[1])
}
