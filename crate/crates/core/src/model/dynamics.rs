use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::kinematics::{dof_motion, frame_point, link_frames, LinkFrame, Motion};
use super::scalar::Real;
use super::{Configuration, KinematicTree, Link, State, BASE_DOF};

/// `I_O · m` for a link with world CoM `c`, without building the matrix.
pub(crate) fn spatial_inertia_times<T: Real>(link: &Link, c: &[T; 2], m: &Motion<T>) -> Motion<T> {
    let mass = link.mass;
    let rot = (c[0] * c[0] + c[1] * c[1]) * mass + link.inertia;
    [
        m[0] * rot - c[1] * m[1] * mass + c[0] * m[2] * mass,
        (m[1] - c[1] * m[0]) * mass,
        (m[2] + c[0] * m[0]) * mass,
    ]
}

fn spatial_inertia(link: &Link, c: &[f64; 2]) -> Matrix3<f64> {
    let m = link.mass;
    Matrix3::new(
        link.inertia + m * (c[0] * c[0] + c[1] * c[1]),
        -m * c[1],
        m * c[0],
        -m * c[1],
        m,
        0.0,
        m * c[0],
        0.0,
        m,
    )
}

#[inline]
fn dot<T: Real>(m: &Motion<T>, f: &Motion<T>) -> T {
    m[0] * f[0] + m[1] * f[1] + m[2] * f[2]
}

/// Recursive Newton-Euler over precomputed frames: returns `M(q)·a + b(q, v)`.
pub(crate) fn rnea<T: Real>(
    tree: &KinematicTree,
    frames: &[LinkFrame<T>],
    accel: &[T],
    gravity: [f64; 2],
) -> Vec<T> {
    let links = tree.links();
    let mut acc: Vec<Motion<T>> = Vec::with_capacity(links.len());
    let mut forces: Vec<Motion<T>> = Vec::with_capacity(links.len());
    for (i, (link, frame)) in links.iter().zip(frames).enumerate() {
        let driven = if i == 0 {
            let mut a = [T::zero(), accel[0], accel[1]];
            let s = dof_motion(frames, 2);
            for k in 0..3 {
                a[k] += s[k] * accel[2];
            }
            a
        } else {
            let parent = acc[link.parent.expect("validated tree order")];
            let dof = KinematicTree::joint_dof(i);
            let s = dof_motion(frames, dof);
            [
                parent[0] + s[0] * accel[dof],
                parent[1] + s[1] * accel[dof],
                parent[2] + s[2] * accel[dof],
            ]
        };
        acc.push(driven);
        let a = [
            driven[0] + frame.bias[0],
            driven[1] + frame.bias[1] - gravity[0],
            driven[2] + frame.bias[2] - gravity[1],
        ];
        let c = frame_point(frame, link.com_offset);
        let ia = spatial_inertia_times(link, &c, &a);
        let h = spatial_inertia_times(link, &c, &frame.velocity);
        let v = frame.velocity;
        forces.push([
            ia[0] + v[1] * h[2] - v[2] * h[1],
            ia[1] - v[0] * h[2],
            ia[2] + v[0] * h[1],
        ]);
    }
    let mut tau = vec![T::zero(); tree.nv()];
    for i in (1..links.len()).rev() {
        let f = forces[i];
        let dof = KinematicTree::joint_dof(i);
        tau[dof] = dot(&dof_motion(frames, dof), &f);
        let p = links[i].parent.expect("validated tree order");
        for k in 0..3 {
            forces[p][k] += f[k];
        }
    }
    for (dof, t) in tau.iter_mut().enumerate().take(BASE_DOF) {
        *t = dot(&dof_motion(frames, dof), &forces[0]);
    }
    tau
}

/// Joint-space inertia matrix by the composite-rigid-body algorithm.
pub fn mass_matrix(tree: &KinematicTree, q: &Configuration) -> DMatrix<f64> {
    let qv = q.to_vec();
    let frames = link_frames(tree, &qv, &vec![0.0; qv.len()]);
    let links = tree.links();
    let mut composite: Vec<Matrix3<f64>> = links
        .iter()
        .zip(&frames)
        .map(|(l, f)| spatial_inertia(l, &frame_point(f, l.com_offset)))
        .collect();
    for i in (1..links.len()).rev() {
        let p = links[i].parent.expect("validated tree order");
        let ci = composite[i];
        composite[p] += ci;
    }
    let n = tree.nv();
    let motion = |dof: usize| Vector3::from(dof_motion(&frames, dof));
    let base: Vec<Vector3<f64>> = (0..BASE_DOF).map(motion).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 1..links.len() {
        let dof = KinematicTree::joint_dof(i);
        let force = composite[i] * motion(dof);
        m[(dof, dof)] = motion(dof).dot(&force);
        let mut j = links[i].parent.expect("validated tree order");
        while j > 0 {
            let other = KinematicTree::joint_dof(j);
            let value = motion(other).dot(&force);
            m[(other, dof)] = value;
            m[(dof, other)] = value;
            j = links[j].parent.expect("validated tree order");
        }
        for (b, s) in base.iter().enumerate() {
            let value = s.dot(&force);
            m[(b, dof)] = value;
            m[(dof, b)] = value;
        }
    }
    for (r, sr) in base.iter().enumerate() {
        for (c, sc) in base.iter().enumerate() {
            m[(r, c)] = sr.dot(&(composite[0] * sc));
        }
    }
    m
}

/// Coriolis, centrifugal and gravity terms `b(q, v)`, with `M v̇ = S τ − b`.
pub fn bias_forces(tree: &KinematicTree, state: &State, gravity: [f64; 2]) -> DVector<f64> {
    let zero = vec![0.0; tree.nv()];
    inverse_dynamics_slice(tree, state, &zero, gravity)
}

/// `M(q) a + b(q, v)`.
pub fn inverse_dynamics(tree: &KinematicTree, state: &State, accel: &DVector<f64>, gravity: [f64; 2]) -> DVector<f64> {
    inverse_dynamics_slice(tree, state, accel.as_slice(), gravity)
}

fn inverse_dynamics_slice(tree: &KinematicTree, state: &State, accel: &[f64], gravity: [f64; 2]) -> DVector<f64> {
    let frames = link_frames(tree, &state.q.to_vec(), state.v.as_slice());
    DVector::from_vec(rnea(tree, &frames, accel, gravity))
}
