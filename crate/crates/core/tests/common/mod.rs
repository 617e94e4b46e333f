#![allow(dead_code)]

use contact_ddp::contact_dynamics::{DynamicsDerivatives, DynamicsError};
use contact_ddp::costs::CostExpansion;
use contact_ddp::ddp::Problem;
use contact_ddp::model::{bias_forces, contact_jacobian, jdot_v, mass_matrix, Configuration, ContactPoint, KinematicTree, Link, Placement, State};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const GRAVITY: [f64; 2] = [0.0, -9.81];

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tree(rng: &mut ChaCha8Rng, n_links: usize) -> KinematicTree {
    let mut links = vec![Link::new(
        "base",
        rng.gen_range(1.0..5.0),
        [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
        rng.gen_range(0.05..0.5),
    )];
    for i in 1..n_links {
        let parent = rng.gen_range(0..i);
        links.push(
            Link::new(
                format!("l{i}"),
                rng.gen_range(0.3..3.0),
                [rng.gen_range(-0.3..0.3), rng.gen_range(-0.4..0.1)],
                rng.gen_range(0.0..0.2),
            )
            .attached(
                parent,
                Placement {
                    angle: rng.gen_range(-0.5..0.5),
                    translation: [rng.gen_range(-0.3..0.3), rng.gen_range(-0.4..0.2)],
                },
            ),
        );
    }
    KinematicTree::new(links).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, tree: &KinematicTree) -> State {
    let nj = tree.n_joints();
    let q = Configuration::new(
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)],
        (0..nj).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    );
    let v = DVector::from_fn(tree.nv(), |_, _| rng.gen_range(-1.5..1.5));
    State::new(q, v).unwrap()
}

pub fn random_torque(rng: &mut ChaCha8Rng, tree: &KinematicTree) -> DVector<f64> {
    DVector::from_fn(tree.n_joints(), |_, _| rng.gen_range(-5.0..5.0))
}

/// Random full-rank contact set: distinct links, point contacts.
pub fn random_contacts(rng: &mut ChaCha8Rng, tree: &KinematicTree, count: usize) -> Vec<ContactPoint> {
    let mut links: Vec<usize> = (0..tree.n_links()).collect();
    let mut out = Vec::new();
    for _ in 0..count.min(links.len()) {
        let link = links.remove(rng.gen_range(0..links.len()));
        let mut c = ContactPoint::point(link, [rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.0)]);
        if rng.gen_bool(0.25) {
            c.tangential = false;
        }
        out.push(c);
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Scaled max error `‖A − FD‖_max / (1 + ‖FD‖_max)` of `(f_x, f_u, g_x, g_u)`
/// against central differences of `step`. With `collapse`, the force
/// blocks are compared after left-multiplying by it.
pub fn derivative_errors(
    dynamics: &contact_ddp::contact_dynamics::ContactDynamics,
    state: &State,
    tau: &DVector<f64>,
    contacts: &[ContactPoint],
    dt: f64,
    collapse: Option<&nalgebra::DMatrix<f64>>,
) -> [f64; 4] {
    use nalgebra::DMatrix;
    let eps = 1e-6;
    let d = dynamics.derivatives(state, tau, contacts, dt).unwrap();
    let x = state.to_vector();
    let eval = |x: &DVector<f64>, u: &DVector<f64>| {
        let (next, lam) = dynamics.step(&State::from_vector(x), u, contacts, dt).unwrap();
        (next.to_vector(), lam)
    };
    let fd = |nvar: usize, perturb: &dyn Fn(usize, f64) -> (DVector<f64>, DVector<f64>)| {
        let (f0, l0) = perturb(0, 0.0);
        let mut f = DMatrix::zeros(f0.len(), nvar);
        let mut g = DMatrix::zeros(l0.len(), nvar);
        for k in 0..nvar {
            let (a, la) = perturb(k, eps);
            let (b, lb) = perturb(k, -eps);
            f.set_column(k, &((a - b) / (2.0 * eps)));
            g.set_column(k, &((la - lb) / (2.0 * eps)));
        }
        (f, g)
    };
    let (fx, gx) = fd(x.len(), &|k, e| {
        let mut xp = x.clone();
        xp[k] += e;
        eval(&xp, tau)
    });
    let (fu, gu) = fd(tau.len(), &|k, e| {
        let mut up = tau.clone();
        up[k] += e;
        eval(&x, &up)
    });
    let err = |a: &DMatrix<f64>, b: &DMatrix<f64>| if b.is_empty() { 0.0 } else { (a - b).amax() / (1.0 + b.amax()) };
    let c = |m: &DMatrix<f64>| collapse.map_or_else(|| m.clone(), |c| c * m);
    [err(&d.f_x, &fx), err(&d.f_u, &fu), err(&c(&d.g_x), &c(&gx)), err(&c(&d.g_u), &c(&gu))]
}

/// Dense undamped KKT solve by LU on the full block matrix.
pub fn dense_kkt(tree: &KinematicTree, state: &State, tau: &DVector<f64>, contacts: &[ContactPoint]) -> (DVector<f64>, DVector<f64>) {
    let n = tree.nv();
    let m = mass_matrix(tree, &state.q);
    let b = bias_forces(tree, state, GRAVITY);
    let j = contact_jacobian(tree, &state.q, contacts).unwrap();
    let gamma = jdot_v(tree, state, contacts).unwrap();
    let p = j.nrows();
    let mut k = DMatrix::zeros(n + p, n + p);
    k.view_mut((0, 0), (n, n)).copy_from(&m);
    k.view_mut((0, n), (n, p)).copy_from(&(-j.transpose()));
    k.view_mut((n, 0), (p, n)).copy_from(&j);
    let mut rhs = DVector::zeros(n + p);
    let mut st = DVector::zeros(n);
    st.rows_mut(3, tree.n_joints()).copy_from(tau);
    rhs.rows_mut(0, n).copy_from(&(st - b));
    rhs.rows_mut(n, p).copy_from(&(-gamma));
    let z = k.lu().solve(&rhs).unwrap();
    (z.rows(0, n).into_owned(), z.rows(n, p).into_owned())
}

/// `x⁺ = A x + B u`, `λ = G_x x + G_u u`,
/// `l = ½xᵀQx + ½uᵀRu + ½λᵀWλ`, `l_f = ½xᵀQ_f x`.
#[derive(Clone)]
pub struct Lqr {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gu: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub n: usize,
}

pub fn spd(rng: &mut ChaCha8Rng, k: usize, shift: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(k, k) * shift
}

impl Lqr {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, nx: usize, nu: usize, np: usize) -> Self {
        Self {
            a: DMatrix::identity(nx, nx) + DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-0.2..0.2)),
            b: DMatrix::from_fn(nx, nu, |_, _| rng.gen_range(-1.0..1.0)),
            gx: DMatrix::from_fn(np, nx, |_, _| rng.gen_range(-1.0..1.0)),
            gu: DMatrix::from_fn(np, nu, |_, _| rng.gen_range(-1.0..1.0)),
            q: spd(rng, nx, 0.1),
            r: spd(rng, nu, 0.5),
            w: spd(rng, np, 0.0) * 0.3,
            qf: spd(rng, nx, 1.0),
            x0: DVector::from_fn(nx, |_, _| rng.gen_range(-2.0..2.0)),
            n,
        }
    }

    pub fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let l = &self.gx * x + &self.gu * u;
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)) + l.dot(&(&self.w * &l)))
    }
}

impl Problem for Lqr {
    fn horizon(&self) -> usize {
        self.n
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn step(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), DynamicsError> {
        Ok((&self.a * x + &self.b * u, &self.gx * x + &self.gu * u))
    }
    fn derivatives(&self, _: usize, _: &DVector<f64>, _: &DVector<f64>) -> Result<DynamicsDerivatives, DynamicsError> {
        Ok(DynamicsDerivatives {
            f_x: self.a.clone(),
            f_u: self.b.clone(),
            g_x: self.gx.clone(),
            g_u: self.gu.clone(),
        })
    }
    fn running_cost(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>, l: &DVector<f64>) -> CostExpansion {
        let mut e = CostExpansion::zeros(x.len(), u.len(), l.len());
        e.value = self.stage(x, u);
        e.l_x = &self.q * x;
        e.l_u = &self.r * u;
        e.l_lambda = &self.w * l;
        e.l_xx = self.q.clone();
        e.l_uu = self.r.clone();
        e.l_ll = self.w.clone();
        e
    }
    fn terminal_cost(&self, x: &DVector<f64>) -> CostExpansion {
        let mut e = CostExpansion::zeros(x.len(), 0, 0);
        e.value = 0.5 * x.dot(&(&self.qf * x));
        e.l_x = &self.qf * x;
        e.l_xx = self.qf.clone();
        e
    }
    fn term_names(&self) -> Vec<String> {
        vec!["quadratic".into()]
    }
    fn term_values(&self, _: usize, x: &DVector<f64>, u: Option<&DVector<f64>>, _: Option<&DVector<f64>>) -> Vec<f64> {
        match u {
            Some(u) => vec![self.stage(x, u)],
            None => vec![0.5 * x.dot(&(&self.qf * x))],
        }
    }
}

/// Riccati recursion with the force penalty folded into the stage weights.
/// Returns the feedback gains and the optimal cost.
pub fn riccati(p: &Lqr) -> (Vec<DMatrix<f64>>, f64) {
    let qq = &p.q + p.gx.transpose() * &p.w * &p.gx;
    let rr = &p.r + p.gu.transpose() * &p.w * &p.gu;
    let nn = p.gu.transpose() * &p.w * &p.gx;
    let mut s = p.qf.clone();
    let mut gains = Vec::new();
    for _ in 0..p.n {
        let h = &rr + p.b.transpose() * &s * &p.b;
        let g = &nn + p.b.transpose() * &s * &p.a;
        let k = -h.clone().try_inverse().unwrap() * &g;
        s = &qq + p.a.transpose() * &s * &p.a + g.transpose() * &k;
        s = (&s + s.transpose()) * 0.5;
        gains.push(k);
    }
    gains.reverse();
    (gains, 0.5 * p.x0.dot(&(&s * &p.x0)))
}
