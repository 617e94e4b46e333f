//! Per-step diagnostics of a trajectory and the CSV writers for it.

use std::io::Write;

use nalgebra::DVector;

use super::Scenario;
use crate::costs::Residual;
use crate::model::{centroidal_angular_momentum, com, contact_positions, State};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    pub phase: usize,
    /// Normal force per named model contact; `None` when inactive or at
    /// the terminal step.
    pub normals: Vec<Option<f64>>,
    pub torques: Option<DVector<f64>>,
    pub com_error: Option<f64>,
    pub angular_momentum: f64,
    pub kkt_residual: Option<f64>,
    /// Distance of each active contact point from where it stood at the
    /// start of the phase (largest over contacts).
    pub stance_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub contact_names: Vec<String>,
    pub rows: Vec<DiagnosticsRow>,
    /// Largest normal force per named contact.
    pub peak_normals: Vec<f64>,
    pub peak_normal: f64,
    /// Per phase, largest stance-point drift over the phase.
    pub phase_drift: Vec<f64>,
    /// `max_i |L_i − L_0|`.
    pub angular_momentum_deviation: f64,
    pub max_kkt_residual: f64,
    pub max_com_error: f64,
    /// Largest excursion of a joint beyond its limit (rad).
    pub max_limit_violation: f64,
}

impl DiagnosticsReport {
    pub fn max_stance_drift(&self) -> f64 {
        self.phase_drift.iter().copied().fold(0.0, f64::max)
    }
}

fn joint_limits(scenario: &Scenario) -> Option<(Vec<f64>, Vec<f64>)> {
    scenario.costs.terms.iter().find_map(|t| match &t.residual {
        Residual::JointLimitBarrier { lower, upper, .. } => Some((lower.clone(), upper.clone())),
        _ => None,
    })
}

/// Row offset of each named contact within the force vector at `step`.
fn force_rows(scenario: &Scenario, step: usize) -> Vec<Option<(Option<usize>, Option<usize>)>> {
    let phase = &scenario.phases[scenario.phase_index(step)];
    scenario
        .contact_points
        .iter()
        .map(|(name, _)| {
            let mut row = 0;
            for (n, c) in phase.contact_names.iter().zip(&phase.contacts) {
                if n == name {
                    let t = c.tangential.then_some(row);
                    let nr = c.normal.then_some(row + usize::from(c.tangential));
                    return Some((t, nr));
                }
                row += c.dims();
            }
            None
        })
        .collect()
}

pub fn diagnostics(scenario: &Scenario, xs: &[DVector<f64>], us: &[DVector<f64>], lambdas: &[DVector<f64>]) -> DiagnosticsReport {
    let tree = &scenario.tree;
    let names: Vec<String> = scenario.contact_points.iter().map(|(n, _)| n.clone()).collect();
    let dynamics = scenario.dynamics();
    let limits = joint_limits(scenario);
    let starts = scenario.phase_starts();
    let horizon = scenario.horizon();
    let mut phase_drift = vec![0.0f64; scenario.phases.len()];
    let mut anchors: Vec<Vec<[f64; 2]>> = Vec::new();
    let am0 = centroidal_angular_momentum(tree, &State::from_vector(&xs[0]));
    let mut rows = Vec::with_capacity(xs.len());
    let mut max_limit = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let state = State::from_vector(x);
        let running = i < horizon && i < us.len();
        let phase = scenario.phase_index(i);
        let mut normals = vec![None; names.len()];
        if running {
            for (k, rows) in force_rows(scenario, i).into_iter().enumerate() {
                if let Some((_, Some(r))) = rows {
                    normals[k] = lambdas.get(i).map(|l| l[r]);
                }
            }
        }
        let com_error = scenario.references.com.get(i).map(|r| {
            let c = com(tree, &state.q);
            ((c[0] - r[0]).powi(2) + (c[1] - r[1]).powi(2)).sqrt()
        });
        let kkt_residual = running
            .then(|| dynamics.kkt_solve(&state, &us[i], scenario.contacts_at(i)).ok().map(|s| s.kkt_residual))
            .flatten();
        // Drift is measured over the states a phase constrains: its start
        // through the state after its last step.
        let mut stance_drift = 0.0f64;
        for (p, &st) in starts.iter().enumerate() {
            let end = st + scenario.phases[p].duration;
            if i < st || i > end {
                continue;
            }
            let contacts = &scenario.phases[p].contacts;
            let at = contact_positions(tree, &state.q, contacts);
            if i == st {
                if anchors.len() <= p {
                    anchors.resize(p + 1, Vec::new());
                }
                anchors[p] = at.clone();
            }
            for (a, b) in anchors[p].iter().zip(&at) {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                stance_drift = stance_drift.max(d);
                phase_drift[p] = phase_drift[p].max(d);
            }
        }
        if let Some((lo, hi)) = &limits {
            for (j, q) in state.q.joints.iter().enumerate() {
                max_limit = max_limit.max(lo[j] - q).max(q - hi[j]);
            }
        }
        rows.push(DiagnosticsRow {
            step: i,
            time: i as f64 * scenario.dt,
            phase,
            normals,
            torques: running.then(|| us[i].clone()),
            com_error,
            angular_momentum: centroidal_angular_momentum(tree, &state),
            kkt_residual,
            stance_drift,
        });
    }
    let peak_normals: Vec<f64> = (0..names.len())
        .map(|k| rows.iter().filter_map(|r| r.normals[k]).fold(0.0, f64::max))
        .collect();
    DiagnosticsReport {
        peak_normal: peak_normals.iter().copied().fold(0.0, f64::max),
        peak_normals,
        phase_drift,
        angular_momentum_deviation: rows.iter().map(|r| (r.angular_momentum - am0).abs()).fold(0.0, f64::max),
        max_kkt_residual: rows.iter().filter_map(|r| r.kkt_residual).fold(0.0, f64::max),
        max_com_error: rows.iter().filter_map(|r| r.com_error).fold(0.0, f64::max),
        max_limit_violation: max_limit,
        contact_names: names,
        rows,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn joint_names(scenario: &Scenario) -> Vec<String> {
    scenario.tree.links()[1..].iter().map(|l| l.name.clone()).collect()
}

/// `step,time,phase,<contact>_normal...,normal_sum,tau_<joint>...,com_error,angular_momentum,kkt_residual,stance_drift`.
pub fn write_diagnostics_csv<W: Write>(scenario: &Scenario, report: &DiagnosticsReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let joints = joint_names(scenario);
    let mut header = vec!["step".to_string(), "time".into(), "phase".into()];
    header.extend(report.contact_names.iter().map(|n| format!("{n}_normal")));
    header.push("normal_sum".into());
    header.extend(joints.iter().map(|j| format!("tau_{j}")));
    header.extend(["com_error", "angular_momentum", "kkt_residual", "stance_drift"].map(String::from));
    w.write_record(&header)?;
    for r in &report.rows {
        let mut row = vec![r.step.to_string(), r.time.to_string(), scenario.phases[r.phase].kind.label().to_string()];
        row.extend(r.normals.iter().map(|v| opt(*v)));
        let any = r.normals.iter().any(Option::is_some);
        row.push(if any { r.normals.iter().flatten().sum::<f64>().to_string() } else { String::new() });
        match &r.torques {
            Some(t) => row.extend(t.iter().map(f64::to_string)),
            None => row.extend(joints.iter().map(|_| String::new())),
        }
        row.extend([opt(r.com_error), r.angular_momentum.to_string(), opt(r.kkt_residual), r.stance_drift.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `step,time,q_*,v_*,u_*,<contact>_t,<contact>_n...,com_x,com_z,angular_momentum`.
/// Controls are blank on the terminal row, forces blank when inactive.
pub fn write_trajectory_csv<W: Write>(scenario: &Scenario, xs: &[DVector<f64>], us: &[DVector<f64>], lambdas: &[DVector<f64>], out: W) -> csv::Result<()> {
    let tree = &scenario.tree;
    let mut w = csv::Writer::from_writer(out);
    let joints = joint_names(scenario);
    let coords: Vec<String> = ["x", "z", "theta"].iter().map(|s| s.to_string()).chain(joints.iter().cloned()).collect();
    let mut header = vec!["step".to_string(), "time".into()];
    header.extend(coords.iter().map(|c| format!("q_{c}")));
    header.extend(coords.iter().map(|c| format!("v_{c}")));
    header.extend(joints.iter().map(|j| format!("u_{j}")));
    for (n, _) in &scenario.contact_points {
        header.push(format!("{n}_t"));
        header.push(format!("{n}_n"));
    }
    header.extend(["com_x", "com_z", "angular_momentum"].map(String::from));
    w.write_record(&header)?;
    for (i, x) in xs.iter().enumerate() {
        let state = State::from_vector(x);
        let mut row = vec![i.to_string(), (i as f64 * scenario.dt).to_string()];
        row.extend(x.iter().map(f64::to_string));
        match us.get(i) {
            Some(u) => row.extend(u.iter().map(f64::to_string)),
            None => row.extend(joints.iter().map(|_| String::new())),
        }
        let rows = if i < scenario.horizon() { force_rows(scenario, i) } else { vec![None; scenario.contact_points.len()] };
        for r in rows {
            let (t, n) = r.unwrap_or((None, None));
            let pick = |k: Option<usize>| k.and_then(|k| lambdas.get(i).map(|l| l[k]));
            row.push(opt(pick(t)));
            row.push(opt(pick(n)));
        }
        let c = com(tree, &state.q);
        row.extend([c[0].to_string(), c[1].to_string(), centroidal_angular_momentum(tree, &state).to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Per running step: mass matrix, contact Jacobian, bias, drift, and the
/// solved acceleration, forces and residual.
pub fn kkt_dump(scenario: &Scenario, xs: &[DVector<f64>], us: &[DVector<f64>]) -> serde_json::Value {
    let dynamics = scenario.dynamics();
    let steps: Vec<serde_json::Value> = us
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let state = State::from_vector(&xs[i]);
            let contacts = scenario.contacts_at(i);
            let phase = &scenario.phases[scenario.phase_index(i)];
            let mut entry = serde_json::json!({
                "step": i,
                "phase": phase.kind.label(),
                "contacts": phase.contact_names,
            });
            match (dynamics.factorize(&state, contacts), dynamics.kkt_solve(&state, u, contacts)) {
                (Ok(sys), Ok(sol)) => {
                    entry["mass_matrix"] = rows_of(sys.mass_matrix()).into();
                    entry["jacobian"] = rows_of(sys.jacobian()).into();
                    entry["bias"] = sys.bias.iter().copied().collect::<Vec<_>>().into();
                    entry["drift"] = sys.drift.iter().copied().collect::<Vec<_>>().into();
                    entry["acceleration"] = sol.acceleration.iter().copied().collect::<Vec<_>>().into();
                    entry["forces"] = sol.forces.iter().copied().collect::<Vec<_>>().into();
                    entry["kkt_residual"] = sol.kkt_residual.into();
                }
                (Err(e), _) | (_, Err(e)) => entry["error"] = e.to_string().into(),
            }
            entry
        })
        .collect();
    serde_json::json!({ "damping": scenario.damping, "steps": steps })
}
