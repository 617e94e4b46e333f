use std::io::Write;

use nalgebra::DVector;
use serde_json::json;

use super::Gains;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub terms: Vec<f64>,
    /// Accepted step length; 0 when the line search failed.
    pub alpha: f64,
    pub mu: f64,
    /// `max_i ‖Q_u‖_∞`; NaN for the initial rollout.
    pub gradient_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub term_names: Vec<String>,
    /// Entry 0 is the initial rollout.
    pub iterations: Vec<IterationRecord>,
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub lambdas: Vec<DVector<f64>>,
    pub cost: f64,
    pub converged: bool,
    /// Gains of the last successful backward pass.
    pub gains: Vec<Gains>,
}

impl SolveTrace {
    /// Number of solver iterations after the initial rollout.
    pub fn iterations_used(&self) -> usize {
        self.iterations.len() - 1
    }

    /// Costs of accepted iterations, starting with the initial rollout.
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.iterations.iter().filter(|r| r.accepted).map(|r| r.cost).collect()
    }

    /// Each term divided by its initial value (NaN when that is zero).
    pub fn normalized_terms(&self) -> Vec<Vec<f64>> {
        let first = &self.iterations[0].terms;
        self.iterations
            .iter()
            .map(|r| r.terms.iter().zip(first).map(|(v, f)| if *f != 0.0 { v / f } else { f64::NAN }).collect())
            .collect()
    }

    /// `iteration,cost,<term>...,alpha,mu,gradient_norm,accepted`.
    pub fn write_iterations_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "cost".into()];
        header.extend(self.term_names.iter().cloned());
        header.extend(["alpha", "mu", "gradient_norm", "accepted"].map(String::from));
        w.write_record(&header)?;
        for r in &self.iterations {
            let mut row = vec![r.iteration.to_string(), r.cost.to_string()];
            row.extend(r.terms.iter().map(f64::to_string));
            row.extend([r.alpha.to_string(), r.mu.to_string(), r.gradient_norm.to_string(), (r.accepted as u8).to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let finite = |v: f64| if v.is_finite() { json!(v) } else { serde_json::Value::Null };
        json!({
            "converged": self.converged,
            "iterations": self.iterations_used(),
            "cost": finite(self.cost),
            "terms": self.term_names.iter().zip(&self.iterations.last().expect("initial record").terms)
                .map(|(n, v)| (n.clone(), finite(*v))).collect::<serde_json::Map<_, _>>(),
            "history": self.iterations.iter().map(|r| json!({
                "iteration": r.iteration,
                "cost": finite(r.cost),
                "alpha": r.alpha,
                "mu": r.mu,
                "gradient_norm": finite(r.gradient_norm),
                "accepted": r.accepted,
            })).collect::<Vec<_>>(),
        })
    }
}
