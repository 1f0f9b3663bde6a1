//! Exact solutions of finite models by Picard iteration in the sup norm.
//!
//! Expectations are exact left-to-right sums over probability rows. Iteration
//! starts at `Q = g` and stops once the a-posteriori distance bound
//! `residual·δ/(1 - δ)` is at most the tolerance.

use thiserror::Error;

use crate::model::{FiniteModel, FiniteStoppingModel, StoppingModel};

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 1_000_000;
pub const POLISH_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("discount {0} must lie in [0, 1)")]
    InvalidDiscount(f64),
    #[error("tolerance {0} must be positive")]
    InvalidTolerance(f64),
    #[error("initial table has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("no convergence after {0} iterations")]
    NotConverged(usize),
}

/// Q-function of a finite model, `values[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<f64>,
    pub states: usize,
    pub actions: usize,
    /// Sup-norm distance of the last iteration step, `∞` before any step.
    pub residual: f64,
    /// Guaranteed sup-norm distance to the fixed point.
    pub error_certificate: f64,
    pub iterations: usize,
}

impl QTable {
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.actions..(state + 1) * self.actions]
    }

    pub fn value(&self, state: usize) -> f64 {
        crate::model::value_from_q(self.row(state))
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

/// Per-state stopping values `Q(x)` of a finite stopping problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTable {
    pub values: Vec<f64>,
    pub residual: f64,
    pub error_certificate: f64,
    pub iterations: usize,
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn certificate(residual: f64, discount: f64) -> f64 {
    if residual.is_infinite() {
        f64::INFINITY
    } else {
        residual * discount / (1.0 - discount)
    }
}

fn rewards(model: &FiniteModel) -> Vec<f64> {
    (0..model.states())
        .flat_map(|s| (0..model.actions()).map(move |a| (s, a)))
        .map(|(s, a)| model.reward(s, a))
        .collect()
}

/// One application of the Bellman operator to `q`.
pub fn bellman_step(model: &FiniteModel, q: &[f64]) -> Vec<f64> {
    let actions = model.actions();
    let values: Vec<f64> = q
        .chunks(actions)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let delta = model.discount();
    let mut next = Vec::with_capacity(q.len());
    for s in 0..model.states() {
        for a in 0..actions {
            let expectation: f64 = model.row(s, a).iter().zip(&values).map(|(p, v)| p * v).sum();
            next.push(model.reward(s, a) + delta * expectation);
        }
    }
    next
}

/// Sup-norm Bellman residual `‖T(Q) - Q‖`.
pub fn bellman_residual(model: &FiniteModel, table: &QTable) -> f64 {
    sup_distance(&bellman_step(model, &table.values), &table.values)
}

/// The `n`-th Picard iterate, `Q_0 = g`.
pub fn picard_iterate(model: &FiniteModel, n: usize) -> QTable {
    let mut q = rewards(model);
    let mut residual = f64::INFINITY;
    for _ in 0..n {
        let next = bellman_step(model, &q);
        residual = sup_distance(&next, &q);
        q = next;
    }
    QTable {
        values: q,
        states: model.states(),
        actions: model.actions(),
        residual,
        error_certificate: certificate(residual, model.discount()),
        iterations: n,
    }
}

/// Fixed point of the Bellman operator, iterated from `Q = g`.
pub fn exact_q(model: &FiniteModel, tol: f64) -> Result<QTable, OracleError> {
    exact_q_from(model, rewards(model), tol)
}

/// Fixed point of the Bellman operator, iterated from `init`.
pub fn exact_q_from(model: &FiniteModel, init: Vec<f64>, tol: f64) -> Result<QTable, OracleError> {
    let delta = check(model.discount(), tol)?;
    let expected = model.states() * model.actions();
    if init.len() != expected {
        return Err(OracleError::Shape {
            expected,
            got: init.len(),
        });
    }
    let mut q = init;
    for k in 1..=MAX_ITERATIONS {
        let next = bellman_step(model, &q);
        let residual = sup_distance(&next, &q);
        q = next;
        let error_certificate = certificate(residual, delta);
        if error_certificate <= tol {
            return Ok(QTable {
                values: q,
                states: model.states(),
                actions: model.actions(),
                residual,
                error_certificate,
                iterations: k,
            });
        }
    }
    Err(OracleError::NotConverged(MAX_ITERATIONS))
}

/// [`exact_q`] followed by up to [`POLISH_STEPS`] further Picard steps,
/// stopping early once the table is bitwise stationary.
pub fn exact_q_polished(model: &FiniteModel, tol: f64) -> Result<QTable, OracleError> {
    let mut table = exact_q(model, tol)?;
    for _ in 0..POLISH_STEPS {
        let next = bellman_step(model, &table.values);
        let residual = sup_distance(&next, &table.values);
        if residual == 0.0 {
            break;
        }
        table.values = next;
        table.residual = residual;
        table.error_certificate = certificate(residual, model.discount());
        table.iterations += 1;
    }
    Ok(table)
}

fn check(delta: f64, tol: f64) -> Result<f64, OracleError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(OracleError::InvalidDiscount(delta));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(OracleError::InvalidTolerance(tol));
    }
    Ok(delta)
}

/// Stopping value `Q(x) = g(x) + δ·E[max{G(X), Q(X)}]`, iterated from `Q = g`.
pub fn exact_stopping(model: &FiniteStoppingModel, tol: f64) -> Result<StoppingTable, OracleError> {
    let delta = check(model.discount(), tol)?;
    let g = model.running_rewards();
    let payoff = model.terminal_payoffs();
    let mut q = g.to_vec();
    for k in 1..=MAX_ITERATIONS {
        let continuation: Vec<f64> = payoff.iter().zip(&q).map(|(p, v)| p.max(*v)).collect();
        let next: Vec<f64> = (0..model.states())
            .map(|x| {
                let expectation: f64 = model.row(x).iter().zip(&continuation).map(|(p, v)| p * v).sum();
                g[x] + delta * expectation
            })
            .collect();
        let residual = sup_distance(&next, &q);
        q = next;
        let error_certificate = certificate(residual, delta);
        if error_certificate <= tol {
            return Ok(StoppingTable {
                values: q,
                residual,
                error_certificate,
                iterations: k,
            });
        }
    }
    Err(OracleError::NotConverged(MAX_ITERATIONS))
}
