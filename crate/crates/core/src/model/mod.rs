//! Problem classes: functional fixed-point equations, controlled MDPs and
//! optimal stopping, together with a small zoo of concrete models.

mod config;
mod finite;
mod stopping;
pub mod zoo;

use std::fmt;
use std::ops::Index;

use smallvec::SmallVec;
use thiserror::Error;

use crate::rng::StreamHandle;

pub use config::{CertificateSpec, ConfiguredModel, ExperimentModel, ModelSpec, ModelVisitor, KNOWN_FAMILIES};
pub use finite::{finite_as_control, sample_categorical, FiniteControl, FiniteModel, FiniteStoppingModel};
pub use stopping::{augment_stopping, Augmented, StoppingAugmentation, CONTINUE, STOP};

/// Tolerance on transition-row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transition row (state {state}, action {action}) sums to {sum}, expected 1")]
    MalformedRow { state: usize, action: usize, sum: f64 },
    #[error("transition probability {value} at (state {state}, action {action}) is outside [0, 1]")]
    InvalidProbability { state: usize, action: usize, value: f64 },
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("discount {0} is outside [0, 1)")]
    InvalidDiscount(f64),
    #[error("contraction condition violated: lambda * L = {product} must be < 1")]
    NoContraction { product: f64 },
    #[error("reward bound violated at {state}: |g| = {reward} > kappa * w = {bound}")]
    RewardBound { state: String, reward: f64, bound: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("unknown model family `{family}`; known families: {}", KNOWN_FAMILIES.join(", "))]
    UnknownFamily { family: String },
    #[error("malformed state: {0}")]
    MalformedState(String),
    #[error("model config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Index into the finite action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense vector `r ∈ ℝ^A`.
#[derive(Clone, PartialEq, Default)]
pub struct ActionValues(SmallVec<[f64; 4]>);

impl ActionValues {
    pub fn zeros(actions: usize) -> Self {
        Self(SmallVec::from_elem(0.0, actions))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(SmallVec::from_vec(values))
    }

    pub fn from_fn(actions: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self((0..actions).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    /// `‖r‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_a |r(a) - s(a)|`.
    pub fn sup_distance(&self, other: &ActionValues) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for ActionValues {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl fmt::Debug for ActionValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<f64>> for ActionValues {
    fn from(v: Vec<f64>) -> Self {
        Self::from_vec(v)
    }
}

/// `max_a r(a)`: the value of a state given its action values.
#[inline]
pub fn value_from_q(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Lowest-index maximizing action.
pub fn greedy_action(q: &[f64]) -> ActionId {
    let mut best = 0;
    for (a, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = a;
        }
    }
    ActionId(best)
}

/// Declared constants of the weighted sup-norm setting.
///
/// `lambda` bounds the transition growth of the weight, `kappa` bounds the
/// driver (reward) relative to the weight and `lipschitz` is the Lipschitz
/// constant of the driver in its vector argument (the discount for Bellman
/// drivers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCertificate {
    pub lambda: f64,
    pub kappa: f64,
    pub lipschitz: f64,
}

impl WeightCertificate {
    pub fn new(lambda: f64, kappa: f64, lipschitz: f64) -> Result<Self, ModelError> {
        let cert = Self {
            lambda,
            kappa,
            lipschitz,
        };
        cert.validate()?;
        Ok(cert)
    }

    /// `λ·L`, the contraction factor in the weighted norm.
    pub fn contraction(&self) -> f64 {
        self.lambda * self.lipschitz
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("lipschitz", self.lipschitz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidParameter {
                    name: name.into(),
                    reason: format!("must be a finite nonnegative number, got {v}"),
                });
            }
        }
        let product = self.contraction();
        if product >= 1.0 {
            return Err(ModelError::NoContraction { product });
        }
        Ok(())
    }
}

/// Controlled Markov model with finite action set and discount `δ ∈ [0, 1)`.
///
/// Implementations must be pure in `(state, action, stream contents)`; all
/// mutable state lives in the caller's stream.
pub trait ControlModel: Sync {
    type State: Clone + Send + Sync + fmt::Debug;

    fn action_count(&self) -> usize;

    fn discount(&self) -> f64;

    /// `g(x, a)`.
    fn reward(&self, state: &Self::State, action: ActionId) -> f64;

    fn sample_transition(&self, state: &Self::State, action: ActionId, stream: &mut StreamHandle) -> Self::State;

    /// Weight `w(x) > 0` of the weighted sup norm.
    fn weight(&self, _state: &Self::State) -> f64 {
        1.0
    }

    fn certificate(&self) -> WeightCertificate;

    /// Declared cost `ℜ` of one sampler call.
    fn unit_sample_cost(&self) -> f64 {
        1.0
    }

    /// `g(x, ·)`.
    fn rewards(&self, state: &Self::State) -> ActionValues {
        ActionValues::from_fn(self.action_count(), |a| self.reward(state, ActionId(a)))
    }
}

/// Model of the general functional fixed-point equation
/// `v(x, a) = E[f(X^{x,a}, v(X^{x,a}))]`.
pub trait GeneralFixedPointModel: Sync {
    type State: Clone + Send + Sync + fmt::Debug;

    fn action_count(&self) -> usize;

    /// `f(x, r)`, Lipschitz in `r` with constant `certificate().lipschitz`.
    fn driver(&self, state: &Self::State, r: &[f64]) -> f64;

    fn sample_transition(&self, state: &Self::State, action: ActionId, stream: &mut StreamHandle) -> Self::State;

    fn weight(&self, _state: &Self::State) -> f64 {
        1.0
    }

    fn certificate(&self) -> WeightCertificate;
}

/// Optimal stopping model with action-independent dynamics.
pub trait StoppingModel: Sync {
    type State: Clone + Send + Sync + fmt::Debug;

    fn discount(&self) -> f64;

    /// Running reward `g(x)` collected when continuing.
    fn running_reward(&self, state: &Self::State) -> f64;

    /// Payoff `G(x)` collected when stopping.
    fn terminal_payoff(&self, state: &Self::State) -> f64;

    fn sample_transition(&self, state: &Self::State, stream: &mut StreamHandle) -> Self::State;

    /// Declared `sup_x |g(x)| + |G(x)|`.
    fn payoff_bound(&self) -> f64;

    fn unit_sample_cost(&self) -> f64 {
        1.0
    }
}

/// `δ · max_a { g(x, a) + r(a) }`.
#[inline]
pub fn bellman_driver<C: ControlModel + ?Sized>(model: &C, state: &C::State, r: &[f64]) -> f64 {
    debug_assert_eq!(r.len(), model.action_count());
    let best = r
        .iter()
        .enumerate()
        .map(|(a, v)| model.reward(state, ActionId(a)) + v)
        .fold(f64::NEG_INFINITY, f64::max);
    model.discount() * best
}

/// A control model viewed as a general fixed-point model via the Bellman
/// driver. Its fixed point is `R = Q - g`.
#[derive(Debug, Clone, Copy)]
pub struct BellmanForm<'a, C>(pub &'a C);

impl<C: ControlModel> GeneralFixedPointModel for BellmanForm<'_, C> {
    type State = C::State;

    fn action_count(&self) -> usize {
        self.0.action_count()
    }

    fn driver(&self, state: &C::State, r: &[f64]) -> f64 {
        bellman_driver(self.0, state, r)
    }

    fn sample_transition(&self, state: &C::State, action: ActionId, stream: &mut StreamHandle) -> C::State {
        self.0.sample_transition(state, action, stream)
    }

    fn weight(&self, state: &C::State) -> f64 {
        self.0.weight(state)
    }

    fn certificate(&self) -> WeightCertificate {
        let c = self.0.certificate();
        // Bellman driver: |f(x, r)| <= δ·max|g| so the driver bound is δ·κ.
        WeightCertificate {
            kappa: self.0.discount() * c.kappa,
            lipschitz: self.0.discount(),
            ..c
        }
    }
}

/// Spot-check `|g(x, a)| <= κ·w(x)` on the given states.
pub fn check_reward_bound<C: ControlModel>(model: &C, states: &[C::State]) -> Result<(), ModelError> {
    let kappa = model.certificate().kappa;
    for s in states {
        let bound = kappa * model.weight(s);
        for a in 0..model.action_count() {
            let reward = model.reward(s, ActionId(a)).abs();
            // relative slack for rounding in κ declarations like max|g|
            if reward > bound * (1.0 + 1e-12) {
                return Err(ModelError::RewardBound {
                    state: format!("{s:?}"),
                    reward,
                    bound,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_discount(discount: f64) -> Result<(), ModelError> {
    if !(0.0..1.0).contains(&discount) {
        return Err(ModelError::InvalidDiscount(discount));
    }
    Ok(())
}
