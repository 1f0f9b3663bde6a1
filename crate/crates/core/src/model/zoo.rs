//! Fixed test models used by the harness and the acceptance suite.

use super::{
    check_discount, finite::FiniteStoppingModel, ActionId, ControlModel, FiniteControl, FiniteModel, ModelError,
    StoppingModel, WeightCertificate,
};
use crate::rng::{StreamHandle, StreamKey};

/// Root entry of the θ-tree used to generate random model tables, disjoint
/// from the estimator root `(0)`.
const TABLE_ROOT: i64 = -1;

/// One state, two actions, `g = (1, 0)`, deterministic self-loop, `δ = 0.5`.
/// Exact Q-function `(2, 1)`.
pub fn single_state_det() -> FiniteControl {
    let model = FiniteModel::new(1, 2, vec![1.0, 0.0], vec![1.0, 1.0], 0.5).expect("static tables are valid");
    FiniteControl::new(model).expect("static tables are valid")
}

/// Random finite MDP with `g ~ U[0, 1]` and rows given by normalized uniforms.
pub fn chain_finite(states: usize, actions: usize, seed: u64, discount: f64) -> Result<FiniteControl, ModelError> {
    if states == 0 || actions == 0 {
        return Err(ModelError::InvalidParameter {
            name: "states/actions".into(),
            reason: "must be positive".into(),
        });
    }
    check_discount(discount)?;
    let mut stream = StreamKey::seed(seed).site_stream(TABLE_ROOT, 0);
    let rewards: Vec<f64> = (0..states * actions).map(|_| stream.draw_uniform()).collect();
    let mut transitions = Vec::with_capacity(states * actions * states);
    for _ in 0..states * actions {
        let raw: Vec<f64> = (0..states).map(|_| stream.draw_open_uniform()).collect();
        let total: f64 = raw.iter().sum();
        transitions.extend(raw.iter().map(|u| u / total));
    }
    FiniteControl::new(FiniteModel::new(states, actions, rewards, transitions, discount)?)
}

/// Two-state symmetric walk with `g ≡ 0`, `G = (1, 0)` and `δ = 0.5`.
/// Its stopping value is `1/3` in both states.
pub fn two_state_stopping() -> FiniteStoppingModel {
    FiniteStoppingModel::from_nested(vec![0.0, 0.0], vec![1.0, 0.0], &[vec![0.5, 0.5], vec![0.5, 0.5]], 0.5)
        .expect("static tables are valid")
}

/// Gaussian linear dynamics on `ℝ^d`:
/// `X' = x/2 + a·μ + Z` with `μ = d^{-1/2}·(1, …, 1)`, `Z ~ N(0, I)` and
/// bounded reward `g(x, a) = cos⟨c_a, x⟩`, `c_a = (a + 1)·d^{-1/2}·(1, -1, 1, …)`.
#[derive(Debug, Clone)]
pub struct GaussControl {
    dim: usize,
    actions: usize,
    discount: f64,
    certificate: WeightCertificate,
    unit_sample_cost: f64,
}

impl GaussControl {
    pub fn new(dim: usize, actions: usize, discount: f64) -> Result<Self, ModelError> {
        if dim == 0 || actions == 0 {
            return Err(ModelError::InvalidParameter {
                name: "dim/actions".into(),
                reason: "must be positive".into(),
            });
        }
        check_discount(discount)?;
        Ok(Self {
            dim,
            actions,
            discount,
            certificate: WeightCertificate {
                lambda: 1.0,
                kappa: 1.0,
                lipschitz: discount,
            },
            unit_sample_cost: dim as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_certificate(mut self, certificate: WeightCertificate) -> Self {
        self.certificate = certificate;
        self
    }

    pub fn with_unit_sample_cost(mut self, cost: f64) -> Self {
        self.unit_sample_cost = cost;
        self
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }
}

impl ControlModel for GaussControl {
    type State = Vec<f64>;

    fn action_count(&self) -> usize {
        self.actions
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn reward(&self, state: &Vec<f64>, action: ActionId) -> f64 {
        let c = (action.0 + 1) as f64 * self.scale();
        let inner: f64 = state
            .iter()
            .enumerate()
            .map(|(k, x)| if k % 2 == 0 { c * x } else { -c * x })
            .sum();
        inner.cos()
    }

    fn sample_transition(&self, state: &Vec<f64>, action: ActionId, stream: &mut StreamHandle) -> Vec<f64> {
        let drift = action.0 as f64 * self.scale();
        state
            .iter()
            .map(|x| 0.5 * x + drift + stream.draw_standard_normal())
            .collect()
    }

    fn certificate(&self) -> WeightCertificate {
        self.certificate
    }

    fn unit_sample_cost(&self) -> f64 {
        self.unit_sample_cost
    }
}

/// Symmetric ±1 random walk on `ℤ^d` with stopping payoff
/// `G(x) = clamp(mean(x), -1, 1)` and running reward `g ≡ 0.05`.
#[derive(Debug, Clone)]
pub struct StoppingWalk {
    dim: usize,
    discount: f64,
}

impl StoppingWalk {
    pub const RUNNING_REWARD: f64 = 0.05;

    pub fn new(dim: usize, discount: f64) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidParameter {
                name: "dim".into(),
                reason: "must be positive".into(),
            });
        }
        check_discount(discount)?;
        Ok(Self { dim, discount })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl StoppingModel for StoppingWalk {
    type State = Vec<i64>;

    fn discount(&self) -> f64 {
        self.discount
    }

    fn running_reward(&self, _state: &Vec<i64>) -> f64 {
        Self::RUNNING_REWARD
    }

    fn terminal_payoff(&self, state: &Vec<i64>) -> f64 {
        let mean = state.iter().sum::<i64>() as f64 / state.len() as f64;
        mean.clamp(-1.0, 1.0)
    }

    fn sample_transition(&self, state: &Vec<i64>, stream: &mut StreamHandle) -> Vec<i64> {
        state
            .iter()
            .map(|x| if stream.draw_uniform() < 0.5 { x - 1 } else { x + 1 })
            .collect()
    }

    fn payoff_bound(&self) -> f64 {
        Self::RUNNING_REWARD + 1.0
    }

    fn unit_sample_cost(&self) -> f64 {
        self.dim as f64
    }
}
