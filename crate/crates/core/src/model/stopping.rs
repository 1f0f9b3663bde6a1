use super::{ActionId, ControlModel, StoppingModel, WeightCertificate};
use crate::rng::StreamHandle;

/// Stop action of the augmented model.
pub const STOP: ActionId = ActionId(0);
/// Continue action of the augmented model.
pub const CONTINUE: ActionId = ActionId(1);

/// State of the augmented space `𝕐 = 𝕏 ∪ {Υ}`. The hold state is a separate
/// variant, never a coordinate value of a real state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Augmented<S> {
    Real(S),
    Hold,
}

impl<S> Augmented<S> {
    pub fn is_hold(&self) -> bool {
        matches!(self, Augmented::Hold)
    }

    pub fn real(&self) -> Option<&S> {
        match self {
            Augmented::Real(s) => Some(s),
            Augmented::Hold => None,
        }
    }
}

/// Two-action control model embedding an optimal stopping problem.
///
/// Stopping or being in the hold state moves to the hold state; the hold
/// state pays nothing. Continuing from a real state pays `g` and follows the
/// original dynamics, stopping pays `G`.
#[derive(Debug, Clone)]
pub struct StoppingAugmentation<M> {
    inner: M,
    certificate: WeightCertificate,
    unit_sample_cost: f64,
}

/// Embed `model` as a control problem with actions `{STOP, CONTINUE}`,
/// `w ≡ 1`, `λ = 1` and `κ = sup |g| + |G|`.
pub fn augment_stopping<M: StoppingModel>(model: M) -> StoppingAugmentation<M> {
    let certificate = WeightCertificate {
        lambda: 1.0,
        kappa: model.payoff_bound(),
        lipschitz: model.discount(),
    };
    let unit_sample_cost = model.unit_sample_cost();
    StoppingAugmentation {
        inner: model,
        certificate,
        unit_sample_cost,
    }
}

impl<M> StoppingAugmentation<M> {
    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn with_certificate(mut self, certificate: WeightCertificate) -> Self {
        self.certificate = certificate;
        self
    }

    pub fn with_unit_sample_cost(mut self, cost: f64) -> Self {
        self.unit_sample_cost = cost;
        self
    }
}

impl<M: StoppingModel> ControlModel for StoppingAugmentation<M> {
    type State = Augmented<M::State>;

    fn action_count(&self) -> usize {
        2
    }

    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    fn reward(&self, state: &Self::State, action: ActionId) -> f64 {
        match state {
            Augmented::Hold => 0.0,
            Augmented::Real(y) if action == STOP => self.inner.terminal_payoff(y),
            Augmented::Real(y) => self.inner.running_reward(y),
        }
    }

    fn sample_transition(&self, state: &Self::State, action: ActionId, stream: &mut StreamHandle) -> Self::State {
        match state {
            Augmented::Real(y) if action == CONTINUE => Augmented::Real(self.inner.sample_transition(y, stream)),
            _ => Augmented::Hold,
        }
    }

    fn certificate(&self) -> WeightCertificate {
        self.certificate
    }

    fn unit_sample_cost(&self) -> f64 {
        self.unit_sample_cost
    }
}
