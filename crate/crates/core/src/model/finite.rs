use serde::{Deserialize, Serialize};

use super::{check_discount, ActionId, ControlModel, ModelError, StoppingModel, WeightCertificate, ROW_SUM_TOLERANCE};
use crate::rng::StreamHandle;

/// Finite MDP given by explicit reward and transition tables.
///
/// `rewards[s * A + a]` is `g(s, a)`; `transitions[(s * A + a) * S + t]` is
/// the probability of moving from `s` to `t` under `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteModel {
    states: usize,
    actions: usize,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
    discount: f64,
}

impl FiniteModel {
    pub fn new(
        states: usize,
        actions: usize,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        discount: f64,
    ) -> Result<Self, ModelError> {
        let model = Self {
            states,
            actions,
            rewards,
            transitions,
            discount,
        };
        model.validate()?;
        Ok(model)
    }

    /// Build from nested tables `rewards[s][a]`, `transitions[s][a][t]`.
    pub fn from_nested(rewards: &[Vec<f64>], transitions: &[Vec<Vec<f64>>], discount: f64) -> Result<Self, ModelError> {
        let states = rewards.len();
        let actions = rewards.first().map_or(0, Vec::len);
        if transitions.len() != states {
            return Err(ModelError::Shape(format!(
                "{} reward rows but {} transition blocks",
                states,
                transitions.len()
            )));
        }
        let mut flat_r = Vec::with_capacity(states * actions);
        let mut flat_p = Vec::with_capacity(states * actions * states);
        for (s, (r, p)) in rewards.iter().zip(transitions).enumerate() {
            if r.len() != actions || p.len() != actions {
                return Err(ModelError::Shape(format!(
                    "state {s} has {} rewards and {} transition rows, expected {actions}",
                    r.len(),
                    p.len()
                )));
            }
            flat_r.extend_from_slice(r);
            for row in p {
                if row.len() != states {
                    return Err(ModelError::Shape(format!(
                        "state {s}: transition row of length {}, expected {states}",
                        row.len()
                    )));
                }
                flat_p.extend_from_slice(row);
            }
        }
        Self::new(states, actions, flat_r, flat_p, discount)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.states == 0 || self.actions == 0 {
            return Err(ModelError::Shape("need at least one state and one action".into()));
        }
        if self.rewards.len() != self.states * self.actions {
            return Err(ModelError::Shape(format!(
                "reward table has {} entries, expected {}",
                self.rewards.len(),
                self.states * self.actions
            )));
        }
        if self.transitions.len() != self.states * self.actions * self.states {
            return Err(ModelError::Shape(format!(
                "transition table has {} entries, expected {}",
                self.transitions.len(),
                self.states * self.actions * self.states
            )));
        }
        check_discount(self.discount)?;
        if let Some(bad) = self.rewards.iter().find(|r| !r.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "rewards".into(),
                reason: format!("non-finite entry {bad}"),
            });
        }
        for s in 0..self.states {
            for a in 0..self.actions {
                let row = self.row(s, a);
                if let Some(&value) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(ModelError::InvalidProbability {
                        state: s,
                        action: a,
                        value,
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(ModelError::MalformedRow {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.actions + action]
    }

    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.actions + action) * self.states;
        &self.transitions[start..start + self.states]
    }

    /// `max_{s,a} |g(s, a)|`.
    pub fn reward_sup(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Same tables, different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self, ModelError> {
        check_discount(discount)?;
        Ok(Self {
            discount,
            ..self.clone()
        })
    }

    /// Certificate valid for `w ≡ 1`: `λ = 1`, `κ = max|g|`, `L = δ`.
    pub fn unit_weight_certificate(&self) -> WeightCertificate {
        WeightCertificate {
            lambda: 1.0,
            kappa: self.reward_sup(),
            lipschitz: self.discount,
        }
    }
}

/// Inverse-CDF draw from a categorical row: the smallest index whose
/// cumulative probability exceeds `u`.
pub fn sample_categorical(row: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (j, p) in row.iter().enumerate() {
        if *p > 0.0 {
            last_positive = j;
        }
        cumulative += p;
        if u < cumulative {
            return j;
        }
    }
    // rounding left the total just below u
    last_positive
}

/// A [`FiniteModel`] with declared certificate, sampled through its tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteControl {
    model: FiniteModel,
    certificate: WeightCertificate,
    unit_sample_cost: f64,
}

/// Wrap a finite model as a [`ControlModel`] with `w ≡ 1`.
pub fn finite_as_control(model: FiniteModel, certificate: WeightCertificate) -> Result<FiniteControl, ModelError> {
    model.validate()?;
    certificate.validate()?;
    Ok(FiniteControl {
        model,
        certificate,
        unit_sample_cost: 1.0,
    })
}

impl FiniteControl {
    /// Wrap with the unit-weight certificate of the tables.
    pub fn new(model: FiniteModel) -> Result<Self, ModelError> {
        let cert = model.unit_weight_certificate();
        finite_as_control(model, cert)
    }

    pub fn model(&self) -> &FiniteModel {
        &self.model
    }

    pub fn with_unit_sample_cost(mut self, cost: f64) -> Self {
        self.unit_sample_cost = cost;
        self
    }
}

impl ControlModel for FiniteControl {
    type State = usize;

    fn action_count(&self) -> usize {
        self.model.actions
    }

    fn discount(&self) -> f64 {
        self.model.discount
    }

    #[inline]
    fn reward(&self, state: &usize, action: ActionId) -> f64 {
        self.model.reward(*state, action.0)
    }

    #[inline]
    fn sample_transition(&self, state: &usize, action: ActionId, stream: &mut StreamHandle) -> usize {
        sample_categorical(self.model.row(*state, action.0), stream.draw_uniform())
    }

    fn certificate(&self) -> WeightCertificate {
        self.certificate
    }

    fn unit_sample_cost(&self) -> f64 {
        self.unit_sample_cost
    }
}

/// Finite optimal stopping problem: running reward, stopping payoff and an
/// uncontrolled transition matrix `transitions[s * S + t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteStoppingModel {
    running_reward: Vec<f64>,
    terminal_payoff: Vec<f64>,
    transitions: Vec<f64>,
    discount: f64,
}

impl FiniteStoppingModel {
    pub fn new(
        running_reward: Vec<f64>,
        terminal_payoff: Vec<f64>,
        transitions: Vec<f64>,
        discount: f64,
    ) -> Result<Self, ModelError> {
        let model = Self {
            running_reward,
            terminal_payoff,
            transitions,
            discount,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn from_nested(
        running_reward: Vec<f64>,
        terminal_payoff: Vec<f64>,
        transitions: &[Vec<f64>],
        discount: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            running_reward,
            terminal_payoff,
            transitions.iter().flatten().copied().collect(),
            discount,
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let s = self.running_reward.len();
        if s == 0 || self.terminal_payoff.len() != s || self.transitions.len() != s * s {
            return Err(ModelError::Shape(format!(
                "stopping model with {} running rewards, {} payoffs and {} transition entries",
                s,
                self.terminal_payoff.len(),
                self.transitions.len()
            )));
        }
        // the augmented model checks rows and discount
        self.augmented_finite().map(|_| ())
    }

    pub fn states(&self) -> usize {
        self.running_reward.len()
    }

    pub fn row(&self, state: usize) -> &[f64] {
        let s = self.states();
        &self.transitions[state * s..(state + 1) * s]
    }

    /// Two-action finite model on `S + 1` states whose last state is the
    /// absorbing hold state. Action 0 stops, action 1 continues.
    pub fn augmented_finite(&self) -> Result<FiniteModel, ModelError> {
        let s = self.states();
        let hold = s;
        let total = s + 1;
        let mut rewards = Vec::with_capacity(total * 2);
        let mut transitions = vec![0.0; total * 2 * total];
        for y in 0..total {
            if y == hold {
                rewards.extend_from_slice(&[0.0, 0.0]);
            } else {
                rewards.extend_from_slice(&[self.terminal_payoff[y], self.running_reward[y]]);
            }
            for a in 0..2 {
                let base = (y * 2 + a) * total;
                if y == hold || a == 0 {
                    transitions[base + hold] = 1.0;
                } else {
                    transitions[base..base + s].copy_from_slice(self.row(y));
                }
            }
        }
        FiniteModel::new(total, 2, rewards, transitions, self.discount)
    }

    pub fn running_rewards(&self) -> &[f64] {
        &self.running_reward
    }

    pub fn terminal_payoffs(&self) -> &[f64] {
        &self.terminal_payoff
    }
}

impl StoppingModel for FiniteStoppingModel {
    type State = usize;

    fn discount(&self) -> f64 {
        self.discount
    }

    fn running_reward(&self, state: &usize) -> f64 {
        self.running_reward[*state]
    }

    fn terminal_payoff(&self, state: &usize) -> f64 {
        self.terminal_payoff[*state]
    }

    fn sample_transition(&self, state: &usize, stream: &mut StreamHandle) -> usize {
        sample_categorical(self.row(*state), stream.draw_uniform())
    }

    fn payoff_bound(&self) -> f64 {
        self.running_reward
            .iter()
            .zip(&self.terminal_payoff)
            .fold(0.0, |m, (g, big_g)| m.max(g.abs() + big_g.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn inverse_cdf_examples() {
        assert_eq!(sample_categorical(&[1.0, 0.0, 0.0], 0.0), 0);
        assert_eq!(sample_categorical(&[1.0, 0.0, 0.0], 0.999_999), 0);
        assert_eq!(sample_categorical(&[0.5, 0.5], 0.25), 0);
        assert_eq!(sample_categorical(&[0.5, 0.5], 0.75), 1);
        assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.45), 1);
    }

    #[test]
    fn inverse_cdf_never_returns_zero_probability_state() {
        // cumulative sum rounds to slightly below one
        let row = [0.1, 0.2, 0.7 - 1e-13, 0.0];
        assert_eq!(sample_categorical(&row, 1.0 - 1e-17), 2);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let err = FiniteModel::new(2, 1, vec![0.0, 0.0], vec![0.5, 0.4, 0.0, 1.0], 0.5).unwrap_err();
        assert!(matches!(
            err,
            ModelError::MalformedRow {
                state: 0,
                action: 0,
                ..
            }
        ));
        let err = FiniteModel::new(1, 1, vec![0.0], vec![1.0 + 1e-11], 0.5).unwrap_err();
        assert!(matches!(err, ModelError::InvalidProbability { .. }));
        assert!(FiniteModel::new(1, 1, vec![0.0], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn deserialized_malformed_model_is_rejected_by_finite_as_control() {
        let json = r#"{"states":1,"actions":1,"rewards":[0.0],"transitions":[0.9],"discount":0.5}"#;
        let model: FiniteModel = serde_json::from_str(json).unwrap();
        let cert = WeightCertificate::new(1.0, 0.0, 0.5).unwrap();
        assert!(matches!(
            finite_as_control(model, cert),
            Err(ModelError::MalformedRow { .. })
        ));
    }

    #[test]
    fn sampling_follows_row_frequencies() {
        let m = FiniteControl::new(
            FiniteModel::new(
                3,
                1,
                vec![0.0; 3],
                vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
                0.5,
            )
            .unwrap(),
        )
        .unwrap();
        let key = StreamKey::root(4, 0);
        let n = 100_000u64;
        let mut counts = [0u64; 3];
        for i in 1..=n {
            let mut s = key.site_action_stream(0, i, 0);
            counts[m.sample_transition(&0, ActionId(0), &mut s)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let freq = *c as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "{freq} vs {p}");
        }
    }

    #[test]
    fn augmented_finite_layout() {
        let m =
            FiniteStoppingModel::from_nested(vec![0.1, 0.2], vec![1.0, -1.0], &[vec![0.5, 0.5], vec![0.0, 1.0]], 0.5)
                .unwrap();
        let aug = m.augmented_finite().unwrap();
        assert_eq!(aug.states(), 3);
        assert_eq!(aug.reward(0, 0), 1.0);
        assert_eq!(aug.reward(0, 1), 0.1);
        assert_eq!(aug.reward(2, 1), 0.0);
        assert_eq!(aug.row(0, 0), &[0.0, 0.0, 1.0]);
        assert_eq!(aug.row(0, 1), &[0.5, 0.5, 0.0]);
        assert_eq!(aug.row(2, 1), &[0.0, 0.0, 1.0]);
        assert_eq!(m.payoff_bound(), 1.2);
    }
}
