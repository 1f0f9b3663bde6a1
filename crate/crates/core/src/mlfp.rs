//! Full-history recursive multilevel fixed-point (MLFP) estimators.
//!
//! A level-`n` estimate at node `θ` telescopes over levels `l = n-1, …, 0`.
//! Level `l` averages `M^{n-l}` terms; term `i` draws one next state from the
//! stream of child `(θ, l, i)` and evaluates the driver at that state with a
//! fresh level-`l` estimate indexed `(θ, l, i)` minus (for `l >= 1`) the
//! driver with a fresh level-`(l-1)` estimate indexed `(θ, -l, i)`. Both
//! driver evaluations share the drawn state. Nodes are never memoized.
//!
//! All three estimators use the same floating-point evaluation order, so the
//! Q-estimator equals `g + ` the general estimator with the Bellman driver,
//! and the stopping estimator equals the continue component of the
//! Q-estimator on the augmented model, bit for bit:
//!
//! * for each `l` from `n-1` down to `0` and `i` from `1` to `M^{n-l}`,
//!   per action `a` in index order: `level[a] += f⁺ - f⁻`;
//! * after level `l`: `sum[a] += level[a] / M^{n-l}`;
//! * the result is `g(x, a) + sum[a]` (or `sum[a]` for the general form).
//!
//! Every `(θ, l, i, a)` sample comes from a fresh stream, so the order in
//! which actions are visited cannot change any draw. The sample of child
//! `(θ, l, i)` uses that child's stream, the action-`a` site stream of `θ`;
//! child keys are derived only for children with descendants.

use thiserror::Error;

use crate::model::{
    value_from_q, ActionId, ActionValues, ControlModel, GeneralFixedPointModel, StoppingModel, CONTINUE,
};
use crate::rng::{CostLedger, RngError, StreamKey, ThetaPath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlfpError {
    #[error("samples base M must be at least 1")]
    InvalidSamplesBase,
    #[error("M^n overflows for M = {m}, n = {n}")]
    ScheduleOverflow { m: u64, n: u32 },
    #[error("non-finite value {value} at level {level}")]
    NonFinite { level: u32, value: f64 },
    #[error(transparent)]
    Rng(#[from] RngError),
}

/// Samples base `M`, level `n` and master seed of one estimator call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlfpParams {
    pub samples_base: u64,
    pub level: u32,
    pub master_seed: u64,
}

impl MlfpParams {
    pub fn new(samples_base: u64, level: u32, master_seed: u64) -> Result<Self, MlfpError> {
        let params = Self {
            samples_base,
            level,
            master_seed,
        };
        Schedule::new(&params)?;
        Ok(params)
    }
}

/// `M^k` for `k = 0..=n`.
struct Schedule {
    counts: Vec<u64>,
}

impl Schedule {
    fn new(params: &MlfpParams) -> Result<Self, MlfpError> {
        if params.samples_base == 0 {
            return Err(MlfpError::InvalidSamplesBase);
        }
        let mut counts = Vec::with_capacity(params.level as usize + 1);
        let mut c: u64 = 1;
        counts.push(c);
        for _ in 0..params.level {
            c = c
                .checked_mul(params.samples_base)
                .filter(|c| *c < 1 << 53)
                .ok_or(MlfpError::ScheduleOverflow {
                    m: params.samples_base,
                    n: params.level,
                })?;
            counts.push(c);
        }
        Ok(Self { counts })
    }

    #[inline]
    fn count(&self, exponent: u32) -> u64 {
        self.counts[exponent as usize]
    }
}

/// Keys of the children `(θ, l, i)` and `(θ, -l, i)`, derived only when the
/// child estimate has level at least one and so draws randomness itself.
struct ChildKeys {
    upper: Option<StreamKey>,
    lower: Option<StreamKey>,
}

impl ChildKeys {
    #[inline]
    fn new(key: &StreamKey, l: u32, i: u64) -> Self {
        let tag = i64::from(l);
        Self {
            upper: (l >= 1).then(|| key.derive(tag, i)),
            lower: (l >= 2).then(|| key.derive(-tag, i)),
        }
    }
}

fn finite(value: f64, level: u32) -> Result<f64, MlfpError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MlfpError::NonFinite { level, value })
    }
}

/// General fixed-point estimator `V_n^θ(x) ∈ ℝ^A`; `V_0 ≡ 0`.
pub fn mlfp_general<G: GeneralFixedPointModel>(
    model: &G,
    params: &MlfpParams,
    x: &G::State,
    theta: &ThetaPath,
    ledger: &mut CostLedger,
) -> Result<ActionValues, MlfpError> {
    let schedule = Schedule::new(params)?;
    let key = StreamKey::for_path(params.master_seed, theta)?;
    general_node(model, &schedule, params.level, x, &key, ledger)
}

fn general_node<G: GeneralFixedPointModel>(
    model: &G,
    schedule: &Schedule,
    n: u32,
    x: &G::State,
    key: &StreamKey,
    ledger: &mut CostLedger,
) -> Result<ActionValues, MlfpError> {
    let actions = model.action_count();
    let mut sum = ActionValues::zeros(actions);
    if n == 0 {
        return Ok(sum);
    }
    let mut level_sum = ActionValues::zeros(actions);
    for l in (0..n).rev() {
        let count = schedule.count(n - l);
        level_sum.as_mut_slice().fill(0.0);
        let tag = i64::from(l);
        for i in 1..=count {
            let keys = ChildKeys::new(key, l, i);
            for a in 0..actions {
                let y = model.sample_transition(x, ActionId(a), &mut key.site_action_stream(tag, i, a));
                ledger.record_sample();
                let upper = match &keys.upper {
                    Some(k) => general_node(model, schedule, l, &y, k, ledger)?,
                    None => ActionValues::zeros(actions),
                };
                let mut term = finite(model.driver(&y, upper.as_slice()), l)?;
                if l >= 1 {
                    let lower = match &keys.lower {
                        Some(k) => general_node(model, schedule, l - 1, &y, k, ledger)?,
                        None => ActionValues::zeros(actions),
                    };
                    term -= finite(model.driver(&y, lower.as_slice()), l - 1)?;
                }
                level_sum.as_mut_slice()[a] += term;
            }
        }
        for (s, v) in sum.as_mut_slice().iter_mut().zip(level_sum.as_slice()) {
            *s += v / count as f64;
        }
    }
    Ok(sum)
}

/// Q-function estimator `Q_n^θ(x, ·)` for the Bellman equation
/// `Q(x, a) = g(x, a) + δ·E[max_b Q(X^{x,a}, b)]`; `Q_0 = g`.
pub fn mlfp_q<C: ControlModel>(
    model: &C,
    params: &MlfpParams,
    x: &C::State,
    theta: &ThetaPath,
    ledger: &mut CostLedger,
) -> Result<ActionValues, MlfpError> {
    let schedule = Schedule::new(params)?;
    let key = StreamKey::for_path(params.master_seed, theta)?;
    q_node(model, &schedule, params.level, x, &key, ledger)
}

fn q_node<C: ControlModel>(
    model: &C,
    schedule: &Schedule,
    n: u32,
    x: &C::State,
    key: &StreamKey,
    ledger: &mut CostLedger,
) -> Result<ActionValues, MlfpError> {
    let actions = model.action_count();
    let mut q = model.rewards(x);
    if n == 0 {
        return Ok(q);
    }
    let delta = model.discount();
    let mut sum = ActionValues::zeros(actions);
    let mut level_sum = ActionValues::zeros(actions);
    for l in (0..n).rev() {
        let count = schedule.count(n - l);
        level_sum.as_mut_slice().fill(0.0);
        let tag = i64::from(l);
        for i in 1..=count {
            let keys = ChildKeys::new(key, l, i);
            for a in 0..actions {
                let y = model.sample_transition(x, ActionId(a), &mut key.site_action_stream(tag, i, a));
                ledger.record_sample();
                let upper = match &keys.upper {
                    Some(k) => q_node(model, schedule, l, &y, k, ledger)?,
                    None => model.rewards(&y),
                };
                let mut term = delta * value_from_q(upper.as_slice());
                if l >= 1 {
                    let lower = match &keys.lower {
                        Some(k) => q_node(model, schedule, l - 1, &y, k, ledger)?,
                        None => model.rewards(&y),
                    };
                    term -= delta * value_from_q(lower.as_slice());
                }
                level_sum.as_mut_slice()[a] += term;
            }
        }
        for (s, v) in sum.as_mut_slice().iter_mut().zip(level_sum.as_slice()) {
            *s += v / count as f64;
        }
    }
    for (qa, s) in q.as_mut_slice().iter_mut().zip(sum.as_slice()) {
        *qa = finite(*qa + s, n)?;
    }
    Ok(q)
}

/// Optimal stopping estimator `Q_n^θ(x)` for
/// `Q(x) = g(x) + δ·E[max{G(X^x), Q(X^x)}]`; `Q_0 = g`.
///
/// Transitions are drawn from the continue-action sub-stream of each node,
/// which makes the result identical to the continue component of
/// [`mlfp_q`] on [`augment_stopping`](crate::model::augment_stopping)`(model)`.
pub fn mlfp_stopping<M: StoppingModel>(
    model: &M,
    params: &MlfpParams,
    x: &M::State,
    theta: &ThetaPath,
    ledger: &mut CostLedger,
) -> Result<f64, MlfpError> {
    let schedule = Schedule::new(params)?;
    let key = StreamKey::for_path(params.master_seed, theta)?;
    stopping_node(model, &schedule, params.level, x, &key, ledger)
}

fn stopping_node<M: StoppingModel>(
    model: &M,
    schedule: &Schedule,
    n: u32,
    x: &M::State,
    key: &StreamKey,
    ledger: &mut CostLedger,
) -> Result<f64, MlfpError> {
    let g = model.running_reward(x);
    if n == 0 {
        return Ok(g);
    }
    let delta = model.discount();
    let mut sum = 0.0;
    for l in (0..n).rev() {
        let count = schedule.count(n - l);
        let mut level_sum = 0.0;
        let tag = i64::from(l);
        for i in 1..=count {
            let keys = ChildKeys::new(key, l, i);
            let y = model.sample_transition(x, &mut key.site_action_stream(tag, i, CONTINUE.0));
            ledger.record_sample();
            let payoff = model.terminal_payoff(&y);
            let upper = match &keys.upper {
                Some(k) => stopping_node(model, schedule, l, &y, k, ledger)?,
                None => model.running_reward(&y),
            };
            let mut term = delta * payoff.max(upper);
            if l >= 1 {
                let lower = match &keys.lower {
                    Some(k) => stopping_node(model, schedule, l - 1, &y, k, ledger)?,
                    None => model.running_reward(&y),
                };
                term -= delta * payoff.max(lower);
            }
            level_sum += term;
        }
        sum += level_sum / count as f64;
    }
    finite(g + sum, n)
}

/// One level-`l` telescoping summand of the root estimator at `x`, action `a`:
/// `max_b Q_l^{(θ,l,i)}(X, b) - 1{l >= 1}·max_b Q_{l-1}^{(θ,-l,i)}(X, b)`
/// with `X` drawn from the `(θ, l, i)` stream.
#[allow(clippy::too_many_arguments)]
pub fn telescoping_summand<C: ControlModel>(
    model: &C,
    samples_base: u64,
    level: u32,
    master_seed: u64,
    x: &C::State,
    action: ActionId,
    index: u64,
    ledger: &mut CostLedger,
) -> Result<f64, MlfpError> {
    let params = MlfpParams::new(samples_base, level, master_seed)?;
    let schedule = Schedule::new(&params)?;
    let root = StreamKey::for_path(master_seed, &ThetaPath::root())?;
    let tag = i64::from(level);
    let y = model.sample_transition(x, action, &mut root.site_action_stream(tag, index, action.0));
    ledger.record_sample();
    let upper_key = root.child(tag, index)?;
    let upper = value_from_q(q_node(model, &schedule, level, &y, &upper_key, ledger)?.as_slice());
    if level == 0 {
        return Ok(upper);
    }
    let lower_key = root.child(-tag, index)?;
    let lower = value_from_q(q_node(model, &schedule, level - 1, &y, &lower_key, ledger)?.as_slice());
    Ok(upper - lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::zoo::{self, StoppingWalk};
    use crate::model::{augment_stopping, Augmented, BellmanForm, WeightCertificate};
    use crate::rng::StreamHandle;
    use crate::theory::{cost_recursion, scheme_sampler_calls};

    fn q(model: &impl ControlModelExt, m: u64, n: u32, seed: u64) -> (Vec<f64>, u128) {
        model.run(m, n, seed)
    }

    trait ControlModelExt {
        fn run(&self, m: u64, n: u32, seed: u64) -> (Vec<f64>, u128);
    }

    impl<C: ControlModel<State = usize>> ControlModelExt for C {
        fn run(&self, m: u64, n: u32, seed: u64) -> (Vec<f64>, u128) {
            let mut ledger = CostLedger::new();
            let params = MlfpParams::new(m, n, seed).unwrap();
            let v = mlfp_q(self, &params, &0, &ThetaPath::root(), &mut ledger).unwrap();
            (v.to_vec(), ledger.sampler_calls())
        }
    }

    #[test]
    fn level_zero_returns_rewards_without_sampling() {
        let m = zoo::chain_finite(5, 2, 1, 0.1).unwrap();
        let (v, calls) = q(&m, 4, 0, 3);
        assert_eq!(v, vec![m.model().reward(0, 0), m.model().reward(0, 1)]);
        assert_eq!(calls, 0);
        let mut ledger = CostLedger::new();
        let params = MlfpParams::new(4, 0, 3).unwrap();
        let r = mlfp_general(&BellmanForm(&m), &params, &0, &ThetaPath::root(), &mut ledger).unwrap();
        assert_eq!(r.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn deterministic_model_reproduces_picard_iterates() {
        let m = zoo::single_state_det();
        for (mm, seed) in [(1, 0), (2, 5), (4, 9)] {
            assert_eq!(q(&m, mm, 1, seed).0, vec![1.5, 0.5]);
            assert_eq!(q(&m, mm, 2, seed).0, vec![1.75, 0.75]);
        }
        let mut ledger = CostLedger::new();
        let params = MlfpParams::new(3, 2, 1).unwrap();
        let r = mlfp_general(&BellmanForm(&m), &params, &0, &ThetaPath::root(), &mut ledger).unwrap();
        assert_eq!(r.to_vec(), vec![0.75, 0.75]);
    }

    #[test]
    fn ledger_matches_exact_call_count() {
        let m = zoo::chain_finite(5, 2, 1, 0.1).unwrap();
        for n in 0..=4 {
            let (_, calls) = q(&m, 4, n, 7);
            assert_eq!(calls, scheme_sampler_calls(n, 4, 2).unwrap(), "n = {n}");
        }
        let one_action = zoo::chain_finite(4, 1, 2, 0.3).unwrap();
        for n in 0..=4 {
            assert_eq!(q(&one_action, 4, n, 1).1, cost_recursion(n, 4, 1).unwrap());
        }
    }

    #[test]
    fn stopping_ledger_is_the_scalar_cost_recursion() {
        let walk = StoppingWalk::new(2, 0.5).unwrap();
        for n in 0..=4 {
            let mut ledger = CostLedger::new();
            let params = MlfpParams::new(3, n, 4).unwrap();
            mlfp_stopping(&walk, &params, &vec![0, 0], &ThetaPath::root(), &mut ledger).unwrap();
            assert_eq!(ledger.sampler_calls(), cost_recursion(n, 3, 1).unwrap());
        }
    }

    #[test]
    fn reproducible_for_fixed_inputs() {
        let m = zoo::chain_finite(5, 2, 1, 0.3).unwrap();
        let a = q(&m, 3, 3, 11);
        let b = q(&m, 3, 3, 11);
        assert_eq!(a, b);
        let c = q(&m, 3, 3, 12);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn transformation_identity_is_bit_exact() {
        let models = [
            zoo::chain_finite(5, 2, 1, 0.1).unwrap(),
            zoo::chain_finite(3, 3, 2, 0.6).unwrap(),
            zoo::single_state_det(),
        ];
        for model in &models {
            for seed in 0..50u64 {
                for m in 1..=4 {
                    for n in 0..=3 {
                        let params = MlfpParams::new(m, n, seed).unwrap();
                        let x = (seed as usize) % model.model().states();
                        let theta = ThetaPath::root();
                        let mut l1 = CostLedger::new();
                        let mut l2 = CostLedger::new();
                        let qv = mlfp_q(model, &params, &x, &theta, &mut l1).unwrap();
                        let r = mlfp_general(&BellmanForm(model), &params, &x, &theta, &mut l2).unwrap();
                        for a in 0..qv.len() {
                            let g = model.reward(&x, ActionId(a));
                            assert_eq!(qv[a].to_bits(), (g + r[a]).to_bits());
                        }
                        assert_eq!(l1, l2);
                    }
                }
            }
        }
    }

    #[test]
    fn stopping_embedding_is_bit_exact() {
        let walk = StoppingWalk::new(2, 0.5).unwrap();
        let aug = augment_stopping(walk.clone());
        for seed in 0..10u64 {
            for m in [2, 4] {
                for n in 0..=3 {
                    let params = MlfpParams::new(m, n, seed).unwrap();
                    let x = vec![seed as i64 % 3 - 1, 1];
                    let theta = ThetaPath::root();
                    let direct = mlfp_stopping(&walk, &params, &x, &theta, &mut CostLedger::new()).unwrap();
                    let q = mlfp_q(
                        &aug,
                        &params,
                        &Augmented::Real(x.clone()),
                        &theta,
                        &mut CostLedger::new(),
                    )
                    .unwrap();
                    assert_eq!(direct.to_bits(), q[CONTINUE.0].to_bits(), "seed {seed} M {m} n {n}");
                }
            }
        }
    }

    #[test]
    fn zero_discount_stopping_returns_running_reward() {
        let walk = StoppingWalk::new(3, 0.0).unwrap();
        for n in 0..=3 {
            let params = MlfpParams::new(2, n, 1).unwrap();
            let v = mlfp_stopping(
                &walk,
                &params,
                &vec![0, 0, 0],
                &ThetaPath::root(),
                &mut CostLedger::new(),
            )
            .unwrap();
            assert_eq!(v, StoppingWalk::RUNNING_REWARD);
        }
    }

    #[test]
    fn zero_discount_q_returns_rewards() {
        let m = zoo::chain_finite(4, 3, 5, 0.0).unwrap();
        let (v, _) = q(&m, 2, 3, 8);
        assert_eq!(v, (0..3).map(|a| m.model().reward(0, a)).collect::<Vec<_>>());
    }

    #[test]
    fn distinct_theta_roots_give_independent_estimates() {
        let m = zoo::chain_finite(5, 2, 1, 0.5).unwrap();
        let params = MlfpParams::new(2, 2, 1).unwrap();
        let a = mlfp_q(&m, &params, &0, &ThetaPath::root(), &mut CostLedger::new()).unwrap();
        let b = mlfp_q(&m, &params, &0, &ThetaPath::with_root(1), &mut CostLedger::new()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(MlfpParams::new(0, 1, 0), Err(MlfpError::InvalidSamplesBase));
        assert!(matches!(
            MlfpParams::new(1 << 20, 3, 0),
            Err(MlfpError::ScheduleOverflow { .. })
        ));
    }

    struct Exploding;

    impl GeneralFixedPointModel for Exploding {
        type State = u8;
        fn action_count(&self) -> usize {
            1
        }
        fn driver(&self, _: &u8, r: &[f64]) -> f64 {
            if r[0] == 0.0 {
                f64::NAN
            } else {
                r[0]
            }
        }
        fn sample_transition(&self, x: &u8, _: ActionId, _: &mut StreamHandle) -> u8 {
            *x
        }
        fn certificate(&self) -> WeightCertificate {
            WeightCertificate {
                lambda: 1.0,
                kappa: 1.0,
                lipschitz: 0.5,
            }
        }
    }

    #[test]
    fn non_finite_driver_output_is_rejected() {
        let params = MlfpParams::new(2, 1, 0).unwrap();
        let err = mlfp_general(&Exploding, &params, &0, &ThetaPath::root(), &mut CostLedger::new());
        assert!(matches!(err, Err(MlfpError::NonFinite { level: 0, .. })));
    }

    #[test]
    fn telescoping_summand_vanishes_for_zero_discount() {
        let m = zoo::chain_finite(3, 2, 1, 0.0).unwrap();
        for level in 1..=3 {
            let d = telescoping_summand(&m, 2, level, 4, &0, ActionId(1), 1, &mut CostLedger::new()).unwrap();
            assert_eq!(d, 0.0);
        }
    }
}
