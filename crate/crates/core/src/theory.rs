//! Closed-form constants, sample schedules and cost budgets of the
//! multilevel fixed-point scheme.
//!
//! `cwl` is the product `λ·L` of the weight growth bound and the Lipschitz
//! constant of the driver; for Bellman equations with `w ≡ 1` it is the
//! discount `δ`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("contraction condition violated: cwL = {0} must satisfy 0 <= cwL < 1")]
    NoContraction(f64),
    #[error("discount {0} must lie in [0, 1)")]
    InvalidDiscount(f64),
    #[error("rate alpha = {alpha} >= 1 for M = {m}; M must exceed {threshold}")]
    Divergent { alpha: f64, m: u64, threshold: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("exact cost arithmetic overflowed 128 bits")]
    Overflow,
}

fn check_cwl(cwl: f64) -> Result<(), TheoryError> {
    if !(0.0..1.0).contains(&cwl) {
        return Err(TheoryError::NoContraction(cwl));
    }
    Ok(())
}

fn check_actions(actions: usize) -> Result<(), TheoryError> {
    if actions == 0 {
        return Err(TheoryError::InvalidArgument("action set must be nonempty".into()));
    }
    Ok(())
}

/// Right-hand side of the convergence condition on `M`:
/// `(1 + cwL(2|A| - 1))² / (1 - cwL)²`.
pub fn convergence_threshold(cwl: f64, actions: usize) -> Result<f64, TheoryError> {
    check_cwl(cwl)?;
    check_actions(actions)?;
    let num = 1.0 + cwl * (2.0 * actions as f64 - 1.0);
    Ok(num * num / ((1.0 - cwl) * (1.0 - cwl)))
}

/// Least integer `M` strictly above [`convergence_threshold`].
pub fn min_m(cwl: f64, actions: usize) -> Result<u64, TheoryError> {
    let threshold = convergence_threshold(cwl, actions)?;
    let mut m = threshold.floor() as u64 + 1;
    // thresholds that are integers in decimal may round just below
    while alpha(cwl, actions, m) >= 1.0 {
        m += 1;
    }
    Ok(m)
}

/// Least integer `M >= 4|A|²(1 - δ)⁻²`, the simpler sufficient condition for
/// bounded Bellman equations.
pub fn simple_min_m(delta: f64, actions: usize) -> Result<u64, TheoryError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(TheoryError::InvalidDiscount(delta));
    }
    check_actions(actions)?;
    let a = actions as f64;
    Ok((4.0 * a * a / ((1.0 - delta) * (1.0 - delta))).ceil() as u64)
}

/// Per-level contraction rate of the root-mean-square error:
///
/// `α = ½[ t + √(t² + 4M^{-1/2}·cwL·(|A| - 1)) ]`, `t = cwL(1 + |A|M^{-1/2}) + M^{-1/2}`.
pub fn alpha(cwl: f64, actions: usize, m: u64) -> f64 {
    let s = 1.0 / (m as f64).sqrt();
    let a = actions as f64;
    let t = cwl * (1.0 + a * s) + s;
    0.5 * (t + (t * t + 4.0 * s * cwl * (a - 1.0)).sqrt())
}

/// `γ = (3/2)·max{ κ/(1 - cwL), κ·cwL/(1 - cwL) + κ, |A|κ/(|A|·cwL + 1) }`.
pub fn gamma(kappa: f64, cwl: f64, actions: usize) -> Result<f64, TheoryError> {
    check_cwl(cwl)?;
    check_actions(actions)?;
    let a = actions as f64;
    let terms = [
        kappa / (1.0 - cwl),
        kappa * cwl / (1.0 - cwl) + kappa,
        a * kappa / (a * cwl + 1.0),
    ];
    Ok(1.5 * terms.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Error and complexity constants for one `(cwL, |A|, M, κ)` configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub m: u64,
    pub actions: usize,
    pub cwl: f64,
    pub kappa: f64,
}

impl TheoryConstants {
    /// Fails unless `cwL < 1` and `α < 1`.
    pub fn new(cwl: f64, actions: usize, m: u64, kappa: f64) -> Result<Self, TheoryError> {
        if m == 0 {
            return Err(TheoryError::InvalidArgument("M must be at least 1".into()));
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(TheoryError::InvalidArgument(format!("kappa = {kappa}")));
        }
        let gamma = gamma(kappa, cwl, actions)?;
        let alpha = alpha(cwl, actions, m);
        if alpha >= 1.0 {
            return Err(TheoryError::Divergent {
                alpha,
                m,
                threshold: convergence_threshold(cwl, actions)?,
            });
        }
        let beta = (3.0 * m as f64).ln() / (1.0 / alpha).ln();
        Ok(Self {
            alpha,
            beta,
            gamma,
            m,
            actions,
            cwl,
            kappa,
        })
    }

    /// `γ·αⁿ`, the bound on the weighted root-mean-square error at level `n`.
    pub fn error_bound(&self, n: u32) -> f64 {
        self.gamma * self.alpha.powi(n as i32)
    }

    /// Least `n >= 1` with `γαⁿ <= ε`, found by upward search.
    pub fn n_for_eps(&self, eps: f64) -> Result<u32, TheoryError> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(TheoryError::InvalidArgument(format!("eps = {eps} must be positive")));
        }
        let mut n = 1;
        while self.error_bound(n) > eps {
            n += 1;
        }
        Ok(n)
    }

    /// `3M·ℜ·max{1, γ}^β·ε^{-β}`.
    pub fn complexity_budget(&self, eps: f64, unit_cost: f64) -> f64 {
        3.0 * self.m as f64 * unit_cost * self.gamma.max(1.0).powf(self.beta) * eps.powf(-self.beta)
    }

    /// `c = max{β, 3M·max{1, γ}^β}`: cost `<= c·ℜ·ε^{-c}`.
    pub fn complexity_constant(&self) -> f64 {
        self.beta.max(3.0 * self.m as f64 * self.gamma.max(1.0).powf(self.beta))
    }
}

fn checked_pow(m: u64, e: u32) -> Result<u128, TheoryError> {
    u128::from(m).checked_pow(e).ok_or(TheoryError::Overflow)
}

/// Exact cost recursion `C_0 = 0`,
/// `C_n = Σ_{l<n} M^{n-l}(ℜ + C_l + 1{l >= 1}·C_{l-1})`.
///
/// `C_n` is linear in `ℜ`; for real-valued unit costs multiply
/// `cost_recursion(n, M, 1)` by `ℜ`.
pub fn cost_recursion(n: u32, m: u64, unit_cost: u64) -> Result<u128, TheoryError> {
    action_cost_recursion(n, m, unit_cost, 1)
}

/// Exact number of sampler calls made by one vector-valued estimator call
/// with `|A|` actions.
///
/// Every action draws its own sample and evaluates both child estimators in
/// full (all `|A|` components), so one component costs
/// `c_n = Σ_{l<n} M^{n-l}(1 + |A|·c_l + |A|·1{l >= 1}·c_{l-1})` and the call
/// costs `|A|·c_n`. For `|A| = 1` this is [`cost_recursion`] with `ℜ = 1`.
pub fn scheme_sampler_calls(n: u32, m: u64, actions: usize) -> Result<u128, TheoryError> {
    let a = actions as u128;
    action_cost_recursion(n, m, 1, actions)?
        .checked_mul(a)
        .ok_or(TheoryError::Overflow)
}

fn action_cost_recursion(n: u32, m: u64, unit_cost: u64, actions: usize) -> Result<u128, TheoryError> {
    let a = actions as u128;
    let r = u128::from(unit_cost);
    let mut costs: Vec<u128> = Vec::with_capacity(n as usize + 1);
    costs.push(0);
    for k in 1..=n {
        let mut total: u128 = 0;
        for l in 0..k {
            let mut inner = costs[l as usize].checked_mul(a).ok_or(TheoryError::Overflow)?;
            if l >= 1 {
                let prev = costs[l as usize - 1].checked_mul(a).ok_or(TheoryError::Overflow)?;
                inner = inner.checked_add(prev).ok_or(TheoryError::Overflow)?;
            }
            let term = checked_pow(m, k - l)?
                .checked_mul(r.checked_add(inner).ok_or(TheoryError::Overflow)?)
                .ok_or(TheoryError::Overflow)?;
            total = total.checked_add(term).ok_or(TheoryError::Overflow)?;
        }
        costs.push(total);
    }
    Ok(costs[n as usize])
}

/// `ℜ·(3M)ⁿ`.
pub fn cost_bound(n: u32, m: u64, unit_cost: f64) -> f64 {
    unit_cost * (3.0 * m as f64).powi(n as i32)
}

/// `ℜ·(3M)ⁿ` in exact integers.
pub fn cost_bound_exact(n: u32, m: u64, unit_cost: u64) -> Result<u128, TheoryError> {
    checked_pow(3 * m, n)?
        .checked_mul(u128::from(unit_cost))
        .ok_or(TheoryError::Overflow)
}

/// A-priori bounds on the fixed point: `sup_x |v(x)|/w(x) <= c_f/(1 - c_w·L)`
/// and the transition-averaged ratio `<= c_f·c_w/(1 - c_w·L)`.
pub fn solution_bounds(c_f: f64, c_w: f64, lipschitz: f64) -> Result<(f64, f64), TheoryError> {
    let product = c_w * lipschitz;
    if product.is_nan() || product >= 1.0 {
        return Err(TheoryError::NoContraction(product));
    }
    let denom = 1.0 - product;
    Ok((c_f / denom, c_f * c_w / denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn min_m_examples() {
        assert_eq!(min_m(0.5, 2).unwrap(), 26);
        assert_eq!(min_m(0.0, 4).unwrap(), 2);
        assert_eq!(min_m(0.1, 2).unwrap(), 3);
        assert_eq!(min_m(1.0, 2), Err(TheoryError::NoContraction(1.0)));
    }

    #[test]
    fn simple_min_m_examples() {
        assert_eq!(simple_min_m(0.5, 2).unwrap(), 64);
        assert_eq!(simple_min_m(0.0, 1).unwrap(), 4);
        assert_eq!(simple_min_m(0.1, 2).unwrap(), 20);
        assert!(simple_min_m(1.0, 2).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(0.0, 2, 4), 0.5);
        assert!(close(alpha(0.1, 2, 4), 0.765_331_193_145_903_7, 1e-15));
        assert!(close(alpha(0.1, 2, 16), 0.454_950_975_679_639_27, 1e-15));
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(0.0, 0.3, 2).unwrap(), 0.0);
        assert!(close(gamma(1.0, 0.1, 2).unwrap(), 2.5, 1e-15));
        assert!(close(gamma(1.0, 0.5, 2).unwrap(), 3.0, 1e-15));
        assert!(gamma(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn n_for_eps_examples() {
        let c = TheoryConstants {
            alpha: 0.454_951,
            beta: 0.0,
            gamma: 2.5,
            m: 16,
            actions: 2,
            cwl: 0.1,
            kappa: 1.0,
        };
        assert_eq!(c.n_for_eps(0.1).unwrap(), 5);
        let c4 = TheoryConstants::new(0.1, 2, 4, 1.0).unwrap();
        assert_eq!(c4.n_for_eps(0.1).unwrap(), 13);
        let small = TheoryConstants { gamma: 0.5, ..c4 };
        assert_eq!(small.n_for_eps(1.0).unwrap(), 1);
        assert!(c4.n_for_eps(0.0).is_err());
    }

    #[test]
    fn constants_reject_divergent_m() {
        assert!(matches!(
            TheoryConstants::new(0.5, 2, 1, 1.0),
            Err(TheoryError::Divergent { .. })
        ));
        let c = TheoryConstants::new(0.1, 2, 4, 1.0).unwrap();
        assert!(close(c.beta, (12.0f64).ln() / (1.0 / c.alpha).ln(), 1e-15));
    }

    #[test]
    fn cost_recursion_spot_values() {
        assert_eq!(cost_recursion(0, 4, 1).unwrap(), 0);
        let expected = [0u128, 4, 36, 308, 2612, 22132, 187508];
        for (n, e) in expected.iter().enumerate() {
            assert_eq!(cost_recursion(n as u32, 4, 1).unwrap(), *e);
        }
        assert_eq!(cost_recursion(3, 4, 5).unwrap(), 5 * 308);
    }

    #[test]
    fn scheme_calls_reduce_to_recursion_for_one_action() {
        for n in 0..8 {
            assert_eq!(scheme_sampler_calls(n, 3, 1).unwrap(), cost_recursion(n, 3, 1).unwrap());
        }
        // hand unrolled for |A| = 2, M = 4: c_1 = 4, c_2 = 16 + 4·(1 + 2·4) = 52
        assert_eq!(scheme_sampler_calls(1, 4, 2).unwrap(), 8);
        assert_eq!(scheme_sampler_calls(2, 4, 2).unwrap(), 104);
    }

    #[test]
    fn cost_bound_examples() {
        assert_eq!(cost_bound(3, 4, 1.0), 1728.0);
        assert!(1728 >= cost_recursion(3, 4, 1).unwrap());
        assert_eq!(cost_bound(0, 7, 1.0), 1.0);
        assert_eq!(cost_bound(5, 3, 2.0), 118_098.0);
        assert_eq!(cost_bound_exact(5, 3, 2).unwrap(), 118_098);
    }

    #[test]
    fn cost_recursion_dominated_by_bound() {
        for m in 2..=32u64 {
            for n in 0..=12 {
                assert!(cost_recursion(n, m, 1).unwrap() <= cost_bound_exact(n, m, 1).unwrap());
            }
        }
    }

    #[test]
    fn complexity_budget_examples() {
        let c = TheoryConstants::new(0.1, 2, 4, 1.0).unwrap();
        let unit_gamma = TheoryConstants { gamma: 0.8, ..c };
        assert!(close(unit_gamma.complexity_budget(1.0, 3.0), 36.0, 1e-12));
        let c16 = TheoryConstants {
            alpha: 0.454_951,
            beta: (12.0f64).ln() / (1.0 / 0.454_951f64).ln(),
            gamma: 2.5,
            ..c
        };
        assert!(close(c16.complexity_budget(0.5, 1.0), 1925.54, 0.05));
        for eps in [1.0, 0.5, 0.25] {
            let n = c.n_for_eps(eps).unwrap();
            assert!((cost_recursion(n, 4, 1).unwrap() as f64) <= c.complexity_budget(eps, 1.0));
        }
        assert_eq!(c.complexity_constant(), c.beta.max(12.0 * 2.5f64.powf(c.beta)));
    }

    #[test]
    fn complexity_budget_dominates_on_log_grid() {
        let c = TheoryConstants::new(0.1, 2, 4, 1.0).unwrap();
        for k in 0..=40 {
            let eps = 10f64.powf(-2.0 * k as f64 / 40.0);
            let n = c.n_for_eps(eps).unwrap();
            let cost = cost_recursion(n, 4, 1).unwrap() as f64;
            assert!(cost <= c.complexity_budget(eps, 1.0), "eps {eps}");
        }
    }

    #[test]
    fn solution_bounds_examples() {
        assert_eq!(solution_bounds(0.0, 1.0, 0.5).unwrap(), (0.0, 0.0));
        assert_eq!(solution_bounds(0.5, 1.0, 0.5).unwrap(), (1.0, 1.0));
        let (a, b) = solution_bounds(1.0, 1.0, 0.1).unwrap();
        assert!(close(a, 1.1111, 1e-4) && close(b, 1.1111, 1e-4));
        assert!(solution_bounds(1.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn alpha_below_one_above_min_m_and_monotone() {
        for i in 0..10 {
            let cwl = i as f64 / 10.0;
            for actions in 1..=5 {
                let start = min_m(cwl, actions).unwrap();
                let mut prev = f64::INFINITY;
                for m in start..=start + 10 {
                    let a = alpha(cwl, actions, m);
                    assert!(a < 1.0, "cwl {cwl} |A| {actions} M {m}: alpha {a}");
                    assert!(a < prev);
                    prev = a;
                    if i > 0 {
                        assert!(alpha(cwl - 0.1, actions, m) < a);
                    }
                }
            }
        }
    }
}
