//! Replication experiments: weighted sup-norm RMSE, bias and cost per level,
//! checked against the theoretical error bound and the exact cost ledger.

mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlfp::{mlfp_q, telescoping_summand, MlfpError, MlfpParams};
use crate::model::{ActionId, ActionValues, ExperimentModel, ModelError, ModelSpec, ModelVisitor};
use crate::oracle::{self, OracleError, QTable};
use crate::rng::{CostLedger, ThetaPath, STREAM_ALGORITHM_VERSION};
use crate::theory::{min_m, scheme_sampler_calls, TheoryConstants, TheoryError};

pub use report::{
    emit_csv, emit_json, format_float, parse_csv, read_csv, to_json_string, write_csv, PreciseFormatter, Reference,
    ReportRow, CSV_HEADER,
};

pub const DEFAULT_SLACK: f64 = 1.05;
/// Levels above `n_max` used for the self-reference of models without an
/// exact solution.
pub const REFERENCE_OFFSET: u32 = 2;
/// θ-root of the self-reference estimates, disjoint from the estimator root.
pub const REFERENCE_ROOT: i64 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] MlfpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("ledger mismatch at n = {n}: counted {counted}, expected {expected}")]
    Ledger { n: u32, counted: u128, expected: u128 },
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

fn default_true() -> bool {
    true
}

/// Experiment description, also accepted as a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(rename = "M")]
    pub samples_base: u64,
    pub n_max: u32,
    pub replications: usize,
    pub master_seed: u64,
    /// Coordinates of each test state; finite models use `[index]`.
    pub test_states: Vec<Vec<f64>>,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_true")]
    pub check_bounds: bool,
    /// Record wall-clock time per row. Off by default so reports are
    /// byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, samples_base: u64, n_max: u32, replications: usize, master_seed: u64) -> Self {
        Self {
            model,
            samples_base,
            n_max,
            replications,
            master_seed,
            test_states: Vec::new(),
            slack: DEFAULT_SLACK,
            check_bounds: true,
            record_timing: false,
        }
    }

    pub fn with_test_states(mut self, states: Vec<Vec<f64>>) -> Self {
        self.test_states = states;
        self
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.into(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications < 2 {
            return Err(HarnessError::Config(format!(
                "need at least 2 replications, got {}",
                self.replications
            )));
        }
        if self.test_states.is_empty() {
            return Err(HarnessError::Config("test_states is empty".into()));
        }
        if self.samples_base == 0 {
            return Err(HarnessError::Config("M must be at least 1".into()));
        }
        if !(self.slack.is_finite() && self.slack >= 0.0) {
            return Err(HarnessError::Config(format!("invalid slack {}", self.slack)));
        }
        Ok(())
    }
}

/// Replication schedule. Results do not depend on the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Sequential,
    /// `None` uses the machine parallelism. Without the `parallel` feature
    /// this runs sequentially.
    #[default]
    Parallel,
    Threads(usize),
}

/// Evaluate `f(j)` for `j = 0..count`, results in index order.
pub fn map_replications<T, F>(schedule: Schedule, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || (0..count).into_par_iter().map(&f).collect();
        match schedule {
            Schedule::Sequential => (0..count).map(&f).collect(),
            Schedule::Parallel => run(),
            Schedule::Threads(k) => match rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
                Ok(pool) => pool.install(run),
                Err(_) => (0..count).map(&f).collect(),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = schedule;
        (0..count).map(f).collect()
    }
}

/// Master seed of replication `j`.
pub fn replication_seed(master_seed: u64, j: usize) -> u64 {
    master_seed ^ j as u64
}

/// Theory constants of a configured model at samples base `m`.
pub fn model_constants(spec: &ModelSpec, m: u64) -> Result<TheoryConstants, HarnessError> {
    let model = spec.build()?;
    let cert = model.certificate();
    Ok(TheoryConstants::new(
        cert.contraction(),
        model.action_count(),
        m,
        cert.kappa,
    )?)
}

/// Run all levels `n = 1..=n_max` of an experiment.
pub fn run_experiment(config: &ExperimentConfig, schedule: Schedule) -> Result<Vec<ReportRow>, HarnessError> {
    config.validate()?;
    let model = config.model.build()?;
    model.visit(Experiment {
        config,
        schedule,
        id: model.id(),
    })
}

struct Experiment<'a> {
    config: &'a ExperimentConfig,
    schedule: Schedule,
    id: &'a str,
}

struct GroundTruth {
    /// Per test state, per action.
    values: Vec<Vec<f64>>,
    /// First Picard iterate per test state, for the `n = 1` bias.
    picard_one: Option<Vec<Vec<f64>>>,
    reference: Reference,
}

fn table_rows(table: &QTable, indices: &[usize]) -> Vec<Vec<f64>> {
    indices.iter().map(|&s| table.row(s).to_vec()).collect()
}

impl<'a> Experiment<'a> {
    fn estimates<C: ExperimentModel>(
        &self,
        model: &C,
        states: &[C::State],
        n: u32,
        theta: &ThetaPath,
    ) -> Result<Vec<(Vec<ActionValues>, u128)>, HarnessError> {
        let cfg = self.config;
        let runs = map_replications(self.schedule, cfg.replications, |j| {
            let params = MlfpParams::new(cfg.samples_base, n, replication_seed(cfg.master_seed, j))?;
            let mut calls = None;
            let mut out = Vec::with_capacity(states.len());
            for x in states {
                let mut ledger = CostLedger::new();
                out.push(mlfp_q(model, &params, x, theta, &mut ledger)?);
                match calls {
                    None => calls = Some(ledger.sampler_calls()),
                    Some(c) if c != ledger.sampler_calls() => {
                        return Err(HarnessError::Ledger {
                            n,
                            counted: ledger.sampler_calls(),
                            expected: c,
                        })
                    }
                    Some(_) => {}
                }
            }
            Ok((out, calls.unwrap_or(0)))
        });
        runs.into_iter().collect()
    }

    fn ground_truth<C: ExperimentModel>(&self, model: &C, states: &[C::State]) -> Result<GroundTruth, HarnessError> {
        if let Some(tables) = model.finite_tables() {
            let indices: Vec<usize> = states
                .iter()
                .map(|x| model.state_index(x).expect("finite models index their states"))
                .collect();
            let exact = oracle::exact_q_polished(&tables, oracle::DEFAULT_TOLERANCE)?;
            let picard = oracle::picard_iterate(&tables, 1);
            return Ok(GroundTruth {
                values: table_rows(&exact, &indices),
                picard_one: Some(table_rows(&picard, &indices)),
                reference: Reference::Exact,
            });
        }
        let level = self.config.n_max + REFERENCE_OFFSET;
        let runs = self.estimates(model, states, level, &ThetaPath::with_root(REFERENCE_ROOT))?;
        let r = runs.len() as f64;
        let values = (0..states.len())
            .map(|x| {
                let actions = model.action_count();
                (0..actions)
                    .map(|a| runs.iter().map(|(est, _)| est[x][a]).sum::<f64>() / r)
                    .collect()
            })
            .collect();
        Ok(GroundTruth {
            values,
            picard_one: None,
            reference: Reference::SelfReference,
        })
    }
}

impl ModelVisitor for Experiment<'_> {
    type Output = Result<Vec<ReportRow>, HarnessError>;

    fn visit<C: ExperimentModel>(self, model: &C) -> Self::Output {
        let cfg = self.config;
        let states = cfg
            .test_states
            .iter()
            .map(|coords| model.parse_state(coords))
            .collect::<Result<Vec<_>, _>>()?;
        let weights: Vec<f64> = states.iter().map(|x| model.weight(x)).collect();
        let truth = self.ground_truth(model, &states)?;
        let exact = truth.reference == Reference::Exact;

        let cert = model.certificate();
        let constants =
            TheoryConstants::new(cert.contraction(), model.action_count(), cfg.samples_base, cert.kappa).ok();
        if cfg.check_bounds && exact {
            let needed = min_m(cert.contraction(), model.action_count())?;
            if cfg.samples_base < needed {
                return Err(HarnessError::Config(format!(
                    "bound checks need M >= {needed}, got {}",
                    cfg.samples_base
                )));
            }
        }

        let actions = model.action_count();
        let reps = cfg.replications as f64;
        let mut rows = Vec::with_capacity(cfg.n_max as usize);
        for n in 1..=cfg.n_max {
            let start = Instant::now();
            let runs = self.estimates(model, &states, n, &ThetaPath::root())?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let calls = runs[0].1;
            if let Some((_, c)) = runs.iter().find(|(_, c)| *c != calls) {
                return Err(HarnessError::Ledger {
                    n,
                    counted: *c,
                    expected: calls,
                });
            }

            let mut rmse: f64 = 0.0;
            let mut bias_total = 0.0;
            for (x, w) in weights.iter().enumerate() {
                let target = &truth.values[x];
                let mut mse = 0.0;
                for (est, _) in &runs {
                    let err = (0..actions).fold(0.0, |m: f64, a| m.max((target[a] - est[x][a]).abs()));
                    mse += err * err;
                }
                rmse = rmse.max((mse / reps).sqrt() / w);

                let bias_target = match (&truth.picard_one, n) {
                    (Some(p), 1) => &p[x],
                    _ => target,
                };
                for a in 0..actions {
                    let mean = runs.iter().map(|(est, _)| est[x][a]).sum::<f64>() / reps;
                    bias_total += (mean - bias_target[a]).abs();
                }
            }
            let mean_abs_bias = if exact {
                bias_total / (states.len() * actions) as f64
            } else {
                f64::NAN
            };
            rows.push(ReportRow {
                model: self.id.to_string(),
                m: cfg.samples_base,
                n,
                reps: cfg.replications,
                weighted_sup_rmse: rmse,
                bound: constants.as_ref().map_or(f64::NAN, |c| c.error_bound(n)),
                mean_abs_bias,
                sampler_calls: calls,
                wall_ms: if cfg.record_timing { elapsed } else { 0.0 },
                stream_version: STREAM_ALGORITHM_VERSION.to_string(),
                reference: Some(truth.reference),
            });
        }
        Ok(rows)
    }
}

/// Spread of one telescoping level over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSpread {
    pub level: u32,
    /// Largest sample standard deviation over test states and actions.
    pub sd: f64,
    /// Approximate standard error of `sd`, `sd / sqrt(2(R - 1))`.
    pub standard_error: f64,
}

/// Sample standard deviation of the level-`l` telescoping summand
/// `max_b Q̂_l(X, b) - max_b Q̂_{l-1}(X, b)` for each `l` in `levels`.
pub fn variance_decay_probe(
    config: &ExperimentConfig,
    levels: std::ops::RangeInclusive<u32>,
    schedule: Schedule,
) -> Result<Vec<LevelSpread>, HarnessError> {
    config.validate()?;
    let model = config.model.build()?;
    model.visit(Probe {
        config,
        levels,
        schedule,
    })
}

struct Probe<'a> {
    config: &'a ExperimentConfig,
    levels: std::ops::RangeInclusive<u32>,
    schedule: Schedule,
}

impl ModelVisitor for Probe<'_> {
    type Output = Result<Vec<LevelSpread>, HarnessError>;

    fn visit<C: ExperimentModel>(self, model: &C) -> Self::Output {
        let cfg = self.config;
        if model.finite_tables().is_none() {
            return Err(HarnessError::Config("the variance probe needs a finite model".into()));
        }
        let states = cfg
            .test_states
            .iter()
            .map(|coords| model.parse_state(coords))
            .collect::<Result<Vec<_>, _>>()?;
        let actions = model.action_count();
        let r = cfg.replications as f64;
        let mut out = Vec::new();
        for level in self.levels.clone() {
            let samples = map_replications(self.schedule, cfg.replications, |j| {
                let seed = replication_seed(cfg.master_seed, j);
                let mut values = Vec::with_capacity(states.len() * actions);
                for x in &states {
                    for a in 0..actions {
                        let mut ledger = CostLedger::new();
                        values.push(telescoping_summand(
                            model,
                            cfg.samples_base,
                            level,
                            seed,
                            x,
                            ActionId(a),
                            1,
                            &mut ledger,
                        )?);
                    }
                }
                Ok::<_, HarnessError>(values)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let mut sd: f64 = 0.0;
            for k in 0..states.len() * actions {
                let mean = samples.iter().map(|s| s[k]).sum::<f64>() / r;
                let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (r - 1.0);
                sd = sd.max(var.sqrt());
            }
            out.push(LevelSpread {
                level,
                sd,
                standard_error: sd / (2.0 * (r - 1.0)).sqrt(),
            });
        }
        Ok(out)
    }
}

/// Verdict for one report row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowVerdict {
    pub index: usize,
    pub n: u32,
    pub rmse: f64,
    pub bound: f64,
    pub rmse_ok: bool,
    pub sampler_calls: u128,
    pub expected_calls: Option<u128>,
    pub calls_ok: bool,
}

impl RowVerdict {
    pub fn passed(&self) -> bool {
        self.rmse_ok && self.calls_ok
    }

    pub fn diagnostic(&self) -> String {
        let mut parts = Vec::new();
        if !self.rmse_ok {
            parts.push(format!(
                "rmse {} exceeds slack * bound {}",
                format_float(self.rmse),
                format_float(self.bound)
            ));
        }
        if !self.calls_ok {
            parts.push(match self.expected_calls {
                Some(e) => format!("sampler_calls {} != expected {e}", self.sampler_calls),
                None => format!("sampler_calls {}: expected count overflows", self.sampler_calls),
            });
        }
        if parts.is_empty() {
            "ok".into()
        } else {
            parts.join("; ")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub rows: Vec<RowVerdict>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(RowVerdict::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RowVerdict> {
        self.rows.iter().filter(|r| !r.passed())
    }
}

/// Check every row against `slack·γαⁿ` and the exact sampler-call count of
/// the scheme with `constants.actions` actions at the row's `M`.
pub fn check_bounds(rows: &[ReportRow], constants: &TheoryConstants, slack: f64) -> BoundReport {
    let rows = rows
        .iter()
        .enumerate()
        .map(|(index, row)| {
            let bound = constants.error_bound(row.n);
            let expected_calls = scheme_sampler_calls(row.n, row.m, constants.actions).ok();
            RowVerdict {
                index,
                n: row.n,
                rmse: row.weighted_sup_rmse,
                bound,
                rmse_ok: row.weighted_sup_rmse <= slack * bound,
                sampler_calls: row.sampler_calls,
                expected_calls,
                calls_ok: expected_calls == Some(row.sampler_calls),
            }
        })
        .collect();
    BoundReport { rows }
}
