use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::zoo::{self, GaussControl, StoppingWalk};
use super::{
    augment_stopping, Augmented, ControlModel, FiniteControl, FiniteModel, FiniteStoppingModel, ModelError,
    StoppingAugmentation, StoppingModel, WeightCertificate,
};

pub const KNOWN_FAMILIES: &[&str] = &[
    "single_state_det",
    "chain_finite",
    "finite",
    "gauss_control",
    "stopping_walk",
    "two_state_stopping",
    "finite_stopping",
];

/// JSON model configuration.
///
/// ```json
/// {"family": "chain_finite", "params": {"states": 5, "actions": 2, "seed": 1},
///  "discount": 0.1, "certificates": {"lambda": 1.0, "kappa": 1.0},
///  "unit_sample_cost": 1.0}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificates: Option<CertificateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_sample_cost: Option<f64>,
    /// Label used in reports; defaults to the family name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub lambda: f64,
    pub kappa: f64,
}

impl ModelSpec {
    pub fn family(family: &str) -> Self {
        Self {
            family: family.to_string(),
            params: Map::new(),
            discount: None,
            certificates: None,
            unit_sample_cost: None,
            id: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn discount(mut self, discount: f64) -> Self {
        self.discount = Some(discount);
        self
    }

    pub fn certificates(mut self, lambda: f64, kappa: f64) -> Self {
        self.certificates = Some(CertificateSpec { lambda, kappa });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn build(&self) -> Result<ConfiguredModel, ModelError> {
        let id = self.id.clone().unwrap_or_else(|| self.family.clone());
        let kind = match self.family.as_str() {
            "single_state_det" => {
                let base = zoo::single_state_det();
                let model = match self.discount {
                    Some(d) => base.model().with_discount(d)?,
                    None => base.model().clone(),
                };
                ModelKind::Finite(self.finite_control(model)?)
            }
            "chain_finite" => {
                let states = self.usize_param("states")?;
                let actions = self.usize_param("actions")?;
                let seed = self.u64_param("seed")?;
                let base = zoo::chain_finite(states, actions, seed, self.required_discount()?)?;
                ModelKind::Finite(self.finite_control(base.model().clone())?)
            }
            "finite" => {
                let rewards: Vec<Vec<f64>> = self.typed_param("rewards")?;
                let transitions: Vec<Vec<Vec<f64>>> = self.typed_param("transitions")?;
                let model = FiniteModel::from_nested(&rewards, &transitions, self.required_discount()?)?;
                ModelKind::Finite(self.finite_control(model)?)
            }
            "gauss_control" => {
                let dim = self.usize_param("dim")?;
                let actions = self.optional_usize("actions")?.unwrap_or(2);
                let mut model = GaussControl::new(dim, actions, self.required_discount()?)?;
                if let Some(c) = self.certificate(model.discount())? {
                    model = model.with_certificate(c);
                }
                if let Some(cost) = self.unit_sample_cost {
                    model = model.with_unit_sample_cost(cost);
                }
                ModelKind::Gauss(model)
            }
            "stopping_walk" => {
                let dim = self.usize_param("dim")?;
                let walk = StoppingWalk::new(dim, self.required_discount()?)?;
                ModelKind::Walk(self.augment(walk)?)
            }
            "two_state_stopping" => {
                let base = zoo::two_state_stopping();
                let model = match self.discount {
                    Some(d) => FiniteStoppingModel::new(
                        base.running_rewards().to_vec(),
                        base.terminal_payoffs().to_vec(),
                        vec![0.5; 4],
                        d,
                    )?,
                    None => base,
                };
                ModelKind::FiniteStopping(self.augment(model)?)
            }
            "finite_stopping" => {
                let running: Vec<f64> = self.typed_param("running_reward")?;
                let payoff: Vec<f64> = self.typed_param("terminal_payoff")?;
                let transitions: Vec<Vec<f64>> = self.typed_param("transitions")?;
                let model = FiniteStoppingModel::from_nested(running, payoff, &transitions, self.required_discount()?)?;
                ModelKind::FiniteStopping(self.augment(model)?)
            }
            other => {
                return Err(ModelError::UnknownFamily {
                    family: other.to_string(),
                })
            }
        };
        Ok(ConfiguredModel {
            id,
            family: self.family.clone(),
            kind,
        })
    }

    fn finite_control(&self, model: FiniteModel) -> Result<FiniteControl, ModelError> {
        let cert = self
            .certificate(model.discount())?
            .unwrap_or_else(|| model.unit_weight_certificate());
        let mut control = super::finite_as_control(model, cert)?;
        if let Some(cost) = self.unit_sample_cost {
            control = control.with_unit_sample_cost(cost);
        }
        Ok(control)
    }

    fn augment<M: StoppingModel>(&self, model: M) -> Result<StoppingAugmentation<M>, ModelError> {
        let discount = model.discount();
        let mut aug = augment_stopping(model);
        if let Some(c) = self.certificate(discount)? {
            aug = aug.with_certificate(c);
        }
        if let Some(cost) = self.unit_sample_cost {
            aug = aug.with_unit_sample_cost(cost);
        }
        Ok(aug)
    }

    fn certificate(&self, discount: f64) -> Result<Option<WeightCertificate>, ModelError> {
        self.certificates
            .map(|c| WeightCertificate::new(c.lambda, c.kappa, discount))
            .transpose()
    }

    fn required_discount(&self) -> Result<f64, ModelError> {
        self.discount.ok_or_else(|| ModelError::InvalidParameter {
            name: "discount".into(),
            reason: format!("family `{}` needs an explicit discount", self.family),
        })
    }

    fn typed_param<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, ModelError> {
        let value = self.params.get(key).ok_or_else(|| missing(key, &self.family))?;
        serde_json::from_value(value.clone()).map_err(|e| ModelError::InvalidParameter {
            name: key.into(),
            reason: e.to_string(),
        })
    }

    fn optional_usize(&self, key: &str) -> Result<Option<usize>, ModelError> {
        if self.params.contains_key(key) {
            self.usize_param(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn usize_param(&self, key: &str) -> Result<usize, ModelError> {
        self.typed_param(key)
    }

    fn u64_param(&self, key: &str) -> Result<u64, ModelError> {
        self.typed_param(key)
    }
}

fn missing(key: &str, family: &str) -> ModelError {
    ModelError::InvalidParameter {
        name: key.into(),
        reason: format!("required by family `{family}`"),
    }
}

/// Control models that can be configured from files and driven by the
/// harness and the CLI.
pub trait ExperimentModel: ControlModel {
    /// Parse a state from its coordinate list.
    fn parse_state(&self, coords: &[f64]) -> Result<Self::State, ModelError>;

    /// Finite tables with the same law, when the state space is finite.
    fn finite_tables(&self) -> Option<FiniteModel> {
        None
    }

    /// Row of `state` in [`ExperimentModel::finite_tables`].
    fn state_index(&self, _state: &Self::State) -> Option<usize> {
        None
    }
}

fn parse_index(coords: &[f64], states: usize) -> Result<usize, ModelError> {
    match coords {
        [x] if x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < states => Ok(*x as usize),
        _ => Err(ModelError::MalformedState(format!(
            "expected one state index in 0..{states}, got {coords:?}"
        ))),
    }
}

impl ExperimentModel for FiniteControl {
    fn parse_state(&self, coords: &[f64]) -> Result<usize, ModelError> {
        parse_index(coords, self.model().states())
    }

    fn finite_tables(&self) -> Option<FiniteModel> {
        Some(self.model().clone())
    }

    fn state_index(&self, state: &usize) -> Option<usize> {
        Some(*state)
    }
}

impl ExperimentModel for GaussControl {
    fn parse_state(&self, coords: &[f64]) -> Result<Vec<f64>, ModelError> {
        if coords.len() != self.dim() || coords.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::MalformedState(format!(
                "expected {} finite coordinates, got {coords:?}",
                self.dim()
            )));
        }
        Ok(coords.to_vec())
    }
}

impl ExperimentModel for StoppingAugmentation<StoppingWalk> {
    fn parse_state(&self, coords: &[f64]) -> Result<Self::State, ModelError> {
        let dim = self.inner().dim();
        if coords.len() != dim || coords.iter().any(|c| c.fract() != 0.0 || !c.is_finite()) {
            return Err(ModelError::MalformedState(format!(
                "expected {dim} integer coordinates, got {coords:?}"
            )));
        }
        Ok(Augmented::Real(coords.iter().map(|c| *c as i64).collect()))
    }
}

impl ExperimentModel for StoppingAugmentation<FiniteStoppingModel> {
    fn parse_state(&self, coords: &[f64]) -> Result<Self::State, ModelError> {
        parse_index(coords, self.inner().states()).map(Augmented::Real)
    }

    fn finite_tables(&self) -> Option<FiniteModel> {
        self.inner().augmented_finite().ok()
    }

    fn state_index(&self, state: &Self::State) -> Option<usize> {
        Some(match state {
            Augmented::Real(s) => *s,
            Augmented::Hold => self.inner().states(),
        })
    }
}

/// Generic operation over any configured model.
pub trait ModelVisitor {
    type Output;

    fn visit<C: ExperimentModel>(self, model: &C) -> Self::Output;
}

#[derive(Debug, Clone)]
enum ModelKind {
    Finite(FiniteControl),
    Gauss(GaussControl),
    Walk(StoppingAugmentation<StoppingWalk>),
    FiniteStopping(StoppingAugmentation<FiniteStoppingModel>),
}

/// A model built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct ConfiguredModel {
    id: String,
    family: String,
    kind: ModelKind,
}

impl ConfiguredModel {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn visit<V: ModelVisitor>(&self, visitor: V) -> V::Output {
        match &self.kind {
            ModelKind::Finite(m) => visitor.visit(m),
            ModelKind::Gauss(m) => visitor.visit(m),
            ModelKind::Walk(m) => visitor.visit(m),
            ModelKind::FiniteStopping(m) => visitor.visit(m),
        }
    }

    pub fn action_count(&self) -> usize {
        struct Actions;
        impl ModelVisitor for Actions {
            type Output = usize;
            fn visit<C: ExperimentModel>(self, model: &C) -> usize {
                model.action_count()
            }
        }
        self.visit(Actions)
    }

    pub fn certificate(&self) -> WeightCertificate {
        struct Cert;
        impl ModelVisitor for Cert {
            type Output = WeightCertificate;
            fn visit<C: ExperimentModel>(self, model: &C) -> WeightCertificate {
                model.certificate()
            }
        }
        self.visit(Cert)
    }
}
