//! Versioned JSON checkpoints. Every value is written with 17 significant
//! digits, so a save → load → save cycle reproduces the file byte for byte.

use std::path::Path;

use deqfuse_core::layers::FusionParams;
use deqfuse_core::numcore::Tensor2;
use deqfuse_core::training::{HeadParams, Model};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

/// An `f64` serialized as `d.dddddddddddddddde±x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decimal(pub f64);

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("cannot serialize non-finite value {}", self.0)));
        }
        RawValue::from_string(format!("{:.16e}", self.0))
            .map_err(S::Error::custom)?
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Decimal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamArray {
    pub name: String,
    /// `[rows, cols]`; values are row-major.
    pub shape: [usize; 2],
    pub values: Vec<Decimal>,
}

impl ParamArray {
    fn from_tensor(name: &str, t: &Tensor2) -> Self {
        Self {
            name: name.to_string(),
            shape: [t.rows(), t.cols()],
            values: t.data().iter().map(|&v| Decimal(v)).collect(),
        }
    }

    fn to_tensor(&self) -> CliResult<Tensor2> {
        Tensor2::new(self.shape[0], self.shape[1], self.values.iter().map(|d| d.0).collect())
            .map_err(|e| CliError::validation(format!("parameter {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub width: usize,
    pub n_modalities: usize,
    pub groups: usize,
    pub eps: Decimal,
    pub gate_activation: String,
    /// Head output size, absent for fusion-only checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Seed the parameters were derived from.
    pub seed: u64,
    /// What produced the parameters from that seed, e.g. `init` or
    /// `train:full`.
    pub seed_source: String,
    pub params: Vec<ParamArray>,
}

impl Checkpoint {
    pub fn from_fusion(params: &FusionParams, seed: u64, seed_source: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            width: params.width,
            n_modalities: params.n_modalities(),
            groups: params.groups,
            eps: Decimal(params.eps),
            gate_activation: params.gate_activation.as_str().into(),
            classes: None,
            seed,
            seed_source: seed_source.into(),
            params: params.named().iter().map(|(n, t)| ParamArray::from_tensor(n, t)).collect(),
        }
    }

    pub fn from_model(model: &Model, seed: u64, seed_source: &str) -> Self {
        let mut ck = Self::from_fusion(&model.fusion, seed, seed_source);
        ck.classes = Some(model.head.classes());
        ck.params = model.named().iter().map(|(n, t)| ParamArray::from_tensor(n, t)).collect();
        ck
    }

    fn find(&self, name: &str) -> CliResult<&ParamArray> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CliError::validation(format!("checkpoint is missing parameter {name}")))
    }

    fn tensor(&self, name: &str, want: (usize, usize)) -> CliResult<Tensor2> {
        let t = self.find(name)?.to_tensor()?;
        if t.shape() != want {
            return Err(CliError::validation(format!(
                "parameter {name} has shape {:?}, expected {want:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn to_fusion(&self) -> CliResult<FusionParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::validation(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let mut p = FusionParams::structural(self.n_modalities, self.width, self.groups)?;
        p.eps = self.eps.0;
        p.gate_activation = self
            .gate_activation
            .parse()
            .map_err(|e: deqfuse_core::DeqError| CliError::validation(e.to_string()))?;
        for (name, t) in p.named_mut() {
            *t = self.tensor(&name, t.shape())?;
        }
        let known = p.names().len() + if self.classes.is_some() { 2 } else { 0 };
        if self.params.len() != known {
            return Err(CliError::validation(format!(
                "checkpoint has {} parameter arrays, expected {known}",
                self.params.len()
            )));
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_model(&self) -> CliResult<Model> {
        let classes = self
            .classes
            .ok_or_else(|| CliError::validation("checkpoint has no classification head"))?;
        let fusion = self.to_fusion()?;
        let head = HeadParams {
            weight: self.tensor("head.weight", (self.width, classes))?,
            bias: self.tensor("head.bias", (1, classes))?,
        };
        Ok(Model { fusion, head })
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Numeric(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        crate::output::write_file(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
