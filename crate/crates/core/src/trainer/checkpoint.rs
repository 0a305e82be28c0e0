use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::diffcore::{Affine, DenseArray};
use crate::engine::{Adaptation, Engine, GlobalModel, ModelKind, PolicyKind};
use crate::error::{Error, Result};
use crate::policy::{ActionMode, CriticNet, PolicyNet, TanhMlp};
use crate::response::{IrtGlobalParams, MlpGlobalParams};

pub const CHECKPOINT_FORMAT: &str = "adaptest-checkpoint";
pub const CHECKPOINT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Epoch (1-based) of the stored parameters; 0 when nothing was trained.
    pub epoch: usize,
    pub epochs_run: usize,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_kind: ModelKind,
    pub policy_kind: PolicyKind,
    pub question_ids: Vec<String>,
    pub global: GlobalModel,
    pub adaptation: Adaptation,
    pub policy: Option<PolicyNet<f64>>,
    pub critic: Option<CriticNet<f64>>,
    pub config: TrainConfig,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn num_questions(&self) -> usize {
        self.global.num_questions()
    }

    pub fn engine(&self, mode: ActionMode) -> Result<Engine> {
        Engine::new(
            self.global.clone(),
            self.adaptation,
            self.policy_kind,
            self.policy.clone(),
            mode,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Stored::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::CorruptCheckpoint("missing checkpoint format tag".into()));
        }
        match value.get("version").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => {
                return Err(Error::VersionMismatch {
                    expected: CHECKPOINT_VERSION.into(),
                    found: other.into(),
                })
            }
            None => return Err(Error::CorruptCheckpoint("missing version tag".into())),
        }
        let stored: Stored = serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        stored.into_checkpoint()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Little-endian f64 values, base64-encoded.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Array {
    shape: Vec<usize>,
    data: String,
}

impl Array {
    fn new(shape: &[usize], values: &[f64]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: shape.to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn vector(values: &[f64]) -> Self {
        Self::new(&[values.len()], values)
    }

    fn values(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::CorruptCheckpoint("array byte length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let expected: usize = self.shape.iter().product();
        if values.len() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "array of shape {:?} holds {} values",
                self.shape,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
        }
        Ok(values)
    }

    fn scalar(&self) -> Result<f64> {
        match self.values()?.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::CorruptCheckpoint("expected a scalar".into())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredAffine {
    weight: Array,
    bias: Array,
}

impl StoredAffine {
    fn from_layer(l: &Affine<f64>) -> Self {
        Self {
            weight: Array::new(l.weight.shape(), l.weight.as_slice()),
            bias: Array::vector(&l.bias),
        }
    }

    fn layer(&self) -> Result<Affine<f64>> {
        let w = DenseArray::from_vec(&self.weight.shape, self.weight.values()?)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Affine::from_parts(w, self.bias.values()?).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredNet {
    layers: Vec<StoredAffine>,
}

impl StoredNet {
    fn from_net(n: &TanhMlp<f64>) -> Self {
        Self {
            layers: n.layers.iter().map(StoredAffine::from_layer).collect(),
        }
    }

    fn net(&self) -> Result<TanhMlp<f64>> {
        let layers: Vec<Affine<f64>> = self.layers.iter().map(StoredAffine::layer).collect::<Result<_>>()?;
        let layers: [Affine<f64>; 3] = layers
            .try_into()
            .map_err(|_| Error::CorruptCheckpoint("network must have three layers".into()))?;
        if layers[0].outputs() != layers[1].inputs() || layers[1].outputs() != layers[2].inputs() {
            return Err(Error::CorruptCheckpoint("network layer shapes do not chain".into()));
        }
        Ok(TanhMlp { layers })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum StoredGlobal {
    Irt {
        difficulties: Array,
        prior_mean: Array,
    },
    Mlp {
        input: Array,
        hidden: StoredAffine,
        output: StoredAffine,
        dropout_rate: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stored {
    format: String,
    version: String,
    model_kind: ModelKind,
    policy_kind: PolicyKind,
    num_questions: usize,
    question_ids: Vec<String>,
    global: StoredGlobal,
    adaptation: Adaptation,
    policy: Option<StoredNet>,
    critic: Option<StoredNet>,
    config: TrainConfig,
    training: TrainingMeta,
}

impl From<&Checkpoint> for Stored {
    fn from(c: &Checkpoint) -> Self {
        let global = match &c.global {
            GlobalModel::Irt(m) => StoredGlobal::Irt {
                difficulties: Array::vector(&m.difficulties),
                prior_mean: Array::vector(&[m.prior_mean]),
            },
            GlobalModel::Mlp(m) => StoredGlobal::Mlp {
                input: Array::vector(&m.input),
                hidden: StoredAffine::from_layer(&m.hidden),
                output: StoredAffine::from_layer(&m.output),
                dropout_rate: m.dropout_rate,
            },
        };
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION.into(),
            model_kind: c.model_kind,
            policy_kind: c.policy_kind,
            num_questions: c.num_questions(),
            question_ids: c.question_ids.clone(),
            global,
            adaptation: c.adaptation,
            policy: c.policy.as_ref().map(|p| StoredNet::from_net(&p.net)),
            critic: c.critic.as_ref().map(|p| StoredNet::from_net(&p.net)),
            config: c.config.clone(),
            training: c.training.clone(),
        }
    }
}

impl Stored {
    fn into_checkpoint(self) -> Result<Checkpoint> {
        let corrupt = |e: Error| Error::CorruptCheckpoint(e.to_string());
        let global = match &self.global {
            StoredGlobal::Irt {
                difficulties,
                prior_mean,
            } => GlobalModel::Irt(IrtGlobalParams::new(difficulties.values()?, prior_mean.scalar()?).map_err(corrupt)?),
            StoredGlobal::Mlp {
                input,
                hidden,
                output,
                dropout_rate,
            } => GlobalModel::Mlp(
                MlpGlobalParams::from_parts(input.values()?, hidden.layer()?, output.layer()?, *dropout_rate)
                    .map_err(corrupt)?,
            ),
        };
        let q = global.num_questions();
        if q != self.num_questions || (!self.question_ids.is_empty() && self.question_ids.len() != q) {
            return Err(Error::CorruptCheckpoint(format!(
                "declares {} questions and {} ids, model has {q}",
                self.num_questions,
                self.question_ids.len()
            )));
        }
        let policy = self.policy.as_ref().map(|n| n.net().map(|net| PolicyNet { net })).transpose()?;
        let critic = self.critic.as_ref().map(|n| n.net().map(|net| CriticNet { net })).transpose()?;
        let ckpt = Checkpoint {
            model_kind: self.model_kind,
            policy_kind: self.policy_kind,
            question_ids: self.question_ids,
            global,
            adaptation: self.adaptation,
            policy,
            critic,
            config: self.config,
            training: self.training,
        };
        ckpt.engine(ActionMode::Greedy).map_err(corrupt)?;
        Ok(ckpt)
    }
}
