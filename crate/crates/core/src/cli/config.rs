use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::UsageError;
use crate::dataio::{BoundaryPolicy, Dimension, Domain, LabelCase};
use crate::evaluate::{Fusion, SplitScheme};
use crate::model::Variant;
use crate::train::TrainConfig;

/// Serializes enums through their `Display`/`FromStr` text so config files
/// use the same spelling as the flags.
mod text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

mod text_vec {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::ser::SerializeSeq;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&x.to_string())?;
        }
        seq.end()
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(de::Error::custom))
            .collect()
    }
}

/// Architecture settings; per-channel window lengths come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub reduction: usize,
    pub layers: usize,
    pub variant: Variant,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 128,
            reduction: 4,
            layers: 2,
            variant: Variant::EmoMsaSe,
        }
    }
}

/// Settings shared by `preprocess`, `run` and `gradcheck`.
///
/// Built-in defaults, then a JSON file, then flags. Empty `domains` or
/// `channels` mean "everything present in the data".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(with = "text")]
    pub labels: LabelCase,
    #[serde(with = "text")]
    pub boundary: BoundaryPolicy,
    #[serde(with = "text_vec")]
    pub domains: Vec<Domain>,
    pub channels: Vec<String>,
    #[serde(with = "text_vec")]
    pub dimensions: Vec<Dimension>,
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(with = "text")]
    pub split: SplitScheme,
    #[serde(with = "text")]
    pub fusion: Fusion,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("out"),
            labels: LabelCase::General,
            boundary: BoundaryPolicy::LE4Low,
            domains: Vec::new(),
            channels: Vec::new(),
            dimensions: vec![Dimension::Valence, Dimension::Arousal],
            model: ModelSection::default(),
            train: TrainConfig::default(),
            split: SplitScheme::GroupKFold(5),
            fusion: Fusion::ModalityLevel,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, UsageError> {
        let bytes = std::fs::read(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| UsageError(format!("{}: {e}", path.display())))
    }

    /// Defaults, or the file's contents when a path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }

    /// Single-seed rule: the run seed also seeds training.
    pub fn resolved_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if self.dimensions.is_empty() {
            return Err(UsageError("no dimensions selected".into()));
        }
        if self.model.hidden == 0 || self.model.layers == 0 || self.model.reduction == 0 {
            return Err(UsageError("model hidden, layers and reduction must be positive".into()));
        }
        self.resolved_train().validate().map_err(|e| UsageError(e.to_string()))
    }
}
