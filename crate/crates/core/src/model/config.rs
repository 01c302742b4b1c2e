use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::dataio::{channel_domain, Domain};
use crate::preprocess::ChannelProfile;

/// Architecture variant; the two baselines drop the SE block and, for
/// `LstmSa`, the medium and long attention scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    LstmSa,
    LstmMsa,
    #[default]
    EmoMsaSe,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LstmSa, Variant::LstmMsa, Variant::EmoMsaSe];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::LstmSa => "lstmsa",
            Variant::LstmMsa => "lstmmsa",
            Variant::EmoMsaSe => "emomsase",
        }
    }

    pub fn scales(self) -> usize {
        match self {
            Variant::LstmSa => 1,
            _ => 3,
        }
    }

    pub fn uses_se(self) -> bool {
        self == Variant::EmoMsaSe
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown variant {s:?} (expected lstmsa, lstmmsa or emomsase)"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityConfig {
    pub channel: String,
    /// Samples per window (`F`).
    pub input_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub domain: Domain,
    pub modalities: Vec<ModalityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domains: Vec<DomainConfig>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    128
}
fn default_reduction() -> usize {
    4
}
fn default_layers() -> usize {
    2
}
fn default_classes() -> usize {
    2
}

impl ModelConfig {
    /// Builds a config from channel names, taking each window length from
    /// the channel's preprocessing profile. Domains are put in canonical order.
    pub fn from_channels(channels: &[&str], hidden: usize, variant: Variant, seed: u64) -> Result<Self, ModelError> {
        let mut domains: Vec<DomainConfig> = Vec::new();
        for domain in Domain::ALL {
            let modalities = channels
                .iter()
                .filter(|c| channel_domain(c) == Some(domain))
                .map(|c| {
                    let profile =
                        ChannelProfile::for_channel(c).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
                    Ok(ModalityConfig {
                        channel: c.to_string(),
                        input_size: profile.window_samples,
                    })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            if !modalities.is_empty() {
                domains.push(DomainConfig { domain, modalities });
            }
        }
        if let Some(c) = channels.iter().find(|c| channel_domain(c).is_none()) {
            return Err(ModelError::InvalidConfig(format!("unknown channel {c}")));
        }
        let cfg = Self {
            domains,
            hidden,
            reduction: default_reduction(),
            layers: default_layers(),
            classes: default_classes(),
            variant,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.domains.is_empty() {
            return bad("no domains configured".into());
        }
        if self.hidden == 0 || self.layers == 0 || self.reduction == 0 || self.classes < 2 {
            return bad(format!(
                "hidden {}, layers {}, reduction {}, classes {} must be positive (classes ≥ 2)",
                self.hidden, self.layers, self.reduction, self.classes
            ));
        }
        let order: Vec<usize> = self
            .domains
            .iter()
            .map(|d| Domain::ALL.iter().position(|x| *x == d.domain).expect("domain in ALL"))
            .collect();
        if order.windows(2).any(|w| w[0] >= w[1]) {
            return bad("domains must be distinct and ordered Peripheral, Trunk, Head".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.domains {
            if d.modalities.is_empty() {
                return bad(format!("domain {} has no modalities", d.domain));
            }
            for m in &d.modalities {
                if m.input_size == 0 {
                    return bad(format!("channel {} has zero input size", m.channel));
                }
                if !seen.insert(m.channel.as_str()) {
                    return bad(format!("channel {} listed twice", m.channel));
                }
            }
        }
        Ok(())
    }

    /// Length of one modality's attention vector: `H` or `3H`.
    pub fn cav_len(&self) -> usize {
        self.variant.scales() * self.hidden
    }

    /// Hidden width of the SE bottleneck.
    pub fn se_hidden(&self) -> usize {
        (self.cav_len() / self.reduction).max(1)
    }

    pub fn num_modalities(&self) -> usize {
        self.domains.iter().map(|d| d.modalities.len()).sum()
    }

    /// Length of the fused feature vector fed to the classifier head.
    pub fn global_len(&self) -> usize {
        self.num_modalities() * self.cav_len()
    }

    /// Channels in input order.
    pub fn channels(&self) -> Vec<&str> {
        self.domains
            .iter()
            .flat_map(|d| d.modalities.iter().map(|m| m.channel.as_str()))
            .collect()
    }

    /// Copy restricted to a single domain, or `None` if the domain is absent.
    pub fn restrict(&self, domain: Domain) -> Option<Self> {
        let d = self.domains.iter().find(|d| d.domain == domain)?;
        Some(Self {
            domains: vec![d.clone()],
            ..self.clone()
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
