//! Sensor recordings, SAM ratings, label derivation and synthetic data.

mod csvio;
mod labels;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{
    load_recordings, read_g2_table, read_manifest, read_ratings, read_recording_csv,
    write_dataset, write_g2_table, write_ratings, write_recording_csv, ManifestRow,
};
pub use labels::{binarize_rating, derive_labels, G2Label, LabelSet};
pub use synthetic::{carrier_hz, make_synthetic, SyntheticChannel, SyntheticDataset, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: timestamp at data row {row} does not increase")]
    NonMonotoneTimestamps { file: String, row: usize },
    #[error("{file}: observed spacing {observed_ms:.3} ms deviates more than 5% from declared {declared_hz} Hz")]
    RateMismatch {
        file: String,
        declared_hz: f64,
        observed_ms: f64,
    },
    #[error("recording {0} has no samples")]
    EmptyRecording(String),
    #[error("rating {0} outside 1..=7")]
    RatingOutOfRange(u8),
    #[error("rating 4 is ambiguous under the strict boundary policy")]
    AmbiguousBoundary,
    #[error("video {video}: {dimension} ratings are evenly split")]
    MajorityTie { video: String, dimension: Dimension },
    #[error("video {0} has no label source")]
    EmptyVideo(String),
    #[error("no ratings supplied")]
    NoRatings,
    #[error("the G2 label case needs a G2 table")]
    MissingG2Table,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Body location of the recording device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Wrist-worn watch.
    Peripheral,
    /// Chest vest.
    Trunk,
    /// VR headset.
    Head,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Peripheral, Domain::Trunk, Domain::Head];
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Peripheral => "Peripheral",
            Domain::Trunk => "Trunk",
            Domain::Head => "Head",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "peripheral" | "wrist" | "watch" => Ok(Domain::Peripheral),
            "trunk" | "vest" => Ok(Domain::Trunk),
            "head" | "headset" | "vr" => Ok(Domain::Head),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

/// Channel catalog: name, domain and nominal sampling rate where the device specifies one.
pub const CHANNEL_CATALOG: &[(&str, Domain, Option<f64>)] = &[
    ("ACC_X", Domain::Peripheral, Some(64.0)),
    ("ACC_Y", Domain::Peripheral, Some(64.0)),
    ("ACC_Z", Domain::Peripheral, Some(64.0)),
    ("TEMP", Domain::Peripheral, None),
    ("EDA", Domain::Peripheral, Some(4.0)),
    ("BVP", Domain::Peripheral, Some(64.0)),
    ("ECG1", Domain::Trunk, Some(256.0)),
    ("ECG2", Domain::Trunk, Some(256.0)),
    ("LAT_ACC", Domain::Trunk, Some(256.0)),
    ("LONG_ACC", Domain::Trunk, Some(256.0)),
    ("VERT_ACC", Domain::Trunk, Some(256.0)),
    ("GSR", Domain::Trunk, Some(256.0)),
    ("L_EP_X", Domain::Head, None),
    ("L_EP_Y", Domain::Head, None),
    ("L_EP_Z", Domain::Head, None),
    ("R_EP_X", Domain::Head, None),
    ("R_EP_Y", Domain::Head, None),
    ("R_EP_Z", Domain::Head, None),
];

pub fn channel_domain(channel: &str) -> Option<Domain> {
    CHANNEL_CATALOG
        .iter()
        .find(|(name, _, _)| *name == channel)
        .map(|(_, d, _)| *d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    pub timestamp_ms: i64,
    pub value: f64,
}

/// One participant × one video × one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub participant_id: String,
    pub video_id: String,
    pub domain: Domain,
    pub channel: String,
    pub sample_rate_hz: f64,
    samples: Vec<TimedSample>,
}

impl RawRecording {
    /// Validates that samples are non-empty with strictly increasing timestamps.
    pub fn new(
        participant_id: impl Into<String>,
        video_id: impl Into<String>,
        domain: Domain,
        channel: impl Into<String>,
        sample_rate_hz: f64,
        samples: Vec<TimedSample>,
    ) -> Result<Self, DataError> {
        let rec = Self {
            participant_id: participant_id.into(),
            video_id: video_id.into(),
            domain,
            channel: channel.into(),
            sample_rate_hz,
            samples,
        };
        if rec.samples.is_empty() {
            return Err(DataError::EmptyRecording(rec.label()));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(DataError::InvalidSpec(format!(
                "{}: sample rate {sample_rate_hz}",
                rec.label()
            )));
        }
        if let Some(row) = first_non_monotone(&rec.samples) {
            return Err(DataError::NonMonotoneTimestamps {
                file: rec.label(),
                row,
            });
        }
        Ok(rec)
    }

    pub fn samples(&self) -> &[TimedSample] {
        &self.samples
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean spacing between consecutive timestamps, in milliseconds.
    pub fn mean_spacing_ms(&self) -> Option<f64> {
        let n = self.samples.len();
        (n >= 2).then(|| {
            (self.samples[n - 1].timestamp_ms - self.samples[0].timestamp_ms) as f64 / (n - 1) as f64
        })
    }

    /// Largest deviation of any timestamp from the ideal grid `t0 + i·1000/rate`.
    pub fn max_drift_ms(&self) -> f64 {
        let t0 = self.samples[0].timestamp_ms as f64;
        let step = 1000.0 / self.sample_rate_hz;
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.timestamp_ms as f64 - t0 - i as f64 * step).abs())
            .fold(0.0, f64::max)
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.participant_id, self.video_id, self.channel)
    }
}

/// 1-based data row of the first timestamp that fails to increase.
pub(crate) fn first_non_monotone(samples: &[TimedSample]) -> Option<usize> {
    samples
        .windows(2)
        .position(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
        .map(|i| i + 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Sex::Male),
            "f" | "female" => Ok(Sex::Female),
            other => Err(format!("unknown sex {other:?}")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

/// Self-assessment of one video by one participant on the 1–7 scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamRating {
    pub participant_id: String,
    pub video_id: String,
    pub valence_raw: u8,
    pub arousal_raw: u8,
    pub sex: Sex,
}

/// Binarized rating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    High,
}

impl Level {
    /// Class index used by the classifier head (`High` is the positive class).
    pub fn class_index(self) -> usize {
        match self {
            Level::Low => 0,
            Level::High => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 0 {
            Level::Low
        } else {
            Level::High
        }
    }

    /// Table-style tag such as `HV` or `LA`.
    pub fn tag(self, dim: Dimension) -> &'static str {
        match (self, dim) {
            (Level::Low, Dimension::Valence) => "LV",
            (Level::High, Dimension::Valence) => "HV",
            (Level::Low, Dimension::Arousal) => "LA",
            (Level::High, Dimension::Arousal) => "HA",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LV" | "LA" | "LOW" | "L" | "0" => Some(Level::Low),
            "HV" | "HA" | "HIGH" | "H" | "1" => Some(Level::High),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Valence,
    Arousal,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Valence => "valence",
            Dimension::Arousal => "arousal",
        })
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "valence" | "v" => Ok(Dimension::Valence),
            "arousal" | "a" => Ok(Dimension::Arousal),
            other => Err(format!("unknown dimension {other:?}")),
        }
    }
}

/// Where a rating of exactly 4 falls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    /// `< 4` low, `> 4` high, 4 rejected.
    StrictGT4,
    /// `<= 4` low.
    #[default]
    LE4Low,
}

impl fmt::Display for BoundaryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryPolicy::StrictGT4 => "strict",
            BoundaryPolicy::LE4Low => "le4",
        })
    }
}

impl FromStr for BoundaryPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "le4" | "le4low" => Ok(BoundaryPolicy::LE4Low),
            "strict" | "strictgt4" => Ok(BoundaryPolicy::StrictGT4),
            other => Err(format!("unknown boundary policy {other:?}")),
        }
    }
}

/// Label source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelCase {
    /// Each participant's own rating.
    General,
    /// Per-video majority across all raters.
    Majority,
    /// General labels restricted to male participants.
    MalesOnly,
    /// Fixed per-video expert table.
    G2,
}

impl LabelCase {
    pub fn is_per_video(self) -> bool {
        matches!(self, LabelCase::Majority | LabelCase::G2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelCase::General => "general",
            LabelCase::Majority => "majority",
            LabelCase::MalesOnly => "males",
            LabelCase::G2 => "g2",
        }
    }
}

impl fmt::Display for LabelCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "general" => Ok(LabelCase::General),
            "majority" => Ok(LabelCase::Majority),
            "males" | "males_only" | "malesonly" => Ok(LabelCase::MalesOnly),
            "g2" => Ok(LabelCase::G2),
            other => Err(format!("unknown label case {other:?}")),
        }
    }
}

/// One derived label. Per-video cases leave `participant_id` empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub case: LabelCase,
    pub video_id: String,
    pub participant_id: Option<String>,
    pub valence: Level,
    pub arousal: Level,
    /// Share of raters holding the majority valence label (Majority case only).
    pub valence_fraction: Option<f64>,
    /// Share of raters holding the majority arousal label (Majority case only).
    pub arousal_fraction: Option<f64>,
}

impl LabelAssignment {
    pub fn level(&self, dim: Dimension) -> Level {
        match dim {
            Dimension::Valence => self.valence,
            Dimension::Arousal => self.arousal,
        }
    }

    pub fn fraction(&self, dim: Dimension) -> Option<f64> {
        match dim {
            Dimension::Valence => self.valence_fraction,
            Dimension::Arousal => self.arousal_fraction,
        }
    }
}
