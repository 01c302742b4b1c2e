//! Signal conditioning: filtering, resampling, normalization, tail
//! extraction and sliding-window segmentation.

mod cache;
mod filter;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{channel_domain, Domain, RawRecording};
use crate::graph::Tensor;

pub use cache::{cache_key, read_cached, write_cached, CacheSidecar};
pub use filter::{butterworth_filter, butterworth_sos, moving_average, sos_filtfilt, Biquad, FilterKind, FilterSpec};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cutoff out of range (low {low_hz:?}, high {high_hz:?}) for {rate_hz} Hz")]
    CutoffOutOfRange {
        low_hz: Option<f64>,
        high_hz: Option<f64>,
        rate_hz: f64,
    },
    #[error("signal of {len} samples is too short; need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("moving-average window {window} exceeds signal length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("downsampling from {from_hz} Hz to {to_hz} Hz is not supported")]
    Downsampling { from_hz: f64, to_hz: f64 },
    #[error("invalid sample rate {0}")]
    InvalidRate(f64),
    #[error("zero variance signal")]
    ZeroVariance,
    #[error("recording has {len} samples; need {needed}")]
    RecordingTooShort { len: usize, needed: usize },
    #[error("window of {window} samples is larger than signal of {len}")]
    WindowLargerThanSignal { window: usize, len: usize },
    #[error("hop for window {window} with overlap {overlap} is not a positive integer")]
    NonIntegerHop { window: usize, overlap: f64 },
    #[error("channel {0} is not supported")]
    UnsupportedChannel(String),
    #[error("recording channel {recording} does not match profile channel {profile}")]
    ChannelMismatch { recording: String, profile: String },
    #[error("{context}: {source}")]
    Recording {
        context: String,
        #[source]
        source: Box<PreprocessError>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Identifies the recording a tensor was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorSource {
    pub participant_id: String,
    pub video_id: String,
    pub channel: String,
}

/// `T × F` matrix of windows; row `i` is window `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedTensor {
    pub values: Tensor,
    pub source: TensorSource,
}

impl WindowedTensor {
    pub fn windows(&self) -> usize {
        self.values.rows()
    }

    pub fn window_len(&self) -> usize {
        self.values.cols()
    }
}

/// Linear interpolation onto a `to_hz` grid; the last segment's slope is
/// extended past the final input sample.
pub fn upsample(signal: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>, PreprocessError> {
    for r in [from_hz, to_hz] {
        if !(r.is_finite() && r > 0.0) {
            return Err(PreprocessError::InvalidRate(r));
        }
    }
    if to_hz < from_hz {
        return Err(PreprocessError::Downsampling { from_hz, to_hz });
    }
    let n = signal.len();
    if n == 0 || to_hz == from_hz {
        return Ok(signal.to_vec());
    }
    if n == 1 {
        let len = (to_hz / from_hz).round() as usize;
        return Ok(vec![signal[0]; len]);
    }
    let out_len = (n as f64 * to_hz / from_hz).round() as usize;
    let step = from_hz / to_hz;
    Ok((0..out_len)
        .map(|j| {
            let pos = j as f64 * step;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            signal[i] + frac * (signal[i + 1] - signal[i])
        })
        .collect())
}

/// Population z-score.
pub fn zscore(signal: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if signal.len() < 2 {
        return Err(PreprocessError::SignalTooShort {
            len: signal.len(),
            needed: 2,
        });
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(PreprocessError::ZeroVariance);
    }
    Ok(signal.iter().map(|v| (v - mean) / std).collect())
}

/// Last `round(seconds × rate_hz)` samples.
pub fn take_tail(signal: &[f64], rate_hz: f64, seconds: f64) -> Result<Vec<f64>, PreprocessError> {
    let needed = (seconds * rate_hz).round() as usize;
    take_tail_coords(signal, needed)
}

/// Last `n` values.
pub fn take_tail_coords(coords: &[f64], n: usize) -> Result<Vec<f64>, PreprocessError> {
    if coords.len() < n {
        return Err(PreprocessError::RecordingTooShort {
            len: coords.len(),
            needed: n,
        });
    }
    Ok(coords[coords.len() - n..].to_vec())
}

/// Hop length for a window with the given fractional overlap.
pub fn hop_length(window_samples: usize, overlap_fraction: f64) -> Result<usize, PreprocessError> {
    let bad = || PreprocessError::NonIntegerHop {
        window: window_samples,
        overlap: overlap_fraction,
    };
    if !(0.0..1.0).contains(&overlap_fraction) || window_samples == 0 {
        return Err(bad());
    }
    let hop = window_samples as f64 * (1.0 - overlap_fraction);
    let rounded = hop.round();
    if (hop - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(bad());
    }
    Ok(rounded as usize)
}

/// Sliding windows; a trailing remainder shorter than a window is dropped.
pub fn segment(
    signal: &[f64],
    window_samples: usize,
    overlap_fraction: f64,
    source: TensorSource,
) -> Result<WindowedTensor, PreprocessError> {
    let hop = hop_length(window_samples, overlap_fraction)?;
    if window_samples > signal.len() {
        return Err(PreprocessError::WindowLargerThanSignal {
            window: window_samples,
            len: signal.len(),
        });
    }
    let t = (signal.len() - window_samples) / hop + 1;
    let mut data = Vec::with_capacity(t * window_samples);
    for i in 0..t {
        data.extend_from_slice(&signal[i * hop..i * hop + window_samples]);
    }
    let values = Tensor::matrix(t, window_samples, data).expect("shape is consistent");
    Ok(WindowedTensor { values, source })
}

/// How the final span of a stream is selected before segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tail {
    Seconds(f64),
    Coords(usize),
}

/// Per-channel processing chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub channel: String,
    /// Rate the stream is brought to before filtering; `None` keeps it as is.
    pub target_rate_hz: Option<f64>,
    pub filter: Option<FilterSpec>,
    pub tail: Tail,
    pub window_samples: usize,
    pub overlap: f64,
}

pub const FILTER_ORDER: usize = 4;
pub const TAIL_SECONDS: f64 = 40.0;
pub const EYE_TAIL_COORDS: usize = 2000;
pub const EYE_WINDOW: usize = 200;
pub const WINDOW_SECONDS: f64 = 2.0;
pub const OVERLAP: f64 = 0.5;
pub const TEMP_WINDOW: usize = 64;

impl ChannelProfile {
    /// Default profile for a catalog channel.
    pub fn for_channel(channel: &str) -> Result<Self, PreprocessError> {
        let unsupported = || PreprocessError::UnsupportedChannel(channel.to_string());
        let domain = channel_domain(channel).ok_or_else(unsupported)?;
        let timed = |rate: f64, filter: Option<FilterSpec>| ChannelProfile {
            channel: channel.to_string(),
            target_rate_hz: Some(rate),
            filter,
            tail: Tail::Seconds(TAIL_SECONDS),
            window_samples: (WINDOW_SECONDS * rate).round() as usize,
            overlap: OVERLAP,
        };
        let band = |lo, hi| Some(FilterSpec::band_pass(lo, hi, FILTER_ORDER));
        Ok(match (domain, channel) {
            (_, "GSR") => return Err(unsupported()),
            (Domain::Peripheral, "ACC_X" | "ACC_Y" | "ACC_Z") => timed(64.0, band(0.5, 20.0)),
            (Domain::Peripheral, "EDA") => timed(64.0, Some(FilterSpec::low_pass(0.5, FILTER_ORDER))),
            (Domain::Peripheral, "BVP") => timed(64.0, band(0.5, 4.0)),
            (Domain::Peripheral, "TEMP") => timed(64.0, Some(FilterSpec::moving_average(TEMP_WINDOW))),
            (Domain::Trunk, "ECG1" | "ECG2") => timed(256.0, band(0.5, 45.0)),
            (Domain::Trunk, "LAT_ACC" | "LONG_ACC" | "VERT_ACC") => timed(256.0, band(0.5, 20.0)),
            (Domain::Head, _) => ChannelProfile {
                channel: channel.to_string(),
                target_rate_hz: None,
                filter: None,
                tail: Tail::Coords(EYE_TAIL_COORDS),
                window_samples: EYE_WINDOW,
                overlap: OVERLAP,
            },
            _ => return Err(unsupported()),
        })
    }
}

/// Runs the channel chain: upsample → filter → zscore → tail → segment.
pub fn preprocess_channel(rec: &RawRecording, profile: &ChannelProfile) -> Result<WindowedTensor, PreprocessError> {
    if rec.channel != profile.channel {
        return Err(PreprocessError::ChannelMismatch {
            recording: rec.channel.clone(),
            profile: profile.channel.clone(),
        });
    }
    let wrap = |e: PreprocessError| PreprocessError::Recording {
        context: rec.label(),
        source: Box::new(e),
    };
    let mut x = rec.values();
    let mut rate = rec.sample_rate_hz;
    if let Some(target) = profile.target_rate_hz {
        if rate < target {
            x = upsample(&x, rate, target).map_err(wrap)?;
            rate = target;
        } else if rate > target {
            return Err(wrap(PreprocessError::Downsampling {
                from_hz: rate,
                to_hz: target,
            }));
        }
    }
    if let Some(spec) = &profile.filter {
        x = butterworth_filter(&x, rate, spec).map_err(wrap)?;
    }
    x = zscore(&x).map_err(wrap)?;
    x = match profile.tail {
        Tail::Seconds(s) => take_tail(&x, rate, s),
        Tail::Coords(n) => take_tail_coords(&x, n),
    }
    .map_err(wrap)?;
    let source = TensorSource {
        participant_id: rec.participant_id.clone(),
        video_id: rec.video_id.clone(),
        channel: rec.channel.clone(),
    };
    let out = segment(&x, profile.window_samples, profile.overlap, source).map_err(wrap)?;
    if !out.values.is_finite() {
        return Err(wrap(PreprocessError::NonFinite("preprocess_channel")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TimedSample;
    use proptest::prelude::*;

    fn src() -> TensorSource {
        TensorSource {
            participant_id: "P01".into(),
            video_id: "V01".into(),
            channel: "X".into(),
        }
    }

    fn recording(channel: &str, rate: f64, n: usize) -> RawRecording {
        let step = 1000.0 / rate;
        let samples = (0..n)
            .map(|i| TimedSample {
                timestamp_ms: (i as f64 * step).round() as i64,
                value: (i as f64 * 0.37).sin() + 0.01 * i as f64,
            })
            .collect();
        RawRecording::new(
            "P01",
            "V01",
            channel_domain(channel).unwrap(),
            channel,
            rate,
            samples,
        )
        .unwrap()
    }

    #[test]
    fn upsample_examples() {
        let y = upsample(&[0.0, 16.0], 4.0, 64.0).unwrap();
        assert_eq!(y.len(), 32);
        for (i, v) in y.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-12);
        }
        assert_eq!(upsample(&[1.0, 2.0, 5.0], 4.0, 4.0).unwrap(), vec![1.0, 2.0, 5.0]);
        assert_eq!(upsample(&[2.5; 10], 4.0, 64.0).unwrap(), vec![2.5; 160]);
        assert!(matches!(upsample(&[1.0, 2.0], 64.0, 4.0), Err(PreprocessError::Downsampling { .. })));
        // non-integer ratio keeps grid points
        let y = upsample(&[0.0, 3.0, 6.0, 9.0], 2.0, 3.0).unwrap();
        assert_eq!(y.len(), 6);
        assert!((y[3] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore(&[1.0, 3.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(zscore(&[5.0, 5.0, 5.0]), Err(PreprocessError::ZeroVariance)));
    }

    #[test]
    fn tail_examples() {
        assert_eq!(take_tail(&vec![0.0; 60 * 64], 64.0, 40.0).unwrap().len(), 2560);
        assert_eq!(take_tail(&vec![0.0; 60 * 256], 256.0, 40.0).unwrap().len(), 10240);
        assert!(matches!(
            take_tail(&vec![0.0; 30 * 64], 64.0, 40.0),
            Err(PreprocessError::RecordingTooShort { .. })
        ));
        let coords: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let tail = take_tail_coords(&coords, 2000).unwrap();
        assert_eq!(tail.first(), Some(&3000.0));
        assert_eq!(tail.len(), 2000);
        assert_eq!(take_tail_coords(&coords[..2000], 2000).unwrap(), coords[..2000].to_vec());
        assert!(take_tail_coords(&coords[..1999], 2000).is_err());
    }

    #[test]
    fn segment_shapes() {
        for (len, w, t) in [(2560, 128, 39), (10240, 512, 39), (2000, 200, 19)] {
            let x = vec![0.0; len];
            let out = segment(&x, w, 0.5, src()).unwrap();
            assert_eq!((out.windows(), out.window_len()), (t, w));
        }
        assert!(matches!(
            segment(&[0.0; 10], 12, 0.5, src()),
            Err(PreprocessError::WindowLargerThanSignal { .. })
        ));
        assert!(matches!(
            segment(&[0.0; 10], 5, 0.5, src()),
            Err(PreprocessError::NonIntegerHop { .. })
        ));
        assert!(matches!(
            segment(&[0.0; 10], 4, 1.0, src()),
            Err(PreprocessError::NonIntegerHop { .. })
        ));
    }

    #[test]
    fn segment_rows_are_strided_slices() {
        let x: Vec<f64> = (0..23).map(|i| i as f64).collect();
        let out = segment(&x, 6, 0.5, src()).unwrap();
        assert_eq!(out.windows(), 6);
        assert_eq!(out.values.row(2), &x[6..12]);
    }

    #[test]
    fn channel_pipelines_produce_expected_shapes() {
        let cases = [
            ("EDA", 4.0, 240 * 4, 39, 128),
            ("ECG1", 256.0, 300 * 256, 39, 512),
            ("L_EP_Y", 50.0, 2500, 19, 200),
            ("ACC_Z", 64.0, 60 * 64, 39, 128),
            ("TEMP", 4.0, 60 * 4, 39, 128),
            ("BVP", 64.0, 60 * 64, 39, 128),
            ("LAT_ACC", 256.0, 60 * 256, 39, 512),
        ];
        for (ch, rate, n, t, f) in cases {
            let rec = recording(ch, rate, n);
            let out = preprocess_channel(&rec, &ChannelProfile::for_channel(ch).unwrap()).unwrap();
            assert_eq!((out.windows(), out.window_len()), (t, f), "{ch}");
            assert!(out.values.is_finite());
            assert_eq!(out.source.channel, ch);
        }
    }

    #[test]
    fn gsr_and_unknown_channels_are_rejected() {
        assert!(matches!(
            ChannelProfile::for_channel("GSR"),
            Err(PreprocessError::UnsupportedChannel(_))
        ));
        assert!(ChannelProfile::for_channel("FOO").is_err());
        let rec = recording("EDA", 4.0, 400);
        let profile = ChannelProfile::for_channel("ACC_X").unwrap();
        assert!(matches!(
            preprocess_channel(&rec, &profile),
            Err(PreprocessError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn short_recording_error_names_the_recording() {
        let rec = recording("ACC_Z", 64.0, 30 * 64);
        let err = preprocess_channel(&rec, &ChannelProfile::for_channel("ACC_Z").unwrap()).unwrap_err();
        assert!(err.to_string().contains("P01"), "{err}");
    }

    proptest! {
        #[test]
        fn zscore_is_affine_invariant_and_idempotent(
            x in prop::collection::vec(-100.0f64..100.0, 3..60),
            a in 0.1f64..50.0,
            b in -100.0f64..100.0,
        ) {
            prop_assume!(zscore(&x).is_ok());
            let z = zscore(&x).unwrap();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            for (p, q) in z.iter().zip(zscore(&shifted).unwrap()) {
                prop_assert!((p - q).abs() < 1e-7);
            }
            for (p, q) in z.iter().zip(zscore(&z).unwrap()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn even_rows_reconstruct_a_prefix(half in 1usize..20, extra in 0usize..200) {
            let w = 2 * half;
            let x: Vec<f64> = (0..w + extra).map(|i| (i as f64).sqrt()).collect();
            let out = segment(&x, w, 0.5, src()).unwrap();
            let joined: Vec<f64> = (0..out.windows()).step_by(2).flat_map(|i| out.values.row(i).to_vec()).collect();
            prop_assert_eq!(&joined[..], &x[..joined.len()]);
        }
    }
}
