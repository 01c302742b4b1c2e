//! Butterworth IIR design (bilinear transform, second-order sections) and
//! zero-phase forward-backward application.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PreprocessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    BandPass,
    LowPass,
    MovingAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub low_hz: Option<f64>,
    pub high_hz: Option<f64>,
    pub order: usize,
    /// Window length in samples (moving average only).
    pub window_len: Option<usize>,
}

impl FilterSpec {
    pub fn band_pass(low_hz: f64, high_hz: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::BandPass,
            low_hz: Some(low_hz),
            high_hz: Some(high_hz),
            order,
            window_len: None,
        }
    }

    pub fn low_pass(high_hz: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::LowPass,
            low_hz: None,
            high_hz: Some(high_hz),
            order,
            window_len: None,
        }
    }

    pub fn moving_average(window_len: usize) -> Self {
        Self {
            kind: FilterKind::MovingAverage,
            low_hz: None,
            high_hz: None,
            order: 0,
            window_len: Some(window_len),
        }
    }

    /// Checks the cutoffs against the Nyquist frequency of `rate_hz`.
    pub fn validate(&self, rate_hz: f64) -> Result<(), PreprocessError> {
        let nyquist = rate_hz / 2.0;
        let out_of_range = || PreprocessError::CutoffOutOfRange {
            low_hz: self.low_hz,
            high_hz: self.high_hz,
            rate_hz,
        };
        match self.kind {
            FilterKind::BandPass => match (self.low_hz, self.high_hz) {
                (Some(lo), Some(hi)) if 0.0 < lo && lo < hi && hi < nyquist => {}
                _ => return Err(out_of_range()),
            },
            FilterKind::LowPass => match self.high_hz {
                Some(hi) if 0.0 < hi && hi < nyquist => {}
                _ => return Err(out_of_range()),
            },
            FilterKind::MovingAverage => {
                if self.window_len.unwrap_or(0) == 0 {
                    return Err(PreprocessError::WindowTooLong { window: 0, len: 0 });
                }
                return Ok(());
            }
        }
        if self.order == 0 {
            return Err(out_of_range());
        }
        Ok(())
    }
}

/// One second-order section, `a[0] == 1`, evaluated in transposed direct form II.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// DC gain `Σb / Σa`.
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// State that holds the section at steady state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z[0];
            z[0] = b1 * xi - a1 * y + z[1];
            z[1] = b2 * xi - a2 * y;
            *v = y;
        }
    }
}

fn warp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (std::f64::consts::PI * f / fs).tan()
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    let n = order as f64;
    (0..order)
        .map(|k| {
            let m = -(n - 1.0) + 2.0 * k as f64;
            -Complex64::from_polar(1.0, std::f64::consts::PI * m / (2.0 * n))
        })
        .collect()
}

/// Designs a digital Butterworth filter as cascaded second-order sections.
///
/// A band-pass of order `n` has `2n` poles (`n` sections); a low-pass of
/// order `n` has `n` poles.
pub fn butterworth_sos(spec: &FilterSpec, rate_hz: f64) -> Result<Vec<Biquad>, PreprocessError> {
    spec.validate(rate_hz)?;
    let proto = prototype_poles(spec.order);
    let (poles, zeros, gain): (Vec<Complex64>, Vec<Complex64>, f64) = match spec.kind {
        FilterKind::LowPass => {
            let wc = warp(spec.high_hz.expect("validated"), rate_hz);
            (
                proto.iter().map(|p| p * wc).collect(),
                vec![],
                wc.powi(spec.order as i32),
            )
        }
        FilterKind::BandPass => {
            let w1 = warp(spec.low_hz.expect("validated"), rate_hz);
            let w2 = warp(spec.high_hz.expect("validated"), rate_hz);
            let (bw, wo) = (w2 - w1, (w1 * w2).sqrt());
            let mut poles = Vec::with_capacity(2 * spec.order);
            for p in &proto {
                let pl = p * (bw / 2.0);
                let d = (pl * pl - wo * wo).sqrt();
                poles.push(pl + d);
                poles.push(pl - d);
            }
            (poles, vec![Complex64::new(0.0, 0.0); spec.order], bw.powi(spec.order as i32))
        }
        FilterKind::MovingAverage => unreachable!("moving average is not an IIR design"),
    };

    // bilinear transform
    let fs2 = 2.0 * rate_hz;
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let k = gain * (num / den).re;
    let dpoles: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let mut dzeros: Vec<f64> = zeros.iter().map(|z| ((fs2 + z) / (fs2 - z)).re).collect();
    dzeros.extend(std::iter::repeat_n(-1.0, poles.len() - zeros.len()));
    // interleave +1/-1 zeros so each band-pass section gets one of each
    dzeros.sort_by(|a, b| b.total_cmp(a));
    let half = dzeros.len() / 2;
    let interleaved: Vec<f64> = if spec.kind == FilterKind::BandPass {
        (0..half).flat_map(|i| [dzeros[i], dzeros[half + i]]).collect()
    } else {
        dzeros
    };

    let tol = 1e-12;
    let mut pole_groups: Vec<Vec<Complex64>> = dpoles
        .iter()
        .filter(|p| p.im > tol)
        .map(|p| vec![*p, p.conj()])
        .collect();
    let reals: Vec<Complex64> = dpoles.iter().filter(|p| p.im.abs() <= tol).copied().collect();
    pole_groups.extend(reals.chunks(2).map(|c| c.to_vec()));

    let mut zi = interleaved.into_iter();
    let mut sections = Vec::with_capacity(pole_groups.len());
    for group in pole_groups {
        let a = match group.as_slice() {
            [p, q] => [1.0, -(p + q).re, (p * q).re],
            [p] => [1.0, -p.re, 0.0],
            _ => unreachable!(),
        };
        let b = if group.len() == 2 {
            let (z1, z2) = (zi.next().unwrap_or(0.0), zi.next().unwrap_or(0.0));
            [1.0, -(z1 + z2), z1 * z2]
        } else {
            [1.0, -zi.next().unwrap_or(0.0), 0.0]
        };
        sections.push(Biquad { b, a });
    }
    if let Some(first) = sections.first_mut() {
        first.b.iter_mut().for_each(|v| *v *= k);
    }
    Ok(sections)
}

fn sos_step_states(sos: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let z = s.step_state().map(|v| v * scale);
            scale *= s.dc_gain();
            z
        })
        .collect()
}

fn sos_run(sos: &[Biquad], states: &[[f64; 2]], x: &mut [f64]) {
    let x0 = x[0];
    for (s, z) in sos.iter().zip(states) {
        s.run(x, z.map(|v| v * x0));
    }
}

/// Zero-phase filtering: odd-extended edges, steady-state initial
/// conditions, forward pass then backward pass.
pub fn sos_filtfilt(sos: &[Biquad], signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 || sos.is_empty() {
        return signal.to_vec();
    }
    let trailing_zeros = sos.iter().filter(|s| s.b[2] == 0.0).count().min(sos.iter().filter(|s| s.a[2] == 0.0).count());
    let padlen = (3 * (2 * sos.len() + 1 - trailing_zeros)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    let (first, last) = (signal[0], signal[n - 1]);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=padlen).map(|i| 2.0 * last - signal[n - 1 - i]));
    let states = sos_step_states(sos);
    sos_run(sos, &states, &mut ext);
    ext.reverse();
    sos_run(sos, &states, &mut ext);
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

/// Zero-phase Butterworth filtering of `signal` sampled at `rate_hz`.
///
/// Moving-average specs are delegated to [`moving_average`].
pub fn butterworth_filter(signal: &[f64], rate_hz: f64, spec: &FilterSpec) -> Result<Vec<f64>, PreprocessError> {
    if spec.kind == FilterKind::MovingAverage {
        spec.validate(rate_hz)?;
        return moving_average(signal, spec.window_len.expect("validated"));
    }
    let sos = butterworth_sos(spec, rate_hz)?;
    let needed = 3 * spec.order + 1;
    if signal.len() < needed {
        return Err(PreprocessError::SignalTooShort {
            len: signal.len(),
            needed,
        });
    }
    let out = sos_filtfilt(&sos, signal);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFinite("butterworth_filter"));
    }
    Ok(out)
}

/// Centered moving average; edge windows are truncated rather than padded.
pub fn moving_average(signal: &[f64], window_len: usize) -> Result<Vec<f64>, PreprocessError> {
    let n = signal.len();
    if window_len == 0 || window_len > n {
        return Err(PreprocessError::WindowTooLong {
            window: window_len,
            len: n,
        });
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in signal {
        prefix.push(prefix.last().unwrap() + v);
    }
    let left = (window_len - 1) / 2;
    let right = window_len / 2;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    /// Squared-magnitude response of a zero-phase bilinear Butterworth band-pass,
    /// from the analog closed form at the pre-warped frequency.
    fn bandpass_power_gain(f: f64, lo: f64, hi: f64, order: i32, fs: f64) -> f64 {
        let (w, w1, w2) = (warp(f, fs), warp(lo, fs), warp(hi, fs));
        let ratio = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + ratio.powi(2 * order))
    }

    /// Amplitude at `freq` over the middle half, by projection onto sin/cos.
    fn steady_amplitude(y: &[f64], freq: f64, rate: f64) -> f64 {
        let (lo, hi) = (y.len() / 4, 3 * y.len() / 4);
        let (mut s, mut c) = (0.0, 0.0);
        for (i, v) in y.iter().enumerate().take(hi).skip(lo) {
            let ph = 2.0 * PI * freq * i as f64 / rate;
            s += v * ph.sin();
            c += v * ph.cos();
        }
        2.0 * s.hypot(c) / (hi - lo) as f64
    }

    #[test]
    fn constant_signal_is_removed_by_band_pass() {
        let x = vec![3.7; 640];
        let y = butterworth_filter(&x, 64.0, &FilterSpec::band_pass(0.5, 20.0, 4)).unwrap();
        assert_eq!(y.len(), x.len());
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-6 * 3.7, "{max}");
    }

    #[test]
    fn ten_hz_passes_within_five_percent() {
        let x = sine(10.0, 64.0, 64 * 20);
        let y = butterworth_filter(&x, 64.0, &FilterSpec::band_pass(0.5, 20.0, 4)).unwrap();
        let amp = steady_amplitude(&y, 10.0, 64.0);
        let expected = bandpass_power_gain(10.0, 0.5, 20.0, 4, 64.0);
        assert!((amp - expected).abs() < 1e-3, "{amp} vs {expected}");
        assert!((amp - 1.0).abs() < 0.05, "{amp}");
    }

    #[test]
    fn thirty_hz_is_attenuated_below_thirty_percent() {
        let x = sine(30.0, 64.0, 64 * 20);
        let y = butterworth_filter(&x, 64.0, &FilterSpec::band_pass(0.5, 20.0, 4)).unwrap();
        let amp = steady_amplitude(&y, 30.0, 64.0);
        let expected = bandpass_power_gain(30.0, 0.5, 20.0, 4, 64.0);
        assert!((amp - expected).abs() < 1e-3, "{amp} vs {expected}");
        assert!(amp < 0.3, "{amp}");
    }

    /// Reference values from an independent direct-form implementation
    /// (scipy.signal `butter(..., output="sos")` + `sosfiltfilt`).
    #[test]
    fn matches_reference_forward_backward_output() {
        let x: Vec<f64> = (0..200)
            .map(|i| {
                let t = i as f64 / 64.0;
                (2.0 * PI * 10.0 * t).sin() + 0.5 * (2.0 * PI * 3.0 * t).cos() + 0.1 * (i % 7) as f64
            })
            .collect();
        let y = butterworth_filter(&x, 64.0, &FilterSpec::band_pass(0.5, 20.0, 4)).unwrap();
        for (i, want) in REFERENCE_BP {
            assert!((y[*i] - want).abs() < 1e-9, "index {i}: {} vs {want}", y[*i]);
        }
        let y = butterworth_filter(&x, 64.0, &FilterSpec::low_pass(0.5, 4)).unwrap();
        for (i, want) in REFERENCE_LP {
            assert!((y[*i] - want).abs() < 1e-9, "index {i}: {} vs {want}", y[*i]);
        }
    }

    include!("filter_reference.in");

    #[test]
    fn cutoff_validation() {
        assert!(matches!(
            butterworth_filter(&[0.0; 100], 64.0, &FilterSpec::band_pass(0.5, 40.0, 4)),
            Err(PreprocessError::CutoffOutOfRange { .. })
        ));
        assert!(matches!(
            butterworth_filter(&[0.0; 100], 64.0, &FilterSpec::band_pass(5.0, 2.0, 4)),
            Err(PreprocessError::CutoffOutOfRange { .. })
        ));
        assert!(matches!(
            butterworth_filter(&[0.0; 100], 4.0, &FilterSpec::low_pass(2.0, 4)),
            Err(PreprocessError::CutoffOutOfRange { .. })
        ));
        assert!(matches!(
            butterworth_filter(&[0.0; 12], 64.0, &FilterSpec::band_pass(0.5, 20.0, 4)),
            Err(PreprocessError::SignalTooShort { len: 12, needed: 13 })
        ));
    }

    #[test]
    fn filter_is_linear() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let spec = FilterSpec::band_pass(0.5, 45.0, 4);
        let y = butterworth_filter(&x, 256.0, &spec).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| -3.5 * v).collect();
        let ys = butterworth_filter(&scaled, 256.0, &spec).unwrap();
        for (a, b) in y.iter().zip(&ys) {
            assert!((-3.5 * a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0; 4], 3).unwrap(), vec![1.0; 4]);
        assert_eq!(moving_average(&[0.0, 3.0, 0.0], 3).unwrap(), vec![1.5, 1.0, 1.5]);
        assert!(matches!(
            moving_average(&[0.0; 4], 5),
            Err(PreprocessError::WindowTooLong { window: 5, len: 4 })
        ));
        // even window: one extra sample on the right
        assert_eq!(moving_average(&[0.0, 2.0, 4.0, 6.0], 2).unwrap(), vec![1.0, 3.0, 5.0, 6.0]);
    }
}
