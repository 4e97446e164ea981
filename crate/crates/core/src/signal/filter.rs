use serde::{Deserialize, Serialize};

use super::PoseSequence;
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Settings of the full preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub outlier_z: f64,
    pub resample_hz: f64,
    pub cutoff_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            outlier_z: 3.5,
            resample_hz: 8.0,
            cutoff_hz: 4.0,
        }
    }
}

impl PreprocessConfig {
    /// Outlier removal, resampling, then low-pass.
    ///
    /// When the cutoff is not below the Nyquist rate of the resampled stream
    /// (4 Hz at 8 fps sits exactly on it) the filter is applied before
    /// resampling instead, at the source rate.
    pub fn apply<T: Real>(&self, seq: &PoseSequence<T>) -> Result<PoseSequence<T>> {
        let cleaned = remove_outliers(seq, T::c(self.outlier_z))?;
        let cutoff = T::c(self.cutoff_hz);
        let target = T::c(self.resample_hz);
        if cutoff < target / T::c(2.0) {
            let resampled = resample_linear(&cleaned, target)?;
            lowpass(&resampled, cutoff)
        } else if cutoff < cleaned.rate_hz / T::c(2.0) {
            let smoothed = lowpass(&cleaned, cutoff)?;
            resample_linear(&smoothed, target)
        } else {
            resample_linear(&cleaned, target)
        }
    }
}

fn median<T: Real>(xs: &mut [T]) -> T {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / T::c(2.0)
    }
}

/// Replaces frames whose robust z-score (median / MAD) exceeds `z_threshold`
/// with the linear interpolation of the nearest inliers, per coordinate.
///
/// The score is the modified z-score `0.6745 (x - median) / MAD`. When the MAD
/// is zero the mean absolute deviation (scaled by 1.2533) stands in; when that
/// is zero too the channel is constant and kept as is.
pub fn remove_outliers<T: Real>(seq: &PoseSequence<T>, z_threshold: T) -> Result<PoseSequence<T>> {
    if seq.len() < 3 {
        return Err(invalid(format!(
            "outlier removal needs at least 3 frames, got {}",
            seq.len()
        )));
    }
    if !(z_threshold > T::zero()) {
        return Err(invalid("z_threshold must be positive"));
    }
    let channels: Vec<Vec<T>> = (0..seq.dim())
        .map(|k| clean_channel(&seq.channel(k), z_threshold).ok_or(Error::UnrecoverableChannel { coord: k }))
        .collect::<Result<_>>()?;
    Ok(seq.with_channels(&channels, seq.rate_hz))
}

fn clean_channel<T: Real>(x: &[T], z_threshold: T) -> Option<Vec<T>> {
    let med = median(&mut x.to_vec());
    let mut dev: Vec<T> = x.iter().map(|&v| (v - med).abs()).collect();
    let mad = median(&mut dev.clone());
    let scale = if mad > T::zero() {
        mad / T::c(0.6745)
    } else {
        let mean_ad = dev.iter().copied().sum::<T>() / T::from_usize_lossy(dev.len());
        if mean_ad == T::zero() {
            return Some(x.to_vec());
        }
        mean_ad * T::c(1.253314)
    };
    for d in dev.iter_mut() {
        *d = *d / scale;
    }
    let inlier: Vec<bool> = dev.iter().map(|&z| z <= z_threshold).collect();
    if !inlier.iter().any(|&b| b) {
        return None;
    }
    let mut out = x.to_vec();
    let mut prev: Option<usize> = None;
    let mut t = 0;
    while t < x.len() {
        if inlier[t] {
            prev = Some(t);
            t += 1;
            continue;
        }
        let next = (t..x.len()).find(|&j| inlier[j]);
        let end = next.unwrap_or(x.len());
        for (j, slot) in out.iter_mut().enumerate().take(end).skip(t) {
            *slot = match (prev, next) {
                (Some(a), Some(b)) => {
                    let frac = T::from_usize_lossy(j - a) / T::from_usize_lossy(b - a);
                    x[a] + (x[b] - x[a]) * frac
                }
                (Some(a), None) => x[a],
                (None, Some(b)) => x[b],
                (None, None) => unreachable!(),
            };
        }
        t = end;
    }
    Some(out)
}

/// Linear-interpolation resampling to `target_hz`, keeping the first timestamp.
///
/// The output spans `floor(duration * target_hz) + 1` frames so that every
/// output timestamp has two bracketing input frames.
pub fn resample_linear<T: Real>(seq: &PoseSequence<T>, target_hz: T) -> Result<PoseSequence<T>> {
    if !(target_hz > T::zero()) || !target_hz.is_finite() {
        return Err(invalid(format!("target_hz must be positive, got {target_hz}")));
    }
    if seq.len() < 2 {
        return Err(invalid("resampling needs at least 2 frames"));
    }
    let n_in = seq.len();
    let span = T::from_usize_lossy(n_in - 1) * target_hz / seq.rate_hz;
    let n_out = (span + T::c(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    let ratio = seq.rate_hz / target_hz;
    let frames = (0..n_out)
        .map(|i| {
            let pos = T::from_usize_lossy(i) * ratio;
            let mut lo = pos.floor().to_usize().unwrap_or(0).min(n_in - 1);
            if lo == n_in - 1 {
                lo = n_in - 2;
            }
            let frac = pos - T::from_usize_lossy(lo);
            let (a, b) = (&seq.frames[lo], &seq.frames[lo + 1]);
            a.iter()
                .zip(b.iter())
                .map(|(&x0, &x1)| x0 + (x1 - x0) * frac)
                .collect::<Vec<T>>()
                .into()
        })
        .collect();
    Ok(PoseSequence {
        frames,
        rate_hz: target_hz,
        person: seq.person,
    })
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
struct Biquad<T> {
    b: [T; 3],
    a: [T; 2],
}

impl<T: Real> Biquad<T> {
    fn lowpass(cutoff_hz: T, rate_hz: T, q: T) -> Self {
        let w0 = T::c(2.0) * T::PI() * cutoff_hz / rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (T::c(2.0) * q);
        let a0 = T::one() + alpha;
        let b1 = (T::one() - cos) / a0;
        let b0 = b1 / T::c(2.0);
        Biquad {
            b: [b0, b1, b0],
            a: [-T::c(2.0) * cos / a0, (T::one() - alpha) / a0],
        }
    }

    /// State that makes a constant input `x0` produce a constant output.
    fn steady_state(&self, x0: T) -> [T; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (T::one() + self.a[0] + self.a[1]);
        let y = gain * x0;
        let z1 = y - self.b[0] * x0;
        let z2 = self.b[2] * x0 - self.a[1] * y;
        [z1, z2]
    }

    fn run(&self, x: &mut [T]) {
        let Some(&x0) = x.first() else { return };
        let [mut z1, mut z2] = self.steady_state(x0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Order-4 Butterworth low-pass as two cascaded biquads.
#[derive(Debug, Clone)]
pub struct ButterworthLowpass<T> {
    sections: [Biquad<T>; 2],
}

impl<T: Real> ButterworthLowpass<T> {
    pub fn new(cutoff_hz: T, rate_hz: T) -> Result<Self> {
        if !(cutoff_hz > T::zero()) {
            return Err(invalid("cutoff must be positive"));
        }
        if cutoff_hz >= rate_hz / T::c(2.0) {
            return Err(invalid(format!(
                "cutoff {cutoff_hz} Hz is not below the Nyquist rate of {rate_hz} Hz"
            )));
        }
        // Pole-pair quality factors of the 4th-order Butterworth prototype.
        let q1 = T::one() / (T::c(2.0) * (T::PI() / T::c(8.0)).cos());
        let q2 = T::one() / (T::c(2.0) * (T::c(3.0) * T::PI() / T::c(8.0)).cos());
        Ok(ButterworthLowpass {
            sections: [
                Biquad::lowpass(cutoff_hz, rate_hz, q1),
                Biquad::lowpass(cutoff_hz, rate_hz, q2),
            ],
        })
    }

    fn run(&self, x: &mut [T]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    /// Forward-backward pass (zero phase) with odd reflection padding at both ends.
    pub fn filtfilt(&self, x: &[T]) -> Vec<T> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * 8).min(n - 1);
        let two = T::c(2.0);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| two * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| two * x[n - 1] - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase order-4 low-pass applied to every coordinate.
pub fn lowpass<T: Real>(seq: &PoseSequence<T>, cutoff_hz: T) -> Result<PoseSequence<T>> {
    let filter = ButterworthLowpass::new(cutoff_hz, seq.rate_hz)?;
    let channels: Vec<Vec<T>> = (0..seq.dim()).map(|k| filter.filtfilt(&seq.channel(k))).collect();
    Ok(seq.with_channels(&channels, seq.rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{PoseVector, Side};

    fn seq(values: &[f64], rate: f64) -> PoseSequence<f64> {
        PoseSequence::new(
            values.iter().map(|&v| PoseVector(vec![v, -v])).collect(),
            rate,
            Side::AgentSide,
        )
        .unwrap()
    }

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin())
            .collect()
    }

    fn interior_amplitude(x: &[f64]) -> f64 {
        let m = x.len() / 4;
        x[m..x.len() - m].iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn constant_sequence_has_no_outliers() {
        let s = seq(&[2.5; 12], 8.0);
        assert_eq!(remove_outliers(&s, 3.5).unwrap(), s);
    }

    #[test]
    fn spike_is_replaced_by_neighbour_interpolation() {
        let mut v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        v[5] = 1000.0;
        let out = remove_outliers(&seq(&v, 8.0), 3.5).unwrap();
        assert!((out.frames[5][0] - 5.0).abs() < 1e-9);
        assert!((out.frames[5][1] + 5.0).abs() < 1e-9);
        for i in [0, 4, 6, 9] {
            assert_eq!(out.frames[i][0], i as f64);
        }
    }

    #[test]
    fn spike_on_flat_channel_uses_mean_deviation_fallback() {
        let mut v = vec![1.0; 10];
        v[0] = 50.0;
        let out = remove_outliers(&seq(&v, 8.0), 3.5).unwrap();
        assert_eq!(out.frames[0][0], 1.0);
    }

    #[test]
    fn outlier_removal_needs_three_frames() {
        assert!(remove_outliers(&seq(&[0.0, 1.0], 8.0), 3.5).is_err());
    }

    #[test]
    fn resampling_is_exact_on_linear_signal() {
        let v: Vec<f64> = (0..17).map(|i| 2.0 * (i as f64 / 4.0)).collect();
        let out = resample_linear(&seq(&v, 4.0), 8.0).unwrap();
        assert_eq!(out.len(), 33);
        for (i, f) in out.frames.iter().enumerate() {
            assert!((f[0] - 2.0 * (i as f64 / 8.0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn resample_24_to_8_fps_frame_count() {
        // 3 s at 24 fps.
        let v: Vec<f64> = (0..73).map(|i| i as f64).collect();
        let out = resample_linear(&seq(&v, 24.0), 8.0).unwrap();
        assert_eq!(out.len(), (3.0f64 * 8.0).ceil() as usize + 1);
        assert_eq!(out.rate_hz, 8.0);
        assert!((out.frames[1][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn resample_rejects_bad_input() {
        assert!(resample_linear(&seq(&[1.0], 8.0), 8.0).is_err());
        assert!(resample_linear(&seq(&[1.0, 2.0], 8.0), 0.0).is_err());
        assert!(resample_linear(&seq(&[1.0, 2.0], 8.0), -1.0).is_err());
    }

    #[test]
    fn lowpass_passes_dc() {
        let out = lowpass(&seq(&[3.25; 64], 30.0), 4.0).unwrap();
        for f in &out.frames {
            assert!((f[0] - 3.25).abs() <= 1e-9);
        }
    }

    #[test]
    fn lowpass_keeps_1hz_and_kills_10hz() {
        let low = lowpass(&seq(&sine(1.0, 30.0, 300), 30.0), 4.0).unwrap();
        let amp = interior_amplitude(&low.channel(0));
        assert!((amp - 1.0).abs() <= 0.05, "1 Hz amplitude {amp}");
        let high = lowpass(&seq(&sine(10.0, 30.0, 300), 30.0), 4.0).unwrap();
        let amp = interior_amplitude(&high.channel(0));
        assert!(amp <= 0.15, "10 Hz amplitude {amp}");
    }

    #[test]
    fn lowpass_rejects_cutoff_at_nyquist() {
        assert!(lowpass(&seq(&[0.0; 10], 8.0), 4.0).is_err());
        assert!(lowpass(&seq(&[0.0; 10], 8.0), 3.9).is_ok());
    }

    #[test]
    fn lowpass_is_idempotent_on_band_limited_signal() {
        let once = lowpass(&seq(&sine(0.5, 30.0, 600), 30.0), 4.0).unwrap();
        let twice = lowpass(&once, 4.0).unwrap();
        let a1 = interior_amplitude(&once.channel(0));
        let a2 = interior_amplitude(&twice.channel(0));
        assert!((a1 - a2).abs() / a1 < 0.02);
    }

    #[test]
    fn chain_orders_filter_before_resampling_at_nyquist() {
        let cfg = PreprocessConfig::default();
        let out = cfg.apply(&seq(&sine(1.0, 30.0, 301), 30.0)).unwrap();
        assert_eq!(out.rate_hz, 8.0);
        assert_eq!(out.len(), 81);
    }
}
