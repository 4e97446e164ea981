use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::{PoseSequence, PoseVector};

/// Admissible motion: per-joint speed limits and a linear envelope
/// `max|W| <= intercept + slope * max|V|` on acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KinematicBound<T> {
    pub slope: T,
    pub intercept: T,
    pub max_speed: Vec<T>,
}

/// Per-frame velocity and acceleration, by finite differences scaled by the
/// frame rate. `velocity[i]` belongs to frame `i + 1`, `acceleration[i]` to
/// frame `i + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives<T> {
    pub velocity: Vec<Vec<T>>,
    pub acceleration: Vec<Vec<T>>,
}

pub fn finite_differences<T: Real>(seq: &PoseSequence<T>) -> Derivatives<T> {
    let rate = seq.rate_hz;
    let velocity: Vec<Vec<T>> = seq
        .frames
        .windows(2)
        .map(|w| w[1].iter().zip(w[0].iter()).map(|(&b, &a)| (b - a) * rate).collect())
        .collect();
    let acceleration = velocity
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(&b, &a)| (b - a) * rate).collect())
        .collect();
    Derivatives {
        velocity,
        acceleration,
    }
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Linear-interpolated quantile of an unsorted sample.
fn quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

pub const MIN_BOUND_SAMPLES: usize = 10;

/// Fits the bound on `(max|V|, max|W|)` pairs, one per frame with both
/// derivatives defined. The least-squares intercept is raised until the line
/// covers every observed pair.
pub fn fit_kinematic_bound<T: Real>(sequences: &[PoseSequence<T>]) -> Result<KinematicBound<T>> {
    let dim = sequences
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| Error::InvalidDataset("no sequences".into()))?;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut speeds: Vec<Vec<f64>> = vec![Vec::new(); dim];
    for seq in sequences {
        if seq.len() < 3 {
            return Err(Error::InvalidDataset(format!(
                "kinematic fit needs sequences of at least 3 frames, got {}",
                seq.len()
            )));
        }
        if seq.dim() != dim {
            return Err(Error::InvalidDataset("sequences differ in pose dimension".into()));
        }
        let d = finite_differences(seq);
        for v in &d.velocity {
            for (k, x) in v.iter().enumerate() {
                speeds[k].push(x.abs().as_f64());
            }
        }
        for (w, v) in d.acceleration.iter().zip(&d.velocity[1..]) {
            pairs.push((max_abs(v).as_f64(), max_abs(w).as_f64()));
        }
    }
    if pairs.len() < MIN_BOUND_SAMPLES {
        return Err(Error::InvalidDataset(format!(
            "kinematic fit needs {MIN_BOUND_SAMPLES} samples, got {}",
            pairs.len()
        )));
    }

    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 1e-12 * n { (sxy / sxx).max(0.0) } else { 0.0 };
    let intercept = pairs
        .iter()
        .map(|p| p.1 - slope * p.0)
        .fold(0.0f64, f64::max);

    Ok(KinematicBound {
        slope: T::c(slope),
        intercept: T::c(intercept),
        max_speed: speeds.into_iter().map(|s| T::c(quantile(s, 0.99))).collect(),
    })
}

impl<T: Real> KinematicBound<T> {
    /// A bound that admits everything.
    pub fn unbounded(dim: usize) -> Self {
        KinematicBound {
            slope: T::zero(),
            intercept: T::infinity(),
            max_speed: vec![T::infinity(); dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: T| !x.is_nan() && x >= T::zero();
        if !ok(self.slope) || !ok(self.intercept) || !self.max_speed.iter().all(|&x| ok(x)) {
            return Err(Error::InvalidArgument("kinematic bound must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn accel_limit(&self, speed: T) -> T {
        self.intercept + self.slope * speed
    }

    fn velocity(from: &PoseVector<T>, to: &PoseVector<T>, rate: T) -> Vec<T> {
        to.iter().zip(from.iter()).map(|(&b, &a)| (b - a) * rate).collect()
    }

    pub fn velocity_ok(&self, from: &PoseVector<T>, to: &PoseVector<T>, rate: T) -> bool {
        Self::velocity(from, to, rate)
            .iter()
            .zip(&self.max_speed)
            .all(|(v, &m)| v.abs() <= m)
    }

    /// Checks the step `from -> to`, and with `prev` also the acceleration at
    /// `from` against the envelope widened by `slack`.
    pub fn step_ok(
        &self,
        prev: Option<&PoseVector<T>>,
        from: &PoseVector<T>,
        to: &PoseVector<T>,
        rate: T,
        slack: T,
    ) -> bool {
        if !self.velocity_ok(from, to, rate) {
            return false;
        }
        let Some(prev) = prev else { return true };
        let v_in = Self::velocity(prev, from, rate);
        let v_out = Self::velocity(from, to, rate);
        let accel = v_out
            .iter()
            .zip(&v_in)
            .fold(T::zero(), |m, (&b, &a)| m.max(((b - a) * rate).abs()));
        accel <= self.accel_limit(max_abs(&v_out)) * (T::one() + slack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Side;

    fn seq(frames: Vec<Vec<f64>>, rate: f64) -> PoseSequence<f64> {
        PoseSequence::new(frames.into_iter().map(PoseVector).collect(), rate, Side::AgentSide).unwrap()
    }

    #[test]
    fn constant_sequence_gives_zero_bound() {
        let b = fit_kinematic_bound(&[seq(vec![vec![0.3, -0.1]; 20], 8.0)]).unwrap();
        assert_eq!(b.slope, 0.0);
        assert_eq!(b.intercept, 0.0);
        assert_eq!(b.max_speed, vec![0.0, 0.0]);
    }

    #[test]
    fn sine_derivatives_match_analytic_peaks() {
        let rate = 8.0;
        let frames: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![(2.0 * std::f64::consts::PI * i as f64 / rate).sin()])
            .collect();
        let s = seq(frames, rate);
        let d = finite_differences(&s);
        let vmax = d.velocity.iter().map(|v| v[0].abs()).fold(0.0, f64::max);
        let wmax = d.acceleration.iter().map(|w| w[0].abs()).fold(0.0, f64::max);
        let tau = 2.0 * std::f64::consts::PI;
        assert!((vmax - tau).abs() / tau < 0.1, "{vmax}");
        assert!((wmax - tau * tau).abs() / (tau * tau) < 0.1, "{wmax}");
        let b = fit_kinematic_bound(&[s]).unwrap();
        assert!((b.max_speed[0] - tau).abs() / tau < 0.1);
        b.validate().unwrap();
    }

    #[test]
    fn envelope_covers_every_pair() {
        let frames: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let t = i as f64 / 8.0;
                vec![(1.3 * t).sin() * t.cos(), (0.7 * t * t).sin()]
            })
            .collect();
        let s = seq(frames, 8.0);
        let b = fit_kinematic_bound(std::slice::from_ref(&s)).unwrap();
        let d = finite_differences(&s);
        for (w, v) in d.acceleration.iter().zip(&d.velocity[1..]) {
            assert!(max_abs(w) <= b.accel_limit(max_abs(v)) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(fit_kinematic_bound(&[seq(vec![vec![0.0], vec![1.0]], 8.0)]).is_err());
        // 3 frames give one pair, below the minimum sample count.
        assert!(fit_kinematic_bound(&[seq(vec![vec![0.0]; 3], 8.0)]).is_err());
        assert!(fit_kinematic_bound::<f64>(&[]).is_err());
    }
}
