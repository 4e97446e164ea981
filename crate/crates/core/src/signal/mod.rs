//! Pose time series: types, the preprocessing chain (outlier removal,
//! resampling, zero-phase low-pass), interaction windows for the
//! discriminator, and a synthetic interaction generator.
//!
//! Every downstream module consumes plain [`PoseVector`]s. Keypoint files and
//! joint-angle files share one representation; which one a dataset holds is a
//! property of the file, not of the type.

mod filter;
pub mod io;
mod synth;
mod window;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

pub use filter::{lowpass, remove_outliers, resample_linear, ButterworthLowpass, PreprocessConfig};
pub use synth::{gen_synthetic_interaction, SyntheticConfig};
pub use window::{
    augment, negative_sample, normalize01, shifted_window, NegativeSamples, ScaleParams,
};

/// One posture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseVector<T>(pub Vec<T>);

impl<T: Real> PoseVector<T> {
    pub fn zeros(dim: usize) -> Self {
        PoseVector(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn distance(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }
}

impl<T> Deref for PoseVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for PoseVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for PoseVector<T> {
    fn from(v: Vec<T>) -> Self {
        PoseVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// The role the roadmap and the IO-HMM are trained on.
    AgentSide,
    PartnerSide,
}

/// Uniformly sampled pose stream of one person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence<T> {
    pub frames: Vec<PoseVector<T>>,
    pub rate_hz: T,
    pub person: Side,
}

impl<T: Real> PoseSequence<T> {
    pub fn new(frames: Vec<PoseVector<T>>, rate_hz: T, person: Side) -> Result<Self> {
        if frames.is_empty() {
            return Err(invalid("pose sequence has no frames"));
        }
        if !(rate_hz > T::zero()) || !rate_hz.is_finite() {
            return Err(invalid(format!("rate_hz must be positive, got {rate_hz}")));
        }
        let d = frames[0].dim();
        if let Some(i) = frames.iter().position(|f| f.dim() != d) {
            return Err(invalid(format!(
                "frame {i} has dimension {}, expected {d}",
                frames[i].dim()
            )));
        }
        if let Some(i) = frames.iter().position(|f| !f.is_finite()) {
            return Err(invalid(format!("frame {i} has non-finite entries")));
        }
        Ok(PoseSequence {
            frames,
            rate_hz,
            person,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.dim())
    }

    pub fn duration(&self) -> T {
        T::from_usize_lossy(self.len().saturating_sub(1)) / self.rate_hz
    }

    /// Values of coordinate `k` over time.
    pub fn channel(&self, k: usize) -> Vec<T> {
        self.frames.iter().map(|f| f[k]).collect()
    }

    pub(crate) fn with_channels(&self, channels: &[Vec<T>], rate_hz: T) -> Self {
        let n = channels.first().map_or(0, |c| c.len());
        let frames = (0..n)
            .map(|t| PoseVector(channels.iter().map(|c| c[t]).collect()))
            .collect();
        PoseSequence {
            frames,
            rate_hz,
            person: self.person,
        }
    }
}

/// Paired agent/partner streams sharing a clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording<T> {
    pub agent: PoseSequence<T>,
    pub partner: PoseSequence<T>,
}

impl<T: Real> Recording<T> {
    pub fn new(agent: PoseSequence<T>, partner: PoseSequence<T>) -> Result<Self> {
        if agent.len() != partner.len() {
            return Err(invalid(format!(
                "agent has {} frames, partner has {}",
                agent.len(),
                partner.len()
            )));
        }
        if agent.dim() != partner.dim() {
            return Err(invalid("agent and partner dimensions differ"));
        }
        if agent.rate_hz != partner.rate_hz {
            return Err(invalid("agent and partner rates differ"));
        }
        Ok(Recording { agent, partner })
    }

    pub fn len(&self) -> usize {
        self.agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.agent.dim()
    }

    pub fn rate_hz(&self) -> T {
        self.agent.rate_hz
    }

    /// Real interaction window covering frames `start .. start + len`.
    pub fn window(&self, start: usize, len: usize) -> Option<InteractionWindow<T>> {
        if start + len > self.len() {
            return None;
        }
        Some(InteractionWindow {
            agent: self.agent.frames[start..start + len].to_vec(),
            partner: self.partner.frames[start..start + len].to_vec(),
            label: Some(true),
            origin: Some(start),
        })
    }

    /// All real windows of length `len`, starting every `stride` frames.
    pub fn windows(&self, len: usize, stride: usize) -> Vec<InteractionWindow<T>> {
        let stride = stride.max(1);
        (0..)
            .map(|i| i * stride)
            .map_while(|s| self.window(s, len))
            .collect()
    }
}

/// Paired agent/partner segment of `L` frames; the discriminator's input.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionWindow<T> {
    pub agent: Vec<PoseVector<T>>,
    pub partner: Vec<PoseVector<T>>,
    /// `Some(true)` for real interaction, `Some(false)` for a decoupled fake.
    pub label: Option<bool>,
    /// Start frame in the source recording, when known.
    pub origin: Option<usize>,
}

impl<T: Real> InteractionWindow<T> {
    pub fn new(
        agent: Vec<PoseVector<T>>,
        partner: Vec<PoseVector<T>>,
        label: Option<bool>,
    ) -> Result<Self> {
        if agent.len() != partner.len() || agent.is_empty() {
            return Err(invalid(format!(
                "window parts must have equal non-zero length, got {} and {}",
                agent.len(),
                partner.len()
            )));
        }
        Ok(InteractionWindow {
            agent,
            partner,
            label,
            origin: None,
        })
    }

    pub fn len(&self) -> usize {
        self.agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent.is_empty()
    }

    /// Per-person pose dimension `d`.
    pub fn dim(&self) -> usize {
        self.agent.first().map_or(0, |f| f.dim())
    }

    /// Row-major `L × 2d` matrix: agent coordinates then partner coordinates per frame.
    pub fn to_matrix(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len() * 2 * self.dim());
        for (a, p) in self.agent.iter().zip(&self.partner) {
            out.extend_from_slice(a);
            out.extend_from_slice(p);
        }
        out
    }

    /// Value of joint feature `k ∈ [0, 2d)` at frame `t`.
    pub fn feature(&self, t: usize, k: usize) -> T {
        let d = self.dim();
        if k < d {
            self.agent[t][k]
        } else {
            self.partner[t][k - d]
        }
    }

    pub fn feature_mut(&mut self, t: usize, k: usize) -> &mut T {
        let d = self.dim();
        if k < d {
            &mut self.agent[t][k]
        } else {
            &mut self.partner[t][k - d]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> PoseSequence<f64> {
        PoseSequence::new(
            values.iter().map(|&v| PoseVector(vec![v])).collect(),
            8.0,
            Side::AgentSide,
        )
        .unwrap()
    }

    #[test]
    fn rejects_ragged_frames() {
        let frames = vec![PoseVector(vec![0.0, 1.0]), PoseVector(vec![0.0])];
        assert!(PoseSequence::new(frames, 8.0, Side::AgentSide).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(PoseSequence::new(vec![PoseVector(vec![f64::NAN])], 8.0, Side::AgentSide).is_err());
    }

    #[test]
    fn window_matrix_layout() {
        let rec = Recording::new(seq(&[1.0, 2.0, 3.0]), {
            let mut p = seq(&[10.0, 20.0, 30.0]);
            p.person = Side::PartnerSide;
            p
        })
        .unwrap();
        let w = rec.window(1, 2).unwrap();
        assert_eq!(w.to_matrix(), vec![2.0, 20.0, 3.0, 30.0]);
        assert_eq!(w.feature(1, 1), 30.0);
        assert!(rec.window(2, 2).is_none());
        assert_eq!(rec.windows(2, 1).len(), 2);
    }
}
