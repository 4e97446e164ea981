use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{InteractionWindow, Recording};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Per-feature min-max scaling over the `2d` window features
/// (agent coordinates first, then partner coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
    /// Zero-range features; these map to the constant 0.5.
    pub degenerate: Vec<bool>,
}

impl<T: Real> ScaleParams<T> {
    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self, k: usize, x: T) -> T {
        if self.degenerate[k] {
            T::c(0.5)
        } else {
            (x - self.min[k]) / (self.max[k] - self.min[k])
        }
    }

    pub fn unscale(&self, k: usize, y: T) -> T {
        if self.degenerate[k] {
            self.min[k]
        } else {
            self.min[k] + y * (self.max[k] - self.min[k])
        }
    }

    pub fn apply(&self, w: &InteractionWindow<T>) -> Result<InteractionWindow<T>> {
        if 2 * w.dim() != self.n_features() {
            return Err(invalid(format!(
                "window has {} features, scale params have {}",
                2 * w.dim(),
                self.n_features()
            )));
        }
        let mut out = w.clone();
        for t in 0..w.len() {
            for k in 0..self.n_features() {
                *out.feature_mut(t, k) = self.scale(k, w.feature(t, k));
            }
        }
        Ok(out)
    }

    pub fn invert(&self, w: &InteractionWindow<T>) -> InteractionWindow<T> {
        let mut out = w.clone();
        for t in 0..w.len() {
            for k in 0..self.n_features() {
                *out.feature_mut(t, k) = self.unscale(k, w.feature(t, k));
            }
        }
        out
    }
}

/// Min-max scaling to [0, 1] fitted on the whole list.
pub fn normalize01<T: Real>(
    windows: &[InteractionWindow<T>],
) -> Result<(Vec<InteractionWindow<T>>, ScaleParams<T>)> {
    let first = windows.first().ok_or_else(|| invalid("no windows to normalize"))?;
    let n_feat = 2 * first.dim();
    let mut min = vec![T::infinity(); n_feat];
    let mut max = vec![T::neg_infinity(); n_feat];
    for w in windows {
        if 2 * w.dim() != n_feat {
            return Err(invalid("windows have differing pose dimensions"));
        }
        for t in 0..w.len() {
            for k in 0..n_feat {
                let v = w.feature(t, k);
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
    }
    let degenerate = min.iter().zip(&max).map(|(a, b)| !(b > a)).collect();
    let params = ScaleParams { min, max, degenerate };
    let scaled = windows.iter().map(|w| params.apply(w)).collect::<Result<_>>()?;
    Ok((scaled, params))
}

/// Temporal jitter (whole-window shift with edge clamping) followed by
/// per-coordinate Gaussian noise. Deterministic per seed; label kept.
pub fn augment<T: Real>(
    window: &InteractionWindow<T>,
    temporal_jitter_frames: usize,
    spatial_noise_sigma: T,
    rng_seed: u64,
) -> Result<InteractionWindow<T>> {
    let len = window.len();
    if 2 * temporal_jitter_frames >= len {
        return Err(invalid(format!(
            "temporal jitter {temporal_jitter_frames} must be below half the window length {len}"
        )));
    }
    if !(spatial_noise_sigma >= T::zero()) {
        return Err(invalid("noise sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let j = temporal_jitter_frames as i64;
    let shift = if j > 0 { rng.random_range(-j..=j) } else { 0 };
    let src = |t: usize| (t as i64 + shift).clamp(0, len as i64 - 1) as usize;
    let mut out = window.clone();
    for t in 0..len {
        out.agent[t] = window.agent[src(t)].clone();
        out.partner[t] = window.partner[src(t)].clone();
    }
    if spatial_noise_sigma > T::zero() {
        let normal = Normal::new(0.0, spatial_noise_sigma.as_f64())
            .map_err(|e| invalid(e.to_string()))?;
        for frame in out.agent.iter_mut().chain(out.partner.iter_mut()) {
            for v in frame.iter_mut() {
                *v = *v + T::c(normal.sample(&mut rng));
            }
        }
    }
    Ok(out)
}

/// Fake window: the partner segment at `start` paired with the agent's own
/// motion from `start + offset`.
pub fn shifted_window<T: Real>(
    source: &Recording<T>,
    start: usize,
    len: usize,
    offset: i64,
) -> Option<InteractionWindow<T>> {
    let shifted = start as i64 + offset;
    if shifted < 0 || shifted as usize + len > source.len() || start + len > source.len() {
        return None;
    }
    let s = shifted as usize;
    Some(InteractionWindow {
        agent: source.agent.frames[s..s + len].to_vec(),
        partner: source.partner.frames[start..start + len].to_vec(),
        label: Some(false),
        origin: Some(start),
    })
}

#[derive(Debug, Clone)]
pub struct NegativeSamples<T> {
    pub windows: Vec<InteractionWindow<T>>,
    /// Real windows for which no valid shift existed.
    pub skipped: usize,
}

/// One fake per real window: the agent segment is replaced by the agent's
/// motion at a random offset of at least `shift_min` frames (either
/// direction); the partner segment is untouched.
pub fn negative_sample<T: Real>(
    source: &Recording<T>,
    real_windows: &[InteractionWindow<T>],
    shift_min: usize,
    rng_seed: u64,
) -> Result<NegativeSamples<T>> {
    if shift_min == 0 {
        return Err(invalid("shift_min must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = source.len() as i64;
    let mut windows = Vec::with_capacity(real_windows.len());
    let mut skipped = 0;
    for w in real_windows {
        let len = w.len();
        if shift_min < len {
            return Err(invalid(format!(
                "shift_min {shift_min} is below the window length {len}"
            )));
        }
        let Some(start) = w.origin else {
            return Err(invalid("real window has no origin in the source recording"));
        };
        let start = start as i64;
        let last_start = n - len as i64;
        let m = shift_min as i64;
        // Valid offsets: [-start, -m] ∪ [m, last_start - start].
        let below = (start - m + 1).max(0);
        let above = (last_start - start - m + 1).max(0);
        if below + above == 0 {
            skipped += 1;
            continue;
        }
        let pick = rng.random_range(0..below + above);
        let offset = if pick < below { -m - pick } else { m + (pick - below) };
        let fake = shifted_window(source, start as usize, len, offset)
            .expect("offset chosen within bounds");
        windows.push(fake);
    }
    Ok(NegativeSamples { windows, skipped })
}
