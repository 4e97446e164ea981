use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{PoseSequence, PoseVector, Side};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Parameters of the synthetic two-person gesture generator.
///
/// The partner produces gesture bursts (Hann-windowed sinusoids over a random
/// subset of coordinates) separated by idle drift. The agent echoes the
/// partner's gestures after `lag_frames` through a fixed signed permutation
/// of coordinates, scaled by the coupling; it also gestures spontaneously,
/// scaled by one minus the coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub rate_hz: f64,
    pub lag_frames: usize,
    pub window_len: usize,
    /// Mean idle gap between bursts, seconds.
    pub mean_gap_s: f64,
    pub burst_len_s: (f64, f64),
    pub burst_freq_hz: (f64, f64),
    pub burst_amplitude: f64,
    /// Stationary standard deviation of the idle drift.
    pub idle_sigma: f64,
    /// Seeds the agent's coordinate mixing, shared by every recording made
    /// with this config.
    pub style_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 8,
            rate_hz: 8.0,
            lag_frames: 4,
            window_len: 24,
            mean_gap_s: 1.5,
            burst_len_s: (1.0, 2.0),
            burst_freq_hz: (0.6, 1.4),
            burst_amplitude: 0.6,
            idle_sigma: 0.03,
            style_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Burst {
    start: usize,
    len: usize,
    freq: f64,
    weights: Vec<f64>,
    phases: Vec<f64>,
}

impl Burst {
    fn add_to(&self, out: &mut [Vec<f64>], amplitude: f64, rate: f64) {
        for i in 0..self.len {
            let t = self.start + i;
            if t >= out.len() {
                break;
            }
            let u = i as f64 / self.len as f64;
            let env = (std::f64::consts::PI * u).sin().powi(2);
            let phase = 2.0 * std::f64::consts::PI * self.freq * i as f64 / rate;
            for (k, v) in out[t].iter_mut().enumerate() {
                *v += amplitude * env * self.weights[k] * (phase + self.phases[k]).sin();
            }
        }
    }
}

fn shape(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let weights = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phases = (0..dim)
        .map(|_| rng.random_range(0.0..2.0 * std::f64::consts::PI))
        .collect();
    (weights, phases)
}

fn burst_schedule(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, n_frames: usize) -> Vec<Burst> {
    let gap = Exp::new(1.0 / cfg.mean_gap_s).expect("positive gap");
    let mut bursts = Vec::new();
    let mut t = gap.sample(rng) * cfg.rate_hz;
    while (t as usize) < n_frames {
        let len_s = rng.random_range(cfg.burst_len_s.0..=cfg.burst_len_s.1);
        let len = ((len_s * cfg.rate_hz).round() as usize).max(2);
        let freq = rng.random_range(cfg.burst_freq_hz.0..=cfg.burst_freq_hz.1);
        let (weights, phases) = shape(rng, cfg.dim);
        bursts.push(Burst {
            start: t as usize,
            len,
            freq,
            weights,
            phases,
        });
        t += len as f64 + gap.sample(rng) * cfg.rate_hz;
    }
    bursts
}

fn idle_drift(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, n_frames: usize) -> Vec<Vec<f64>> {
    let rho: f64 = 0.9;
    let innov = Normal::new(0.0, cfg.idle_sigma * (1.0 - rho * rho).sqrt()).expect("finite sigma");
    let start = Normal::new(0.0, cfg.idle_sigma).expect("finite sigma");
    let mut state: Vec<f64> = (0..cfg.dim).map(|_| start.sample(rng)).collect();
    (0..n_frames)
        .map(|_| {
            let frame = state.clone();
            for s in state.iter_mut() {
                *s = rho * *s + innov.sample(rng);
            }
            frame
        })
        .collect()
}

/// Synthetic agent/partner streams with adjustable coupling in `[0, 1]`.
///
/// Returns `(agent, partner)`. The partner stream depends only on the seed;
/// coupling 0 makes the agent independent of it.
pub fn gen_synthetic_interaction<T: Real>(
    n_frames: usize,
    coupling: f64,
    rng_seed: u64,
    cfg: &SyntheticConfig,
) -> Result<(PoseSequence<T>, PoseSequence<T>)> {
    if n_frames < 2 * cfg.window_len {
        return Err(invalid(format!(
            "need at least {} frames, got {n_frames}",
            2 * cfg.window_len
        )));
    }
    if !(0.0..=1.0).contains(&coupling) {
        return Err(invalid(format!("coupling must lie in [0, 1], got {coupling}")));
    }
    if cfg.dim == 0 || !(cfg.rate_hz > 0.0) {
        return Err(invalid("synthetic config needs dim > 0 and rate > 0"));
    }
    // Independent streams: partner, agent idle drift and spontaneous bursts.
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(k);
        rng
    };
    let mut partner_rng = stream(1);
    let mut own_rng = stream(3);

    let mut partner = idle_drift(&mut partner_rng, cfg, n_frames);
    let mut gestures = vec![vec![0.0; cfg.dim]; n_frames];
    for b in burst_schedule(&mut partner_rng, cfg, n_frames) {
        b.add_to(&mut gestures, cfg.burst_amplitude, cfg.rate_hz);
    }
    for (p, g) in partner.iter_mut().zip(&gestures) {
        p.iter_mut().zip(g).for_each(|(p, g)| *p += g);
    }

    // The agent mirrors the partner's gestures through a fixed signed
    // permutation of coordinates.
    let mut style_rng = ChaCha8Rng::seed_from_u64(cfg.style_seed);
    style_rng.set_stream(2);
    let mut perm: Vec<usize> = (0..cfg.dim).collect();
    perm.shuffle(&mut style_rng);
    let signs: Vec<f64> = (0..cfg.dim)
        .map(|_| if style_rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut agent = idle_drift(&mut own_rng, cfg, n_frames);
    for t in cfg.lag_frames..n_frames {
        let g = &gestures[t - cfg.lag_frames];
        for (k, a) in agent[t].iter_mut().enumerate() {
            *a += coupling * signs[k] * g[perm[k]];
        }
    }
    for b in burst_schedule(&mut own_rng, cfg, n_frames) {
        b.add_to(&mut agent, (1.0 - coupling) * cfg.burst_amplitude, cfg.rate_hz);
    }

    let to_seq = |frames: Vec<Vec<f64>>, side| {
        PoseSequence::new(
            frames
                .into_iter()
                .map(|f| PoseVector(f.into_iter().map(T::c).collect()))
                .collect(),
            T::c(cfg.rate_hz),
            side,
        )
    };
    Ok((to_seq(agent, Side::AgentSide)?, to_seq(partner, Side::PartnerSide)?))
}
