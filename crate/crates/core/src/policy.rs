//! Free-energy action selection and the two baseline motion generators.
//!
//! A candidate's free energy is `w_e·Σ H(p_j) + w_p·Σ -Σ_i p_j(i) ln P(o* | s_i)`
//! over the belief rolled forward through the transition model. `w_p = 0`
//! leaves the entropy-only form.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::iohmm::{predict, Belief, IoHmmParams};
use crate::roadmap::{sample_sequences_from, sequence_to_actions, ActionSequence, ActionSource, Roadmap};
use crate::scalar::{entropy, Real};
use crate::signal::PoseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FepConfig {
    pub w_epistemic: f64,
    pub w_pragmatic: f64,
    pub horizon: usize,
    pub candidates: usize,
    pub preferred: bool,
}

impl Default for FepConfig {
    fn default() -> Self {
        FepConfig {
            w_epistemic: 1.0,
            w_pragmatic: 1.0,
            horizon: 8,
            candidates: 32,
            preferred: true,
        }
    }
}

impl FepConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.w_epistemic) || !ok(self.w_pragmatic) || self.w_epistemic + self.w_pragmatic <= 0.0 {
            return Err(invalid("free-energy weights must be nonnegative, not both zero"));
        }
        if self.horizon == 0 || self.candidates == 0 {
            return Err(invalid("horizon and candidate count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ScoredCandidate<T> {
    pub sequence: ActionSequence<T>,
    pub free_energy: T,
    pub entropy: Vec<T>,
    pub pragmatic: Vec<T>,
}

/// Belief propagated through the transition model under each action in turn.
pub fn predict_state_rollout<T: Real>(
    params: &IoHmmParams<T>,
    belief: &Belief<T>,
    actions: &[Vec<T>],
) -> Vec<Vec<T>> {
    let mut p = belief.probs.clone();
    actions
        .iter()
        .map(|a| {
            p = predict(params, &p, a);
            p.clone()
        })
        .collect()
}

/// `ln sigmoid(x)` without underflow.
fn log_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn free_energy<T: Real>(
    params: &IoHmmParams<T>,
    belief: &Belief<T>,
    candidate: ActionSequence<T>,
    cfg: &FepConfig,
) -> Result<ScoredCandidate<T>> {
    if candidate.len() != cfg.horizon {
        return Err(invalid(format!(
            "candidate has {} steps, horizon is {}",
            candidate.len(),
            cfg.horizon
        )));
    }
    if belief.n_states() != params.n_states {
        return Err(Error::ShapeMismatch {
            expected: format!("belief over {} states", params.n_states),
            got: belief.n_states().to_string(),
        });
    }
    let actions = sequence_to_actions(&candidate);
    for a in &actions {
        params.check_action(a)?;
    }
    let surprisal: Vec<T> = params
        .theta_em
        .iter()
        .map(|&th| -log_sigmoid(if cfg.preferred { th } else { -th }))
        .collect();
    let rollout = predict_state_rollout(params, belief, &actions);
    let entropy: Vec<T> = rollout.iter().map(|p| entropy(p)).collect();
    let pragmatic: Vec<T> = rollout
        .iter()
        .map(|p| p.iter().zip(&surprisal).map(|(&pi, &s)| pi * s).sum())
        .collect();
    let free_energy = T::c(cfg.w_epistemic) * entropy.iter().copied().sum::<T>()
        + T::c(cfg.w_pragmatic) * pragmatic.iter().copied().sum::<T>();
    Ok(ScoredCandidate {
        sequence: candidate,
        free_energy,
        entropy,
        pragmatic,
    })
}

/// Index of the lowest free energy; the first one on ties.
pub fn argmin<T: Real>(scored: &[ScoredCandidate<T>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in scored.iter().enumerate() {
        if best.is_none_or(|b| c.free_energy < scored[b].free_energy) {
            best = Some(i);
        }
    }
    best
}

pub fn select_action<T: Real>(
    params: &IoHmmParams<T>,
    belief: &Belief<T>,
    map: &Roadmap<T>,
    current_node: usize,
    cfg: &FepConfig,
    rng_seed: u64,
) -> Result<(ActionSequence<T>, Vec<ScoredCandidate<T>>)> {
    select_action_from(params, belief, map, current_node, None, cfg, rng_seed)
}

/// [`select_action`] with the previously visited node as velocity context.
pub fn select_action_from<T: Real>(
    params: &IoHmmParams<T>,
    belief: &Belief<T>,
    map: &Roadmap<T>,
    current_node: usize,
    prev_node: Option<usize>,
    cfg: &FepConfig,
    rng_seed: u64,
) -> Result<(ActionSequence<T>, Vec<ScoredCandidate<T>>)> {
    cfg.validate()?;
    let scored = sample_sequences_from(map, current_node, prev_node, cfg.horizon, cfg.candidates, rng_seed)?
        .into_iter()
        .map(|c| free_energy(params, belief, c.with_source(ActionSource::Fep), cfg))
        .collect::<Result<Vec<_>>>()?;
    let best = argmin(&scored).expect("at least one candidate");
    Ok((scored[best].sequence.clone(), scored))
}

pub fn random_prm_motion<T: Real>(
    map: &Roadmap<T>,
    current_node: usize,
    horizon: usize,
    rng_seed: u64,
) -> Result<ActionSequence<T>> {
    random_prm_motion_from(map, current_node, None, horizon, rng_seed)
}

pub fn random_prm_motion_from<T: Real>(
    map: &Roadmap<T>,
    current_node: usize,
    prev_node: Option<usize>,
    horizon: usize,
    rng_seed: u64,
) -> Result<ActionSequence<T>> {
    let mut seqs = sample_sequences_from(map, current_node, prev_node, horizon, 1, rng_seed)?;
    Ok(seqs.remove(0))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Gradient in [-1, 1] at lattice point `i` of coordinate `k`.
fn gradient(seed: u64, k: usize, i: i64) -> f64 {
    let h = splitmix64(splitmix64(seed ^ splitmix64(k as u64)) ^ i as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// 1-D gradient noise in [-1, 1], zero at integers.
pub fn gradient_noise(x: f64, seed: u64, k: usize) -> f64 {
    let i = x.floor();
    let u = x - i;
    let fade = u * u * u * (u * (u * 6.0 - 15.0) + 10.0);
    let i = i as i64;
    let a = gradient(seed, k, i) * u;
    let b = gradient(seed, k, i + 1) * (u - 1.0);
    2.0 * (a + fade * (b - a))
}

/// Idle posture plus per-coordinate gradient noise at `t` seconds; each
/// coordinate stays within `amplitude` of the idle pose.
pub fn perlin_motion<T: Real>(
    idle_pose: &PoseVector<T>,
    amplitude: f64,
    frequency_hz: f64,
    t: f64,
    rng_seed: u64,
) -> Result<PoseVector<T>> {
    if !(amplitude >= 0.0) || !frequency_hz.is_finite() || !t.is_finite() {
        return Err(invalid("perlin motion needs amplitude >= 0 and finite time"));
    }
    Ok(PoseVector(
        idle_pose
            .iter()
            .enumerate()
            .map(|(k, &x)| x + T::c(amplitude * gradient_noise(t * frequency_hz, rng_seed, k)))
            .collect(),
    ))
}

/// `horizon` Perlin postures at `t0 + dt, t0 + 2dt, ...`.
pub fn perlin_sequence<T: Real>(
    idle_pose: &PoseVector<T>,
    amplitude: f64,
    frequency_hz: f64,
    t0: f64,
    dt: f64,
    horizon: usize,
    rng_seed: u64,
) -> Result<ActionSequence<T>> {
    let poses = (1..=horizon)
        .map(|j| perlin_motion(idle_pose, amplitude, frequency_hz, t0 + j as f64 * dt, rng_seed))
        .collect::<Result<_>>()?;
    Ok(ActionSequence {
        nodes: Vec::new(),
        poses,
        source: ActionSource::Perlin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(rows: [[f64; 2]; 2], em: [f64; 2]) -> IoHmmParams<f64> {
        let mut p = IoHmmParams::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                p.theta_tr[i][j] = vec![0.0, rows[i][j].ln()];
            }
        }
        p.theta_em = em.to_vec();
        p
    }

    fn seq(k: usize) -> ActionSequence<f64> {
        ActionSequence {
            nodes: vec![],
            poses: vec![PoseVector(vec![0.3]); k],
            source: ActionSource::Replay,
        }
    }

    fn belief(p: &[f64]) -> Belief<f64> {
        Belief {
            probs: p.to_vec(),
            log_evidence: 0.0,
        }
    }

    #[test]
    fn two_step_rollout_by_hand() {
        let params = two_state([[0.7, 0.3], [0.4, 0.6]], [0.0, 0.0]);
        let actions = vec![vec![0.3, 1.0]; 2];
        let r = predict_state_rollout(&params, &belief(&[1.0, 0.0]), &actions);
        assert!((r[0][0] - 0.7).abs() < 1e-12 && (r[0][1] - 0.3).abs() < 1e-12);
        assert!((r[1][0] - 0.61).abs() < 1e-12 && (r[1][1] - 0.39).abs() < 1e-12);
    }

    #[test]
    fn absorbing_and_uniform_rollouts() {
        let mut sticky = IoHmmParams::zeros(3, 2);
        for i in 0..3 {
            sticky.theta_tr[i][i] = vec![0.0, 40.0];
        }
        let b = belief(&[0.2, 0.5, 0.3]);
        for p in predict_state_rollout(&sticky, &b, &vec![vec![1.0, 1.0]; 6]) {
            for (x, y) in p.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let flat = IoHmmParams::zeros(3, 2);
        for p in predict_state_rollout(&flat, &b, &vec![vec![1.0, 1.0]; 4]) {
            assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn pragmatic_term_by_hand() {
        let params = two_state([[0.7, 0.3], [0.7, 0.3]], [2.0, -2.0]);
        let cfg = FepConfig {
            w_epistemic: 0.0,
            w_pragmatic: 1.0,
            horizon: 1,
            ..Default::default()
        };
        let s = free_energy(&params, &belief(&[0.5, 0.5]), seq(1), &cfg).unwrap();
        let expected = -(0.7 * (1.0 / (1.0 + (-2.0f64).exp())).ln() + 0.3 * (1.0 / (1.0 + 2.0f64.exp())).ln());
        assert!((s.free_energy - expected).abs() < 1e-12);
        // 0.7268 when the emission probabilities are rounded to four digits.
        assert!((s.free_energy - 0.7268).abs() < 1e-3);
    }

    #[test]
    fn entropy_only_extremes() {
        let cfg = FepConfig {
            w_epistemic: 1.0,
            w_pragmatic: 0.0,
            horizon: 1,
            ..Default::default()
        };
        let uniform = IoHmmParams::zeros(2, 2);
        let s = free_energy(&uniform, &belief(&[1.0, 0.0]), seq(1), &cfg).unwrap();
        assert!((s.free_energy - 2.0f64.ln()).abs() < 1e-12);
        let mut certain = IoHmmParams::zeros(2, 2);
        certain.theta_tr[0][0] = vec![0.0, 800.0];
        let s = free_energy(&certain, &belief(&[1.0, 0.0]), seq(1), &cfg).unwrap();
        assert_eq!(s.free_energy, 0.0);
    }

    #[test]
    fn wrong_horizon_is_rejected() {
        let p = IoHmmParams::zeros(2, 2);
        assert!(free_energy(&p, &belief(&[0.5, 0.5]), seq(3), &FepConfig::default()).is_err());
    }

    #[test]
    fn argmin_prefers_first_on_ties() {
        let c = |f: f64| ScoredCandidate {
            sequence: seq(1),
            free_energy: f,
            entropy: vec![],
            pragmatic: vec![],
        };
        assert_eq!(argmin(&[c(1.0), c(0.5), c(0.5)]), Some(1));
        assert_eq!(argmin(&[c(2.0), c(2.0)]), Some(0));
        assert_eq!(argmin::<f64>(&[]), None);
    }

    #[test]
    fn perlin_vanishes_on_lattice_and_is_bounded() {
        let idle = PoseVector(vec![0.1, -0.4, 0.9]);
        for i in -5..20 {
            let t = i as f64 / 0.5;
            assert_eq!(perlin_motion(&idle, 0.3, 0.5, t, 7).unwrap(), idle);
        }
        for i in 0..100_000 {
            let t = i as f64 * 0.0137;
            let p: PoseVector<f64> = perlin_motion(&idle, 0.3, 0.5, t, 7).unwrap();
            for (x, y) in p.iter().zip(idle.iter()) {
                assert!((x - y).abs() <= 0.3 + 1e-12);
            }
        }
        assert_eq!(perlin_motion(&idle, 0.0, 0.5, 3.3, 1).unwrap(), idle);
    }

    #[test]
    fn perlin_is_continuous_and_seeded() {
        let idle = PoseVector(vec![0.0; 4]);
        let dt = 1e-6;
        for i in 0..1000 {
            let t = i as f64 * 0.173;
            let a = perlin_motion(&idle, 0.2, 0.5, t, 3).unwrap();
            let b = perlin_motion(&idle, 0.2, 0.5, t + dt, 3).unwrap();
            // |d noise / dx| <= 2 * (1 + 1.875), x = 0.5 t.
            assert!(a.distance(&b) <= 0.2 * 0.5 * 2.0 * 2.875 * 2.0 * dt);
        }
        let x = perlin_motion(&idle, 0.2, 0.5, 1.3, 3).unwrap();
        assert_eq!(x, perlin_motion(&idle, 0.2, 0.5, 1.3, 3).unwrap());
        assert_ne!(x, perlin_motion(&idle, 0.2, 0.5, 1.3, 4).unwrap());
    }
}
