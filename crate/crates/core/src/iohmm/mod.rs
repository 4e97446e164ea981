//! Input-output hidden Markov model with binary emissions.
//!
//! The initial state distribution and every transition row are multinomial
//! logistic regressions on the action feature `a(t)`; emission `P(o = 1 | s_i)`
//! is a per-state sigmoid. All sequence math runs on normalized (scaled)
//! forward/backward messages so long sequences never underflow.

mod em;
mod inference;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{dot, sigmoid, softmax, Real};

pub use em::{em_fit, em_fit_once, em_fit_restarts, EmConfig, ExpectedStats, TrainingTrace};
pub use inference::{forward_backward, Posteriors};

/// `θ = (θ_IN, θ_TR, θ_EM)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoHmmParams<T> {
    pub n_states: usize,
    /// Length of `a(t)`, bias included.
    pub action_dim: usize,
    /// `n_states × action_dim`; row `i` scores starting in state `i`.
    pub theta_in: Vec<Vec<T>>,
    /// `theta_tr[i][j]` scores moving from state `i` to state `j`.
    pub theta_tr: Vec<Vec<Vec<T>>>,
    pub theta_em: Vec<T>,
}

impl<T: Real> IoHmmParams<T> {
    pub fn zeros(n_states: usize, action_dim: usize) -> Self {
        IoHmmParams {
            n_states,
            action_dim,
            theta_in: vec![vec![T::zero(); action_dim]; n_states],
            theta_tr: vec![vec![vec![T::zero(); action_dim]; n_states]; n_states],
            theta_em: vec![T::zero(); n_states],
        }
    }

    /// Gaussian initialization with standard deviation `scale`.
    pub fn random(n_states: usize, action_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale.max(0.0)).expect("finite scale");
        let mut draw = || T::c(normal.sample(&mut rng));
        let mut p = Self::zeros(n_states, action_dim);
        for row in p.theta_in.iter_mut() {
            row.iter_mut().for_each(|v| *v = draw());
        }
        for m in p.theta_tr.iter_mut() {
            for row in m.iter_mut() {
                row.iter_mut().for_each(|v| *v = draw());
            }
        }
        p.theta_em.iter_mut().for_each(|v| *v = draw());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (s, d) = (self.n_states, self.action_dim);
        if s == 0 || d == 0 {
            return Err(invalid("n_states and action_dim must be positive"));
        }
        let shape_ok = self.theta_in.len() == s
            && self.theta_in.iter().all(|r| r.len() == d)
            && self.theta_tr.len() == s
            && self
                .theta_tr
                .iter()
                .all(|m| m.len() == s && m.iter().all(|r| r.len() == d))
            && self.theta_em.len() == s;
        if !shape_ok {
            return Err(Error::ShapeMismatch {
                expected: format!("{s} states × {d} features"),
                got: "inconsistent parameter arrays".into(),
            });
        }
        let finite = self.theta_in.iter().flatten().all(|v| v.is_finite())
            && self.theta_tr.iter().flatten().flatten().all(|v| v.is_finite())
            && self.theta_em.iter().all(|v| v.is_finite());
        if !finite {
            return Err(invalid("parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn check_action(&self, a: &[T]) -> Result<()> {
        if a.len() != self.action_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("action feature of length {}", self.action_dim),
                got: a.len().to_string(),
            });
        }
        Ok(())
    }

    /// `P(s(1) = i | a(1))`, softmax over `θ_IN^i · a(1)`.
    pub fn initial_prob(&self, a1: &[T]) -> Vec<T> {
        let logits: Vec<T> = self.theta_in.iter().map(|row| dot(row, a1)).collect();
        softmax(&logits)
    }

    /// `P(s(t) = j | s(t-1) = from, a(t))`, softmax over `θ_TR^{from,j} · a(t)`.
    pub fn transition_prob(&self, from: usize, a_t: &[T]) -> Vec<T> {
        let logits: Vec<T> = self.theta_tr[from].iter().map(|row| dot(row, a_t)).collect();
        softmax(&logits)
    }

    /// Row-stochastic matrix of all transition rows under `a_t`.
    pub fn transition_matrix(&self, a_t: &[T]) -> Vec<Vec<T>> {
        (0..self.n_states).map(|i| self.transition_prob(i, a_t)).collect()
    }

    /// `P(o = 1 | s_i)`.
    pub fn emission_prob(&self, state: usize) -> T {
        sigmoid(self.theta_em[state])
    }

    /// `P(o | s_i)` for a binary observation.
    pub fn observation_prob(&self, state: usize, o: bool) -> T {
        if o {
            sigmoid(self.theta_em[state])
        } else {
            sigmoid(-self.theta_em[state])
        }
    }

    fn check_sequence(&self, obs: &[bool], actions: &[Vec<T>]) -> Result<()> {
        if obs.len() != actions.len() {
            return Err(invalid(format!(
                "{} observations but {} actions",
                obs.len(),
                actions.len()
            )));
        }
        if obs.is_empty() {
            return Err(invalid("empty sequence"));
        }
        actions.iter().try_for_each(|a| self.check_action(a))
    }

    /// `ln L(θ, O, A)` via the scaled forward recursion.
    pub fn log_likelihood(&self, obs: &[bool], actions: &[Vec<T>]) -> Result<T> {
        self.check_sequence(obs, actions)?;
        let mut belief = Belief::start(self, &actions[0], obs[0])?;
        for (a, &o) in actions.iter().zip(obs).skip(1) {
            belief = forward_update(self, &belief, a, o)?;
        }
        Ok(belief.log_evidence)
    }

    /// Draws latent states and observations for the given action sequence.
    pub fn sample(&self, actions: &[Vec<T>], seed: u64) -> (Vec<usize>, Vec<bool>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |p: &[T]| {
            let u = T::c(rng.random::<f64>());
            let mut acc = T::zero();
            for (i, &v) in p.iter().enumerate() {
                acc = acc + v;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut states = Vec::with_capacity(actions.len());
        let mut obs = Vec::with_capacity(actions.len());
        for (t, a) in actions.iter().enumerate() {
            let s = if t == 0 {
                draw(&self.initial_prob(a))
            } else {
                draw(&self.transition_prob(states[t - 1], a))
            };
            let e = self.emission_prob(s);
            obs.push(draw(&[T::one() - e, e]) == 1);
            states.push(s);
        }
        (states, obs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}

/// Filtering distribution over latent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief<T> {
    pub probs: Vec<T>,
    /// `ln P(o(1..t) | a(1..t))` accumulated so far.
    #[serde(default)]
    pub log_evidence: T,
}

impl<T: Real> Belief<T> {
    pub fn uniform(n_states: usize) -> Self {
        Belief {
            probs: vec![T::one() / T::from_usize_lossy(n_states); n_states],
            log_evidence: T::zero(),
        }
    }

    /// Prior from the initial model, before any observation.
    pub fn prior(params: &IoHmmParams<T>, a1: &[T]) -> Self {
        Belief {
            probs: params.initial_prob(a1),
            log_evidence: T::zero(),
        }
    }

    /// Posterior after the first step: initial model corrected by `o(1)`.
    pub fn start(params: &IoHmmParams<T>, a1: &[T], o1: bool) -> Result<Self> {
        params.check_action(a1)?;
        let prior = params.initial_prob(a1);
        correct(params, prior, o1, T::zero())
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn is_valid(&self) -> bool {
        let sum: T = self.probs.iter().copied().sum();
        self.probs.iter().all(|&p| p >= T::zero() && p.is_finite())
            && (sum - T::one()).abs() <= T::c(1e-9).max(T::epsilon() * T::c(16.0))
    }
}

fn correct<T: Real>(
    params: &IoHmmParams<T>,
    predicted: Vec<T>,
    o: bool,
    log_evidence: T,
) -> Result<Belief<T>> {
    let mut post: Vec<T> = predicted
        .iter()
        .enumerate()
        .map(|(i, &p)| p * params.observation_prob(i, o))
        .collect();
    let norm: T = post.iter().copied().sum();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::DegenerateEvidence);
    }
    post.iter_mut().for_each(|p| *p = *p / norm);
    Ok(Belief {
        probs: post,
        log_evidence: log_evidence + norm.ln(),
    })
}

/// Propagates the belief one step through the transition model, without
/// observing anything.
pub fn predict<T: Real>(params: &IoHmmParams<T>, probs: &[T], a_t: &[T]) -> Vec<T> {
    let mut next = vec![T::zero(); params.n_states];
    for (i, &p) in probs.iter().enumerate() {
        if p == T::zero() {
            continue;
        }
        for (j, q) in params.transition_prob(i, a_t).into_iter().enumerate() {
            next[j] = next[j] + p * q;
        }
    }
    next
}

/// One filtering step: predict through the transition model under `a_t`, then
/// correct on `o_t`.
pub fn forward_update<T: Real>(
    params: &IoHmmParams<T>,
    belief: &Belief<T>,
    a_t: &[T],
    o_t: bool,
) -> Result<Belief<T>> {
    params.check_action(a_t)?;
    if belief.n_states() != params.n_states {
        return Err(Error::ShapeMismatch {
            expected: format!("belief over {} states", params.n_states),
            got: belief.n_states().to_string(),
        });
    }
    let predicted = predict(params, &belief.probs, a_t);
    correct(params, predicted, o_t, belief.log_evidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_with_logits(in_logits: (f64, f64)) -> IoHmmParams<f64> {
        let mut p = IoHmmParams::zeros(2, 1);
        p.theta_in[0][0] = in_logits.0;
        p.theta_in[1][0] = in_logits.1;
        p
    }

    #[test]
    fn zero_params_give_uniform_distributions() {
        let p = IoHmmParams::<f64>::zeros(4, 3);
        let a = [0.3, -1.0, 1.0];
        for v in p.initial_prob(&a).into_iter().chain(p.transition_prob(2, &a)) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_prob_matches_hand_evaluation() {
        let p = two_state_with_logits((1.0, 0.0));
        let pi = p.initial_prob(&[1.0]);
        let e = std::f64::consts::E;
        assert!((pi[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((pi[0] - 0.7311).abs() < 1e-4);
        assert!((pi[1] - 0.2689).abs() < 1e-4);
        let shifted = two_state_with_logits((1.0 + 7.5, 7.5)).initial_prob(&[1.0]);
        for (a, b) in pi.iter().zip(&shifted) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn transition_prob_matches_hand_evaluation() {
        let mut p = IoHmmParams::<f64>::zeros(2, 1);
        p.theta_tr[1][0][0] = 2f64.ln();
        let row = p.transition_prob(1, &[1.0]);
        assert!((row[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((row[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.transition_prob(0, &[1.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn transition_rows_are_distributions() {
        let mut worst = 0.0f64;
        for seed in 0..10_000u64 {
            let p = IoHmmParams::<f64>::random(3, 4, 3.0, seed);
            let a: Vec<f64> = (0..4).map(|k| ((seed * 7 + k) as f64).sin() * 5.0).collect();
            for i in 0..3 {
                let row = p.transition_prob(i, &a);
                assert!(row.iter().all(|&v| v >= 0.0));
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn emission_is_sigmoid() {
        let mut p = IoHmmParams::<f64>::zeros(3, 1);
        p.theta_em = vec![0.0, 2.0, -2.0];
        assert_eq!(p.emission_prob(0), 0.5);
        assert!((p.emission_prob(1) - 0.8808).abs() < 1e-4);
        assert!((p.emission_prob(2) - 0.1192).abs() < 1e-4);
        assert!((p.emission_prob(1) + p.emission_prob(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_state_likelihood_collapses() {
        let p = IoHmmParams::<f64>::zeros(1, 2);
        let acts = vec![vec![0.1, 1.0], vec![5.0, 1.0], vec![-3.0, 1.0]];
        let ll = p.log_likelihood(&[true, false, true], &acts).unwrap();
        assert!((ll + 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn flat_emissions_factor_out() {
        let mut p = IoHmmParams::<f64>::random(3, 2, 2.0, 4);
        p.theta_em = vec![0.0; 3];
        let acts: Vec<Vec<f64>> = (0..7).map(|t| vec![t as f64 * 0.7 - 2.0, 1.0]).collect();
        let obs = [true, true, false, true, false, false, true];
        let ll = p.log_likelihood(&obs, &acts).unwrap();
        assert!((ll - 7.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = IoHmmParams::<f64>::zeros(2, 1);
        assert!(p.log_likelihood(&[true, false], &[vec![1.0]]).is_err());
        assert!(p.log_likelihood(&[], &[]).is_err());
        assert!(p.log_likelihood(&[true], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn one_bayes_step_by_hand() {
        let mut p = IoHmmParams::<f64>::zeros(2, 1);
        p.theta_em = vec![(0.9f64 / 0.1).ln(), (0.1f64 / 0.9).ln()];
        let b = forward_update(&p, &Belief::uniform(2), &[1.0], true).unwrap();
        assert!((b.probs[0] - 0.9).abs() < 1e-12);
        assert!((b.probs[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_model_keeps_uniform_belief() {
        let p = IoHmmParams::<f64>::zeros(3, 2);
        let mut b = Belief::uniform(3);
        for t in 0..50 {
            b = forward_update(&p, &b, &[t as f64, 1.0], t % 3 == 0).unwrap();
            for &v in &b.probs {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impossible_observation_is_degenerate() {
        let mut p = IoHmmParams::<f32>::zeros(1, 1);
        p.theta_em = vec![200.0];
        let err = forward_update(&p, &Belief::uniform(1), &[1.0], false).unwrap_err();
        assert!(matches!(err, Error::DegenerateEvidence));
    }

    #[test]
    fn params_json_fields() {
        let p = IoHmmParams::<f64>::zeros(2, 1);
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["n_states", "action_dim", "theta_in", "theta_tr", "theta_em"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
