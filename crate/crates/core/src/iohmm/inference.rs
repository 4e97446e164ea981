use super::IoHmmParams;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smoothed posteriors of one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors<T> {
    /// `gamma[t][i] = P(s(t) = i | O, A)`.
    pub gamma: Vec<Vec<T>>,
    /// `xi[t][i][j] = P(s(t) = i, s(t+1) = j | O, A)` for `t < T - 1`.
    pub xi: Vec<Vec<Vec<T>>>,
    pub log_likelihood: T,
}

/// Scaled forward-backward pass.
pub fn forward_backward<T: Real>(
    params: &IoHmmParams<T>,
    obs: &[bool],
    actions: &[Vec<T>],
) -> Result<Posteriors<T>> {
    params.check_sequence(obs, actions)?;
    let (n, s) = (obs.len(), params.n_states);
    let emit: Vec<Vec<T>> = obs
        .iter()
        .map(|&o| (0..s).map(|i| params.observation_prob(i, o)).collect())
        .collect();
    // trans[t] is the matrix used to enter step t (t ≥ 1).
    let trans: Vec<Vec<Vec<T>>> = actions.iter().map(|a| params.transition_matrix(a)).collect();

    let mut alpha = vec![vec![T::zero(); s]; n];
    let mut scale = vec![T::zero(); n];
    let init = params.initial_prob(&actions[0]);
    for i in 0..s {
        alpha[0][i] = init[i] * emit[0][i];
    }
    scale[0] = normalize(&mut alpha[0])?;
    for t in 1..n {
        for j in 0..s {
            let mut acc = T::zero();
            for i in 0..s {
                acc = acc + alpha[t - 1][i] * trans[t][i][j];
            }
            alpha[t][j] = acc * emit[t][j];
        }
        scale[t] = normalize(&mut alpha[t])?;
    }

    let mut beta = vec![vec![T::one(); s]; n];
    for t in (0..n - 1).rev() {
        for i in 0..s {
            let mut acc = T::zero();
            for j in 0..s {
                acc = acc + trans[t + 1][i][j] * emit[t + 1][j] * beta[t + 1][j];
            }
            beta[t][i] = acc / scale[t + 1];
        }
    }

    let gamma: Vec<Vec<T>> = (0..n)
        .map(|t| {
            let mut g: Vec<T> = (0..s).map(|i| alpha[t][i] * beta[t][i]).collect();
            let z: T = g.iter().copied().sum();
            g.iter_mut().for_each(|v| *v = *v / z);
            g
        })
        .collect();
    let xi: Vec<Vec<Vec<T>>> = (0..n.saturating_sub(1))
        .map(|t| {
            let mut m: Vec<Vec<T>> = (0..s)
                .map(|i| {
                    (0..s)
                        .map(|j| {
                            alpha[t][i] * trans[t + 1][i][j] * emit[t + 1][j] * beta[t + 1][j]
                        })
                        .collect()
                })
                .collect();
            let z: T = m.iter().flatten().copied().sum();
            m.iter_mut().flatten().for_each(|v| *v = *v / z);
            m
        })
        .collect();
    let log_likelihood = scale.iter().map(|c| c.ln()).sum();
    Ok(Posteriors {
        gamma,
        xi,
        log_likelihood,
    })
}

fn normalize<T: Real>(v: &mut [T]) -> Result<T> {
    let z: T = v.iter().copied().sum();
    if !(z > T::zero()) || !z.is_finite() {
        return Err(Error::DegenerateEvidence);
    }
    v.iter_mut().for_each(|x| *x = *x / z);
    Ok(z)
}
