use serde::{Deserialize, Serialize};

use super::inference::{forward_backward, Posteriors};
use super::IoHmmParams;
use crate::error::{invalid, Result};
use crate::scalar::{softmax, dot, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once `|Δ ln L|` falls below this.
    pub tol: f64,
    /// Gradient-ascent steps per M-step for the logistic blocks.
    pub inner_steps: usize,
    pub learning_rate: f64,
    /// Standard deviation of the random initial parameters.
    pub init_scale: f64,
    pub restarts: usize,
    /// Bound on `|θ_EM|`.
    pub emission_clamp: f64,
    /// A state whose total posterior mass falls below this fraction of `T` is
    /// starved and keeps its emission parameter.
    pub starvation: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 100,
            tol: 1e-6,
            inner_steps: 20,
            learning_rate: 0.1,
            init_scale: 0.1,
            restarts: 3,
            emission_clamp: 10.0,
            starvation: 1e-6,
        }
    }
}

/// Learning curve of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// `ln L` of the initial parameters and after every M-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub starved_states: Vec<usize>,
    pub seed: u64,
}

impl TrainingTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Largest relative drop between consecutive iterations (0 when monotone).
    pub fn worst_relative_drop(&self) -> f64 {
        self.log_likelihood
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Posterior weights the M-step optimizes against.
///
/// Holds the terms of the expected complete-data log-likelihood
/// `Q(θ) = Σ γ_1(i) ln π_i(a_1) + Σ_t Σ_ij ξ_t(i,j) ln P(j | i, a_t) + Σ_t Σ_i γ_t(i) ln P(o_t | i)`.
pub struct ExpectedStats<'a, T> {
    sequences: Vec<(&'a [bool], &'a [Vec<T>])>,
    posteriors: Vec<Posteriors<T>>,
}

impl<'a, T: Real> ExpectedStats<'a, T> {
    pub fn new(sequences: Vec<(&'a [bool], &'a [Vec<T>])>, posteriors: Vec<Posteriors<T>>) -> Self {
        ExpectedStats {
            sequences,
            posteriors,
        }
    }

    /// E-step over every sequence.
    pub fn compute(
        params: &IoHmmParams<T>,
        sequences: &[(&'a [bool], &'a [Vec<T>])],
    ) -> Result<Self> {
        let posteriors = sequences
            .iter()
            .map(|(o, a)| forward_backward(params, o, a))
            .collect::<Result<_>>()?;
        Ok(Self::new(sequences.to_vec(), posteriors))
    }

    pub fn log_likelihood(&self) -> T {
        self.posteriors.iter().map(|p| p.log_likelihood).sum()
    }

    fn n_transitions(&self) -> usize {
        self.sequences.iter().map(|(o, _)| o.len() - 1).sum()
    }

    pub fn q_initial(&self, theta_in: &[Vec<T>]) -> T {
        self.sequences
            .iter()
            .zip(&self.posteriors)
            .map(|((_, a), post)| {
                let logits: Vec<T> = theta_in.iter().map(|r| dot(r, &a[0])).collect();
                let lse = crate::scalar::log_sum_exp(&logits);
                post.gamma[0]
                    .iter()
                    .zip(&logits)
                    .map(|(&g, &l)| g * (l - lse))
                    .sum::<T>()
            })
            .sum()
    }

    pub fn grad_initial(&self, theta_in: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut grad = vec![vec![T::zero(); theta_in[0].len()]; theta_in.len()];
        for ((_, a), post) in self.sequences.iter().zip(&self.posteriors) {
            let logits: Vec<T> = theta_in.iter().map(|r| dot(r, &a[0])).collect();
            let pi = softmax(&logits);
            let mass: T = post.gamma[0].iter().copied().sum();
            for (k, g) in grad.iter_mut().enumerate() {
                let w = post.gamma[0][k] - pi[k] * mass;
                for (gv, &av) in g.iter_mut().zip(&a[0]) {
                    *gv = *gv + w * av;
                }
            }
        }
        grad
    }

    pub fn q_transition(&self, theta_tr: &[Vec<Vec<T>>]) -> T {
        let mut q = T::zero();
        for ((_, a), post) in self.sequences.iter().zip(&self.posteriors) {
            for (t, xi) in post.xi.iter().enumerate() {
                let at = &a[t + 1];
                for (i, row) in theta_tr.iter().enumerate() {
                    let logits: Vec<T> = row.iter().map(|r| dot(r, at)).collect();
                    let lse = crate::scalar::log_sum_exp(&logits);
                    for (j, &l) in logits.iter().enumerate() {
                        q = q + xi[i][j] * (l - lse);
                    }
                }
            }
        }
        q
    }

    pub fn grad_transition(&self, theta_tr: &[Vec<Vec<T>>]) -> Vec<Vec<Vec<T>>> {
        let s = theta_tr.len();
        let d = theta_tr[0][0].len();
        let mut grad = vec![vec![vec![T::zero(); d]; s]; s];
        for ((_, a), post) in self.sequences.iter().zip(&self.posteriors) {
            for (t, xi) in post.xi.iter().enumerate() {
                let at = &a[t + 1];
                for i in 0..s {
                    let logits: Vec<T> = theta_tr[i].iter().map(|r| dot(r, at)).collect();
                    let p = softmax(&logits);
                    let mass: T = xi[i].iter().copied().sum();
                    for k in 0..s {
                        let w = xi[i][k] - p[k] * mass;
                        for (gv, &av) in grad[i][k].iter_mut().zip(at) {
                            *gv = *gv + w * av;
                        }
                    }
                }
            }
        }
        grad
    }

    pub fn q_emission(&self, theta_em: &[T]) -> T {
        let mut q = T::zero();
        for ((o, _), post) in self.sequences.iter().zip(&self.posteriors) {
            for (t, g) in post.gamma.iter().enumerate() {
                for (i, &w) in g.iter().enumerate() {
                    let th = if o[t] { theta_em[i] } else { -theta_em[i] };
                    // ln σ(th) = -ln(1 + e^{-th})
                    q = q - w * softplus(-th);
                }
            }
        }
        q
    }

    /// Full `Q(θ)`.
    pub fn expected_complete_loglik(&self, params: &IoHmmParams<T>) -> T {
        self.q_initial(&params.theta_in)
            + self.q_transition(&params.theta_tr)
            + self.q_emission(&params.theta_em)
    }

    /// Closed-form emission update. Returns the starved states.
    fn update_emissions(&self, params: &mut IoHmmParams<T>, clamp: T, starvation: T) -> Vec<usize> {
        let s = params.n_states;
        let mut num = vec![T::zero(); s];
        let mut den = vec![T::zero(); s];
        let mut total = 0usize;
        for ((o, _), post) in self.sequences.iter().zip(&self.posteriors) {
            total += o.len();
            for (t, g) in post.gamma.iter().enumerate() {
                for i in 0..s {
                    den[i] = den[i] + g[i];
                    if o[t] {
                        num[i] = num[i] + g[i];
                    }
                }
            }
        }
        let mut starved = Vec::new();
        for i in 0..s {
            if den[i] < starvation * T::from_usize_lossy(total) {
                starved.push(i);
                continue;
            }
            let neg = (den[i] - num[i]).max(T::zero());
            let logit = num[i].ln() - neg.ln();
            params.theta_em[i] = if logit.is_nan() { T::zero() } else { logit.max(-clamp).min(clamp) };
        }
        starved
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Gradient ascent with step halving whenever the objective would drop, so
/// the block objective never decreases.
fn ascend<T: Real, P: Clone>(
    start: P,
    steps: usize,
    learning_rate: T,
    objective: impl Fn(&P) -> T,
    gradient: impl Fn(&P) -> P,
    step: impl Fn(&P, &P, T) -> P,
) -> P {
    let mut current = start;
    let mut value = objective(&current);
    let mut lr = learning_rate;
    for _ in 0..steps {
        let g = gradient(&current);
        loop {
            let candidate = step(&current, &g, lr);
            let v = objective(&candidate);
            if v >= value {
                current = candidate;
                value = v;
                break;
            }
            lr = lr / T::c(2.0);
            if lr < T::c(1e-12) {
                return current;
            }
        }
    }
    current
}

fn axpy2<T: Real>(x: &[Vec<T>], g: &[Vec<T>], scale: T) -> Vec<Vec<T>> {
    x.iter()
        .zip(g)
        .map(|(r, gr)| r.iter().zip(gr).map(|(&a, &b)| a + scale * b).collect())
        .collect()
}

/// One generalized-EM run from a seeded random start.
pub fn em_fit_once<T: Real>(
    sequences: &[(&[bool], &[Vec<T>])],
    n_states: usize,
    cfg: &EmConfig,
    seed: u64,
) -> Result<(IoHmmParams<T>, TrainingTrace)> {
    let action_dim = check_inputs(sequences, n_states)?;
    let mut params = IoHmmParams::random(n_states, action_dim, cfg.init_scale, seed);
    let lr = T::c(cfg.learning_rate);
    let clamp = T::c(cfg.emission_clamp);
    let starvation = T::c(cfg.starvation);
    let n_init = T::from_usize_lossy(sequences.len());

    let mut trace = TrainingTrace {
        log_likelihood: Vec::new(),
        converged: false,
        iterations: 0,
        starved_states: Vec::new(),
        seed,
    };
    let mut stats = ExpectedStats::compute(&params, sequences)?;
    trace.log_likelihood.push(stats.log_likelihood().as_f64());
    for _ in 0..cfg.max_iter {
        // M-step
        trace.starved_states = stats.update_emissions(&mut params, clamp, starvation);
        if n_states > 1 {
            let n_tr = T::from_usize_lossy(stats.n_transitions().max(1));
            params.theta_in = ascend(
                params.theta_in.clone(),
                cfg.inner_steps,
                lr,
                |th| stats.q_initial(th) / n_init,
                |th| stats.grad_initial(th),
                |th, g, lr| axpy2(th, g, lr / n_init),
            );
            params.theta_tr = ascend(
                params.theta_tr.clone(),
                cfg.inner_steps,
                lr,
                |th| stats.q_transition(th) / n_tr,
                |th| stats.grad_transition(th),
                |th, g, lr| {
                    th.iter()
                        .zip(g)
                        .map(|(m, gm)| axpy2(m, gm, lr / n_tr))
                        .collect()
                },
            );
        }
        trace.iterations += 1;
        // E-step
        stats = ExpectedStats::compute(&params, sequences)?;
        let ll = stats.log_likelihood().as_f64();
        let prev = *trace.log_likelihood.last().expect("initial value recorded");
        trace.log_likelihood.push(ll);
        // A single state has an exact M-step and no latent structure.
        if n_states == 1 || (ll - prev).abs() < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}

fn check_inputs<T: Real>(sequences: &[(&[bool], &[Vec<T>])], n_states: usize) -> Result<usize> {
    if n_states == 0 {
        return Err(invalid("n_states must be positive"));
    }
    let first = sequences.first().ok_or_else(|| invalid("no training sequences"))?;
    let action_dim = first
        .1
        .first()
        .map(|a| a.len())
        .ok_or_else(|| invalid("empty training sequence"))?;
    for (o, a) in sequences {
        if o.len() != a.len() || o.is_empty() {
            return Err(invalid(format!(
                "sequence has {} observations and {} actions",
                o.len(),
                a.len()
            )));
        }
        if a.iter().any(|f| f.len() != action_dim) {
            return Err(invalid("action features differ in length"));
        }
    }
    Ok(action_dim)
}

/// Restarted EM over several sequences; keeps the run with the best final
/// likelihood. Restarts run on separate threads; seeds are `seed, seed+1, ..`.
pub fn em_fit_restarts<T: Real>(
    sequences: &[(&[bool], &[Vec<T>])],
    n_states: usize,
    cfg: &EmConfig,
    seed: u64,
) -> Result<(IoHmmParams<T>, TrainingTrace)> {
    let restarts = cfg.restarts.max(1);
    let runs: Vec<Result<(IoHmmParams<T>, TrainingTrace)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..restarts as u64)
            .map(|r| scope.spawn(move || em_fit_once(sequences, n_states, cfg, seed.wrapping_add(r))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("EM restart panicked"))
            .collect()
    });
    let mut best: Option<(IoHmmParams<T>, TrainingTrace)> = None;
    for run in runs {
        let run = run?;
        let better = best
            .as_ref()
            .is_none_or(|b| run.1.final_log_likelihood() > b.1.final_log_likelihood());
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// EM on a single `(O, A)` sequence with restarts.
pub fn em_fit<T: Real>(
    obs: &[bool],
    actions: &[Vec<T>],
    n_states: usize,
    cfg: &EmConfig,
    seed: u64,
) -> Result<(IoHmmParams<T>, TrainingTrace)> {
    em_fit_restarts(&[(obs, actions)], n_states, cfg, seed)
}
