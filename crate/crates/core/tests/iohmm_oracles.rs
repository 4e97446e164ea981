use entrain_core::iohmm::{em_fit_once, forward_update, Belief, EmConfig, IoHmmParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive sum over all |S|^T state paths.
fn brute_force_log_likelihood(p: &IoHmmParams<f64>, obs: &[bool], acts: &[Vec<f64>]) -> f64 {
    let s = p.n_states;
    let t_len = obs.len();
    let mut total = 0.0;
    for code in 0..s.pow(t_len as u32) {
        let path: Vec<usize> = (0..t_len).map(|t| (code / s.pow(t as u32)) % s).collect();
        let mut prob = p.initial_prob(&acts[0])[path[0]] * p.observation_prob(path[0], obs[0]);
        for t in 1..t_len {
            prob *= p.transition_prob(path[t - 1], &acts[t])[path[t]];
            prob *= p.observation_prob(path[t], obs[t]);
        }
        total += prob;
    }
    total.ln()
}

fn random_case(s: usize, t_len: usize, seed: u64) -> (IoHmmParams<f64>, Vec<bool>, Vec<Vec<f64>>) {
    let p = IoHmmParams::random(s, 3, 1.5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let acts: Vec<Vec<f64>> = (0..t_len)
        .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), 1.0])
        .collect();
    let obs = (0..t_len).map(|_| rng.random::<bool>()).collect();
    (p, obs, acts)
}

#[test]
fn forward_matches_path_enumeration() {
    for s in 2..=4 {
        for t_len in 3..=6 {
            for seed in 0..20 {
                let (p, obs, acts) = random_case(s, t_len, seed);
                let fast = p.log_likelihood(&obs, &acts).unwrap();
                let slow = brute_force_log_likelihood(&p, &obs, &acts);
                assert!(
                    (fast - slow).abs() <= 1e-8 * slow.abs(),
                    "S={s} T={t_len} seed={seed}: {fast} vs {slow}"
                );
            }
        }
    }
}

#[test]
fn sequential_updates_reproduce_likelihood() {
    let (p, obs, acts) = random_case(3, 200, 42);
    let mut b = Belief::start(&p, &acts[0], obs[0]).unwrap();
    for t in 1..obs.len() {
        b = forward_update(&p, &b, &acts[t], obs[t]).unwrap();
        assert!(b.is_valid());
    }
    let batch = p.log_likelihood(&obs, &acts).unwrap();
    assert!((b.log_evidence - batch).abs() < 1e-10);
}

/// Two states with emissions 0.9 / 0.1; the action's first feature pushes
/// toward state 0 when positive and toward state 1 when negative.
fn known_two_state() -> IoHmmParams<f64> {
    let mut p = IoHmmParams::zeros(2, 2);
    p.theta_em = vec![(0.9f64 / 0.1).ln(), (0.1f64 / 0.9).ln()];
    p.theta_tr[0][1] = vec![-2.5, -1.0];
    p.theta_tr[1][0] = vec![2.5, -1.0];
    p
}

fn driving_actions(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: f64 = 0.0;
    (0..n)
        .map(|_| {
            x = 0.95 * x + rng.random_range(-0.5..0.5);
            vec![x.clamp(-1.5, 1.5), 1.0]
        })
        .collect()
}

#[test]
fn recovers_known_emissions() {
    let truth = known_two_state();
    let acts = driving_actions(2000, 1);
    let (_, obs) = truth.sample(&acts, 2);
    let cfg = EmConfig::default();
    let mut good = 0;
    for r in 0..5u64 {
        let (fit, trace) = em_fit_once(&[(&obs[..], &acts[..])], 2, &cfg, 100 + r).unwrap();
        let mut e: Vec<f64> = (0..2).map(|i| fit.emission_prob(i)).collect();
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let ok = (e[0] - 0.9).abs() < 0.1 && (e[1] - 0.1).abs() < 0.1;
        println!("restart {r}: emissions {e:?}, iterations {}, ok {ok}", trace.iterations);
        good += ok as usize;
    }
    assert!(good >= 4, "{good}/5 restarts recovered the emissions");
}

#[test]
fn single_state_fit_is_logit_of_mean() {
    let acts = driving_actions(300, 3);
    let obs: Vec<bool> = (0..300).map(|t| t % 3 == 0).collect();
    let (fit, trace) = em_fit_once(&[(&obs[..], &acts[..])], 1, &EmConfig::default(), 0).unwrap();
    assert!((fit.theta_em[0] - (1.0f64 / 2.0).ln()).abs() < 1e-9);
    assert_eq!(trace.iterations, 1);
}

#[test]
fn f32_model_agrees_with_f64() {
    let (p, obs, acts) = random_case(3, 50, 8);
    let p32: IoHmmParams<f32> = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    let acts32: Vec<Vec<f32>> = acts.iter().map(|a| a.iter().map(|&v| v as f32).collect()).collect();
    let ll32 = p32.log_likelihood(&obs, &acts32).unwrap() as f64;
    let ll64 = p.log_likelihood(&obs, &acts).unwrap();
    assert!((ll32 - ll64).abs() / ll64.abs() < 1e-4);
}
