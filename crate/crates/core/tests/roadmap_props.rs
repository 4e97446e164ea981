use std::collections::VecDeque;

use entrain_core::roadmap::{
    build_roadmap, finite_differences, fit_kinematic_bound, sample_sequences, sample_sequences_from,
    KinematicBound, RoadmapConfig,
};
use entrain_core::Roadmap;
use entrain_core::signal::{gen_synthetic_interaction, PoseSequence, PoseVector, Side, SyntheticConfig};
use proptest::prelude::*;

fn seq(frames: Vec<Vec<f64>>) -> PoseSequence<f64> {
    PoseSequence::new(frames.into_iter().map(PoseVector).collect(), 8.0, Side::AgentSide).unwrap()
}

fn reachable(map: &Roadmap) -> Vec<bool> {
    let mut seen = vec![false; map.len()];
    let mut queue: VecDeque<usize> = map.start_nodes.iter().copied().collect();
    for &s in &map.start_nodes {
        seen[s] = true;
    }
    while let Some(n) = queue.pop_front() {
        for e in &map.edges[n] {
            if !seen[e.to] {
                seen[e.to] = true;
                queue.push_back(e.to);
            }
        }
    }
    seen
}

fn walk_strategy() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    (2usize..4).prop_flat_map(|d| {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(-0.2f64..0.2, d), 3..30).prop_map(|steps| {
                let mut pos = vec![0.0; steps[0].len()];
                steps
                    .into_iter()
                    .map(|s| {
                        pos.iter_mut().zip(&s).for_each(|(p, s)| *p += s);
                        pos.clone()
                    })
                    .collect::<Vec<_>>()
            }),
            1..4,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn built_roadmaps_are_well_formed(seqs in walk_strategy(), eps in 0.0f64..0.3) {
        let seqs: Vec<_> = seqs.into_iter().map(seq).collect();
        let n_frames: usize = seqs.iter().map(|s| s.len()).sum();
        let bound = KinematicBound::unbounded(seqs[0].dim());
        let map = build_roadmap(&seqs, &bound, &RoadmapConfig { fuse_eps: eps, ..Default::default() }).unwrap();
        prop_assert!(map.len() <= n_frames);
        prop_assert_eq!(map.provenance.iter().sum::<usize>(), n_frames);
        for (i, out) in map.edges.iter().enumerate() {
            if !out.is_empty() {
                let total: f64 = out.iter().map(|e| e.prob).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
            prop_assert!(!(out.len() == 1 && out[0].to == i));
        }
        prop_assert!(reachable(&map).iter().all(|&r| r));
        map.validate().unwrap();
    }

    #[test]
    fn no_fusing_no_smoothing_reproduces_chains(seqs in walk_strategy()) {
        let seqs: Vec<_> = seqs.into_iter().map(seq).collect();
        let cfg = RoadmapConfig { fuse_eps: 0.0, lambda: 0.0, ..Default::default() };
        let map = build_roadmap(&seqs, &KinematicBound::unbounded(seqs[0].dim()), &cfg).unwrap();
        let frames: Vec<&PoseVector<f64>> = seqs.iter().flat_map(|s| s.frames.iter()).collect();
        prop_assert_eq!(map.len(), frames.len());
        let mut offset = 0;
        for s in &seqs {
            for t in 0..s.len() {
                let i = offset + t;
                prop_assert_eq!(&map.nodes[i], frames[i]);
                if t + 1 < s.len() {
                    prop_assert_eq!(map.edges[i].len(), 1);
                    prop_assert_eq!(map.edges[i][0].to, i + 1);
                    prop_assert_eq!(map.edges[i][0].prob, 1.0);
                } else {
                    prop_assert!(map.is_terminal(i));
                }
            }
            offset += s.len();
        }
    }
}

fn synthetic_map() -> Roadmap {
    let (agent, _) = gen_synthetic_interaction::<f64>(1200, 0.8, 4, &SyntheticConfig::default()).unwrap();
    let bound = fit_kinematic_bound(std::slice::from_ref(&agent)).unwrap();
    build_roadmap(&[agent], &bound, &RoadmapConfig::default()).unwrap()
}

#[test]
fn synthetic_roadmap_has_feasibility_edges_and_is_reachable() {
    let map = synthetic_map();
    map.validate().unwrap();
    assert!(map.n_edges() > map.len());
    assert!(reachable(&map).iter().all(|&r| r));
}

/// Every sampled step stays inside the bound, recomputed here from the raw
/// differences.
#[test]
fn sampled_walks_follow_edges_and_respect_kinematics() {
    let map = synthetic_map();
    let b = &map.bound;
    for (k, start) in [5usize, 100, 400, 700].into_iter().enumerate() {
        let prev = map.edges.iter().position(|out| out.iter().any(|e| e.to == start));
        let seqs = sample_sequences_from(&map, start, prev, 8, 32, k as u64).unwrap();
        for s in seqs {
            assert_eq!(s.nodes.len(), 8);
            let mut path = prev.into_iter().chain(std::iter::once(start)).collect::<Vec<_>>();
            path.extend(&s.nodes);
            for w in path.windows(2) {
                assert!(map.edge_prob(w[0], w[1]).is_some());
            }
            let poses: Vec<Vec<f64>> = path.iter().map(|&n| map.nodes[n].0.clone()).collect();
            let d = finite_differences(&seq(poses));
            for v in &d.velocity {
                for (x, m) in v.iter().zip(&b.max_speed) {
                    assert!(x.abs() <= *m + 1e-12);
                }
            }
            for (i, w) in d.acceleration.iter().enumerate() {
                let v = &d.velocity[i + 1];
                let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let wmax = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(wmax <= (b.intercept + b.slope * vmax) * 1.05 + 1e-9);
            }
        }
    }
}

/// Fan-out node built from sequences sharing their first frame.
fn fan(successor_counts: &[usize]) -> Roadmap {
    let mut seqs = Vec::new();
    for (k, &c) in successor_counts.iter().enumerate() {
        for _ in 0..c {
            seqs.push(seq(vec![vec![0.0, 0.0], vec![0.1 * (k + 1) as f64, 0.0]]));
        }
    }
    let cfg = RoadmapConfig { fuse_eps: 0.01, lambda: 0.0, ..Default::default() };
    build_roadmap(&seqs, &KinematicBound::unbounded(2), &cfg).unwrap()
}

#[test]
fn even_split_is_binomially_concentrated() {
    let map = fan(&[1, 1]);
    assert_eq!(map.edges[0].len(), 2);
    let seqs = sample_sequences(&map, 0, 1, 10_000, 2024).unwrap();
    let first = seqs.iter().filter(|s| s.nodes[0] == map.edges[0][0].to).count();
    assert!((first as i64 - 5000).abs() <= 150, "{first}");
}

#[test]
fn sampling_frequencies_pass_chi_square() {
    let map = fan(&[1, 2, 1]);
    let out = &map.edges[0];
    assert_eq!(out.iter().map(|e| e.prob).collect::<Vec<_>>(), vec![0.25, 0.5, 0.25]);
    for seed in 0..5 {
        let seqs = sample_sequences(&map, 0, 1, 10_000, seed).unwrap();
        let chi2: f64 = out
            .iter()
            .map(|e| {
                let observed = seqs.iter().filter(|s| s.nodes[0] == e.to).count() as f64;
                let expected = e.prob * 10_000.0;
                (observed - expected).powi(2) / expected
            })
            .sum();
        // Upper 1% point of chi-square with 2 degrees of freedom: -2 ln 0.01.
        assert!(chi2 < -2.0 * 0.01f64.ln(), "seed {seed}: {chi2}");
    }
}
