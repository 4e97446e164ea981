use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Roadmap;
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::signal::PoseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Fep,
    RandomPrm,
    Perlin,
    Replay,
}

/// K future postures. Roadmap walks also carry their node indices; other
/// sources leave `nodes` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ActionSequence<T> {
    pub nodes: Vec<usize>,
    pub poses: Vec<PoseVector<T>>,
    pub source: ActionSource,
}

impl<T: Real> ActionSequence<T> {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn with_source(mut self, source: ActionSource) -> Self {
        self.source = source;
        self
    }
}

/// Walks restarted when every continuation violates the bound.
pub const MAX_WALK_ATTEMPTS: usize = 64;

/// `count` random walks of `horizon` steps from `start`, following edge
/// probabilities. The start node itself is not part of the sequence.
pub fn sample_sequences<T: Real>(
    map: &Roadmap<T>,
    start: usize,
    horizon: usize,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<ActionSequence<T>>> {
    sample_sequences_from(map, start, None, horizon, count, rng_seed)
}

/// Like [`sample_sequences`], with the node visited before `start` so the
/// first step is checked for acceleration too. Steps outside the kinematic
/// bound are masked and the remaining probabilities renormalized.
pub fn sample_sequences_from<T: Real>(
    map: &Roadmap<T>,
    start: usize,
    prev: Option<usize>,
    horizon: usize,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<ActionSequence<T>>> {
    if start >= map.len() || prev.is_some_and(|p| p >= map.len()) {
        return Err(invalid(format!("node index out of range for {} nodes", map.len())));
    }
    if horizon == 0 || count == 0 {
        return Err(invalid("horizon and count must be at least 1"));
    }
    if map.is_terminal(start) {
        return Err(Error::DeadEnd { node: start });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count)
        .map(|_| {
            for _ in 0..MAX_WALK_ATTEMPTS {
                if let Some(nodes) = walk(map, start, prev, horizon, &mut rng) {
                    return Ok(ActionSequence {
                        poses: nodes.iter().map(|&n| map.nodes[n].clone()).collect(),
                        nodes,
                        source: ActionSource::RandomPrm,
                    });
                }
            }
            Err(Error::DeadEnd { node: start })
        })
        .collect()
}

fn walk<T: Real>(
    map: &Roadmap<T>,
    start: usize,
    mut prev: Option<usize>,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let mut path = Vec::with_capacity(horizon);
    let mut cur = start;
    for _ in 0..horizon {
        let allowed: Vec<_> = map.edges[cur]
            .iter()
            .filter(|e| {
                map.bound.step_ok(
                    prev.map(|p| &map.nodes[p]),
                    &map.nodes[cur],
                    &map.nodes[e.to],
                    map.frame_rate_hz,
                    map.accel_slack,
                )
            })
            .collect();
        let total: T = allowed.iter().map(|e| e.prob).sum();
        if allowed.is_empty() || !(total > T::zero()) {
            return None;
        }
        let u = T::c(rng.random::<f64>()) * total;
        let mut acc = T::zero();
        let mut next = allowed[allowed.len() - 1].to;
        for e in &allowed {
            acc = acc + e.prob;
            if u < acc {
                next = e.to;
                break;
            }
        }
        path.push(next);
        prev = Some(cur);
        cur = next;
    }
    Some(path)
}

/// IO-HMM input for one posture: the pose followed by a constant 1.
pub fn action_features<T: Real>(pose: &PoseVector<T>) -> Vec<T> {
    let mut a = pose.0.clone();
    a.push(T::one());
    a
}

pub fn sequence_to_actions<T: Real>(seq: &ActionSequence<T>) -> Vec<Vec<T>> {
    seq.poses.iter().map(action_features).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{build_roadmap, KinematicBound, RoadmapConfig};
    use super::*;
    use crate::signal::{PoseSequence, Side};

    fn chain(n: usize) -> Roadmap<f64> {
        let frames = (0..n).map(|i| PoseVector(vec![i as f64 * 0.1, 0.0])).collect();
        let s = PoseSequence::new(frames, 8.0, Side::AgentSide).unwrap();
        let cfg = RoadmapConfig {
            fuse_eps: 0.0,
            lambda: 0.0,
            ..Default::default()
        };
        build_roadmap(&[s], &KinematicBound::unbounded(2), &cfg).unwrap()
    }

    #[test]
    fn chain_walk_is_unique() {
        let map = chain(10);
        let seqs = sample_sequences(&map, 0, 9, 5, 3).unwrap();
        for s in &seqs {
            assert_eq!(s.nodes, (1..10).collect::<Vec<_>>());
            assert_eq!(s.len(), 9);
        }
    }

    #[test]
    fn terminal_start_is_a_dead_end() {
        let map = chain(4);
        assert!(matches!(sample_sequences(&map, 3, 1, 1, 0), Err(Error::DeadEnd { node: 3 })));
        // Walks running off the end of the chain cannot be completed.
        assert!(matches!(sample_sequences(&map, 0, 5, 1, 0), Err(Error::DeadEnd { node: 0 })));
    }

    #[test]
    fn same_seed_same_samples() {
        let map = chain(6);
        assert_eq!(
            sample_sequences(&map, 1, 3, 4, 9).unwrap(),
            sample_sequences(&map, 1, 3, 4, 9).unwrap()
        );
    }

    #[test]
    fn actions_append_bias() {
        let seq = ActionSequence {
            nodes: vec![],
            poses: vec![PoseVector(vec![0.0; 8]); 8],
            source: ActionSource::Perlin,
        };
        let a = sequence_to_actions(&seq);
        assert_eq!(a.len(), 8);
        assert_eq!(a[0].len(), 9);
        assert_eq!(a[0][8], 1.0);
        assert!(a[0][..8].iter().all(|&x| x == 0.0));
    }
}
