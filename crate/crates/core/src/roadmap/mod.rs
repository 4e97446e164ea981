//! Probabilistic roadmap of agent postures.
//!
//! Frames become nodes chained in time; nearby frames are fused; extra
//! edges join postures reachable within the kinematic bound. Walks over the
//! graph give candidate action sequences.

mod kinematics;
mod sample;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::signal::{PoseSequence, PoseVector};

pub use kinematics::{finite_differences, fit_kinematic_bound, Derivatives, KinematicBound, MIN_BOUND_SAMPLES};
pub use sample::{
    action_features, sample_sequences, sample_sequences_from, sequence_to_actions, ActionSequence, ActionSource,
    MAX_WALK_ATTEMPTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadmapConfig {
    /// Fusing radius in pose units; 0 disables fusing.
    pub fuse_eps: f64,
    /// Weight of a feasibility edge relative to one observed transition;
    /// 0 disables feasibility edges.
    pub lambda: f64,
    /// Feasibility edges kept per node, nearest targets first.
    pub max_extra_edges: usize,
    /// Tolerance on the acceleration envelope.
    pub accel_slack: f64,
}

impl Default for RoadmapConfig {
    fn default() -> Self {
        RoadmapConfig {
            fuse_eps: 0.05,
            lambda: 0.1,
            max_extra_edges: 8,
            accel_slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Edge<T> {
    pub to: usize,
    pub prob: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap<T> {
    pub nodes: Vec<PoseVector<T>>,
    /// Outgoing edges per node, sorted by target.
    pub edges: Vec<Vec<Edge<T>>>,
    pub frame_rate_hz: T,
    pub bound: KinematicBound<T>,
    /// Source frames fused into each node.
    pub provenance: Vec<usize>,
    /// First frame of every input sequence.
    pub start_nodes: Vec<usize>,
    pub accel_slack: T,
}

/// Greedy leader clustering: a frame joins the first-created node within
/// `eps`, else founds a node. Candidates come from a grid over the first
/// three coordinates, which can only drop pairs farther apart than `eps`.
struct Fuser<T> {
    eps: T,
    grid: HashMap<Vec<i64>, Vec<usize>>,
    nodes: Vec<PoseVector<T>>,
    provenance: Vec<usize>,
}

impl<T: Real> Fuser<T> {
    fn cell(&self, p: &PoseVector<T>) -> Vec<i64> {
        p.iter()
            .take(3)
            .map(|&x| (x / self.eps).floor().to_i64().unwrap_or(0))
            .collect()
    }

    fn insert(&mut self, p: &PoseVector<T>) -> usize {
        if self.eps > T::zero() {
            let cell = self.cell(p);
            let mut best: Option<usize> = None;
            for offset in 0..3usize.pow(cell.len() as u32) {
                let mut key = cell.clone();
                let mut o = offset;
                for c in key.iter_mut() {
                    *c += (o % 3) as i64 - 1;
                    o /= 3;
                }
                for &n in self.grid.get(&key).map(Vec::as_slice).unwrap_or(&[]) {
                    if self.nodes[n].distance(p) < self.eps && best.is_none_or(|b| n < b) {
                        best = Some(n);
                    }
                }
            }
            if let Some(n) = best {
                self.provenance[n] += 1;
                return n;
            }
            self.grid.entry(cell).or_default().push(self.nodes.len());
        }
        self.nodes.push(p.clone());
        self.provenance.push(1);
        self.nodes.len() - 1
    }
}

pub fn build_roadmap<T: Real>(
    sequences: &[PoseSequence<T>],
    bound: &KinematicBound<T>,
    cfg: &RoadmapConfig,
) -> Result<Roadmap<T>> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::InvalidDataset("no sequences".into()))?;
    let (dim, rate) = (first.dim(), first.rate_hz);
    if sequences.iter().any(|s| s.dim() != dim || s.rate_hz != rate || s.frames.is_empty()) {
        return Err(Error::InvalidDataset(
            "sequences must share pose dimension and frame rate".into(),
        ));
    }
    if bound.max_speed.len() != dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{dim} joint speeds"),
            got: format!("{}", bound.max_speed.len()),
        });
    }
    bound.validate()?;
    if !(cfg.fuse_eps >= 0.0) || !(cfg.lambda >= 0.0) || !(cfg.accel_slack >= 0.0) {
        return Err(invalid("roadmap config values must be nonnegative"));
    }

    let mut fuser = Fuser {
        eps: T::c(cfg.fuse_eps),
        grid: HashMap::new(),
        nodes: Vec::new(),
        provenance: Vec::new(),
    };
    let mut counts: Vec<HashMap<usize, f64>> = Vec::new();
    let mut incoming: Vec<Vec<usize>> = Vec::new();
    let mut start_nodes = Vec::new();
    for seq in sequences {
        let mut prev: Option<usize> = None;
        for frame in &seq.frames {
            let n = fuser.insert(frame);
            if n == counts.len() {
                counts.push(HashMap::new());
                incoming.push(Vec::new());
            }
            match prev {
                None => start_nodes.push(n),
                Some(p) if p != n => {
                    *counts[p].entry(n).or_insert(0.0) += 1.0;
                    if !incoming[n].contains(&p) {
                        incoming[n].push(p);
                    }
                }
                _ => {}
            }
            prev = Some(n);
        }
    }
    start_nodes.sort_unstable();
    start_nodes.dedup();
    let nodes = fuser.nodes;

    if cfg.lambda > 0.0 && cfg.max_extra_edges > 0 {
        let slack = T::c(cfg.accel_slack);
        for i in 0..nodes.len() {
            let mut candidates: Vec<(T, usize)> = (0..nodes.len())
                .filter(|&j| j != i && !counts[i].contains_key(&j))
                .filter(|&j| bound.velocity_ok(&nodes[i], &nodes[j], rate))
                .filter(|&j| {
                    incoming[i].is_empty()
                        || incoming[i]
                            .iter()
                            .any(|&h| bound.step_ok(Some(&nodes[h]), &nodes[i], &nodes[j], rate, slack))
                })
                .map(|j| (nodes[i].distance(&nodes[j]), j))
                .collect();
            candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite poses").then(a.1.cmp(&b.1)));
            for &(_, j) in candidates.iter().take(cfg.max_extra_edges) {
                counts[i].insert(j, cfg.lambda);
            }
        }
    }

    let edges = counts
        .into_iter()
        .map(|c| {
            let total: f64 = c.values().sum();
            let mut out: Vec<Edge<T>> = c
                .into_iter()
                .map(|(to, w)| Edge {
                    to,
                    prob: T::c(w / total),
                })
                .collect();
            out.sort_by_key(|e| e.to);
            out
        })
        .collect();

    Ok(Roadmap {
        nodes,
        edges,
        frame_rate_hz: rate,
        bound: bound.clone(),
        provenance: fuser.provenance,
        start_nodes,
        accel_slack: T::c(cfg.accel_slack),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RoadmapFile<T> {
    nodes: Vec<Vec<T>>,
    edges: Vec<(usize, usize, T)>,
    frame_rate_hz: T,
    bound: KinematicBound<T>,
    #[serde(default)]
    provenance: Vec<usize>,
    #[serde(default)]
    start_nodes: Vec<usize>,
    #[serde(default)]
    accel_slack: Option<T>,
}

impl<T: Real> Roadmap<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.dim())
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn is_terminal(&self, node: usize) -> bool {
        self.edges[node].is_empty()
    }

    pub fn edge_prob(&self, from: usize, to: usize) -> Option<T> {
        self.edges[from].iter().find(|e| e.to == to).map(|e| e.prob)
    }

    /// Index of the node closest to `pose`; ties go to the lower index.
    pub fn nearest_node(&self, pose: &PoseVector<T>) -> usize {
        let mut best = (T::infinity(), 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.distance(pose);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::Format("roadmap has no nodes".into()));
        }
        let dim = self.dim();
        if self.nodes.iter().any(|p| p.dim() != dim || !p.is_finite()) {
            return Err(Error::Format("roadmap nodes must be finite with one dimension".into()));
        }
        if self.edges.len() != n || self.provenance.len() != n {
            return Err(Error::Format("roadmap tables disagree in length".into()));
        }
        if self.start_nodes.iter().any(|&s| s >= n) {
            return Err(Error::Format("start node out of range".into()));
        }
        for (i, out) in self.edges.iter().enumerate() {
            if out.iter().any(|e| e.to >= n || !(e.prob > T::zero()) || e.prob > T::one()) {
                return Err(Error::Format(format!("invalid edge from node {i}")));
            }
            if !out.is_empty() {
                let total: T = out.iter().map(|e| e.prob).sum();
                if (total - T::one()).abs() > T::c(1e-6) {
                    return Err(Error::Format(format!("edges of node {i} sum to {total}")));
                }
            }
            if out.len() == 1 && out[0].to == i {
                return Err(Error::Format(format!("node {i} has a certain self-loop")));
            }
        }
        if self.bound.max_speed.len() != dim {
            return Err(Error::Format("bound dimension differs from poses".into()));
        }
        self.bound.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RoadmapFile {
            nodes: self.nodes.iter().map(|p| p.0.clone()).collect(),
            edges: self
                .edges
                .iter()
                .enumerate()
                .flat_map(|(i, out)| out.iter().map(move |e| (i, e.to, e.prob)))
                .collect(),
            frame_rate_hz: self.frame_rate_hz,
            bound: self.bound.clone(),
            provenance: self.provenance.clone(),
            start_nodes: self.start_nodes.clone(),
            accel_slack: Some(self.accel_slack),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RoadmapFile<T> = serde_json::from_str(text)?;
        let n = file.nodes.len();
        let mut edges = vec![Vec::new(); n];
        for (from, to, prob) in file.edges {
            if from >= n {
                return Err(Error::Format(format!("edge source {from} out of range")));
            }
            edges[from].push(Edge { to, prob });
        }
        for out in &mut edges {
            out.sort_by_key(|e| e.to);
        }
        let map = Roadmap {
            nodes: file.nodes.into_iter().map(PoseVector).collect(),
            edges,
            frame_rate_hz: file.frame_rate_hz,
            bound: file.bound,
            provenance: if file.provenance.is_empty() { vec![1; n] } else { file.provenance },
            start_nodes: if file.start_nodes.is_empty() { vec![0] } else { file.start_nodes },
            accel_slack: file.accel_slack.unwrap_or(T::c(RoadmapConfig::default().accel_slack)),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}
