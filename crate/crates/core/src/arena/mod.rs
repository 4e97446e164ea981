//! Closed-loop simulation: an agent answers a partner stream tick by tick,
//! the discriminator judges the joint window, and the belief follows.

mod setup;
mod stats;

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::ClassifierParams;
use crate::error::{Error, Result};
use crate::iohmm::{forward_update, predict, Belief, IoHmmParams};
use crate::policy::{perlin_sequence, random_prm_motion_from, select_action_from, FepConfig};
use crate::roadmap::{action_features, ActionSequence, Roadmap};
use crate::signal::{InteractionWindow, PoseSequence, PoseVector};

pub use setup::{iohmm_sequences, observe, prepare_models, SetupConfig, SetupReport};
pub use stats::{
    compare_methods, mann_whitney, mann_whitney_u, midranks, ComparisonRow, MannWhitney, MetricComparison, Summary,
    EXACT_MAX_N,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fep,
    RandomPrm,
    Perlin,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fep, Method::RandomPrm, Method::Perlin];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fep => "fep",
            Method::RandomPrm => "random_prm",
            Method::Perlin => "perlin",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?} (fep, random_prm, perlin)")))
    }
}

/// Trained models shared by every session.
#[derive(Debug, Clone)]
pub struct Models {
    pub hmm: IoHmmParams<f64>,
    pub map: Roadmap<f64>,
    pub disc: ClassifierParams<f64>,
}

impl Models {
    pub fn new(hmm: IoHmmParams<f64>, map: Roadmap<f64>, disc: ClassifierParams<f64>) -> Result<Self> {
        let m = Models { hmm, map, disc };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        let d = self.map.dim();
        let bad = |what: String| Err(Error::InvalidConfiguration(what));
        if self.hmm.action_dim != d + 1 {
            return bad(format!(
                "IO-HMM expects {}-dim actions, roadmap poses give {}",
                self.hmm.action_dim,
                d + 1
            ));
        }
        if self.disc.pose_dim() != d {
            return bad(format!(
                "discriminator expects {}-dim poses, roadmap has {d}",
                self.disc.pose_dim()
            ));
        }
        self.hmm.validate().map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
        self.disc.validate().map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
        self.map.validate().map_err(|e| Error::InvalidConfiguration(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn window_len(&self) -> usize {
        self.disc.window_len()
    }

    /// Provenance-weighted mean roadmap posture.
    pub fn idle_pose(&self) -> PoseVector<f64> {
        let mut mean = vec![0.0; self.dim()];
        let mut total = 0.0;
        for (p, &w) in self.map.nodes.iter().zip(&self.map.provenance) {
            for (m, x) in mean.iter_mut().zip(p.iter()) {
                *m += w as f64 * x;
            }
            total += w as f64;
        }
        PoseVector(mean.into_iter().map(|m| m / total).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArenaConfig {
    pub fep: FepConfig,
    /// Ticks executed from each plan; `None` runs the whole horizon.
    pub replan_every: Option<usize>,
    pub threshold: f64,
    pub perlin_amplitude: f64,
    pub perlin_frequency_hz: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            fep: FepConfig::default(),
            replan_every: None,
            threshold: 0.5,
            perlin_amplitude: 0.1,
            perlin_frequency_hz: 0.5,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<()> {
        self.fep.validate()?;
        if self.replan_every == Some(0) || !(0.0..=1.0).contains(&self.threshold) || !(self.perlin_amplitude >= 0.0) {
            return Err(Error::InvalidConfiguration(
                "replan_every must be ≥ 1, threshold in [0, 1], amplitude ≥ 0".into(),
            ));
        }
        Ok(())
    }

    fn executed_steps(&self) -> usize {
        self.replan_every.unwrap_or(self.fep.horizon).min(self.fep.horizon)
    }
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub method: Method,
    pub node: Option<usize>,
    pub agent_pose: Vec<f64>,
    pub belief: Vec<f64>,
    #[serde(rename = "chosen_F")]
    pub chosen_f: Option<f64>,
    #[serde(rename = "candidate_Fs")]
    pub candidate_fs: Vec<f64>,
    pub disc_score: Option<f64>,
    pub o: Option<bool>,
}

/// Stateful agent loop; feed it one partner frame per tick.
#[derive(Debug, Clone)]
pub struct Session {
    models: Arc<Models>,
    method: Method,
    cfg: ArenaConfig,
    rng: ChaCha8Rng,
    perlin_seed: u64,
    idle: PoseVector<f64>,
    tick: usize,
    belief: Belief<f64>,
    node: Option<usize>,
    prev_node: Option<usize>,
    plan: VecDeque<(PoseVector<f64>, Option<usize>)>,
    agent_buf: VecDeque<PoseVector<f64>>,
    partner_buf: VecDeque<PoseVector<f64>>,
}

impl Session {
    pub fn new(models: Arc<Models>, method: Method, cfg: ArenaConfig, rng_seed: u64) -> Result<Self> {
        models.check()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let perlin_seed = rng.random();
        let idle = models.idle_pose();
        let start = models.map.nearest_node(&idle);
        let belief = Belief::prior(&models.hmm, &action_features(&models.map.nodes[start]));
        Ok(Session {
            method,
            cfg,
            rng,
            perlin_seed,
            tick: 0,
            belief,
            node: (method != Method::Perlin).then_some(start),
            prev_node: None,
            plan: VecDeque::new(),
            agent_buf: VecDeque::new(),
            partner_buf: VecDeque::new(),
            idle,
            models,
        })
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn belief(&self) -> &Belief<f64> {
        &self.belief
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    /// Plans from the current node; a dead end restarts from the roadmap
    /// start node nearest the current posture.
    fn replan(&mut self) -> Result<(Option<f64>, Vec<f64>)> {
        let seed: u64 = self.rng.random();
        let k = self.cfg.fep.horizon;
        let map = &self.models.map;
        let (seq, chosen, all): (ActionSequence<f64>, _, _) = match self.method {
            Method::Perlin => {
                let dt = 1.0 / map.frame_rate_hz;
                let t0 = self.tick as f64 * dt - dt;
                let seq = perlin_sequence(
                    &self.idle,
                    self.cfg.perlin_amplitude,
                    self.cfg.perlin_frequency_hz,
                    t0,
                    dt,
                    k,
                    self.perlin_seed,
                )?;
                (seq, None, Vec::new())
            }
            Method::Fep | Method::RandomPrm => {
                let mut from = (self.node.expect("roadmap methods track a node"), self.prev_node);
                let mut attempt = self.plan_from(from, seed);
                if matches!(attempt, Err(Error::DeadEnd { .. })) {
                    let here = &map.nodes[from.0];
                    let restart = *map
                        .start_nodes
                        .iter()
                        .min_by(|&&a, &&b| map.nodes[a].distance(here).total_cmp(&map.nodes[b].distance(here)))
                        .expect("roadmaps have a start node");
                    from = (restart, None);
                    attempt = self.plan_from(from, seed);
                }
                attempt?
            }
        };
        let steps = self.cfg.executed_steps();
        self.plan = seq
            .poses
            .into_iter()
            .zip(seq.nodes.into_iter().map(Some).chain(std::iter::repeat(None)))
            .take(steps)
            .collect();
        Ok((chosen, all))
    }

    fn plan_from(
        &self,
        (node, prev): (usize, Option<usize>),
        seed: u64,
    ) -> Result<(ActionSequence<f64>, Option<f64>, Vec<f64>)> {
        let m = &self.models;
        match self.method {
            Method::Fep => {
                let (seq, scored) = select_action_from(&m.hmm, &self.belief, &m.map, node, prev, &self.cfg.fep, seed)?;
                let all: Vec<f64> = scored.iter().map(|s| s.free_energy).collect();
                let best = all.iter().copied().fold(f64::INFINITY, f64::min);
                Ok((seq, Some(best), all))
            }
            _ => Ok((
                random_prm_motion_from(&m.map, node, prev, self.cfg.fep.horizon, seed)?,
                None,
                Vec::new(),
            )),
        }
    }

    /// Advances one tick with the partner's current frame.
    pub fn step(&mut self, partner: &PoseVector<f64>) -> Result<TickRecord> {
        let d = self.models.dim();
        if partner.dim() != d || !partner.is_finite() {
            return Err(Error::ShapeMismatch {
                expected: format!("finite {d}-dim partner frame"),
                got: format!("{} values", partner.dim()),
            });
        }
        let (chosen_f, candidate_fs) = if self.plan.is_empty() {
            self.replan()?
        } else {
            (None, Vec::new())
        };
        let (pose, node) = self.plan.pop_front().expect("plan refilled");
        if node.is_some() {
            self.prev_node = self.node;
            self.node = node;
        }

        let l = self.models.window_len();
        self.agent_buf.push_back(pose.clone());
        self.partner_buf.push_back(partner.clone());
        while self.agent_buf.len() > l {
            self.agent_buf.pop_front();
            self.partner_buf.pop_front();
        }
        let (disc_score, o) = if self.agent_buf.len() == l {
            let window = InteractionWindow::new(
                self.agent_buf.iter().cloned().collect(),
                self.partner_buf.iter().cloned().collect(),
                None,
            )?;
            let s = self.models.disc.score(&window)?;
            (Some(s), Some(s >= self.cfg.threshold))
        } else {
            (None, None)
        };

        let a = action_features(&pose);
        let hmm = &self.models.hmm;
        self.belief = match (self.tick, o) {
            (0, Some(o)) => Belief::start(hmm, &a, o)?,
            (0, None) => Belief::prior(hmm, &a),
            (_, Some(o)) => forward_update(hmm, &self.belief, &a, o)?,
            (_, None) => Belief {
                probs: predict(hmm, &self.belief.probs, &a),
                log_evidence: self.belief.log_evidence,
            },
        };

        let record = TickRecord {
            tick: self.tick,
            method: self.method,
            node,
            agent_pose: pose.0,
            belief: self.belief.probs.clone(),
            chosen_f,
            candidate_fs,
            disc_score,
            o,
        };
        self.tick += 1;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub method: Method,
    /// Discriminator score of every tick with a full window.
    pub scores: Vec<f64>,
    pub mean_score: f64,
    /// Mean Euclidean displacement of the agent posture per tick.
    pub intensity: f64,
    pub ticks: usize,
}

impl EpisodeReport {
    pub fn from_records(records: &[TickRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidDataset("empty episode log".into()))?;
        let scores: Vec<f64> = records.iter().filter_map(|r| r.disc_score).collect();
        let mean_score = if scores.is_empty() {
            f64::NAN
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        let steps: Vec<f64> = records
            .windows(2)
            .map(|w| PoseVector(w[1].agent_pose.clone()).distance(&PoseVector(w[0].agent_pose.clone())))
            .collect();
        let intensity = if steps.is_empty() {
            0.0
        } else {
            steps.iter().sum::<f64>() / steps.len() as f64
        };
        Ok(EpisodeReport {
            method: first.method,
            scores,
            mean_score,
            intensity,
            ticks: records.len(),
        })
    }
}

/// Runs `ticks` steps (all partner frames when `None`) and returns the log.
pub fn run_episode_logged(
    method: Method,
    partner: &PoseSequence<f64>,
    models: &Arc<Models>,
    cfg: &ArenaConfig,
    ticks: Option<usize>,
    rng_seed: u64,
) -> Result<(EpisodeReport, Vec<TickRecord>)> {
    let n = ticks.unwrap_or(partner.len());
    let needed = models.window_len() + cfg.fep.horizon;
    if partner.dim() != models.dim() {
        return Err(Error::InvalidConfiguration(format!(
            "partner has {}-dim poses, models expect {}",
            partner.dim(),
            models.dim()
        )));
    }
    if partner.len() < needed || n > partner.len() {
        return Err(Error::InvalidArgument(format!(
            "partner needs at least max({needed}, ticks = {n}) frames, has {}",
            partner.len()
        )));
    }
    let mut session = Session::new(Arc::clone(models), method, cfg.clone(), rng_seed)?;
    let records = partner.frames[..n]
        .iter()
        .map(|f| session.step(f))
        .collect::<Result<Vec<_>>>()?;
    Ok((EpisodeReport::from_records(&records)?, records))
}

pub fn run_episode(
    method: Method,
    partner: &PoseSequence<f64>,
    models: &Arc<Models>,
    cfg: &ArenaConfig,
    rng_seed: u64,
) -> Result<EpisodeReport> {
    Ok(run_episode_logged(method, partner, models, cfg, None, rng_seed)?.0)
}

pub fn write_jsonl(records: &[TickRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(out.flush()?)
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<TickRecord>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
