use serde::{Deserialize, Serialize};

use super::Models;
use crate::discriminator::{build_corpus, train, Architecture, ClassifierParams, CorpusConfig, TrainConfig, TrainReport};
use crate::error::Result;
use crate::iohmm::{em_fit_restarts, EmConfig, TrainingTrace};
use crate::roadmap::{action_features, build_roadmap, fit_kinematic_bound, RoadmapConfig};
use crate::signal::{gen_synthetic_interaction, PoseSequence, Recording, SyntheticConfig};

/// Discriminator score of the window ending at every frame from `L - 1` on.
pub fn observe(disc: &ClassifierParams<f64>, recording: &Recording<f64>) -> Result<Vec<f64>> {
    let l = disc.window_len();
    (0..recording.len().saturating_sub(l - 1))
        .map(|s| disc.score(&recording.window(s, l).expect("window in range")))
        .collect()
}

/// IO-HMM training pairs `(o(t), a(t))` for frames `L - 1..T`: the agent's
/// posture features and the thresholded discriminator verdict.
pub fn iohmm_sequences(
    disc: &ClassifierParams<f64>,
    recording: &Recording<f64>,
    threshold: f64,
) -> Result<(Vec<bool>, Vec<Vec<f64>>)> {
    let l = disc.window_len();
    let obs = observe(disc, recording)?.into_iter().map(|s| s >= threshold).collect();
    let actions = recording.agent.frames[l - 1..].iter().map(action_features).collect();
    Ok((obs, actions))
}

/// Everything needed to train the three models on one synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetupConfig {
    pub synthetic: SyntheticConfig,
    pub n_frames: usize,
    pub coupling: f64,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub roadmap: RoadmapConfig,
    pub em: EmConfig,
    pub n_states: usize,
    /// Also fit the IO-HMM on a decoupled copy (agent rotated by half the
    /// recording), so that "fake" verdicts are well represented.
    pub include_decoupled: bool,
    pub threshold: f64,
}

impl Default for SetupConfig {
    fn default() -> Self {
        SetupConfig {
            synthetic: SyntheticConfig::default(),
            n_frames: 4000,
            coupling: 0.8,
            corpus: CorpusConfig {
                n_windows: Some(2000),
                ..CorpusConfig::default()
            },
            train: TrainConfig::default(),
            roadmap: RoadmapConfig::default(),
            em: EmConfig {
                max_iter: 60,
                ..EmConfig::default()
            },
            n_states: 3,
            include_decoupled: true,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupReport {
    pub discriminator: TrainReport,
    pub iohmm: TrainingTrace,
    pub roadmap_nodes: usize,
    pub roadmap_edges: usize,
    /// Share of `o = 1` in the IO-HMM training data.
    pub positive_rate: f64,
}

fn rotated(seq: &PoseSequence<f64>, by: usize) -> PoseSequence<f64> {
    let mut out = seq.clone();
    out.frames.rotate_left(by % seq.len().max(1));
    out
}

/// Generates a synthetic recording and trains discriminator, roadmap and
/// IO-HMM on it.
pub fn prepare_models(cfg: &SetupConfig, rng_seed: u64) -> Result<(Models, SetupReport)> {
    let (agent, partner) = gen_synthetic_interaction::<f64>(cfg.n_frames, cfg.coupling, rng_seed, &cfg.synthetic)?;
    let recording = Recording::new(agent.clone(), partner.clone())?;

    let (windows, scale) = build_corpus(&recording, &cfg.corpus, rng_seed)?;
    let arch = Architecture::default_for(recording.dim(), cfg.corpus.window_len)?;
    let (mut disc, disc_report) = train(&windows, arch, &cfg.train, rng_seed)?;
    disc.scale_params = Some(scale);

    let bound = fit_kinematic_bound(std::slice::from_ref(&agent))?;
    let map = build_roadmap(std::slice::from_ref(&agent), &bound, &cfg.roadmap)?;

    let mut data = vec![iohmm_sequences(&disc, &recording, cfg.threshold)?];
    if cfg.include_decoupled {
        let decoupled = Recording::new(rotated(&agent, cfg.n_frames / 2), partner)?;
        data.push(iohmm_sequences(&disc, &decoupled, cfg.threshold)?);
    }
    let total: usize = data.iter().map(|d| d.0.len()).sum();
    let positive_rate = data.iter().flat_map(|d| &d.0).filter(|&&o| o).count() as f64 / total as f64;
    let seqs: Vec<(&[bool], &[Vec<f64>])> = data.iter().map(|(o, a)| (o.as_slice(), a.as_slice())).collect();
    let (hmm, trace) = em_fit_restarts(&seqs, cfg.n_states, &cfg.em, rng_seed)?;

    let report = SetupReport {
        discriminator: disc_report,
        iohmm: trace,
        roadmap_nodes: map.len(),
        roadmap_edges: map.n_edges(),
        positive_rate,
    };
    Ok((Models::new(hmm, map, disc)?, report))
}
