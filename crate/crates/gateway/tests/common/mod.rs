#![allow(dead_code)]

use std::path::{Path, PathBuf};

use entrain_core::arena::Models;
use entrain_core::discriminator::{Architecture, ClassifierParams, Network};
use entrain_core::iohmm::IoHmmParams;
use entrain_core::roadmap::{build_roadmap, fit_kinematic_bound, RoadmapConfig};
use entrain_core::signal::io::PoseFile;
use entrain_core::signal::{gen_synthetic_interaction, SyntheticConfig};

pub const D: usize = 8;
pub const L: usize = 24;

/// Untrained but shape-consistent models; fast to build.
pub fn small_models(seed: u64) -> Models {
    let (agent, _) = gen_synthetic_interaction::<f64>(600, 0.8, seed, &SyntheticConfig::default()).unwrap();
    let bound = fit_kinematic_bound(std::slice::from_ref(&agent)).unwrap();
    let map = build_roadmap(&[agent], &bound, &RoadmapConfig::default()).unwrap();
    let hmm = IoHmmParams::random(3, D + 1, 1.0, seed);
    let arch = Architecture::temporal(D, L, 8, (8, 8), 16, 0.0).unwrap();
    let disc = ClassifierParams::from_network(Network::init(arch, seed).unwrap(), None);
    Models::new(hmm, map, disc).unwrap()
}

pub struct ModelFiles {
    pub hmm: PathBuf,
    pub map: PathBuf,
    pub disc: PathBuf,
    pub partner: PathBuf,
}

pub fn write_models(dir: &Path, seed: u64, partner_frames: usize) -> ModelFiles {
    let m = small_models(seed);
    let files = ModelFiles {
        hmm: dir.join("hmm.json"),
        map: dir.join("map.json"),
        disc: dir.join("disc.json"),
        partner: dir.join("partner.json"),
    };
    m.hmm.save(&files.hmm).unwrap();
    m.map.save(&files.map).unwrap();
    m.disc.save(&files.disc).unwrap();
    let (a, p) = gen_synthetic_interaction::<f64>(partner_frames, 0.8, seed + 100, &SyntheticConfig::default()).unwrap();
    PoseFile::from_sequences(&[&a, &p]).unwrap().save(&files.partner).unwrap();
    files
}

pub fn partner_frames(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let (_, p) = gen_synthetic_interaction::<f64>(n.max(2 * L), 0.8, seed, &SyntheticConfig::default()).unwrap();
    p.frames.into_iter().take(n).map(|f| f.0).collect()
}
