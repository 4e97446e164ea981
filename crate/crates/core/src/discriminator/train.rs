use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, Network};
use super::{bce_loss, ClassifierParams, Metadata};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};
use crate::signal::{augment, negative_sample, normalize01, InteractionWindow, Recording, ScaleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Fraction of the dataset held out for evaluation.
    pub holdout: f64,
    /// Per-sample augmentation each epoch; zero disables.
    pub temporal_jitter: usize,
    pub spatial_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            holdout: 0.2,
            temporal_jitter: 1,
            spatial_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training BCE of the initial weights.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochStats> {
        self.best_epoch.map(|i| &self.epochs[i])
    }
}

fn evaluate<T: Real>(net: &Network<T>, data: &[(Vec<T>, bool)]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (m, y) in data {
        let p = sigmoid(net.logit(m)?);
        loss += bce_loss(p, *y).as_f64();
        correct += ((p >= T::c(0.5)) == *y) as usize;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains on labeled, already-normalized windows. Returns the weights of the
/// epoch with the best held-out accuracy.
pub fn train<T: Real>(
    dataset: &[InteractionWindow<T>],
    architecture: Architecture,
    cfg: &TrainConfig,
    rng_seed: u64,
) -> Result<(ClassifierParams<T>, TrainReport)> {
    let labels: Vec<bool> = dataset
        .iter()
        .map(|w| w.label.ok_or_else(|| Error::InvalidDataset("unlabeled window".into())))
        .collect::<Result<_>>()?;
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::InvalidDataset("dataset needs both real and fake windows".into()));
    }
    let (len, dim) = (dataset[0].len(), dataset[0].dim());
    if dataset.iter().any(|w| w.len() != len || w.dim() != dim) {
        return Err(Error::InvalidDataset("window shapes differ".into()));
    }
    if architecture.window_len != len || architecture.features != 2 * dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{}×{}", architecture.window_len, architecture.features),
            got: format!("{len}×{}", 2 * dim),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((dataset.len() as f64) * cfg.holdout).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test.min(dataset.len() - 1));
    let as_pairs = |idx: &[usize]| -> Vec<(Vec<T>, bool)> {
        idx.iter().map(|&i| (dataset[i].to_matrix(), labels[i])).collect()
    };
    let train_set = as_pairs(train_idx);
    let test_set = as_pairs(test_idx);

    let mut architecture = architecture;
    let train_matrices: Vec<Vec<T>> = train_set.iter().map(|(m, _)| m.clone()).collect();
    architecture.fit_standardize(&train_matrices);
    let mut net = Network::init(architecture, rng.random())?;
    let (initial_loss, _) = evaluate(&net, &train_set)?;
    let mut report = TrainReport {
        initial_train_loss: initial_loss,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        n_train: train_set.len(),
        n_test: test_set.len(),
    };
    let mut best_weights = net.weights.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut velocity = net.zero_grads();
    let lr = T::c(cfg.learning_rate);
    let mu = T::c(cfg.momentum);
    let batch = cfg.batch_size.max(1);
    let augmenting = cfg.temporal_jitter > 0 || cfg.spatial_noise > 0.0;
    let mut order: Vec<usize> = train_idx.to_vec();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grads = net.zero_grads();
            for &i in chunk {
                let matrix = if augmenting {
                    augment(&dataset[i], cfg.temporal_jitter, T::c(cfg.spatial_noise), rng.random())?
                        .to_matrix()
                } else {
                    dataset[i].to_matrix()
                };
                let trace = net.forward(net.input_from_matrix(&matrix)?, Some(&mut rng));
                let p = sigmoid(trace.output());
                let y = if labels[i] { T::one() } else { T::zero() };
                net.backward(&trace, p - y, &mut grads);
            }
            let scale = lr / T::from_usize_lossy(chunk.len());
            for ((w, v), g) in net.weights.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
                for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = mu * *vi - scale * gi;
                    *wi = *wi + *vi;
                }
            }
        }
        let (train_loss, train_accuracy) = evaluate(&net, &train_set)?;
        let (_, test_accuracy) = evaluate(&net, &test_set)?;
        if !train_loss.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        let score = if test_set.is_empty() { train_accuracy } else { test_accuracy };
        if score > best_score {
            best_score = score;
            best_weights = net.weights.clone();
            report.best_epoch = Some(epoch);
        }
        report.epochs.push(EpochStats {
            train_loss,
            train_accuracy,
            test_accuracy,
        });
    }

    net.weights = best_weights;
    let mut params = ClassifierParams::from_network(net, None);
    params.metadata = Metadata {
        epochs: cfg.epochs,
        seed: rng_seed,
        final_train_accuracy: report.best().map(|e| e.train_accuracy),
        final_test_accuracy: report.best().map(|e| e.test_accuracy),
        best_epoch: report.best_epoch,
    };
    Ok((params, report))
}

/// How a labeled corpus is cut from a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub window_len: usize,
    pub stride: usize,
    /// Minimum time shift of the fake agent segments; at least `window_len`.
    pub shift_min: usize,
    /// Total windows (half real, half fake); `None` keeps every real window.
    pub n_windows: Option<usize>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            window_len: 24,
            stride: 2,
            shift_min: 48,
            n_windows: None,
        }
    }
}

/// Real windows plus one negative sample each, normalized to [0, 1] jointly.
pub fn build_corpus<T: Real>(
    recording: &Recording<T>,
    cfg: &CorpusConfig,
    rng_seed: u64,
) -> Result<(Vec<InteractionWindow<T>>, ScaleParams<T>)> {
    let mut real = recording.windows(cfg.window_len, cfg.stride);
    if let Some(n) = cfg.n_windows {
        let want = n / 2;
        if real.len() < want {
            return Err(Error::InvalidDataset(format!(
                "recording yields {} real windows, {want} requested",
                real.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5EED);
        real.shuffle(&mut rng);
        real.truncate(want);
        real.sort_by_key(|w| w.origin);
    }
    let fakes = negative_sample(recording, &real, cfg.shift_min, rng_seed)?;
    let mut all = real;
    all.extend(fakes.windows);
    normalize01(&all)
}
