//! Interaction discriminator: a small convolutional classifier over paired
//! agent/partner windows estimating `P(real interaction)`. Trained by
//! mini-batch gradient descent with momentum on binary cross entropy;
//! backpropagation is written out by hand and checked against finite
//! differences.

mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};
use crate::signal::{InteractionWindow, ScaleParams};

pub use network::{Architecture, Layer, Network, Shape, Tensor};
pub use train::{build_corpus, train, CorpusConfig, EpochStats, TrainConfig, TrainReport};

/// Clamp applied to predictions inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub epochs: usize,
    pub seed: u64,
    pub final_train_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Trained classifier plus the scaling fitted on its training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams<T> {
    pub architecture: Architecture,
    pub weights: Vec<Vec<T>>,
    pub scale_params: Option<ScaleParams<T>>,
    #[serde(default)]
    pub metadata: Metadata,
}

impl<T: Real> ClassifierParams<T> {
    pub fn from_network(net: Network<T>, scale_params: Option<ScaleParams<T>>) -> Self {
        ClassifierParams {
            architecture: net.architecture,
            weights: net.weights,
            scale_params,
            metadata: Metadata::default(),
        }
    }

    pub fn network(&self) -> Network<T> {
        Network {
            architecture: self.architecture.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        if let Some(s) = &self.scale_params {
            if s.n_features() != self.architecture.features {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} scaled features", self.architecture.features),
                    got: s.n_features().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.architecture.window_len
    }

    /// Per-person pose dimension.
    pub fn pose_dim(&self) -> usize {
        self.architecture.features / 2
    }

    fn check_window(&self, w: &InteractionWindow<T>) -> Result<()> {
        if w.len() != self.window_len() || 2 * w.dim() != self.architecture.features {
            return Err(Error::ShapeMismatch {
                expected: format!("{} frames × {} features", self.window_len(), self.architecture.features),
                got: format!("{} frames × {} features", w.len(), 2 * w.dim()),
            });
        }
        Ok(())
    }

    /// `P(real)` of an already normalized window; dropout is off.
    pub fn predict(&self, window: &InteractionWindow<T>) -> Result<T> {
        self.check_window(window)?;
        let logit = self.network().logit(&window.to_matrix())?;
        Ok(sigmoid(logit))
    }

    /// Normalizes with the stored scale parameters, then predicts.
    pub fn score(&self, raw: &InteractionWindow<T>) -> Result<T> {
        match &self.scale_params {
            Some(s) => self.predict(&s.apply(raw)?),
            None => self.predict(raw),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped to `[ε, 1 - ε]`.
pub fn bce_loss<T: Real>(prediction: T, label: bool) -> T {
    let eps = T::c(BCE_EPS);
    let p = prediction.max(eps).min(T::one() - eps);
    if label {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Analytic gradient of the BCE loss for one window, one vector per layer.
pub fn loss_gradient<T: Real>(net: &Network<T>, matrix: &[T], label: bool) -> Result<Vec<Vec<T>>> {
    let trace = net.forward(net.input_from_matrix(matrix)?, None);
    let p = sigmoid(trace.output());
    let y = if label { T::one() } else { T::zero() };
    let mut grads = net.zero_grads();
    net.backward(&trace, p - y, &mut grads);
    Ok(grads)
}

/// Largest relative gap between backpropagated and central-difference
/// gradients (`h = 1e-5`) over every weight.
pub fn gradient_check(net: &Network<f64>, window: &InteractionWindow<f64>, label: bool) -> Result<f64> {
    let matrix = window.to_matrix();
    let analytic = loss_gradient(net, &matrix, label)?;
    // The unclamped loss keeps the finite difference smooth.
    let loss = |n: &Network<f64>| -> Result<f64> {
        let z = n.logit(&matrix)?;
        Ok(if label { softplus(-z) } else { softplus(z) })
    };
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for l in 0..net.weights.len() {
        for k in 0..net.weights[l].len() {
            let w0 = net.weights[l][k];
            probe.weights[l][k] = w0 + h;
            let up = loss(&probe)?;
            probe.weights[l][k] = w0 - h;
            let down = loss(&probe)?;
            probe.weights[l][k] = w0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[l][k];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::PoseVector;

    fn window(dim: usize, len: usize, seed: u64) -> InteractionWindow<f64> {
        let v = |t: usize, k: usize, s: f64| ((t * 31 + k * 7) as f64 * 0.173 + seed as f64 + s).sin();
        InteractionWindow::new(
            (0..len).map(|t| PoseVector((0..dim).map(|k| v(t, k, 0.0)).collect())).collect(),
            (0..len).map(|t| PoseVector((0..dim).map(|k| v(t, k, 1.3)).collect())).collect(),
            Some(true),
        )
        .unwrap()
    }

    fn small_arch() -> Architecture {
        Architecture::temporal(2, 12, 4, (4, 6), 8, 0.5).unwrap()
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5f64, true) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(0.5f64, false) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_loss(0.9f64, true) - 0.10536).abs() < 1e-5);
        assert!((bce_loss(0.9f64, false) + 0.1f64.ln()).abs() < 1e-12);
        assert!((bce_loss(1.0f64, false) + (1e-7f64).ln()).abs() < 1e-6);
        assert!(bce_loss(1.0f64, true) >= 0.0);
    }

    #[test]
    fn zero_logit_predicts_one_half() {
        let params = ClassifierParams::from_network(Network::<f64>::zeros(small_arch()).unwrap(), None);
        assert_eq!(params.predict(&window(2, 12, 0)).unwrap(), 0.5);
        assert!(params.predict(&window(3, 12, 0)).is_err());
        assert!(params.predict(&window(2, 11, 0)).is_err());
    }

    #[test]
    fn predictions_are_deterministic() {
        let net = Network::<f64>::init(Architecture::default_for(2, 24).unwrap(), 3).unwrap();
        let params = ClassifierParams::from_network(net, None);
        let w = window(2, 24, 5);
        let p = params.predict(&w).unwrap();
        assert_eq!(p, params.predict(&w).unwrap());
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..5 {
            let net = Network::<f64>::init(small_arch(), seed).unwrap();
            assert!(net.n_weights() <= 2000);
            for label in [true, false] {
                let err = gradient_check(&net, &window(2, 12, seed), label).unwrap();
                assert!(err < 1e-4, "seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn zero_net_output_bias_gradient() {
        let net = Network::<f64>::zeros(small_arch()).unwrap();
        let m = window(2, 12, 1).to_matrix();
        for (label, expect) in [(true, -0.5), (false, 0.5)] {
            let g = loss_gradient(&net, &m, label).unwrap();
            assert_eq!(*g.last().unwrap().last().unwrap(), expect);
        }
    }

    #[test]
    fn duplicate_hidden_units_get_equal_gradients() {
        let arch = Architecture {
            window_len: 4,
            features: 2,
            layers: vec![
                Layer::Dense { input: 8, output: 2 },
                Layer::Relu,
                Layer::Dense { input: 2, output: 1 },
            ],
        };
        let mut net = Network::<f64>::zeros(arch).unwrap();
        let row: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.2).collect();
        net.weights[0][..8].copy_from_slice(&row);
        net.weights[0][8..16].copy_from_slice(&row);
        net.weights[2] = vec![0.7, 0.7, 0.1];
        let g = loss_gradient(&net, &[0.5, 0.1, 0.9, 0.3, 0.2, 0.8, 0.4, 0.6], true).unwrap();
        assert_eq!(g[0][..8], g[0][8..16]);
        assert_eq!(g[2][0], g[2][1]);
    }

    #[test]
    fn negated_output_layer_mirrors_predictions() {
        let net = Network::<f64>::init(Architecture::default_for(2, 24).unwrap(), 9).unwrap();
        let mut flipped = net.clone();
        flipped.weights.last_mut().unwrap().iter_mut().for_each(|v| *v = -*v);
        let (a, b) = (ClassifierParams::from_network(net, None), ClassifierParams::from_network(flipped, None));
        for s in 0..10 {
            let w = window(2, 24, s);
            assert!((a.predict(&w).unwrap() + b.predict(&w).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
