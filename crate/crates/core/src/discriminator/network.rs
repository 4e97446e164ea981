use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Activation tensor laid out as `channels × height (time) × width (features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Shape,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.h + y) * self.shape.w + x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Fixed per-feature `(x - mean) * scale` on a `1 × L × w` input; not
    /// trained, fitted from the training split.
    Standardize {
        mean: Vec<f64>,
        scale: Vec<f64>,
    },
    /// Affine map applied to every time step of a single-channel input
    /// (`1 × L × input`). With `to_channels` the outputs become channels
    /// (`output × L × 1`), otherwise the feature axis (`1 × L × output`).
    FrameAffine {
        input: usize,
        output: usize,
        to_channels: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    Dense {
        input: usize,
        output: usize,
    },
    Relu,
    /// Inverted dropout; identity at inference.
    Dropout {
        rate: f64,
    },
}

impl Layer {
    pub fn identity_standardize(features: usize) -> Self {
        Layer::Standardize {
            mean: vec![0.0; features],
            scale: vec![1.0; features],
        }
    }

    pub fn n_weights(&self) -> usize {
        match *self {
            Layer::FrameAffine { input, output, .. } => output * input + output,
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel.0 * kernel.1 + out_channels,
            Layer::Dense { input, output } => output * input + output,
            Layer::Standardize { .. } | Layer::Relu | Layer::Dropout { .. } => 0,
        }
    }

    /// Fan-in used for He initialization.
    fn fan_in(&self) -> usize {
        match *self {
            Layer::FrameAffine { input, .. } | Layer::Dense { input, .. } => input,
            Layer::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel.0 * kernel.1,
            _ => 1,
        }
    }

    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        let mismatch = |what: &str| Error::ShapeMismatch {
            expected: what.to_string(),
            got: format!("{}×{}×{}", s.c, s.h, s.w),
        };
        match *self {
            Layer::Standardize { ref mean, ref scale } => {
                if s.c != 1 || s.w != mean.len() || mean.len() != scale.len() {
                    return Err(mismatch(&format!("1×L×{}", mean.len())));
                }
                Ok(s)
            }
            Layer::FrameAffine {
                input,
                output,
                to_channels,
            } => {
                if s.c != 1 || s.w != input {
                    return Err(mismatch(&format!("1×L×{input}")));
                }
                Ok(if to_channels {
                    Shape::new(output, s.h, 1)
                } else {
                    Shape::new(1, s.h, output)
                })
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if s.c != in_channels {
                    return Err(mismatch(&format!("{in_channels} channels")));
                }
                let (ph, pw) = (s.h + 2 * padding.0, s.w + 2 * padding.1);
                if ph < kernel.0 || pw < kernel.1 || stride.0 == 0 || stride.1 == 0 {
                    return Err(mismatch(&format!("input covering kernel {kernel:?}")));
                }
                Ok(Shape::new(
                    out_channels,
                    (ph - kernel.0) / stride.0 + 1,
                    (pw - kernel.1) / stride.1 + 1,
                ))
            }
            Layer::Dense { input, output } => {
                if s.len() != input {
                    return Err(mismatch(&format!("{input} values")));
                }
                Ok(Shape::new(output, 1, 1))
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(s),
        }
    }
}

/// Ordered layer stack from an `L × 2d` window to a single logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub window_len: usize,
    /// `2d`: agent then partner coordinates per frame.
    pub features: usize,
    pub layers: Vec<Layer>,
}

impl Architecture {
    pub fn input_shape(&self) -> Shape {
        Shape::new(1, self.window_len, self.features)
    }

    /// Shapes after every layer, checking that the stack ends in one value.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input_shape()];
        for l in &self.layers {
            let next = l.output_shape(*shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        if shapes.last().map(|s| s.len()) != Some(1) {
            return Err(invalid("architecture does not end in a single output"));
        }
        Ok(shapes)
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(Layer::n_weights).sum()
    }

    /// Sets every `Standardize` layer to the per-feature mean and inverse
    /// standard deviation of the given row-major `L × features` matrices.
    /// Constant features keep scale 1.
    pub fn fit_standardize<T: Real>(&mut self, matrices: &[Vec<T>]) {
        let f = self.features;
        let mut sum = vec![0.0; f];
        let mut sq = vec![0.0; f];
        let mut n = 0usize;
        for m in matrices {
            for row in m.chunks(f) {
                for (k, v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return;
        }
        let mu: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let inv: Vec<f64> = sq
            .iter()
            .zip(&mu)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for layer in &mut self.layers {
            if let Layer::Standardize { mean, scale } = layer {
                if mean.len() == f {
                    mean.clone_from(&mu);
                    scale.clone_from(&inv);
                }
            }
        }
    }

    fn conv_t(in_channels: usize, out_channels: usize) -> Layer {
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel: (3, 1),
            stride: (2, 1),
            padding: (0, 0),
        }
    }

    /// Per-frame affine (2d → 16), two stride-2 temporal convolutions
    /// (16 → 16 → 32), dense 64 with dropout 0.5, dense 1.
    pub fn default_for(dim: usize, window_len: usize) -> Result<Self> {
        Self::temporal(dim, window_len, 16, (16, 32), 64, 0.5)
    }

    /// Same layout as [`Architecture::default_for`] with custom widths.
    pub fn temporal(
        dim: usize,
        window_len: usize,
        frame_width: usize,
        channels: (usize, usize),
        hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        let mut layers = vec![
            Layer::identity_standardize(2 * dim),
            Layer::FrameAffine {
                input: 2 * dim,
                output: frame_width,
                to_channels: true,
            },
            Layer::Relu,
            Self::conv_t(frame_width, channels.0),
            Layer::Relu,
            Self::conv_t(channels.0, channels.1),
            Layer::Relu,
        ];
        let partial = Architecture {
            window_len,
            features: 2 * dim,
            layers: layers.clone(),
        };
        let mut s = partial.input_shape();
        for l in &partial.layers {
            s = l.output_shape(s)?;
        }
        layers.push(Layer::Dense {
            input: s.len(),
            output: hidden,
        });
        layers.push(Layer::Relu);
        if dropout > 0.0 {
            layers.push(Layer::Dropout { rate: dropout });
        }
        layers.push(Layer::Dense {
            input: hidden,
            output: 1,
        });
        let arch = Architecture {
            window_len,
            features: 2 * dim,
            layers,
        };
        arch.shapes()?;
        Ok(arch)
    }

    /// The published 2-D CNN: affine over the feature axis (2d → 48), three
    /// 3×3 convolutions (16, 32, 64 channels; the last two stride 2 with
    /// temporal padding 1), dense 128 with dropout 0.5, dense 1. With
    /// `d = 28` and `L = 20` the flattened size is 3200.
    pub fn published(dim: usize, window_len: usize) -> Result<Self> {
        let conv = |i, o, s: usize, p: usize| Layer::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: (3, 3),
            stride: (s, s),
            padding: (p, 0),
        };
        let mut layers = vec![
            Layer::identity_standardize(2 * dim),
            Layer::FrameAffine {
                input: 2 * dim,
                output: 48,
                to_channels: false,
            },
            Layer::Relu,
            conv(1, 16, 1, 0),
            Layer::Relu,
            conv(16, 32, 2, 1),
            Layer::Relu,
            conv(32, 64, 2, 1),
            Layer::Relu,
        ];
        let mut s = Shape::new(1, window_len, 2 * dim);
        for l in &layers {
            s = l.output_shape(s)?;
        }
        layers.extend([
            Layer::Dense {
                input: s.len(),
                output: 128,
            },
            Layer::Relu,
            Layer::Dropout { rate: 0.5 },
            Layer::Dense {
                input: 128,
                output: 1,
            },
        ]);
        let arch = Architecture {
            window_len,
            features: 2 * dim,
            layers,
        };
        arch.shapes()?;
        Ok(arch)
    }
}

/// Network weights, one flat vector per layer (`W` row-major, then bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    pub architecture: Architecture,
    pub weights: Vec<Vec<T>>,
}

/// Forward activations kept for backpropagation.
pub(crate) struct Trace<T> {
    activations: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
}

impl<T: Real> Network<T> {
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        architecture.shapes()?;
        let weights = architecture
            .layers
            .iter()
            .map(|l| vec![T::zero(); l.n_weights()])
            .collect();
        Ok(Network {
            architecture,
            weights,
        })
    }

    /// He-normal weights, zero biases.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(architecture)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, w) in net.architecture.layers.iter().zip(net.weights.iter_mut()) {
            let n = layer.n_weights();
            if n == 0 {
                continue;
            }
            let n_bias = match *layer {
                Layer::FrameAffine { output, .. } | Layer::Dense { output, .. } => output,
                Layer::Conv2d { out_channels, .. } => out_channels,
                _ => 0,
            };
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in w.iter_mut().take(n - n_bias) {
                *v = T::c(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    pub fn n_weights(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.shapes()?;
        if self.weights.len() != self.architecture.layers.len()
            || self
                .architecture
                .layers
                .iter()
                .zip(&self.weights)
                .any(|(l, w)| l.n_weights() != w.len())
        {
            return Err(invalid("weight arrays do not match the architecture"));
        }
        if self.weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite weights"));
        }
        Ok(())
    }

    pub fn input_from_matrix(&self, matrix: &[T]) -> Result<Tensor<T>> {
        let shape = self.architecture.input_shape();
        if matrix.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}×{} window", shape.h, shape.w),
                got: format!("{} values", matrix.len()),
            });
        }
        Ok(Tensor {
            shape,
            data: matrix.to_vec(),
        })
    }

    /// Logit for one input. `dropout_rng` enables training-mode dropout.
    pub(crate) fn forward(
        &self,
        input: Tensor<T>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Trace<T> {
        let mut activations = vec![input];
        let mut masks = Vec::with_capacity(self.weights.len());
        for (layer, w) in self.architecture.layers.iter().zip(&self.weights) {
            let x = activations.last().expect("input present");
            let (y, mask) = forward_layer(layer, w, x, dropout_rng.as_deref_mut());
            activations.push(y);
            masks.push(mask);
        }
        Trace { activations, masks }
    }

    pub fn logit(&self, matrix: &[T]) -> Result<T> {
        let trace = self.forward(self.input_from_matrix(matrix)?, None);
        Ok(trace.output())
    }

    /// Accumulates `d loss / d weights` into `grads` given `d loss / d logit`.
    pub(crate) fn backward(&self, trace: &Trace<T>, d_logit: T, grads: &mut [Vec<T>]) {
        let mut g = Tensor {
            shape: Shape::new(1, 1, 1),
            data: vec![d_logit],
        };
        for (k, layer) in self.architecture.layers.iter().enumerate().rev() {
            let x = &trace.activations[k];
            let y = &trace.activations[k + 1];
            g = backward_layer(layer, &self.weights[k], x, y, trace.masks[k].as_deref(), &g, &mut grads[k]);
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect()
    }
}

impl<T: Real> Trace<T> {
    pub(crate) fn output(&self) -> T {
        self.activations.last().expect("output present").data[0]
    }
}

fn forward_layer<T: Real>(
    layer: &Layer,
    w: &[T],
    x: &Tensor<T>,
    rng: Option<&mut ChaCha8Rng>,
) -> (Tensor<T>, Option<Vec<T>>) {
    let out_shape = layer.output_shape(x.shape).expect("shapes validated");
    let mut y = Tensor::zeros(out_shape);
    match *layer {
        Layer::Standardize { ref mean, ref scale } => {
            let w = mean.len();
            for (i, (yo, &xi)) in y.data.iter_mut().zip(&x.data).enumerate() {
                *yo = (xi - T::c(mean[i % w])) * T::c(scale[i % w]);
            }
        }
        Layer::FrameAffine {
            input,
            output,
            to_channels,
        } => {
            let bias = &w[output * input..];
            for t in 0..x.shape.h {
                let row = &x.data[t * input..(t + 1) * input];
                for o in 0..output {
                    let wr = &w[o * input..(o + 1) * input];
                    let v = bias[o] + crate::scalar::dot(wr, row);
                    let idx = if to_channels { y.idx(o, t, 0) } else { y.idx(0, t, o) };
                    y.data[idx] = v;
                }
            }
        }
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let bias = &w[out_channels * in_channels * kernel.0 * kernel.1..];
            for oc in 0..out_channels {
                for oy in 0..out_shape.h {
                    for ox in 0..out_shape.w {
                        let mut acc = bias[oc];
                        for ic in 0..in_channels {
                            for ky in 0..kernel.0 {
                                let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                                if iy < 0 || iy as usize >= x.shape.h {
                                    continue;
                                }
                                for kx in 0..kernel.1 {
                                    let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                                    if ix < 0 || ix as usize >= x.shape.w {
                                        continue;
                                    }
                                    let wi = ((oc * in_channels + ic) * kernel.0 + ky) * kernel.1 + kx;
                                    acc = acc + w[wi] * x.data[x.idx(ic, iy as usize, ix as usize)];
                                }
                            }
                        }
                        let i = y.idx(oc, oy, ox);
                        y.data[i] = acc;
                    }
                }
            }
        }
        Layer::Dense { input, output } => {
            let bias = &w[output * input..];
            for o in 0..output {
                y.data[o] = bias[o] + crate::scalar::dot(&w[o * input..(o + 1) * input], &x.data);
            }
        }
        Layer::Relu => {
            for (yo, &xi) in y.data.iter_mut().zip(&x.data) {
                *yo = xi.max(T::zero());
            }
        }
        Layer::Dropout { rate } => match rng {
            Some(rng) if rate > 0.0 => {
                let keep = T::c(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..x.data.len())
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                for ((yo, &xi), &m) in y.data.iter_mut().zip(&x.data).zip(&mask) {
                    *yo = xi * m;
                }
                return (y, Some(mask));
            }
            _ => y.data.copy_from_slice(&x.data),
        },
    }
    (y, None)
}

fn backward_layer<T: Real>(
    layer: &Layer,
    w: &[T],
    x: &Tensor<T>,
    y: &Tensor<T>,
    mask: Option<&[T]>,
    gy: &Tensor<T>,
    gw: &mut [T],
) -> Tensor<T> {
    let mut gx = Tensor::zeros(x.shape);
    match *layer {
        Layer::Standardize { ref scale, .. } => {
            let n = scale.len();
            for (i, (gxi, &gyi)) in gx.data.iter_mut().zip(&gy.data).enumerate() {
                *gxi = gyi * T::c(scale[i % n]);
            }
        }
        Layer::FrameAffine {
            input,
            output,
            to_channels,
        } => {
            let bias_off = output * input;
            for t in 0..x.shape.h {
                let row = &x.data[t * input..(t + 1) * input];
                for o in 0..output {
                    let g = gy.data[if to_channels { gy.idx(o, t, 0) } else { gy.idx(0, t, o) }];
                    if g == T::zero() {
                        continue;
                    }
                    gw[bias_off + o] = gw[bias_off + o] + g;
                    for i in 0..input {
                        gw[o * input + i] = gw[o * input + i] + g * row[i];
                        gx.data[t * input + i] = gx.data[t * input + i] + g * w[o * input + i];
                    }
                }
            }
        }
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let bias_off = out_channels * in_channels * kernel.0 * kernel.1;
            for oc in 0..out_channels {
                for oy in 0..gy.shape.h {
                    for ox in 0..gy.shape.w {
                        let g = gy.data[gy.idx(oc, oy, ox)];
                        if g == T::zero() {
                            continue;
                        }
                        gw[bias_off + oc] = gw[bias_off + oc] + g;
                        for ic in 0..in_channels {
                            for ky in 0..kernel.0 {
                                let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                                if iy < 0 || iy as usize >= x.shape.h {
                                    continue;
                                }
                                for kx in 0..kernel.1 {
                                    let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                                    if ix < 0 || ix as usize >= x.shape.w {
                                        continue;
                                    }
                                    let wi = ((oc * in_channels + ic) * kernel.0 + ky) * kernel.1 + kx;
                                    let xi = x.idx(ic, iy as usize, ix as usize);
                                    gw[wi] = gw[wi] + g * x.data[xi];
                                    gx.data[xi] = gx.data[xi] + g * w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        Layer::Dense { input, output } => {
            let bias_off = output * input;
            for o in 0..output {
                let g = gy.data[o];
                if g == T::zero() {
                    continue;
                }
                gw[bias_off + o] = gw[bias_off + o] + g;
                for i in 0..input {
                    gw[o * input + i] = gw[o * input + i] + g * x.data[i];
                    gx.data[i] = gx.data[i] + g * w[o * input + i];
                }
            }
        }
        Layer::Relu => {
            for ((gxi, &gyi), &yi) in gx.data.iter_mut().zip(&gy.data).zip(&y.data) {
                *gxi = if yi > T::zero() { gyi } else { T::zero() };
            }
        }
        Layer::Dropout { .. } => match mask {
            Some(m) => {
                for ((gxi, &gyi), &mi) in gx.data.iter_mut().zip(&gy.data).zip(m) {
                    *gxi = gyi * mi;
                }
            }
            None => gx.data.copy_from_slice(&gy.data),
        },
    }
    gx
}
