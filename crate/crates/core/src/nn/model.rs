use rand::Rng;

use super::ops::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, conv2d_backward, conv2d_forward_cached,
    linear_backward, linear_forward, relu, relu_backward, softmax, softmax_cross_entropy,
    BatchNorm, BnCache, Conv2d, ConvCache, Linear, Mode,
};
use super::{NnError, Result, Tensor};
use crate::seed;
use crate::sensor::{TactileFrame, COLS, ROWS, TAXELS};

/// Layer widths of the network. Convolutions keep the spatial size
/// (3×3, padding 1, stride 1), so the flatten width is
/// `conv2_out * height * width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub conv1_out: usize,
    pub conv2_out: usize,
    pub fc1_out: usize,
    pub fc2_out: usize,
    pub classes: usize,
}

impl Architecture {
    /// The tactile classifier: 1×10×10 input, 64 and 128 conv channels,
    /// flatten to 12800, then 256, 128 and 8 outputs.
    pub const fn tactile() -> Self {
        Architecture {
            in_channels: 1,
            height: ROWS,
            width: COLS,
            kernel: 3,
            conv1_out: 64,
            conv2_out: 128,
            fc1_out: 256,
            fc2_out: 128,
            classes: 8,
        }
    }

    /// Reduced model for gradient checks: 1→2→3 channels on 6×6 input,
    /// linear 108→12→10→8.
    pub const fn reduced() -> Self {
        Architecture {
            in_channels: 1,
            height: 6,
            width: 6,
            kernel: 3,
            conv1_out: 2,
            conv2_out: 3,
            fc1_out: 12,
            fc2_out: 10,
            classes: 8,
        }
    }

    pub fn flat_dim(&self) -> usize {
        self.conv2_out * self.height * self.width
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Activation shapes after conv block 1, conv block 2, flatten, fc1,
    /// fc2 and fc3 for a batch of `n`.
    pub fn activation_shapes(&self, n: usize) -> Vec<Vec<usize>> {
        vec![
            vec![n, self.conv1_out, self.height, self.width],
            vec![n, self.conv2_out, self.height, self.width],
            vec![n, self.flat_dim()],
            vec![n, self.fc1_out],
            vec![n, self.fc2_out],
            vec![n, self.classes],
        ]
    }
}

/// All learnable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
}

/// Names of the learnable tensors, in [`ModelParams::learnable`] order.
pub const LEARNABLE_NAMES: [&str; 14] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "conv2.weight",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fc3.weight",
    "fc3.bias",
];

/// Uniform in `±1/sqrt(fan_in)`: Kaiming-uniform in fan-in mode with
/// negative slope √5.
fn kaiming_uniform(shape: &[usize], fan_in: usize, seed: u64) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut rng = seed::rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape and length agree")
}

impl ModelParams {
    /// Fresh parameters: Kaiming-uniform weights, zero biases and betas,
    /// unit gammas. Each weight tensor draws from its own seed stream.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let k = arch.kernel;
        let conv = |cin: usize, cout: usize, stream: u64| Conv2d {
            weight: kaiming_uniform(
                &[cout, cin, k, k],
                cin * k * k,
                seed::derive(seed, &[stream]),
            ),
            bias: Tensor::zeros(&[cout]),
            padding: arch.padding(),
        };
        let linear = |din: usize, dout: usize, stream: u64| Linear {
            weight: kaiming_uniform(&[dout, din], din, seed::derive(seed, &[stream])),
            bias: Tensor::zeros(&[dout]),
        };
        ModelParams {
            arch,
            conv1: conv(arch.in_channels, arch.conv1_out, 1),
            bn1: BatchNorm::new(arch.conv1_out),
            conv2: conv(arch.conv1_out, arch.conv2_out, 2),
            bn2: BatchNorm::new(arch.conv2_out),
            fc1: linear(arch.flat_dim(), arch.fc1_out, 3),
            fc2: linear(arch.fc1_out, arch.fc2_out, 4),
            fc3: linear(arch.fc2_out, arch.classes, 5),
        }
    }

    pub fn learnable(&self) -> [&Tensor; 14] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
            &self.fc3.weight,
            &self.fc3.bias,
        ]
    }

    pub fn learnable_mut(&mut self) -> [&mut Tensor; 14] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
            &mut self.fc3.weight,
            &mut self.fc3.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.learnable().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let a = &self.arch;
        let s = batch.shape();
        let n = s.first().copied().unwrap_or(0);
        if s.len() != 4 || s[1..] != [a.in_channels, a.height, a.width] {
            return Err(NnError::Shape {
                op: "model input",
                expected: vec![n, a.in_channels, a.height, a.width],
                got: s.to_vec(),
            });
        }
        if !batch.all_finite() {
            return Err(NnError::NonFinite("model input"));
        }
        Ok(n)
    }

    /// Train-mode forward pass. Updates the batch-norm running statistics
    /// and returns everything [`ModelParams::backward`] needs.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<ForwardCache> {
        let n = self.check_input(batch)?;
        let (z1, conv1) = conv2d_forward_cached(batch, &self.conv1)?;
        let (b1, bn1) = batchnorm_train(&z1, &mut self.bn1)?;
        let a1 = relu(&b1);
        let (z2, conv2) = conv2d_forward_cached(&a1, &self.conv2)?;
        let (b2, bn2) = batchnorm_train(&z2, &mut self.bn2)?;
        let a2 = relu(&b2);
        let flat = a2.clone().reshape(&[n, self.arch.flat_dim()])?;
        let h1 = relu(&linear_forward(&flat, &self.fc1)?);
        let h2 = relu(&linear_forward(&h1, &self.fc2)?);
        let logits = linear_forward(&h2, &self.fc3)?;
        if !logits.all_finite() {
            return Err(NnError::NonFinite("logits"));
        }
        Ok(ForwardCache {
            conv1,
            bn1,
            a1,
            conv2,
            bn2,
            a2,
            flat,
            h1,
            h2,
            logits,
        })
    }

    /// Eval-mode forward pass returning every published activation:
    /// conv block 1, conv block 2, flatten, fc1, fc2, logits.
    pub fn forward_eval_traced(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        let n = self.check_input(batch)?;
        let (z1, _) = conv2d_forward_cached(batch, &self.conv1)?;
        let a1 = relu(&batchnorm_eval(&z1, &self.bn1)?);
        let (z2, _) = conv2d_forward_cached(&a1, &self.conv2)?;
        let a2 = relu(&batchnorm_eval(&z2, &self.bn2)?);
        let flat = a2.clone().reshape(&[n, self.arch.flat_dim()])?;
        let h1 = relu(&linear_forward(&flat, &self.fc1)?);
        let h2 = relu(&linear_forward(&h1, &self.fc2)?);
        let logits = linear_forward(&h2, &self.fc3)?;
        if !logits.all_finite() {
            return Err(NnError::NonFinite("logits"));
        }
        Ok(vec![a1, a2, flat, h1, h2, logits])
    }

    /// Eval-mode logits `[N, classes]`. Rows depend only on their own input.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_eval_traced(batch)?.pop().expect("logits"))
    }

    /// Logits for `batch` in the given mode. Train mode updates running
    /// statistics but discards the cache; use [`Network`] to backpropagate.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.forward_train(batch).map(|c| c.logits),
            Mode::Eval => self.forward_eval(batch),
        }
    }

    /// Mean cross-entropy of the cached forward pass and its gradient with
    /// respect to every learnable tensor.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<(f64, Gradients)> {
        let n = cache.logits.shape()[0];
        let (loss, _, dlogits) = softmax_cross_entropy(&cache.logits, labels)?;

        let (fc3_w, fc3_b, dh2) = linear_backward(&cache.h2, &self.fc3, &dlogits)?;
        let dz2 = relu_backward(&cache.h2, &dh2);
        let (fc2_w, fc2_b, dh1) = linear_backward(&cache.h1, &self.fc2, &dz2)?;
        let dz1 = relu_backward(&cache.h1, &dh1);
        let (fc1_w, fc1_b, dflat) = linear_backward(&cache.flat, &self.fc1, &dz1)?;

        let a = &self.arch;
        let da2 = dflat.reshape(&[n, a.conv2_out, a.height, a.width])?;
        let db2 = relu_backward(&cache.a2, &da2);
        let (dz_conv2, bn2_gamma, bn2_beta) = batchnorm_backward(&cache.bn2, &self.bn2, &db2)?;
        let g2 = conv2d_backward(&cache.conv2, &self.conv2, &dz_conv2, true)?;
        let da1 = g2.input.expect("requested input gradient");
        let db1 = relu_backward(&cache.a1, &da1);
        let (dz_conv1, bn1_gamma, bn1_beta) = batchnorm_backward(&cache.bn1, &self.bn1, &db1)?;
        let g1 = conv2d_backward(&cache.conv1, &self.conv1, &dz_conv1, false)?;

        Ok((
            loss,
            Gradients {
                tensors: [
                    g1.weight, g1.bias, bn1_gamma, bn1_beta, g2.weight, g2.bias, bn2_gamma,
                    bn2_beta, fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b,
                ],
            },
        ))
    }
}

/// Activations kept from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    conv1: ConvCache,
    bn1: BnCache,
    a1: Tensor,
    conv2: ConvCache,
    bn2: BnCache,
    a2: Tensor,
    flat: Tensor,
    h1: Tensor,
    h2: Tensor,
    pub logits: Tensor,
}

impl ForwardCache {
    /// Shapes of conv block 1, conv block 2, flatten, fc1, fc2 and logits.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        [
            &self.a1,
            &self.a2,
            &self.flat,
            &self.h1,
            &self.h2,
            &self.logits,
        ]
        .iter()
        .map(|t| t.shape().to_vec())
        .collect()
    }
}

/// Gradients in [`LEARNABLE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: [Tensor; 14],
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        LEARNABLE_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| &self.tensors[i])
    }
}

/// Parameters plus the cache of the most recent train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Network {
    pub params: ModelParams,
    cache: Option<ForwardCache>,
}

impl Network {
    pub fn new(params: ModelParams) -> Self {
        Network {
            params,
            cache: None,
        }
    }

    /// Runs a forward pass. Train mode keeps the activations for
    /// [`Network::backward`]; eval mode drops any earlier cache.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let cache = self.params.forward_train(batch)?;
                let logits = cache.logits.clone();
                self.cache = Some(cache);
                Ok(logits)
            }
            Mode::Eval => {
                self.cache = None;
                self.params.forward_eval(batch)
            }
        }
    }

    /// Consumes the cached forward pass.
    pub fn backward(&mut self, labels: &[usize]) -> Result<(f64, Gradients)> {
        let cache = self.cache.take().ok_or(NnError::NoCachedForward)?;
        self.params.backward(&cache, labels)
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrediction {
    pub class_id: usize,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Readings scaled to `[0, 1]` as a `[N, 1, 10, 10]` batch.
pub fn frames_to_tensor<'a, I>(frames: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a TactileFrame>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for f in frames {
        data.extend(f.readings.iter().map(|&r| f64::from(r) / 255.0));
        n += 1;
    }
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    debug_assert_eq!(data.len(), n * TAXELS);
    Tensor::new(&[n, 1, ROWS, COLS], data)
}

impl ClassPrediction {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let t = Tensor::new(&[1, logits.len()], logits.to_vec())?;
        let probs = softmax(&t)?.into_data();
        Ok(ClassPrediction {
            class_id: argmax(logits),
            probs,
            logits: logits.to_vec(),
        })
    }
}

/// Eval-mode classification of one frame.
pub fn predict(model: &ModelParams, frame: &TactileFrame) -> Result<ClassPrediction> {
    let logits = model.forward_eval(&frames_to_tensor([frame])?)?;
    ClassPrediction::from_logits(logits.data())
}

/// Eval-mode classification of many frames, in chunks.
pub fn predict_batch(
    model: &ModelParams,
    frames: &[&TactileFrame],
    chunk: usize,
) -> Result<Vec<ClassPrediction>> {
    let mut out = Vec::with_capacity(frames.len());
    for part in frames.chunks(chunk.max(1)) {
        let logits = model.forward_eval(&frames_to_tensor(part.iter().copied())?)?;
        for row in logits.data().chunks_exact(model.arch.classes) {
            out.push(ClassPrediction::from_logits(row)?);
        }
    }
    Ok(out)
}
