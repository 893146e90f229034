#![allow(dead_code)]

use dogtouch::dataset::{generate, split, Dataset, GenerateParams, SplitIndices};
use dogtouch::nn::model::LEARNABLE_NAMES;
use dogtouch::nn::ops::softmax_cross_entropy;
use dogtouch::nn::{Architecture, ModelParams, Tensor};
use dogtouch::seed;
use dogtouch::sensor::SensorSpec;
use dogtouch::textures::builtin_catalog;
use rand::Rng;

pub const VAL_FRACTION: f64 = 0.1;

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct-sum zero-padded cross-correlation, one output value at a time.
pub fn conv_reference(x: &Tensor, w: &Tensor, b: &Tensor, pad: usize) -> Tensor {
    let [n, c, h, wd]: [usize; 4] = x.shape().try_into().unwrap();
    let [k, _, kh, kw]: [usize; 4] = w.shape().try_into().unwrap();
    let (ho, wo) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
    let mut out = vec![0.0; n * k * ho * wo];
    for s in 0..n {
        for o in 0..k {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b.data()[o];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y + i) as isize - pad as isize;
                                let ix = (xx + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((s * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((s * k + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, k, ho, wo], out).unwrap()
}

fn train_loss(model: &ModelParams, batch: &Tensor, labels: &[usize]) -> f64 {
    let mut m = model.clone();
    let cache = m.forward_train(batch).unwrap();
    softmax_cross_entropy(&cache.logits, labels).unwrap().0
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: &'static str,
    pub checked: usize,
}

/// Central differences against backprop for every learnable element.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6); the floor keeps
/// gradients that are zero up to rounding (conv biases ahead of batch
/// norm) from dividing noise by noise.
pub fn gradient_check(arch: Architecture, batch_size: usize, seed_value: u64, h: f64) -> GradCheck {
    let mut rng = seed::rng(seed_value);
    let model = ModelParams::init(arch, seed_value);
    let batch = random_tensor(
        &[batch_size, arch.in_channels, arch.height, arch.width],
        &mut rng,
    );
    let labels: Vec<usize> = (0..batch_size).map(|i| i % arch.classes).collect();

    let mut m = model.clone();
    let cache = m.forward_train(&batch).unwrap();
    let (_, grads) = model.backward(&cache, &labels).unwrap();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: "",
        checked: 0,
    };
    for (p, name) in LEARNABLE_NAMES.iter().enumerate() {
        let analytic = &grads.tensors[p];
        for e in 0..analytic.len() {
            let mut plus = model.clone();
            plus.learnable_mut()[p].data_mut()[e] += h;
            let mut minus = model.clone();
            minus.learnable_mut()[p].data_mut()[e] -= h;
            let numeric = (train_loss(&plus, &batch, &labels)
                - train_loss(&minus, &batch, &labels))
                / (2.0 * h);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = name;
            }
            out.checked += 1;
        }
    }
    out
}

pub fn dataset(per_class: usize, sigma: f64, master_seed: u64) -> Dataset {
    let p = GenerateParams {
        per_class,
        noise_sigma: sigma,
        master_seed,
        ..GenerateParams::default()
    };
    generate(&builtin_catalog(), &SensorSpec::default(), &p).unwrap()
}

pub fn standard_split(ds: &Dataset) -> SplitIndices {
    split(ds, VAL_FRACTION, seed::DEFAULT_SEED).unwrap()
}
