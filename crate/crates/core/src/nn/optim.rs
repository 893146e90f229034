use super::model::{Gradients, ModelParams};
use super::Tensor;

/// SGD with classical momentum: `v = momentum*v + g; p -= lr*v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut ModelParams, grads: &Gradients) {
        let velocity = self.velocity.get_or_insert_with(|| {
            grads
                .tensors
                .iter()
                .map(|g| Tensor::zeros(g.shape()))
                .collect()
        });
        for ((p, g), v) in model
            .learnable_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(velocity.iter_mut())
        {
            assert_eq!(
                p.shape(),
                g.shape(),
                "gradient shape does not match parameter"
            );
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.learning_rate * *vv;
            }
        }
    }
}
