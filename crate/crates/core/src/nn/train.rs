use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{Gradients, Model};
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f32,
    /// Drives shuffling only; initialization uses the model's own seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 20,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is accepted and means "no update".
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// SGD with classical momentum: `v = momentum * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: Option<Gradients<f32>>,
}

impl Sgd {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut Model<f32>, grads: &Gradients<f32>) -> Result<(), NnError> {
        if !grads.matches(model) {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                detail: "gradient shapes do not match the model parameters".into(),
            });
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| Gradients::zeros_like(model));
        for ((params, vel), grad) in model
            .params_mut()
            .iter_mut()
            .zip(velocity.per_layer.iter_mut())
            .zip(&grads.per_layer)
        {
            for ((p, v), g) in params.iter_mut().zip(vel.iter_mut()).zip(grad) {
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = self.momentum * *vv + *gv;
                    *pv -= self.learning_rate * *vv;
                }
            }
        }
        Ok(())
    }
}

/// Summed loss and gradients of a batch. Per-sample work runs in parallel;
/// the reduction is always in sample order.
pub fn batch_gradients(
    model: &Model<f32>,
    batch: &[&(Tensor<f32>, usize)],
) -> Result<(f64, Gradients<f32>), NnError> {
    let results: Vec<(f32, Gradients<f32>)> = batch
        .par_iter()
        .map(|(x, y)| model.backward(x, *y))
        .collect::<Result<_, _>>()?;
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0f64;
    for (l, g) in &results {
        loss += *l as f64;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Mini-batch training. Returns the mean sample loss of every epoch,
/// measured on the fly before each batch's update.
pub fn train(
    mut model: Model<f32>,
    dataset: &[(Tensor<f32>, usize)],
    config: &TrainConfig,
) -> Result<(Model<f32>, Vec<f64>), NnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut sgd = Sgd::new(config);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&(Tensor<f32>, usize)> = chunk.iter().map(|i| &dataset[*i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch)?;
            epoch_loss += loss;
            grads.scale(1.0 / batch.len() as f32);
            sgd.step(&mut model, &grads)?;
        }
        let mean = epoch_loss / dataset.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        history.push(mean);
    }
    Ok((model, history))
}

/// Mean cross-entropy of `model` over `dataset` without updating anything.
pub fn mean_loss(model: &Model<f32>, dataset: &[(Tensor<f32>, usize)]) -> Result<f64, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let losses: Vec<f64> = dataset
        .par_iter()
        .map(|(x, y)| {
            let p = model.forward(x)?;
            super::loss_cross_entropy(&p, *y).map(|l| l as f64)
        })
        .collect::<Result<_, NnError>>()?;
    Ok(losses.iter().sum::<f64>() / dataset.len() as f64)
}
