use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::LayerSpec;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// A sequential network: an input shape, a list of layers and their
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Output shape of every layer.
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<Tensor<T>>>,
    seed: u64,
}

fn infer_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>, NnError> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(NnError::InvalidInput(format!(
            "input shape {input_shape:?} must be non-empty and positive"
        )));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Embedding { .. }) && i != 0 {
            return Err(NnError::ShapeMismatch {
                layer: i,
                detail: "embedding must be the first layer".into(),
            });
        }
        current = layer
            .output_shape(&current)
            .map_err(|detail| NnError::ShapeMismatch { layer: i, detail })?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}

impl Model<f32> {
    /// Glorot-uniform weights from a seeded generator, zero biases.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidInput("a model needs at least one layer".into()));
        }
        let shapes = infer_shapes(&input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|layer| match layer.param_shapes() {
                None => Vec::new(),
                Some((shapes, fan_in, fan_out)) => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    let mut tensors = Vec::with_capacity(shapes.len());
                    for (slot, shape) in shapes.iter().enumerate() {
                        let mut t = Tensor::zeros(shape);
                        if slot == 0 {
                            for v in t.data_mut() {
                                *v = rng.random_range(-limit..=limit);
                            }
                        }
                        tensors.push(t);
                    }
                    tensors
                }
            })
            .collect();
        Ok(Self {
            input_shape,
            layers,
            shapes,
            params,
            seed,
        })
    }
}

impl<T: Scalar> Model<T> {
    /// Assembles a model from explicit parameters, checking every shape.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Vec<Tensor<T>>>,
        seed: u64,
    ) -> Result<Self, NnError> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(NnError::InvalidInput(format!(
                "{} parameter groups for {} layers",
                params.len(),
                layers.len()
            )));
        }
        for (i, (layer, group)) in layers.iter().zip(&params).enumerate() {
            let expected = layer.param_shapes().map(|(s, _, _)| s).unwrap_or_default();
            let found: Vec<Vec<usize>> = group.iter().map(|t| t.shape().to_vec()).collect();
            if expected != found {
                return Err(NnError::ShapeMismatch {
                    layer: i,
                    detail: format!("parameters {found:?}, expected {expected:?}"),
                });
            }
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            params,
            seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("at least one layer")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<Tensor<T>>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Vec<Tensor<T>>] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|g| g.iter().map(Tensor::cast).collect())
                .collect(),
            seed: self.seed,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), NnError> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                detail: format!(
                    "input shape {:?}, model expects {:?}",
                    input.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Activations of every layer, the input first.
    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>, NnError> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&self.params[i], &acts[i], &self.shapes[i])?;
            acts.push(out);
        }
        Ok(acts)
    }

    /// Fingerprint of every branch taken in a forward trace.
    pub(crate) fn branch_signature(&self, acts: &[Tensor<T>]) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.branch_points(&acts[i], &acts[i + 1]).hash(&mut h);
        }
        h.finish()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.forward_trace(input)?.pop().expect("non-empty trace"))
    }

    /// Cross-entropy loss of one sample and its gradient w.r.t. every
    /// parameter. The model output is taken to be a probability vector.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        true_class: usize,
    ) -> Result<(T, Gradients<T>), NnError> {
        let acts = self.forward_trace(input)?;
        let probs = acts.last().expect("non-empty trace");
        let loss = loss_cross_entropy(probs, true_class)?;

        let mut grad = Tensor::zeros(probs.shape());
        let p = probs.data()[true_class];
        if p >= T::of(PROB_FLOOR) {
            grad.data_mut()[true_class] = -T::one() / p;
        }

        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let (gx, gp) = self.layers[i].backward(&self.params[i], &acts[i], &acts[i + 1], &grad)?;
            per_layer[i] = gp;
            match gx {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok((loss, Gradients { per_layer }))
    }
}

/// `-ln(probs[true_class])` with the probability clamped to [`PROB_FLOOR`].
pub fn loss_cross_entropy<T: Scalar>(probs: &Tensor<T>, true_class: usize) -> Result<T, NnError> {
    let p = *probs.data().get(true_class).ok_or(NnError::IndexOutOfRange {
        index: true_class,
        len: probs.len(),
    })?;
    Ok(-p.max(T::of(PROB_FLOOR)).ln())
}

/// Per-layer, per-slot gradients matching a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub per_layer: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Self {
            per_layer: model
                .params()
                .iter()
                .map(|g| g.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            for (ta, tb) in a.iter_mut().zip(b) {
                ta.add_assign(tb);
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.per_layer.iter_mut().flatten() {
            t.scale(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().flatten().all(Tensor::is_finite)
    }

    pub(crate) fn matches(&self, model: &Model<T>) -> bool {
        self.per_layer.len() == model.params().len()
            && self
                .per_layer
                .iter()
                .zip(model.params())
                .all(|(a, b)| {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
                })
    }
}
