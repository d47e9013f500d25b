//! Classifier model: layer stack, forward inference and input gradients.

use super::layer::{Layer, LayerKind, LayerShapeIssue, ParamGrad, Saved};
use crate::image::{ImageBuffer, CHANNELS};
use crate::tensor::Tensor;

/// How display values in `[0, 255]` map onto network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelNorm {
    /// `v / 255`, so display 0 is input 0.
    Unit01,
    /// `v / 127.5 - 1`, so display 127.5 is input 0.
    Signed11,
}

impl PixelNorm {
    #[inline]
    pub fn normalize(self, v: f64) -> f64 {
        match self {
            PixelNorm::Unit01 => v / 255.0,
            PixelNorm::Signed11 => v / 127.5 - 1.0,
        }
    }

    #[inline]
    pub fn denormalize(self, v: f64) -> f64 {
        match self {
            PixelNorm::Unit01 => v * 255.0,
            PixelNorm::Signed11 => (v + 1.0) * 127.5,
        }
    }

    /// d(normalized) / d(display).
    pub fn slope(self) -> f64 {
        match self {
            PixelNorm::Unit01 => 1.0 / 255.0,
            PixelNorm::Signed11 => 1.0 / 127.5,
        }
    }

    /// Display value whose normalized input is exactly zero.
    pub fn zero_display_value(self) -> f64 {
        match self {
            PixelNorm::Unit01 => 0.0,
            PixelNorm::Signed11 => 127.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelNorm::Unit01 => "unit_01",
            PixelNorm::Signed11 => "signed_11",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unit_01" => Some(PixelNorm::Unit01),
            "signed_11" => Some(PixelNorm::Signed11),
            _ => None,
        }
    }
}

/// The scalar being differentiated with respect to the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Post-softmax probability of the target class.
    #[default]
    SoftmaxConfidence,
    /// Pre-softmax score of the target class.
    Logit,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::SoftmaxConfidence => "softmax_confidence",
            Objective::Logit => "logit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softmax_confidence" | "confidence" => Some(Objective::SoftmaxConfidence),
            "logit" => Some(Objective::Logit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("layer {index} ({kind}) {issue}")]
    ShapeChain {
        index: usize,
        kind: LayerKind,
        issue: LayerShapeIssue,
    },
    #[error("final layer emits {outputs} values but the model has {classes} class names")]
    ClassCount { outputs: usize, classes: usize },
    #[error("model output must be one-dimensional, got {0:?}")]
    OutputRank(Vec<usize>),
    #[error("input shape must be (3, H, W) with positive H and W, got {0:?}")]
    InputShape(Vec<usize>),
    #[error("layer {index} ({kind}) holds non-finite parameters")]
    NonFiniteWeights { index: usize, kind: LayerKind },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("input shape mismatch: model expects {expected:?} (C, H, W), image gives {found:?}")]
    InputShape {
        expected: [usize; 3],
        found: [usize; 3],
    },
    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },
    #[error("layer {index} ({kind}) holds non-finite parameters")]
    NonFiniteWeights { index: usize, kind: LayerKind },
    #[error("non-finite values produced at layer {index} ({kind})")]
    NonFiniteActivation { index: usize, kind: LayerKind },
    #[error("non-finite values in the input")]
    NonFiniteInput,
}

/// One entry of a ranked prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScore {
    pub class_index: usize,
    pub class_name: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub confidences: Vec<f64>,
    /// All classes by confidence descending, ties to the smaller index.
    pub ranking: Vec<ClassScore>,
}

impl Prediction {
    fn from_logits(logits: Vec<f64>, class_names: &[String]) -> Self {
        let confidences = softmax(&logits);
        let mut order: Vec<usize> = (0..confidences.len()).collect();
        order.sort_by(|&a, &b| {
            confidences[b]
                .partial_cmp(&confidences[a])
                .expect("finite confidences")
                .then(a.cmp(&b))
        });
        let ranking = order
            .into_iter()
            .map(|i| ClassScore {
                class_index: i,
                class_name: class_names[i].clone(),
                confidence: confidences[i],
            })
            .collect();
        Self {
            logits,
            confidences,
            ranking,
        }
    }

    pub fn top_k(&self, k: usize) -> &[ClassScore] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    pub fn top1(&self) -> usize {
        self.ranking[0].class_index
    }

    pub fn confidence(&self, class: usize) -> f64 {
        self.confidences[class]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A feed-forward classifier over `(3, H, W)` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: [usize; 3],
    class_names: Vec<String>,
    pixel_norm: PixelNorm,
}

/// Activations retained by a forward pass.
pub(crate) struct ForwardTrace {
    inputs: Vec<Tensor>,
    saved: Vec<Saved>,
    pub(crate) output: Tensor,
}

/// Confidences together with the gradient of an objective.
#[derive(Clone, Debug)]
pub struct GradientResult {
    pub prediction: Prediction,
    /// Gradient with respect to display values, shaped `(3, H, W)`.
    pub gradient: Tensor,
}

impl Model {
    pub fn new(
        layers: Vec<Layer>,
        input_shape: [usize; 3],
        class_names: Vec<String>,
        pixel_norm: PixelNorm,
    ) -> Result<Self, ModelError> {
        if input_shape[0] != CHANNELS || input_shape[1] == 0 || input_shape[2] == 0 {
            return Err(ModelError::InputShape(input_shape.to_vec()));
        }
        let mut shape = input_shape.to_vec();
        for (index, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|issue| ModelError::ShapeChain {
                    index,
                    kind: layer.kind(),
                    issue,
                })?;
            if !layer.params_finite() {
                return Err(ModelError::NonFiniteWeights {
                    index,
                    kind: layer.kind(),
                });
            }
        }
        if shape.len() != 1 {
            return Err(ModelError::OutputRank(shape));
        }
        if shape[0] != class_names.len() {
            return Err(ModelError::ClassCount {
                outputs: shape[0],
                classes: class_names.len(),
            });
        }
        Ok(Self {
            layers,
            input_shape,
            class_names,
            pixel_norm,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for in-place parameter updates. Shapes must not change.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn pixel_norm(&self) -> PixelNorm {
        self.pixel_norm
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn check_class(&self, index: usize) -> Result<(), NnError> {
        if index < self.num_classes() {
            Ok(())
        } else {
            Err(NnError::InvalidClass {
                index,
                classes: self.num_classes(),
            })
        }
    }

    fn check_finite(&self) -> Result<(), NnError> {
        for (index, layer) in self.layers.iter().enumerate() {
            if !layer.params_finite() {
                return Err(NnError::NonFiniteWeights {
                    index,
                    kind: layer.kind(),
                });
            }
        }
        Ok(())
    }

    /// Normalizes an image into the `(3, H, W)` network input.
    pub fn normalize(&self, image: &ImageBuffer) -> Result<Tensor, NnError> {
        let found = [CHANNELS, image.height(), image.width()];
        if found != self.input_shape {
            return Err(NnError::InputShape {
                expected: self.input_shape,
                found,
            });
        }
        let norm = self.pixel_norm;
        Ok(image.to_planar(|v| norm.normalize(v)))
    }

    pub(crate) fn forward_trace(&self, input: Tensor) -> Result<ForwardTrace, NnError> {
        if !input.all_finite() {
            return Err(NnError::NonFiniteInput);
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for (index, layer) in self.layers.iter().enumerate() {
            let (y, s) = layer.forward(&x);
            if !y.all_finite() {
                return Err(NnError::NonFiniteActivation {
                    index,
                    kind: layer.kind(),
                });
            }
            inputs.push(x);
            saved.push(s);
            x = y;
        }
        Ok(ForwardTrace {
            inputs,
            saved,
            output: x,
        })
    }

    /// Backpropagates `grad_output` (gradient w.r.t. the logits).
    ///
    /// Parameter gradients are accumulated into `grads` (one slot per layer)
    /// when given. Returns the gradient w.r.t. the normalized input when
    /// `want_input` is set.
    pub(crate) fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: Tensor,
        want_input: bool,
        mut grads: Option<&mut [Option<ParamGrad>]>,
    ) -> Option<Tensor> {
        let mut g = grad_output;
        for (index, layer) in self.layers.iter().enumerate().rev() {
            // Below the first parametric layer nothing needs a gradient
            // unless the caller wants the input gradient.
            let need_below = want_input
                || self.layers[..index].iter().any(|l| l.params().is_some());
            let slot = grads
                .as_deref_mut()
                .and_then(|gs| gs[index].as_mut());
            g = layer.backward(&trace.inputs[index], &trace.saved[index], &g, need_below, slot)?;
        }
        Some(g)
    }

    /// Runs inference on a normalized `(3, H, W)` tensor.
    pub fn forward_normalized(&self, input: Tensor) -> Result<Prediction, NnError> {
        self.check_finite()?;
        let trace = self.forward_trace(input)?;
        Ok(Prediction::from_logits(
            trace.output.into_data(),
            &self.class_names,
        ))
    }

    /// Gradient of `objective` for `target` w.r.t. the normalized input.
    pub fn normalized_gradient(
        &self,
        input: Tensor,
        target: usize,
        objective: Objective,
    ) -> Result<(Prediction, Tensor), NnError> {
        self.check_class(target)?;
        self.check_finite()?;
        let trace = self.forward_trace(input)?;
        let prediction = Prediction::from_logits(trace.output.data().to_vec(), &self.class_names);
        let k = self.num_classes();
        let mut seed = vec![0.0; k];
        match objective {
            Objective::Logit => seed[target] = 1.0,
            Objective::SoftmaxConfidence => {
                // dq_t/dz_j = q_t (delta_tj - q_j)
                let q = &prediction.confidences;
                for (j, s) in seed.iter_mut().enumerate() {
                    let delta = if j == target { 1.0 } else { 0.0 };
                    *s = q[target] * (delta - q[j]);
                }
            }
        }
        let seed = Tensor::new(vec![k], seed).expect("seed length");
        let grad = self
            .backward(&trace, seed, true, None)
            .expect("input gradient requested");
        Ok((prediction, grad))
    }
}

/// Classifies an image.
pub fn forward(model: &Model, image: &ImageBuffer) -> Result<Prediction, NnError> {
    let input = model.normalize(image)?;
    model.forward_normalized(input)
}

/// Gradient of the target-class objective w.r.t. display pixel values,
/// shaped `(3, H, W)`.
pub fn input_gradient(
    model: &Model,
    image: &ImageBuffer,
    target_class: usize,
    objective: Objective,
) -> Result<Tensor, NnError> {
    Ok(gradient_with_prediction(model, image, target_class, objective)?.gradient)
}

/// Like [`input_gradient`], also returning the prediction at `image`.
pub fn gradient_with_prediction(
    model: &Model,
    image: &ImageBuffer,
    target_class: usize,
    objective: Objective,
) -> Result<GradientResult, NnError> {
    model.check_class(target_class)?;
    let input = model.normalize(image)?;
    let (prediction, mut grad) = model.normalized_gradient(input, target_class, objective)?;
    let slope = model.pixel_norm().slope();
    for g in grad.data_mut() {
        *g *= slope;
    }
    Ok(GradientResult {
        prediction,
        gradient: grad,
    })
}
