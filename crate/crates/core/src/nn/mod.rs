//! Minimal convolutional network engine.

pub mod format;
pub mod layer;
pub mod model;

pub use format::{decode_model, encode_model, load_model, save_model, FormatError};
pub use layer::{Conv2d, Dense, Layer, LayerKind, ParamGrad};
pub use model::{
    forward, gradient_with_prediction, input_gradient, softmax, ClassScore, GradientResult,
    Model, ModelError, NnError, Objective, PixelNorm, Prediction,
};
