//! Class visualization for small convolutional classifiers by alternating
//! input-space gradient ascent with geometric transformations, plus the
//! entropy analytics used to pick gray-level initializations.

pub mod dataset;
pub mod entropy;
pub mod image;
pub mod nn;
pub mod ppm;
pub mod report;
pub mod rng;
pub mod screening;
pub mod tensor;
pub mod train;
pub mod transforms;
pub mod visualizer;

pub use image::{ImageBuffer, ImageError};
pub use nn::{
    forward, input_gradient, load_model, save_model, Layer, Model, NnError, Objective,
    PixelNorm, Prediction,
};
pub use tensor::Tensor;
pub use transforms::{TransformSchedule, TransformSpec};

