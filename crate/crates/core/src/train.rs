//! Plain SGD training and accuracy evaluation.
//!
//! Training is single-threaded: samples in a batch are processed in order and
//! their gradients summed in that order, so the final weights depend only on
//! the dataset, the initial model and the config.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::{ShapeDataset, IMAGE_SIZE};
use crate::image::ImageBuffer;
use crate::nn::{Conv2d, Dense, Layer, Model, ModelError, NnError, ParamGrad, PixelNorm};
use crate::rng;
use crate::tensor::Tensor;

/// Seed of the reference run. Dataset, initialization and batching all
/// derive from it.
pub const REFERENCE_SEED: u64 = 20_240_611;
/// Samples per class in the reference dataset (600 images total).
pub const REFERENCE_COUNT_PER_CLASS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of each class held out for validation.
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn reference() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 8,
            seed: REFERENCE_SEED,
            val_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("architecture expects input {found:?}, training needs (3, 64, 64)")]
    Architecture { found: [usize; 3] },
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Mean cross-entropy on the training split before any update.
    pub initial_loss: f64,
}

impl TrainOutcome {
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.log.last().map(|r| r.val_accuracy)
    }

    /// Text log, one record per epoch.
    pub fn log_text(&self) -> String {
        let mut s = String::from("# tivis-train-log v1\nepoch\tmean_loss\ttrain_acc\tval_acc\n");
        writeln!(s, "0\t{:.6}\t-\t-", self.initial_loss).unwrap();
        for r in &self.log {
            writeln!(
                s,
                "{}\t{:.6}\t{:.4}\t{:.4}",
                r.epoch, r.mean_loss, r.train_accuracy, r.val_accuracy
            )
            .unwrap();
        }
        s
    }
}

/// Stratified split: each class contributes `round(n_c * val_fraction)`
/// samples (at least one when it has two or more) to validation.
pub fn split_indices(labels: &[usize], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = rng::stream(seed, 0x5911_7000);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng::shuffle(&mut rng, &mut idx);
        let mut n_val = (idx.len() as f64 * val_fraction).round() as usize;
        if idx.len() >= 2 {
            n_val = n_val.clamp(1, idx.len() - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn uniform_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut rng::Rng) -> Tensor {
    let a = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng::uniform(rng, -a, a)).collect();
    Tensor::new(shape, data).expect("length from shape")
}

/// Convolution with weights uniform in `[-a, a]`, `a = sqrt(1 / fan_in)`,
/// and zero bias.
pub fn init_conv(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rng: &mut rng::Rng,
) -> Conv2d {
    let fan_in = in_ch * kernel * kernel;
    Conv2d::new(
        uniform_tensor(vec![out_ch, in_ch, kernel, kernel], fan_in, rng),
        vec![0.0; out_ch],
        stride,
        padding,
    )
}

pub fn init_dense(in_dim: usize, out_dim: usize, rng: &mut rng::Rng) -> Dense {
    Dense::new(
        uniform_tensor(vec![out_dim, in_dim], in_dim, rng),
        vec![0.0; out_dim],
    )
}

/// The reference shapes classifier, freshly initialized:
///
/// ```text
/// conv 3->8 5x5 pad 2, relu, maxpool   -> 8x32x32
/// conv 8->16 5x5 pad 2, relu, maxpool  -> 16x16x16
/// maxpool x3                           -> 16x2x2
/// flatten, dense 64->6
/// ```
pub fn reference_architecture(seed: u64, class_names: Vec<String>) -> Result<Model, ModelError> {
    let mut rng = rng::stream(seed, 0x1417_0000);
    let classes = class_names.len();
    let layers = vec![
        Layer::Conv2d(init_conv(3, 8, 5, 1, 2, &mut rng)),
        Layer::Relu,
        Layer::MaxPool2x2,
        Layer::Conv2d(init_conv(8, 16, 5, 1, 2, &mut rng)),
        Layer::Relu,
        Layer::MaxPool2x2,
        Layer::MaxPool2x2,
        Layer::MaxPool2x2,
        Layer::MaxPool2x2,
        Layer::Flatten,
        Layer::Dense(init_dense(16 * 2 * 2, classes, &mut rng)),
    ];
    Model::new(
        layers,
        [3, IMAGE_SIZE, IMAGE_SIZE],
        class_names,
        PixelNorm::Unit01,
    )
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn check_labels(dataset: &ShapeDataset, classes: usize) -> Result<(), TrainError> {
    match dataset.labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(TrainError::Label { label, classes }),
        None => Ok(()),
    }
}

/// Mean cross-entropy over the given samples.
pub fn mean_loss(model: &Model, images: &[&ImageBuffer], labels: &[usize]) -> Result<f64, NnError> {
    let losses: Vec<f64> = images
        .par_iter()
        .zip(labels)
        .map(|(img, &l)| {
            let input = model.normalize(img)?;
            let trace = model.forward_trace(input)?;
            Ok(cross_entropy(trace.output.data(), l))
        })
        .collect::<Result<_, NnError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Fraction of samples whose top-1 class equals the label. Ties go to the
/// smaller class index.
pub fn accuracy(model: &Model, images: &[&ImageBuffer], labels: &[usize]) -> Result<f64, NnError> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let correct: Vec<bool> = images
        .par_iter()
        .zip(labels)
        .map(|(img, &l)| Ok(crate::nn::forward(model, img)?.top1() == l))
        .collect::<Result<_, NnError>>()?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / images.len() as f64)
}

pub fn evaluate(model: &Model, dataset: &ShapeDataset) -> Result<f64, NnError> {
    let images: Vec<&ImageBuffer> = dataset.images.iter().collect();
    accuracy(model, &images, &dataset.labels)
}

/// Trains `template` (used as the initial weights) on the dataset's
/// training split with plain mini-batch SGD on softmax cross-entropy.
pub fn train(
    dataset: &ShapeDataset,
    template: &Model,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if template.input_shape() != [3, IMAGE_SIZE, IMAGE_SIZE] {
        return Err(TrainError::Architecture {
            found: template.input_shape(),
        });
    }
    check_labels(dataset, template.num_classes())?;

    let (train_idx, val_idx) = split_indices(&dataset.labels, config.val_fraction, config.seed);
    let pick = |idx: &[usize]| -> (Vec<&ImageBuffer>, Vec<usize>) {
        (
            idx.iter().map(|&i| &dataset.images[i]).collect(),
            idx.iter().map(|&i| dataset.labels[i]).collect(),
        )
    };
    let (train_imgs, train_labels) = pick(&train_idx);
    let (val_imgs, val_labels) = pick(&val_idx);

    let mut model = template.clone();
    let initial_loss = mean_loss(&model, &train_imgs, &train_labels)?;
    // Normalized inputs never change, so compute them once.
    let inputs: Vec<Tensor> = train_imgs
        .iter()
        .map(|img| model.normalize(img))
        .collect::<Result<_, _>>()?;

    let mut rng = rng::stream(config.seed, 0xBA7C_0000);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let k = model.num_classes();

    for epoch in 1..=config.epochs {
        rng::shuffle(&mut rng, &mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Option<ParamGrad>> =
                model.layers().iter().map(Layer::zero_grad).collect();
            for &i in batch {
                let trace = model
                    .forward_trace(inputs[i].clone())
                    .map_err(|e| TrainError::Diverged {
                        epoch,
                        reason: e.to_string(),
                    })?;
                let logits = trace.output.data();
                let label = train_labels[i];
                let loss = cross_entropy(logits, label);
                if !loss.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: format!("loss became {loss}"),
                    });
                }
                loss_sum += loss;
                let q = crate::nn::softmax(logits);
                let top = (0..k)
                    .reduce(|a, b| if q[b] > q[a] { b } else { a })
                    .expect("at least one class");
                if top == label {
                    correct += 1;
                }
                let mut seed = q;
                seed[label] -= 1.0;
                let seed = Tensor::new(vec![k], seed).expect("logit length");
                model.backward(&trace, seed, false, Some(&mut grads));
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (layer, grad) in model.layers_mut().iter_mut().zip(&grads) {
                if let (Some((w, b)), Some(g)) = (layer.params_mut(), grad) {
                    for (wv, gv) in w.data_mut().iter_mut().zip(&g.weight) {
                        *wv -= scale * gv;
                    }
                    for (bv, gv) in b.iter_mut().zip(&g.bias) {
                        *bv -= scale * gv;
                    }
                }
            }
        }
        let mean_loss = loss_sum / inputs.len() as f64;
        if !mean_loss.is_finite() || model.layers().iter().any(|l| !l.params_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                reason: "non-finite weights".into(),
            });
        }
        let val_accuracy = accuracy(&model, &val_imgs, &val_labels)?;
        log.push(EpochRecord {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / inputs.len() as f64,
            val_accuracy,
        });
    }

    Ok(TrainOutcome {
        model,
        log,
        train_indices: train_idx,
        val_indices: val_idx,
        initial_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_dataset;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let (tr, va) = split_indices(&labels, 0.2, 3);
        assert_eq!(tr.len() + va.len(), 60);
        assert_eq!(va.len(), 12);
        for c in 0..6 {
            assert_eq!(va.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert!(tr.iter().all(|i| !va.contains(i)));
        assert_eq!(split_indices(&labels, 0.2, 3), (tr, va));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::reference();
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
        c.val_fraction = 0.2;
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
        c.learning_rate = 0.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let ds = generate_dataset(4, 2).unwrap();
        let m = reference_architecture(4, ds.class_names.clone()).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::reference()
        };
        let out = train(&ds, &m, &cfg).unwrap();
        assert_eq!(out.model, m);
    }

    #[test]
    fn cross_entropy_of_equal_logits_is_ln_k() {
        let ce = cross_entropy(&[0.3; 6], 2);
        assert!((ce - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_input_size() {
        let ds = generate_dataset(4, 1).unwrap();
        let m = Model::new(
            vec![Layer::Flatten, Layer::Dense(Dense::new(Tensor::zeros(vec![6, 48]), vec![0.0; 6]))],
            [3, 4, 4],
            ds.class_names.clone(),
            PixelNorm::Unit01,
        )
        .unwrap();
        assert!(matches!(
            train(&ds, &m, &TrainConfig::reference()),
            Err(TrainError::Architecture { .. })
        ));
    }
}
