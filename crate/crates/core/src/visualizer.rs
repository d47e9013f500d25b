//! Transformation-invariant class visualization.
//!
//! The outer loop alternates three stages until the image keeps its class
//! under every battery transform:
//!
//! 1. gradient ascent on the input until the target confidence exceeds
//!    `q_target` (or the inner step cap is hit), giving `M_o`;
//! 2. the battery is run on `M_o`; if the minimum confidence is at least
//!    `q_test` the run has converged and `M_o` is returned;
//! 3. otherwise the next schedule transform is applied to `M_o` and the
//!    result seeds the next inner pass.
//!
//! Each inner pass starts fresh from the transformed image; there is no
//! optimizer state to carry over.

use crate::image::ImageBuffer;
use crate::nn::{self, Model, NnError, Objective};
use crate::transforms::{
    battery_summary, run_battery, BatteryEntry, BatteryError, TransformError, TransformSchedule,
    TransformSpec,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GradientMode {
    /// Step along the raw gradient scaled by `step_size`.
    Raw,
    /// Step along the gradient rescaled to unit root-mean-square, so each
    /// step moves pixels by `step_size` display units on average.
    #[default]
    L2Normalized,
}

impl GradientMode {
    pub fn name(self) -> &'static str {
        match self {
            GradientMode::Raw => "raw",
            GradientMode::L2Normalized => "l2_normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(GradientMode::Raw),
            "l2_normalized" | "l2" => Some(GradientMode::L2Normalized),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub q_target: f64,
    /// Step length in display units.
    pub step_size: f64,
    pub max_inner_steps: usize,
    pub gradient_mode: GradientMode,
    pub objective: Objective,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            q_target: 0.99,
            step_size: 1.0,
            max_inner_steps: 500,
            gradient_mode: GradientMode::L2Normalized,
            objective: Objective::SoftmaxConfidence,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), VisualizeError> {
        if !(self.q_target > 0.0 && self.q_target < 1.0) {
            return Err(VisualizeError::Config(format!(
                "q_target must lie in (0, 1), got {}",
                self.q_target
            )));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(VisualizeError::Config(format!(
                "step size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        if self.max_inner_steps == 0 {
            return Err(VisualizeError::Config("max_inner_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingCriterion {
    /// Minimum battery confidence required to declare convergence.
    pub q_test: f64,
    pub max_outer_iterations: usize,
}

impl StoppingCriterion {
    /// `q_test = 0.8` and three passes through the schedule.
    pub fn for_schedule(schedule: &TransformSchedule) -> Self {
        Self {
            q_test: 0.8,
            max_outer_iterations: 3 * schedule.steps().len(),
        }
    }

    pub fn validate(&self, config: &OptimConfig) -> Result<(), VisualizeError> {
        if !(self.q_test > 0.0 && self.q_test < 1.0) {
            return Err(VisualizeError::Config(format!(
                "q_test must lie in (0, 1), got {}",
                self.q_test
            )));
        }
        if self.q_test > config.q_target {
            return Err(VisualizeError::Config(format!(
                "q_test {} exceeds q_target {}",
                self.q_test, config.q_target
            )));
        }
        if self.max_outer_iterations == 0 {
            return Err(VisualizeError::Config(
                "max_outer_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisualizeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient at inner step {step}")]
    NonFiniteGradient { step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Battery(#[from] BatteryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RunStatus {
    /// The battery minimum reached `q_test`.
    Converged,
    /// `max_outer_iterations` ran out.
    IterationCap,
    /// An inner pass exhausted `max_inner_steps` below `q_target`.
    InnerCap,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::IterationCap => "iteration_cap",
            RunStatus::InnerCap => "inner_cap",
        }
    }
}

/// Result of one inner gradient-ascent pass.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerTrace {
    pub image: ImageBuffer,
    pub steps: usize,
    pub reached_target: bool,
    /// Target confidence before each step and after the last one.
    pub confidences: Vec<f64>,
}

impl InnerTrace {
    pub fn final_confidence(&self) -> f64 {
        *self.confidences.last().expect("at least one evaluation")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub inner_steps: usize,
    pub confidence: f64,
    pub battery_min: f64,
    pub battery_mean: f64,
    /// Transform applied to `M_o` after this iteration, if the run went on.
    pub applied: Option<TransformSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    /// Battery results for the returned image.
    pub final_battery: Vec<BatteryEntry>,
}

impl RunTrace {
    pub fn battery_min(&self) -> f64 {
        battery_summary(&self.final_battery).0
    }

    pub fn total_inner_steps(&self) -> usize {
        self.records.iter().map(|r| r.inner_steps).sum()
    }
}

fn direction(grad: &[f64], mode: GradientMode) -> Vec<f64> {
    match mode {
        GradientMode::Raw => grad.to_vec(),
        GradientMode::L2Normalized => {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm == 0.0 {
                return vec![0.0; grad.len()];
            }
            let scale = (grad.len() as f64).sqrt() / norm;
            grad.iter().map(|g| g * scale).collect()
        }
    }
}

/// Integer noise in `[0, max_level]` per channel, drawn from stream
/// `index` of `seed`.
pub fn noise_init(size: usize, max_level: u8, seed: u64, index: u64) -> ImageBuffer {
    use rand::Rng as _;
    let mut rng = crate::rng::stream(seed, index);
    let data = (0..size * size * 3)
        .map(|_| f64::from(rng.gen_range(0..=max_level)))
        .collect();
    ImageBuffer::new(size, size, data).expect("square image of the requested size")
}

/// Gradient ascent with per-step clamping; records every confidence.
pub fn optimize_traced(
    model: &Model,
    image: &ImageBuffer,
    target_class: usize,
    config: &OptimConfig,
) -> Result<InnerTrace, VisualizeError> {
    config.validate()?;
    image.ensure_square().map_err(TransformError::from)?;
    let mut current = image.clone().clamped();
    let mut confidences = Vec::new();
    let mut steps = 0;
    let plane = current.height() * current.width();
    loop {
        let res = nn::gradient_with_prediction(model, &current, target_class, config.objective)?;
        let q = res.prediction.confidence(target_class);
        confidences.push(q);
        if q > config.q_target {
            return Ok(InnerTrace {
                image: current,
                steps,
                reached_target: true,
                confidences,
            });
        }
        if steps == config.max_inner_steps {
            return Ok(InnerTrace {
                image: current,
                steps,
                reached_target: false,
                confidences,
            });
        }
        if !res.gradient.all_finite() {
            return Err(VisualizeError::NonFiniteGradient { step: steps });
        }
        let dir = direction(res.gradient.data(), config.gradient_mode);
        // gradient is planar (3, H, W); the image is interleaved
        let data = current.data_mut();
        for c in 0..3 {
            for p in 0..plane {
                data[p * 3 + c] += config.step_size * dir[c * plane + p];
            }
        }
        current.clamp();
        steps += 1;
    }
}

/// Gradient ascent until the target confidence exceeds `q_target`.
/// Returns the optimized image and the number of steps taken.
pub fn optimize_to_confidence(
    model: &Model,
    image: &ImageBuffer,
    target_class: usize,
    config: &OptimConfig,
) -> Result<(ImageBuffer, usize), VisualizeError> {
    let t = optimize_traced(model, image, target_class, config)?;
    Ok((t.image, t.steps))
}

/// Plain gradient ascent without transformations, for comparison.
pub fn baseline_visualize(
    model: &Model,
    target_class: usize,
    init: &ImageBuffer,
    config: &OptimConfig,
) -> Result<(ImageBuffer, InnerTrace), VisualizeError> {
    let trace = optimize_traced(model, init, target_class, config)?;
    Ok((trace.image.clone(), trace))
}

/// Runs the full optimize / evaluate / transform loop.
pub fn visualize(
    model: &Model,
    target_class: usize,
    init: &ImageBuffer,
    schedule: &TransformSchedule,
    config: &OptimConfig,
    stop: &StoppingCriterion,
) -> Result<(ImageBuffer, RunTrace), VisualizeError> {
    config.validate()?;
    stop.validate(config)?;
    model.check_class(target_class)?;
    let mut current = init.clone().clamped();
    let mut records = Vec::new();
    for iteration in 0..stop.max_outer_iterations {
        let inner = optimize_traced(model, &current, target_class, config)?;
        let battery = run_battery(model, &inner.image, target_class, schedule.battery())?;
        let (battery_min, battery_mean) = battery_summary(&battery);
        let converged = battery_min >= stop.q_test;
        let last = iteration + 1 == stop.max_outer_iterations;
        let status = if converged {
            Some(RunStatus::Converged)
        } else if !inner.reached_target {
            Some(RunStatus::InnerCap)
        } else if last {
            Some(RunStatus::IterationCap)
        } else {
            None
        };
        let applied = status.is_none().then(|| schedule.step(iteration));
        records.push(IterationRecord {
            iteration,
            inner_steps: inner.steps,
            confidence: inner.final_confidence(),
            battery_min,
            battery_mean,
            applied,
        });
        match (status, applied) {
            (Some(status), _) => {
                return Ok((
                    inner.image,
                    RunTrace {
                        records,
                        status,
                        final_battery: battery,
                    },
                ))
            }
            (None, Some(spec)) => current = spec.apply(&inner.image)?,
            (None, None) => unreachable!("a transform is chosen whenever the run continues"),
        }
    }
    unreachable!("the last iteration always sets a status")
}
