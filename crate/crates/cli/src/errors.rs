use tivis_core::dataset::DatasetError;
use tivis_core::entropy::EntropyError;
use tivis_core::nn::{FormatError, ModelError, NnError};
use tivis_core::ppm::PpmError;
use tivis_core::screening::ScreenError;
use tivis_core::train::TrainError;
use tivis_core::transforms::TransformError;
use tivis_core::visualizer::VisualizeError;

/// A failure the user can fix by changing the command line.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return "usage";
        }
        if cause.is::<FormatError>() || cause.is::<ModelError>() {
            return "model";
        }
        if cause.is::<PpmError>() {
            return "image";
        }
        if cause.is::<DatasetError>() {
            return "dataset";
        }
        if cause.is::<TrainError>() {
            return "train";
        }
        if cause.is::<TransformError>() {
            return "transform";
        }
        if cause.is::<VisualizeError>() || cause.is::<NnError>() {
            return "visualize";
        }
        if cause.is::<EntropyError>() {
            return "entropy";
        }
        if cause.is::<ScreenError>() {
            return "screen";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

/// `error kind=<kind> message="<escaped>"` on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    let message = format!("{err:#}");
    format!("error kind={} message={message:?}", kind(err))
}
