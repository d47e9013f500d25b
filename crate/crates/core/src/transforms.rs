//! Geometric transforms on square images and the invariance test battery.
//!
//! Rotation and scaling use inverse-mapped bilinear resampling about the
//! center `((W-1)/2, (H-1)/2)`. Source samples outside the image read as 0,
//! so content leaving the canvas is clipped and uncovered regions are
//! filled with display value 0. Outputs are clamped to `[0, 255]`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::image::{ImageBuffer, ImageError, CHANNELS};
use crate::nn::{self, Model, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransformSpec {
    /// Counterclockwise rotation in degrees, within `(-360, 360)`.
    Rotate(f64),
    Flip(FlipAxis),
    /// Zoom factor in `(0, 8]`; above 1 magnifies.
    Scale(f64),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("rotation angle {0} outside (-360, 360)")]
    Angle(f64),
    #[error("scale factor {0} outside (0, 8]")]
    ScaleFactor(f64),
    #[error("cannot parse transform {input:?}: {reason}")]
    Syntax { input: String, reason: String },
    #[error("schedule needs at least one step and one battery entry")]
    EmptySchedule,
}

impl TransformSpec {
    pub fn validate(&self) -> Result<(), TransformError> {
        match *self {
            TransformSpec::Rotate(a) if !(a > -360.0 && a < 360.0) => Err(TransformError::Angle(a)),
            TransformSpec::Scale(f) if !(f > 0.0 && f <= 8.0) => Err(TransformError::ScaleFactor(f)),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, image: &ImageBuffer) -> Result<ImageBuffer, TransformError> {
        match *self {
            TransformSpec::Rotate(a) => rotate(image, a),
            TransformSpec::Flip(axis) => Ok(flip(image, axis)),
            TransformSpec::Scale(f) => scale(image, f),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Rotate(a) => write!(f, "rot:{a}"),
            TransformSpec::Flip(FlipAxis::Horizontal) => write!(f, "flip:h"),
            TransformSpec::Flip(FlipAxis::Vertical) => write!(f, "flip:v"),
            TransformSpec::Scale(s) => write!(f, "scale:{s}"),
        }
    }
}

fn syntax(input: &str, reason: impl Into<String>) -> TransformError {
    TransformError::Syntax {
        input: input.to_string(),
        reason: reason.into(),
    }
}

fn parse_number(item: &str, s: &str) -> Result<f64, TransformError> {
    let v: f64 = s
        .parse()
        .map_err(|_| syntax(item, format!("{s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(syntax(item, "value must be finite"));
    }
    Ok(v)
}

/// Parses one comma-separated item. `rot:<deg>x<n>` expands to `n` copies
/// and `rot-sweep:<step>` to rotations `0, step, ...` below 360.
fn parse_item(item: &str) -> Result<Vec<TransformSpec>, TransformError> {
    let (kind, arg) = item
        .split_once(':')
        .ok_or_else(|| syntax(item, "expected <kind>:<argument>"))?;
    let specs = match kind.trim() {
        "rot" => {
            let (angle, count) = match arg.split_once('x') {
                Some((a, n)) => (
                    a,
                    n.trim()
                        .parse::<usize>()
                        .map_err(|_| syntax(item, "repeat count must be a positive integer"))?,
                ),
                None => (arg, 1),
            };
            if count == 0 {
                return Err(syntax(item, "repeat count must be a positive integer"));
            }
            vec![TransformSpec::Rotate(parse_number(item, angle.trim())?); count]
        }
        "rot-sweep" => {
            let step = parse_number(item, arg.trim())?;
            if !(step > 0.0 && step < 360.0) {
                return Err(syntax(item, "sweep step must lie in (0, 360)"));
            }
            let n = (360.0 / step).ceil() as usize;
            (0..n)
                .map(|k| k as f64 * step)
                .filter(|a| *a < 360.0)
                .map(TransformSpec::Rotate)
                .collect()
        }
        "flip" => match arg.trim() {
            "h" => vec![TransformSpec::Flip(FlipAxis::Horizontal)],
            "v" => vec![TransformSpec::Flip(FlipAxis::Vertical)],
            other => return Err(syntax(item, format!("unknown flip axis {other:?}"))),
        },
        "scale" => vec![TransformSpec::Scale(parse_number(item, arg.trim())?)],
        other => return Err(syntax(item, format!("unknown transform {other:?}"))),
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Parses a comma-separated transform list such as `rot:10x36,flip:h`.
pub fn parse_transforms(input: &str) -> Result<Vec<TransformSpec>, TransformError> {
    let mut out = Vec::new();
    for item in input.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(syntax(input, "empty item"));
        }
        out.extend(parse_item(item)?);
    }
    Ok(out)
}

impl FromStr for TransformSpec {
    type Err = TransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = parse_transforms(s)?;
        if v.len() != 1 {
            return Err(syntax(s, "expected a single transform"));
        }
        Ok(v.remove(0))
    }
}

/// Outer-loop transformation steps plus the evaluation battery.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformSchedule {
    steps: Vec<TransformSpec>,
    battery: Vec<TransformSpec>,
}

impl TransformSchedule {
    pub fn new(steps: Vec<TransformSpec>, battery: Vec<TransformSpec>) -> Result<Self, TransformError> {
        if steps.is_empty() || battery.is_empty() {
            return Err(TransformError::EmptySchedule);
        }
        for s in steps.iter().chain(&battery) {
            s.validate()?;
        }
        Ok(Self { steps, battery })
    }

    pub fn parse(steps: &str, battery: &str) -> Result<Self, TransformError> {
        Self::new(parse_transforms(steps)?, parse_transforms(battery)?)
    }

    /// 36 rotations of 10 degrees (one full revolution), tested against all
    /// 36 rotations `k * 10` degrees.
    pub fn rotation_default() -> Self {
        Self::parse("rot:10x36", "rot-sweep:10").expect("default schedule parses")
    }

    pub fn steps(&self) -> &[TransformSpec] {
        &self.steps
    }

    pub fn battery(&self) -> &[TransformSpec] {
        &self.battery
    }

    /// Step applied after outer iteration `i` (cycling through the steps).
    pub fn step(&self, i: usize) -> TransformSpec {
        self.steps[i % self.steps.len()]
    }

    /// Compact text form, e.g. `rot:10x36` / `rot-sweep:10` where possible.
    pub fn describe_steps(&self) -> String {
        describe(&self.steps)
    }

    pub fn describe_battery(&self) -> String {
        describe(&self.battery)
    }
}

fn describe(specs: &[TransformSpec]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut i = 0;
    while i < specs.len() {
        let mut j = i + 1;
        while j < specs.len() && specs[j] == specs[i] {
            j += 1;
        }
        match specs[i] {
            TransformSpec::Rotate(a) if j - i > 1 => parts.push(format!("rot:{a}x{}", j - i)),
            s => parts.extend(std::iter::repeat_n(s.to_string(), j - i)),
        }
        i = j;
    }
    parts.join(",")
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90.
fn sin_cos_deg(angle: f64) -> (f64, f64) {
    let r = angle.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        angle.to_radians().sin_cos()
    }
}

/// Bilinear sample at `(sx, sy)`; neighbors outside the image read as 0.
#[inline]
fn sample(src: &ImageBuffer, sx: f64, sy: f64, out: &mut [f64]) {
    let (h, w) = (src.height() as isize, src.width() as isize);
    let x0f = sx.floor();
    let y0f = sy.floor();
    let fx = sx - x0f;
    let fy = sy - y0f;
    let (x0, y0) = (x0f as isize, y0f as isize);
    out.fill(0.0);
    if x0 < -1 || y0 < -1 || x0 >= w || y0 >= h {
        return;
    }
    let taps = [
        (y0, x0, (1.0 - fx) * (1.0 - fy)),
        (y0, x0 + 1, fx * (1.0 - fy)),
        (y0 + 1, x0, (1.0 - fx) * fy),
        (y0 + 1, x0 + 1, fx * fy),
    ];
    for (y, x, wgt) in taps {
        if y < 0 || x < 0 || y >= h || x >= w || wgt == 0.0 {
            continue;
        }
        let px = src.pixel(y as usize, x as usize);
        for (o, v) in out.iter_mut().zip(px) {
            *o += wgt * v;
        }
    }
}

/// Resamples `src` with `map` sending destination `(x, y)` to source
/// coordinates.
fn warp(src: &ImageBuffer, map: impl Fn(f64, f64) -> (f64, f64)) -> ImageBuffer {
    let (h, w) = src.dims();
    let mut data = vec![0.0; h * w * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            let i = (y * w + x) * CHANNELS;
            sample(src, sx, sy, &mut data[i..i + CHANNELS]);
        }
    }
    ImageBuffer::new(h, w, data)
        .expect("same dimensions as source")
        .clamped()
}

/// Rotates a square image counterclockwise (as displayed, y pointing down)
/// by `angle` degrees about its center.
pub fn rotate(image: &ImageBuffer, angle: f64) -> Result<ImageBuffer, TransformError> {
    image.ensure_square()?;
    TransformSpec::Rotate(angle).validate()?;
    if angle == 0.0 {
        return Ok(image.clone().clamped());
    }
    let (s, c) = sin_cos_deg(angle);
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    Ok(warp(image, |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        (c * dx - s * dy + cx, s * dx + c * dy + cy)
    }))
}

pub fn flip(image: &ImageBuffer, axis: FlipAxis) -> ImageBuffer {
    let (h, w) = image.dims();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = match axis {
                FlipAxis::Horizontal => (y, w - 1 - x),
                FlipAxis::Vertical => (h - 1 - y, x),
            };
            out.set_pixel(y, x, image.pixel(sy, sx));
        }
    }
    out.clamped()
}

/// Zooms a square image about its center keeping the canvas size.
pub fn scale(image: &ImageBuffer, factor: f64) -> Result<ImageBuffer, TransformError> {
    image.ensure_square()?;
    TransformSpec::Scale(factor).validate()?;
    if factor == 1.0 {
        return Ok(image.clone().clamped());
    }
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    Ok(warp(image, |x, y| {
        (cx + (x - cx) / factor, cy + (y - cy) / factor)
    }))
}

/// Target-class confidence of one battery entry.
#[derive(Clone, Debug, PartialEq)]
pub struct BatteryEntry {
    pub transform: TransformSpec,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BatteryError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Applies every battery transform to a copy of `image` and records the
/// model's confidence in `target_class`. Output order follows `battery`.
pub fn run_battery(
    model: &Model,
    image: &ImageBuffer,
    target_class: usize,
    battery: &[TransformSpec],
) -> Result<Vec<BatteryEntry>, BatteryError> {
    image.ensure_square().map_err(TransformError::from)?;
    model.check_class(target_class)?;
    battery
        .par_iter()
        .map(|spec| {
            let transformed = spec.apply(image)?;
            let pred = nn::forward(model, &transformed)?;
            Ok(BatteryEntry {
                transform: *spec,
                confidence: pred.confidence(target_class),
            })
        })
        .collect()
}

/// `(min, mean)` confidence over battery entries.
pub fn battery_summary(entries: &[BatteryEntry]) -> (f64, f64) {
    let min = entries
        .iter()
        .map(|e| e.confidence)
        .fold(f64::INFINITY, f64::min);
    let mean = entries.iter().map(|e| e.confidence).sum::<f64>() / entries.len().max(1) as f64;
    (min, mean)
}
