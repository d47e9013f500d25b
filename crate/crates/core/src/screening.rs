//! Color inversion, zero-square screening and classification reports.

use crate::image::ImageBuffer;
use crate::nn::{self, Model, NnError, PixelNorm};

/// Per-channel `255 - v`.
pub fn invert(image: &ImageBuffer) -> ImageBuffer {
    let data = image.data().iter().map(|v| 255.0 - v).collect();
    ImageBuffer::new(image.height(), image.width(), data).expect("same dimensions")
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScreenRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl ScreenRect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(image: &ImageBuffer) -> Self {
        Self::new(0, 0, image.width(), image.height())
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, image: &ImageBuffer) -> bool {
        self.x
            .checked_add(self.w)
            .is_some_and(|r| r <= image.width())
            && self
                .y
                .checked_add(self.h)
                .is_some_and(|b| b <= image.height())
    }

    /// Parses `x,y,w,h`.
    pub fn parse(s: &str) -> Option<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        match v[..] {
            [x, y, w, h] => Some(Self::new(x, y, w, h)),
            _ => None,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

impl std::fmt::Display for ScreenRect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScreenError {
    #[error("rectangle {rect} does not fit a {height}x{width} image")]
    OutOfBounds {
        rect: ScreenRect,
        height: usize,
        width: usize,
    },
    #[error("the screened variant needs a rectangle")]
    MissingRect,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Fills `rect` with the display value that normalizes to exactly zero
/// under `norm` (0 for `unit_01`, 127.5 for `signed_11`).
pub fn zero_square_with(
    image: &ImageBuffer,
    rect: ScreenRect,
    norm: PixelNorm,
) -> Result<ImageBuffer, ScreenError> {
    if !rect.fits(image) {
        return Err(ScreenError::OutOfBounds {
            rect,
            height: image.height(),
            width: image.width(),
        });
    }
    let zero = norm.zero_display_value();
    let mut out = image.clone();
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            out.set_pixel(y, x, [zero; 3]);
        }
    }
    Ok(out)
}

pub fn zero_square(image: &ImageBuffer, rect: ScreenRect, model: &Model) -> Result<ImageBuffer, ScreenError> {
    zero_square_with(image, rect, model.pixel_norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Original,
    Screened,
    Inverted,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Screened => "screened",
            Variant::Inverted => "inverted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Variant::Original),
            "screened" => Some(Variant::Screened),
            "inverted" => Some(Variant::Inverted),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedClass {
    pub class_name: String,
    /// Confidence in percent.
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub image_id: String,
    pub variant: Variant,
    pub top: Vec<RankedClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub k: usize,
    pub rect: Option<ScreenRect>,
    pub rows: Vec<ReportRow>,
}

/// Top-`k` predictions for every image and requested variant, in input
/// order with variants in the order given.
pub fn classify_report(
    model: &Model,
    images: &[(String, ImageBuffer)],
    k: usize,
    variants: &[Variant],
    rect: Option<ScreenRect>,
) -> Result<ClassReport, ScreenError> {
    if k == 0 {
        return Err(ScreenError::ZeroK);
    }
    if variants.contains(&Variant::Screened) && rect.is_none() {
        return Err(ScreenError::MissingRect);
    }
    let mut rows = Vec::with_capacity(images.len() * variants.len());
    for (id, image) in images {
        for &variant in variants {
            let input = match variant {
                Variant::Original => image.clone(),
                Variant::Inverted => invert(image),
                Variant::Screened => zero_square(image, rect.expect("checked above"), model)?,
            };
            let pred = nn::forward(model, &input)?;
            rows.push(ReportRow {
                image_id: id.clone(),
                variant,
                top: pred
                    .top_k(k)
                    .iter()
                    .map(|s| RankedClass {
                        class_name: s.class_name.clone(),
                        percent: 100.0 * s.confidence,
                    })
                    .collect(),
            });
        }
    }
    Ok(ClassReport { k, rect, rows })
}
