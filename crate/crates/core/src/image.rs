//! RGB image buffers in display units.

use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

/// An `H×W×3` image with real channel values, nominally in `[0, 255]`.
///
/// Pixels are stored interleaved (`RGBRGB...`), row by row, which matches the
/// PPM payload layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {height}x{width}")]
    EmptyImage { height: usize, width: usize },
    #[error("{height}x{width}x3 image needs {expected} values, got {actual}")]
    BadLength {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("image is {height}x{width}, a square image is required")]
    NotSquare { height: usize, width: usize },
    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyImage { height, width });
        }
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(ImageError::BadLength {
                height,
                width,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// A constant `(g, g, g)` image.
    pub fn gray(height: usize, width: usize, level: f64) -> Self {
        Self::filled(height, width, [level; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn ensure_square(&self) -> Result<(), ImageError> {
        if self.is_square() {
            Ok(())
        } else {
            Err(ImageError::NotSquare {
                height: self.height,
                width: self.width,
            })
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = self.index(y, x, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = self.index(y, x, 0);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Clamps every value into `[0, 255]`. Idempotent.
    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 255.0);
        }
    }

    pub fn clamped(mut self) -> Self {
        self.clamp();
        self
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn in_display_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=255.0).contains(v))
    }

    pub fn is_integer_valued(&self) -> bool {
        self.data.iter().all(|v| v.fract() == 0.0)
    }

    /// Converts to a planar `(3, H, W)` tensor, mapping each value through `f`.
    pub fn to_planar(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for (p, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + p] = f(*v);
            }
        }
        Tensor::new(vec![CHANNELS, self.height, self.width], out)
            .expect("planar length matches")
    }

    /// Builds an image from a planar `(3, H, W)` tensor, mapping each value
    /// through `f`.
    pub fn from_planar(t: &Tensor, f: impl Fn(f64) -> f64) -> Result<Self, ImageError> {
        let shape = t.shape();
        if shape.len() != 3 || shape[0] != CHANNELS {
            return Err(ImageError::BadLength {
                height: shape.get(1).copied().unwrap_or(0),
                width: shape.get(2).copied().unwrap_or(0),
                expected: 0,
                actual: t.len(),
            });
        }
        let (h, w) = (shape[1], shape[2]);
        let plane = h * w;
        let mut data = vec![0.0; plane * CHANNELS];
        for c in 0..CHANNELS {
            for p in 0..plane {
                data[p * CHANNELS + c] = f(t.data()[c * plane + p]);
            }
        }
        Self::new(h, w, data)
    }
}
