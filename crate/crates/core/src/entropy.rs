//! Gray-level information measures and the gray initialization sweep.
//!
//! * luma: `V = trunc(0.3 R + 0.59 G + 0.11 B)`
//! * co-occurrence: each pixel contributes the pair `(value, j)` where `j`
//!   is the mean of its 8 neighbors rounded half away from zero; borders use
//!   replicate padding so an `H x W` image yields `H * W` pairs
//! * 2-D entropy: `H = -sum p_ij log2 p_ij` over the pair distribution
//! * entropy maps: 2-D entropy of sliding windows
//! * second-order entropy: 2-D entropy of an entropy map quantized from
//!   `[0, 16]` bits onto `[0, 255]`

use rayon::prelude::*;

use crate::image::{ImageBuffer, ImageError};
use crate::nn::Model;
use crate::transforms::TransformSchedule;
use crate::visualizer::{self, OptimConfig, RunStatus, StoppingCriterion, VisualizeError};

/// Upper bound of the 2-D entropy of 8-bit images, `log2(256 * 256)`.
pub const MAX_ENTROPY_BITS: f64 = 16.0;
pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_STRIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EntropyError {
    #[error("image is {height}x{width}, at least 3x3 is required")]
    TooSmall { height: usize, width: usize },
    #[error("window {window} does not fit a {height}x{width} image")]
    Window {
        window: usize,
        height: usize,
        width: usize,
    },
    #[error("stride must be at least 1")]
    Stride,
    #[error("entropy map is {rows}x{cols}, at least 3x3 cells are required")]
    MapTooSmall { rows: usize, cols: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("no gray levels given")]
    NoLevels,
}

/// 8-bit single-channel image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::EmptyImage { height, width });
        }
        if values.len() != height * width {
            return Err(ImageError::BadLength {
                height,
                width,
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn window(&self, top: usize, left: usize, size: usize) -> GrayImage {
        let mut values = Vec::with_capacity(size * size);
        for y in top..top + size {
            values.extend_from_slice(&self.values[y * self.width + left..y * self.width + left + size]);
        }
        GrayImage {
            height: size,
            width: size,
            values,
        }
    }

    /// Gray RGB image for display.
    pub fn to_image(&self) -> ImageBuffer {
        let data = self
            .values
            .iter()
            .flat_map(|&v| [f64::from(v); 3])
            .collect();
        ImageBuffer::new(self.height, self.width, data).expect("dimensions valid")
    }
}

/// Luma of one RGB pixel, `trunc(0.3 R + 0.59 G + 0.11 B)`, clamped to
/// `[0, 255]`.
pub fn luma(rgb: [f64; 3]) -> u8 {
    let scaled = 30.0 * rgb[0] + 59.0 * rgb[1] + 11.0 * rgb[2];
    (scaled / 100.0).trunc().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(image: &ImageBuffer) -> GrayImage {
    let values = image
        .data()
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]))
        .collect();
    GrayImage {
        height: image.height(),
        width: image.width(),
        values,
    }
}

/// Joint counts of (pixel value, rounded neighborhood mean).
#[derive(Clone, PartialEq, Eq)]
pub struct CoMatrix {
    counts: Vec<u32>,
    total: u64,
}

impl std::fmt::Debug for CoMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nonzero = self.counts.iter().filter(|c| **c > 0).count();
        write!(f, "CoMatrix {{ total: {}, nonzero_bins: {nonzero} }}", self.total)
    }
}

impl CoMatrix {
    #[inline]
    pub fn count(&self, i: u8, j: u8) -> u32 {
        self.counts[usize::from(i) * 256 + usize::from(j)]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Nonzero bins as `((i, j), count)` in row-major order.
    pub fn nonzero(&self) -> impl Iterator<Item = ((u8, u8), u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(k, c)| (((k / 256) as u8, (k % 256) as u8), *c))
    }

    /// Builds a matrix from explicit counts (256x256, row-major).
    pub fn from_counts(counts: Vec<u32>) -> Option<Self> {
        if counts.len() != 256 * 256 {
            return None;
        }
        let total = counts.iter().map(|&c| u64::from(c)).sum();
        (total > 0).then_some(Self { counts, total })
    }
}

/// Rounded mean of the 8 neighbors of `(y, x)` with replicate padding.
#[inline]
fn neighborhood_mean(gray: &GrayImage, y: usize, x: usize) -> u8 {
    let (h, w) = (gray.height as isize, gray.width as isize);
    let mut sum = 0u32;
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w - 1) as usize;
            sum += u32::from(gray.get(yy, xx));
        }
    }
    // half away from zero for a nonnegative sum
    ((sum + 4) / 8) as u8
}

pub fn cooccurrence(gray: &GrayImage) -> Result<CoMatrix, EntropyError> {
    if gray.height < 3 || gray.width < 3 {
        return Err(EntropyError::TooSmall {
            height: gray.height,
            width: gray.width,
        });
    }
    let mut counts = vec![0u32; 256 * 256];
    for y in 0..gray.height {
        for x in 0..gray.width {
            let i = usize::from(gray.get(y, x));
            let j = usize::from(neighborhood_mean(gray, y, x));
            counts[i * 256 + j] += 1;
        }
    }
    Ok(CoMatrix {
        counts,
        total: (gray.height * gray.width) as u64,
    })
}

/// Shannon entropy of the pair distribution, in bits.
pub fn entropy2d(co: &CoMatrix) -> f64 {
    let n = co.total as f64;
    let h: f64 = co
        .counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = f64::from(c) / n;
            -p * p.log2()
        })
        .sum();
    // A single bin gives -1 * log2(1) = -0.0.
    h.max(0.0)
}

pub fn image_entropy(gray: &GrayImage) -> Result<f64, EntropyError> {
    Ok(entropy2d(&cooccurrence(gray)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cell entropies in bits.
    pub values: Vec<f64>,
    pub window: usize,
    pub stride: usize,
}

impl EntropyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Linear quantization of `[0, 16]` bits onto `[0, 255]`, truncating.
    pub fn quantize(&self) -> GrayImage {
        let values = self.values.iter().map(|&v| quantize_bits(v)).collect();
        GrayImage {
            height: self.rows,
            width: self.cols,
            values,
        }
    }
}

pub fn quantize_bits(bits: f64) -> u8 {
    (bits / MAX_ENTROPY_BITS * 255.0).trunc().clamp(0.0, 255.0) as u8
}

/// 2-D entropy of every `window x window` patch at the given stride. Each
/// patch is treated as a standalone image.
pub fn entropy_map(gray: &GrayImage, window: usize, stride: usize) -> Result<EntropyMap, EntropyError> {
    if stride == 0 {
        return Err(EntropyError::Stride);
    }
    if window > gray.height.min(gray.width) {
        return Err(EntropyError::Window {
            window,
            height: gray.height,
            width: gray.width,
        });
    }
    if window < 3 {
        return Err(EntropyError::TooSmall {
            height: window,
            width: window,
        });
    }
    let rows = (gray.height - window) / stride + 1;
    let cols = (gray.width - window) / stride + 1;
    let values = (0..rows * cols)
        .map(|k| {
            let patch = gray.window((k / cols) * stride, (k % cols) * stride, window);
            image_entropy(&patch).expect("window is at least 3x3")
        })
        .collect();
    Ok(EntropyMap {
        rows,
        cols,
        values,
        window,
        stride,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrder {
    pub total: f64,
    pub quantized: GrayImage,
}

/// 2-D entropy of the quantized entropy map.
pub fn second_order_entropy(map: &EntropyMap) -> Result<SecondOrder, EntropyError> {
    if map.rows < 3 || map.cols < 3 {
        return Err(EntropyError::MapTooSmall {
            rows: map.rows,
            cols: map.cols,
        });
    }
    let quantized = map.quantize();
    let total = image_entropy(&quantized)?;
    Ok(SecondOrder { total, quantized })
}

/// Mean absolute luma difference between two images.
pub fn avg_gray_change(init: &ImageBuffer, last: &ImageBuffer) -> Result<f64, EntropyError> {
    if init.dims() != last.dims() {
        return Err(ImageError::DimensionMismatch {
            left: init.dims(),
            right: last.dims(),
        }
        .into());
    }
    let a = to_grayscale(init);
    let b = to_grayscale(last);
    let sum: u64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| u64::from(x.abs_diff(*y)))
        .sum();
    Ok(sum as f64 / a.values.len() as f64)
}

/// The gray levels 0, 10, ..., 250 and 255.
pub fn default_gray_levels() -> Vec<u8> {
    (0..=25u8).map(|k| k * 10).chain([255]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSuccess {
    pub status: RunStatus,
    pub avg_gray_change: f64,
    pub second_order_total: f64,
    pub first_order_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub gray_level: u8,
    pub image_id: String,
    pub outcome: Result<SweepSuccess, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// Sorted by gray level.
    pub records: Vec<SweepRecord>,
    /// Level with the largest second-order total, ties to the smaller level.
    /// `None` when every run failed.
    pub best_init: Option<u8>,
    pub window: usize,
    pub stride: usize,
}

/// Entropy settings of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepEntropy {
    pub window: usize,
    pub stride: usize,
}

impl Default for SweepEntropy {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

pub fn sweep_image_id(level: u8) -> String {
    format!("init_{level:03}")
}

/// Picks the level with the largest second-order total; ties go to the
/// smaller level.
pub fn select_best(records: &[SweepRecord]) -> Option<u8> {
    records
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|s| (r.gray_level, s.second_order_total)))
        .fold(None, |best: Option<(u8, f64)>, (g, t)| match best {
            Some((bg, bt)) if bt > t || (bt == t && bg < g) => Some((bg, bt)),
            _ => Some((g, t)),
        })
        .map(|(g, _)| g)
}

/// Scores one finished visualization.
pub fn score_run(
    init: &ImageBuffer,
    result: &ImageBuffer,
    status: RunStatus,
    entropy: SweepEntropy,
) -> Result<SweepSuccess, EntropyError> {
    let gray = to_grayscale(result);
    let map = entropy_map(&gray, entropy.window, entropy.stride)?;
    let second = second_order_entropy(&map)?;
    Ok(SweepSuccess {
        status,
        avg_gray_change: avg_gray_change(init, result)?,
        second_order_total: second.total,
        first_order_mean: map.mean(),
    })
}

/// Runs `run` for every level (in parallel) and assembles the report.
///
/// `run` maps a gray level to the initial image and the finished
/// visualization. Failures are recorded, not propagated.
pub fn sweep_with<F, E>(
    levels: &[u8],
    entropy: SweepEntropy,
    run: F,
) -> Result<(SweepReport, Vec<(u8, ImageBuffer)>), EntropyError>
where
    F: Fn(u8) -> Result<(ImageBuffer, ImageBuffer, RunStatus), E> + Sync,
    E: std::fmt::Display,
{
    if levels.is_empty() {
        return Err(EntropyError::NoLevels);
    }
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let results: Vec<(SweepRecord, Option<ImageBuffer>)> = sorted
        .par_iter()
        .map(|&g| {
            let outcome = run(g).map_err(|e| e.to_string()).and_then(|(init, img, status)| {
                score_run(&init, &img, status, entropy)
                    .map(|s| (s, img))
                    .map_err(|e| e.to_string())
            });
            let (outcome, image) = match outcome {
                Ok((s, img)) => (Ok(s), Some(img)),
                Err(e) => (Err(e), None),
            };
            (
                SweepRecord {
                    gray_level: g,
                    image_id: sweep_image_id(g),
                    outcome,
                },
                image,
            )
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut images = Vec::new();
    for (rec, img) in results {
        if let Some(img) = img {
            images.push((rec.gray_level, img));
        }
        records.push(rec);
    }
    let best_init = select_best(&records);
    Ok((
        SweepReport {
            records,
            best_init,
            window: entropy.window,
            stride: entropy.stride,
        },
        images,
    ))
}

/// Visualizes `target_class` from every constant gray image `(g, g, g)` and
/// ranks the inits by second-order entropy of the results.
#[allow(clippy::too_many_arguments)]
pub fn init_sweep(
    model: &Model,
    target_class: usize,
    schedule: &TransformSchedule,
    config: &OptimConfig,
    stop: &StoppingCriterion,
    gray_levels: &[u8],
    entropy: SweepEntropy,
) -> Result<(SweepReport, Vec<(u8, ImageBuffer)>), EntropyError> {
    let [_, h, w] = model.input_shape();
    sweep_with(gray_levels, entropy, |g| {
        let init = ImageBuffer::gray(h, w, f64::from(g));
        let (img, trace) =
            visualizer::visualize(model, target_class, &init, schedule, config, stop)?;
        Ok::<_, VisualizeError>((init, img, trace.status))
    })
}
