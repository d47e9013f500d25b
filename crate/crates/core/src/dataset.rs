//! Synthetic geometric-shapes dataset.
//!
//! Each 64x64 sample holds one bright gray shape on a darker gray
//! background, with random position, rotation and size. A pixel belongs to
//! the shape when its center `(x, y)` lies inside the shape's region, so
//! rendering is exact and every class can be checked geometrically.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::image::ImageBuffer;
use crate::ppm::{self, PpmError};
use crate::rng;

pub const IMAGE_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Ring,
    Cross,
    Stripes,
    Checker,
    Disk,
    HexOutline,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Ring,
        ShapeClass::Cross,
        ShapeClass::Stripes,
        ShapeClass::Checker,
        ShapeClass::Disk,
        ShapeClass::HexOutline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Ring => "ring",
            ShapeClass::Cross => "cross",
            ShapeClass::Stripes => "stripes",
            ShapeClass::Checker => "checker",
            ShapeClass::Disk => "disk",
            ShapeClass::HexOutline => "hex_outline",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    /// Whether the shape-local point `(u, v)` is foreground for outer radius `r`.
    pub fn contains(self, u: f64, v: f64, r: f64) -> bool {
        let rho = u.hypot(v);
        match self {
            ShapeClass::Disk => rho <= r,
            ShapeClass::Ring => rho <= r && rho >= 0.8 * r,
            ShapeClass::Cross => {
                let t = 0.15 * r;
                (u.abs() <= t && v.abs() <= r) || (v.abs() <= t && u.abs() <= r)
            }
            ShapeClass::Stripes => {
                let band = ((u + r) / (r / 3.0)).floor() as i64;
                rho <= r && band.rem_euclid(2) == 0
            }
            ShapeClass::Checker => {
                let cell = r / 2.0;
                let a = ((u + r) / cell).floor() as i64;
                let b = ((v + r) / cell).floor() as i64;
                rho <= r && (a + b).rem_euclid(2) == 0
            }
            ShapeClass::HexOutline => {
                // distance to center measured in hexagon apothems
                let apothem = r * (PI / 6.0).cos();
                let d = (0..3)
                    .map(|k| {
                        let a = k as f64 * PI / 3.0;
                        (u * a.cos() + v * a.sin()).abs()
                    })
                    .fold(0.0, f64::max);
                d <= apothem && d >= apothem - 0.45 * r
            }
        }
    }
}

/// Rendering parameters of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeParams {
    pub class: ShapeClass,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    /// Rotation in radians.
    pub angle: f64,
    pub foreground: u8,
    pub background: u8,
}

impl ShapeParams {
    pub fn sample(class: ShapeClass, rng: &mut rng::Rng) -> Self {
        use rand::Rng as _;
        let radius = rng::uniform(rng, 14.0, 20.0);
        let margin = radius + 3.0;
        let hi = IMAGE_SIZE as f64 - 1.0 - margin;
        let center_x = rng::uniform(rng, margin, hi);
        let center_y = rng::uniform(rng, margin, hi);
        let angle = rng::uniform(rng, 0.0, 2.0 * PI);
        let foreground = rng.gen_range(150..=255u8);
        let background = rng.gen_range(0..=90u8);
        Self {
            class,
            center_x,
            center_y,
            radius,
            angle,
            foreground,
            background,
        }
    }

    /// Whether the pixel centered at `(x, y)` is foreground.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        // rotate into the shape frame
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        self.class.contains(u, v, self.radius)
    }

    pub fn render(&self) -> ImageBuffer {
        let mut img = ImageBuffer::gray(IMAGE_SIZE, IMAGE_SIZE, f64::from(self.background));
        let fg = f64::from(self.foreground);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                if self.covers(x as f64, y as f64) {
                    img.set_pixel(y, x, [fg; 3]);
                }
            }
        }
        img
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDataset {
    pub images: Vec<ImageBuffer>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Present for generated datasets, absent for ones loaded from disk.
    pub params: Vec<ShapeParams>,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("count_per_class must be at least 1")]
    EmptyRequest,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Ppm(#[from] PpmError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

/// Renders `count_per_class` samples of every class.
///
/// Sample `i` has class `i % 6` and draws its parameters from stream `i` of
/// `seed`, so the dataset does not depend on how rendering is scheduled.
pub fn generate_dataset(seed: u64, count_per_class: usize) -> Result<ShapeDataset, DatasetError> {
    if count_per_class == 0 {
        return Err(DatasetError::EmptyRequest);
    }
    let n = count_per_class * ShapeClass::ALL.len();
    let params: Vec<ShapeParams> = (0..n)
        .map(|i| {
            let class = ShapeClass::ALL[i % ShapeClass::ALL.len()];
            ShapeParams::sample(class, &mut rng::stream(seed, i as u64))
        })
        .collect();
    let images = params.par_iter().map(ShapeParams::render).collect();
    Ok(ShapeDataset {
        images,
        labels: params.iter().map(|p| p.class.index()).collect(),
        class_names: ShapeClass::names(),
        params,
        seed,
    })
}

impl ShapeDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Subset with the given sample indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> ShapeDataset {
        ShapeDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            params: if self.params.len() == self.len() {
                indices.iter().map(|&i| self.params[i]).collect()
            } else {
                Vec::new()
            },
            seed: self.seed,
        }
    }

    /// Writes `sample_NNNNN.ppm` files and a `manifest.txt` listing
    /// `<file> <label> <class name>` per line after a header line.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = format!(
            "tivis-dataset v1 seed={} count={} classes={}\n",
            self.seed,
            self.len(),
            self.class_names.join(",")
        );
        for (i, (img, label)) in self.images.iter().zip(&self.labels).enumerate() {
            let file = format!("sample_{i:05}.ppm");
            ppm::write_ppm(img, dir.join(&file))?;
            manifest.push_str(&format!("{file} {label} {}\n", self.class_names[*label]));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, message: &str| DatasetError::Manifest {
            line: line + 1,
            message: message.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty manifest"))?;
        let mut seed = 0;
        let mut class_names = Vec::new();
        let mut fields = header.split(' ');
        if fields.next() != Some("tivis-dataset") || fields.next() != Some("v1") {
            return Err(bad(0, "missing `tivis-dataset v1` header"));
        }
        for f in fields {
            match f.split_once('=') {
                Some(("seed", v)) => seed = v.parse().map_err(|_| bad(0, "bad seed"))?,
                Some(("classes", v)) => class_names = v.split(',').map(String::from).collect(),
                _ => {}
            }
        }
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (ln, line) in lines {
            let mut parts = line.splitn(3, ' ');
            let file = parts.next().ok_or_else(|| bad(ln, "missing file"))?;
            let label: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(ln, "missing or bad label"))?;
            if label >= class_names.len() {
                return Err(bad(ln, "label out of range"));
            }
            images.push(ppm::read_ppm(dir.join(file))?);
            labels.push(label);
        }
        Ok(ShapeDataset {
            images,
            labels,
            class_names,
            params: Vec::new(),
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = generate_dataset(1, 10).unwrap();
        let b = generate_dataset(1, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![10; 6]);
        let c = generate_dataset(2, 10).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(generate_dataset(1, 0), Err(DatasetError::EmptyRequest)));
    }

    #[test]
    fn every_sample_has_two_levels() {
        let ds = generate_dataset(5, 5).unwrap();
        for (img, p) in ds.images.iter().zip(&ds.params) {
            let fg = f64::from(p.foreground);
            let bg = f64::from(p.background);
            let n_fg = img.data().iter().filter(|v| **v == fg).count();
            assert!(img.data().iter().all(|v| *v == fg || *v == bg));
            assert!(n_fg > 3 * 20, "{:?} renders too few pixels", p.class);
            assert!(img.is_integer_valued());
        }
    }

    #[test]
    fn hex_outline_has_hexagonal_symmetry() {
        let r = 15.0;
        for k in 0..40 {
            let t = k as f64 * 0.157;
            let (u, v) = (12.0 * t.cos(), 12.0 * t.sin());
            let a = PI / 3.0;
            let (u2, v2) = (u * a.cos() - v * a.sin(), u * a.sin() + v * a.cos());
            assert_eq!(
                ShapeClass::HexOutline.contains(u, v, r),
                ShapeClass::HexOutline.contains(u2, v2, r)
            );
        }
    }

    #[test]
    fn names_round_trip() {
        for c in ShapeClass::ALL {
            assert_eq!(ShapeClass::from_name(c.name()), Some(c));
            assert_eq!(ShapeClass::from_index(c.index()), Some(c));
        }
    }
}
