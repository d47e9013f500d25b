//! Model file format.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "GBXM"
//! 4       1     format version (1)
//! 5       4     manifest length M, u32 little-endian
//! 9       M     manifest, UTF-8 text, one record per line
//! 9+M     B     weight blob, little-endian IEEE-754 f64 values
//! ```
//!
//! Manifest records, in order:
//!
//! ```text
//! input 3 <H> <W>
//! pixel_norm unit_01|signed_11
//! classes <K>
//! class <name>                      (K lines, in class-index order)
//! layers <L>
//! layer <i> conv2d out=<O> in=<I> kh=<KH> kw=<KW> stride=<S> pad=<P> weight=<off>+<len> bias=<off>+<len>
//! layer <i> dense out=<O> in=<I> weight=<off>+<len> bias=<off>+<len>
//! layer <i> relu|maxpool2x2|avgpool_global|flatten
//! blob <B>
//! ```
//!
//! Offsets and lengths are in bytes relative to the start of the blob.
//! Weights are stored row-major in their declared shape.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::layer::{Conv2d, Dense, Layer, LayerKind};
use super::model::{Model, ModelError, PixelNorm};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GBXM";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected \"GBXM\"")]
    BadMagic(Vec<u8>),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u8),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("length mismatch in {what}: declared {declared} bytes, found {actual}")]
    LengthMismatch {
        what: &'static str,
        declared: usize,
        actual: usize,
    },
    #[error("layer {index} ({kind}): {what} declares {expected} values but stores {stored}")]
    LayerShape {
        index: usize,
        kind: LayerKind,
        what: &'static str,
        expected: usize,
        stored: usize,
    },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("cannot encode model: {0}")]
    Encode(String),
}

/// Serializes a model into the byte layout above.
pub fn encode_model(model: &Model) -> Result<Vec<u8>, FormatError> {
    let mut manifest = String::new();
    let [c, h, w] = model.input_shape();
    manifest.push_str(&format!("input {c} {h} {w}\n"));
    manifest.push_str(&format!("pixel_norm {}\n", model.pixel_norm().name()));
    manifest.push_str(&format!("classes {}\n", model.num_classes()));
    for name in model.class_names() {
        if name.is_empty() || name.contains(['\n', '\r']) || name.trim() != name {
            return Err(FormatError::Encode(format!("unencodable class name {name:?}")));
        }
        manifest.push_str(&format!("class {name}\n"));
    }
    manifest.push_str(&format!("layers {}\n", model.layers().len()));

    let mut blob: Vec<u8> = Vec::new();
    let mut push = |values: &[f64]| -> String {
        let off = blob.len();
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        format!("{off}+{}", values.len() * 8)
    };
    for (i, layer) in model.layers().iter().enumerate() {
        let kind = layer.kind();
        match layer {
            Layer::Conv2d(conv) => {
                let (kh, kw) = conv.kernel();
                let wseg = push(conv.weight.data());
                let bseg = push(&conv.bias);
                manifest.push_str(&format!(
                    "layer {i} {kind} out={} in={} kh={kh} kw={kw} stride={} pad={} weight={wseg} bias={bseg}\n",
                    conv.out_channels(),
                    conv.in_channels(),
                    conv.stride,
                    conv.padding
                ));
            }
            Layer::Dense(dense) => {
                let wseg = push(dense.weight.data());
                let bseg = push(&dense.bias);
                manifest.push_str(&format!(
                    "layer {i} {kind} out={} in={} weight={wseg} bias={bseg}\n",
                    dense.out_dim(),
                    dense.in_dim()
                ));
            }
            _ => manifest.push_str(&format!("layer {i} {kind}\n")),
        }
    }
    manifest.push_str(&format!("blob {}\n", blob.len()));

    let manifest_len = u32::try_from(manifest.len())
        .map_err(|_| FormatError::Encode("manifest larger than 4 GiB".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, FormatError> {
    decode_model(&fs::read(path)?)
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_record(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>), FormatError> {
        let (idx, line) = self.iter.next().ok_or(FormatError::Manifest {
            line: self.last + 1,
            message: format!("expected `{keyword}` record, manifest ended"),
        })?;
        self.last = idx + 1;
        let mut parts = line.split(' ');
        if parts.next() != Some(keyword) {
            return Err(FormatError::Manifest {
                line: idx + 1,
                message: format!("expected `{keyword}` record, got {line:?}"),
            });
        }
        Ok((idx + 1, parts.collect()))
    }
}

fn manifest_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Manifest {
        line,
        message: message.into(),
    }
}

fn parse_usize(line: usize, s: &str) -> Result<usize, FormatError> {
    s.parse()
        .map_err(|_| manifest_err(line, format!("expected an unsigned integer, got {s:?}")))
}

struct Segment {
    offset: usize,
    len: usize,
}

fn parse_segment(line: usize, s: &str) -> Result<Segment, FormatError> {
    let (off, len) = s
        .split_once('+')
        .ok_or_else(|| manifest_err(line, format!("bad segment {s:?}, expected <offset>+<len>")))?;
    Ok(Segment {
        offset: parse_usize(line, off)?,
        len: parse_usize(line, len)?,
    })
}

fn read_values(
    blob: &[u8],
    seg: &Segment,
    line: usize,
    index: usize,
    kind: LayerKind,
    what: &'static str,
    expected: usize,
) -> Result<Vec<f64>, FormatError> {
    if !seg.len.is_multiple_of(8) {
        return Err(manifest_err(
            line,
            format!("{what} length {} is not a multiple of 8", seg.len),
        ));
    }
    let stored = seg.len / 8;
    if stored != expected {
        return Err(FormatError::LayerShape {
            index,
            kind,
            what,
            expected,
            stored,
        });
    }
    let end = seg
        .offset
        .checked_add(seg.len)
        .filter(|&e| e <= blob.len())
        .ok_or_else(|| manifest_err(line, format!("{what} segment lies outside the blob")))?;
    Ok(blob[seg.offset..end]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::LengthMismatch {
            what: "header",
            declared: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    let manifest_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let rest = &bytes[HEADER_LEN..];
    if rest.len() < manifest_len {
        return Err(FormatError::LengthMismatch {
            what: "manifest",
            declared: manifest_len,
            actual: rest.len(),
        });
    }
    let manifest = std::str::from_utf8(&rest[..manifest_len])
        .map_err(|e| manifest_err(0, format!("manifest is not UTF-8: {e}")))?;
    let blob = &rest[manifest_len..];

    let mut lines = Lines {
        iter: manifest.lines().enumerate(),
        last: 0,
    };
    let (ln, f) = lines.next_record("input")?;
    if f.len() != 3 {
        return Err(manifest_err(ln, "input needs 3 dimensions"));
    }
    let input_shape = [
        parse_usize(ln, f[0])?,
        parse_usize(ln, f[1])?,
        parse_usize(ln, f[2])?,
    ];
    let (ln, f) = lines.next_record("pixel_norm")?;
    let pixel_norm = f
        .first()
        .and_then(|s| PixelNorm::parse(s))
        .filter(|_| f.len() == 1)
        .ok_or_else(|| manifest_err(ln, format!("unknown pixel_norm {f:?}")))?;
    let (ln, f) = lines.next_record("classes")?;
    let num_classes = parse_usize(ln, f.first().copied().unwrap_or(""))?;
    let mut class_names = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let (ln, f) = lines.next_record("class")?;
        let name = f.join(" ");
        if name.is_empty() {
            return Err(manifest_err(ln, "empty class name"));
        }
        class_names.push(name);
    }
    let (ln, f) = lines.next_record("layers")?;
    let num_layers = parse_usize(ln, f.first().copied().unwrap_or(""))?;

    // Read the blob length first so that truncation is reported as such.
    let layer_lines: Vec<(usize, Vec<&str>)> = (0..num_layers)
        .map(|_| lines.next_record("layer"))
        .collect::<Result<_, _>>()?;
    let (ln, f) = lines.next_record("blob")?;
    let declared = parse_usize(ln, f.first().copied().unwrap_or(""))?;
    if declared != blob.len() {
        return Err(FormatError::LengthMismatch {
            what: "weight blob",
            declared,
            actual: blob.len(),
        });
    }
    if let Some((idx, _)) = lines.iter.next() {
        return Err(manifest_err(idx + 1, "trailing records after `blob`"));
    }

    let mut layers = Vec::with_capacity(num_layers);
    for (index, (ln, f)) in layer_lines.into_iter().enumerate() {
        if f.first().map(|s| parse_usize(ln, s)).transpose()? != Some(index) {
            return Err(manifest_err(ln, format!("expected layer index {index}")));
        }
        let kind = f
            .get(1)
            .and_then(|s| LayerKind::parse(s))
            .ok_or_else(|| manifest_err(ln, format!("unknown layer kind {:?}", f.get(1))))?;
        let mut kv = HashMap::new();
        for item in &f[2..] {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| manifest_err(ln, format!("expected key=value, got {item:?}")))?;
            kv.insert(k, v);
        }
        let get = |key: &str| -> Result<&str, FormatError> {
            kv.get(key)
                .copied()
                .ok_or_else(|| manifest_err(ln, format!("{kind} layer is missing `{key}`")))
        };
        let layer = match kind {
            LayerKind::Conv2d => {
                let dims = [
                    parse_usize(ln, get("out")?)?,
                    parse_usize(ln, get("in")?)?,
                    parse_usize(ln, get("kh")?)?,
                    parse_usize(ln, get("kw")?)?,
                ];
                let stride = parse_usize(ln, get("stride")?)?;
                let padding = parse_usize(ln, get("pad")?)?;
                let wseg = parse_segment(ln, get("weight")?)?;
                let bseg = parse_segment(ln, get("bias")?)?;
                let expected = dims.iter().product();
                let w = read_values(blob, &wseg, ln, index, kind, "weight", expected)?;
                let b = read_values(blob, &bseg, ln, index, kind, "bias", dims[0])?;
                let weight = Tensor::new(dims.to_vec(), w).expect("length checked");
                Layer::Conv2d(Conv2d::new(weight, b, stride, padding))
            }
            LayerKind::Dense => {
                let out = parse_usize(ln, get("out")?)?;
                let inp = parse_usize(ln, get("in")?)?;
                let wseg = parse_segment(ln, get("weight")?)?;
                let bseg = parse_segment(ln, get("bias")?)?;
                let w = read_values(blob, &wseg, ln, index, kind, "weight", out * inp)?;
                let b = read_values(blob, &bseg, ln, index, kind, "bias", out)?;
                let weight = Tensor::new(vec![out, inp], w).expect("length checked");
                Layer::Dense(Dense::new(weight, b))
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::MaxPool2x2 => Layer::MaxPool2x2,
            LayerKind::AvgPoolGlobal => Layer::AvgPoolGlobal,
            LayerKind::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    Ok(Model::new(layers, input_shape, class_names, pixel_norm)?)
}
