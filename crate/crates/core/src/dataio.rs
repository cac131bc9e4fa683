//! Datasets, the synthetic credit generator, IDX parsing, and the on-disk
//! formats for explanation maps.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::explain::{ExplanationMap, MapNormalization, Method};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Dataset-wide mean and standard deviation (over all features jointly).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Statistics of the given (training) inputs. Population standard deviation.
    pub fn fit(inputs: &Tensor) -> Result<Self> {
        let n = inputs.len() as f64;
        let mean = inputs.sum() / n;
        let var = inputs.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn apply(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }

    pub fn invert(&self, value: f64) -> f64 {
        value * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    feature_names: Option<Vec<String>>,
    normalization: Option<Normalization>,
    /// `(rows, cols)` when the features are image pixels.
    image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                sample,
                label,
                classes,
            });
        }
        let inputs = if inputs.ndim() == 2 {
            inputs
        } else {
            let (r, c) = (inputs.rows(), inputs.cols());
            inputs.reshape(vec![r, c])?
        };
        Ok(Self {
            inputs,
            labels,
            classes,
            feature_names: None,
            normalization: None,
            image_shape: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::LengthMismatch {
                shape: vec![self.dim()],
                len: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim()],
                found: vec![rows, cols],
            });
        }
        self.image_shape = Some((rows, cols));
        Ok(self)
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows `indices` as a new dataset carrying the same metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            inputs: self.inputs.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            feature_names: self.feature_names.clone(),
            normalization: self.normalization,
            image_shape: self.image_shape,
        })
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Fits statistics on this dataset and applies them.
    pub fn normalize(&self) -> Result<Self> {
        let stats = Normalization::fit(&self.inputs)?;
        self.normalize_with(stats)
    }

    /// Applies statistics fitted elsewhere (e.g. on the training split).
    pub fn normalize_with(&self, stats: Normalization) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(Error::AlreadyNormalized);
        }
        let mut out = self.clone();
        out.inputs = self.inputs.map(|v| stats.apply(v));
        out.normalization = Some(stats);
        Ok(out)
    }

    pub fn denormalize(&self) -> Self {
        match self.normalization {
            None => self.clone(),
            Some(stats) => {
                let mut out = self.clone();
                out.inputs = self.inputs.map(|v| stats.invert(v));
                out.normalization = None;
                out
            }
        }
    }

    /// Per-feature `(min, max)` over all samples.
    pub fn feature_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..self.len() {
            for (j, &v) in self.sample(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        (lo, hi)
    }

    /// Writes `feature..., label` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let names: Vec<String> = match &self.feature_names {
            Some(n) => n.clone(),
            None => (0..self.dim()).map(|j| format!("x{j}")).collect(),
        };
        writeln!(w, "{},label", names.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.sample(i).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{},{}", row.join(","), self.labels[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of the synthetic credit data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditSample {
    pub gender: f64,
    pub income: f64,
    pub taxes: f64,
}

impl CreditSample {
    pub fn from_row(row: &[f64]) -> Self {
        Self {
            gender: row[0],
            income: row[1],
            taxes: row[2],
        }
    }
}

/// Normal vector of the income/taxes constraint `0.4·income − taxes = 0`.
pub const CREDIT_CONSTRAINT: [f64; 3] = [0.0, 0.4, -1.0];
/// Weights of the bank's classifier over (gender, income, taxes).
pub const CREDIT_WEIGHTS: [f64; 3] = [0.9, 0.1, 0.0];

pub fn raw_income(rng: &mut RngState) -> f64 {
    rng.normal(5000.0, 5000.0).max(250.0)
}

/// Synthetic credit applications: gender uniform on {−1, +1}; income drawn
/// from N(5000, 5000²), clipped below at 250 and divided by the sample maximum;
/// taxes = 0.4·income. Labels are the decisions of σ(0.9·gender + 0.1·income)
/// thresholded at 0.5.
pub fn gen_credit(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = RngState::new(seed);
    let mut gender = Vec::with_capacity(n);
    let mut income = Vec::with_capacity(n);
    for _ in 0..n {
        gender.push(if rng.below(2) == 0 { -1.0 } else { 1.0 });
        income.push(raw_income(&mut rng));
    }
    let max = income.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut data = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    for (g, inc) in gender.into_iter().zip(income) {
        let inc = inc / max;
        data.extend_from_slice(&[g, inc, 0.4 * inc]);
        let score = CREDIT_WEIGHTS[0] * g + CREDIT_WEIGHTS[1] * inc;
        labels.push(usize::from(sigmoid(score) > 0.5));
    }
    LabeledDataset::new(Tensor::matrix(n, 3, data)?, labels, 2)?
        .with_feature_names(vec!["gender".into(), "income".into(), "taxes".into()])
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what} header")))
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, "image")?;
    if magic != IDX_IMAGES {
        return Err(Error::MagicMismatch {
            expected: IDX_IMAGES,
            found: magic,
        });
    }
    let n = be_u32(&bytes, 4, "image")? as usize;
    let rows = be_u32(&bytes, 8, "image")? as usize;
    let cols = be_u32(&bytes, 12, "image")? as usize;
    let need = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Truncated(format!(
            "image payload has {} bytes, header promises {need}",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after image payload",
            payload.len() - need
        )));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, "label")?;
    if magic != IDX_LABELS {
        return Err(Error::MagicMismatch {
            expected: IDX_LABELS,
            found: magic,
        });
    }
    let n = be_u32(&bytes, 4, "label")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::Truncated(format!(
            "label payload has {} bytes, header promises {n}",
            payload.len()
        )));
    }
    if payload.len() > n {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after label payload",
            payload.len() - n
        )));
    }
    Ok(payload.to_vec())
}

/// Parses an IDX image/label pair. Pixels are scaled to [0, 1]; the class
/// count is `max(label) + 1`, at least 10 for digit data.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 || rows * cols == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1).max(10);
    LabeledDataset::new(
        Tensor::matrix(n, rows * cols, data)?,
        labels.iter().map(|&l| l as usize).collect(),
        classes,
    )?
    .with_image_shape(rows, cols)
}

fn write_maybe_gz(path: &Path, bytes: &[u8], gz: bool) -> Result<()> {
    let file = File::create(path)?;
    if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.flush()?;
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes)?;
        w.flush()?;
    }
    Ok(())
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8], gz: bool) -> Result<()> {
    if rows * cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::InvalidArgument("pixel buffer does not hold whole images".into()));
    }
    let n = pixels.len() / (rows * cols);
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES, n as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(pixels);
    write_maybe_gz(path, &bytes, gz)
}

pub fn write_idx_labels(path: &Path, labels: &[u8], gz: bool) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_maybe_gz(path, &bytes, gz)
}

const MAP_MAGIC: &[u8; 7] = b"FWMAP01";
const PROJECTED_BIT: u8 = 0x80;

/// Layout (little-endian): `FWMAP01`, u8 method tag (high bit set for
/// tangent-projected maps), u8 normalization tag, u32 class, u32 ndim,
/// ndim × u32 dims, then `prod(dims)` f32 values.
pub fn encode_map(map: &ExplanationMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * map.values().len());
    out.extend_from_slice(MAP_MAGIC);
    let mut tag = map.method().tag();
    if map.projected() {
        tag |= PROJECTED_BIT;
    }
    out.push(tag);
    out.push(map.normalization().tag());
    out.extend_from_slice(&(map.class() as u32).to_le_bytes());
    out.extend_from_slice(&(map.shape().len() as u32).to_le_bytes());
    for &d in map.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_map(bytes: &[u8]) -> Result<ExplanationMap> {
    if bytes.len() < 17 || &bytes[..7] != MAP_MAGIC {
        return Err(Error::CorruptHeader("missing FWMAP01 magic".into()));
    }
    let tag = bytes[7];
    let method = Method::from_tag(tag & !PROJECTED_BIT)
        .ok_or_else(|| Error::CorruptHeader(format!("unknown method tag {tag}")))?;
    let normalization = MapNormalization::from_tag(bytes[8])
        .ok_or_else(|| Error::CorruptHeader(format!("unknown normalization tag {}", bytes[8])))?;
    let le = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::CorruptHeader("header truncated".into()))
    };
    let class = le(9)? as usize;
    let ndim = le(13)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::CorruptHeader(format!("implausible rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        shape.push(le(17 + 4 * i)? as usize);
    }
    let start = 17 + 4 * ndim;
    let count: usize = shape.iter().product();
    if count == 0 || bytes.len() - start != 4 * count {
        return Err(Error::CorruptHeader(format!(
            "shape {shape:?} needs {} payload bytes, found {}",
            4 * count,
            bytes.len() - start
        )));
    }
    let values = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut map = ExplanationMap::new(values, shape, method, class)?.with_normalization(normalization);
    if tag & PROJECTED_BIT != 0 {
        map = map.into_projected();
    }
    Ok(map)
}

pub fn save_map(map: &ExplanationMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_map(map))?;
    w.flush()?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<ExplanationMap> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_map(&bytes)
}

/// Binary (P5) greyscale rendering, min-max scaled to 0..=255. A constant map
/// renders as all zeros.
pub fn encode_pgm(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::LengthMismatch {
            shape: vec![rows, cols],
            len: values.len(),
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn save_pgm(values: &[f64], rows: usize, cols: usize, path: &Path) -> Result<()> {
    let bytes = encode_pgm(values, rows, cols)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Stroke segments of the "42" target in a 28×28 frame, as (col, row) pairs.
const FORTY_TWO: [((f64, f64), (f64, f64)); 9] = [
    ((4.0, 5.0), (4.0, 15.0)),
    ((4.0, 15.0), (12.0, 15.0)),
    ((10.0, 5.0), (10.0, 22.0)),
    ((15.0, 7.0), (17.0, 5.0)),
    ((17.0, 5.0), (22.0, 5.0)),
    ((22.0, 5.0), (24.0, 7.0)),
    ((24.0, 7.0), (24.0, 11.0)),
    ((24.0, 11.0), (15.0, 22.0)),
    ((15.0, 22.0), (24.0, 22.0)),
];

/// Rasterized "42" target map, abs-sum-one normalized. Pixels within 1.2 px
/// (in 28×28 units) of a stroke are on; other sizes rescale the strokes.
pub fn target_42(rows: usize, cols: usize) -> Vec<f64> {
    let sy = rows as f64 / 28.0;
    let sx = cols as f64 / 28.0;
    let mut mask = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (px, py) = (c as f64 / sx, r as f64 / sy);
            let on = FORTY_TWO.iter().any(|&((ax, ay), (bx, by))| {
                let (dx, dy) = (bx - ax, by - ay);
                let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                ((px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2)).sqrt() <= 1.2
            });
            if on {
                mask[r * cols + c] = 1.0;
            }
        }
    }
    let total: f64 = mask.iter().sum();
    mask.iter().map(|v| v / total).collect()
}
