//! The six-point circle problem and MNIST parity subsets read from IDX files.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ntk_core::dynamics::SampleSet;
use ntk_core::rng::{streams, RngStream};
use ntk_core::Matrix;
use sha2::{Digest, Sha256};

use crate::error::{ExpError, Result};

/// Points `(cos(i pi / 3), sin(i pi / 3))` for `i = 1..=6` with labels
/// alternating `0, 1, 0, 1, 0, 1`.
pub fn make_circle_dataset() -> SampleSet {
    let rows: Vec<[f64; 2]> = (1..=6)
        .map(|i| {
            let t = f64::from(i) * PI / 3.0;
            [t.cos(), t.sin()]
        })
        .collect();
    let x = Matrix::from_rows(&rows).expect("six rows of two");
    SampleSet::new(x, vec![0, 1, 0, 1, 0, 1]).expect("circle points are distinct")
}

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Conventional file names inside an MNIST directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Parity label of a digit: odd digits map to 1, even digits to 0.
pub fn parity_label(digit: u8) -> u8 {
    digit % 2
}

/// Raw contents of an IDX image file.
#[derive(Clone, Debug)]
pub struct IdxImages {
    pub count: usize,
    pub pixels: Vec<u8>,
    pub sha256: String,
}

/// Raw contents of an IDX label file.
#[derive(Clone, Debug)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
    pub sha256: String,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ExpError::io(path, e))
}

fn be_u32(path: &Path, bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ExpError::format(path, field, format!("file ends after {} bytes", bytes.len())))
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(path, bytes, 0, "magic")?;
    if magic != expected {
        return Err(ExpError::format(
            path,
            "magic",
            format!("expected {expected:#010x}, found {magic:#010x}"),
        ));
    }
    Ok(())
}

fn payload<'a>(path: &Path, bytes: &'a [u8], header: usize, len: usize) -> Result<&'a [u8]> {
    let available = bytes.len() - header;
    if available < len {
        return Err(ExpError::format(
            path,
            "payload",
            format!("truncated: {available} bytes present, {len} declared"),
        ));
    }
    if available > len {
        return Err(ExpError::format(
            path,
            "payload",
            format!("{} trailing bytes after {len} declared", available - len),
        ));
    }
    Ok(&bytes[header..])
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    check_magic(path, bytes, IMAGE_MAGIC)?;
    let count = be_u32(path, bytes, 4, "image count")? as usize;
    let rows = be_u32(path, bytes, 8, "row count")? as usize;
    let cols = be_u32(path, bytes, 12, "column count")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(ExpError::format(
            path,
            "image dimensions",
            format!("expected {IMAGE_SIDE}x{IMAGE_SIDE}, found {rows}x{cols}"),
        ));
    }
    let pixels = payload(path, bytes, 16, count * IMAGE_PIXELS)?.to_vec();
    Ok(IdxImages {
        count,
        pixels,
        sha256: sha256_hex(bytes),
    })
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<IdxLabels> {
    check_magic(path, bytes, LABEL_MAGIC)?;
    let count = be_u32(path, bytes, 4, "label count")? as usize;
    let labels = payload(path, bytes, 8, count)?.to_vec();
    if let Some(pos) = labels.iter().position(|&d| d > 9) {
        return Err(ExpError::format(
            path,
            "label value",
            format!("record {pos} holds {}", labels[pos]),
        ));
    }
    Ok(IdxLabels {
        labels,
        sha256: sha256_hex(bytes),
    })
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(path, &read_file(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<IdxLabels> {
    parse_idx_labels(path, &read_file(path)?)
}

/// A seeded subset of MNIST with parity labels.
#[derive(Clone, Debug)]
pub struct MnistSubset {
    /// `n x 784`, pixels scaled to `[0, 1]`.
    pub images: Matrix,
    pub digits: Vec<u8>,
    pub parity: Vec<u8>,
    /// Record indices of the chosen images in the source files.
    pub indices: Vec<usize>,
    pub images_sha256: String,
    pub labels_sha256: String,
}

impl MnistSubset {
    pub fn sample_set(&self) -> Result<SampleSet> {
        Ok(SampleSet::new(self.images.clone(), self.parity.clone())?)
    }
}

/// `n` distinct indices out of `0..total`, uniformly without replacement
/// (partial Fisher-Yates).
fn sample_without_replacement(rng: &mut RngStream, total: usize, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..total).collect();
    for k in 0..n {
        let span = total - k;
        let pick = k + ((rng.uniform() * span as f64) as usize).min(span - 1);
        pool.swap(k, pick);
    }
    pool.truncate(n);
    pool
}

/// Load `n` images chosen uniformly at random on the subset stream of
/// `seed`.
pub fn load_mnist(images_path: &Path, labels_path: &Path, n: usize, seed: u64) -> Result<MnistSubset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.labels.len() {
        return Err(ExpError::format(
            labels_path,
            "label count",
            format!("{} labels for {} images", labels.labels.len(), images.count),
        ));
    }
    if n == 0 || n > images.count {
        return Err(ntk_core::Error::Contract(format!(
            "subset size {n} must be between 1 and the {} available records",
            images.count
        ))
        .into());
    }
    let mut rng = RngStream::new(seed, streams::SUBSET);
    let indices = sample_without_replacement(&mut rng, images.count, n);
    let mut data = Vec::with_capacity(n * IMAGE_PIXELS);
    for &k in &indices {
        let px = &images.pixels[k * IMAGE_PIXELS..(k + 1) * IMAGE_PIXELS];
        data.extend(px.iter().map(|&p| f64::from(p) / 255.0));
    }
    let digits: Vec<u8> = indices.iter().map(|&k| labels.labels[k]).collect();
    Ok(MnistSubset {
        images: Matrix::from_vec(n, IMAGE_PIXELS, data)?,
        parity: digits.iter().map(|&d| parity_label(d)).collect(),
        digits,
        indices,
        images_sha256: images.sha256,
        labels_sha256: labels.sha256,
    })
}

/// Default image and label paths inside an MNIST directory.
pub fn mnist_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))
}

/// Encode images (row-major `count x 28 x 28` bytes) as an IDX image file.
pub fn encode_idx_images(pixels: &[u8], count: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
