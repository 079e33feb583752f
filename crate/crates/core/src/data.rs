//! Datasets: MNIST IDX loading, synthetic tasks, seeded splits and batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;
pub const MNIST_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `(n, d)` features.
    pub x: Tensor,
    /// `(n, C)` one-hot classes or real targets.
    pub y: Tensor,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Tensor, y: Tensor) -> Result<Self> {
        if x.rank() != 2 || y.rank() != 2 || x.shape()[0] != y.shape()[0] {
            return Err(Error::shape(
                "dataset",
                format!("features {:?} vs targets {:?}", x.shape(), y.shape()),
            ));
        }
        Ok(Dataset {
            name: name.into(),
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn n_outputs(&self) -> usize {
        self.y.shape()[1]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
        }
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&rows)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file into `(count, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: String| Error::Idx {
        path: path.to_path_buf(),
        detail,
    };
    let magic = read_u32(bytes, 0).ok_or_else(|| bad("truncated header".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(bad(format!(
            "image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let header: Option<Vec<u32>> = (1..4).map(|i| read_u32(bytes, 4 * i)).collect();
    let header = header.ok_or_else(|| bad("truncated header".into()))?;
    let (n, rows, cols) = (header[0] as usize, header[1] as usize, header[2] as usize);
    let d = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * d {
        return Err(bad(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            n * d
        )));
    }
    Ok((n, d, payload.to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let bad = |detail: String| Error::Idx {
        path: path.to_path_buf(),
        detail,
    };
    let magic = read_u32(bytes, 0).ok_or_else(|| bad("truncated header".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(bad(format!(
            "label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32(bytes, 4).ok_or_else(|| bad("truncated header".into()))? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(bad(format!(
            "payload has {} labels, header implies {}",
            payload.len(),
            n
        )));
    }
    if let Some(pos) = payload.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(bad(format!("label {} at index {} is outside 0..=9", payload[pos], pos)));
    }
    Ok(payload.to_vec())
}

/// Encodes images in IDX format (used for fixtures and round-trip tests).
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pixel byte to normalized feature: scale to `[0, 1]`, then standardize.
pub fn normalize_pixel(p: u8) -> f64 {
    (p as f64 / 255.0 - MNIST_MEAN) / MNIST_STD
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Config(format!("label {l} out of range for {n_classes} classes")));
        }
        data[i * n_classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), n_classes, data)
}

/// Loads an MNIST-style image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e));
    let (n, d, pixels) = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            detail: format!("{} labels for {} images", labels.len(), n),
        });
    }
    let x = Tensor::matrix(n, d, pixels.iter().map(|&p| normalize_pixel(p)).collect())?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let y = one_hot(&labels, MNIST_CLASSES)?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            valid_fraction: 0.10,
            seed: 0,
        }
    }
}

/// Training, validation and optional held-out test data for one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Option<Dataset>,
}

impl Splits {
    /// Splits `train_full` by `spec`; `test` is kept aside untouched.
    pub fn from_spec(train_full: &Dataset, test: Option<Dataset>, spec: &SplitSpec) -> Result<Self> {
        let (train, valid) = split(train_full, spec)?;
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        Ok(Splits { train, valid, test })
    }
}

/// Seeded permutation; the last `round(f * n)` permuted rows become the validation set.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&spec.valid_fraction) {
        return Err(Error::Config(format!(
            "valid_fraction must lie in [0, 1), got {}",
            spec.valid_fraction
        )));
    }
    let n = ds.len();
    let n_valid = (spec.valid_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, valid) = idx.split_at(n - n_valid);
    Ok((ds.subset(train), ds.subset(valid)))
}

/// Gaussian blobs with unit variance whose centers are `separation` apart.
pub fn synth_classification(n: usize, d: usize, n_classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 || n < n_classes || d == 0 {
        return Err(Error::Config(format!(
            "need d >= 1, n_classes >= 2 and n >= n_classes (n={n}, d={d}, classes={n_classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = if n_classes == 2 {
        // antipodal along a random direction
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|v| *v *= separation / (2.0 * norm));
        vec![u.iter().map(|v| -v).collect(), u]
    } else if n_classes <= d {
        // scaled basis vectors: pairwise distance is exactly `separation`
        let r = separation / 2f64.sqrt();
        (0..n_classes)
            .map(|k| (0..d).map(|j| if j == k { r } else { 0.0 }).collect())
            .collect()
    } else {
        (0..n_classes)
            .map(|_| {
                (0..d)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|v: f64| v * separation)
                    .collect()
            })
            .collect()
    };
    let mut x = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % n_classes;
        labels.push(k);
        for c in &centers[k] {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(c + z);
        }
    }
    Dataset::new(
        format!("synthetic-classification-{n_classes}"),
        Tensor::matrix(n, d, x)?,
        one_hot(&labels, n_classes)?,
    )
}

/// Linear targets `x w + b` plus Gaussian noise of standard deviation `noise`.
pub fn synth_regression(n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config("regression data needs n, d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let b: f64 = StandardNormal.sample(&mut rng);
    let x: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let clean: f64 = x[i * d..(i + 1) * d].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let e: f64 = StandardNormal.sample(&mut rng);
            clean + noise * e
        })
        .collect();
    Dataset::new(
        "synthetic-regression",
        Tensor::matrix(n, d, x)?,
        Tensor::matrix(n, 1, y)?,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
}

/// Row order for `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch));
    idx
}

/// All batches of one epoch, the last one possibly short.
pub fn batch_iter(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(epoch_order(ds.len(), seed, epoch)
        .chunks(batch_size)
        .map(|rows| Batch {
            x: ds.x.select_rows(rows),
            y: ds.y.select_rows(rows),
        })
        .collect())
}

/// Endless batch source that reshuffles at every epoch boundary.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || n == 0 {
            return Err(Error::Config(
                "batch stream needs a non-empty dataset and batch size >= 1".into(),
            ));
        }
        Ok(BatchStream {
            n,
            batch_size,
            seed,
            epoch: 0,
            order: epoch_order(n, seed, 0),
            pos: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Row indices of the next batch.
    pub fn next_rows(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.order = epoch_order(self.n, self.seed, self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let rows = self.order[self.pos..end].to_vec();
        self.pos = end;
        rows
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Batch {
        let rows = self.next_rows();
        Batch {
            x: ds.x.select_rows(&rows),
            y: ds.y.select_rows(&rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toy(n: usize) -> Dataset {
        let x = Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let y = Tensor::matrix(n, 1, (0..n).map(|i| -(i as f64)).collect()).unwrap();
        Dataset::new("toy", x, y).unwrap()
    }

    #[test]
    fn magic_numbers_checked() {
        let p = Path::new("mem");
        let img = encode_idx_images(2, 2, &[0, 1, 2, 3]);
        assert!(parse_idx_images(&img, p).is_ok());
        assert!(parse_idx_labels(&img, p).is_err());
        let lab = encode_idx_labels(&[3]);
        assert!(parse_idx_labels(&lab, p).is_ok());
        assert!(parse_idx_images(&lab, p).is_err());
        let mut wrong = img.clone();
        wrong[3] = 0x04;
        assert!(parse_idx_images(&wrong, p).is_err());
    }

    #[test]
    fn truncated_and_out_of_range() {
        let p = Path::new("mem");
        let img = encode_idx_images(2, 2, &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert!(parse_idx_images(&img[..img.len() - 1], p).is_err());
        assert!(parse_idx_images(&img[..10], p).is_err());
        assert!(parse_idx_labels(&encode_idx_labels(&[1, 10]), p).is_err());
    }

    #[test]
    fn pixel_normalization() {
        assert!((normalize_pixel(0) - (-0.1307 / 0.3081)).abs() < 1e-15);
        assert!((normalize_pixel(0) + 0.4242).abs() < 1e-4);
    }

    #[test]
    fn split_sizes() {
        let ds = toy(60000);
        let (tr, va) = split(
            &ds,
            &SplitSpec {
                valid_fraction: 0.1,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), va.len()), (54000, 6000));
        let (tr, va) = split(
            &ds,
            &SplitSpec {
                valid_fraction: 0.0,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), va.len()), (60000, 0));
        assert!(split(
            &ds,
            &SplitSpec {
                valid_fraction: 1.0,
                seed: 3
            }
        )
        .is_err());
    }

    #[test]
    fn split_determinism() {
        let ds = toy(100);
        let s = SplitSpec {
            valid_fraction: 0.25,
            seed: 11,
        };
        assert_eq!(split(&ds, &s).unwrap(), split(&ds, &s).unwrap());
    }

    #[test]
    fn batch_sizes_and_coverage() {
        let ds = toy(10);
        let batches = batch_iter(&ds, 3, 5, 0).unwrap();
        assert_eq!(
            batches.iter().map(|b| b.x.shape()[0]).collect::<Vec<_>>(),
            vec![3, 3, 3, 1]
        );
        let seen: BTreeSet<i64> = batches
            .iter()
            .flat_map(|b| b.x.data().iter().map(|&v| v as i64))
            .collect();
        assert_eq!(seen, (0..10).collect());
        assert_eq!(batches, batch_iter(&ds, 3, 5, 0).unwrap());
        assert_ne!(batches, batch_iter(&ds, 3, 5, 1).unwrap());
        assert!(batch_iter(&ds, 0, 5, 0).is_err());
    }

    #[test]
    fn stream_reshuffles() {
        let mut s = BatchStream::new(5, 2, 9).unwrap();
        let first: Vec<Vec<usize>> = (0..3).map(|_| s.next_rows()).collect();
        assert_eq!(first.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(s.epoch(), 0);
        let _ = s.next_rows();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn synthetic_determinism_and_shape() {
        let a = synth_classification(40, 2, 2, 10.0, 1).unwrap();
        assert_eq!(a, synth_classification(40, 2, 2, 10.0, 1).unwrap());
        assert_eq!(a.x.shape(), &[40, 2]);
        assert!((0..40).all(|i| a.y.row(i).iter().sum::<f64>() == 1.0));
        let r = synth_regression(30, 3, 0.0, 2).unwrap();
        assert_eq!(r, synth_regression(30, 3, 0.0, 2).unwrap());
        assert!(synth_classification(1, 2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn noiseless_regression_is_exactly_linear() {
        let ds = synth_regression(50, 3, 0.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: f64 = StandardNormal.sample(&mut rng);
        let sse: f64 = (0..50)
            .map(|i| {
                let pred: f64 = ds.x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                (pred - ds.y.row(i)[0]).powi(2)
            })
            .sum::<f64>()
            / 50.0;
        assert!(sse < 1e-20);
    }
}
