//! Deterministic datasets: the procedural 2-D rings benchmark, an IDX
//! loader for MNIST-style files, and semi-supervised label splitting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Semi-supervised dataset: a large unlabeled pool, a small labeled pool,
/// and a held-out test set.
///
/// The unlabeled pool keeps its ground-truth labels hidden in
/// `unlabeled_hidden_y`; they are used only by the golden-classifier
/// evaluation oracle, never by training.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub unlabeled_x: Tensor,
    pub unlabeled_hidden_y: Vec<usize>,
    pub labeled_x: Tensor,
    pub labeled_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    /// True style factor per test row, when the dataset is synthetic.
    pub test_style: Option<Vec<f64>>,
    pub x_dim: usize,
    pub num_classes: usize,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::Invalid("need at least 2 classes".into()));
        }
        if self.labeled_y.len() % c != 0 {
            return Err(Error::Invalid("labeled pool not class-balanced".into()));
        }
        let per_class = self.labeled_y.len() / c;
        for k in 0..c {
            let count = self.labeled_y.iter().filter(|&&y| y == k).count();
            if count != per_class {
                return Err(Error::Invalid(format!("class {k} has {count} labels, expected {per_class}")));
            }
        }
        for t in [&self.unlabeled_x, &self.labeled_x, &self.test_x] {
            if !t.is_finite() {
                return Err(Error::Invalid("non-finite feature value".into()));
            }
        }
        Ok(())
    }

    /// Full training pool (labeled + unlabeled) with true labels, for the
    /// golden classifier only.
    pub fn full_training_set(&self) -> (Tensor, Vec<usize>) {
        let mut data = self.labeled_x.data().to_vec();
        data.extend_from_slice(self.unlabeled_x.data());
        let mut labels = self.labeled_y.clone();
        labels.extend_from_slice(&self.unlabeled_hidden_y);
        let rows = labels.len();
        (Tensor::matrix(rows, self.x_dim, data).expect("consistent dims"), labels)
    }
}

/// Configuration of the procedural rings dataset.
///
/// Class k places points on the ray at angle `2 pi k / C`; the style factor
/// `s ~ U(0, 1)` sets the radius `0.5 + s`, and isotropic Gaussian noise of
/// scale `noise` is added per coordinate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingsConfig {
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for RingsConfig {
    fn default() -> Self {
        RingsConfig { classes: 4, train_size: 4016, test_size: 1000, noise: 0.02, seed: 0 }
    }
}

/// Labeled pool of rows before splitting; produced by the generators.
#[derive(Debug, Clone)]
pub struct LabeledPool {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub style: Option<Vec<f64>>,
    pub x_dim: usize,
    pub num_classes: usize,
}

fn rings_pool(cfg: &RingsConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Vec<usize>, Vec<f64>)> {
    if cfg.classes < 2 {
        return Err(Error::Invalid("rings: need at least 2 classes".into()));
    }
    if cfg.noise < 0.0 {
        return Err(Error::Invalid("rings: negative noise".into()));
    }
    if count % cfg.classes != 0 {
        return Err(Error::Invalid(format!(
            "rings: size {count} not divisible by {} classes",
            cfg.classes
        )));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let per_class = count / cfg.classes;
    let mut data = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    let mut styles = Vec::with_capacity(count);
    for k in 0..cfg.classes {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / cfg.classes as f64;
        for _ in 0..per_class {
            let s: f64 = rand::Rng::gen_range(&mut *rng, 0.0..1.0);
            let r = 0.5 + s;
            let nx = normal.sample(&mut *rng) * cfg.noise;
            let ny = normal.sample(&mut *rng) * cfg.noise;
            data.push(r * theta.cos() + nx);
            data.push(r * theta.sin() + ny);
            labels.push(k);
            styles.push(s);
        }
    }
    Ok((Tensor::matrix(count, 2, data)?, labels, styles))
}

/// Generate train and test pools of the rings dataset, deterministic in
/// the config seed. The training pool still carries all labels; feed it
/// through [`split_labels`] to obtain the semi-supervised split.
pub fn make_rings_dataset(cfg: &RingsConfig) -> Result<(LabeledPool, LabeledPool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_x, train_y, train_s) = rings_pool(cfg, cfg.train_size, &mut rng)?;
    let (test_x, test_y, test_s) = rings_pool(cfg, cfg.test_size, &mut rng)?;
    Ok((
        LabeledPool { x: train_x, y: train_y, style: Some(train_s), x_dim: 2, num_classes: cfg.classes },
        LabeledPool { x: test_x, y: test_y, style: Some(test_s), x_dim: 2, num_classes: cfg.classes },
    ))
}

/// Noise-free inverse of the rings construction: recover the style factor
/// from a point assumed to lie exactly on its class ray.
pub fn rings_style_oracle(x: &[f64]) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt() - 0.5
}

/// Pick exactly `n / C` labeled examples per class (uniformly, without
/// replacement); the rest become the unlabeled pool with hidden labels.
pub fn split_labels(train: &LabeledPool, test: &LabeledPool, n: usize, seed: u64) -> Result<DatasetSplit> {
    let c = train.num_classes;
    if n % c != 0 {
        return Err(Error::Invalid(format!("label count {n} not divisible by {c} classes")));
    }
    let per_class = n / c;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled_idx = Vec::with_capacity(n);
    let mut unlabeled_idx = Vec::new();
    for k in 0..c {
        let mut members: Vec<usize> = (0..train.y.len()).filter(|&i| train.y[i] == k).collect();
        if members.len() < per_class {
            return Err(Error::Invalid(format!(
                "class {k} has only {} examples, need {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        labeled_idx.extend_from_slice(&members[..per_class]);
        unlabeled_idx.extend_from_slice(&members[per_class..]);
    }
    labeled_idx.sort_unstable();
    unlabeled_idx.sort_unstable();

    let split = DatasetSplit {
        unlabeled_x: train.x.gather_rows(&unlabeled_idx)?,
        unlabeled_hidden_y: unlabeled_idx.iter().map(|&i| train.y[i]).collect(),
        labeled_x: train.x.gather_rows(&labeled_idx)?,
        labeled_y: labeled_idx.iter().map(|&i| train.y[i]).collect(),
        test_x: test.x.clone(),
        test_y: test.y.clone(),
        test_style: test.style.clone(),
        x_dim: train.x_dim,
        num_classes: c,
    };
    split.validate()?;
    Ok(split)
}

// ---- IDX ---------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(buf: &[u8], off: usize) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(off..off + 4)
        .ok_or_else(|| Error::Invalid("idx: truncated header".into()))?
        .try_into()
        .unwrap();
    Ok(u32::from_be_bytes(bytes))
}

/// Load an IDX image/label file pair into a labeled pool, pixels scaled
/// to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledPool> {
    let mut img_buf = Vec::new();
    File::open(images_path)?.read_to_end(&mut img_buf)?;
    let magic = read_u32_be(&img_buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Invalid(format!(
            "idx: image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(&img_buf, 4)? as usize;
    let rows = read_u32_be(&img_buf, 8)? as usize;
    let cols = read_u32_be(&img_buf, 12)? as usize;
    let pixels = &img_buf[16..];
    if pixels.len() != n * rows * cols {
        return Err(Error::Invalid(format!(
            "idx: expected {} pixels, file holds {}",
            n * rows * cols,
            pixels.len()
        )));
    }

    let mut lbl_buf = Vec::new();
    File::open(labels_path)?.read_to_end(&mut lbl_buf)?;
    let magic = read_u32_be(&lbl_buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Invalid(format!(
            "idx: label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = read_u32_be(&lbl_buf, 4)? as usize;
    if n_labels != n {
        return Err(Error::Invalid(format!("idx: {n} images but {n_labels} labels")));
    }
    let labels: Vec<usize> = lbl_buf[8..].iter().map(|&b| b as usize).collect();
    if labels.len() != n {
        return Err(Error::Invalid("idx: truncated label data".into()));
    }

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Ok(LabeledPool {
        x: Tensor::matrix(n, rows * cols, data)?,
        y: labels,
        style: None,
        x_dim: rows * cols,
        num_classes,
    })
}

/// Export a labeled rings pool as CSV with header `x0,x1,y,s`.
pub fn export_rings_csv(pool: &LabeledPool, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "x0,x1,y,s")?;
    let styles = pool.style.as_deref().unwrap_or(&[]);
    for r in 0..pool.y.len() {
        let row = pool.x.row(r);
        let s = styles.get(r).copied().unwrap_or(f64::NAN);
        writeln!(f, "{},{},{},{}", row[0], row[1], pool.y[r], s)?;
    }
    Ok(())
}
