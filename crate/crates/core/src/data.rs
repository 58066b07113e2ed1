//! Dataset loading, splitting, normalisation, and the synthetic
//! scale-cue generator used for desk-scale experiments.
//!
//! Formats: IDX (the de-facto byte format of the classic digit sets,
//! big-endian dims, u8 pixels scaled to [0, 1]) and a minimal CSV with
//! one example per row, label first, for tiny hand-written fixtures.
//!
//! The synthetic set exists because early-vs-late head differences only
//! show up when class evidence lives at different spatial scales. Images
//! are 1x28x28 with ten classes, the product of a coarse cue and a fine
//! cue:
//!
//! * coarse (5 levels): the intensity of a 13x13 centre block. Readable
//!   from pooled features after a single conv block.
//! * fine (2 values): two 3x3 dots in opposite corners, each dim or
//!   bright at random; the cue is whether the two intensities match.
//!   The corners are far enough apart that no unit before the last conv
//!   block sees both dots, and pooled features cannot express the
//!   match/mismatch parity linearly, so only the deepest head can decode
//!   it reliably.
//! * an "easy" subset (fraction configurable) additionally carries a bar
//!   across the two top rows whose brightness states the fine cue
//!   outright, so early heads are confidently correct on part of the
//!   data. That is what gives a confidence cascade something to save.
//!
//! `class = 2 * coarse + fine`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// A labelled set of examples, images stored as one `[N, ...]` tensor.
#[derive(Debug, Clone)]
pub struct Dataset<S> {
    images: Tensor<S>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(images: Tensor<S>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("Dataset::new", "need at least 2 classes"));
        }
        if images.shape().is_empty() || images.batch() != labels.len() {
            return Err(Error::invalid(
                "Dataset::new",
                format!("{} labels for image shape {:?}", labels.len(), images.shape()),
            ));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::invalid(
                "Dataset::new",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        Ok(Dataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Tensor<S> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-example image shape (without the batch axis).
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Copy out the examples at `indices`, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<S>, Vec<usize>)> {
        let stride = self.images.per_example();
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(
                    "Dataset::gather",
                    format!("index {i} of {}", self.len()),
                ));
            }
            data.extend_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(&shape, data)?, labels))
    }

    /// The sub-dataset at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset<S>> {
        let (images, labels) = self.gather(indices)?;
        Dataset::new(images, labels, self.num_classes)
    }

    /// Reinterpret each example under a new shape of equal element count
    /// (view a flat CSV row as an image, say).
    pub fn reshaped_images(self, per_example: &[usize]) -> Result<Dataset<S>> {
        let n = self.len();
        let mut shape = vec![n];
        shape.extend_from_slice(per_example);
        Ok(Dataset {
            images: self.images.reshaped(&shape)?,
            labels: self.labels,
            num_classes: self.num_classes,
        })
    }

    /// Split per class into `fractions.len()` parts with deterministic
    /// proportional allocation (largest remainder), shuffling within each
    /// class under `seed`. Returned datasets follow fraction order, so
    /// `(0.9, 0.1)` means (train, val) by convention.
    pub fn stratified_split(&self, fractions: &[f64], seed: u64) -> Result<Vec<Dataset<S>>> {
        if fractions.is_empty() {
            return Err(Error::invalid("stratified_split", "no fractions"));
        }
        if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::invalid(
                "stratified_split",
                format!("fractions must be finite and >= 0, got {fractions:?}"),
            ));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "stratified_split",
                format!("fractions must sum to 1, got {sum}"),
            ));
        }

        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let parts = fractions.len();
        for (c, idxs) in by_class.iter().enumerate() {
            if !idxs.is_empty() && idxs.len() < parts {
                return Err(Error::invalid(
                    "stratified_split",
                    format!("class {c} has {} examples for {parts} parts", idxs.len()),
                ));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut part_indices: Vec<Vec<usize>> = vec![Vec::new(); parts];
        for idxs in by_class.iter_mut() {
            idxs.shuffle(&mut rng);
            let n = idxs.len();
            // largest-remainder allocation keeps per-class proportions exact
            // whenever they divide evenly
            let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64) as usize).collect();
            let mut rema: Vec<(usize, f64)> = fractions
                .iter()
                .enumerate()
                .map(|(j, f)| (j, f * n as f64 - counts[j] as f64))
                .collect();
            rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut left = n - counts.iter().sum::<usize>();
            for (j, _) in rema {
                if left == 0 {
                    break;
                }
                counts[j] += 1;
                left -= 1;
            }
            let mut cursor = 0;
            for (j, &c) in counts.iter().enumerate() {
                part_indices[j].extend_from_slice(&idxs[cursor..cursor + c]);
                cursor += c;
            }
        }

        part_indices.iter().map(|idxs| self.subset(idxs)).collect()
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let slice: [u8; 4] = bytes
        .get(at..at + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::data(path, "file too short for header"))?;
    Ok(u32::from_be_bytes(slice))
}

/// Load an IDX image/label file pair into a `[N, 1, H, W]` dataset with
/// pixel values scaled to [0, 1].
pub fn load_idx<S: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    num_classes: usize,
) -> Result<Dataset<S>> {
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::data(
            images_path,
            format!("bad image magic {magic:#010x}, want {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let h = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let w = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let want = 16 + n * h * w;
    if img_bytes.len() != want {
        return Err(Error::data(
            images_path,
            format!("size {} does not match header ({} bytes for {n} {h}x{w} images)", img_bytes.len(), want),
        ));
    }

    let lbl_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let magic = read_u32_be(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::data(
            labels_path,
            format!("bad label magic {magic:#010x}, want {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = read_u32_be(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_bytes.len() != 8 + n_labels {
        return Err(Error::data(
            labels_path,
            format!("size {} does not match header ({n_labels} labels)", lbl_bytes.len()),
        ));
    }
    if n_labels != n {
        return Err(Error::data(
            labels_path,
            format!("{n_labels} labels for {n} images"),
        ));
    }

    let scale = 1.0 / 255.0;
    let data: Vec<S> =
        img_bytes[16..].iter().map(|b| S::from_f64(*b as f64 * scale)).collect();
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|b| *b as usize).collect();
    if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
        return Err(Error::data(
            labels_path,
            format!("label {bad} out of range for {num_classes} classes"),
        ));
    }
    Dataset::new(Tensor::from_vec(&[n, 1, h, w], data)?, labels, num_classes)
}

/// Load a CSV of `label, v1, v2, ...` rows into a flat `[N, F]` dataset.
/// Values are taken as-is (no rescaling); rows must agree on length.
pub fn load_csv<S: Scalar>(path: &Path, num_classes: usize) -> Result<Dataset<S>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut features: Option<usize> = None;
    let mut data: Vec<S> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_str = fields.next().unwrap().trim();
        let label: usize = label_str.parse().map_err(|_| {
            Error::data(path, format!("line {}: bad label {label_str:?}", lineno + 1))
        })?;
        if label >= num_classes {
            return Err(Error::data(
                path,
                format!("line {}: label {label} out of range for {num_classes} classes", lineno + 1),
            ));
        }
        let mut count = 0;
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::data(path, format!("line {}: bad value {f:?}", lineno + 1))
            })?;
            data.push(S::from_f64(v));
            count += 1;
        }
        match features {
            None => {
                if count == 0 {
                    return Err(Error::data(path, format!("line {}: no features", lineno + 1)));
                }
                features = Some(count);
            }
            Some(f) if f != count => {
                return Err(Error::data(
                    path,
                    format!("line {}: {count} values, earlier rows had {f}", lineno + 1),
                ));
            }
            Some(_) => {}
        }
        labels.push(label);
    }
    let features = features.ok_or_else(|| Error::data(path, "no data rows"))?;
    let n = labels.len();
    Dataset::new(Tensor::from_vec(&[n, features], data)?, labels, num_classes)
}

/// Per-channel standardisation fitted on the training split only, then
/// applied unchanged to validation and test data.
#[derive(Debug, Clone)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Compute per-channel mean and standard deviation (single global
    /// channel for flat datasets). Near-constant channels get unit scale.
    pub fn fit<S: Scalar>(train: &Dataset<S>) -> Result<Normalizer> {
        if train.is_empty() {
            return Err(Error::invalid("Normalizer::fit", "empty dataset"));
        }
        let channels = match train.images().shape() {
            [_, c, _, _] => *c,
            _ => 1,
        };
        let per = train.images().numel() / channels;
        let mut mean = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        for (i, v) in train.images().data().iter().copied().enumerate() {
            let c = channel_of(i, train.images().shape(), channels);
            let v = v.to_f64();
            mean[c] += v;
            sq[c] += v * v;
        }
        let mut std = vec![0.0f64; channels];
        for c in 0..channels {
            mean[c] /= per as f64;
            let var = (sq[c] / per as f64 - mean[c] * mean[c]).max(0.0);
            let s = var.sqrt();
            std[c] = if s < 1e-8 { 1.0 } else { s };
        }
        Ok(Normalizer { mean, std })
    }

    pub fn apply<S: Scalar>(&self, ds: &mut Dataset<S>) -> Result<()> {
        let channels = match ds.images.shape() {
            [_, c, _, _] => *c,
            _ => 1,
        };
        if channels != self.mean.len() {
            return Err(Error::invalid(
                "Normalizer::apply",
                format!("{} channels, normalizer has {}", channels, self.mean.len()),
            ));
        }
        let shape = ds.images.shape().to_vec();
        for (i, v) in ds.images.data_mut().iter_mut().enumerate() {
            let c = channel_of(i, &shape, channels);
            *v = S::from_f64(((*v).to_f64() - self.mean[c]) / self.std[c]);
        }
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

fn channel_of(flat: usize, shape: &[usize], channels: usize) -> usize {
    if channels == 1 {
        return 0;
    }
    // [N, C, H, W] layout: channel index is (flat / (H*W)) % C
    let hw = shape[2] * shape[3];
    (flat / hw) % channels
}

/// Parameters of the synthetic scale-cue set. Ten classes over 1x28x28
/// images; see the module docs for the construction.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Examples generated per class.
    pub per_class: usize,
    /// Fraction of examples carrying the top bar that spells out the fine
    /// cue, making them decidable (confidently) by the earliest head.
    pub easy_fraction: f64,
    /// Additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { per_class: 120, easy_fraction: 0.35, noise_sigma: 0.1, seed: 7 }
    }
}

const COARSE_LEVELS: usize = 5;
pub const SYNTHETIC_CLASSES: usize = 2 * COARSE_LEVELS;
pub const SYNTHETIC_SIDE: usize = 28;
// centre block: rows/cols 7..=19, one intensity level per coarse class
const BLOCK_LO: usize = 7;
const BLOCK_HI: usize = 20;
// corner dots: 3x3 regions far enough apart that only the deepest conv
// block has units covering both
const DOT_A: usize = 2;
const DOT_B: usize = 20;
const DOT_SIZE: usize = 3;
const DOT_DIM: f64 = 0.3;
const DOT_BRIGHT: f64 = 0.9;
// easy-subset bar across the two top rows
const BAR_ROWS: usize = 2;
const BAR_MISMATCH: f64 = 0.25;
const BAR_MATCH: f64 = 0.95;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(Error::invalid("SyntheticSpec", "per_class must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return Err(Error::invalid(
                "SyntheticSpec",
                format!("easy_fraction must be in [0, 1], got {}", self.easy_fraction),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid(
                "SyntheticSpec",
                format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma),
            ));
        }
        Ok(())
    }
}

/// Generate the synthetic scale-cue dataset, deterministically under the
/// spec's seed. Examples are emitted class-major (all of class 0 first).
pub fn synthetic_scale_cue<S: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = SYNTHETIC_SIDE;
    let n = SYNTHETIC_CLASSES * spec.per_class;
    let mut data: Vec<S> = Vec::with_capacity(n * side * side);
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    let mut img = vec![0.0f64; side * side];

    for class in 0..SYNTHETIC_CLASSES {
        let coarse = class / 2;
        let fine = class % 2;
        for _ in 0..spec.per_class {
            img.fill(0.0);

            let level = 0.05 + 0.225 * coarse as f64;
            for r in BLOCK_LO..BLOCK_HI {
                for c in BLOCK_LO..BLOCK_HI {
                    img[r * side + c] = level;
                }
            }

            // fine cue: matching (both dim or both bright) vs mismatched
            // dot intensities; which way round is random either case
            let flip: bool = rng.gen();
            let (ia, ib) = match (fine, flip) {
                (1, false) => (DOT_DIM, DOT_DIM),
                (1, true) => (DOT_BRIGHT, DOT_BRIGHT),
                (_, false) => (DOT_DIM, DOT_BRIGHT),
                (_, true) => (DOT_BRIGHT, DOT_DIM),
            };
            for dr in 0..DOT_SIZE {
                for dc in 0..DOT_SIZE {
                    img[(DOT_A + dr) * side + (DOT_A + dc)] = ia;
                    img[(DOT_B + dr) * side + (DOT_B + dc)] = ib;
                }
            }

            if rng.gen::<f64>() < spec.easy_fraction {
                let bar = if fine == 1 { BAR_MATCH } else { BAR_MISMATCH };
                for r in 0..BAR_ROWS {
                    for c in 0..side {
                        img[r * side + c] = bar;
                    }
                }
            }

            if spec.noise_sigma > 0.0 {
                for v in img.iter_mut() {
                    let noise: f64 =
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * spec.noise_sigma;
                    *v = (*v + noise).clamp(0.0, 1.0);
                }
            }

            data.extend(img.iter().map(|v| S::from_f64(*v)));
            labels.push(class);
        }
    }

    Dataset::new(
        Tensor::from_vec(&[n, 1, side, side], data)?,
        labels,
        SYNTHETIC_CLASSES,
    )
}
