//! Datasets: CIFAR binary and IDX parsers, synthetic clusters and
//! augmentation.

mod augment;
mod formats;
mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use augment::{augment, crop_padded, flip_horizontal, flip_vertical, AugmentMode, CROP_PAD};
pub use formats::{
    load_cifar100_bin, load_cifar10_bin, load_cifar10_dir, load_mnist_dir, load_mnist_idx,
    parse_cifar100, parse_cifar10, parse_idx_images, parse_idx_labels, write_cifar10,
    write_idx_images, write_idx_labels, CIFAR_RECORD, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synthetic::synthetic_blobs;

pub const DATA_DIR_ENV: &str = "SPHERE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images of one shape with their labels. Parsed pixels are in `[0, 1]`
/// until [`Dataset::subtract_channel_mean`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One `[C, H, W]` tensor per sample.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub shape: [usize; 3],
    pub split: Split,
    /// Per-channel means already subtracted from `images`, if any.
    pub channel_mean: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        classes: usize,
        shape: [usize; 3],
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(t) = images.iter().find(|t| t.shape() != shape) {
            return Err(Error::shape(format!(
                "image of shape {:?} in a dataset of shape {shape:?}",
                t.shape()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            shape,
            split,
            channel_mean: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean of every channel over all samples and pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let [c, h, w] = self.shape;
        let mut sums = vec![0.0; c];
        for img in &self.images {
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += img.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>();
            }
        }
        let count = (self.len() * h * w).max(1) as f64;
        sums.iter().map(|s| s / count).collect()
    }

    /// Subtracts `mean` (usually the training split's) from every channel.
    pub fn subtract_channel_mean(&mut self, mean: &[f64]) -> Result<()> {
        let [c, h, w] = self.shape;
        if mean.len() != c {
            return Err(Error::shape(format!("{} channel means for {c} channels", mean.len())));
        }
        if self.channel_mean.is_some() {
            return Err(Error::InvalidArgument("channel mean already subtracted".into()));
        }
        for img in &mut self.images {
            for (ch, mu) in mean.iter().enumerate() {
                img.data_mut()[ch * h * w..(ch + 1) * h * w]
                    .iter_mut()
                    .for_each(|v| *v -= mu);
            }
        }
        self.channel_mean = Some(mean.to_vec());
        Ok(())
    }

    /// First `n` samples (all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Samples at `idx`, augmented by `mode` when it is not `None`.
    pub fn batch(&self, idx: &[usize], mode: AugmentMode, rng: &mut Rng) -> (Vec<Tensor>, Vec<usize>) {
        let xs = idx.iter().map(|&i| augment(&self.images[i], mode, rng)).collect();
        let ys = idx.iter().map(|&i| self.labels[i]).collect();
        (xs, ys)
    }
}

/// An explicit path wins over `SPHERE_DATA_DIR`.
pub fn data_root(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// Train and test splits with the test split centred by training means.
pub fn center_by_train(train: &mut Dataset, test: &mut Dataset) -> Result<()> {
    let mean = train.channel_means();
    train.subtract_channel_mean(&mean)?;
    test.subtract_channel_mean(&mean)
}
