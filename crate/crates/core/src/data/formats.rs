use std::path::Path;

use super::{center_by_train, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label byte plus 3 × 32 × 32 pixel bytes.
pub const CIFAR_RECORD: usize = 1 + 3072;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];
const PIXELS: usize = 3072;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn pixels(bytes: &[u8], shape: &[usize]) -> Tensor {
    Tensor::new_unchecked(shape.to_vec(), bytes.iter().map(|&b| b as f64 / 255.0).collect())
}

fn parse_cifar(bytes: &[u8], label_bytes: usize, which: usize, classes: usize, split: Split, what: &str) -> Result<Dataset> {
    let record = label_bytes + PIXELS;
    if bytes.len() % record != 0 {
        return Err(Error::format(
            what,
            format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
        ));
    }
    let mut images = Vec::with_capacity(bytes.len() / record);
    let mut labels = Vec::with_capacity(bytes.len() / record);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[which] as usize;
        if label >= classes {
            return Err(Error::format(
                what,
                format!("record {i} has label {label}, expected below {classes}"),
            ));
        }
        labels.push(label);
        images.push(pixels(&rec[label_bytes..], &CIFAR_SHAPE));
    }
    Dataset::new(images, labels, classes, CIFAR_SHAPE, split)
}

/// Raw CIFAR-10 records, pixels scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8], split: Split) -> Result<Dataset> {
    parse_cifar(bytes, 1, 0, 10, split, "CIFAR-10 binary")
}

/// CIFAR-100 records carry a coarse and a fine label byte.
pub fn parse_cifar100(bytes: &[u8], fine: bool, split: Split) -> Result<Dataset> {
    let (which, classes) = if fine { (1, 100) } else { (0, 20) };
    parse_cifar(bytes, 2, which, classes, split, "CIFAR-100 binary")
}

pub fn load_cifar10_bin(path: &Path, split: Split) -> Result<Dataset> {
    parse_cifar10(&read(path)?, split)
}

pub fn load_cifar100_bin(path: &Path, fine: bool, split: Split) -> Result<Dataset> {
    parse_cifar100(&read(path)?, fine, split)
}

fn concat(parts: Vec<Dataset>, split: Split) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        images.extend(p.images);
        labels.extend(p.labels);
    }
    Dataset::new(images, labels, 10, CIFAR_SHAPE, split)
}

/// `data_batch_{1..5}.bin` and `test_batch.bin` from `dir` (or its
/// `cifar-10-batches-bin` subdirectory), centred by the training means.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let train = (1..=5)
        .map(|i| load_cifar10_bin(&dir.join(format!("data_batch_{i}.bin")), Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let mut train = concat(train, Split::Train)?;
    let mut test = load_cifar10_bin(&dir.join("test_batch.bin"), Split::Test)?;
    center_by_train(&mut train, &mut test)?;
    Ok((train, test))
}

/// Inverse of [`parse_cifar10`]; a subtracted channel mean is added back.
pub fn write_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.shape != CIFAR_SHAPE || ds.classes > 10 {
        return Err(Error::shape(format!(
            "CIFAR-10 records hold 3×32×32 images and 10 classes, got {:?} and {}",
            ds.shape, ds.classes
        )));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        out.push(label as u8);
        out.extend(to_bytes(ds, img));
    }
    Ok(out)
}

fn to_bytes<'a>(ds: &'a Dataset, img: &'a Tensor) -> impl Iterator<Item = u8> + 'a {
    let plane = ds.shape[1] * ds.shape[2];
    img.data().iter().enumerate().map(move |(i, &v)| {
        let mu = ds.channel_mean.as_ref().map_or(0.0, |m| m[i / plane]);
        ((v + mu) * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(what, "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let got = be_u32(bytes, 0, what)?;
    if got != expected {
        return Err(Error::format(
            what,
            format!("magic 0x{got:08X}, expected 0x{expected:08X}"),
        ));
    }
    Ok(())
}

/// IDX3 unsigned-byte images as `[1, rows, cols]` tensors in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Tensor>, [usize; 3])> {
    let what = "IDX images";
    check_magic(bytes, IDX_IMAGES_MAGIC, what)?;
    let n = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * size {
        return Err(Error::format(
            what,
            format!("{} pixel bytes for {n} images of {rows}×{cols}", body.len()),
        ));
    }
    let shape = [1, rows, cols];
    let images = if size == 0 {
        vec![Tensor::zeros(&shape); n]
    } else {
        body.chunks_exact(size).map(|c| pixels(c, &shape)).collect()
    };
    Ok((images, shape))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let what = "IDX labels";
    check_magic(bytes, IDX_LABELS_MAGIC, what)?;
    let n = be_u32(bytes, 4, what)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(what, format!("{} label bytes for {n} labels", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (imgs, shape) = parse_idx_images(&read(images)?)?;
    let labs = parse_idx_labels(&read(labels)?)?;
    if imgs.len() != labs.len() {
        return Err(Error::format(
            "IDX pair",
            format!("{} images but {} labels", imgs.len(), labs.len()),
        ));
    }
    if let Some(&l) = labs.iter().find(|&&l| l > 9) {
        return Err(Error::format("IDX labels", format!("label {l}, expected a digit")));
    }
    Dataset::new(imgs, labs, 10, shape, split)
}

/// The four standard IDX files from `dir`, centred by the training mean.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let mut test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    center_by_train(&mut train, &mut test)?;
    Ok((train, test))
}

pub fn write_idx_images(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.shape[0] != 1 {
        return Err(Error::shape(format!("IDX images are single-channel, got {:?}", ds.shape)));
    }
    let mut out = Vec::with_capacity(16 + ds.len() * ds.shape[1] * ds.shape[2]);
    for x in [IDX_IMAGES_MAGIC, ds.len() as u32, ds.shape[1] as u32, ds.shape[2] as u32] {
        out.extend(x.to_be_bytes());
    }
    for img in &ds.images {
        out.extend(to_bytes(ds, img));
    }
    Ok(out)
}

pub fn write_idx_labels(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend((ds.len() as u32).to_be_bytes());
    out.extend(ds.labels.iter().map(|&l| l as u8));
    out
}
