use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `classes` Gaussian clusters of unit variance centred at
/// `separation · d_c`, with `d_c` random unit directions. Samples cycle
/// through the classes in order.
pub fn synthetic_blobs(
    classes: usize,
    per_class: usize,
    shape: [usize; 3],
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be finite and non-negative, got {separation}"
        )));
    }
    let d: usize = shape.iter().product();
    let mut rng = Rng::new(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let n = crate::tensor::norm(&v);
            v.iter().map(|x| separation * x / n).collect()
        })
        .collect();
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, centre) in centres.iter().enumerate() {
            images.push(Tensor::from_fn(&shape, |i| centre[i] + rng.normal()));
            labels.push(c);
        }
    }
    Dataset::new(images, labels, classes, shape, Split::Train)
}
