//! Central-difference check of a model's analytic gradients.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{Model, Regularization};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates sampled per parameter block; smaller blocks are checked
    /// in full.
    pub per_block: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            per_block: 64,
            seed: 0,
            mode: Mode::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    /// Coordinates left out because the ±h points took a different branch
    /// at some ReLU, max pool or ψ piece than the base point.
    pub skipped: usize,
    /// Largest relative error per parameter block.
    pub blocks: Vec<(String, f64)>,
}

impl GradCheckReport {
    /// Within `tol` on at least one checked coordinate.
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks the model's own backward pass.
pub fn gradient_check(
    model: &Model,
    xs: &[Tensor],
    ys: &[usize],
    reg: &Regularization,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let ev = model.evaluate(xs, ys, opts.mode, reg)?;
    gradient_check_with(model, xs, ys, reg, &ev.grads, opts)
}

/// Compares `analytic` (in [`Model::param_infos`] order) against central
/// differences of the model's loss.
pub fn gradient_check_with(
    model: &Model,
    xs: &[Tensor],
    ys: &[usize],
    reg: &Regularization,
    analytic: &[Vec<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {}",
            opts.h
        )));
    }
    let infos = model.param_infos();
    if analytic.len() != infos.len()
        || analytic.iter().zip(&infos).any(|(g, i)| g.len() != i.len())
    {
        return Err(Error::shape("analytic gradient does not match the model"));
    }
    let values = model.param_values();
    if let Some(block) = values.iter().position(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::Precondition(format!(
            "parameter block {} is not finite",
            infos[block].label()
        )));
    }

    let base = model.loss_and_branches(xs, ys, opts.mode, reg)?.1;
    let mut rng = Rng::new(opts.seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        blocks: Vec::with_capacity(infos.len()),
    };
    for (b, info) in infos.iter().enumerate() {
        let coords = if info.len() <= opts.per_block {
            (0..info.len()).collect()
        } else {
            rng.sample_indices(info.len(), opts.per_block)
        };
        let mut block_max: f64 = 0.0;
        for i in coords {
            let orig = values[b][i];
            set_coord(&mut probe, b, i, orig + opts.h);
            let plus = probe.loss_and_branches(xs, ys, opts.mode, reg);
            set_coord(&mut probe, b, i, orig - opts.h);
            let minus = probe.loss_and_branches(xs, ys, opts.mode, reg);
            set_coord(&mut probe, b, i, orig);
            let ((lp, bp), (lm, bm)) = (plus?, minus?);
            if bp != base || bm != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.h);
            let a = analytic[b][i];
            let e = rel_err(a, numeric);
            report.checked += 1;
            block_max = block_max.max(e);
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some(Coordinate {
                    block: info.label(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err: e,
                });
            }
        }
        report.blocks.push((info.label(), block_max));
    }
    Ok(report)
}

fn set_coord(model: &mut Model, block: usize, index: usize, value: f64) {
    model.visit_params_mut(&mut |b, _, p| {
        if b == block {
            p[index] = value;
        }
    });
}
