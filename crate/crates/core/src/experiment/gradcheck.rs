use std::path::Path;

use super::config::{GradcheckConfig, Validate};
use crate::angular::AngularOperator;
use crate::error::{Error, Result};
use crate::layers::{Mode, ParamRole};
use crate::losses::{LossSpec, DEFAULT_SCALE};
use crate::network::{preset, Model, OperatorConfig, PresetOptions, Regularization, RescaleConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{gradient_check_with, GradCheckOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerVariant {
    Plain,
    BatchNorm,
    RescaleLearned,
    RescaleFixed,
}

impl LayerVariant {
    pub fn name(self) -> &'static str {
        match self {
            LayerVariant::Plain => "plain",
            LayerVariant::BatchNorm => "batchnorm",
            LayerVariant::RescaleLearned => "rescale-learned",
            LayerVariant::RescaleFixed => "rescale-fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub layers: LayerVariant,
    /// `None` is the dot-product network.
    pub op: Option<OperatorConfig>,
    pub loss: (String, LossSpec),
}

impl Cell {
    pub fn op_name(&self) -> String {
        self.op.as_ref().map_or("dot".into(), |o| o.name())
    }

    pub fn name(&self) -> String {
        format!("{}/{}/{}", self.layers.name(), self.op_name(), self.loss.0)
    }
}

fn operators() -> Vec<OperatorConfig> {
    vec![
        OperatorConfig::Linear {
            a: -2.0 / std::f64::consts::PI,
            b: 1.0,
        },
        OperatorConfig::Cosine {},
        OperatorConfig::Sigmoid { k: 0.1 },
        OperatorConfig::Sigmoid { k: 0.3 },
        OperatorConfig::Sigmoid { k: 0.7 },
        OperatorConfig::Learnable { k0: 0.5, shared: false },
    ]
}

fn losses() -> Vec<(String, LossSpec)> {
    let sig = AngularOperator::sigmoid(0.3).expect("valid k");
    vec![
        ("softmax".into(), LossSpec::Softmax),
        ("w-softmax-linear".into(), LossSpec::WSoftmax { g: AngularOperator::linear() }),
        ("w-softmax-cosine".into(), LossSpec::WSoftmax { g: AngularOperator::Cosine }),
        ("w-softmax-sigmoid-0.3".into(), LossSpec::WSoftmax { g: sig.clone() }),
        ("ga-softmax-m1".into(), LossSpec::GaSoftmax { g: AngularOperator::Cosine, m: 1 }),
        ("ga-softmax-m4".into(), LossSpec::GaSoftmax { g: AngularOperator::Cosine, m: 4 }),
        ("s-softmax".into(), LossSpec::SSoftmax { s: DEFAULT_SCALE }),
    ]
}

/// Every operator × loss on the plain network, the normalization and
/// rescaling layers under three operators, and the dot-product baseline.
pub fn matrix(cfg: &GradcheckConfig) -> Vec<Cell> {
    let losses = losses();
    let mut cells = Vec::new();
    for op in operators() {
        for loss in &losses {
            cells.push(Cell {
                layers: LayerVariant::Plain,
                op: Some(op.clone()),
                loss: loss.clone(),
            });
        }
    }
    for op in [
        OperatorConfig::Cosine {},
        OperatorConfig::Sigmoid { k: 0.3 },
        OperatorConfig::Learnable { k0: 0.5, shared: false },
    ] {
        for layers in [LayerVariant::BatchNorm, LayerVariant::RescaleLearned, LayerVariant::RescaleFixed] {
            for loss in [&losses[0], &losses[2]] {
                cells.push(Cell {
                    layers,
                    op: Some(op.clone()),
                    loss: loss.clone(),
                });
            }
        }
    }
    if cfg.baseline {
        for layers in [LayerVariant::Plain, LayerVariant::BatchNorm] {
            for loss in [&losses[0], &losses[2], &losses[5], &losses[6]] {
                cells.push(Cell {
                    layers,
                    op: None,
                    loss: loss.clone(),
                });
            }
        }
    }
    cells.retain(|c| {
        cfg.ops.as_ref().is_none_or(|o| o.contains(&c.op_name()))
            && cfg.losses.as_ref().is_none_or(|l| l.contains(&c.loss.0))
    });
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub max_rel_err: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub checked: usize,
    pub skipped: usize,
    pub pass: bool,
}

pub fn check_cell(cfg: &GradcheckConfig, cell: &Cell, seed: u64) -> Result<CellResult> {
    let opts = PresetOptions {
        op: cell.op.clone(),
        batchnorm: cell.layers == LayerVariant::BatchNorm,
        rescale: match cell.layers {
            LayerVariant::RescaleLearned => Some(RescaleConfig::Learned),
            LayerVariant::RescaleFixed => Some(RescaleConfig::Fixed),
            _ => None,
        },
        ..Default::default()
    };
    let spec = preset("mini", cfg.input, cfg.classes, &opts)?;
    let mut rng = Rng::new(seed);
    let model = Model::build(&spec, cell.loss.1.clone(), &mut rng)?;
    let xs: Vec<Tensor> = (0..cfg.batch_size)
        .map(|_| Tensor::from_fn(&cfg.input, |_| rng.normal()))
        .collect();
    let ys: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(cfg.classes)).collect();
    let reg = Regularization {
        lambda_orth: cfg.lambda_orth,
        orth_head: true,
    };
    let mut grads = model.evaluate(&xs, &ys, Mode::Train, &reg)?.grads;
    if cfg.inject_fault.as_deref() == Some(cell.name().as_str()) {
        let head = model
            .param_infos()
            .iter()
            .position(|p| p.role == ParamRole::HeadWeight)
            .expect("every model has a head");
        grads[head].iter_mut().for_each(|g| *g *= 1.5);
    }
    let gopts = GradCheckOptions {
        h: cfg.h,
        per_block: cfg.per_block,
        seed,
        mode: Mode::Train,
    };
    let r = gradient_check_with(&model, &xs, &ys, &reg, &grads, &gopts)?;
    let (worst_block, worst_index) = r.worst.as_ref().map_or((String::new(), 0), |w| (w.block.clone(), w.index));
    Ok(CellResult {
        cell: cell.clone(),
        max_rel_err: r.max_rel_err,
        worst_block,
        worst_index,
        checked: r.checked,
        skipped: r.skipped,
        pass: r.passes(cfg.tolerance),
    })
}

/// Runs the matrix, writes `gradcheck.csv` into `out_dir` and fails with
/// an acceptance error naming every cell above tolerance.
pub fn cmd_gradcheck(cfg: &GradcheckConfig, seed: Option<u64>, out_dir: &Path) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let cells = matrix(cfg);
    if cells.is_empty() {
        return Err(Error::Config("the op/loss filters leave no cells".into()));
    }
    if let Some(f) = &cfg.inject_fault {
        if !cells.iter().any(|c| &c.name() == f) {
            return Err(Error::Config(format!("inject_fault names no cell: {f:?}")));
        }
    }
    let base = seed.unwrap_or(cfg.seed);
    let results = cells
        .iter()
        .enumerate()
        .map(|(i, c)| check_cell(cfg, c, base.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("gradcheck.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cell", "layers", "op", "loss", "max_rel_err", "worst_block", "worst_index", "checked", "skipped", "pass"])?;
    for r in &results {
        w.write_record([
            r.cell.name(),
            r.cell.layers.name().into(),
            r.cell.op_name(),
            r.cell.loss.0.clone(),
            r.max_rel_err.to_string(),
            r.worst_block.clone(),
            r.worst_index.to_string(),
            r.checked.to_string(),
            r.skipped.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({:e})", r.cell.name(), r.max_rel_err))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Acceptance(format!(
            "gradient check above {} in: {}",
            cfg.tolerance,
            failed.join(", ")
        )));
    }
    Ok(results)
}
