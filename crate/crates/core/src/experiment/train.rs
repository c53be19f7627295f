use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{TrainConfig, Validate};
use super::metrics::{MetricsRow, MetricsWriter};
use super::RunOptions;
use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::network::{Model, NetworkSpec};
use crate::rng::Rng;
use crate::train::{lr_at, train_step, OptimizerState};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cell: Option<String>,
    /// "sphere" for the configured network, "baseline" for its twin.
    pub variant: String,
    pub metrics: PathBuf,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_test_acc: Option<f64>,
}

/// Fraction of `ds` classified correctly in evaluation mode.
pub fn accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (xs, ys) in ds.images.chunks(EVAL_CHUNK).zip(ds.labels.chunks(EVAL_CHUNK)) {
        correct += model
            .predict(xs)?
            .iter()
            .zip(ys)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Cycles through shuffled epochs of `0..n`.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Sampler {
    fn new(n: usize, rng: Rng) -> Self {
        Sampler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.rng.shuffle(&mut self.order);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

pub(crate) struct Job<'a> {
    pub cfg: &'a TrainConfig,
    pub spec: NetworkSpec,
    pub loss: LossSpec,
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub metrics: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub deterministic: bool,
}

/// One training run. Initialization, batch order and augmentation draw from
/// separate streams of the run seed, so a paired baseline sees the same
/// batches.
pub(crate) fn train_one(job: &Job) -> Result<(Model, Vec<MetricsRow>)> {
    let cfg = job.cfg;
    if job.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut model = Model::build(&job.spec, job.loss.clone(), &mut root.fork(1))?;
    let mut sampler = Sampler::new(job.train.len(), root.fork(2));
    let mut aug = root.fork(3);
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let step_cfg = cfg.step_config();
    let mut writer = MetricsWriter::create(&job.metrics)?;
    let mut rows = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    for it in 0..cfg.iterations {
        let idx = sampler.next_batch(cfg.batch_size);
        let (xs, ys) = job.train.batch(&idx, cfg.augment, &mut aug);
        let lr = lr_at(&cfg.schedule, it);
        let m = train_step(&mut model, &xs, &ys, &mut opt, lr, &step_cfg, it)?;
        let last = it + 1 == cfg.iterations;
        let due = last || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0);
        let test_acc = match job.test {
            Some(t) if due => Some(accuracy(&model, t)?),
            _ => None,
        };
        let row = MetricsRow {
            iteration: it,
            wall_ms: if job.deterministic {
                0
            } else {
                start.elapsed().as_millis() as u64
            },
            lr,
            train_loss: m.loss,
            train_acc: m.accuracy,
            test_acc,
            grad_norm: m.grad_norm,
        };
        writer.push(&row)?;
        rows.push(row);
    }
    if let Some(p) = &job.checkpoint {
        checkpoint::save(&model, p)?;
    }
    Ok((model, rows))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn run_cell(
    cell: Option<String>,
    cfg: &TrainConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    out: &Path,
    deterministic: bool,
) -> Result<Vec<RunSummary>> {
    create_dir(out)?;
    let spec = cfg.network_spec()?;
    let loss = cfg.loss_spec()?;
    let mut variants = vec![("sphere", spec.clone(), "")];
    if cfg.paired_baseline {
        variants.push(("baseline", spec.baseline_twin(), "-baseline"));
    }
    let mut out_rows = Vec::new();
    for (variant, spec, suffix) in variants {
        let job = Job {
            cfg,
            spec,
            loss: loss.clone(),
            train,
            test,
            metrics: out.join(format!("metrics{suffix}.csv")),
            checkpoint: cfg.checkpoint.then(|| out.join(format!("model{suffix}.ckpt"))),
            deterministic,
        };
        let (_, rows) = train_one(&job)?;
        let last = rows.last().expect("at least one iteration");
        out_rows.push(RunSummary {
            cell: cell.clone(),
            variant: variant.into(),
            metrics: job.metrics.clone(),
            final_train_loss: last.train_loss,
            final_train_acc: last.train_acc,
            final_test_acc: super::metrics::final_test_acc(&rows),
        });
    }
    Ok(out_rows)
}

fn write_summary(path: &Path, runs: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "variant", "final_train_loss", "final_train_acc", "final_test_acc"])?;
    for r in runs {
        w.write_record([
            r.cell.clone().unwrap_or_default(),
            r.variant.clone(),
            r.final_train_loss.to_string(),
            r.final_train_acc.to_string(),
            r.final_test_acc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains every cell of `cfg` under `opts.out_dir`, one subdirectory per
/// grid cell, and checks the configured acceptance thresholds.
pub fn cmd_train(cfg: &TrainConfig, opts: &RunOptions) -> Result<Vec<RunSummary>> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (train, test) = cfg.dataset.load(opts.data_dir.as_deref())?;
    let cells = cfg.cells();
    let dir_of = |cell: &Option<String>| match cell {
        Some(c) => opts.out_dir.join(c),
        None => opts.out_dir.clone(),
    };
    let results: Vec<Result<Vec<RunSummary>>> = if cfg.parallel_cells && cells.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells
                .iter()
                .map(|(cell, c)| {
                    let (train, test, dir) = (&train, test.as_ref(), dir_of(cell));
                    s.spawn(move || run_cell(cell.clone(), c, train, test, &dir, opts.deterministic))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        })
    } else {
        cells
            .iter()
            .map(|(cell, c)| run_cell(cell.clone(), c, &train, test.as_ref(), &dir_of(cell), opts.deterministic))
            .collect()
    };
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    if !cfg.grid.is_empty() || cfg.paired_baseline {
        create_dir(&opts.out_dir)?;
        write_summary(&opts.out_dir.join("summary.csv"), &runs)?;
    }
    if let Some(acc) = &cfg.acceptance {
        for r in &runs {
            let name = format!("{}{}", r.cell.as_deref().map(|c| format!("{c}/")).unwrap_or_default(), r.variant);
            if let Some(min) = acc.min_final_train_acc {
                if r.final_train_acc < min {
                    return Err(Error::Acceptance(format!(
                        "{name}: final train accuracy {} < {min}",
                        r.final_train_acc
                    )));
                }
            }
            if let Some(min) = acc.min_final_test_acc {
                if r.final_test_acc.is_none_or(|a| a < min) {
                    return Err(Error::Acceptance(format!(
                        "{name}: final test accuracy {:?} < {min}",
                        r.final_test_acc
                    )));
                }
            }
        }
    }
    Ok(runs)
}
