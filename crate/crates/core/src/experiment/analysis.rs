use std::path::Path;

use super::config::{ConditioningConfig, KhistConfig, Validate};
use crate::checkpoint;
use crate::conditioning::{sweep, SweepConfig, SweepResult};
use crate::error::{Error, Result};

pub const CONDITIONING_HEADER: [&str; 7] = [
    "seed",
    "c",
    "kappa_G",
    "lambda_max_G",
    "lambda_min_nz_G",
    "spectrum_GS_maxdiff",
    "trace_identity_err",
];

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or("n/a".into(), |v| v.to_string())
}

/// Runs the scaling sweep, writing `conditioning.csv` and `slopes.csv`.
/// A `--seed` override replaces the seed list with that single seed.
pub fn cmd_conditioning(cfg: &ConditioningConfig, seed: Option<u64>, out_dir: &Path) -> Result<SweepResult> {
    cfg.validate()?;
    let sc = SweepConfig {
        n: cfg.n,
        m: cfg.m,
        k: cfg.k,
        c_list: cfg.c_list.clone(),
        seeds: seed.map_or(cfg.seeds.clone(), |s| vec![s]),
    };
    let res = sweep(&sc)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut w = csv::Writer::from_path(out_dir.join("conditioning.csv"))?;
    w.write_record(CONDITIONING_HEADER)?;
    for (s, r) in &res.rows {
        w.write_record([
            s.to_string(),
            r.c.to_string(),
            r.kappa_g.to_string(),
            r.lambda_max_g.to_string(),
            r.lambda_min_nz_g.to_string(),
            r.spectrum_gs_maxdiff.to_string(),
            r.trace_identity_err.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(out_dir, e))?;
    let mut w = csv::Writer::from_path(out_dir.join("slopes.csv"))?;
    w.write_record(["seed", "slope"])?;
    for (s, slope) in &res.per_seed_slopes {
        w.write_record([s.to_string(), fmt_slope(*slope)])?;
    }
    w.write_record(["pooled".into(), fmt_slope(res.slope)])?;
    w.flush().map_err(|e| Error::io(out_dir, e))?;

    if let Some(acc) = &cfg.acceptance {
        match res.slope {
            Some(s) if (acc.slope_min..=acc.slope_max).contains(&s) => {}
            s => {
                return Err(Error::Acceptance(format!(
                    "log-log slope {} outside [{}, {}]",
                    fmt_slope(s),
                    acc.slope_min,
                    acc.slope_max
                )))
            }
        }
        if res.max_spectrum_gs_diff() > acc.spectrum_gs_tol {
            return Err(Error::Acceptance(format!(
                "normalized spectra differ by {:e}",
                res.max_spectrum_gs_diff()
            )));
        }
        if res.max_trace_identity_err() > acc.trace_tol {
            return Err(Error::Acceptance(format!(
                "trace identity off by {:e}",
                res.max_trace_identity_err()
            )));
        }
    }
    Ok(res)
}

/// `bins` equal bins over `[0, max(1, max k)]`, the last one closed.
pub fn k_histogram(ks: &[f64], bins: usize) -> (f64, Vec<usize>) {
    let hi = ks.iter().copied().fold(1.0, f64::max);
    let mut counts = vec![0; bins];
    for &k in ks {
        let b = ((k / hi) * bins as f64).floor().max(0.0) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    (hi, counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerHistogram {
    pub layer: usize,
    pub hi: f64,
    pub counts: Vec<usize>,
}

/// Per-layer histograms of the learnable curvatures in a checkpoint,
/// written to `khist.csv`.
pub fn cmd_khist(cfg: &KhistConfig, base: &Path, out_dir: &Path) -> Result<Vec<LayerHistogram>> {
    cfg.validate()?;
    let path = if cfg.checkpoint.is_absolute() {
        cfg.checkpoint.clone()
    } else {
        base.join(&cfg.checkpoint)
    };
    let model = checkpoint::load(&path)?;
    let ks = model.learnable_k();
    if ks.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} has no learnable sigmoid layers",
            path.display()
        )));
    }
    let hists: Vec<LayerHistogram> = ks
        .iter()
        .map(|(layer, k)| {
            let (hi, counts) = k_histogram(k, cfg.bins);
            LayerHistogram {
                layer: *layer,
                hi,
                counts,
            }
        })
        .collect();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut w = csv::Writer::from_path(out_dir.join("khist.csv"))?;
    w.write_record(["layer", "bin", "lo", "hi", "count"])?;
    for h in &hists {
        let width = h.hi / cfg.bins as f64;
        for (b, c) in h.counts.iter().enumerate() {
            w.write_record([
                h.layer.to_string(),
                b.to_string(),
                (b as f64 * width).to_string(),
                ((b + 1) as f64 * width).to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(out_dir, e))?;
    Ok(hists)
}
