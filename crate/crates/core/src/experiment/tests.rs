use std::path::Path;

use super::config::{self, parse, Validate};
use super::*;
use crate::checkpoint;
use crate::error::Error;
use crate::network::{preset, Model, OperatorConfig, PresetOptions};
use crate::losses::LossSpec;
use crate::rng::Rng;

const BLOBS: &str = r#"
name = "blobs"
seed = 3
iterations = 300
batch_size = 16
eval_every = 100
loss = { kind = "w-softmax", g = { kind = "cosine" } }
network = { kind = "preset", name = "mini", op = { kind = "cosine" } }
dataset = { kind = "blobs", classes = 3, per_class = 40, test_per_class = 10, shape = [1, 8, 8], separation = 5.0, seed = 1 }

[schedule]
base_lr = 1e-2
"#;

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        seed: None,
        out_dir: dir.to_path_buf(),
        deterministic: true,
        data_dir: None,
    }
}

fn blobs_with(extra: &str, iterations: usize) -> TrainConfig {
    let text = BLOBS.replace("iterations = 300", &format!("iterations = {iterations}"));
    parse(&format!("{extra}\n{text}")).unwrap()
}

#[test]
fn presets_parse_and_validate() {
    for (name, text) in config::PRESETS {
        let r = match *name {
            "lemma-sweep" => parse::<ConditioningConfig>(text).and_then(|c| c.validate()),
            "gradcheck-matrix" => parse::<GradcheckConfig>(text).and_then(|c| c.validate()),
            _ => parse::<TrainConfig>(text).and_then(|c| c.validate()),
        };
        assert!(r.is_ok(), "{name}: {r:?}");
    }
    assert!(matches!(config::config_text("preset:nope"), Err(Error::Config(_))));
}

#[test]
fn unknown_keys_are_config_errors() {
    let bad = format!("colour = \"red\"\n{BLOBS}");
    assert!(matches!(parse::<TrainConfig>(&bad), Err(Error::Config(_))));
    let bad = BLOBS.replace("{ kind = \"cosine\" } }", "{ kind = \"cosine\", q = 1 } }");
    assert_ne!(bad, BLOBS);
    assert!(matches!(parse::<TrainConfig>(&bad), Err(Error::Config(_))));
    assert!(matches!(parse::<GradcheckConfig>("tolerence = 1.0"), Err(Error::Config(_))));
    assert!(matches!(parse::<ConditioningConfig>("c_list = []").map(|c| c.validate()), Ok(Err(Error::Config(_)))));
}

#[test]
fn invalid_values_are_config_errors() {
    let mut c: TrainConfig = parse(BLOBS).unwrap();
    c.batch_size = 0;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let c = blobs_with("", 0);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let dup = format!("{BLOBS}\n[[grid]]\nname = \"a\"\n[[grid]]\nname = \"a\"\n");
    assert!(matches!(parse::<TrainConfig>(&dup).unwrap().validate(), Err(Error::Config(_))));
    let bad_loss = BLOBS.replace("g = { kind = \"cosine\" }", "g = { kind = \"learnable\" }");
    assert!(matches!(parse::<TrainConfig>(&bad_loss).unwrap().validate(), Err(Error::Config(_))));
}

#[test]
fn blob_training_fits_and_logs_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let runs = cmd_train(&parse(BLOBS).unwrap(), &opts(dir.path())).unwrap();
    assert_eq!(runs.len(), 1);
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 300);
    assert!(rows.iter().enumerate().all(|(i, r)| r.iteration == i && r.wall_ms == 0));
    assert_eq!(rows.iter().filter(|r| r.test_acc.is_some()).count(), 3);
    assert!(runs[0].final_train_acc >= 0.99, "{runs:?}");
    assert!(runs[0].final_test_acc.unwrap() >= 0.9, "{runs:?}");
    assert!(dir.path().join("model.ckpt").exists());
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let cfg = blobs_with("", 40);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&cfg, &opts(a.path())).unwrap();
    cmd_train(&cfg, &opts(b.path())).unwrap();
    for f in ["metrics.csv", "model.ckpt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    let mut o = opts(c.path());
    o.seed = Some(99);
    cmd_train(&cfg, &o).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("metrics.csv")).unwrap(),
        std::fs::read(c.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn grid_and_paired_runs_write_summaries() {
    let extra = "paired_baseline = true\nparallel_cells = true\ncheckpoint = false";
    let mut cfg = blobs_with(extra, 20);
    cfg.grid = parse::<TrainConfig>(&format!(
        "{BLOBS}\n[[grid]]\nname = \"cos\"\n[[grid]]\nname = \"lin\"\nnetwork = {{ kind = \"preset\", name = \"mini\", op = {{ kind = \"linear\" }} }}\n"
    ))
    .unwrap()
    .grid;
    let dir = tempfile::tempdir().unwrap();
    let runs = cmd_train(&cfg, &opts(dir.path())).unwrap();
    assert_eq!(runs.len(), 4);
    for cell in ["cos", "lin"] {
        for f in ["metrics.csv", "metrics-baseline.csv"] {
            assert_eq!(read_metrics(&dir.path().join(cell).join(f)).unwrap().len(), 20);
        }
        assert!(!dir.path().join(cell).join("model.ckpt").exists());
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    // The two baselines share seed, data and architecture.
    assert_eq!(
        std::fs::read(dir.path().join("cos/metrics-baseline.csv")).unwrap(),
        std::fs::read(dir.path().join("lin/metrics-baseline.csv")).unwrap()
    );
}

#[test]
fn unmet_training_threshold_is_an_acceptance_error() {
    let cfg = blobs_with("", 2);
    let mut cfg = cfg;
    cfg.acceptance = Some(config::TrainAcceptance {
        min_final_train_acc: Some(1.01),
        min_final_test_acc: None,
    });
    let dir = tempfile::tempdir().unwrap();
    let e = cmd_train(&cfg, &opts(dir.path())).unwrap_err();
    assert!(matches!(e, Error::Acceptance(_)), "{e}");
    assert_eq!(exit_code(&e), 4);
}

#[test]
fn missing_dataset_is_an_io_error() {
    let text = BLOBS.replace(
        "{ kind = \"blobs\", classes = 3, per_class = 40, test_per_class = 10, shape = [1, 8, 8], separation = 5.0, seed = 1 }",
        "{ kind = \"mnist\", dir = \"/nonexistent/mnist\" }",
    );
    let dir = tempfile::tempdir().unwrap();
    let e = cmd_train(&parse(&text).unwrap(), &opts(dir.path())).unwrap_err();
    assert_eq!(exit_code(&e), 2, "{e}");
}

#[test]
fn metrics_round_trip_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    let rows = vec![
        MetricsRow {
            iteration: 0,
            wall_ms: 5,
            lr: 0.1,
            train_loss: 2.5,
            train_acc: 0.125,
            test_acc: None,
            grad_norm: 3.0,
        },
        MetricsRow {
            iteration: 1,
            wall_ms: 9,
            lr: 0.1,
            train_loss: 1.0 / 3.0,
            train_acc: 0.5,
            test_acc: Some(0.75),
            grad_norm: 1e-7,
        },
    ];
    let mut w = MetricsWriter::create(&p).unwrap();
    for r in &rows {
        w.push(r).unwrap();
    }
    assert!(matches!(w.push(&rows[0]), Err(Error::InvalidArgument(_))));
    assert_eq!(read_metrics(&p).unwrap(), rows);
    assert!(std::fs::read_to_string(&p).unwrap().starts_with(METRICS_HEADER));
    std::fs::write(&p, "iteration,loss\n0,1\n").unwrap();
    assert!(matches!(read_metrics(&p), Err(Error::Format { .. })));
}

#[test]
fn iterations_to_loss_uses_trailing_mean() {
    let row = |i: usize, l: f64| MetricsRow {
        iteration: i,
        wall_ms: 0,
        lr: 0.1,
        train_loss: l,
        train_acc: 0.0,
        test_acc: None,
        grad_norm: 0.0,
    };
    let losses = [3.0, 0.1, 3.0, 0.4, 0.4, 0.4];
    let rows: Vec<_> = losses.iter().enumerate().map(|(i, &l)| row(i, l)).collect();
    assert_eq!(metrics::iterations_to_loss(&rows, 0.5, 1), Some(1));
    // Means over 3: 2.03, 1.17, 1.27, 0.4.
    assert_eq!(metrics::iterations_to_loss(&rows, 0.5, 3), Some(5));
    assert_eq!(metrics::iterations_to_loss(&rows, 0.1, 3), None);
}

#[test]
fn gradcheck_matrix_shape() {
    let cells = matrix(&GradcheckConfig::default());
    assert_eq!(cells.len(), 6 * 7 + 3 * 3 * 2 + 2 * 4);
    let names: std::collections::HashSet<String> = cells.iter().map(Cell::name).collect();
    assert_eq!(names.len(), cells.len());
    let no_baseline: GradcheckConfig = parse("baseline = false").unwrap();
    assert!(matrix(&no_baseline).iter().all(|c| c.op.is_some()));
}

#[test]
fn gradcheck_filters_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: GradcheckConfig = parse("ops = [\"cosine\"]\nlosses = [\"softmax\", \"ga-softmax-m4\"]").unwrap();
    let cells = matrix(&cfg);
    assert!(cells.iter().all(|c| c.op_name() == "cosine"));
    assert_eq!(cells.len(), 2 + 3);
    cmd_gradcheck(&cfg, Some(7), dir.path()).unwrap();

    let target = "plain/cosine/ga-softmax-m4";
    let mut faulty = cfg.clone();
    faulty.inject_fault = Some(target.into());
    let e = cmd_gradcheck(&faulty, None, dir.path()).unwrap_err();
    match &e {
        Error::Acceptance(msg) => {
            assert!(msg.contains(target), "{msg}");
            assert!(!msg.contains("plain/cosine/softmax"), "{msg}");
        }
        other => panic!("{other}"),
    }
    assert_eq!(exit_code(&e), 4);

    faulty.inject_fault = Some("plain/none/none".into());
    assert!(matches!(cmd_gradcheck(&faulty, None, dir.path()), Err(Error::Config(_))));
    let empty: GradcheckConfig = parse("ops = [\"nothing\"]").unwrap();
    assert!(matches!(cmd_gradcheck(&empty, None, dir.path()), Err(Error::Config(_))));
}

#[test]
fn conditioning_command_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: ConditioningConfig = parse("n = 4\nm = 5\nk = 2\nc_list = [1.0, 2.0, 4.0]\nseeds = [0, 1]").unwrap();
    let res = cmd_conditioning(&cfg, None, dir.path()).unwrap();
    assert_eq!(res.rows.len(), 6);
    let mut rdr = csv::Reader::from_path(dir.path().join("conditioning.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CONDITIONING_HEADER);
    assert_eq!(rdr.records().count(), 6);
    let slopes = std::fs::read_to_string(dir.path().join("slopes.csv")).unwrap();
    assert_eq!(slopes.lines().count(), 4);
    assert!(slopes.lines().last().unwrap().starts_with("pooled,"));

    let one = cmd_conditioning(&cfg, Some(5), dir.path()).unwrap();
    assert!(one.rows.iter().all(|(s, _)| *s == 5));
}

#[test]
fn conditioning_single_scale_has_no_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: ConditioningConfig = parse("n = 3\nm = 3\nc_list = [1.0]\nseeds = [0]").unwrap();
    let res = cmd_conditioning(&cfg, None, dir.path()).unwrap();
    assert_eq!(res.slope, None);
    let slopes = std::fs::read_to_string(dir.path().join("slopes.csv")).unwrap();
    assert!(slopes.contains("pooled,n/a"), "{slopes}");

    let mut strict = cfg.clone();
    strict.acceptance = parse::<ConditioningConfig>("[acceptance]\nslope_min = 1.0\nslope_max = 3.0")
        .unwrap()
        .acceptance;
    let e = cmd_conditioning(&strict, None, dir.path()).unwrap_err();
    assert!(matches!(e, Error::Acceptance(_)), "{e}");
}

#[test]
fn k_histogram_bins() {
    let (hi, c) = k_histogram(&[0.0, 0.5, 1.0], 2);
    assert_eq!((hi, c), (1.0, vec![1, 2]));
    let (hi, c) = k_histogram(&[3.0, 0.1], 3);
    assert_eq!((hi, c), (3.0, vec![1, 0, 1]));
    assert_eq!(k_histogram(&[], 4), (1.0, vec![0; 4]));
}

fn save_mini(op: OperatorConfig, path: &Path) {
    let o = PresetOptions {
        op: Some(op),
        ..Default::default()
    };
    let spec = preset("mini", [1, 8, 8], 3, &o).unwrap();
    let model = Model::build(&spec, LossSpec::Softmax, &mut Rng::new(0)).unwrap();
    checkpoint::save(&model, path).unwrap();
}

#[test]
fn khist_on_fresh_and_trained_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    save_mini(OperatorConfig::Learnable { k0: 0.5, shared: false }, &dir.path().join("fresh.ckpt"));
    let cfg: KhistConfig = parse("checkpoint = \"fresh.ckpt\"\nbins = 10").unwrap();
    let hists = cmd_khist(&cfg, dir.path(), &dir.path().join("out")).unwrap();
    assert_eq!(hists.len(), 4);
    for h in &hists {
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1, "{h:?}");
    }
    let rows = std::fs::read_to_string(dir.path().join("out/khist.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 10);

    save_mini(OperatorConfig::Cosine {}, &dir.path().join("cos.ckpt"));
    let cfg: KhistConfig = parse("checkpoint = \"cos.ckpt\"").unwrap();
    let e = cmd_khist(&cfg, dir.path(), dir.path()).unwrap_err();
    assert!(matches!(e, Error::InvalidArgument(_)));
    let cfg: KhistConfig = parse("checkpoint = \"missing.ckpt\"").unwrap();
    assert_eq!(exit_code(&cmd_khist(&cfg, dir.path(), dir.path()).unwrap_err()), 2);

    let text = BLOBS.replace("op = { kind = \"cosine\" }", "op = { kind = \"learnable\", k0 = 0.5 }");
    let mut train: TrainConfig = parse(&text).unwrap();
    train.iterations = 60;
    cmd_train(&train, &opts(dir.path())).unwrap();
    let cfg: KhistConfig = parse("checkpoint = \"model.ckpt\"").unwrap();
    let model = checkpoint::load(&dir.path().join("model.ckpt")).unwrap();
    let ks = model.learnable_k();
    assert!(ks.iter().flat_map(|(_, k)| k).any(|&k| k != 0.5));
    assert!(ks.iter().flat_map(|(_, k)| k).all(|&k| k > 0.0));
    assert_eq!(cmd_khist(&cfg, dir.path(), dir.path()).unwrap().len(), 4);
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Divergence { iteration: 3 }), 3);
    assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
    assert_eq!(exit_code(&Error::DegenerateSpectrum), 3);
    assert_eq!(exit_code(&Error::Acceptance("x".into())), 4);
}
