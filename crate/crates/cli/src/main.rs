use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spherenet::error::{Error, Result};
use spherenet::experiment::{self, config, RunOptions};

#[derive(Parser)]
#[command(name = "spherenet", version, about = "Hyperspherical convolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file, or `preset:<name>` for a shipped one
    #[arg(long)]
    config: Option<String>,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Write zero wall-clock columns so reruns are byte-identical
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, a grid of cells, or a sphere/baseline pair
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset root; defaults to $SPHERE_DATA_DIR, then ./data
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences over the
    /// operator × loss × layer matrix
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Hessian condition numbers of scaled factorization problems
    Conditioning {
        #[command(flatten)]
        common: Common,
    },
    /// Histograms of learned sigmoid curvatures in a checkpoint
    Khist {
        #[command(flatten)]
        common: Common,
    },
}

fn load_or_default<T>(arg: &Option<String>) -> Result<T>
where
    T: serde::de::DeserializeOwned + config::Validate,
{
    match arg {
        Some(a) => config::load(a),
        None => config::parse::<T>("").and_then(|c| {
            c.validate()?;
            Ok(c)
        }),
    }
}

fn require(arg: &Option<String>) -> Result<&str> {
    arg.as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, data_dir } => {
            let cfg: experiment::TrainConfig = config::load(require(&common.config)?)?;
            let opts = RunOptions {
                seed: common.seed,
                out_dir: common.out_dir,
                deterministic: common.deterministic,
                data_dir,
            };
            for r in experiment::cmd_train(&cfg, &opts)? {
                let test = r.final_test_acc.map_or("-".into(), |a| format!("{a:.4}"));
                println!(
                    "{}{}: loss {:.4}, train acc {:.4}, test acc {test}",
                    r.cell.map(|c| format!("{c}/")).unwrap_or_default(),
                    r.variant,
                    r.final_train_loss,
                    r.final_train_acc,
                );
            }
        }
        Command::Gradcheck { common } => {
            let cfg: experiment::GradcheckConfig = load_or_default(&common.config)?;
            let res = experiment::cmd_gradcheck(&cfg, common.seed, &common.out_dir)?;
            let worst = res.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            let skipped: usize = res.iter().map(|r| r.skipped).sum();
            println!("{} cells pass, max relative error {worst:e}, {skipped} kink coordinates skipped", res.len());
        }
        Command::Conditioning { common } => {
            let cfg: experiment::ConditioningConfig = load_or_default(&common.config)?;
            let res = experiment::cmd_conditioning(&cfg, common.seed, &common.out_dir)?;
            match res.slope {
                Some(s) => println!("log-log slope of kappa_G against c: {s:.4}"),
                None => println!("log-log slope undefined (fewer than two scales)"),
            }
        }
        Command::Khist { common } => {
            let arg = require(&common.config)?;
            let cfg: experiment::KhistConfig = config::load(arg)?;
            let base = match arg.strip_prefix("preset:") {
                Some(_) => PathBuf::from("."),
                None => Path::new(arg).parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            for h in experiment::cmd_khist(&cfg, &base, &common.out_dir)? {
                println!("layer {}: k in [0, {}], counts {:?}", h.layer, h.hi, h.counts);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
