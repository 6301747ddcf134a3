use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relaxprune::compare::compare_runs;
use relaxprune::config::ExperimentConfig;
use relaxprune::data::load_csv;
use relaxprune::harness::{build_splits, run_experiment, Split};
use relaxprune::metrics::{accuracy, uniform_edges};
use relaxprune::svg::emit_histogram_svg;
use relaxprune::{AttackSpec, Checkpoint, Error, Result};

/// Output root used when `--out` is not given.
const OUT_ENV: &str = "RELAXPRUNE_OUT";

#[derive(Parser)]
#[command(
    name = "relaxprune",
    version,
    about = "Sparse adversarial training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a config file and write the run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to $RELAXPRUNE_OUT/<config hash>, then the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a checkpoint under an attack.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// e.g. `none`, `fgsm:eps=8/255`, `ifgsm:eps=8/255,alpha=2/255,steps=20`.
        #[arg(long, default_value = "none")]
        attack: String,
        /// CSV data to evaluate on instead of the run's test split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        header: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Weight histogram of a checkpoint as SVG.
    Histogram {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        /// Bins cover [-range, range].
        #[arg(long, default_value_t = 0.5)]
        range: f64,
    },
    /// Compare the best-epoch rows of finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        csv: Vec<PathBuf>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut c = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    c.out_dir = match (out, std::env::var_os(OUT_ENV)) {
        (Some(o), _) => o,
        (None, Some(root)) => PathBuf::from(root).join(c.hash()),
        (None, None) => c.out_dir,
    };
    let rows =
        run_experiment(&c).map_err(|e| e.context(format!("experiment {}", config.display())))?;
    let test = rows
        .iter()
        .find(|r| r.split == Split::Test)
        .expect("runs end with a test row");
    let r = &test.record;
    println!(
        "{}: best epoch {} | A1 {:.2} A2 {:.2} A3 {:.2} | sparsity {:.2}% channels {:.2}%",
        c.out_dir.display(),
        r.epoch,
        r.a1,
        r.a2,
        r.a3,
        r.sparsity,
        r.channel_sparsity
    );
    Ok(())
}

fn eval(
    checkpoint: &Path,
    attack: &str,
    data: Option<PathBuf>,
    header: bool,
    seed: u64,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let spec: AttackSpec = attack.parse()?;
    let ds = match data {
        Some(p) => load_csv(&p, header, Some(ck.model.classes()))?
            .with_feature_shape(ck.model.input_shape())?,
        None => {
            if ck.config.is_empty() {
                return Err(Error::Validation(
                    "checkpoint carries no config; pass --data".into(),
                ));
            }
            let config = ExperimentConfig::parse(&ck.config, &checkpoint.display().to_string())?;
            build_splits(&config)?.test
        }
    };
    let acc = accuracy(&ck.model, &ds, &spec, seed, 0)?;
    println!("{spec}: {acc:.2}% of {} examples", ds.len());
    Ok(())
}

fn histogram(checkpoint: &Path, out: &Path, bins: usize, range: f64) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let edges = uniform_edges(-range, range, bins)?;
    emit_histogram_svg(&ck.model, out, &edges)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn compare(csv: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let c = compare_runs(csv)?;
    print!("{}", c.to_text());
    if let Some(p) = out {
        std::fs::write(&p, c.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Eval {
            checkpoint,
            attack,
            data,
            header,
            seed,
        } => eval(&checkpoint, &attack, data, header, seed),
        Command::Histogram {
            checkpoint,
            out,
            bins,
            range,
        } => histogram(&checkpoint, &out, bins, range),
        Command::Compare { csv, out } => compare(&csv, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
