//! Experiment runner: adversarial training with a pruner stepping on every
//! mini-batch, per-epoch validation of the finalized weights, best-model
//! selection and the files a run leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::attacks::AttackSpec;
use crate::checkpoint::Checkpoint;
use crate::config::{DataKind, ExperimentConfig, Selection};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRecord};
use crate::model::{
    build_conv, build_mlp, build_residual_ensemble, strip_skip_connections, ConvSpec, Family, Mode,
    Model, ResidualSpec,
};
use crate::pruners::{self, PrunerState};
use crate::rng::{derive_seed, stream, Purpose};
use crate::svg;
use crate::tensor::Tensor;

pub const CSV_VERSION: &str = "# relaxprune results v1";
pub const CSV_HEADER: &str =
    "config_hash,pruner,split,epoch,a1,a2,a3,sparsity,channel_sparsity,lagrangian,best_val,descent_ok";

/// Slack for the per-epoch Lagrangian monitor.
pub const DESCENT_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub config_hash: String,
    pub pruner: String,
    pub split: Split,
    pub record: MetricsRecord,
    pub best_val: bool,
    pub descent_ok: bool,
}

impl ReportRow {
    pub fn csv_line(&self) -> String {
        let r = &self.record;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config_hash,
            self.pruner,
            self.split.name(),
            r.epoch,
            r.a1,
            r.a2,
            r.a3,
            r.sparsity,
            r.channel_sparsity,
            r.lagrangian,
            self.best_val,
            self.descent_ok
        )
    }
}

pub fn results_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("{CSV_VERSION}\n{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Loads or generates the data and cuts train, validation and test splits.
pub fn build_splits(config: &ExperimentConfig) -> Result<Splits> {
    let d = &config.data;
    let seed = config.seed;
    let full = match d.kind {
        DataKind::Blobs => data::make_blobs(d.n_per_class, d.classes, d.dim, d.spread, seed)?,
        DataKind::Spirals => data::make_spirals(d.n_per_class, d.turns, d.noise, seed)?,
        DataKind::TinyImages => data::make_tiny_images(
            d.n_per_class,
            d.classes,
            d.channels,
            d.height,
            d.width,
            d.spread,
            seed,
        )?,
        DataKind::Csv => data::load_csv(Path::new(&d.path), d.header, None)?,
        DataKind::Idx => data::load_idx(Path::new(&d.path), Path::new(&d.labels_path), None)?,
    };
    let full = if config.model.family == Family::Conv {
        full
    } else {
        full.with_feature_shape(&[full.feature_len()])?
    };
    let (rest, test) = data::split_train_val(
        &full,
        d.test_fraction,
        derive_seed(seed, Purpose::Split, 0, 0),
    )?;
    let (train, val) = data::split_train_val(
        &rest,
        d.val_fraction,
        derive_seed(seed, Purpose::Split, 1, 0),
    )?;
    Ok(Splits { train, val, test })
}

/// Freshly initialized model shaped for `ds`.
pub fn build_model(config: &ExperimentConfig, ds: &Dataset) -> Result<Model> {
    let m = &config.model;
    let mut rng = stream(config.seed, Purpose::Init, 0, 0);
    let mut model = match m.family {
        Family::Mlp => {
            let mut widths = vec![ds.feature_len()];
            widths.extend_from_slice(&m.hidden);
            widths.push(ds.classes());
            build_mlp(&widths, m.activation, &mut rng)?
        }
        Family::Residual => {
            let spec = ResidualSpec {
                input_dim: ds.feature_len(),
                width: m.width,
                blocks: m.blocks,
                classes: ds.classes(),
                activation: m.activation,
            };
            let model = build_residual_ensemble(m.members, &spec, m.noise_std, &mut rng)?;
            if m.skip || m.blocks == 0 {
                model
            } else {
                strip_skip_connections(&model)?
            }
        }
        Family::Conv => {
            let shape = ds.feature_shape();
            if shape.len() != 3 {
                return Err(Error::Dimension(format!(
                    "conv nets need c×h×w examples, got {shape:?}"
                )));
            }
            let spec = ConvSpec {
                input_shape: [shape[0], shape[1], shape[2]],
                channels: m.channels.clone(),
                kernel: m.kernel,
                classes: ds.classes(),
                activation: m.activation,
            };
            build_conv(&spec, &mut rng)?
        }
    };
    model.set_eval_noise(m.eval_noise);
    Ok(model)
}

/// A1, A2 and A3 of `model` on `ds`, seeded by `(seed, epoch)`.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    config: &ExperimentConfig,
    epoch: u64,
) -> Result<(f64, f64, f64)> {
    let seed = config.seed;
    Ok((
        metrics::accuracy(model, ds, &AttackSpec::none(), seed, epoch)?,
        metrics::accuracy(model, ds, &config.attack.a2, seed, epoch)?,
        metrics::accuracy(model, ds, &config.attack.a3, seed, epoch)?,
    ))
}

/// Mean clean training loss, used for the Lagrangian monitor.
fn full_loss(model: &Model, ds: &Dataset) -> Result<f64> {
    let mut rng = stream(0, Purpose::TrainNoise, u64::MAX, 0);
    model.loss(ds.inputs(), ds.labels(), Mode::Eval, &mut rng)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<ReportRow>,
    /// Finalized model of the selected epoch.
    pub best: Checkpoint,
    /// State after the last epoch, pruner included.
    pub last: Checkpoint,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn test_row(&self) -> &ReportRow {
        self.rows
            .iter()
            .find(|r| r.split == Split::Test)
            .expect("every run ends with a test row")
    }
}

/// Runs the whole experiment in memory.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = build_splits(config)?;
    let mut model = build_model(config, &splits.train)?;
    let o = &config.optim;
    if o.batch_size > splits.train.len() {
        return Err(Error::Validation(format!(
            "batch size {} exceeds the {} training examples",
            o.batch_size,
            splits.train.len()
        )));
    }
    let p = &config.pruner;
    let mut state = PrunerState::for_model(p.algorithm, p.hyper(o.lr_at(0)), p.prox, &model)?;
    let hash = config.hash();
    let seed = config.seed;
    let mut velocity: Option<Vec<Tensor>> = None;
    let mut rows = Vec::with_capacity(o.epochs + 1);
    let mut warnings = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 0..o.epochs {
        let started = Instant::now();
        let e = epoch as u64;
        state.hyper.eta = o.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream(seed, Purpose::Shuffle, e, 0));
        for (b, idx) in order.chunks(o.batch_size).enumerate() {
            let b = b as u64;
            let (x, y) = splits.train.batch(idx)?;
            let x_adv = config.attack.train.apply(
                &model,
                &x,
                &y,
                Mode::Train,
                &mut stream(seed, Purpose::TrainAttack, e, b),
            )?;
            let (_, grads) = model.loss_and_param_grads(
                &x_adv,
                &y,
                Mode::Train,
                &mut stream(seed, Purpose::TrainNoise, e, b),
            )?;
            let step = if o.momentum > 0.0 {
                let v = match velocity.take() {
                    None => grads,
                    Some(mut v) => {
                        for (vi, gi) in v.iter_mut().zip(&grads) {
                            for (a, g) in vi.data_mut().iter_mut().zip(gi.data()) {
                                *a = o.momentum * *a + g;
                            }
                        }
                        v
                    }
                };
                velocity.insert(v).clone()
            } else {
                grads
            };
            state.step(&step)?;
            model.set_param_values(&state.w)?;
        }

        let lagrangian = state.record(full_loss(&model, &splits.train)?)?;
        let n = state.history.len();
        let descent_ok = n < 2 || state.history[n - 1] <= state.history[n - 2] + DESCENT_SLACK;
        if !descent_ok {
            warnings.push(format!(
                "epoch {epoch}: lagrangian rose from {} to {}",
                state.history[n - 2],
                state.history[n - 1]
            ));
            log::warn!("{}", warnings.last().unwrap());
        }

        pruners::finalize_epoch(&mut state, &mut model)?;
        let (a1, a2, a3) = evaluate(&model, &splits.val, config, e)?;
        let record = MetricsRecord {
            epoch,
            a1,
            a2,
            a3,
            sparsity: metrics::sparsity(&model),
            channel_sparsity: metrics::channel_sparsity(&model)?,
            lagrangian,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: val a1={a1:.2} a2={a2:.2} a3={a3:.2} sparsity={:.2} channels={:.2}",
            record.sparsity,
            record.channel_sparsity
        );
        let score = match config.select {
            Selection::Clean => a1,
            Selection::Robust => a3,
        };
        // ties go to the later epoch
        if best.as_ref().is_none_or(|(_, s, _)| score >= *s) {
            best = Some((epoch, score, model.clone()));
        }
        rows.push(ReportRow {
            config_hash: hash.clone(),
            pruner: p.algorithm.name().into(),
            split: Split::Val,
            record,
            best_val: false,
            descent_ok,
        });
    }

    let (best_epoch, _, best_model) = best.expect("at least one epoch");
    rows[best_epoch].best_val = true;
    let started = Instant::now();
    let (a1, a2, a3) = evaluate(&best_model, &splits.test, config, o.epochs as u64)?;
    let val = &rows[best_epoch].record;
    let record = MetricsRecord {
        epoch: best_epoch,
        a1,
        a2,
        a3,
        sparsity: metrics::sparsity(&best_model),
        channel_sparsity: metrics::channel_sparsity(&best_model)?,
        lagrangian: val.lagrangian,
        seconds: started.elapsed().as_secs_f64(),
    };
    let descent_ok = rows.iter().all(|r| r.descent_ok);
    rows.push(ReportRow {
        config_hash: hash,
        pruner: p.algorithm.name().into(),
        split: Split::Test,
        record,
        best_val: true,
        descent_ok,
    });
    let text = config.canonical_text();
    Ok(TrainOutcome {
        rows,
        best: Checkpoint {
            model: best_model,
            epoch: best_epoch as u64,
            config: text.clone(),
            pruner: None,
        },
        last: Checkpoint {
            model,
            epoch: o.epochs as u64 - 1,
            config: text,
            pruner: Some(state),
        },
        best_epoch,
        warnings,
    })
}

/// Bins used for the histogram figure.
pub fn histogram_edges() -> Vec<f64> {
    metrics::uniform_edges(-0.5, 0.5, 100).expect("fixed edges are valid")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains and writes `results.csv`, `best.ckpt`, `last.ckpt`,
/// `histogram.svg`, `config.txt`, `timings.csv` and `warnings.log` into
/// `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outcome = train(config)?;
    write(&out.join("results.csv"), results_csv(&outcome.rows))?;
    write(&out.join("config.txt"), config.canonical_text())?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.last.save(&out.join("last.ckpt"))?;
    svg::emit_histogram_svg(
        &outcome.best.model,
        &out.join("histogram.svg"),
        &histogram_edges(),
    )?;
    let mut timings = String::from("split,epoch,seconds\n");
    for r in &outcome.rows {
        let _ = writeln!(
            timings,
            "{},{},{}",
            r.split.name(),
            r.record.epoch,
            r.record.seconds
        );
    }
    write(&out.join("timings.csv"), timings)?;
    let mut log = outcome.warnings.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    write(&out.join("warnings.log"), log)?;
    Ok(outcome.rows)
}

/// Loads a config file and runs it; errors name the file.
pub fn run_config_file(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<Vec<ReportRow>> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out_dir = o;
    }
    run_experiment(&config).map_err(|e| e.context(format!("experiment {}", path.display())))
}
