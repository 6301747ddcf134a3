//! Experiment configuration in a line-oriented `key=value` format.
//!
//! Blank lines and `#` comments are ignored, missing keys take their
//! defaults and unknown keys are rejected. [`ExperimentConfig::to_text`]
//! writes every key in a fixed order, so parsing its output gives back an
//! identical config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::attacks::{parse_number, AttackFamily, AttackSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, Family};
use crate::pruners::{Algorithm, GroupProx, Hyper};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    /// Hidden widths of an MLP; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Residual members: block width, block count, ensemble size, noise.
    pub width: usize,
    pub blocks: usize,
    pub members: usize,
    pub noise_std: f64,
    pub skip: bool,
    pub eval_noise: bool,
    /// Conv stages and kernel size.
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::Mlp,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            width: 16,
            blocks: 2,
            members: 1,
            noise_std: 0.0,
            skip: true,
            eval_noise: false,
            channels: vec![8, 8],
            kernel: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Blobs,
    Spirals,
    TinyImages,
    Csv,
    Idx,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Blobs => "blobs",
            DataKind::Spirals => "spirals",
            DataKind::TinyImages => "tiny_images",
            DataKind::Csv => "csv",
            DataKind::Idx => "idx",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(DataKind::Blobs),
            "spirals" => Ok(DataKind::Spirals),
            "tiny_images" => Ok(DataKind::TinyImages),
            "csv" => Ok(DataKind::Csv),
            "idx" => Ok(DataKind::Idx),
            other => Err(Error::Validation(format!("unknown data kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub turns: f64,
    pub noise: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// CSV file, or the IDX image file.
    pub path: String,
    /// IDX label file.
    pub labels_path: String,
    pub header: bool,
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Blobs,
            n_per_class: 200,
            classes: 2,
            dim: 2,
            spread: 0.1,
            turns: 1.0,
            noise: 0.02,
            channels: 1,
            height: 8,
            width: 8,
            path: String::new(),
            labels_path: String::new(),
            header: false,
            test_fraction: 0.2,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub train: AttackSpec,
    /// Attack behind the A2 column.
    pub a2: AttackSpec,
    /// Attack behind the A3 column.
    pub a3: AttackSpec,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let eps = 8.0 / 255.0;
        let alpha = 2.0 / 255.0;
        AttackConfig {
            train: AttackSpec::ifgsm(eps, alpha, 10, true),
            a2: AttackSpec::fgsm(eps),
            a3: AttackSpec::ifgsm(eps, alpha, 20, false),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrunerConfig {
    pub algorithm: Algorithm,
    pub beta: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub prox: GroupProx,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        PrunerConfig {
            algorithm: Algorithm::Rvsm,
            beta: 1.0,
            lambda: 1e-6,
            lambda1: 5e-2,
            lambda2: 1e-5,
            prox: GroupProx::GroupLasso,
        }
    }
}

impl PrunerConfig {
    pub fn hyper(&self, eta: f64) -> Hyper {
        Hyper {
            beta: self.beta,
            lambda: self.lambda,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            eta,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.1,
            momentum: 0.0,
            epochs: 50,
            batch_size: 32,
            decay_epochs: vec![20, 30, 40],
            decay_factor: 0.1,
        }
    }
}

impl OptimConfig {
    /// `lr · factor^k` where `k` counts decay epochs `≤ epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.lr * self.decay_factor.powi(k as i32)
    }
}

/// Which validation accuracy picks the reported checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Clean,
    Robust,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub attack: AttackConfig,
    pub pruner: PrunerConfig,
    pub optim: OptimConfig,
    pub select: Selection,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            attack: AttackConfig::default(),
            pruner: PrunerConfig::default(),
            optim: OptimConfig::default(),
            select: Selection::Clean,
            seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn list(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad integer '{p}'"))
        })
        .collect()
}

impl ExperimentConfig {
    /// Every key in canonical order.
    pub fn to_text(&self) -> String {
        let mut s = self.canonical_text();
        let _ = writeln!(s, "out_dir={}", self.out_dir.display());
        s
    }

    /// Every key except `out_dir`; this is what the hash covers.
    pub fn canonical_text(&self) -> String {
        let m = &self.model;
        let d = &self.data;
        let a = &self.attack;
        let p = &self.pruner;
        let o = &self.optim;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("model.family", m.family.name().into());
        kv("model.hidden", list(&m.hidden));
        kv("model.activation", m.activation.name().into());
        kv("model.width", m.width.to_string());
        kv("model.blocks", m.blocks.to_string());
        kv("model.members", m.members.to_string());
        kv("model.noise_std", format!("{:?}", m.noise_std));
        kv("model.skip", m.skip.to_string());
        kv("model.eval_noise", m.eval_noise.to_string());
        kv("model.channels", list(&m.channels));
        kv("model.kernel", m.kernel.to_string());
        kv("data.kind", d.kind.name().into());
        kv("data.n_per_class", d.n_per_class.to_string());
        kv("data.classes", d.classes.to_string());
        kv("data.dim", d.dim.to_string());
        kv("data.spread", format!("{:?}", d.spread));
        kv("data.turns", format!("{:?}", d.turns));
        kv("data.noise", format!("{:?}", d.noise));
        kv("data.channels", d.channels.to_string());
        kv("data.height", d.height.to_string());
        kv("data.width", d.width.to_string());
        kv("data.path", d.path.clone());
        kv("data.labels_path", d.labels_path.clone());
        kv("data.header", d.header.to_string());
        kv("data.test_fraction", format!("{:?}", d.test_fraction));
        kv("data.val_fraction", format!("{:?}", d.val_fraction));
        kv("attack.train", a.train.to_string());
        kv("attack.a2", a.a2.to_string());
        kv("attack.a3", a.a3.to_string());
        kv("pruner.algorithm", p.algorithm.name().into());
        kv("pruner.beta", format!("{:?}", p.beta));
        kv("pruner.lambda", format!("{:?}", p.lambda));
        kv("pruner.lambda1", format!("{:?}", p.lambda1));
        kv("pruner.lambda2", format!("{:?}", p.lambda2));
        kv("pruner.prox", p.prox.name().into());
        kv("optim.lr", format!("{:?}", o.lr));
        kv("optim.momentum", format!("{:?}", o.momentum));
        kv("optim.epochs", o.epochs.to_string());
        kv("optim.batch_size", o.batch_size.to_string());
        kv("optim.decay_epochs", list(&o.decay_epochs));
        kv("optim.decay_factor", format!("{:?}", o.decay_factor));
        kv(
            "select",
            match self.select {
                Selection::Clean => "clean",
                Selection::Robust => "robust",
            }
            .into(),
        );
        kv("seed", self.seed.to_string());
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text, excluding
    /// the output directory.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Parses and validates config text; `origin` names it in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = || format!("{origin}:{}", no + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(loc(), format!("'{line}' is not key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            c.set(key, value).map_err(|e| match e {
                Error::Validation(_) | Error::Parse { .. } => e.context(loc()),
                other => Error::parse(loc(), other.to_string()),
            })?;
        }
        c.validate().map_err(|e| e.context(origin.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies one `key=value` pair; call [`Self::validate`] afterwards.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = |what: &str| Error::parse(format!("key '{key}'"), format!("bad {what} '{v}'"));
        let num = || parse_number(v);
        let int = || v.parse::<usize>().map_err(|_| bad("integer"));
        let flag = || v.parse::<bool>().map_err(|_| bad("boolean"));
        let ints = || parse_list(v).map_err(|m| Error::parse(format!("key '{key}'"), m));
        let attack = || v.parse::<AttackSpec>();
        let (m, d, a, p, o) = (
            &mut self.model,
            &mut self.data,
            &mut self.attack,
            &mut self.pruner,
            &mut self.optim,
        );
        match key {
            "model.family" => m.family = Family::parse(v)?,
            "model.hidden" => m.hidden = ints()?,
            "model.activation" => m.activation = Activation::parse(v)?,
            "model.width" => m.width = int()?,
            "model.blocks" => m.blocks = int()?,
            "model.members" => m.members = int()?,
            "model.noise_std" => m.noise_std = num()?,
            "model.skip" => m.skip = flag()?,
            "model.eval_noise" => m.eval_noise = flag()?,
            "model.channels" => m.channels = ints()?,
            "model.kernel" => m.kernel = int()?,
            "data.kind" => d.kind = DataKind::parse(v)?,
            "data.n_per_class" => d.n_per_class = int()?,
            "data.classes" => d.classes = int()?,
            "data.dim" => d.dim = int()?,
            "data.spread" => d.spread = num()?,
            "data.turns" => d.turns = num()?,
            "data.noise" => d.noise = num()?,
            "data.channels" => d.channels = int()?,
            "data.height" => d.height = int()?,
            "data.width" => d.width = int()?,
            "data.path" => d.path = v.to_string(),
            "data.labels_path" => d.labels_path = v.to_string(),
            "data.header" => d.header = flag()?,
            "data.test_fraction" => d.test_fraction = num()?,
            "data.val_fraction" => d.val_fraction = num()?,
            "attack.train" => a.train = attack()?,
            "attack.a2" => a.a2 = attack()?,
            "attack.a3" => a.a3 = attack()?,
            "pruner.algorithm" => p.algorithm = Algorithm::parse(v)?,
            "pruner.beta" => p.beta = num()?,
            "pruner.lambda" => p.lambda = num()?,
            "pruner.lambda1" => p.lambda1 = num()?,
            "pruner.lambda2" => p.lambda2 = num()?,
            "pruner.prox" => p.prox = GroupProx::parse(v)?,
            "optim.lr" => o.lr = num()?,
            "optim.momentum" => o.momentum = num()?,
            "optim.epochs" => o.epochs = int()?,
            "optim.batch_size" => o.batch_size = int()?,
            "optim.decay_epochs" => o.decay_epochs = ints()?,
            "optim.decay_factor" => o.decay_factor = num()?,
            "select" => {
                self.select = match v {
                    "clean" => Selection::Clean,
                    "robust" => Selection::Robust,
                    _ => return Err(Error::Validation(format!("unknown selection '{v}'"))),
                }
            }
            "seed" => self.seed = v.parse().map_err(|_| bad("seed"))?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Validation(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        let m = &self.model;
        let d = &self.data;
        let o = &self.optim;
        match m.family {
            Family::Mlp if m.hidden.contains(&0) => return fail("zero hidden width".into()),
            Family::Residual if m.width == 0 || m.members == 0 => {
                return fail("residual nets need width and members >= 1".into())
            }
            Family::Conv => {
                if !matches!(d.kind, DataKind::TinyImages | DataKind::Idx) {
                    return fail(format!("conv nets need image data, got {}", d.kind.name()));
                }
                if m.channels.is_empty() || m.channels.contains(&0) || m.kernel == 0 {
                    return fail("conv nets need nonzero channels and kernel".into());
                }
            }
            _ => {}
        }
        if !(m.noise_std >= 0.0 && m.noise_std.is_finite()) {
            return fail(format!("noise_std must be >= 0, got {}", m.noise_std));
        }
        for (what, f) in [("test", d.test_fraction), ("validation", d.val_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return fail(format!("{what} fraction must be in (0, 1), got {f}"));
            }
        }
        if matches!(d.kind, DataKind::Csv | DataKind::Idx) && d.path.is_empty() {
            return fail(format!("{} data needs data.path", d.kind.name()));
        }
        if d.kind == DataKind::Idx && d.labels_path.is_empty() {
            return fail("idx data needs data.labels_path".into());
        }
        if matches!(
            d.kind,
            DataKind::Blobs | DataKind::TinyImages | DataKind::Spirals
        ) && (d.n_per_class == 0 || d.classes == 0)
        {
            return fail("synthetic data needs n_per_class and classes >= 1".into());
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return fail(format!("learning rate must be > 0, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", o.momentum));
        }
        if o.epochs == 0 || o.batch_size == 0 {
            return fail("epochs and batch size must be >= 1".into());
        }
        if let Some(e) = o.decay_epochs.iter().find(|&&e| e >= o.epochs) {
            return fail(format!(
                "decay epoch {e} not below epoch count {}",
                o.epochs
            ));
        }
        if !(o.decay_factor > 0.0 && o.decay_factor.is_finite()) {
            return fail(format!("decay factor must be > 0, got {}", o.decay_factor));
        }
        for spec in [&self.attack.train, &self.attack.a2, &self.attack.a3] {
            spec.validate()?;
        }
        let p = &self.pruner;
        p.hyper(o.lr).validate()?;
        if p.algorithm == Algorithm::Admm && p.beta == 0.0 {
            return fail("admm needs pruner.beta > 0".into());
        }
        Ok(())
    }

    /// Whether any evaluation attack perturbs its input.
    pub fn robust_eval(&self) -> bool {
        [&self.attack.a2, &self.attack.a3]
            .iter()
            .any(|s| s.family != AttackFamily::None && s.epsilon > 0.0)
    }
}
