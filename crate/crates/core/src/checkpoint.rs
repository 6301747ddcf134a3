//! Binary checkpoint container for a model, optional pruner state and the
//! config text that produced them. The layout is described in
//! `docs/checkpoint-format.md`; all integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, Family, Layer, Model, Param};
use crate::pruners::{Algorithm, GroupProx, Hyper, PrunerState};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RPCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Epoch whose finalized weights are stored.
    pub epoch: u64,
    pub config: String,
    pub pruner: Option<PrunerState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn dims(&mut self, shape: &[usize]) {
        self.u32(shape.len());
        for &d in shape {
            self.u64(d as u64);
        }
    }
    fn values(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!(
                "truncated checkpoint: need {n} bytes at offset {}",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64()?)
            .map_err(|_| Error::Format(format!("index out of range at offset {at}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn flag(&mut self) -> Result<bool> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("bad flag byte {b} at offset {at}"))),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format(format!("invalid utf-8 string at offset {at}")))
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        (0..rank).map(|_| self.usize()).collect()
    }
    fn values(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| Error::Format(e.to_string()))
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Tanh),
        c => Err(Error::Format(format!("unknown activation code {c}"))),
    }
}

fn family_code(f: Family) -> u8 {
    match f {
        Family::Mlp => 0,
        Family::Conv => 1,
        Family::Residual => 2,
    }
}

fn algorithm_code(a: Algorithm) -> u8 {
    match a {
        Algorithm::None => 0,
        Algorithm::Rvsm => 1,
        Algorithm::Rgsm => 2,
        Algorithm::Admm => 3,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.u64(self.epoch);
        w.str(&self.config);

        let m = &self.model;
        w.u8(family_code(m.family()));
        w.dims(m.input_shape());
        w.u64(m.classes() as u64);
        w.f64(m.noise_std());
        w.u8(m.skip() as u8);
        w.u8(m.eval_noise() as u8);

        w.u32(m.members().len());
        for (member, layers) in m.members().iter().enumerate() {
            w.u32(layers.len());
            for layer in layers {
                w.u32(member);
                match *layer {
                    Layer::Dense { weight, bias } => {
                        w.u8(0);
                        w.u64(weight as u64);
                        w.u64(bias as u64);
                    }
                    Layer::Conv { weight, bias } => {
                        w.u8(1);
                        w.u64(weight as u64);
                        w.u64(bias as u64);
                    }
                    Layer::Act(a) => {
                        w.u8(2);
                        w.u8(activation_code(a));
                    }
                    Layer::Flatten => w.u8(3),
                    Layer::Residual {
                        weight,
                        bias,
                        activation,
                    } => {
                        w.u8(4);
                        w.u64(weight as u64);
                        w.u64(bias as u64);
                        w.u8(activation_code(activation));
                    }
                }
            }
        }

        w.u32(m.params().len());
        for p in m.params() {
            w.str(&p.name);
            w.dims(p.value.shape());
        }
        for p in m.params() {
            w.values(&p.value);
        }

        match &self.pruner {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u8(algorithm_code(s.algorithm));
                w.u8(match s.prox {
                    GroupProx::GroupLasso => 0,
                    GroupProx::GroupL0 => 1,
                });
                let h = s.hyper;
                for v in [h.beta, h.lambda, h.lambda1, h.lambda2, h.eta] {
                    w.f64(v);
                }
                for t in s.w.iter().chain(&s.u) {
                    w.values(t);
                }
                match &s.z {
                    None => w.u8(0),
                    Some(z) => {
                        w.u8(1);
                        for t in z {
                            w.values(t);
                        }
                    }
                }
                w.u64(s.history.len() as u64);
                for &v in &s.history {
                    w.f64(v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let epoch = r.u64()?;
        let config = r.str()?;

        let family = match r.u8()? {
            0 => Family::Mlp,
            1 => Family::Conv,
            2 => Family::Residual,
            c => return Err(Error::Format(format!("unknown model family code {c}"))),
        };
        let input_shape = r.dims()?;
        let classes = r.usize()?;
        let noise_std = r.f64()?;
        let skip = r.flag()?;
        let eval_noise = r.flag()?;

        let n_members = r.u32()?;
        let mut members = Vec::with_capacity(n_members.min(1024));
        for member in 0..n_members {
            let n_layers = r.u32()?;
            let mut layers = Vec::with_capacity(n_layers.min(1024));
            for _ in 0..n_layers {
                let at = r.pos;
                if r.u32()? != member {
                    return Err(Error::Format(format!(
                        "layer record at offset {at} names the wrong member"
                    )));
                }
                let layer = match r.u8()? {
                    0 => Layer::Dense {
                        weight: r.usize()?,
                        bias: r.usize()?,
                    },
                    1 => Layer::Conv {
                        weight: r.usize()?,
                        bias: r.usize()?,
                    },
                    2 => Layer::Act(activation_from(r.u8()?)?),
                    3 => Layer::Flatten,
                    4 => Layer::Residual {
                        weight: r.usize()?,
                        bias: r.usize()?,
                        activation: activation_from(r.u8()?)?,
                    },
                    t => {
                        return Err(Error::Format(format!(
                            "unknown layer tag {t} at offset {at}"
                        )))
                    }
                };
                layers.push(layer);
            }
            members.push(layers);
        }

        let n_params = r.u32()?;
        let mut heads = Vec::with_capacity(n_params.min(1 << 16));
        for _ in 0..n_params {
            let name = r.str()?;
            let shape = r.dims()?;
            heads.push((name, shape));
        }
        let mut params = Vec::with_capacity(heads.len());
        for (name, shape) in heads {
            let value = r.values(&shape)?;
            params.push(Param { name, value });
        }
        let model = Model::from_parts(
            family,
            input_shape,
            classes,
            members,
            params,
            noise_std,
            skip,
            eval_noise,
        )
        .map_err(|e| Error::Format(format!("inconsistent model: {e}")))?;

        let pruner = if r.flag()? {
            let algorithm = match r.u8()? {
                0 => Algorithm::None,
                1 => Algorithm::Rvsm,
                2 => Algorithm::Rgsm,
                3 => Algorithm::Admm,
                c => return Err(Error::Format(format!("unknown pruner code {c}"))),
            };
            let prox = match r.u8()? {
                0 => GroupProx::GroupLasso,
                1 => GroupProx::GroupL0,
                c => return Err(Error::Format(format!("unknown prox code {c}"))),
            };
            let hyper = Hyper {
                beta: r.f64()?,
                lambda: r.f64()?,
                lambda1: r.f64()?,
                lambda2: r.f64()?,
                eta: r.f64()?,
            };
            let shapes: Vec<Vec<usize>> = model
                .params()
                .iter()
                .map(|p| p.value.shape().to_vec())
                .collect();
            let read_set = |r: &mut Reader| -> Result<Vec<Tensor>> {
                shapes.iter().map(|s| r.values(s)).collect()
            };
            let w = read_set(&mut r)?;
            let u = read_set(&mut r)?;
            let z = if r.flag()? {
                Some(read_set(&mut r)?)
            } else {
                None
            };
            let n_hist = r.usize()?;
            let history = (0..n_hist).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if (algorithm == Algorithm::Admm) != z.is_some() {
                return Err(Error::Format(
                    "dual variables present for the wrong pruner".into(),
                ));
            }
            Some(PrunerState {
                algorithm,
                hyper,
                prox,
                w,
                u,
                z,
                groups: model.groups().to_vec(),
                history,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model,
            epoch,
            config,
            pruner,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}
