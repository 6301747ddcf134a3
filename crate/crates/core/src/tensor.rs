//! Dense row-major `f64` tensors and the forward kernels shared by the tape
//! and the tape-free evaluation path.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {} has a zero dimension",
                shape_str(&shape)
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {} needs {} elements, got {}",
                shape_str(&shape),
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shapes {} and {} differ",
                shape_str(&self.shape),
                shape_str(&other.shape)
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let rows = self.shape[0];
        if start >= end || end > rows {
            return Err(Error::Index(format!(
                "row range {start}..{end} outside {rows} rows"
            )));
        }
        let stride = self.data.len() / rows;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * stride..end * stride].to_vec(),
        })
    }

    /// Gathers rows along the first axis.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = self.shape[0];
        let stride = self.data.len() / rows;
        if indices.is_empty() {
            return Err(Error::Index("empty row selection".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index(format!("row {i} outside {rows} rows")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "matmul of {} by {}",
            shape_str(&a.shape),
            shape_str(&b.shape)
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[1] {
        return Err(Error::Dimension(format!(
            "matmul of {} by transpose of {}",
            shape_str(&a.shape),
            shape_str(&b.shape)
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `aᵀ · b` for `a: [k×m]`, `b: [k×n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[0] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "matmul of transpose of {} by {}",
            shape_str(&a.shape),
            shape_str(&b.shape)
        )));
    }
    let (k, m, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| x * y)
}

pub fn scale(x: &Tensor, s: f64) -> Tensor {
    x.map(|v| v * s)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// `x: [m×n] + bias: [n]` broadcast over rows.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.shape.len() != 2 || bias.shape.len() != 1 || bias.shape[0] != x.shape[1] {
        return Err(Error::Dimension(format!(
            "row bias {} against {}",
            shape_str(&bias.shape),
            shape_str(&x.shape)
        )));
    }
    let n = x.shape[1];
    let mut out = x.clone();
    for row in out.data.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

/// `x: [b×c×h×w] + bias: [c]` broadcast over batch and spatial positions.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.shape.len() != 4 || bias.shape.len() != 1 || bias.shape[0] != x.shape[1] {
        return Err(Error::Dimension(format!(
            "channel bias {} against {}",
            shape_str(&bias.shape),
            shape_str(&x.shape)
        )));
    }
    let plane = x.shape[2] * x.shape[3];
    let c = x.shape[1];
    let mut out = x.clone();
    for (idx, chunk) in out.data.chunks_mut(plane).enumerate() {
        let b = bias.data[idx % c];
        for o in chunk {
            *o += b;
        }
    }
    Ok(out)
}

/// Geometry of a valid, stride-1 convolution over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }

    fn of(x: &Tensor, k: &Tensor) -> Result<ConvDims> {
        let err = || {
            Error::Dimension(format!(
                "conv2d of input {} with kernels {}",
                shape_str(&x.shape),
                shape_str(&k.shape)
            ))
        };
        let (batch, c_in, h, w) = match *x.shape.as_slice() {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(err()),
        };
        let &[c_out, kc, kh, kw] = k.shape.as_slice() else {
            return Err(err());
        };
        if kc != c_in || kh > h || kw > w {
            return Err(err());
        }
        Ok(ConvDims {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
        })
    }
}

/// Valid stride-1 cross-correlation. Accepts a single `[c×h×w]` input or a
/// batch `[b×c×h×w]`; the output keeps the input's rank.
pub fn conv2d(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let d = ConvDims::of(x, kernels)?;
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = vec![0.0; d.batch * d.c_out * oh * ow];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let obase = (b * d.c_out + co) * oh * ow;
            for ci in 0..d.c_in {
                let xbase = (b * d.c_in + ci) * d.h * d.w;
                let kbase = (co * d.c_in + ci) * d.kh * d.kw;
                for ki in 0..d.kh {
                    for kj in 0..d.kw {
                        let kv = kernels.data[kbase + ki * d.kw + kj];
                        if kv == 0.0 {
                            continue;
                        }
                        for i in 0..oh {
                            let xrow = xbase + (i + ki) * d.w + kj;
                            let orow = obase + i * ow;
                            for j in 0..ow {
                                out[orow + j] += kv * x.data[xrow + j];
                            }
                        }
                    }
                }
            }
        }
    }
    let shape = if x.shape.len() == 3 {
        vec![d.c_out, oh, ow]
    } else {
        vec![d.batch, d.c_out, oh, ow]
    };
    Ok(Tensor { shape, data: out })
}

/// Adjoints of [`conv2d`] with respect to input and kernels.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let d = ConvDims::of(x, kernels)?;
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; kernels.len()];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let obase = (b * d.c_out + co) * oh * ow;
            for ci in 0..d.c_in {
                let xbase = (b * d.c_in + ci) * d.h * d.w;
                let kbase = (co * d.c_in + ci) * d.kh * d.kw;
                for ki in 0..d.kh {
                    for kj in 0..d.kw {
                        let kv = kernels.data[kbase + ki * d.kw + kj];
                        let mut acc = 0.0;
                        for i in 0..oh {
                            let xrow = xbase + (i + ki) * d.w + kj;
                            let orow = obase + i * ow;
                            for j in 0..ow {
                                let g = grad_out.data[orow + j];
                                acc += g * x.data[xrow + j];
                                gx[xrow + j] += g * kv;
                            }
                        }
                        gk[kbase + ki * d.kw + kj] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor {
            shape: x.shape.clone(),
            data: gx,
        },
        Tensor {
            shape: kernels.shape.clone(),
            data: gk,
        },
    ))
}

/// Mean across the leading axis: `[b×rest] -> [rest]`.
pub fn mean_over_batch(x: &Tensor) -> Result<Tensor> {
    if x.shape.len() < 2 {
        return Err(Error::Dimension(format!(
            "mean_over_batch needs rank >= 2, got {}",
            shape_str(&x.shape)
        )));
    }
    let b = x.shape[0];
    let stride = x.len() / b;
    let mut out = vec![0.0; stride];
    for row in x.data.chunks(stride) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / b as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor {
        shape: x.shape[1..].to_vec(),
        data: out,
    })
}

/// Softmax probabilities row by row, stabilized by max-subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "softmax expects [b×c], got {}",
            shape_str(&logits.shape)
        )));
    }
    let c = logits.shape[1];
    let mut out = logits.clone();
    for row in out.data.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

pub(crate) fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if logits.shape.len() != 2 || logits.shape[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "logits {} against {} labels",
            shape_str(&logits.shape),
            labels.len()
        )));
    }
    let c = logits.shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index(format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let c = logits.shape[1];
    let mut total = 0.0;
    for (row, &label) in logits.data.chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = *logits.shape.last().unwrap_or(&1);
    logits
        .data
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Independent `N(0, sigma²)` entries. `sigma = 0` yields exact zeros and
/// consumes no randomness.
pub fn gaussian_noise<R: Rng + ?Sized>(shape: &[usize], sigma: f64, rng: &mut R) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!(
            "noise std must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}
