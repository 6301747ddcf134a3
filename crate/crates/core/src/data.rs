//! Datasets, synthetic generators and file loaders.
//!
//! Inputs always live in `[0, 1]` so attack radii keep the meaning they
//! have on 8-bit images.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    provenance: String,
}

impl Dataset {
    /// `inputs` is `[N × features...]`; every value must be finite and in `[0, 1]`.
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Parameter(
                "dataset must contain at least one example".into(),
            ));
        }
        if classes == 0 {
            return Err(Error::Validation("class count must be >= 1".into()));
        }
        if inputs.shape().len() < 2 || inputs.shape()[0] != n {
            return Err(Error::Dimension(format!(
                "inputs of shape {:?} for {n} labels",
                inputs.shape()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Validation(format!(
                "label {y} of example {i} outside [0, {classes})"
            )));
        }
        if let Some(i) = inputs
            .data()
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(Error::Validation(format!(
                "input value {} at flat index {i} outside [0, 1]",
                inputs.data()[i]
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape().iter().product()
    }

    /// Examples at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.inputs.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (x, y) = self.batch(indices)?;
        Dataset::new(x, y, self.classes, self.provenance.clone())
    }

    /// Same examples viewed with another per-example shape of equal size.
    pub fn with_feature_shape(&self, shape: &[usize]) -> Result<Dataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            inputs: self.inputs.reshape(&full)?,
            ..self.clone()
        })
    }
}

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Parameter(format!("{what} must be >= 1")));
    }
    Ok(())
}

fn check_spread(spread: f64) -> Result<()> {
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Parameter(format!(
            "spread must be >= 0, got {spread}"
        )));
    }
    Ok(())
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian clusters, `n` points per class, clamped to `[0, 1]`.
///
/// Centers are drawn from `[0.2, 0.8]^dim` so moderate spreads stay inside
/// the unit box.
pub fn make_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    positive("examples per class", n)?;
    positive("classes", classes)?;
    positive("dimension", dim)?;
    check_spread(spread)?;
    let mut rng = stream(seed, Purpose::Data, 0, 0);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.2..0.8)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * classes * dim);
    let mut labels = Vec::with_capacity(n * classes);
    for _ in 0..n {
        for (c, center) in centers.iter().enumerate() {
            data.extend(
                center
                    .iter()
                    .map(|m| (m + spread * normal(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![n * classes, dim], data)?,
        labels,
        classes,
        format!("blobs(n={n},c={classes},dim={dim},spread={spread},seed={seed})"),
    )
}

/// Two interleaved spiral arms in the unit square, `n` points per arm.
pub fn make_spirals(n: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset> {
    positive("examples per class", n)?;
    if !(turns > 0.0 && turns.is_finite()) {
        return Err(Error::Parameter(format!("turns must be > 0, got {turns}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Parameter(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = stream(seed, Purpose::Data, 1, 0);
    let mut data = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        let angle = t * turns * std::f64::consts::TAU;
        for arm in 0..2 {
            let phase = angle + arm as f64 * std::f64::consts::PI;
            let r = 0.45 * t;
            let x = 0.5 + r * phase.cos() + noise * normal(&mut rng);
            let y = 0.5 + r * phase.sin() + noise * normal(&mut rng);
            data.push(x.clamp(0.0, 1.0));
            data.push(y.clamp(0.0, 1.0));
            labels.push(arm);
        }
    }
    Dataset::new(
        Tensor::new(vec![2 * n, 2], data)?,
        labels,
        2,
        format!("spirals(n={n},turns={turns},noise={noise},seed={seed})"),
    )
}

/// Small `channels×h×w` images: each class has a random blocky prototype
/// and examples are copies of it with Gaussian pixel noise of std `spread`.
pub fn make_tiny_images(
    n: usize,
    classes: usize,
    channels: usize,
    h: usize,
    w: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    positive("examples per class", n)?;
    positive("classes", classes)?;
    positive("channels", channels)?;
    positive("height", h)?;
    positive("width", w)?;
    check_spread(spread)?;
    let mut rng = stream(seed, Purpose::Data, 2, 0);
    let pixels = channels * h * w;
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let coarse: Vec<f64> = (0..channels * h.div_ceil(2) * w.div_ceil(2))
                .map(|_| if rng.gen_bool(0.5) { 0.75 } else { 0.25 })
                .collect();
            let mut p = Vec::with_capacity(pixels);
            for c in 0..channels {
                for i in 0..h {
                    for j in 0..w {
                        p.push(coarse[(c * h.div_ceil(2) + i / 2) * w.div_ceil(2) + j / 2]);
                    }
                }
            }
            p
        })
        .collect();
    let mut data = Vec::with_capacity(n * classes * pixels);
    let mut labels = Vec::with_capacity(n * classes);
    for _ in 0..n {
        for (c, proto) in prototypes.iter().enumerate() {
            data.extend(
                proto
                    .iter()
                    .map(|v| (v + spread * normal(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![n * classes, channels, h, w], data)?,
        labels,
        classes,
        format!(
            "tiny_images(n={n},c={classes},shape={channels}x{h}x{w},spread={spread},seed={seed})"
        ),
    )
}

/// Seeded shuffle, then the first `round(N·fraction)` examples become the
/// validation split. Both splits keep their original relative order.
pub fn split_train_val(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Parameter(format!(
            "fraction {fraction} of {n} examples leaves an empty split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Split, 0, 0));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// One example per line, features then the integer label.
///
/// Without `classes`, the class count is one more than the largest label.
pub fn load_csv(path: &Path, header: bool, classes: Option<usize>) -> Result<Dataset> {
    let text = String::from_utf8(read(path)?)
        .map_err(|e| Error::parse(format!("{}", path.display()), e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (no, line) in text.lines().enumerate().skip(usize::from(header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), no + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::parse(loc(), "need at least one feature and a label"));
        }
        if *width.get_or_insert(fields.len()) != fields.len() {
            return Err(Error::parse(
                loc(),
                format!("{} columns, expected {}", fields.len(), width.unwrap()),
            ));
        }
        let (label, features) = fields.split_last().unwrap();
        for f in features {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(loc(), format!("bad number '{f}'")))?;
            data.push(v);
        }
        labels.push(
            label
                .parse::<usize>()
                .map_err(|_| Error::parse(loc(), format!("bad label '{label}'")))?,
        );
    }
    if labels.is_empty() {
        return Err(Error::parse(format!("{}", path.display()), "no examples"));
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    let n = labels.len();
    let f = width.unwrap() - 1;
    Dataset::new(
        Tensor::new(vec![n, f], data)?,
        labels,
        classes,
        format!("csv({})", path.display()),
    )
    .map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Writes flattened features and labels; floats use the shortest exact form.
pub fn write_csv(ds: &Dataset, path: &Path, header: bool) -> Result<()> {
    let f = ds.feature_len();
    let mut out = String::new();
    if header {
        for i in 0..f {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("label\n");
    }
    for (row, label) in ds.inputs.data().chunks(f).zip(&ds.labels) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::parse(
                format!("{} byte {offset}", path.display()),
                "truncated header",
            )
        })
}

/// IDX image and label files; images become `[N×1×h×w]` scaled by `1/255`.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let img = read(images)?;
    let lab = read(labels)?;
    let magic = be_u32(&img, 0, images)?;
    if magic != 0x0803 {
        return Err(Error::parse(
            format!("{} byte 0", images.display()),
            format!("magic {magic:#010x}, expected 0x00000803"),
        ));
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != 0x0801 {
        return Err(Error::parse(
            format!("{} byte 0", labels.display()),
            format!("magic {magic:#010x}, expected 0x00000801"),
        ));
    }
    let n = be_u32(&img, 4, images)? as usize;
    let h = be_u32(&img, 8, images)? as usize;
    let w = be_u32(&img, 12, images)? as usize;
    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n != n_labels {
        return Err(Error::Validation(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let pixels = &img[16..];
    if pixels.len() != n * h * w {
        return Err(Error::parse(
            format!("{} byte 16", images.display()),
            format!("{} pixel bytes, expected {}", pixels.len(), n * h * w),
        ));
    }
    let label_bytes = &lab[8..];
    if label_bytes.len() != n {
        return Err(Error::parse(
            format!("{} byte 8", labels.display()),
            format!("{} label bytes, expected {n}", label_bytes.len()),
        ));
    }
    let ys: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = classes.unwrap_or_else(|| ys.iter().max().map_or(1, |m| m + 1));
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        Tensor::new(vec![n, 1, h, w], data)?,
        ys,
        classes,
        format!("idx({})", images.display()),
    )
}
