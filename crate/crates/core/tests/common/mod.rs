//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use relaxprune::autodiff::{Tape, Var};
use relaxprune::model::{self, Activation, ConvSpec, Layer, Mode, Model, Param, ResidualSpec};
use relaxprune::pruners::{
    hard_threshold, lipschitz_estimate, prox_group_l0, prox_group_lasso, soft_threshold, Algorithm,
    GroupProx, Hyper, PrunerState,
};
use relaxprune::rng::seeded;
use relaxprune::tensor::Tensor;

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with tiny gradients compared absolutely.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

pub type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Worst relative error over all inputs between reverse-mode gradients of
/// the scalar built by `graph` and central differences.
pub fn check_graph(inputs: &[Tensor], graph: &Graph<'_>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = graph(&mut tape, &vars);
    assert!(tape.value(out).is_scalar());
    let grads = tape.backward(out).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let v: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = graph(&mut t, &v);
        t.value(o).item()
    };
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        let mut numeric = vec![0.0; x.len()];
        let mut xs = inputs.to_vec();
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[k] = orig - FD_STEP;
            let down = eval(&xs);
            xs[i].data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Reduces a node to a scalar through a fixed random weighting.
pub fn project(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = tape.value(v).shape().to_vec();
    let r = tape.constant(Tensor::uniform(&shape, 1.0, &mut seeded(seed)));
    let m = tape.mul(v, r).unwrap();
    tape.sum(m)
}

/// Uniform entries with magnitude in `[0.1, 1]`, away from the ReLU kink.
pub fn away_from_zero<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Per-op finite-difference errors for one random instance.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = seeded(seed);
    let mut dim = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let (m, k, n) = (dim(1, 4), dim(1, 4), dim(1, 4));
    let (b, c, h, w) = (dim(1, 2), dim(1, 3), dim(3, 5), dim(3, 5));
    let (co, kh, kw) = (dim(1, 3), dim(1, 3), dim(1, 3));
    let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
    let mut rng = seeded(seed ^ 0x5eed);
    let mut u = |shape: &[usize]| Tensor::uniform(shape, 1.0, &mut rng);
    let mut out = Vec::new();
    let p = seed;

    let ab = [u(&[m, k]), u(&[k, n])];
    out.push((
        "matmul",
        check_graph(&ab, &|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    let ab = [u(&[m, k]), u(&[n, k])];
    out.push((
        "matmul_nt",
        check_graph(&ab, &|t, v| {
            let y = t.matmul_nt(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    let xy = [u(&[m, n]), u(&[m, n])];
    out.push((
        "add",
        check_graph(&xy, &|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    out.push((
        "sub",
        check_graph(&xy, &|t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    out.push((
        "mul",
        check_graph(&xy, &|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    let s = (seed % 7) as f64 - 3.3;
    out.push((
        "scale",
        check_graph(&xy[..1], &|t, v| {
            let y = t.scale(v[0], s);
            project(t, y, p)
        }),
    ));
    let mut krng = seeded(seed ^ 0xabc);
    let kinkless = [away_from_zero(&[m, n], &mut krng)];
    out.push((
        "relu",
        check_graph(&kinkless, &|t, v| {
            let y = t.relu(v[0]);
            project(t, y, p)
        }),
    ));
    out.push((
        "tanh",
        check_graph(&xy[..1], &|t, v| {
            let y = t.tanh(v[0]);
            project(t, y, p)
        }),
    ));
    let xb = [u(&[m, n]), u(&[n])];
    out.push((
        "add_row_bias",
        check_graph(&xb, &|t, v| {
            let y = t.add_row_bias(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    let xc = [u(&[b, c, h, w]), u(&[c])];
    out.push((
        "add_channel_bias",
        check_graph(&xc, &|t, v| {
            let y = t.add_channel_bias(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    let xk = [u(&[b, c, h, w]), u(&[co, c, kh, kw])];
    out.push((
        "conv2d",
        check_graph(&xk, &|t, v| {
            let y = t.conv2d(v[0], v[1]).unwrap();
            project(t, y, p)
        }),
    ));
    let x4 = [u(&[b, c, h, w])];
    out.push((
        "reshape",
        check_graph(&x4, &|t, v| {
            let y = t.reshape(v[0], &[b, c * h * w]).unwrap();
            project(t, y, p)
        }),
    ));
    out.push((
        "sum",
        check_graph(&x4, &|t, v| {
            let y = t.tanh(v[0]);
            t.sum(y)
        }),
    ));
    out.push((
        "mean_over_batch",
        check_graph(&x4, &|t, v| {
            let y = t.mean_over_batch(v[0]).unwrap();
            project(t, y, p)
        }),
    ));
    let three = [u(&[m, n]), u(&[m, n]), u(&[m, n])];
    out.push((
        "average",
        check_graph(&three, &|t, v| {
            let y = t.average(v).unwrap();
            project(t, y, p)
        }),
    ));
    let logits = [u(&[m, n]).map(|x| 3.0 * x)];
    out.push((
        "softmax_cross_entropy",
        check_graph(&logits, &|t, v| {
            t.softmax_cross_entropy(v[0], &labels).unwrap()
        }),
    ));
    out.push((
        "gaussian_noise",
        check_graph(&xy[..1], &|t, v| {
            let noise = t.gaussian_noise(&[m, n], 0.3, &mut seeded(p)).unwrap();
            let y = t.add(v[0], noise).unwrap();
            let y = t.tanh(y);
            project(t, y, p)
        }),
    ));
    out
}

/// A conv net with tanh activations: smooth, so finite differences never
/// straddle a kink.
pub fn smooth_conv_model(seed: u64) -> Model {
    let mut rng = seeded(seed);
    let mut params = Vec::new();
    let mut add = |name: &str, shape: &[usize]| {
        params.push(Param {
            name: name.into(),
            value: Tensor::uniform(shape, 0.5, &mut rng),
        });
        params.len() - 1
    };
    let (w0, b0) = (add("c0.w", &[2, 2, 2, 2]), add("c0.b", &[2]));
    let (w1, b1) = (add("fc.w", &[3, 2 * 3 * 3]), add("fc.b", &[3]));
    Model::from_parts(
        model::Family::Conv,
        vec![2, 4, 4],
        3,
        vec![vec![
            Layer::Conv {
                weight: w0,
                bias: b0,
            },
            Layer::Act(Activation::Tanh),
            Layer::Flatten,
            Layer::Dense {
                weight: w1,
                bias: b1,
            },
        ]],
        params,
        0.0,
        false,
        false,
    )
    .unwrap()
}

/// Whole-model check: parameter gradients of the mean cross-entropy
/// against central differences, for an MLP, a conv net and a noisy
/// residual ensemble (noise replayed from the same seed).
pub fn model_error(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let (m, x) = match seed % 3 {
        0 => (
            model::build_mlp(&[3, 4, 3], Activation::Tanh, &mut rng).unwrap(),
            Tensor::uniform(&[5, 3], 1.0, &mut rng),
        ),
        1 => (
            smooth_conv_model(seed),
            Tensor::uniform(&[3, 2, 4, 4], 1.0, &mut rng),
        ),
        _ => {
            let spec = ResidualSpec {
                input_dim: 3,
                width: 4,
                blocks: 2,
                classes: 3,
                activation: Activation::Tanh,
            };
            (
                model::build_residual_ensemble(2, &spec, 0.1, &mut rng).unwrap(),
                Tensor::uniform(&[4, 3], 1.0, &mut rng),
            )
        }
    };
    let batch = x.shape()[0];
    let labels: Vec<usize> = (0..batch).map(|i| (i + seed as usize) % 3).collect();
    let noise_seed = seed.wrapping_mul(31);
    let (_, grads) = m
        .loss_and_param_grads(&x, &labels, Mode::Train, &mut seeded(noise_seed))
        .unwrap();
    let mut probe = m.clone();
    let mut values = m.param_values();
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let mut numeric = vec![0.0; g.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = values[i].data()[k];
            let mut at = |v: f64| {
                values[i].data_mut()[k] = v;
                probe.set_param_values(&values).unwrap();
                probe
                    .loss(&x, &labels, Mode::Train, &mut seeded(noise_seed))
                    .unwrap()
            };
            let up = at(orig + FD_STEP);
            let down = at(orig - FD_STEP);
            values[i].data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(g.data(), &numeric));
    }
    worst
}

// ---------------------------------------------------------------------------
// proximal oracles

/// Candidate-set minimizer of `λ·1[u≠0] + ½(u − w)²` with threshold
/// `a = √(2λ)`; ties go to zero.
pub fn hard_oracle(w: f64, a: f64) -> f64 {
    let lam = 0.5 * a * a;
    let keep = lam;
    let kill = 0.5 * w * w;
    if kill <= keep {
        0.0
    } else {
        w
    }
}

/// Minimizer of `t|u| + ½(u − w)²` among the stationary candidates.
pub fn soft_oracle(w: f64, t: f64) -> f64 {
    let obj = |u: f64| t * u.abs() + 0.5 * (u - w) * (u - w);
    [0.0, w - t, w + t]
        .into_iter()
        .filter(|&u| u == 0.0 || (u > 0.0 && u == w - t) || (u < 0.0 && u == w + t))
        .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
        .unwrap()
}

/// Minimizer of `λ‖u‖ + ½‖u − g‖²` by Newton iteration on the radius of `u`
/// along `g` (the objective is rotation invariant, so the minimizer is a
/// nonnegative multiple of `g`).
pub fn group_lasso_oracle(g: &[f64], lam: f64) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; g.len()];
    }
    // φ(s) = λ·s + ½(s − ‖g‖)² on s ≥ 0; φ'(s) = λ + s − ‖g‖, φ'' = 1
    let mut s = norm;
    for _ in 0..50 {
        let d1 = lam + s - norm;
        s = (s - d1).max(0.0);
    }
    g.iter().map(|v| v * s / norm).collect()
}

/// Two-candidate minimizer of `λ·1[u≠0] + ½‖u − g‖²`; ties go to zero.
pub fn group_l0_oracle(g: &[f64], lam: f64) -> Vec<f64> {
    let kill = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
    if kill <= lam {
        vec![0.0; g.len()]
    } else {
        g.to_vec()
    }
}

/// Counts of mismatches for each operator on `n` random instances, and the
/// worst group-lasso deviation.
pub struct ProxReport {
    pub hard_mismatch: usize,
    pub soft_mismatch: usize,
    pub gl_worst: f64,
    pub gl0_mismatch: usize,
}

pub fn prox_oracle_sweep(n: usize, seed: u64) -> ProxReport {
    let mut rng = seeded(seed);
    let mut r = ProxReport {
        hard_mismatch: 0,
        soft_mismatch: 0,
        gl_worst: 0.0,
        gl0_mismatch: 0,
    };
    for _ in 0..n {
        let len = rng.gen_range(1..=8);
        let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
        let t = rng.gen_range(0.0..scale);
        let wt = Tensor::from_vec(w.clone());

        let h = hard_threshold(&wt, t).unwrap();
        if h.data()
            .iter()
            .zip(&w)
            .any(|(&o, &x)| o != hard_oracle(x, t))
        {
            r.hard_mismatch += 1;
        }
        let s = soft_threshold(&wt, t).unwrap();
        if s.data()
            .iter()
            .zip(&w)
            .any(|(&o, &x)| (o - soft_oracle(x, t)).abs() > 1e-12 * (1.0 + x.abs()))
        {
            r.soft_mismatch += 1;
        }
        let gl = prox_group_lasso(&w, t).unwrap();
        let want = group_lasso_oracle(&w, t);
        let dev = gl
            .iter()
            .zip(&want)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        r.gl_worst = r.gl_worst.max(dev);
        let lam = 0.5 * t * t;
        if prox_group_l0(&w, lam).unwrap() != group_l0_oracle(&w, lam) {
            r.gl0_mismatch += 1;
        }
    }
    r
}

// ---------------------------------------------------------------------------
// smooth objectives for the descent property

pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn grad(&self, w: &[f64]) -> Vec<f64>;
    fn start(&self) -> Vec<f64>;
}

/// `½ wᵀAw − bᵀw` with `A = MᵀM/d + μI`.
pub struct Quadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w0: Vec<f64>,
}

impl Quadratic {
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let a = m.transpose() * &m / d as f64 + DMatrix::identity(d, d) * 0.05;
        let b = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let w0 = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Quadratic { a, b, w0 }
    }

    /// Largest eigenvalue of `A`, the exact gradient Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max)
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        0.5 * w.dot(&(&self.a * &w)) - self.b.dot(&w)
    }
    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(w);
        (&self.a * w - &self.b).iter().cloned().collect()
    }
    fn start(&self) -> Vec<f64> {
        self.w0.clone()
    }
}

/// Mean squared error of a one-hidden-layer tanh network
/// `x ↦ vᵀ tanh(Wx + c) + d`; parameters packed as `[W, c, v, d]`.
pub struct MlpRegression {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub hidden: usize,
    pub w0: Vec<f64>,
}

impl MlpRegression {
    pub fn random(n: usize, inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..inputs).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| (r.iter().sum::<f64>()).sin() + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        let dim = hidden * inputs + 2 * hidden + 1;
        let w0 = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        MlpRegression { x, y, hidden, w0 }
    }

    fn inputs(&self) -> usize {
        self.x[0].len()
    }

    /// Residuals and hidden activations for every example.
    fn forward(&self, p: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (h, k) = (self.hidden, self.inputs());
        let (wm, rest) = p.split_at(h * k);
        let (c, rest) = rest.split_at(h);
        let (v, d) = rest.split_at(h);
        let mut res = Vec::with_capacity(self.y.len());
        let mut acts = Vec::with_capacity(self.y.len());
        for (xi, yi) in self.x.iter().zip(&self.y) {
            let a: Vec<f64> = (0..h)
                .map(|j| {
                    let z: f64 = (0..k).map(|q| wm[j * k + q] * xi[q]).sum::<f64>() + c[j];
                    z.tanh()
                })
                .collect();
            let out: f64 = a.iter().zip(v).map(|(a, v)| a * v).sum::<f64>() + d[0];
            res.push(out - yi);
            acts.push(a);
        }
        (res, acts)
    }
}

impl Objective for MlpRegression {
    fn dim(&self) -> usize {
        self.w0.len()
    }
    fn value(&self, p: &[f64]) -> f64 {
        let (res, _) = self.forward(p);
        0.5 * res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64
    }
    fn grad(&self, p: &[f64]) -> Vec<f64> {
        let (h, k) = (self.hidden, self.inputs());
        let v = &p[h * k + h..h * k + 2 * h];
        let (res, acts) = self.forward(p);
        let n = res.len() as f64;
        let mut g = vec![0.0; p.len()];
        for ((r, a), xi) in res.iter().zip(&acts).zip(&self.x) {
            let r = r / n;
            for j in 0..h {
                let dz = r * v[j] * (1.0 - a[j] * a[j]);
                for q in 0..k {
                    g[j * k + q] += dz * xi[q];
                }
                g[h * k + j] += dz;
                g[h * k + h + j] += r * a[j];
            }
            g[h * k + 2 * h] += r;
        }
        g
    }
    fn start(&self) -> Vec<f64> {
        self.w0.clone()
    }
}

/// Mean logistic loss `log(1 + exp(−y·xᵀw))` with labels in {−1, 1}.
pub struct Logistic {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub w0: Vec<f64>,
}

impl Logistic {
    pub fn random(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| {
                let s: f64 = r.iter().zip(&truth).map(|(a, b)| a * b).sum();
                if s + 0.3 * rng.gen_range(-1.0..1.0) >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let w0 = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Logistic { x, y, w0 }
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.w0.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        self.x
            .iter()
            .zip(&self.y)
            .map(|(xi, yi)| {
                let m = -yi * xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                // log(1 + e^m) without overflow
                m.max(0.0) + (-m.abs()).exp().ln_1p()
            })
            .sum::<f64>()
            / n
    }
    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let n = self.y.len() as f64;
        let mut g = vec![0.0; w.len()];
        for (xi, yi) in self.x.iter().zip(&self.y) {
            let m = -yi * xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            let s = 1.0 / (1.0 + (-m).exp());
            for (gq, xq) in g.iter_mut().zip(xi) {
                *gq -= s * yi * xq / n;
            }
        }
        g
    }
    fn start(&self) -> Vec<f64> {
        self.w0.clone()
    }
}

/// `f(w) + λ·#{u ≠ 0} + (β/2)‖w − u‖²`, computed directly.
pub fn rvsm_lagrangian(f: f64, w: &[f64], u: &[f64], lambda: f64, beta: f64) -> f64 {
    let nnz = u.iter().filter(|v| **v != 0.0).count() as f64;
    let gap: f64 = w.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    f + lambda * nnz + 0.5 * beta * gap
}

/// Runs RVSM with `η = 1/(β + L)` and returns the Lagrangian after every
/// step (the first entry is the starting point).
pub fn rvsm_trajectory(
    obj: &dyn Objective,
    lipschitz: f64,
    beta: f64,
    lambda: f64,
    steps: usize,
) -> Vec<f64> {
    let hyper = Hyper {
        beta,
        lambda,
        eta: 1.0 / (beta + lipschitz),
        ..Hyper::default()
    };
    let mut state = PrunerState::new(
        Algorithm::Rvsm,
        hyper,
        GroupProx::GroupLasso,
        vec![Tensor::from_vec(obj.start())],
        Vec::new(),
    )
    .unwrap();
    let mut hist = Vec::with_capacity(steps + 1);
    let lag = |s: &PrunerState| {
        let w = s.w[0].data();
        rvsm_lagrangian(obj.value(w), w, s.u[0].data(), lambda, beta)
    };
    hist.push(lag(&state));
    for _ in 0..steps {
        let g = Tensor::from_vec(obj.grad(state.w[0].data()));
        state.step(&[g]).unwrap();
        hist.push(lag(&state));
    }
    hist
}

/// Sampled Lipschitz constant of `obj`'s gradient around its start point.
pub fn estimate_lipschitz(obj: &dyn Objective, seed: u64) -> f64 {
    lipschitz_estimate(
        |w: &[f64]| Ok(obj.grad(w)),
        &obj.start(),
        200,
        1.0,
        &mut seeded(seed),
    )
    .unwrap()
}

/// Largest single-step rise `hist[t+1] − hist[t]`.
pub fn worst_rise(hist: &[f64]) -> f64 {
    hist.windows(2)
        .map(|p| p[1] - p[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// C1 body: 3 objectives × `seeds` seeds, returns the worst rise found.
pub fn descent_sweep(seeds: u64, steps: usize) -> f64 {
    let (beta, lambda) = (1.0, 1e-3);
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..seeds {
        let q = Quadratic::random(8, seed);
        let l = q.lipschitz();
        worst = worst.max(worst_rise(&rvsm_trajectory(&q, l, beta, lambda, steps)));

        let m = MlpRegression::random(30, 3, 5, seed);
        let l = estimate_lipschitz(&m, seed);
        worst = worst.max(worst_rise(&rvsm_trajectory(&m, l, beta, lambda, steps)));

        let g = Logistic::random(40, 5, seed);
        let l = estimate_lipschitz(&g, seed);
        worst = worst.max(worst_rise(&rvsm_trajectory(&g, l, beta, lambda, steps)));
    }
    worst
}

// ---------------------------------------------------------------------------
// attacks

/// Random MLP and batch for attack property checks.
pub fn attack_fixture(seed: u64) -> (Model, Tensor, Vec<usize>) {
    let mut rng = seeded(seed);
    let dim = rng.gen_range(2..6);
    let classes = rng.gen_range(2..5);
    let m = model::build_mlp(&[dim, 6, classes], Activation::Relu, &mut rng).unwrap();
    let batch = rng.gen_range(1..5);
    let x = Tensor::new(
        vec![batch, dim],
        (0..batch * dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let y = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    (m, x, y)
}

/// Largest violation of the ε-ball and of the clamp range.
pub fn violations(x: &Tensor, adv: &Tensor, eps: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let mut ball: f64 = 0.0;
    let mut clamp: f64 = 0.0;
    for (a, o) in adv.data().iter().zip(x.data()) {
        ball = ball.max((a - o).abs() - eps);
        clamp = clamp.max(lo - a).max(a - hi);
    }
    (ball, clamp)
}

pub fn conv_fixture(seed: u64) -> Model {
    model::build_conv(
        &ConvSpec {
            input_shape: [1, 5, 5],
            channels: vec![2],
            kernel: 3,
            classes: 3,
            activation: Activation::Relu,
        },
        &mut seeded(seed),
    )
    .unwrap()
}
