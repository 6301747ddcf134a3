//! Reverse-mode automatic differentiation over a single-use tape.
//!
//! Nodes are appended in evaluation order, so node ids are a topological
//! order of the graph and the backward sweep is a reverse scan.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv2d(Var, Var),
    Reshape(Var),
    Sum(Var),
    MeanOverBatch(Var),
    Average(Vec<Var>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves that were marked as requiring gradients.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Gaussian noise recorded as a constant: nothing flows back to `sigma`.
    pub fn gaussian_noise<R: Rng + ?Sized>(
        &mut self,
        shape: &[usize],
        sigma: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let noise = tensor::gaussian_noise(shape, sigma, rng)?;
        Ok(self.constant(noise))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Matmul(a, b), v, ng))
    }

    /// `a · bᵀ`; used for dense layers with `[out×in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul_nt(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::MatmulNt(a, b), v, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = tensor::scale(self.value(x), s);
        let ng = self.needs(&[x]);
        self.push(Op::Scale(x, s), v, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = tensor::relu(self.value(x));
        let ng = self.needs(&[x]);
        self.push(Op::Relu(x), v, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = tensor::tanh(self.value(x));
        let ng = self.needs(&[x]);
        self.push(Op::Tanh(x), v, ng)
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = tensor::add_row_bias(self.value(x), self.value(bias))?;
        let ng = self.needs(&[x, bias]);
        Ok(self.push(Op::AddRowBias(x, bias), v, ng))
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = tensor::add_channel_bias(self.value(x), self.value(bias))?;
        let ng = self.needs(&[x, bias]);
        Ok(self.push(Op::AddChannelBias(x, bias), v, ng))
    }

    pub fn conv2d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let v = tensor::conv2d(self.value(x), self.value(kernels))?;
        let ng = self.needs(&[x, kernels]);
        Ok(self.push(Op::Conv2d(x, kernels), v, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let ng = self.needs(&[x]);
        Ok(self.push(Op::Reshape(x), v, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(Op::Sum(x), v, ng)
    }

    pub fn mean_over_batch(&mut self, x: Var) -> Result<Var> {
        let v = tensor::mean_over_batch(self.value(x))?;
        let ng = self.needs(&[x]);
        Ok(self.push(Op::MeanOverBatch(x), v, ng))
    }

    /// Arithmetic mean of same-shaped nodes.
    pub fn average(&mut self, xs: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = xs.split_first() else {
            return Err(Error::Parameter("average of zero nodes".into()));
        };
        let mut acc = self.value(first).clone();
        for &x in rest {
            acc.axpy(1.0, self.value(x))?;
        }
        let v = tensor::scale(&acc, 1.0 / xs.len() as f64);
        let ng = self.needs(xs);
        Ok(self.push(Op::Average(xs.to_vec()), v, ng))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let loss = tensor::softmax_cross_entropy(lv, labels)?;
        let probs = tensor::softmax_rows(lv)?;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(Error::Contract(format!("loss node {} not on tape", loss.0)));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));

        let mut nodes = self.nodes;
        for id in (0..=loss.0).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = adj[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let mut send = |target: Var, contribution: Tensor| -> Result<()> {
                if !nodes_need(&nodes, target) {
                    return Ok(());
                }
                accumulate(&mut adj[target.0], contribution)
            };
            match &node.op {
                Op::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes_need(&nodes, *a) {
                        send(*a, tensor::matmul_nt(&g, bv)?)?;
                    }
                    if nodes_need(&nodes, *b) {
                        send(*b, tensor::matmul_tn(av, &g)?)?;
                    }
                }
                Op::MatmulNt(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes_need(&nodes, *a) {
                        send(*a, tensor::matmul(&g, bv)?)?;
                    }
                    if nodes_need(&nodes, *b) {
                        send(*b, tensor::matmul_tn(&g, av)?)?;
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Sub(a, b) => {
                    send(*b, tensor::scale(&g, -1.0))?;
                    send(*a, g)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    send(*a, tensor::mul(&g, bv)?)?;
                    send(*b, tensor::mul(&g, av)?)?;
                }
                Op::Scale(x, s) => send(*x, tensor::scale(&g, *s))?,
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    send(*x, g.zip_map(xv, |gv, v| if v > 0.0 { gv } else { 0.0 })?)?;
                }
                Op::Tanh(x) => {
                    let yv = &node.value;
                    send(*x, g.zip_map(yv, |gv, y| gv * (1.0 - y * y))?)?;
                }
                Op::AddRowBias(x, bias) => {
                    let cols = nodes[bias.0].value.len();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    send(*bias, Tensor::from_vec(gb))?;
                    send(*x, g)?;
                }
                Op::AddChannelBias(x, bias) => {
                    let shape = node.value.shape();
                    let (c, plane) = (shape[1], shape[2] * shape[3]);
                    let mut gb = vec![0.0; c];
                    for (idx, chunk) in g.data().chunks(plane).enumerate() {
                        gb[idx % c] += chunk.iter().sum::<f64>();
                    }
                    send(*bias, Tensor::from_vec(gb))?;
                    send(*x, g)?;
                }
                Op::Conv2d(x, k) => {
                    let (gx, gk) =
                        tensor::conv2d_backward(&nodes[x.0].value, &nodes[k.0].value, &g)?;
                    send(*x, gx)?;
                    send(*k, gk)?;
                }
                Op::Reshape(x) => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    send(*x, g.reshape(&shape)?)?;
                }
                Op::Sum(x) => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    send(*x, Tensor::full(&shape, g.item()))?;
                }
                Op::MeanOverBatch(x) => {
                    let xv = &nodes[x.0].value;
                    let b = xv.shape()[0];
                    let inv = 1.0 / b as f64;
                    let mut data = Vec::with_capacity(xv.len());
                    for _ in 0..b {
                        data.extend(g.data().iter().map(|v| v * inv));
                    }
                    send(*x, Tensor::new(xv.shape().to_vec(), data)?)?;
                }
                Op::Average(xs) => {
                    let share = tensor::scale(&g, 1.0 / xs.len() as f64);
                    for x in xs {
                        send(*x, share.clone())?;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let c = probs.shape()[1];
                    let coeff = g.item() / labels.len() as f64;
                    let mut d = probs.clone();
                    for (row, &label) in d.data_mut().chunks_mut(c).zip(labels) {
                        row[label] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= coeff);
                    }
                    send(*logits, d)?;
                }
            }
            // interior values are no longer needed once their adjoint is spent
            nodes[id].value = Tensor::scalar(0.0);
        }
        // only leaves keep their adjoints
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                adj[id] = None;
            }
        }
        Ok(Gradients { grads: adj })
    }
}

fn nodes_need(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].needs_grad
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.axpy(1.0, &contribution),
        None => {
            *slot = Some(contribution);
            Ok(())
        }
    }
}
