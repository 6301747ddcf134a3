//! Splitting-based sparsifiers that run inside back-propagation.
//!
//! All three keep the trained weights `w` next to an auxiliary copy `u`:
//!
//! * RVSM: gradient step on `f(w) + λ‖u‖₀ + (β/2)‖w − u‖²` in `w`, then
//!   `u = H_{√(2λ/β)}(w)`.
//! * RGSM: the same splitting with `λ₂‖w‖_GL` added to the smooth part and a
//!   per-group proximal map with parameter `λ₁` for `u`.
//! * ADMM: ℓ1 auxiliary penalty plus the dual variable `z`.
//!
//! `u` is always computed from the freshly updated `w`, so each step first
//! decreases the relaxed Lagrangian in `w` and then minimizes it exactly in
//! `u`.

mod lipschitz;
mod prox;

pub use lipschitz::lipschitz_estimate;
pub use prox::{
    check_disjoint, group_l0_penalty, group_lasso_penalty, group_norm, hard_threshold, l0_penalty,
    l0_threshold, l1_penalty, prox_group_l0, prox_group_lasso, soft_threshold, GroupView,
};

use crate::error::{Error, Result};
use crate::model::{GroupLabel, Model};
use crate::tensor::Tensor;

use prox::{
    hard_threshold_scalar, prox_group_l0_in_place, prox_group_lasso_in_place, soft_threshold_scalar,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    None,
    Rvsm,
    Rgsm,
    Admm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::None => "none",
            Algorithm::Rvsm => "rvsm",
            Algorithm::Rgsm => "rgsm",
            Algorithm::Admm => "admm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Algorithm::None),
            "rvsm" => Ok(Algorithm::Rvsm),
            "rgsm" => Ok(Algorithm::Rgsm),
            "admm" => Ok(Algorithm::Admm),
            other => Err(Error::Validation(format!("unknown pruner '{other}'"))),
        }
    }
}

/// Which proximal map RGSM applies per group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupProx {
    GroupLasso,
    GroupL0,
}

impl GroupProx {
    pub fn name(self) -> &'static str {
        match self {
            GroupProx::GroupLasso => "group_lasso",
            GroupProx::GroupL0 => "group_l0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "group_lasso" => Ok(GroupProx::GroupLasso),
            "group_l0" => Ok(GroupProx::GroupL0),
            other => Err(Error::Validation(format!("unknown group prox '{other}'"))),
        }
    }

    fn apply(self, g: &mut [f64], lam: f64) {
        match self {
            GroupProx::GroupLasso => prox_group_lasso_in_place(g, lam),
            GroupProx::GroupL0 => prox_group_l0_in_place(g, lam),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub beta: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            beta: 1.0,
            lambda: 1e-6,
            lambda1: 5e-2,
            lambda2: 1e-5,
            eta: 0.1,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Parameter(format!(
                "step size must be > 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Penalty used when evaluating a relaxed Lagrangian.
#[derive(Clone, Copy, Debug)]
pub enum Penalty<'a> {
    L0,
    L1,
    GroupLasso(&'a [GroupLabel]),
    GroupL0(&'a [GroupLabel]),
}

/// `f + λ·P(u) + (β/2)‖w − u‖²`.
pub fn lagrangian_value(
    f_val: f64,
    w: &[Tensor],
    u: &[Tensor],
    lambda: f64,
    beta: f64,
    penalty: Penalty<'_>,
) -> Result<f64> {
    if w.len() != u.len() {
        return Err(Error::Dimension(format!(
            "{} weight tensors against {} auxiliary tensors",
            w.len(),
            u.len()
        )));
    }
    let mut gap = 0.0;
    for (a, b) in w.iter().zip(u) {
        a.same_shape(b)?;
        gap += a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    let p = match penalty {
        Penalty::L0 => l0_penalty(u),
        Penalty::L1 => l1_penalty(u),
        Penalty::GroupLasso(groups) => group_lasso_penalty(u, groups)?,
        Penalty::GroupL0(groups) => group_l0_penalty(u, groups)?,
    };
    Ok(f_val + lambda * p + 0.5 * beta * gap)
}

/// Indices `t` where `history[t+1] > history[t] + slack`.
pub fn descent_violations(history: &[f64], slack: f64) -> Vec<usize> {
    history
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] + slack)
        .map(|(t, _)| t)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrunerState {
    pub algorithm: Algorithm,
    pub hyper: Hyper,
    pub prox: GroupProx,
    pub w: Vec<Tensor>,
    pub u: Vec<Tensor>,
    pub z: Option<Vec<Tensor>>,
    pub groups: Vec<GroupLabel>,
    pub history: Vec<f64>,
}

impl PrunerState {
    /// Starts from weights `w`, with `u` set to the algorithm's proximal
    /// image of `w` and, for ADMM, `z = 0`.
    pub fn new(
        algorithm: Algorithm,
        hyper: Hyper,
        prox: GroupProx,
        w: Vec<Tensor>,
        groups: Vec<GroupLabel>,
    ) -> Result<Self> {
        hyper.validate()?;
        if algorithm == Algorithm::Admm && hyper.beta == 0.0 {
            return Err(Error::Parameter(
                "ADMM needs beta > 0 for the dual update".into(),
            ));
        }
        check_disjoint(&w, &groups)?;
        let z = (algorithm == Algorithm::Admm)
            .then(|| w.iter().map(|t| Tensor::zeros(t.shape())).collect());
        let mut state = PrunerState {
            algorithm,
            hyper,
            prox,
            u: w.clone(),
            w,
            z,
            groups,
            history: Vec::new(),
        };
        state.u = state.prox_image()?;
        Ok(state)
    }

    pub fn for_model(
        algorithm: Algorithm,
        hyper: Hyper,
        prox: GroupProx,
        model: &Model,
    ) -> Result<Self> {
        Self::new(
            algorithm,
            hyper,
            prox,
            model.param_values(),
            model.groups().to_vec(),
        )
    }

    /// The value `u` must hold for the current `w` (and `z`).
    pub fn prox_image(&self) -> Result<Vec<Tensor>> {
        let h = &self.hyper;
        match self.algorithm {
            Algorithm::None => Ok(self.w.clone()),
            Algorithm::Rvsm => {
                let a = l0_threshold(h.lambda, h.beta);
                self.w.iter().map(|t| hard_threshold(t, a)).collect()
            }
            Algorithm::Rgsm => {
                let mut u = self.w.clone();
                for g in &self.groups {
                    self.prox
                        .apply(&mut u[g.param].data_mut()[g.range.clone()], h.lambda1);
                }
                Ok(u)
            }
            Algorithm::Admm => {
                let z = self
                    .z
                    .as_ref()
                    .ok_or_else(|| Error::Contract("ADMM state without dual variables".into()))?;
                let t = h.lambda / h.beta;
                self.w
                    .iter()
                    .zip(z)
                    .map(|(w, z)| w.zip_map(z, |wv, zv| soft_threshold_scalar(wv + zv / h.beta, t)))
                    .collect()
            }
        }
    }

    /// Whether `u` equals the proximal image of the reference weights.
    pub fn is_consistent(&self) -> bool {
        self.prox_image().map(|u| u == self.u).unwrap_or(false)
    }

    fn check_grads(&self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.w.len() {
            return Err(Error::Contract(format!(
                "gradient map has {} entries for {} parameters",
                grads.len(),
                self.w.len()
            )));
        }
        for (i, (g, w)) in grads.iter().zip(&self.w).enumerate() {
            g.same_shape(w).map_err(|_| {
                Error::Contract(format!("gradient for parameter {i} has wrong shape"))
            })?;
        }
        Ok(())
    }

    fn expect(&self, algorithm: Algorithm) -> Result<()> {
        if self.algorithm != algorithm {
            return Err(Error::Contract(format!(
                "{} step on a {} state",
                algorithm.name(),
                self.algorithm.name()
            )));
        }
        Ok(())
    }

    /// Dispatches to the step of the state's algorithm.
    pub fn step(&mut self, grads: &[Tensor]) -> Result<()> {
        match self.algorithm {
            Algorithm::None => self.sgd_step(grads),
            Algorithm::Rvsm => self.rvsm_step(grads),
            Algorithm::Rgsm => self.rgsm_step(grads),
            Algorithm::Admm => self.admm_step(grads),
        }
    }

    fn sgd_step(&mut self, grads: &[Tensor]) -> Result<()> {
        self.expect(Algorithm::None)?;
        self.check_grads(grads)?;
        let eta = self.hyper.eta;
        for (w, g) in self.w.iter_mut().zip(grads) {
            for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                *wv -= eta * gv;
            }
        }
        self.u = self.w.clone();
        Ok(())
    }

    /// `w ← w − η∇f − ηβ(w − u)`, then `u ← H_{√(2λ/β)}(w)`.
    pub fn rvsm_step(&mut self, grads: &[Tensor]) -> Result<()> {
        self.expect(Algorithm::Rvsm)?;
        self.check_grads(grads)?;
        let Hyper {
            eta, beta, lambda, ..
        } = self.hyper;
        let a = l0_threshold(lambda, beta);
        for ((w, u), g) in self.w.iter_mut().zip(&mut self.u).zip(grads) {
            for ((wv, uv), gv) in w.data_mut().iter_mut().zip(u.data_mut()).zip(g.data()) {
                *wv = *wv - eta * gv - eta * beta * (*wv - *uv);
                *uv = hard_threshold_scalar(*wv, a);
            }
        }
        Ok(())
    }

    /// RVSM-style step on `f + λ₂‖w‖_GL`, then `u_g ← Prox_{λ₁}(w_g)` per
    /// group; ungrouped coordinates copy `w`.
    pub fn rgsm_step(&mut self, grads: &[Tensor]) -> Result<()> {
        self.expect(Algorithm::Rgsm)?;
        self.check_grads(grads)?;
        let Hyper {
            eta,
            beta,
            lambda1,
            lambda2,
            ..
        } = self.hyper;
        let mut effective = grads.to_vec();
        if lambda2 != 0.0 {
            for g in &self.groups {
                let wg = &self.w[g.param].data()[g.range.clone()];
                let norm = group_norm(wg);
                // zero group: 0 is a valid subgradient and keeps the group dead
                if norm == 0.0 {
                    continue;
                }
                let eg = &mut effective[g.param].data_mut()[g.range.clone()];
                for (e, wv) in eg.iter_mut().zip(wg) {
                    *e += lambda2 * wv / norm;
                }
            }
        }
        for ((w, u), g) in self.w.iter_mut().zip(&self.u).zip(&effective) {
            for ((wv, uv), gv) in w.data_mut().iter_mut().zip(u.data()).zip(g.data()) {
                *wv = *wv - eta * gv - eta * beta * (*wv - *uv);
            }
        }
        let mut u = self.w.clone();
        for g in &self.groups {
            self.prox
                .apply(&mut u[g.param].data_mut()[g.range.clone()], lambda1);
        }
        self.u = u;
        Ok(())
    }

    /// Linearized ADMM: gradient step in `w`, exact ℓ1 step in `u`, dual ascent in `z`.
    pub fn admm_step(&mut self, grads: &[Tensor]) -> Result<()> {
        self.expect(Algorithm::Admm)?;
        self.check_grads(grads)?;
        let Hyper {
            eta, beta, lambda, ..
        } = self.hyper;
        if beta == 0.0 {
            return Err(Error::Parameter(
                "ADMM needs beta > 0 for the dual update".into(),
            ));
        }
        let z = self
            .z
            .as_mut()
            .ok_or_else(|| Error::Contract("ADMM state without dual variables".into()))?;
        let t = lambda / beta;
        for (((w, u), z), g) in self.w.iter_mut().zip(&mut self.u).zip(z).zip(grads) {
            let it = w
                .data_mut()
                .iter_mut()
                .zip(u.data_mut())
                .zip(z.data_mut())
                .zip(g.data());
            for (((wv, uv), zv), gv) in it {
                *wv -= eta * (gv + *zv + beta * (*wv - *uv));
                *uv = soft_threshold_scalar(*wv + *zv / beta, t);
                *zv += beta * (*wv - *uv);
            }
        }
        Ok(())
    }

    /// Relaxed Lagrangian of the current `(w, u)` given `f(w)`.
    ///
    /// RGSM is monitored as `f + λ₂‖w‖_GL + βλ₁·P(u) + (β/2)‖w − u‖²`, for
    /// which the per-group prox is the exact `u`-minimizer. ADMM adds the
    /// dual term `⟨z, w − u⟩`.
    pub fn lagrangian(&self, f_val: f64) -> Result<f64> {
        let h = &self.hyper;
        match self.algorithm {
            Algorithm::None => Ok(f_val),
            Algorithm::Rvsm => {
                lagrangian_value(f_val, &self.w, &self.u, h.lambda, h.beta, Penalty::L0)
            }
            Algorithm::Rgsm => {
                let smooth = f_val + h.lambda2 * group_lasso_penalty(&self.w, &self.groups)?;
                let penalty = match self.prox {
                    GroupProx::GroupLasso => Penalty::GroupLasso(&self.groups),
                    GroupProx::GroupL0 => Penalty::GroupL0(&self.groups),
                };
                lagrangian_value(
                    smooth,
                    &self.w,
                    &self.u,
                    h.beta * h.lambda1,
                    h.beta,
                    penalty,
                )
            }
            Algorithm::Admm => {
                let base =
                    lagrangian_value(f_val, &self.w, &self.u, h.lambda, h.beta, Penalty::L1)?;
                let z = self.z.as_ref().expect("ADMM state carries z");
                let mut dual = 0.0;
                for ((w, u), z) in self.w.iter().zip(&self.u).zip(z) {
                    for ((wv, uv), zv) in w.data().iter().zip(u.data()).zip(z.data()) {
                        dual += zv * (wv - uv);
                    }
                }
                Ok(base + dual)
            }
        }
    }

    pub fn record(&mut self, f_val: f64) -> Result<f64> {
        let v = self.lagrangian(f_val)?;
        self.history.push(v);
        Ok(v)
    }
}

/// Writes `u` into the model for validation and restarts the splitting
/// from it (`w ← u`, then `u` recomputed from the new `w`).
pub fn finalize_epoch(state: &mut PrunerState, model: &mut Model) -> Result<()> {
    model.set_param_values(&state.u)?;
    if state.algorithm != Algorithm::None {
        state.w = state.u.clone();
        state.u = state.prox_image()?;
    }
    Ok(())
}
