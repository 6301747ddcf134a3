//! Proximal maps and sparsity penalties.
//!
//! Ties at the threshold always resolve to zero.

use crate::error::{Error, Result};
use crate::model::GroupLabel;
use crate::tensor::Tensor;

fn check_threshold(what: &str, a: f64) -> Result<()> {
    if !(a >= 0.0) {
        return Err(Error::Parameter(format!("{what} must be >= 0, got {a}")));
    }
    Ok(())
}

/// Keeps `w_i` when `|w_i| > a`, zeroes it otherwise.
pub fn hard_threshold(w: &Tensor, a: f64) -> Result<Tensor> {
    check_threshold("hard threshold", a)?;
    Ok(w.map(|v| hard_threshold_scalar(v, a)))
}

pub(crate) fn hard_threshold_scalar(v: f64, a: f64) -> f64 {
    if v.abs() > a {
        v
    } else {
        0.0
    }
}

/// `sign(v) · max(|v| − t, 0)`.
pub fn soft_threshold(w: &Tensor, t: f64) -> Result<Tensor> {
    check_threshold("soft threshold", t)?;
    Ok(w.map(|v| soft_threshold_scalar(v, t)))
}

pub(crate) fn soft_threshold_scalar(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Threshold at which `H` solves `min_u λ·1{u≠0} + (β/2)(w−u)²`.
pub fn l0_threshold(lambda: f64, beta: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else if beta == 0.0 {
        f64::INFINITY
    } else {
        (2.0 * lambda / beta).sqrt()
    }
}

/// A contiguous run of coordinates forming one parameter group.
#[derive(Clone, Copy, Debug)]
pub struct GroupView<'a> {
    pub label: &'a GroupLabel,
    pub values: &'a [f64],
}

impl<'a> GroupView<'a> {
    pub fn of(label: &'a GroupLabel, params: &'a [Tensor]) -> Result<Self> {
        let tensor = params.get(label.param).ok_or_else(|| {
            Error::Contract(format!("group refers to missing parameter {}", label.param))
        })?;
        let values = tensor.data().get(label.range.clone()).ok_or_else(|| {
            Error::Contract(format!(
                "group range {:?} outside parameter {} of length {}",
                label.range,
                label.param,
                tensor.len()
            ))
        })?;
        Ok(GroupView { label, values })
    }

    pub fn norm(&self) -> f64 {
        group_norm(self.values)
    }
}

pub fn group_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Block soft-shrinkage: zero when `‖g‖₂ ≤ lam`, else `g·(1 − lam/‖g‖₂)`.
pub fn prox_group_lasso(g: &[f64], lam: f64) -> Result<Vec<f64>> {
    check_threshold("group lasso threshold", lam)?;
    let mut out = g.to_vec();
    prox_group_lasso_in_place(&mut out, lam);
    Ok(out)
}

pub(crate) fn prox_group_lasso_in_place(g: &mut [f64], lam: f64) {
    let norm = group_norm(g);
    if norm <= lam {
        g.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let factor = 1.0 - lam / norm;
        g.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Block hard-threshold: zero when `‖g‖₂ ≤ √(2·lam)`, else unchanged.
pub fn prox_group_l0(g: &[f64], lam: f64) -> Result<Vec<f64>> {
    check_threshold("group l0 threshold", lam)?;
    let mut out = g.to_vec();
    prox_group_l0_in_place(&mut out, lam);
    Ok(out)
}

pub(crate) fn prox_group_l0_in_place(g: &mut [f64], lam: f64) {
    if group_norm(g) <= (2.0 * lam).sqrt() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Fails with a contract error unless the groups are pairwise disjoint.
pub fn check_disjoint(params: &[Tensor], groups: &[GroupLabel]) -> Result<()> {
    let mut owner: Vec<Vec<bool>> = params.iter().map(|p| vec![false; p.len()]).collect();
    for g in groups {
        GroupView::of(g, params)?;
        for i in g.range.clone() {
            if owner[g.param][i] {
                return Err(Error::Contract(format!(
                    "coordinate {i} of parameter {} belongs to more than one group",
                    g.param
                )));
            }
            owner[g.param][i] = true;
        }
    }
    Ok(())
}

/// `Σ_g ‖w_g‖₂`.
pub fn group_lasso_penalty(params: &[Tensor], groups: &[GroupLabel]) -> Result<f64> {
    check_disjoint(params, groups)?;
    groups
        .iter()
        .map(|g| GroupView::of(g, params).map(|v| v.norm()))
        .sum()
}

/// Number of groups with a nonzero entry.
pub fn group_l0_penalty(params: &[Tensor], groups: &[GroupLabel]) -> Result<f64> {
    check_disjoint(params, groups)?;
    let mut count = 0usize;
    for g in groups {
        if GroupView::of(g, params)?.values.iter().any(|&v| v != 0.0) {
            count += 1;
        }
    }
    Ok(count as f64)
}

/// Number of nonzero coordinates.
pub fn l0_penalty(params: &[Tensor]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.data())
        .filter(|&&v| v != 0.0)
        .count() as f64
}

pub fn l1_penalty(params: &[Tensor]) -> f64 {
    params.iter().flat_map(|p| p.data()).map(|v| v.abs()).sum()
}
