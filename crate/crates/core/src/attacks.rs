//! Untargeted ℓ∞ gradient-sign attacks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackFamily {
    None,
    Fgsm,
    Ifgsm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_init: bool,
    pub clamp: (f64, f64),
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            family: AttackFamily::None,
            epsilon: 0.0,
            alpha: 0.0,
            steps: 1,
            random_init: false,
            clamp: (0.0, 1.0),
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        AttackSpec {
            family: AttackFamily::Fgsm,
            epsilon,
            ..Self::none()
        }
    }

    pub fn ifgsm(epsilon: f64, alpha: f64, steps: usize, random_init: bool) -> Self {
        AttackSpec {
            family: AttackFamily::Ifgsm,
            epsilon,
            alpha,
            steps,
            random_init,
            clamp: (0.0, 1.0),
        }
    }

    pub fn with_clamp(mut self, lo: f64, hi: f64) -> Self {
        self.clamp = (lo, hi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.epsilon) {
            return Err(Error::Parameter(format!(
                "attack epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !finite_nonneg(self.alpha) {
            return Err(Error::Parameter(format!(
                "attack step size must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.family == AttackFamily::Ifgsm && self.steps == 0 {
            return Err(Error::Parameter("ifgsm needs at least one step".into()));
        }
        let (lo, hi) = self.clamp;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Parameter(format!("bad clamp range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Runs the configured attack; `family = none` returns `x` unchanged.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        model: &Model,
        x: &Tensor,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        match self.family {
            AttackFamily::None => Ok(x.clone()),
            AttackFamily::Fgsm => fgsm(model, x, labels, self, mode, rng),
            AttackFamily::Ifgsm => ifgsm(model, x, labels, self, mode, rng),
        }
    }
}

/// Parses numbers written either as decimals or as `a/b` fractions.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::parse(format!("'{s}'"), "expected a number");
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        return Ok(a / b);
    }
    s.parse().map_err(|_| bad())
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.clamp;
        match self.family {
            AttackFamily::None => write!(f, "none"),
            AttackFamily::Fgsm => write!(f, "fgsm:eps={:?},lo={:?},hi={:?}", self.epsilon, lo, hi),
            AttackFamily::Ifgsm => write!(
                f,
                "ifgsm:eps={:?},alpha={:?},steps={},init={},lo={:?},hi={:?}",
                self.epsilon, self.alpha, self.steps, self.random_init, lo, hi
            ),
        }
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// `none`, `fgsm:eps=8/255`, `ifgsm:eps=8/255,alpha=2/255,steps=20,init=false`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = match name {
            "none" => AttackSpec::none(),
            "fgsm" => AttackSpec::fgsm(0.0),
            "ifgsm" | "pgd" => AttackSpec::ifgsm(0.0, 0.0, 1, false),
            other => {
                return Err(Error::parse(
                    format!("attack '{s}'"),
                    format!("unknown attack family '{other}'"),
                ))
            }
        };
        for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::parse(format!("attack '{s}'"), format!("'{kv}' is not key=value"))
            })?;
            match k.trim() {
                "eps" => spec.epsilon = parse_number(v)?,
                "alpha" => spec.alpha = parse_number(v)?,
                "steps" => {
                    spec.steps = v.trim().parse().map_err(|_| {
                        Error::parse(format!("attack '{s}'"), format!("bad step count '{v}'"))
                    })?
                }
                "init" => {
                    spec.random_init = v.trim().parse().map_err(|_| {
                        Error::parse(format!("attack '{s}'"), format!("bad init flag '{v}'"))
                    })?
                }
                "lo" => spec.clamp.0 = parse_number(v)?,
                "hi" => spec.clamp.1 = parse_number(v)?,
                other => {
                    return Err(Error::parse(
                        format!("attack '{s}'"),
                        format!("unknown key '{other}'"),
                    ))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest float `u` with `u - x <= eps` when evaluated in floating point.
fn ball_upper(x: f64, eps: f64) -> f64 {
    let mut u = x + eps;
    while u - x > eps {
        u = u.next_down();
    }
    u
}

fn ball_lower(x: f64, eps: f64) -> f64 {
    let mut l = x - eps;
    while x - l > eps {
        l = l.next_up();
    }
    l
}

/// Projection onto the ε-ball around `origin` intersected with the clamp range.
fn project(v: f64, origin: f64, eps: f64, (lo, hi): (f64, f64)) -> f64 {
    v.clamp(ball_lower(origin, eps), ball_upper(origin, eps))
        .clamp(lo, hi)
}

pub fn fgsm<R: Rng + ?Sized>(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    spec.validate()?;
    if spec.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let (_, grad) = model.loss_and_input_grad(x, labels, mode, rng)?;
    let eps = spec.epsilon;
    let (lo, hi) = spec.clamp;
    grad.zip_map(x, |g, xi| {
        let stepped = match sign(g) {
            s if s > 0.0 => ball_upper(xi, eps),
            s if s < 0.0 => ball_lower(xi, eps),
            _ => xi,
        };
        stepped.clamp(lo, hi)
    })
}

pub fn ifgsm<R: Rng + ?Sized>(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    spec.validate()?;
    let eps = spec.epsilon;
    let mut cur = x.clone();
    if spec.random_init && eps > 0.0 {
        for (c, &xi) in cur.data_mut().iter_mut().zip(x.data()) {
            let delta: f64 = rng.gen_range(-eps..=eps);
            *c = project(xi + delta, xi, eps, spec.clamp);
        }
    }
    for _ in 0..spec.steps {
        let (_, grad) = model.loss_and_input_grad(&cur, labels, mode, rng)?;
        for ((c, &g), &xi) in cur.data_mut().iter_mut().zip(grad.data()).zip(x.data()) {
            *c = project(*c + spec.alpha * sign(g), xi, eps, spec.clamp);
        }
    }
    Ok(cur)
}
