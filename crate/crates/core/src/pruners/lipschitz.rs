use rand::Rng;

use crate::error::{Error, Result};

/// Empirical gradient-Lipschitz constant around `w`.
///
/// Draws `n_probes` pairs uniformly from the box of half-width `radius`
/// around `w` and returns the largest `‖∇f(w₁) − ∇f(w₂)‖ / ‖w₁ − w₂‖`.
/// This is a lower bound on the true local constant.
pub fn lipschitz_estimate<G, R>(
    mut grad: G,
    w: &[f64],
    n_probes: usize,
    radius: f64,
    rng: &mut R,
) -> Result<f64>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if n_probes == 0 {
        return Err(Error::Parameter("need at least one probe pair".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Parameter(format!(
            "probe radius must be > 0, got {radius}"
        )));
    }
    let mut best: Option<f64> = None;
    for _ in 0..n_probes {
        let w1: Vec<f64> = w
            .iter()
            .map(|v| v + rng.gen_range(-radius..=radius))
            .collect();
        let w2: Vec<f64> = w
            .iter()
            .map(|v| v + rng.gen_range(-radius..=radius))
            .collect();
        let dist = distance(&w1, &w2);
        if dist == 0.0 {
            continue;
        }
        let g1 = grad(&w1)?;
        let g2 = grad(&w2)?;
        if g1.len() != w.len() || g2.len() != w.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for {} coordinates",
                g1.len().max(g2.len()),
                w.len()
            )));
        }
        let ratio = distance(&g1, &g2) / dist;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::Estimation("every probe pair coincided".into()))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
