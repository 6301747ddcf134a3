//! Sparsity, accuracy and weight-distribution statistics.

use std::thread;

use crate::attacks::AttackSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::pruners::group_norm;
use crate::rng::{stream, Purpose};
use crate::tensor::argmax_rows;

/// Magnitudes at or below this count as exact zeros.
pub const ZERO_TOL: f64 = 1e-15;

/// Examples per attack shard; fixed so results do not depend on thread count.
const SHARD: usize = 128;

/// One epoch of results. Percentages are in `[0, 100]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub sparsity: f64,
    pub channel_sparsity: f64,
    pub lagrangian: f64,
    pub seconds: f64,
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Percentage of parameter coordinates with `|w| ≤ 1e-15`.
pub fn sparsity(model: &Model) -> f64 {
    let total = model.param_count();
    let zeros = model
        .params()
        .iter()
        .flat_map(|p| p.value.data())
        .filter(|v| v.abs() <= ZERO_TOL)
        .count();
    percent(zeros, total)
}

/// Percentage of groups whose ℓ2 norm is below `1e-15`; 0 when there are none.
pub fn channel_sparsity(model: &Model) -> Result<f64> {
    let groups = model.groups();
    if groups.is_empty() {
        return Ok(0.0);
    }
    let dead = groups
        .iter()
        .filter(|g| group_norm(&model.params()[g.param].value.data()[g.range.clone()]) < ZERO_TOL)
        .count();
    Ok(percent(dead, groups.len()))
}

/// Accuracy in percent under `attack`, evaluated in eval mode.
///
/// Shard `k` draws its attack randomness from `(seed, epoch, k·128)`, so
/// the result is a pure function of the arguments.
pub fn accuracy(
    model: &Model,
    ds: &Dataset,
    attack: &AttackSpec,
    seed: u64,
    epoch: u64,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Parameter("accuracy of an empty dataset".into()));
    }
    attack.validate()?;
    let starts: Vec<usize> = (0..ds.len()).step_by(SHARD).collect();
    let shard = |start: usize| -> Result<usize> {
        let idx: Vec<usize> = (start..(start + SHARD).min(ds.len())).collect();
        let (x, y) = ds.batch(&idx)?;
        let mut rng = stream(seed, Purpose::EvalAttack, epoch, start as u64);
        let x_adv = attack.apply(model, &x, &y, Mode::Eval, &mut rng)?;
        let logits = model.forward(&x_adv, Mode::Eval, &mut rng)?;
        Ok(argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count())
    };
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(starts.len());
    let counts: Vec<Result<usize>> = if workers <= 1 {
        starts.iter().map(|&s| shard(s)).collect()
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let starts = &starts;
                    let shard = &shard;
                    scope.spawn(move || {
                        starts
                            .iter()
                            .skip(w)
                            .step_by(workers)
                            .map(|&s| shard(s))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("accuracy worker panicked"))
                .collect()
        })
    };
    let mut correct = 0;
    for c in counts {
        correct += c?;
    }
    Ok(percent(correct, ds.len()))
}

/// Counts per bin `[e_i, e_{i+1})`, the last bin closed on the right.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

/// `bins + 1` evenly spaced edges from `lo` to `hi`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Parameter(format!(
            "cannot split [{lo}, {hi}] into {bins} bins"
        )));
    }
    let width = (hi - lo) / bins as f64;
    Ok((0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect())
}

pub fn histogram_of(values: impl IntoIterator<Item = f64>, edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter(
            "histogram edges must be at least two strictly increasing values".into(),
        ));
    }
    let last = edges.len() - 1;
    let mut h = Histogram {
        edges: edges.to_vec(),
        counts: vec![0; last],
        underflow: 0,
        overflow: 0,
    };
    for v in values {
        if v < edges[0] {
            h.underflow += 1;
        } else if v > edges[last] {
            h.overflow += 1;
        } else if v == edges[last] {
            h.counts[last - 1] += 1;
        } else {
            // first edge strictly greater than v closes its bin
            let bin = edges.partition_point(|&e| e <= v) - 1;
            h.counts[bin] += 1;
        }
    }
    Ok(h)
}

pub fn weight_histogram(model: &Model, edges: &[f64]) -> Result<Histogram> {
    histogram_of(
        model
            .params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied()),
        edges,
    )
}

/// Percentage of parameter coordinates with `|w| < cutoff`.
pub fn small_weight_fraction(model: &Model, cutoff: f64) -> f64 {
    let small = model
        .params()
        .iter()
        .flat_map(|p| p.value.data())
        .filter(|v| v.abs() < cutoff)
        .count();
    percent(small, model.param_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_mlp, Activation};
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    fn mlp() -> Model {
        // 4 + 2 + 4 + 2 parameters, 2 hidden rows
        build_mlp(&[2, 2, 2], Activation::Relu, &mut seeded(1)).unwrap()
    }

    #[test]
    fn sparsity_counts_zeroed_coordinates() {
        let mut m = mlp();
        assert_eq!(m.param_count(), 12);
        assert_eq!(sparsity(&m), 0.0);
        m.param_mut(0).data_mut()[0] = 0.0;
        m.param_mut(1).data_mut()[1] = 1e-16;
        m.param_mut(2).data_mut()[3] = -1e-15;
        assert_eq!(sparsity(&m), 25.0);
        let zeros: Vec<Tensor> = m
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        m.set_param_values(&zeros).unwrap();
        assert_eq!(sparsity(&m), 100.0);
        assert_eq!(channel_sparsity(&m).unwrap(), 100.0);
    }

    #[test]
    fn channel_sparsity_one_of_two() {
        let mut m = mlp();
        assert_eq!(m.groups().len(), 2);
        let g = m.groups()[0].clone();
        m.param_mut(g.param).data_mut()[g.range].fill(0.0);
        assert_eq!(channel_sparsity(&m).unwrap(), 50.0);
    }

    #[test]
    fn histogram_bins_and_edges() {
        let h = histogram_of([0.0, 0.5, 1.0, -1.0, 2.0, 0.99], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(h.counts, vec![1, 3]);
        assert_eq!((h.underflow, h.overflow), (1, 1));
        assert!(histogram_of([0.0], &[1.0, 1.0]).is_err());
        assert!(histogram_of([0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn uniform_edges_hit_both_ends() {
        let e = uniform_edges(-0.5, 0.5, 100).unwrap();
        assert_eq!(e.len(), 101);
        assert_eq!((e[0], e[100]), (-0.5, 0.5));
    }

    #[test]
    fn small_weight_fraction_bounds() {
        let m = mlp();
        assert_eq!(small_weight_fraction(&m, 10.0), 100.0);
        assert_eq!(small_weight_fraction(&m, 0.0), 0.0);
    }
}
