//! Experiment statistics over networks and their sparse graphs.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{path_report_for_mask, strength_order, EdgeCategory, SparseGraphView};
use crate::init::InitializerSpec;
use crate::nn::{DenseNetwork, EpochHook, ExperimentRecord};

/// Sign agreement and weight correlation between a parent graph and its retrained child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRateReport {
    pub layer_names: Vec<String>,
    /// Parent-active edges per layer.
    pub layer_active: Vec<usize>,
    pub layer_rates: Vec<f64>,
    pub overall_rate: f64,
    /// `None` where the correlation is undefined (fewer than two edges or zero variance).
    pub layer_pearson: Vec<Option<f64>>,
    pub overall_pearson: Option<f64>,
    /// Pearson between the parent's category codes (+1/-1) and the sign of the
    /// child weight (+1/0/-1) on the same edges. Depends only on which edges changed.
    pub layer_sign_pearson: Vec<Option<f64>>,
    pub overall_sign_pearson: Option<f64>,
    pub child_accuracy: Option<f64>,
}

fn check_shapes(view: &SparseGraphView, child: &DenseNetwork) -> Result<()> {
    if view.layer_sizes() != child.layer_sizes().as_slice() {
        return Err(Error::input(format!(
            "parent graph has levels {:?}, child network {:?}",
            view.layer_sizes(),
            child.layer_sizes()
        )));
    }
    Ok(())
}

fn sign_kept(category: EdgeCategory, w: f64) -> bool {
    match category {
        EdgeCategory::Activating => w > 0.0,
        EdgeCategory::Inhibiting => w < 0.0,
        EdgeCategory::Inactive => true,
    }
}

/// Share of parent-active edges whose child weight no longer has the parent's sign.
/// A child weight of exactly zero counts as changed. Pearson fields are left empty.
pub fn change_rate(parent: &SparseGraphView, child: &DenseNetwork) -> Result<ChangeRateReport> {
    check_shapes(parent, child)?;
    let mut layer_active = Vec::new();
    let mut layer_rates = Vec::new();
    let (mut changed_total, mut active_total) = (0usize, 0usize);
    for (cats, layer) in parent.categories().iter().zip(child.layers()) {
        let mut active = 0;
        let mut changed = 0;
        for (&c, &w) in cats.iter().zip(layer.weights().iter()) {
            if c.is_active() {
                active += 1;
                changed += !sign_kept(c, w) as usize;
            }
        }
        layer_active.push(active);
        layer_rates.push(ratio(changed, active));
        changed_total += changed;
        active_total += active;
    }
    Ok(ChangeRateReport {
        layer_names: child.layer_names().to_vec(),
        layer_pearson: vec![None; layer_rates.len()],
        layer_sign_pearson: vec![None; layer_rates.len()],
        layer_active,
        layer_rates,
        overall_rate: ratio(changed_total, active_total),
        overall_pearson: None,
        overall_sign_pearson: None,
        child_accuracy: None,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// [`change_rate`] plus parent/child Pearson coefficients over the parent-active edges.
/// The parent view must still hold its source weights.
pub fn compare_parent_child(parent: &SparseGraphView, child: &DenseNetwork) -> Result<ChangeRateReport> {
    let mut report = change_rate(parent, child)?;
    let parent_weights = parent
        .source_weights()
        .ok_or_else(|| Error::input("parent view carries no weights to correlate"))?;
    let (mut all_p, mut all_c, mut all_ps, mut all_cs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (l, (cats, layer)) in parent.categories().iter().zip(child.layers()).enumerate() {
        let (mut p, mut c, mut ps, mut cs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ((&cat, &pw), &cw) in cats.iter().zip(parent_weights[l].iter()).zip(layer.weights().iter()) {
            if cat.is_active() {
                p.push(pw);
                c.push(cw);
                ps.push(if cat == EdgeCategory::Activating { 1.0 } else { -1.0 });
                cs.push(if cw == 0.0 { 0.0 } else { cw.signum() });
            }
        }
        report.layer_pearson[l] = pearson(&p, &c).ok().flatten();
        report.layer_sign_pearson[l] = pearson(&ps, &cs).ok().flatten();
        all_p.extend(p);
        all_c.extend(c);
        all_ps.extend(ps);
        all_cs.extend(cs);
    }
    report.overall_sign_pearson = pearson(&all_ps, &all_cs).ok().flatten();
    report.overall_pearson = pearson(&all_p, &all_c).ok().flatten();
    Ok(report)
}

/// Sample Pearson correlation; `Ok(None)` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::input(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::input("pearson needs at least two pairs"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Empirical CDF of one layer's absolute weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub layer: String,
    /// Ascending `|w|`.
    pub values: Vec<f64>,
    /// `i/N` for the i-th value (1-based).
    pub fractions: Vec<f64>,
}

/// An `|w|` interval holding almost no mass between two populated regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassGap {
    pub lower: f64,
    pub upper: f64,
    pub mass_below: f64,
    pub mass_inside: f64,
    pub mass_above: f64,
}

/// Thresholds for [`CdfSeries::find_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCriteria {
    /// The gap must hold strictly less than this share of the samples.
    pub max_inside: f64,
    /// Mass required below the gap.
    pub min_below: f64,
    /// Mass required above the gap.
    pub min_above: f64,
    /// Minimum width as a share of the layer's `|w|` range.
    pub min_relative_width: f64,
}

impl Default for GapCriteria {
    fn default() -> Self {
        Self { max_inside: 0.01, min_below: 0.30, min_above: 0.01, min_relative_width: 0.10 }
    }
}

impl CdfSeries {
    pub fn from_weights(layer: impl Into<String>, weights: impl IntoIterator<Item = f64>) -> Self {
        let mut values: Vec<f64> = weights.into_iter().map(f64::abs).collect();
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let fractions = (1..=values.len()).map(|i| i as f64 / n).collect();
        Self { layer: layer.into(), values, fractions }
    }

    /// Share of samples with `|w| ≤ x`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len().max(1) as f64
    }

    /// Widest interval satisfying `criteria`, if any.
    pub fn find_gap(&self, criteria: &GapCriteria) -> Option<MassGap> {
        let n = self.values.len();
        if n < 2 {
            return None;
        }
        let range = self.values[n - 1] - self.values[0];
        if range <= 0.0 {
            return None;
        }
        // Largest number of samples strictly inside the open interval.
        let allowed = ((criteria.max_inside * n as f64).ceil() as usize).saturating_sub(1);
        let mut best: Option<MassGap> = None;
        for i in 0..n {
            let j = i + allowed + 1;
            if j >= n {
                break;
            }
            let (lower, upper) = (self.values[i], self.values[j]);
            let below = (i + 1) as f64 / n as f64;
            let above = (n - j) as f64 / n as f64;
            if upper - lower < criteria.min_relative_width * range || below < criteria.min_below || above < criteria.min_above {
                continue;
            }
            if best.is_none_or(|b| upper - lower > b.upper - b.lower) {
                best = Some(MassGap {
                    lower,
                    upper,
                    mass_below: below,
                    mass_inside: (j - i - 1) as f64 / n as f64,
                    mass_above: above,
                });
            }
        }
        best
    }
}

/// One absolute-weight CDF per layer.
pub fn cdf_by_layer(net: &DenseNetwork) -> Vec<CdfSeries> {
    net.layers()
        .iter()
        .zip(net.layer_names())
        .map(|(l, name)| CdfSeries::from_weights(name.clone(), l.weights().iter().copied()))
        .collect()
}

/// Kolmogorov–Smirnov distance between an empirical CDF and a reference CDF.
pub fn ks_statistic(series: &CdfSeries, reference: impl Fn(f64) -> f64) -> f64 {
    let n = series.values.len() as f64;
    series
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = reference(v);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Mean share of the `k` strongest edges that lie on complete paths, over random initializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCurve {
    pub layer_sizes: Vec<usize>,
    pub total_edges: usize,
    pub grid: Vec<usize>,
    pub mean_fraction: Vec<f64>,
    pub std_fraction: Vec<f64>,
    pub trials: usize,
    /// Per trial (outer) and grid point (inner).
    #[serde(skip)]
    pub per_trial: Vec<Vec<f64>>,
}

impl PathCurve {
    /// Grid point as a share of all edges.
    pub fn edge_fraction(&self, index: usize) -> f64 {
        self.grid[index] as f64 / self.total_edges as f64
    }

    /// Edge count where the mean curve first reaches `level`, interpolated linearly
    /// between grid points.
    pub fn crossing(&self, level: f64) -> Option<f64> {
        let first = self.mean_fraction.iter().position(|&f| f >= level)?;
        if first == 0 {
            return Some(self.grid[0] as f64);
        }
        let (k0, k1) = (self.grid[first - 1] as f64, self.grid[first] as f64);
        let (f0, f1) = (self.mean_fraction[first - 1], self.mean_fraction[first]);
        Some(k0 + (level - f0) / (f1 - f0) * (k1 - k0))
    }

    /// Width of the rise from `low` to `high`, as a share of all edges.
    pub fn transition_width(&self, low: f64, high: f64) -> Option<f64> {
        let a = self.crossing(low)?;
        let b = self.crossing(high)?;
        Some((b - a) / self.total_edges as f64)
    }
}

/// `n` evenly spaced edge counts from `start` to `end` inclusive, deduplicated.
pub fn linear_grid(start: usize, end: usize, n: usize) -> Vec<usize> {
    if n <= 1 || end <= start {
        return vec![end];
    }
    let mut grid: Vec<usize> = (0..n)
        .map(|i| start + ((end - start) as f64 * i as f64 / (n - 1) as f64).round() as usize)
        .collect();
    grid.dedup();
    grid
}

/// Fraction on complete paths for every prefix length in `grid` of the
/// strongest-first edge order.
pub fn path_fractions_for_weights(layer_sizes: &[usize], weights: &[Array2<f64>], grid: &[usize]) -> Vec<f64> {
    let order = strength_order(weights);
    let shapes: Vec<(usize, usize)> = weights.iter().map(|w| w.dim()).collect();
    let offsets: Vec<usize> = shapes
        .iter()
        .scan(0, |acc, &(r, c)| {
            let start = *acc;
            *acc += r * c;
            Some(start)
        })
        .collect();
    let mut active: Vec<Array2<bool>> = shapes.iter().map(|&s| Array2::from_elem(s, false)).collect();
    let mut added = 0usize;
    grid.iter()
        .map(|&k| {
            let k = k.min(order.len());
            while added < k {
                let flat = order[added] as usize;
                let layer = offsets.partition_point(|&o| o <= flat) - 1;
                let local = flat - offsets[layer];
                let cols = shapes[layer].1;
                // Exact zeros never count as present edges.
                if weights[layer][[local / cols, local % cols]] != 0.0 {
                    active[layer][[local / cols, local % cols]] = true;
                }
                added += 1;
            }
            path_report_for_mask(layer_sizes, &active).fraction_on_complete_paths
        })
        .collect()
}

/// Monte Carlo estimate of the complete-path fraction against the number of kept edges.
///
/// Trial `t` initializes with seed `initializer.rng_seed + t`, so results do
/// not depend on how trials are scheduled across threads.
pub fn path_curve(layer_sizes: &[usize], initializer: &InitializerSpec, grid: &[usize], trials: usize) -> Result<PathCurve> {
    if trials == 0 {
        return Err(Error::input("path curve needs at least one trial"));
    }
    if layer_sizes.len() < 2 {
        return Err(Error::config("at least two layer sizes are required"));
    }
    let total: usize = layer_sizes.windows(2).map(|w| w[0] * w[1]).sum();
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("grid must be non-empty and strictly increasing"));
    }
    if let Some(&k) = grid.iter().find(|&&k| k > total) {
        return Err(Error::input(format!("grid value {k} exceeds the {total} edges")));
    }
    initializer.validate()?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = initializer.with_seed(initializer.rng_seed.wrapping_add(t as u64));
            let weights = spec.weights(layer_sizes)?;
            Ok(path_fractions_for_weights(layer_sizes, &weights, grid))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = trials as f64;
    let mean: Vec<f64> = (0..grid.len()).map(|g| per_trial.iter().map(|t| t[g]).sum::<f64>() / n).collect();
    let std = (0..grid.len())
        .map(|g| {
            if trials < 2 {
                return 0.0;
            }
            let var = per_trial.iter().map(|t| (t[g] - mean[g]).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt()
        })
        .collect();
    Ok(PathCurve {
        layer_sizes: layer_sizes.to_vec(),
        total_edges: total,
        grid: grid.to_vec(),
        mean_fraction: mean,
        std_fraction: std,
        trials,
        per_trial,
    })
}

/// Complete-path fraction among the `k` strongest edges of a network.
pub fn path_fraction_top_k(net: &DenseNetwork, k: usize) -> f64 {
    let weights: Vec<Array2<f64>> = net.layers().iter().map(|l| l.weights().clone()).collect();
    path_fractions_for_weights(&net.layer_sizes(), &weights, &[k])[0]
}

/// Epoch hook recording the complete-path fraction of the `k` strongest edges.
#[derive(Debug, Clone, Default)]
pub struct PathTracker {
    k_values: Vec<usize>,
    /// Values before the first update.
    pub initial: BTreeMap<usize, f64>,
}

impl PathTracker {
    pub fn new(mut k_values: Vec<usize>) -> Self {
        k_values.sort_unstable();
        k_values.dedup();
        Self { k_values, initial: BTreeMap::new() }
    }

    fn measure(&self, net: &DenseNetwork) -> BTreeMap<usize, f64> {
        let weights: Vec<Array2<f64>> = net.layers().iter().map(|l| l.weights().clone()).collect();
        let fractions = path_fractions_for_weights(&net.layer_sizes(), &weights, &self.k_values);
        self.k_values.iter().copied().zip(fractions).collect()
    }
}

/// Per-epoch hook tracking how many strong edges sit on complete paths.
pub fn paths_vs_accuracy_hook(k_values: Vec<usize>) -> PathTracker {
    PathTracker::new(k_values)
}

impl EpochHook for PathTracker {
    fn before_training(&mut self, net: &DenseNetwork) -> Result<()> {
        self.initial = self.measure(net);
        Ok(())
    }

    fn after_epoch(&mut self, net: &DenseNetwork, record: &mut ExperimentRecord) -> Result<()> {
        record.path_fractions.extend(self.measure(net));
        Ok(())
    }
}
