//! Sparse-graph interpretation of dense networks.
//!
//! Each weight becomes an edge between consecutive levels of a layered DAG.
//! Against a magnitude threshold an edge is *activating* (positive, strong),
//! *inhibiting* (negative, strong) or *inactive* (weak or exactly zero). Only
//! active edges exist in the graph, and an active edge carries information
//! only if it lies on a complete input→output path.

use std::fmt;
use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, DenseNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeCategory {
    Inactive,
    Activating,
    Inhibiting,
}

impl EdgeCategory {
    /// Code used by the sparse-graph file format.
    pub fn code(self) -> u8 {
        match self {
            EdgeCategory::Inactive => 0,
            EdgeCategory::Activating => 1,
            EdgeCategory::Inhibiting => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EdgeCategory::Inactive),
            1 => Some(EdgeCategory::Activating),
            2 => Some(EdgeCategory::Inhibiting),
            _ => None,
        }
    }

    pub fn is_active(self) -> bool {
        self != EdgeCategory::Inactive
    }

    /// Category of a single weight; exact zeros are inactive at any threshold.
    pub fn of_weight(w: f64, threshold: f64) -> Self {
        if w == 0.0 || w.abs() < threshold {
            EdgeCategory::Inactive
        } else if w > 0.0 {
            EdgeCategory::Activating
        } else {
            EdgeCategory::Inhibiting
        }
    }
}

/// One connection: weight `[source, target]` of weight layer `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeRef {
    pub layer: usize,
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub activating: usize,
    pub inhibiting: usize,
    pub inactive: usize,
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.activating + self.inhibiting + self.inactive
    }

    pub fn active(&self) -> usize {
        self.activating + self.inhibiting
    }

    fn add(&mut self, c: EdgeCategory) {
        match c {
            EdgeCategory::Activating => self.activating += 1,
            EdgeCategory::Inhibiting => self.inhibiting += 1,
            EdgeCategory::Inactive => self.inactive += 1,
        }
    }
}

/// Categorized snapshot of a network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraphView {
    layer_sizes: Vec<usize>,
    categories: Vec<Array2<EdgeCategory>>,
    threshold: f64,
    /// Weights the view was built from; absent when read back from a file.
    source_weights: Option<Vec<Array2<f64>>>,
}

impl SparseGraphView {
    pub fn from_categories(
        layer_sizes: Vec<usize>,
        categories: Vec<Array2<EdgeCategory>>,
        threshold: f64,
    ) -> Result<Self> {
        if layer_sizes.len() != categories.len() + 1 {
            return Err(Error::input("need one category matrix per pair of levels"));
        }
        for (l, c) in categories.iter().enumerate() {
            if c.dim() != (layer_sizes[l], layer_sizes[l + 1]) {
                return Err(Error::input(format!("category matrix {l} has shape {:?}", c.dim())));
            }
        }
        Ok(Self { layer_sizes, categories, threshold, source_weights: None })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn categories(&self) -> &[Array2<EdgeCategory>] {
        &self.categories
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn source_weights(&self) -> Option<&[Array2<f64>]> {
        self.source_weights.as_deref()
    }

    pub fn category(&self, edge: EdgeRef) -> EdgeCategory {
        self.categories[edge.layer][[edge.source, edge.target]]
    }

    pub fn layer_counts(&self) -> Vec<CategoryCounts> {
        self.categories
            .iter()
            .map(|c| {
                let mut counts = CategoryCounts::default();
                c.iter().for_each(|&e| counts.add(e));
                counts
            })
            .collect()
    }

    pub fn counts(&self) -> CategoryCounts {
        self.layer_counts().into_iter().fold(CategoryCounts::default(), |acc, c| CategoryCounts {
            activating: acc.activating + c.activating,
            inhibiting: acc.inhibiting + c.inhibiting,
            inactive: acc.inactive + c.inactive,
        })
    }

    pub fn total_edges(&self) -> usize {
        self.categories.iter().map(|c| c.len()).sum()
    }

    pub fn active_fraction(&self) -> f64 {
        self.counts().active() as f64 / self.total_edges() as f64
    }

    /// Active-edge mask per weight layer.
    pub fn active_mask(&self) -> Vec<Array2<bool>> {
        self.categories.iter().map(|c| c.mapv(EdgeCategory::is_active)).collect()
    }

    /// Writes the compact text form: a three-line header followed by one
    /// category digit per edge, layer by layer in row-major order.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let sizes: Vec<String> = self.layer_sizes.iter().map(ToString::to_string).collect();
        writeln!(out, "{VIEW_MAGIC}")?;
        writeln!(out, "layers {}", sizes.join(","))?;
        writeln!(out, "threshold {:?}", self.threshold)?;
        let mut body = Vec::with_capacity(self.total_edges() + 1);
        for c in &self.categories {
            body.extend(c.iter().map(|e| b'0' + e.code()));
        }
        body.push(b'\n');
        out.write_all(&body)
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            input.read_line(&mut line).map_err(|e| Error::input(e.to_string()))?;
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut input)? != VIEW_MAGIC {
            return Err(Error::input("not a sparse-graph file"));
        }
        let sizes_line = next_line(&mut input)?;
        let sizes = sizes_line
            .strip_prefix("layers ")
            .ok_or_else(|| Error::input("missing layers header"))?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|e| Error::input(format!("bad layer size {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::input("layer sizes must be positive and at least two"));
        }
        let threshold_line = next_line(&mut input)?;
        let threshold = threshold_line
            .strip_prefix("threshold ")
            .ok_or_else(|| Error::input("missing threshold header"))?
            .parse::<f64>()
            .map_err(|e| Error::input(format!("bad threshold: {e}")))?;
        let mut body = Vec::new();
        input.read_to_end(&mut body).map_err(|e| Error::input(e.to_string()))?;
        if body.last() == Some(&b'\n') {
            body.pop();
        }
        let total: usize = sizes.windows(2).map(|w| w[0] * w[1]).sum();
        if body.len() != total {
            return Err(Error::input(format!("expected {total} edge codes, found {}", body.len())));
        }
        let mut codes = body.into_iter();
        let mut categories = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let cells = codes
                .by_ref()
                .take(w[0] * w[1])
                .map(|b| {
                    b.checked_sub(b'0')
                        .and_then(EdgeCategory::from_code)
                        .ok_or_else(|| Error::input(format!("invalid edge code {:?}", b as char)))
                })
                .collect::<Result<Vec<_>>>()?;
            categories.push(Array2::from_shape_vec((w[0], w[1]), cells).expect("length checked"));
        }
        Self::from_categories(sizes, categories, threshold)
    }
}

const VIEW_MAGIC: &str = "lightnet-sparse-graph v1";

impl fmt::Display for SparseGraphView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.counts();
        write!(
            f,
            "{} edges (threshold {}): {} activating, {} inhibiting, {} inactive",
            c.total(),
            self.threshold,
            c.activating,
            c.inhibiting,
            c.inactive
        )
    }
}

fn network_weights(net: &DenseNetwork) -> Vec<Array2<f64>> {
    net.layers().iter().map(|l| l.weights().clone()).collect()
}

/// `⌈fraction·total⌉`, tolerant of floating-point noise in the product.
pub fn active_count_for_fraction(total: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input(format!("active fraction must lie in (0, 1], got {fraction}")));
    }
    let exact = fraction * total as f64;
    let rounded = exact.round();
    let k = if (exact - rounded).abs() < 1e-9 * total.max(1) as f64 { rounded } else { exact.ceil() };
    Ok((k as usize).min(total))
}

/// Flat edge indices (layer, then row, then column) ordered strongest first.
/// Equal magnitudes keep edge order.
pub fn strength_order(weights: &[Array2<f64>]) -> Vec<u32> {
    let mags: Vec<f64> = weights.iter().flat_map(|w| w.iter().map(|v| v.abs())).collect();
    let mut order: Vec<u32> = (0..mags.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| mags[b as usize].total_cmp(&mags[a as usize]).then(a.cmp(&b)));
    order
}

/// Flags for the `k` strongest edges under the same ordering as [`strength_order`].
pub fn strongest_edges(weights: &[Array2<f64>], k: usize) -> Vec<bool> {
    let mags: Vec<f64> = weights.iter().flat_map(|w| w.iter().map(|v| v.abs())).collect();
    let mut flags = vec![false; mags.len()];
    if k == 0 {
        return flags;
    }
    let mut order: Vec<u32> = (0..mags.len() as u32).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| {
            mags[b as usize].total_cmp(&mags[a as usize]).then(a.cmp(&b))
        });
    }
    for &i in order.iter().take(k) {
        flags[i as usize] = true;
    }
    flags
}

/// Magnitude cutoff keeping `⌈fraction·total⌉` edges, pooled across every layer.
///
/// Returns 0 for `fraction = 1`. With tied magnitudes at the cutoff the count
/// is exact only through [`categorize_fraction`], which breaks ties by edge order.
pub fn threshold_for_fraction(net: &DenseNetwork, fraction: f64) -> Result<f64> {
    let weights = network_weights(net);
    let total = net.edge_count();
    let k = active_count_for_fraction(total, fraction)?;
    Ok(threshold_for_count(&weights, k))
}

fn threshold_for_count(weights: &[Array2<f64>], k: usize) -> f64 {
    let total: usize = weights.iter().map(|w| w.len()).sum();
    if k >= total {
        return 0.0;
    }
    let flags = strongest_edges(weights, k);
    weights
        .iter()
        .flat_map(|w| w.iter())
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(v, _)| v.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Categorizes every edge against a plain magnitude threshold.
pub fn categorize(net: &DenseNetwork, threshold: f64) -> SparseGraphView {
    let categories = net
        .layers()
        .iter()
        .map(|l| l.weights().mapv(|w| EdgeCategory::of_weight(w, threshold)))
        .collect();
    SparseGraphView {
        layer_sizes: net.layer_sizes(),
        categories,
        threshold,
        source_weights: Some(network_weights(net)),
    }
}

/// Keeps exactly the `k` strongest edges active (fewer if some of them are zero).
pub fn categorize_top_k(net: &DenseNetwork, k: usize) -> SparseGraphView {
    let weights = network_weights(net);
    let flags = strongest_edges(&weights, k);
    let threshold = threshold_for_count(&weights, k);
    let mut offset = 0;
    let categories = weights
        .iter()
        .map(|w| {
            let cols = w.ncols();
            let c = Array2::from_shape_fn(w.dim(), |(i, j)| {
                if flags[offset + i * cols + j] {
                    EdgeCategory::of_weight(w[[i, j]], 0.0)
                } else {
                    EdgeCategory::Inactive
                }
            });
            offset += w.len();
            c
        })
        .collect();
    SparseGraphView { layer_sizes: net.layer_sizes(), categories, threshold, source_weights: Some(weights) }
}

/// Thresholds by active fraction with deterministic tie-breaking.
pub fn categorize_fraction(net: &DenseNetwork, fraction: f64) -> Result<SparseGraphView> {
    let k = active_count_for_fraction(net.edge_count(), fraction)?;
    Ok(categorize_top_k(net, k))
}

/// Complete-path structure of a sparse graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    /// Per weight layer: active edge lying on some complete input→output path.
    pub on_complete_path: Vec<Array2<bool>>,
    /// Per level (input first): neuron reachable from some input over active edges.
    pub reachable_from_input: Vec<Vec<bool>>,
    /// Per level: neuron reaching some output over active edges.
    pub reaches_output: Vec<Vec<bool>>,
    pub active_edges: usize,
    pub active_on_complete_paths: usize,
    pub fraction_on_complete_paths: f64,
    /// Hidden neurons missing input reachability, output reachability, or both.
    pub dead_neuron_count: usize,
}

/// Forward and backward reachability over the active edges.
pub fn path_report(view: &SparseGraphView) -> PathReport {
    path_report_for_mask(&view.layer_sizes, &view.active_mask())
}

/// [`path_report`] on a raw active-edge mask (`fan_in × fan_out` per layer).
pub fn path_report_for_mask(layer_sizes: &[usize], active: &[Array2<bool>]) -> PathReport {
    let (forward, backward) = reachability(layer_sizes, active);
    let mut on_path = Vec::with_capacity(active.len());
    let mut n_active = 0;
    let mut n_on = 0;
    for (l, mask) in active.iter().enumerate() {
        let m = Array2::from_shape_fn(mask.dim(), |(i, j)| {
            let a = mask[[i, j]];
            n_active += a as usize;
            let on = a && forward[l][i] && backward[l + 1][j];
            n_on += on as usize;
            on
        });
        on_path.push(m);
    }
    let hidden = 1..layer_sizes.len().saturating_sub(1);
    let dead = hidden
        .flat_map(|lvl| (0..layer_sizes[lvl]).map(move |n| (lvl, n)))
        .filter(|&(lvl, n)| !(forward[lvl][n] && backward[lvl][n]))
        .count();
    PathReport {
        on_complete_path: on_path,
        reachable_from_input: forward,
        reaches_output: backward,
        active_edges: n_active,
        active_on_complete_paths: n_on,
        fraction_on_complete_paths: if n_active == 0 { 0.0 } else { n_on as f64 / n_active as f64 },
        dead_neuron_count: dead,
    }
}

/// Level-by-level sweeps; on a layered DAG these visit exactly what a BFS
/// from all inputs (resp. from all outputs over reversed edges) would.
fn reachability(layer_sizes: &[usize], active: &[Array2<bool>]) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let levels = layer_sizes.len();
    let mut forward: Vec<Vec<bool>> = layer_sizes.iter().map(|&n| vec![false; n]).collect();
    let mut backward = forward.clone();
    forward[0].fill(true);
    backward[levels - 1].fill(true);
    for l in 0..active.len() {
        let (src, dst) = forward.split_at_mut(l + 1);
        for (i, row) in active[l].rows().into_iter().enumerate() {
            if src[l][i] {
                for (j, &a) in row.iter().enumerate() {
                    dst[0][j] |= a;
                }
            }
        }
    }
    for l in (0..active.len()).rev() {
        let (src, dst) = backward.split_at_mut(l + 1);
        for (i, row) in active[l].rows().into_iter().enumerate() {
            src[l][i] = row.iter().zip(&dst[0]).any(|(&a, &reach)| a && reach);
        }
    }
    (forward, backward)
}

/// Child network seeded from a sparse graph: `±magnitude` on active edges by
/// sign, zero and untrainable on inactive edges, zero biases.
pub fn reinit_from_view(view: &SparseGraphView, magnitude: f64) -> Result<DenseNetwork> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::config(format!("reinit magnitude must be positive, got {magnitude}")));
    }
    let template = DenseNetwork::mlp(&view.layer_sizes)?;
    let layers = template
        .layers()
        .iter()
        .zip(&view.categories)
        .map(|(layer, cats)| {
            let w = cats.mapv(|c| match c {
                EdgeCategory::Activating => magnitude,
                EdgeCategory::Inhibiting => -magnitude,
                EdgeCategory::Inactive => 0.0,
            });
            let mask = cats.mapv(EdgeCategory::is_active);
            DenseLayer::new(w, layer.biases().clone(), layer.activation())?.with_mask(mask)
        })
        .collect::<Result<Vec<_>>>()?;
    DenseNetwork::with_names(layers, template.layer_names().to_vec())
}
