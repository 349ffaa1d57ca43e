//! Backward and forward unit pruning driven by a single probe.
//!
//! Units of layer `k` whose probe activation is (near) zero are removed from
//! the network. Backward pruning drops the rows of `W^k` and entries of `b^k`
//! that produce them; forward pruning drops the columns of `W^{k+1}` that
//! consume them. Both are applied physically: matrices shrink, nothing is
//! zero-padded.
//!
//! Removing an exactly-zero unit never changes any output bit (see
//! [`crate::linalg`]). Removing a unit whose activation is merely below the
//! threshold changes the output by at most [`deviation_bound`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{drop_cols, drop_rows, IndexSet, Vector};
use crate::model::{
    forward, param_count, ActivationProfile, DenseLayer, InputMap, Network, ParamCount,
};
use crate::scene::{channel_sums, Scene};

/// How activations are compared against zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneConfig {
    /// Only units with activation exactly zero.
    ExactZero,
    /// Units with `|activation| <= tau`.
    Thresholded(f64),
}

impl PruneConfig {
    /// `tau` must be nonnegative (`+inf` allowed). Zero maps to `ExactZero`.
    pub fn threshold(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::contract(format!("threshold {tau} must be >= 0")));
        }
        Ok(if tau == 0.0 {
            PruneConfig::ExactZero
        } else {
            PruneConfig::Thresholded(tau)
        })
    }

    pub fn tau(&self) -> f64 {
        match *self {
            PruneConfig::ExactZero => 0.0,
            PruneConfig::Thresholded(t) => t,
        }
    }
}

/// Where a selection's indices live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSite {
    /// Feature-map channels, before expansion to input columns.
    Channels,
    /// Coordinates of the network input (columns of layer 0).
    Input,
    /// Output units of layer `k`.
    Layer(usize),
}

/// A partition of `0..width` into removed and retained units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneSelection {
    pub site: UnitSite,
    pub pruned: IndexSet,
    pub kept: IndexSet,
}

impl PruneSelection {
    pub fn from_pruned(site: UnitSite, pruned: IndexSet, width: usize) -> Result<Self> {
        if pruned.max().is_some_and(|m| m >= width) {
            return Err(Error::contract(format!(
                "pruned index {} out of range for width {width}",
                pruned.max().unwrap_or_default()
            )));
        }
        let kept = pruned.complement(width);
        Ok(PruneSelection { site, pruned, kept })
    }

    pub fn empty(site: UnitSite, width: usize) -> Self {
        PruneSelection {
            site,
            pruned: IndexSet::empty(),
            kept: IndexSet::full(width),
        }
    }

    pub fn width(&self) -> usize {
        self.pruned.len() + self.kept.len()
    }

    /// Number of removed units.
    pub fn q(&self) -> usize {
        self.pruned.len()
    }
}

/// Selects units of layer `layer` with `|activation| <= tau`.
pub fn select_units(layer: usize, activations: &Vector, config: PruneConfig) -> PruneSelection {
    let tau = config.tau();
    let pruned = IndexSet::filter(activations.len(), |j| activations[j].abs() <= tau);
    let kept = pruned.complement(activations.len());
    PruneSelection {
        site: UnitSite::Layer(layer),
        pruned,
        kept,
    }
}

/// Selects channels whose spatial sum is `<= tau`.
pub fn select_channels(sums: &Vector, config: PruneConfig) -> Result<PruneSelection> {
    if let Some(c) = (0..sums.len()).find(|&c| sums[c] < 0.0) {
        return Err(Error::contract(format!(
            "channel {c} has negative spatial sum {}",
            sums[c]
        )));
    }
    let tau = config.tau();
    let pruned = IndexSet::filter(sums.len(), |c| sums[c] <= tau);
    let kept = pruned.complement(sums.len());
    Ok(PruneSelection {
        site: UnitSite::Channels,
        pruned,
        kept,
    })
}

/// Input columns fed by the pruned channels under channel-major flattening:
/// channel `c` owns columns `c·cell .. (c+1)·cell` with `cell = pool_h·pool_w`.
pub fn channel_columns(
    sel: &PruneSelection,
    channels: usize,
    pool_h: usize,
    pool_w: usize,
) -> Result<IndexSet> {
    if sel.pruned.max().is_some_and(|c| c >= channels) {
        return Err(Error::contract(format!(
            "channel index out of range for {channels} channels"
        )));
    }
    let cell = pool_h * pool_w;
    let cols = sel
        .pruned
        .iter()
        .flat_map(|c| c * cell..(c + 1) * cell)
        .collect();
    IndexSet::new(cols)
}

fn check_width(sel: &PruneSelection, expected: usize, what: &str) -> Result<()> {
    if sel.width() != expected {
        return Err(Error::contract(format!(
            "selection covers {} units but {what} has {expected}",
            sel.width()
        )));
    }
    Ok(())
}

fn compact_cols(layer: &DenseLayer, keep: &IndexSet) -> Result<DenseLayer> {
    Ok(DenseLayer {
        weights: drop_cols(&layer.weights, keep)?,
        bias: layer.bias.clone(),
        activation: layer.activation,
    })
}

fn compact_rows(layer: &DenseLayer, keep: &IndexSet) -> Result<DenseLayer> {
    Ok(DenseLayer {
        weights: drop_rows(&layer.weights, keep)?,
        bias: layer.bias.select(keep)?,
        activation: layer.activation,
    })
}

/// Removes the columns of layer `layer` listed in `sel.pruned`.
///
/// Only layer 0 can be pruned this way on its own; for hidden units use
/// [`prune_units`], which keeps the producing layer consistent. Pruning
/// layer 0 records the retained input coordinates in the network's
/// [`InputMap`].
pub fn forward_prune(net: &Network, layer: usize, sel: &PruneSelection) -> Result<Network> {
    let target = net.layer(layer)?;
    check_width(sel, target.inputs(), &format!("layer {layer} input"))?;
    if layer != 0 && !sel.pruned.is_empty() {
        return Err(Error::contract(format!(
            "forward pruning layer {layer} alone would break the chain with layer {}; use prune_units",
            layer - 1
        )));
    }
    let (mut layers, labels, input_map) = net.clone().into_parts();
    layers[layer] = compact_cols(&layers[layer], &sel.kept)?;
    let input_map = if layer == 0 && !sel.pruned.is_empty() {
        Some(match input_map {
            Some(map) => InputMap {
                source_dim: map.source_dim,
                keep: IndexSet::new(sel.kept.iter().map(|j| map.keep.as_slice()[j]).collect())?,
            },
            None => InputMap {
                source_dim: sel.width(),
                keep: sel.kept.clone(),
            },
        })
    } else {
        input_map
    };
    Network::with_input_map(layers, labels, input_map)
}

/// Removes the rows of `W^k` and entries of `b^k` listed in `sel.pruned`.
///
/// Only the final layer can be pruned this way on its own (its labels are
/// compacted alongside); for hidden units use [`prune_units`].
pub fn backward_prune(net: &Network, layer: usize, sel: &PruneSelection) -> Result<Network> {
    let target = net.layer(layer)?;
    check_width(sel, target.units(), &format!("layer {layer} output"))?;
    let last = net.layers().len() - 1;
    if layer != last && !sel.pruned.is_empty() {
        return Err(Error::contract(format!(
            "backward pruning hidden layer {layer} alone would break the chain with layer {}; use prune_units",
            layer + 1
        )));
    }
    let (mut layers, labels, input_map) = net.clone().into_parts();
    layers[layer] = compact_rows(&layers[layer], &sel.kept)?;
    let labels = labels.map(|l| sel.kept.iter().map(|i| l[i].clone()).collect());
    Network::with_input_map(layers, labels, input_map)
}

/// What a pruning step removed, with parameter and MAC accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub selections: Vec<PruneSelection>,
    pub params_before: ParamCount,
    pub params_after: ParamCount,
    /// Fraction of each layer's parameters removed.
    pub layer_reduction: Vec<f64>,
    /// Fraction of all parameters removed.
    pub total_reduction: f64,
    /// Fraction of multiply-accumulates removed.
    pub mac_reduction: f64,
    /// ∞-norm bound on the probe's output change, when a probe was given.
    pub deviation_bound: Option<f64>,
}

fn fraction(removed: u64, before: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        removed as f64 / before as f64
    }
}

impl PruneReport {
    pub fn new(selections: Vec<PruneSelection>, before: &Network, after: &Network) -> Self {
        let params_before = param_count(before);
        let params_after = param_count(after);
        let layer_reduction = params_before
            .per_layer
            .iter()
            .zip(&params_after.per_layer)
            .map(|(b, a)| fraction(b.total() - a.total(), b.total()))
            .collect();
        PruneReport {
            selections,
            total_reduction: fraction(
                params_before.total - params_after.total,
                params_before.total,
            ),
            mac_reduction: fraction(params_before.macs - params_after.macs, params_before.macs),
            layer_reduction,
            params_before,
            params_after,
            deviation_bound: None,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.deviation_bound = Some(bound);
        self
    }

    pub fn params_removed(&self) -> u64 {
        self.params_before.total - self.params_after.total
    }

    pub fn macs_removed(&self) -> u64 {
        self.params_before.macs - self.params_after.macs
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Removes hidden units of layer `k`: rows of `W^k`/`b^k` and the matching
/// columns of `W^{k+1}`. Removes exactly `q·(m+1) + p·q` parameters for a
/// `p×n` layer `k+1` fed by an `n×m` layer `k`.
pub fn prune_units(net: &Network, k: usize, sel: &PruneSelection) -> Result<(Network, PruneReport)> {
    let producer = net.layer(k)?;
    if k + 1 >= net.layers().len() {
        return Err(Error::contract(format!(
            "layer {k} is the final layer; use prune_output_topn to remove outputs"
        )));
    }
    check_width(sel, producer.units(), &format!("layer {k} output"))?;
    let (mut layers, labels, input_map) = net.clone().into_parts();
    layers[k] = compact_rows(&layers[k], &sel.kept)?;
    layers[k + 1] = compact_cols(&layers[k + 1], &sel.kept)?;
    let pruned = Network::with_input_map(layers, labels, input_map)?;
    let report = PruneReport::new(
        vec![PruneSelection {
            site: UnitSite::Layer(k),
            ..sel.clone()
        }],
        net,
        &pruned,
    );
    Ok((pruned, report))
}

/// Removes input columns given in the coordinates of the network's source
/// input. Columns the network no longer consumes are ignored, so pruning an
/// already-pruned network with the same columns removes nothing.
pub fn prune_input_columns(net: &Network, source_cols: &IndexSet) -> Result<(Network, PruneReport)> {
    let first = net.layer(0)?;
    let source_dim = net.source_input_dim().unwrap_or_default();
    if source_cols.max().is_some_and(|c| c >= source_dim) {
        return Err(Error::contract(format!(
            "column index out of range for input width {source_dim}"
        )));
    }
    let positions = match net.input_map() {
        Some(map) => IndexSet::filter(first.inputs(), |j| {
            source_cols.contains(map.keep.as_slice()[j])
        }),
        None => source_cols.clone(),
    };
    let sel = PruneSelection::from_pruned(UnitSite::Input, positions, first.inputs())?;
    let pruned = forward_prune(net, 0, &sel)?;
    let report = PruneReport::new(vec![sel], net, &pruned);
    Ok((pruned, report))
}

/// Original output indices (and names) retained by top-N pruning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub kept: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl LabelMap {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Original index of pruned output `i`.
    pub fn original_index(&self, i: usize) -> Option<usize> {
        self.kept.get(i).map(|e| e.index)
    }

    pub fn contains(&self, original: usize) -> bool {
        self.kept.binary_search_by_key(&original, |e| e.index).is_ok()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("label map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let map: LabelMap = serde_json::from_slice(bytes)?;
        if map.kept.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::validation(
                "label map indices must be strictly increasing",
            ));
        }
        Ok(map)
    }
}

/// Keeps the `n` highest-scoring outputs (ties to the lower index) and
/// backward-prunes the rest of the final layer.
pub fn prune_output_topn(
    net: &Network,
    scores: &Vector,
    n: usize,
) -> Result<(Network, LabelMap, PruneReport)> {
    let outputs = net
        .output_dim()
        .ok_or_else(|| Error::contract("network has no layers"))?;
    if scores.len() != outputs {
        return Err(Error::contract(format!(
            "{} scores for {outputs} outputs",
            scores.len()
        )));
    }
    if n == 0 || n > outputs {
        return Err(Error::contract(format!(
            "N = {n} outside 1..={outputs}"
        )));
    }
    let mut order: Vec<usize> = (0..outputs).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let kept = IndexSet::new(order[..n].to_vec())?;
    let last = net.layers().len() - 1;
    let sel = PruneSelection {
        site: UnitSite::Layer(last),
        pruned: kept.complement(outputs),
        kept,
    };
    let pruned = backward_prune(net, last, &sel)?;
    let label_map = LabelMap {
        kept: sel
            .kept
            .iter()
            .map(|index| LabelEntry {
                index,
                name: net.labels().map(|l| l[index].clone()),
            })
            .collect(),
    };
    let report = PruneReport::new(vec![sel], net, &pruned);
    Ok((pruned, label_map, report))
}

fn check_removal(net: &Network, consumer: usize, h: &Vector, pruned: &IndexSet) -> Result<()> {
    let layer = net.layer(consumer)?;
    if h.len() != layer.inputs() {
        return Err(Error::contract(format!(
            "layer {consumer} has {} inputs but the activation vector has length {}",
            layer.inputs(),
            h.len()
        )));
    }
    if pruned.max().is_some_and(|j| j >= h.len()) {
        return Err(Error::contract("pruned index out of range"));
    }
    Ok(())
}

/// Real-arithmetic bound on `‖f(x) - f'(x)‖_∞` when the columns `pruned` of
/// layer `consumer` are removed while their inputs `h` are not zero:
/// `max_i Σ_{j∈pruned} |W[i][j]|·|h[j]|` times the ∞-operator norm of every
/// later layer (ReLU and identity are 1-Lipschitz).
///
/// Does not account for rounding in the two forward passes; see
/// [`removal_bound`] for the certificate that does.
pub fn analytic_removal_bound(
    net: &Network,
    consumer: usize,
    h: &Vector,
    pruned: &IndexSet,
) -> Result<f64> {
    check_removal(net, consumer, h, pruned)?;
    let w = &net.layers()[consumer].weights;
    let local = (0..w.rows())
        .map(|i| pruned.iter().map(|j| w.get(i, j).abs() * h[j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if local == 0.0 {
        return Ok(0.0);
    }
    let gain: f64 = net.layers()[consumer + 1..]
        .iter()
        .map(|l| l.weights.inf_norm())
        .product();
    Ok(local * gain)
}

const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

/// Worst-case relative error of an `n`-term floating-point sum.
fn gamma(n: usize) -> f64 {
    let nu = n as f64 * UNIT_ROUNDOFF;
    nu / (1.0 - nu)
}

/// [`analytic_removal_bound`] widened so that it also holds for the outputs
/// as actually computed in `f64`.
///
/// Each layer output of width-`n` input is off from its exact value by at
/// most `γ(n+1)·(|b_i| + Σ_j |W_ij|·|a_j|)`, for the original and the pruned
/// pass alike; those terms are added per layer while the difference is
/// propagated. Returns exactly `0.0` when every removed term is zero, since
/// then the pruned output is bit-identical.
pub fn removal_bound(net: &Network, consumer: usize, h: &Vector, pruned: &IndexSet) -> Result<f64> {
    check_removal(net, consumer, h, pruned)?;
    let layer = &net.layers()[consumer];
    let w = &layer.weights;
    let g = gamma(w.cols() + 1);
    let mut removed_any = false;
    let mut d = 0.0f64;
    for i in 0..w.rows() {
        let removed: f64 = pruned.iter().map(|j| w.get(i, j).abs() * h[j].abs()).sum();
        removed_any |= removed != 0.0;
        let magnitude = layer.bias[i].abs()
            + w.row(i).iter().zip(h.as_slice()).map(|(a, b)| a.abs() * b.abs()).sum::<f64>();
        d = d.max(removed + 2.0 * g * magnitude);
    }
    if !removed_any {
        return Ok(0.0);
    }
    // Rounding in the bound's own arithmetic.
    d *= 1.0 + g;
    let mut a = layer.apply(h)?;
    for later in &net.layers()[consumer + 1..] {
        let w = &later.weights;
        let g = gamma(w.cols() + 1);
        let magnitude = (0..w.rows())
            .map(|i| {
                later.bias[i].abs()
                    + w.row(i).iter().zip(a.as_slice()).map(|(x, y)| x.abs() * y.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max);
        d = ((1.0 + g) * w.inf_norm() * d + 2.0 * g * magnitude) * (1.0 + g);
        a = later.apply(&a)?;
    }
    Ok(d)
}

/// [`removal_bound`] for hidden units of layer `k` pruned by [`prune_units`].
pub fn deviation_bound(
    net: &Network,
    k: usize,
    profile: &ActivationProfile,
    sel: &PruneSelection,
) -> Result<f64> {
    if k + 1 >= net.layers().len() {
        return Err(Error::contract(format!(
            "layer {k} is the final layer; use prune_output_topn to remove outputs"
        )));
    }
    let h = profile.per_layer.get(k).ok_or_else(|| {
        Error::contract(format!("profile has no activations for layer {k}"))
    })?;
    check_width(sel, h.len(), &format!("layer {k} output"))?;
    removal_bound(net, k + 1, h, &sel.pruned)
}

/// Profiles `probe` through `net`, selects units of hidden layer `k` and
/// prunes them. The report carries the probe-level deviation bound.
pub fn specialize_on_probe(
    net: &Network,
    probe: &Vector,
    k: usize,
    config: PruneConfig,
) -> Result<(Network, PruneReport)> {
    let x = if probe.len() == net.input_dim().unwrap_or_default() {
        probe.clone()
    } else {
        net.project_input(probe)?
    };
    let profile = forward(net, &x)?;
    let h = profile.per_layer.get(k).ok_or_else(|| {
        Error::contract(format!("layer {k} does not exist"))
    })?;
    let sel = select_units(k, h, config);
    let bound = deviation_bound(net, k, &profile, &sel)?;
    let (pruned, report) = prune_units(net, k, &sel)?;
    Ok((pruned, report.with_bound(bound)))
}

/// Prunes the first layer's input columns fed by channels whose spatial sum
/// on the whole map is `<= tau`. The bound is measured on the whole-map probe.
pub fn specialize_on_scene(
    net: &Network,
    scene: &Scene,
    config: PruneConfig,
) -> Result<(Network, PruneReport)> {
    let source_dim = net.source_input_dim().unwrap_or_default();
    if net.layers().is_empty() || source_dim != scene.pooled_dim() {
        return Err(Error::contract(format!(
            "layer 0 input width {source_dim} does not match pooled scene width {} ({}x{}x{})",
            scene.pooled_dim(),
            scene.map.channels(),
            scene.pool_h,
            scene.pool_w
        )));
    }
    let channels = select_channels(&channel_sums(&scene.map), config)?;
    let cols = channel_columns(&channels, scene.map.channels(), scene.pool_h, scene.pool_w)?;
    let (pruned, mut report) = prune_input_columns(net, &cols)?;
    let probe = net.project_input(&scene.probe())?;
    let bound = removal_bound(net, 0, &probe, &report.selections[0].pruned)?;
    report.selections.insert(0, channels);
    Ok((pruned, report.with_bound(bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{gen_network, output, ActivationKind, NetworkSpec};
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn set(x: &[usize]) -> IndexSet {
        IndexSet::new(x.to_vec()).unwrap()
    }

    fn layer(rows: &[&[f64]], bias: &[f64], act: ActivationKind) -> DenseLayer {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        DenseLayer::new(Matrix::from_rows(&rows).unwrap(), v(bias), act).unwrap()
    }

    #[test]
    fn select_units_examples() {
        let a = v(&[0.0, 0.003, 0.8, 0.0005]);
        let t = PruneConfig::threshold(0.001).unwrap();
        // Oracle: direct comparison.
        let oracle: Vec<usize> = (0..4).filter(|&j| a[j].abs() <= 0.001).collect();
        assert_eq!(oracle, vec![0, 3]);
        assert_eq!(select_units(0, &a, t).pruned.as_slice(), &oracle[..]);
        assert_eq!(select_units(0, &a, PruneConfig::ExactZero).pruned.as_slice(), &[0]);
        let all = select_units(0, &a, PruneConfig::threshold(0.8).unwrap());
        assert_eq!(all.pruned, IndexSet::full(4));
        assert!(all.kept.is_empty());
    }

    #[test]
    fn select_uses_absolute_value() {
        let sel = select_units(0, &v(&[-0.0005, -2.0]), PruneConfig::threshold(0.001).unwrap());
        assert_eq!(sel.pruned.as_slice(), &[0]);
    }

    #[test]
    fn threshold_validation() {
        assert!(PruneConfig::threshold(-0.1).is_err());
        assert!(PruneConfig::threshold(f64::NAN).is_err());
        assert_eq!(PruneConfig::threshold(0.0).unwrap(), PruneConfig::ExactZero);
        assert_eq!(PruneConfig::threshold(f64::INFINITY).unwrap().tau(), f64::INFINITY);
    }

    #[test]
    fn select_channels_examples() {
        assert_eq!(select_channels(&v(&[0., 10.]), PruneConfig::ExactZero).unwrap().pruned.as_slice(), &[0]);
        let sel = select_channels(&v(&[0.5, 10., 0.2]), PruneConfig::threshold(0.5).unwrap()).unwrap();
        assert_eq!(sel.pruned.as_slice(), &[0, 2]);
        assert!(select_channels(&v(&[-1.0]), PruneConfig::ExactZero).is_err());
    }

    #[test]
    fn channel_columns_examples() {
        // Oracle: enumerate the channel-major flatten and keep positions whose
        // channel is pruned.
        let oracle = |c_total: usize, ph: usize, pw: usize, pruned: &[usize]| -> Vec<usize> {
            let mut out = vec![];
            let mut pos = 0;
            for c in 0..c_total {
                for _ in 0..ph {
                    for _ in 0..pw {
                        if pruned.contains(&c) {
                            out.push(pos);
                        }
                        pos += 1;
                    }
                }
            }
            out
        };
        let sel = PruneSelection::from_pruned(UnitSite::Channels, set(&[1]), 3).unwrap();
        let cols = channel_columns(&sel, 3, 2, 2).unwrap();
        assert_eq!(cols.as_slice(), &oracle(3, 2, 2, &[1])[..]);
        assert_eq!(cols.as_slice(), &[4, 5, 6, 7]);

        let none = PruneSelection::empty(UnitSite::Channels, 3);
        assert!(channel_columns(&none, 3, 2, 2).unwrap().is_empty());

        let first = PruneSelection::from_pruned(UnitSite::Channels, set(&[0]), 512).unwrap();
        let cols = channel_columns(&first, 512, 7, 7).unwrap();
        assert_eq!(cols, IndexSet::full(49));
        assert_eq!(cols.as_slice(), &oracle(512, 7, 7, &[0])[..]);

        let bad = PruneSelection::from_pruned(UnitSite::Channels, set(&[3]), 4).unwrap();
        assert!(channel_columns(&bad, 3, 1, 1).is_err());
    }

    #[test]
    fn forward_prune_example() {
        let net = Network::new(
            vec![layer(&[&[1., 2., 3.], &[4., 5., 6.]], &[0.5, -0.5], ActivationKind::Identity)],
            None,
        )
        .unwrap();
        let h = v(&[0., 2., 0.]);
        let full = output(&net, &h).unwrap();
        // Hand oracle: 0·1 + 2·2 + 0·3 + 0.5 = 4.5 ; 0·4 + 2·5 + 0·6 - 0.5 = 9.5
        assert_eq!(full, v(&[4.5, 9.5]));
        let sel = PruneSelection::from_pruned(UnitSite::Input, set(&[0, 2]), 3).unwrap();
        let pruned = forward_prune(&net, 0, &sel).unwrap();
        assert_eq!(pruned.layers()[0].weights, Matrix::from_rows(&[vec![2.], vec![5.]]).unwrap());
        assert_eq!(output(&pruned, &v(&[2.])).unwrap(), full);
        assert_eq!(output(&pruned, &pruned.project_input(&h).unwrap()).unwrap(), full);

        assert_eq!(forward_prune(&net, 0, &PruneSelection::empty(UnitSite::Input, 3)).unwrap(), net);

        let relu = Network::new(
            vec![layer(&[&[1., 2.], &[3., 4.]], &[0.5, -0.5], ActivationKind::Relu)],
            None,
        )
        .unwrap();
        let all = PruneSelection::from_pruned(UnitSite::Input, IndexSet::full(2), 2).unwrap();
        let bias_only = forward_prune(&relu, 0, &all).unwrap();
        assert_eq!(bias_only.layers()[0].weights.cols(), 0);
        assert_eq!(output(&bias_only, &Vector::default()).unwrap(), v(&[0.5, 0.0]));
    }

    #[test]
    fn forward_prune_hidden_alone_is_rejected() {
        let net = gen_network(&NetworkSpec::new(vec![3, 4, 2], 0.0, 1)).unwrap();
        let sel = PruneSelection::from_pruned(UnitSite::Layer(0), set(&[1]), 4).unwrap();
        assert!(matches!(forward_prune(&net, 1, &sel), Err(Error::Contract(_))));
        let wrong = PruneSelection::from_pruned(UnitSite::Input, set(&[1]), 4).unwrap();
        assert!(forward_prune(&net, 0, &wrong).is_err());
    }

    #[test]
    fn backward_prune_example() {
        let net = Network::new(
            vec![layer(&[&[1., 0.], &[0., 1.], &[2., 2.]], &[0., 0., 1.], ActivationKind::Identity)],
            None,
        )
        .unwrap();
        let sel = PruneSelection::from_pruned(UnitSite::Layer(0), set(&[0]), 3).unwrap();
        let pruned = backward_prune(&net, 0, &sel).unwrap();
        let l = &pruned.layers()[0];
        assert_eq!(l.weights, Matrix::from_rows(&[vec![0., 1.], vec![2., 2.]]).unwrap());
        assert_eq!(l.bias, v(&[0., 1.]));

        assert_eq!(backward_prune(&net, 0, &PruneSelection::empty(UnitSite::Layer(0), 3)).unwrap(), net);
        let all = PruneSelection::from_pruned(UnitSite::Layer(0), IndexSet::full(3), 3).unwrap();
        let gone = backward_prune(&net, 0, &all).unwrap();
        assert_eq!((gone.layers()[0].units(), gone.layers()[0].inputs()), (0, 2));
    }

    #[test]
    fn prune_units_accounting_example() {
        let net = gen_network(&NetworkSpec::new(vec![3, 4, 2], 0.0, 11)).unwrap();
        let sel = PruneSelection::from_pruned(UnitSite::Layer(0), set(&[2]), 4).unwrap();
        let (pruned, report) = prune_units(&net, 0, &sel).unwrap();
        assert_eq!(report.params_before.total, 26);
        assert_eq!(report.params_after.total, 26 - (3 + 1) - 2);
        assert_eq!(param_count(&pruned).total, 20);
        assert_eq!(report.macs_removed(), 3 + 2);

        let (same, report) = prune_units(&net, 0, &PruneSelection::empty(UnitSite::Layer(0), 4)).unwrap();
        assert_eq!(same, net);
        assert_eq!(report.params_removed(), 0);
        assert_eq!(report.total_reduction, 0.0);

        assert!(prune_units(&net, 1, &PruneSelection::empty(UnitSite::Layer(1), 2)).is_err());
    }

    #[test]
    fn topn_examples() {
        let net = Network::new(
            vec![layer(&[&[1., 0.], &[0., 1.], &[2., 2.]], &[0., 0., 1.], ActivationKind::Identity)],
            Some(vec!["a".into(), "b".into(), "c".into()]),
        )
        .unwrap();
        let (pruned, map, report) = prune_output_topn(&net, &v(&[0.1, 0.3, 0.6]), 2).unwrap();
        assert_eq!(map.kept.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(map.kept[0].name.as_deref(), Some("b"));
        assert_eq!(pruned.layers()[0].weights, Matrix::from_rows(&[vec![0., 1.], vec![2., 2.]]).unwrap());
        assert_eq!(pruned.layers()[0].bias, v(&[0., 1.]));
        assert_eq!(pruned.labels().unwrap(), &["b".to_string(), "c".to_string()]);
        assert_eq!(report.params_removed(), 3);

        let (same, ident, _) = prune_output_topn(&net, &v(&[0.1, 0.3, 0.6]), 3).unwrap();
        assert_eq!(same, net);
        assert_eq!(ident.kept.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 2]);

        let two = Network::new(vec![layer(&[&[1.], &[2.]], &[0., 0.], ActivationKind::Identity)], None).unwrap();
        let (_, map, _) = prune_output_topn(&two, &v(&[0.5, 0.5]), 1).unwrap();
        assert_eq!(map.kept, vec![LabelEntry { index: 0, name: None }]);

        assert!(prune_output_topn(&net, &v(&[0.1, 0.3, 0.6]), 0).is_err());
        assert!(prune_output_topn(&net, &v(&[0.1, 0.3, 0.6]), 4).is_err());
        assert!(prune_output_topn(&net, &v(&[0.1, 0.3]), 1).is_err());
    }

    #[test]
    fn topn_twenty_keep_six_is_seventy_percent() {
        let net = gen_network(&NetworkSpec::new(vec![16, 12, 20], 0.0, 3)).unwrap();
        let scores = v(&(0..20).map(|i| (i * 7 % 20) as f64).collect::<Vec<_>>());
        let (pruned, _, _) = prune_output_topn(&net, &scores, 6).unwrap();
        let removed = 20 - pruned.output_dim().unwrap();
        assert_eq!(removed * 10, 20 * 7);
    }

    #[test]
    fn label_map_file() {
        let map = LabelMap { kept: vec![LabelEntry { index: 1, name: Some("b".into()) }, LabelEntry { index: 4, name: None }] };
        assert_eq!(LabelMap::from_json(map.to_json().as_bytes()).unwrap(), map);
        assert!(LabelMap::from_json(br#"{"kept":[{"index":3},{"index":1}]}"#).is_err());
    }

    #[test]
    fn deviation_bound_examples() {
        // Hidden layer of two units, second layer 2x2 identity output.
        let net = Network::new(
            vec![
                layer(&[&[1.0], &[1.0]], &[0.0, 0.0], ActivationKind::Relu),
                layer(&[&[3.0, 1.0], &[-1.0, 2.0]], &[0.0, 0.0], ActivationKind::Identity),
            ],
            None,
        )
        .unwrap();
        let profile = ActivationProfile { input_dim: 1, per_layer: vec![v(&[0.7, 0.5]), v(&[0.0, 0.0])] };
        // Prune unit 1 (a = 0.5), whose column is [1, 2]: max(1·0.5, 2·0.5) = 1.0.
        let sel = PruneSelection::from_pruned(UnitSite::Layer(0), set(&[1]), 2).unwrap();
        let h = &profile.per_layer[0];
        assert_eq!(analytic_removal_bound(&net, 1, h, &sel.pruned).unwrap(), 1.0);
        let b = deviation_bound(&net, 0, &profile, &sel).unwrap();
        assert!((1.0..1.0 + 1e-12).contains(&b), "{b}");

        let zero = ActivationProfile { input_dim: 1, per_layer: vec![v(&[0.7, 0.0]), v(&[0.0, 0.0])] };
        assert_eq!(deviation_bound(&net, 0, &zero, &sel).unwrap(), 0.0);
        assert_eq!(deviation_bound(&net, 0, &profile, &PruneSelection::empty(UnitSite::Layer(0), 2)).unwrap(), 0.0);
    }

    #[test]
    fn bound_includes_downstream_norms() {
        let net = Network::new(
            vec![
                layer(&[&[1.0], &[1.0]], &[0.0, 0.0], ActivationKind::Relu),
                layer(&[&[1.0, 2.0]], &[0.0], ActivationKind::Relu),
                layer(&[&[3.0], &[-4.0]], &[0.0, 0.0], ActivationKind::Identity),
            ],
            None,
        )
        .unwrap();
        let profile = ActivationProfile { input_dim: 1, per_layer: vec![v(&[0.5, 0.25]), v(&[1.0]), v(&[3.0, -4.0])] };
        let sel = PruneSelection::from_pruned(UnitSite::Layer(0), set(&[1]), 2).unwrap();
        // 2·0.25 = 0.5, times ‖[[3],[-4]]‖_∞ = 4.
        assert_eq!(analytic_removal_bound(&net, 1, &profile.per_layer[0], &sel.pruned).unwrap(), 2.0);
        let b = deviation_bound(&net, 0, &profile, &sel).unwrap();
        assert!((2.0..2.0 + 1e-12).contains(&b), "{b}");
    }

    fn random_net() -> impl Strategy<Value = (Network, Vector)> {
        (prop::collection::vec(1usize..8, 3..5), any::<u64>(), 0.0f64..0.8).prop_flat_map(|(sizes, seed, sparsity)| {
            let input = sizes[0];
            (
                Just(gen_network(&NetworkSpec::new(sizes, sparsity, seed)).unwrap()),
                prop::collection::vec(-2.0f64..2.0, input).prop_map(|x| Vector::new(x).unwrap()),
            )
        })
    }

    proptest! {
        #[test]
        fn exact_zero_pruning_is_bit_exact((net, x) in random_net(), k_pick in any::<prop::sample::Index>()) {
            let hidden = net.layers().len() - 1;
            let k = k_pick.index(hidden);
            let (pruned, report) = specialize_on_probe(&net, &x, k, PruneConfig::ExactZero).unwrap();
            prop_assert!(output(&pruned, &x).unwrap().bit_eq(&output(&net, &x).unwrap()));
            prop_assert_eq!(report.deviation_bound, Some(0.0));
        }

        #[test]
        fn thresholded_bound_is_sound((net, x) in random_net(), k_pick in any::<prop::sample::Index>(), tau in 0.0f64..1.5) {
            let k = k_pick.index(net.layers().len() - 1);
            let config = PruneConfig::threshold(tau).unwrap();
            let (pruned, report) = specialize_on_probe(&net, &x, k, config).unwrap();
            let a = output(&net, &x).unwrap();
            let b = output(&pruned, &x).unwrap();
            let dev = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            let bound = report.deviation_bound.unwrap();
            prop_assert!(dev <= bound, "dev {} > bound {}", dev, bound);
        }

        #[test]
        fn selection_is_monotone_in_tau(a in prop::collection::vec(-3.0f64..3.0, 0..20), t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
            let a = Vector::new(a).unwrap();
            let s1 = select_units(0, &a, PruneConfig::threshold(t1).unwrap());
            let s2 = select_units(0, &a, PruneConfig::threshold(t1 + dt).unwrap());
            prop_assert!(s1.pruned.is_subset(&s2.pruned));
            prop_assert_eq!(s1.width(), a.len());
        }

        #[test]
        fn accounting_identity((net, _x) in random_net(), k_pick in any::<prop::sample::Index>(), mask in prop::collection::vec(any::<bool>(), 8)) {
            let k = k_pick.index(net.layers().len() - 1);
            let n = net.layers()[k].units();
            let m = net.layers()[k].inputs() as u64;
            let p = net.layers()[k + 1].units() as u64;
            let sel = PruneSelection::from_pruned(UnitSite::Layer(k), IndexSet::filter(n, |j| mask[j]), n).unwrap();
            let q = sel.q() as u64;
            let (_, report) = prune_units(&net, k, &sel).unwrap();
            prop_assert_eq!(report.params_removed(), q * (m + 1) + p * q);
            prop_assert_eq!(report.macs_removed(), q * m + p * q);
        }

        #[test]
        fn topn_preserves_argmax((net, x) in random_net(), n_pick in any::<prop::sample::Index>()) {
            let out = output(&net, &x).unwrap();
            let n = 1 + n_pick.index(out.len());
            let (pruned, map, _) = prune_output_topn(&net, &out, n).unwrap();
            let top = out.argmax().unwrap();
            prop_assert!(map.contains(top));
            let got = output(&pruned, &x).unwrap().argmax().unwrap();
            prop_assert_eq!(map.original_index(got), Some(top));
        }
    }
}
