//! How far a pruned network strays from the original over a collection, and
//! the threshold sweep tracing deviation against parameter reduction.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{drop_cols, IndexSet, Vector};
use crate::model::{fmt_f64, output, Network};
use crate::prune::{removal_bound, specialize_on_scene, LabelMap, PruneConfig, UnitSite};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub n_examples: usize,
    /// Largest absolute difference over all shared output coordinates.
    pub max_abs: f64,
    pub mean_abs: f64,
    /// Fraction of examples whose pruned argmax maps to the original argmax.
    pub argmax_agreement: f64,
    /// Probe-level certificate, when the pair allows computing one.
    pub bound: Option<f64>,
}

impl DeviationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

struct ExampleStats {
    max_abs: f64,
    sum_abs: f64,
    coords: usize,
    agree: bool,
}

fn example_stats(a: &Vector, b: &Vector, label_map: Option<&LabelMap>) -> Result<ExampleStats> {
    let pairs: Vec<(f64, f64)> = match label_map {
        Some(map) => {
            if map.len() != b.len() {
                return Err(Error::contract(format!(
                    "label map has {} entries but the pruned network has {} outputs",
                    map.len(),
                    b.len()
                )));
            }
            map.kept
                .iter()
                .zip(b.as_slice())
                .map(|(e, &y)| {
                    a.get(e.index).map(|x| (x, y)).ok_or_else(|| {
                        Error::contract(format!("label index {} out of range", e.index))
                    })
                })
                .collect::<Result<_>>()?
        }
        None => {
            if a.len() != b.len() {
                return Err(Error::contract(format!(
                    "output widths differ ({} vs {}) and no label map was given",
                    a.len(),
                    b.len()
                )));
            }
            a.as_slice().iter().copied().zip(b.as_slice().iter().copied()).collect()
        }
    };
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0;
    for (x, y) in &pairs {
        let d = (x - y).abs();
        max_abs = max_abs.max(d);
        sum_abs += d;
    }
    let mapped = b
        .argmax()
        .map(|i| label_map.map_or(Some(i), |m| m.original_index(i)));
    let agree = mapped.flatten() == a.argmax();
    Ok(ExampleStats {
        max_abs,
        sum_abs,
        coords: pairs.len(),
        agree,
    })
}

fn aggregate(stats: Vec<ExampleStats>) -> DeviationReport {
    let n = stats.len();
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0;
    let mut coords = 0usize;
    let mut agree = 0usize;
    for s in &stats {
        max_abs = max_abs.max(s.max_abs);
        sum_abs += s.sum_abs;
        coords += s.coords;
        agree += usize::from(s.agree);
    }
    DeviationReport {
        n_examples: n,
        max_abs,
        mean_abs: if coords == 0 { 0.0 } else { sum_abs / coords as f64 },
        argmax_agreement: if n == 0 { 1.0 } else { agree as f64 / n as f64 },
        bound: None,
    }
}

fn map_examples<T: Send>(
    examples: &[Vector],
    f: impl Fn(&Vector) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        examples.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        examples.iter().map(f).collect()
    }
}

/// Compares the two networks on every example. Examples are given at the
/// original input width; each network projects them through its own input
/// map. With a label map, pruned output `i` is compared against original
/// output `label_map[i]`.
pub fn compare_outputs(
    original: &Network,
    pruned: &Network,
    label_map: Option<&LabelMap>,
    examples: &[Vector],
) -> Result<DeviationReport> {
    let originals = map_examples(examples, |x| output(original, &original.project_input(x)?))?;
    compare_against(&originals, pruned, label_map, examples)
}

fn compare_against(
    originals: &[Vector],
    pruned: &Network,
    label_map: Option<&LabelMap>,
    examples: &[Vector],
) -> Result<DeviationReport> {
    let stats = map_examples(examples, |x| output(pruned, &pruned.project_input(x)?))?
        .iter()
        .zip(originals)
        .map(|(b, a)| example_stats(a, b, label_map))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(stats))
}

/// Certificate for a pair where `pruned` differs from `original` only by
/// removed input columns. `None` for any other relationship.
pub fn input_pruning_bound(original: &Network, pruned: &Network, probe: &Vector) -> Result<Option<f64>> {
    let (Some(first), Some(map)) = (original.layers().first(), pruned.input_map()) else {
        return Ok(None);
    };
    if original.source_input_dim() != Some(map.source_dim)
        || original.layers().len() != pruned.layers().len()
        || original.labels() != pruned.labels()
        || original
            .layers()
            .iter()
            .zip(pruned.layers())
            .any(|(a, b)| a.units() != b.units())
        || original.layers()[1..]
            .iter()
            .zip(&pruned.layers()[1..])
            .any(|(a, b)| a != b)
    {
        return Ok(None);
    }
    // Positions of layer 0 in `original` whose source coordinate was dropped.
    let source_of = |j: usize| original.input_map().map_or(j, |m| m.keep.as_slice()[j]);
    let removed = IndexSet::filter(first.inputs(), |j| !map.keep.contains(source_of(j)));
    let kept = removed.complement(first.inputs());
    let kept_sources = IndexSet::new(kept.iter().map(source_of).collect())?;
    if kept_sources != map.keep
        || drop_cols(&first.weights, &kept)? != pruned.layers()[0].weights
        || first.bias != pruned.layers()[0].bias
    {
        return Ok(None);
    }
    let x = original.project_input(probe)?;
    removal_bound(original, 0, &x, &removed).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    /// Channels removed.
    pub pruned_units: usize,
    /// Fraction of the first layer's parameters removed.
    pub param_reduction: f64,
    /// Fraction of the first layer's multiply-accumulates removed.
    pub mac_reduction: f64,
    /// Over every ROI of the scene.
    pub max_abs: f64,
    pub argmax_agreement: f64,
    /// Deviation on the whole-map probe.
    pub probe_max_abs: f64,
    pub bound: f64,
}

/// For each threshold: select channels on the scene's channel sums, prune the
/// matching first-layer columns, and evaluate every ROI.
pub fn sweep(net: &Network, scene: &Scene, thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    let configs = thresholds
        .iter()
        .map(|&t| PruneConfig::threshold(t))
        .collect::<Result<Vec<_>>>()?;
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::contract("thresholds must be sorted ascending"));
    }
    let examples = scene.examples();
    let originals = map_examples(&examples, |x| output(net, &net.project_input(x)?))?;
    let probe = [scene.probe()];
    let probe_out = [output(net, &net.project_input(&probe[0])?)?];
    configs
        .into_iter()
        .map(|config| {
            let (pruned, report) = specialize_on_scene(net, scene, config)?;
            let channels = report
                .selections
                .iter()
                .find(|s| s.site == UnitSite::Channels)
                .map_or(0, |s| s.q());
            let fraction = |before: u64, after: u64| {
                if before == 0 {
                    0.0
                } else {
                    (before - after) as f64 / before as f64
                }
            };
            let (b, a) = (
                &report.params_before.per_layer[0],
                &report.params_after.per_layer[0],
            );
            let dev = compare_against(&originals, &pruned, None, &examples)?;
            let probe_dev = compare_against(&probe_out, &pruned, None, &probe)?;
            Ok(SweepPoint {
                tau: config.tau(),
                pruned_units: channels,
                param_reduction: fraction(b.total(), a.total()),
                mac_reduction: fraction(b.weights, a.weights),
                max_abs: dev.max_abs,
                argmax_agreement: dev.argmax_agreement,
                probe_max_abs: probe_dev.max_abs,
                bound: report.deviation_bound.unwrap_or(0.0),
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "tau,pruned_units,param_reduction,mac_reduction,max_abs,argmax_agreement";

fn csv_float(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn write_sweep_csv(points: &[SweepPoint], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_float(p.tau),
            p.pruned_units,
            csv_float(p.param_reduction),
            csv_float(p.mac_reduction),
            csv_float(p.max_abs),
            csv_float(p.argmax_agreement)
        )?;
    }
    Ok(())
}
