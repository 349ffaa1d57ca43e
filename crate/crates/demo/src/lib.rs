//! Browser demo for `unitprune`.
//!
//! Three operations on a small generated detection head (`C·7·7 → 64 → 10`)
//! and scene (`C` channels, 14×14): a threshold sweep, a per-channel view of
//! one pooled ROI, and top-N class pruning. The plain functions are callable
//! natively; the `js_*` wrappers are the wasm exports.

use wasm_bindgen::prelude::*;

use unitprune::{
    channel_sums, gen_network, gen_scene, output, prune_output_topn, roi_pool, sweep,
    write_sweep_csv, Network, NetworkSpec, Roi, Scene, SceneSpec, Vector,
};

pub const CHANNELS: usize = 32;
pub const MAP_SIZE: usize = 14;
pub const POOL: usize = 7;
pub const N_ROIS: usize = 150;
pub const HIDDEN: usize = 64;
pub const CLASSES: usize = 10;
pub const SWEEP_POINTS: usize = 16;

fn scene(zero_channels: usize, seed: u32) -> Result<Scene, String> {
    if zero_channels > CHANNELS {
        return Err(format!("at most {CHANNELS} zero channels, got {zero_channels}"));
    }
    gen_scene(&SceneSpec {
        channels: CHANNELS,
        height: MAP_SIZE,
        width: MAP_SIZE,
        zero_channels,
        n_rois: N_ROIS,
        pool_h: POOL,
        pool_w: POOL,
        seed: seed.into(),
    })
    .map_err(|e| e.to_string())
}

fn head(seed: u32) -> Network {
    let sizes = vec![CHANNELS * POOL * POOL, HIDDEN, CLASSES];
    gen_network(&NetworkSpec::new(sizes, 0.0, seed.into())).expect("valid sizes")
}

/// `0` followed by geometric steps from half the smallest positive channel
/// sum up to the largest, so the sweep ends with every channel pruned.
pub fn sweep_thresholds(sums: &Vector) -> Vec<f64> {
    let positive = || sums.as_slice().iter().copied().filter(|&s| s > 0.0);
    let lo = positive().fold(f64::INFINITY, f64::min) / 2.0;
    let hi = positive().fold(0.0, f64::max);
    let mut taus = vec![0.0];
    if lo.is_finite() && hi > 0.0 {
        let steps = SWEEP_POINTS - 2;
        taus.extend((0..=steps).map(|i| lo * (hi / lo).powf(i as f64 / steps as f64)));
        *taus.last_mut().unwrap() = hi;
    }
    taus
}

/// Threshold sweep as CSV: channels pruned, first-layer reduction and
/// deviation over every ROI per threshold.
pub fn sweep_csv(zero_channels: usize, seed: u32) -> Result<String, String> {
    let scene = scene(zero_channels, seed)?;
    let net = head(seed);
    let taus = sweep_thresholds(&channel_sums(&scene.map));
    let points = sweep(&net, &scene, &taus).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv).map_err(|e| e.to_string())?;
    String::from_utf8(csv).map_err(|e| e.to_string())
}

/// Per-channel sum of the pooled vector for the box `[x0, x1) × [y0, y1)`.
/// Channels at zero here contribute nothing to this ROI.
pub fn roi_channel_activity(
    zero_channels: usize,
    seed: u32,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
) -> Result<Vec<f64>, String> {
    let scene = scene(zero_channels, seed)?;
    let roi = Roi { x0, y0, x1, y1 };
    let pooled = roi_pool(&scene.map, &roi, POOL, POOL).map_err(|e| e.to_string())?;
    Ok(pooled
        .as_slice()
        .chunks(POOL * POOL)
        .map(|cell| cell.iter().sum())
        .collect())
}

/// Keeps the `n` classes a separate scorer ranks highest, then classifies a
/// random box with both heads. Returns a JSON object.
pub fn topn_json(n: usize, seed: u32) -> Result<String, String> {
    let net = head(seed);
    let scene = scene(0, seed)?;
    let x = &scene.examples()[0];
    // The scorer sees the whole map, not the box being classified.
    let scores = output(&net, &scene.probe()).map_err(|e| e.to_string())?;
    let (pruned, map, report) = prune_output_topn(&net, &scores, n).map_err(|e| e.to_string())?;
    let before = output(&net, x).map_err(|e| e.to_string())?.argmax().unwrap();
    let after = output(&pruned, x)
        .map_err(|e| e.to_string())?
        .argmax()
        .and_then(|j| map.original_index(j))
        .unwrap();
    let kept: Vec<String> = map.kept.iter().map(|e| e.index.to_string()).collect();
    let scores: Vec<String> = scores.as_slice().iter().map(|s| s.to_string()).collect();
    Ok(format!(
        "{{\"scores\":[{}],\"kept\":[{}],\"argmax_before\":{before},\"argmax_after\":{after},\"params_removed\":{},\"row_reduction\":{}}}",
        scores.join(","),
        kept.join(","),
        report.params_removed(),
        (CLASSES - n) as f64 / CLASSES as f64,
    ))
}

#[wasm_bindgen(js_name = sweepCsv)]
pub fn js_sweep_csv(zero_channels: usize, seed: u32) -> Result<String, JsError> {
    sweep_csv(zero_channels, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = roiChannelActivity)]
pub fn js_roi_channel_activity(
    zero_channels: usize,
    seed: u32,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
) -> Result<Vec<f64>, JsError> {
    roi_channel_activity(zero_channels, seed, x0, y0, x1, y1).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = topnJson)]
pub fn js_topn_json(n: usize, seed: u32) -> Result<String, JsError> {
    topn_json(n, seed).map_err(|e| JsError::new(&e))
}
