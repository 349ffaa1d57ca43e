//! One image-level feature map and the many ROI-pooled boxes cut from it.
//!
//! ROI cells are max-pooled from a nonnegative map, so a channel that is zero
//! everywhere on the map pools to zero in every box. Pruning decided on the
//! whole map therefore holds exactly for the whole collection of boxes.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::fmt_f64;

pub const FORMAT_VERSION: u32 = 1;

/// A `C×H×W` nonnegative map, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    /// Negative zeros are stored as `+0.0`.
    pub fn new(channels: usize, height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::contract(format!(
                "feature map {channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract(format!(
                "feature map value {} at flat index {i} is not a finite nonnegative number",
                data[i]
            )));
        }
        for v in data.iter_mut().filter(|v| **v == 0.0) {
            *v = 0.0;
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// The box covering the whole map.
    pub fn full_roi(&self) -> Roi {
        Roi {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }
}

/// A half-open box `[x0, x1) × [y0, y1)` in feature-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    pub fn validate(&self, map: &FeatureMap) -> Result<()> {
        if self.x0 < self.x1 && self.x1 <= map.width && self.y0 < self.y1 && self.y1 <= map.height {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "roi ({}, {}, {}, {}) is empty or outside a {}x{} map",
                self.x0, self.y0, self.x1, self.y1, map.width, map.height
            )))
        }
    }
}

/// Span of pooling cell `i` of `cells` over an extent of `len` samples.
/// Boundaries are `floor(i·len/cells)`; a cell is widened to one sample
/// when the extent is shorter than the grid.
fn cell_span(i: usize, len: usize, cells: usize) -> (usize, usize) {
    let start = i * len / cells;
    let end = ((i + 1) * len / cells).max(start + 1);
    (start, end)
}

/// Max-pools `roi` into a `pool_h × pool_w` grid per channel; output is
/// flattened channel-major, then row-major within the grid.
pub fn roi_pool(map: &FeatureMap, roi: &Roi, pool_h: usize, pool_w: usize) -> Result<Vector> {
    roi.validate(map)?;
    if pool_h == 0 || pool_w == 0 {
        return Err(Error::contract("pooling grid must be at least 1x1"));
    }
    let (h_roi, w_roi) = (roi.y1 - roi.y0, roi.x1 - roi.x0);
    let mut out = Vec::with_capacity(map.channels * pool_h * pool_w);
    for c in 0..map.channels {
        for i in 0..pool_h {
            let (ys, ye) = cell_span(i, h_roi, pool_h);
            for j in 0..pool_w {
                let (xs, xe) = cell_span(j, w_roi, pool_w);
                let mut m = 0.0f64;
                for y in roi.y0 + ys..roi.y0 + ye {
                    for x in roi.x0 + xs..roi.x0 + xe {
                        m = m.max(map.at(c, y, x));
                    }
                }
                out.push(m);
            }
        }
    }
    Vector::new(out)
}

/// Spatial sum of every channel.
pub fn channel_sums(map: &FeatureMap) -> Vector {
    let sums = (0..map.channels)
        .map(|c| map.channel(c).iter().sum())
        .collect();
    Vector::new(sums).expect("sums of finite values")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub map: FeatureMap,
    pub rois: Vec<Roi>,
    pub pool_h: usize,
    pub pool_w: usize,
}

impl Scene {
    pub fn new(map: FeatureMap, rois: Vec<Roi>, pool_h: usize, pool_w: usize) -> Result<Self> {
        if pool_h == 0 || pool_w == 0 {
            return Err(Error::validation("pool_h and pool_w must be at least 1"));
        }
        for (i, roi) in rois.iter().enumerate() {
            roi.validate(&map)
                .map_err(|e| Error::validation(format!("roi {i}: {e}")))?;
        }
        Ok(Scene {
            map,
            rois,
            pool_h,
            pool_w,
        })
    }

    /// Length of one pooled box vector, `C · pool_h · pool_w`.
    pub fn pooled_dim(&self) -> usize {
        self.map.channels * self.pool_h * self.pool_w
    }

    /// The whole map pooled to the box grid; the probe the collection is
    /// specialized from.
    pub fn probe(&self) -> Vector {
        roi_pool(&self.map, &self.map.full_roi(), self.pool_h, self.pool_w)
            .expect("full roi is valid")
    }

    /// Pooled vectors for every ROI, in ROI order.
    pub fn examples(&self) -> Vec<Vector> {
        let pool = |roi: &Roi| {
            roi_pool(&self.map, roi, self.pool_h, self.pool_w).expect("validated roi")
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.rois.par_iter().map(pool).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.rois.iter().map(pool).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Scene file format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    version: u32,
    #[serde(rename = "C")]
    channels: usize,
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    pool_h: usize,
    pool_w: usize,
    data: Vec<f64>,
    rois: Vec<[usize; 4]>,
}

pub fn save_scene(scene: &Scene) -> Vec<u8> {
    let m = &scene.map;
    let mut s = String::new();
    let _ = write!(
        s,
        "{{\n  \"version\": {FORMAT_VERSION},\n  \"C\": {},\n  \"H\": {},\n  \"W\": {},\n  \"pool_h\": {},\n  \"pool_w\": {},\n  \"data\": [",
        m.channels, m.height, m.width, scene.pool_h, scene.pool_w
    );
    let mut first = true;
    for c in 0..m.channels {
        for y in 0..m.height {
            let row = &m.channel(c)[y * m.width..(y + 1) * m.width];
            if row.is_empty() {
                continue;
            }
            if !first {
                s.push(',');
            }
            first = false;
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            let _ = write!(s, "\n    {}", line.join(", "));
        }
    }
    s.push_str(if first { "],\n" } else { "\n  ],\n" });
    s.push_str("  \"rois\": [");
    for (i, r) in scene.rois.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "\n    [{}, {}, {}, {}]", r.x0, r.y0, r.x1, r.y1);
    }
    s.push_str(if scene.rois.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
    s.into_bytes()
}

pub fn load_scene(bytes: &[u8]) -> Result<Scene> {
    let doc: SceneDoc = serde_json::from_slice(bytes)?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported scene format version {}",
            doc.version
        )));
    }
    let map = FeatureMap::new(doc.channels, doc.height, doc.width, doc.data)
        .map_err(|e| Error::validation(e.to_string()))?;
    let rois = doc
        .rois
        .into_iter()
        .map(|[x0, y0, x1, y1]| Roi { x0, y0, x1, y1 })
        .collect();
    Scene::new(map, rois, doc.pool_h, doc.pool_w)
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub zero_channels: usize,
    pub n_rois: usize,
    pub pool_h: usize,
    pub pool_w: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    /// VGG16 conv5 geometry: 512 channels pooled to 7×7.
    fn default() -> Self {
        SceneSpec {
            channels: 512,
            height: 14,
            width: 14,
            zero_channels: 0,
            n_rois: 1000,
            pool_h: 7,
            pool_w: 7,
            seed: 0,
        }
    }
}

/// Random scene with exactly `zero_channels` all-zero channels. Every other
/// channel has a random density in [0.05, 0.6] and a random scale in (0, 1],
/// with at least one positive cell, so channel sums spread over a wide range.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.zero_channels > spec.channels {
        return Err(Error::contract(format!(
            "zero_channels {} exceeds channel count {}",
            spec.zero_channels, spec.channels
        )));
    }
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::contract("feature map height and width must be at least 1"));
    }
    if spec.pool_h == 0 || spec.pool_w == 0 {
        return Err(Error::contract("pooling grid must be at least 1x1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plane = spec.height * spec.width;
    let mut dead = vec![false; spec.channels];
    for c in sample(&mut rng, spec.channels, spec.zero_channels) {
        dead[c] = true;
    }
    let mut data = vec![0.0; spec.channels * plane];
    for (c, cells) in data.chunks_mut(plane).enumerate() {
        if dead[c] {
            continue;
        }
        let density: f64 = rng.random_range(0.05..=0.6);
        let scale = 1.0 - rng.random::<f64>();
        for v in cells.iter_mut() {
            if rng.random_bool(density) {
                *v = scale * (1.0 - rng.random::<f64>());
            }
        }
        let forced = rng.random_range(0..plane);
        if cells[forced] == 0.0 {
            cells[forced] = scale * (1.0 - rng.random::<f64>());
        }
    }
    let rois = (0..spec.n_rois)
        .map(|_| {
            let x0 = rng.random_range(0..spec.width);
            let x1 = rng.random_range(x0 + 1..=spec.width);
            let y0 = rng.random_range(0..spec.height);
            let y1 = rng.random_range(y0 + 1..=spec.height);
            Roi { x0, y0, x1, y1 }
        })
        .collect();
    let map = FeatureMap::new(spec.channels, spec.height, spec.width, data)?;
    Scene::new(map, rois, spec.pool_h, spec.pool_w)
}
