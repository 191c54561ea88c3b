//! Assign ink components to blob lines by graph-cut energy minimization.

mod energy;
mod maxflow;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use energy::{EnergyProblem, Labeling, BRUTE_FORCE_LIMIT};

use crate::blob_detect::BlobLineMap;
use crate::doc_io::{BinaryImage, LabelMap, LineGroundTruth};
use crate::error::{Error, Result};
use crate::grid::label_components_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: usize,
    pub pixels: Vec<(usize, usize)>,
    /// Mean (row, col) of the pixels.
    pub centroid: (f64, f64),
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// 8-connected components, numbered by first pixel in row-major order.
pub fn extract_components(ink: &BinaryImage) -> Vec<Component> {
    let (h, w) = ink.dims();
    let (labels, n) = label_components_8(ink.mask(), h, w);
    let mut pixels = vec![Vec::new(); n as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            pixels[l as usize - 1].push((i / w, i % w));
        }
    }
    pixels
        .into_iter()
        .enumerate()
        .map(|(id, px)| {
            let n = px.len() as f64;
            let (sr, sc) = px.iter().fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
            Component {
                id,
                centroid: (sr / n, sc / n),
                pixels: px,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub num_nodes: usize,
    /// `(i, j, centroid distance)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize, f64)>,
    /// `1 / (2 * mean edge distance)`; `None` without edges.
    pub beta: Option<f64>,
}

fn centroid_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Symmetric closure of the k-nearest-neighbour relation on centroids.
pub fn build_neighbors(comps: &[Component], k: usize) -> NeighborGraph {
    let n = comps.len();
    let mut pairs = BTreeSet::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (centroid_distance(comps[i].centroid, comps[j].centroid), j)));
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let edges: Vec<(usize, usize, f64)> = pairs
        .into_iter()
        .map(|(i, j)| (i, j, centroid_distance(comps[i].centroid, comps[j].centroid)))
        .collect();
    NeighborGraph {
        num_nodes: n,
        beta: beta_from_distances(edges.iter().map(|e| e.2)),
        edges,
    }
}

pub fn beta_from_distances(d: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = d.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| 1.0 / (2.0 * sum / n as f64))
}

/// `exp(-beta * d)`; exactly 1 at `d = 0` even when `beta` is infinite.
pub fn smoothness_weight(d: f64, beta: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else {
        (-beta * d).exp()
    }
}

/// Distance from `centroid` to the nearest pixel of `blob`, by exhaustive scan.
pub fn data_cost(centroid: (f64, f64), blob: &[(usize, usize)]) -> Result<f64> {
    if blob.is_empty() {
        return Err(Error::invalid("data cost against an empty blob line"));
    }
    Ok(blob
        .iter()
        .map(|&(r, c)| centroid_distance(centroid, (r as f64, c as f64)))
        .fold(f64::INFINITY, f64::min))
}

/// Nearest-pixel queries against every blob line. Only boundary pixels and
/// the pixel under the query point can be nearest, so those are all that is scanned.
pub struct BlobDistance<'a> {
    blobs: &'a BlobLineMap,
    boundary: Vec<Vec<(usize, usize)>>,
}

impl<'a> BlobDistance<'a> {
    pub fn new(blobs: &'a BlobLineMap) -> Self {
        let (h, w) = blobs.dims();
        let lab = &blobs.labels;
        let mut boundary = vec![Vec::new(); blobs.count as usize];
        for r in 0..h {
            for c in 0..w {
                let l = lab.get(r, c);
                if l == 0 {
                    continue;
                }
                let same = |dr: isize, dc: isize| {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w && lab.get(nr as usize, nc as usize) == l
                };
                if !(same(-1, 0) && same(1, 0) && same(0, -1) && same(0, 1)) {
                    boundary[l as usize - 1].push((r, c));
                }
            }
        }
        BlobDistance { blobs, boundary }
    }

    pub fn distance(&self, point: (f64, f64), id: u32) -> f64 {
        let (h, w) = self.blobs.dims();
        let (rr, rc) = (point.0.round(), point.1.round());
        if rr >= 0.0 && rc >= 0.0 && (rr as usize) < h && (rc as usize) < w && self.blobs.labels.get(rr as usize, rc as usize) == id {
            return centroid_distance(point, (rr, rc));
        }
        self.boundary[id as usize - 1]
            .iter()
            .map(|&(r, c)| centroid_distance(point, (r as f64, c as f64)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest blob among `ids`, lowest id on ties.
    pub fn nearest(&self, point: (f64, f64), ids: impl Iterator<Item = u32>) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for id in ids {
            let d = self.distance(point, id);
            if d < best.0 || (d == best.0 && id < best.1) {
                best = (d, id);
            }
        }
        best.1
    }
}

/// Energy instance over components, labels `k` standing for blob id `k + 1`.
pub fn build_problem(comps: &[Component], graph: &NeighborGraph, blobs: &BlobLineMap) -> Result<EnergyProblem> {
    if blobs.is_empty() {
        return Err(Error::invalid("no blob lines to assign components to"));
    }
    let dist = BlobDistance::new(blobs);
    let l = blobs.count as usize;
    let mut unary = Vec::with_capacity(comps.len() * l);
    for c in comps {
        for id in 1..=blobs.count {
            unary.push(dist.distance(c.centroid, id));
        }
    }
    let beta = graph.beta.unwrap_or(0.0);
    let edges = graph.edges.iter().map(|&(i, j, d)| (i, j, smoothness_weight(d, beta))).collect();
    EnergyProblem::new(comps.len(), l, unary, edges)
}

/// Blob id per component and the energy of that assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineLabeling {
    pub blob_ids: Vec<u32>,
    pub energy: f64,
}

impl LineLabeling {
    fn from_labeling(l: Labeling) -> Self {
        LineLabeling {
            blob_ids: l.labels.iter().map(|&k| k as u32 + 1).collect(),
            energy: l.energy,
        }
    }
}

pub fn minimize_energy(comps: &[Component], graph: &NeighborGraph, blobs: &BlobLineMap) -> Result<LineLabeling> {
    Ok(LineLabeling::from_labeling(build_problem(comps, graph, blobs)?.minimize()?))
}

pub fn brute_force_labeling(comps: &[Component], graph: &NeighborGraph, blobs: &BlobLineMap) -> Result<LineLabeling> {
    Ok(LineLabeling::from_labeling(build_problem(comps, graph, blobs)?.brute_force()?))
}

/// Per-pixel labels for `comp`. A component overlapping two or more blob
/// lines is split pixel-wise to the nearest of those lines.
pub fn split_touching(comp: &Component, label: u32, blobs: &BlobLineMap, dist: &BlobDistance) -> Vec<u32> {
    let touched: BTreeSet<u32> = comp
        .pixels
        .iter()
        .map(|&(r, c)| blobs.labels.get(r, c))
        .filter(|&l| l > 0)
        .collect();
    if touched.len() < 2 {
        return vec![label; comp.pixels.len()];
    }
    comp.pixels
        .iter()
        .map(|&(r, c)| dist.nearest((r as f64, c as f64), touched.iter().copied()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub labels: LabelMap,
    pub line_pixels: BTreeMap<u32, usize>,
    /// Outline per line as (x, y) vertices.
    pub polygons: BTreeMap<u32, Vec<(i64, i64)>>,
    /// Set when no blob line was found and all ink became line 1.
    pub fallback: bool,
}

impl SegmentationResult {
    pub fn line_count(&self) -> usize {
        self.line_pixels.len()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            id: u32,
            pixels: usize,
            polygon: &'a [(i64, i64)],
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            height: usize,
            width: usize,
            fallback: bool,
            lines: Vec<Line<'a>>,
        }
        let doc = Doc {
            height: self.labels.height(),
            width: self.labels.width(),
            fallback: self.fallback,
            lines: self
                .line_pixels
                .iter()
                .map(|(&id, &pixels)| Line {
                    id,
                    pixels,
                    polygon: &self.polygons[&id],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn to_page_xml(&self, image_filename: &str) -> String {
        let lines: Vec<LineGroundTruth> = self
            .polygons
            .iter()
            .map(|(id, poly)| LineGroundTruth {
                line_id: format!("line_{id}"),
                polygon: poly.clone(),
                region_id: Some("region_1".into()),
            })
            .collect();
        crate::doc_io::write_page_xml(&lines, image_filename, self.labels.height(), self.labels.width())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Width of the profile bins used to outline a line.
const OUTLINE_BIN: usize = 4;

/// Outline of a pixel set as a staircase polygon following its upper and
/// lower profile in bins along the longer axis. Pixel centres lie strictly inside.
pub fn outline_polygon(pixels: &[(usize, usize)]) -> Vec<(i64, i64)> {
    if pixels.is_empty() {
        return Vec::new();
    }
    let (r0, r1) = pixels.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (c0, c1) = pixels.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let horizontal = c1 - c0 >= r1 - r0;
    // (along, across) coordinates
    let pts: Vec<(usize, usize)> = pixels.iter().map(|&(r, c)| if horizontal { (c, r) } else { (r, c) }).collect();
    let start = if horizontal { c0 } else { r0 };
    let mut bins: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &(a, x) in &pts {
        let e = bins.entry((a - start) / OUTLINE_BIN).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    let along_max = if horizontal { c1 } else { r1 } + 1;
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (&b, &(lo, hi)) in &bins {
        let a0 = (start + b * OUTLINE_BIN) as i64;
        let a1 = ((start + (b + 1) * OUTLINE_BIN).min(along_max)) as i64;
        upper.push((a0, lo as i64));
        upper.push((a1, lo as i64));
        lower.push((a0, hi as i64 + 1));
        lower.push((a1, hi as i64 + 1));
    }
    lower.reverse();
    upper
        .into_iter()
        .chain(lower)
        .map(|(a, x)| if horizontal { (a, x) } else { (x, a) })
        .collect()
}

/// Paint components by their labels (splitting multi-line components) and
/// outline each line.
pub fn assemble_segmentation(
    comps: &[Component],
    labeling: &LineLabeling,
    blobs: &BlobLineMap,
    dims: (usize, usize),
) -> Result<SegmentationResult> {
    if labeling.blob_ids.len() != comps.len() {
        return Err(Error::invalid("labeling does not cover every component"));
    }
    let mut labels = LabelMap::zeros(dims.0, dims.1);
    let dist = BlobDistance::new(blobs);
    for (c, &l) in comps.iter().zip(&labeling.blob_ids) {
        for (&(r, col), lab) in c.pixels.iter().zip(split_touching(c, l, blobs, &dist)) {
            labels.set(r, col, lab);
        }
    }
    Ok(finish(labels, false))
}

/// Every ink pixel as line 1.
pub fn single_line_fallback(ink: &BinaryImage) -> SegmentationResult {
    let (h, w) = ink.dims();
    let labels = LabelMap::new(h, w, ink.mask().iter().map(|&m| m as u32).collect()).expect("dims");
    finish(labels, true)
}

fn finish(labels: LabelMap, fallback: bool) -> SegmentationResult {
    let w = labels.width();
    let mut per_line: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            per_line.entry(l).or_default().push((i / w, i % w));
        }
    }
    SegmentationResult {
        line_pixels: per_line.iter().map(|(&l, px)| (l, px.len())).collect(),
        polygons: per_line.iter().map(|(&l, px)| (l, outline_polygon(px))).collect(),
        labels,
        fallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineParams {
    /// Neighbours per component before symmetric closure.
    pub k_neighbors: usize,
}

impl Default for LineParams {
    fn default() -> Self {
        LineParams { k_neighbors: 4 }
    }
}

/// Components, neighbour graph, expansion, assembly; single-line fallback
/// when there are no blob lines.
pub fn extract_lines(ink: &BinaryImage, blobs: &BlobLineMap, params: &LineParams) -> Result<SegmentationResult> {
    if blobs.dims() != ink.dims() {
        return Err(Error::invalid("blob map and ink mask differ in size"));
    }
    if blobs.is_empty() {
        log::warn!("no blob lines: labeling the whole page as one line");
        return Ok(single_line_fallback(ink));
    }
    let comps = extract_components(ink);
    let graph = build_neighbors(&comps, params.k_neighbors);
    let labeling = minimize_energy(&comps, &graph, blobs)?;
    assemble_segmentation(&comps, &labeling, blobs, ink.dims())
}
