//! Near-binary mask to instance mask: threshold, fill small holes, exact
//! Euclidean distance transform, marker-based watershed on the distances.
//!
//! Foreground uses 8-connectivity and background (holes) 4-connectivity.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageGrid, InstanceMask};

pub const DEFAULT_MAX_HOLE_AREA: usize = 64;
pub const DEFAULT_MIN_MARKER_DISTANCE: f64 = 5.0;
pub const DEFAULT_MIN_MARKER_HEIGHT: f64 = 2.0;
pub const DEFAULT_MIN_MARKER_DYNAMIC: f64 = 1.0;

const NEIGHBORS_4: [(i64, i64); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
const NEIGHBORS_8: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn neighbors(p: usize, (h, w): (usize, usize), offsets: &'static [(i64, i64)]) -> impl Iterator<Item = usize> {
    let (r, c) = ((p / w) as i64, (p % w) as i64);
    offsets.iter().filter_map(move |&(dr, dc)| {
        let (rr, cc) = (r + dr, c + dc);
        (rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64).then(|| rr as usize * w + cc as usize)
    })
}

/// Foreground iff `value >= threshold`; the default threshold is the
/// midpoint of the declared range.
pub fn binarize(img: &ImageGrid, threshold: Option<f64>) -> BinaryMask {
    let t = threshold.unwrap_or_else(|| img.range().midpoint());
    let bits = img.values().iter().map(|&v| v >= t).collect();
    BinaryMask::new(img.height(), img.width(), bits).expect("same dims as image")
}

/// Fills 4-connected background components that do not touch the border
/// and have at most `max_hole_area` pixels.
pub fn fill_holes(mask: &BinaryMask, max_hole_area: usize) -> BinaryMask {
    let dims = mask.dims();
    let (h, w) = dims;
    let bits = mask.bits();
    let mut out = bits.to_vec();
    let mut visited = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        component.clear();
        let mut touches_border = false;
        while let Some(p) = queue.pop_front() {
            component.push(p);
            let (r, c) = (p / w, p % w);
            touches_border |= r == 0 || c == 0 || r == h - 1 || c == w - 1;
            for q in neighbors(p, dims, &NEIGHBORS_4) {
                if !bits[q] && !visited[q] {
                    visited[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if !touches_border && component.len() <= max_hole_area {
            for &p in &component {
                out[p] = true;
            }
        }
    }
    BinaryMask::new(h, w, out).expect("same dims")
}

/// Euclidean distance of every foreground pixel to the nearest background
/// pixel; zero on background. A mask with no background has infinite
/// distances everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DistanceMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Lower envelope of the parabolas `(q - v)^2 + f[v]` over the finite
/// samples of `f`, written back into `f`. Values stay exact integers.
fn squared_edt_1d(f: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    let n = f.len();
    sites.clear();
    bounds.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let vf = v as f64;
            let s = ((f[q] + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
            if s <= *bounds.last().expect("paired with sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        return;
    }
    let src: Vec<f64> = sites.iter().map(|&v| f[v]).collect();
    let mut k = 0;
    for (q, out) in f.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while k + 1 < sites.len() && bounds[k + 1] < qf {
            k += 1;
        }
        let d = qf - sites[k] as f64;
        *out = d * d + src[k];
    }
}

/// Exact Euclidean distance transform by two 1-D passes (columns, then rows)
/// over squared distances.
pub fn distance_transform(mask: &BinaryMask) -> DistanceMap {
    let (h, w) = mask.dims();
    let mut sq: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&fg| if fg { f64::INFINITY } else { 0.0 })
        .collect();
    let (mut sites, mut bounds) = (Vec::new(), Vec::new());
    let mut column = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            column[r] = sq[r * w + c];
        }
        squared_edt_1d(&mut column, &mut sites, &mut bounds);
        for r in 0..h {
            sq[r * w + c] = column[r];
        }
    }
    for row in sq.chunks_mut(w) {
        squared_edt_1d(row, &mut sites, &mut bounds);
    }
    DistanceMap {
        height: h,
        width: w,
        values: sq.into_iter().map(f64::sqrt).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatershedParams {
    pub min_marker_distance: f64,
    pub min_marker_height: f64,
    /// How far the distance must drop between a maximum and any higher one
    /// before both count as separate seeds.
    pub min_marker_dynamic: f64,
}

impl Default for WatershedParams {
    fn default() -> Self {
        WatershedParams {
            min_marker_distance: DEFAULT_MIN_MARKER_DISTANCE,
            min_marker_height: DEFAULT_MIN_MARKER_HEIGHT,
            min_marker_dynamic: DEFAULT_MIN_MARKER_DYNAMIC,
        }
    }
}

/// Flooding order: larger distance first, then smaller row-major index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FloodEntry {
    dist: f64,
    pixel: usize,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| other.pixel.cmp(&self.pixel))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected foreground components; `0` is background, components are
/// numbered from 1 in raster order.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let dims = mask.dims();
    let bits = mask.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for q in neighbors(p, dims, &NEIGHBORS_8) {
                if bits[q] && labels[q] == 0 {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
    }
    (labels, next)
}

fn find_root(parent: &mut [usize], mut p: usize) -> usize {
    while parent[p] != p {
        parent[p] = parent[parent[p]];
        p = parent[p];
    }
    p
}

/// Regional maxima of `dist` over the foreground, each paired with its
/// dynamic: the drop from the maximum to the level at which its flooded
/// region first meets a region holding a higher maximum. The highest
/// maximum of every component gets `f64::INFINITY`. A plateau yields one
/// entry at its first pixel in flooding order.
pub fn regional_maxima(dist: &DistanceMap, mask: &BinaryMask) -> Vec<(usize, f64)> {
    let dims = mask.dims();
    let bits = mask.bits();
    let d = dist.values();
    let mut order: Vec<usize> = (0..bits.len()).filter(|&p| bits[p]).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));

    const UNSEEN: usize = usize::MAX;
    let mut parent = vec![UNSEEN; bits.len()];
    // Per root: the peak pixel of the region.
    let mut peak = vec![UNSEEN; bits.len()];
    let mut dynamic = vec![f64::INFINITY; bits.len()];
    let mut peaks = Vec::new();
    for &p in &order {
        parent[p] = p;
        peak[p] = p;
        let mut root = p;
        let mut joined = false;
        for q in neighbors(p, dims, &NEIGHBORS_8) {
            if parent[q] == UNSEEN {
                continue;
            }
            let other = find_root(&mut parent, q);
            if other == root {
                continue;
            }
            if !joined {
                // First processed neighbor: p simply extends that region.
                parent[root] = other;
                root = other;
                joined = true;
                continue;
            }
            // Two regions meet at level d[p]; the lower peak ends here.
            let (a, b) = (peak[root], peak[other]);
            let a_wins = d[a] > d[b] || (d[a] == d[b] && a < b);
            let (winner, loser) = if a_wins { (a, b) } else { (b, a) };
            dynamic[loser] = d[loser] - d[p];
            parent[other] = root;
            peak[root] = winner;
        }
        if !joined {
            peaks.push(p);
        }
    }
    peaks.into_iter().map(|p| (p, dynamic[p])).collect()
}

/// Seed pixels for the flood, in raster order.
///
/// Candidates are regional maxima of `dist` at least `min_marker_height`
/// high whose dynamic is at least `min_marker_dynamic`. They are thinned
/// greedily, highest first with ties by raster index, dropping any
/// candidate closer than `min_marker_distance` to a kept marker of the same
/// connected component. A component left without markers is seeded at its
/// highest pixel.
pub fn find_markers(dist: &DistanceMap, mask: &BinaryMask, params: &WatershedParams) -> Vec<usize> {
    let dims = mask.dims();
    let w = dims.1;
    let bits = mask.bits();
    let d = dist.values();
    let (components, count) = label_components(mask);

    let mut candidates: Vec<usize> = regional_maxima(dist, mask)
        .into_iter()
        .filter(|&(p, dynamic)| d[p] >= params.min_marker_height && dynamic >= params.min_marker_dynamic)
        .map(|(p, _)| p)
        .collect();
    candidates.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));

    let min_sq = params.min_marker_distance * params.min_marker_distance;
    let mut kept_by_component: Vec<Vec<usize>> = vec![Vec::new(); count as usize + 1];
    for p in candidates {
        let kept = &mut kept_by_component[components[p] as usize];
        let (r, c) = ((p / w) as f64, (p % w) as f64);
        let crowded = kept.iter().any(|&q| {
            let (dr, dc) = ((q / w) as f64 - r, (q % w) as f64 - c);
            dr * dr + dc * dc < min_sq
        });
        if !crowded {
            kept.push(p);
        }
    }

    let mut best: Vec<Option<usize>> = vec![None; count as usize + 1];
    for p in (0..bits.len()).filter(|&p| bits[p]) {
        let slot = &mut best[components[p] as usize];
        if slot.is_none_or(|q| d[p] > d[q]) {
            *slot = Some(p);
        }
    }
    let mut markers = Vec::new();
    for (label, kept) in kept_by_component.iter().enumerate().skip(1) {
        if kept.is_empty() {
            markers.extend(best[label]);
        } else {
            markers.extend_from_slice(kept);
        }
    }
    markers.sort_unstable();
    markers
}

/// Marker-controlled flood of the foreground in decreasing distance order.
/// Labels follow marker raster order.
pub fn watershed_instances(dist: &DistanceMap, mask: &BinaryMask, params: &WatershedParams) -> Result<InstanceMask> {
    if dist.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: mask.dims(),
            actual: dist.dims(),
        });
    }
    let dims = mask.dims();
    let bits = mask.bits();
    let d = dist.values();
    let mut labels = vec![0u32; bits.len()];
    let mut heap = BinaryHeap::new();
    for (i, &p) in find_markers(dist, mask, params).iter().enumerate() {
        labels[p] = i as u32 + 1;
        heap.push(FloodEntry { dist: d[p], pixel: p });
    }
    while let Some(FloodEntry { pixel, .. }) = heap.pop() {
        let label = labels[pixel];
        for q in neighbors(pixel, dims, &NEIGHBORS_8) {
            if bits[q] && labels[q] == 0 {
                labels[q] = label;
                heap.push(FloodEntry { dist: d[q], pixel: q });
            }
        }
    }
    InstanceMask::new(dims.0, dims.1, labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocParams {
    /// `None` selects the midpoint of the image's declared range.
    pub threshold: Option<f64>,
    pub max_hole_area: usize,
    pub watershed: WatershedParams,
}

impl Default for PostprocParams {
    fn default() -> Self {
        PostprocParams {
            threshold: None,
            max_hole_area: DEFAULT_MAX_HOLE_AREA,
            watershed: WatershedParams::default(),
        }
    }
}

/// binarize → fill holes → distance transform → watershed.
pub fn instances_from_image(img: &ImageGrid, params: &PostprocParams) -> Result<InstanceMask> {
    let mask = fill_holes(&binarize(img, params.threshold), params.max_hole_area);
    let dist = distance_transform(&mask);
    watershed_instances(&dist, &mask, &params.watershed)
}
