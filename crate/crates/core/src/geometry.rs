//! Spatiotemporal geometry for the hierarchical levels: coordinate
//! normalization, farthest-event sampling, radius grouping, relative
//! transforms and inverse-distance interpolation.
//!
//! All distances are Euclidean in the normalized `(nx, ny, nt)` cube;
//! polarity is carried along as a feature but never enters a distance.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub nx: f64,
    pub ny: f64,
    pub nt: f64,
    pub p: i8,
}

impl NormalizedPoint {
    #[inline]
    pub fn coords(&self) -> [f64; 3] {
        [self.nx, self.ny, self.nt]
    }

    #[inline]
    pub fn dist2(&self, other: &NormalizedPoint) -> f64 {
        let dx = self.nx - other.nx;
        let dy = self.ny - other.ny;
        let dt = self.nt - other.nt;
        dx * dx + dy * dy + dt * dt
    }
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

fn time_range(events: &[Event]) -> (u64, u64) {
    let lo = events.iter().map(|e| e.t).min().unwrap_or(0);
    let hi = events.iter().map(|e| e.t).max().unwrap_or(0);
    (lo, hi)
}

/// Maps pixel coordinates by `/(dim - 1)` and time affinely from the window's
/// `[t_min, t_max]`; a degenerate axis maps to 0.5.
pub fn normalize_coords(events: &[Event], geometry: &SensorGeometry) -> Vec<NormalizedPoint> {
    let (t_min, t_max) = time_range(events);
    let xmax = geometry.width.saturating_sub(1) as f64;
    let ymax = geometry.height.saturating_sub(1) as f64;
    events
        .iter()
        .map(|e| NormalizedPoint {
            nx: unit(e.x as f64, 0.0, xmax),
            ny: unit(e.y as f64, 0.0, ymax),
            nt: unit((e.t - t_min) as f64, 0.0, (t_max - t_min) as f64),
            p: e.p,
        })
        .collect()
}

/// Inverse of [`normalize_coords`] given the window's time range.
pub fn denormalize(point: &NormalizedPoint, geometry: &SensorGeometry, t_min: u64, t_max: u64) -> (u16, u16, u64) {
    let back = |v: f64, max: f64| if max > 0.0 { (v * max).round() } else { 0.0 };
    let x = back(point.nx, geometry.width.saturating_sub(1) as f64) as u16;
    let y = back(point.ny, geometry.height.saturating_sub(1) as f64) as u16;
    let t = t_min + back(point.nt, (t_max - t_min) as f64) as u64;
    (x, y, t)
}

/// One set-abstraction level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSpec {
    /// Centroid count `T`.
    pub centroids: usize,
    /// Group size `K`.
    pub group_size: usize,
    /// Grouping radius in normalized units.
    pub radius: f64,
    /// Output channel width `D`.
    pub channels: usize,
    /// Kernel width of the neighbor-axis convolutions (odd, at most `K`).
    pub kernel: usize,
}

impl LevelSpec {
    pub fn new(centroids: usize, group_size: usize, radius: f64, channels: usize) -> Self {
        let kernel = if group_size >= 3 { 3 } else { 1 };
        LevelSpec {
            centroids,
            group_size,
            radius,
            channels,
            kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ShapeMismatch(m));
        if self.centroids == 0 || self.group_size == 0 || self.channels == 0 {
            return bad(format!("level sizes must be positive: {self:?}"));
        }
        if !(self.radius > 0.0 && self.radius <= 3f64.sqrt()) {
            return bad(format!("radius {} outside (0, sqrt(3)]", self.radius));
        }
        if self.kernel % 2 == 0 || self.kernel > self.group_size {
            return bad(format!(
                "kernel width {} must be odd and at most K = {}",
                self.kernel, self.group_size
            ));
        }
        Ok(())
    }

    /// Full-size levels: T = [2048, 512, 64, 16], K = [64, 32, 16, 8].
    pub fn full() -> Vec<LevelSpec> {
        Self::stack(
            &[2048, 512, 64, 16],
            &[64, 32, 16, 8],
            &[0.05, 0.1, 0.2, 0.4],
            &[8, 16, 32, 64],
        )
    }

    /// Reduced levels for desk-scale training.
    pub fn desk() -> Vec<LevelSpec> {
        Self::stack(
            &[256, 64, 16, 8],
            &[16, 8, 8, 4],
            &[0.05, 0.1, 0.2, 0.4],
            &[8, 16, 32, 64],
        )
    }

    /// Two-level network small enough for finite-difference checks.
    pub fn tiny() -> Vec<LevelSpec> {
        Self::stack(&[8, 4], &[4, 2], &[0.5, 1.0], &[3, 3])
    }

    pub fn stack(t: &[usize], k: &[usize], r: &[f64], d: &[usize]) -> Vec<LevelSpec> {
        assert!(t.len() == k.len() && k.len() == r.len() && r.len() == d.len());
        (0..t.len()).map(|i| LevelSpec::new(t[i], k[i], r[i], d[i])).collect()
    }

    pub fn preset(name: &str) -> Result<Vec<LevelSpec>> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown level preset {other:?}"))),
        }
    }
}

/// Index of the starting centroid: the eligible point with the smallest
/// `(nt, nx, ny)`, ties to the lower index. On a time-sorted window this is
/// the earliest eligible event.
fn start_index(points: &[NormalizedPoint], eligible: &[bool]) -> Option<usize> {
    (0..points.len()).filter(|&i| eligible[i]).min_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.nt
            .total_cmp(&pb.nt)
            .then(pa.nx.total_cmp(&pb.nx))
            .then(pa.ny.total_cmp(&pb.ny))
            .then(a.cmp(&b))
    })
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &d) in values.iter().enumerate() {
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Farthest-event sampling over the eligible points. Each pick maximizes the
/// minimum distance to the picks so far (ties to the lower index). With fewer
/// than `t` eligible points, the chosen set is cycled to length `t`.
pub fn farthest_event_sampling(points: &[NormalizedPoint], t: usize, eligible: &[bool]) -> Result<Vec<usize>> {
    assert_eq!(points.len(), eligible.len());
    let start = start_index(points, eligible).ok_or(Error::NoEligibleEvents)?;
    let n_eligible = eligible.iter().filter(|&&e| e).count();
    let picks = t.min(n_eligible);

    let mut chosen = Vec::with_capacity(t);
    chosen.push(start);
    let mut min_d2: Vec<f64> = points
        .iter()
        .zip(eligible)
        .map(|(p, &ok)| if ok { p.dist2(&points[start]) } else { f64::NEG_INFINITY })
        .collect();
    min_d2[start] = f64::NEG_INFINITY;

    // the argmax for the next pick is tracked while distances are updated
    let mut best = argmax(&min_d2);
    while chosen.len() < picks {
        chosen.push(best);
        let c = points[best];
        min_d2[best] = f64::NEG_INFINITY;
        best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d > f64::NEG_INFINITY {
                let nd = points[i].dist2(&c);
                if nd < *d {
                    *d = nd;
                }
                if *d > best_d {
                    best_d = *d;
                    best = i;
                }
            }
        }
    }

    let distinct = chosen.len();
    for i in distinct..t {
        chosen.push(chosen[i % distinct]);
    }
    Ok(chosen)
}

/// Sampling with the fallback used by the network: when no event is
/// eligible every event becomes eligible.
pub fn sample_with_fallback(points: &[NormalizedPoint], t: usize, eligible: &[bool]) -> Vec<usize> {
    match farthest_event_sampling(points, t, eligible) {
        Ok(idx) => idx,
        Err(_) => {
            let all = vec![true; points.len()];
            farthest_event_sampling(points, t, &all).unwrap_or_default()
        }
    }
}

/// For each centroid, the `k` nearest points within `radius` (nearest first,
/// ties to the lower index), padded with the centroid's own index.
/// Returns a row-major `T x K` index grid.
pub fn ball_group(points: &[NormalizedPoint], centroids: &[usize], radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let index = TimeIndex::new(points);
    let mut grid = Vec::with_capacity(centroids.len() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    // a slightly wider time slab than the ball; membership is decided by d2
    let slab = radius * (1.0 + 1e-9) + 1e-12;
    for &c in centroids {
        let cp = points[c];
        cand.clear();
        cand.extend(
            index
                .range(cp.nt - slab, cp.nt + slab)
                .iter()
                .map(|&i| (points[i].dist2(&cp), i))
                .filter(|&(d, _)| d <= r2),
        );
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if cand.len() > k {
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist);
        grid.extend(cand.iter().map(|&(_, i)| i));
        grid.extend(std::iter::repeat_n(c, k - cand.len()));
    }
    grid
}

/// Point indices ordered by normalized time, for pruning spatiotemporal
/// searches to a time slab.
struct TimeIndex {
    order: Vec<usize>,
    times: Vec<f64>,
}

impl TimeIndex {
    fn new(points: &[NormalizedPoint]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].nt.total_cmp(&points[b].nt).then(a.cmp(&b)));
        let times = order.iter().map(|&i| points[i].nt).collect();
        TimeIndex { order, times }
    }

    fn lower(&self, t: f64) -> usize {
        self.times.partition_point(|&v| v < t)
    }

    fn range(&self, lo: f64, hi: f64) -> &[usize] {
        let a = self.lower(lo);
        let b = self.times.partition_point(|&v| v <= hi);
        &self.order[a..b.max(a)]
    }
}

/// Relative channels `(dnx, dny, dnt, p)` of every grouped member against its
/// centroid, shape `T x K x 4`.
pub fn relative_transform(points: &[NormalizedPoint], grid: &[usize], centroids: &[usize], k: usize) -> Array3<f64> {
    let t = centroids.len();
    assert_eq!(grid.len(), t * k);
    let mut out = vec![0.0; t * k * 4];
    for (ti, &c) in centroids.iter().enumerate() {
        let cp = points[c];
        for ki in 0..k {
            let m = points[grid[ti * k + ki]];
            let o = &mut out[(ti * k + ki) * 4..][..4];
            o[0] = m.nx - cp.nx;
            o[1] = m.ny - cp.ny;
            o[2] = m.nt - cp.nt;
            o[3] = m.p as f64;
        }
    }
    Array3::from_shape_vec((t, k, 4), out).expect("sized above")
}

/// Sources bucketed on a uniform grid over the unit cube for nearest
/// neighbor queries.
struct Buckets {
    g: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl Buckets {
    fn new(points: &[NormalizedPoint]) -> Self {
        // about two points per cell
        let g = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 32);
        let cells = g * g * g;
        let mut count = vec![0usize; cells + 1];
        let keys: Vec<usize> = points.iter().map(|p| Self::key(g, p)).collect();
        for &k in &keys {
            count[k + 1] += 1;
        }
        for c in 0..cells {
            count[c + 1] += count[c];
        }
        let start = count.clone();
        let mut fill = count;
        let mut items = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        Buckets { g, start, items }
    }

    fn cell(g: usize, v: f64) -> usize {
        ((v * g as f64).floor().max(0.0) as usize).min(g - 1)
    }

    fn key(g: usize, p: &NormalizedPoint) -> usize {
        (Self::cell(g, p.nt) * g + Self::cell(g, p.ny)) * g + Self::cell(g, p.nx)
    }

    /// Three smallest `(d2, index)` pairs, unused slots at infinity. Rings of
    /// cells are scanned outward until no unvisited point can win or tie.
    fn nearest3(&self, tp: &NormalizedPoint, points: &[NormalizedPoint]) -> [(f64, usize); 3] {
        let g = self.g as isize;
        let c = [
            Self::cell(self.g, tp.nx) as isize,
            Self::cell(self.g, tp.ny) as isize,
            Self::cell(self.g, tp.nt) as isize,
        ];
        let mut best = [(f64::INFINITY, usize::MAX); 3];
        let cell_size = 1.0 / self.g as f64;
        for r in 0..g {
            // points in ring r or beyond are at least r - 1 cells away
            if r > 1 {
                let gap = (r - 1) as f64 * cell_size * (1.0 - 1e-9) - 1e-12;
                if gap > 0.0 && gap * gap > best[2].0 {
                    break;
                }
            }
            for z in (c[2] - r).max(0)..=(c[2] + r).min(g - 1) {
                for y in (c[1] - r).max(0)..=(c[1] + r).min(g - 1) {
                    for x in (c[0] - r).max(0)..=(c[0] + r).min(g - 1) {
                        let ring = (x - c[0]).abs().max((y - c[1]).abs()).max((z - c[2]).abs());
                        if ring != r {
                            continue;
                        }
                        let key = ((z * g + y) * g + x) as usize;
                        for &i in &self.items[self.start[key]..self.start[key + 1]] {
                            let cand = (tp.dist2(&points[i]), i);
                            if cand < best[2] {
                                best[2] = cand;
                                if best[2] < best[1] {
                                    best.swap(1, 2);
                                    if best[1] < best[0] {
                                        best.swap(0, 1);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Interpolation stencil of one target: up to three `(source, weight)` pairs
/// with weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdwStencil {
    pub len: usize,
    pub source: [usize; 3],
    pub weight: [f64; 3],
}

/// Three nearest sources per target with `1/d^2` weights; a coincident
/// source takes the whole weight.
pub fn idw_stencils(targets: &[NormalizedPoint], sources: &[NormalizedPoint]) -> Vec<IdwStencil> {
    assert!(!sources.is_empty(), "interpolation needs at least one source");
    let buckets = Buckets::new(sources);
    targets
        .iter()
        .map(|tp| {
            let best = buckets.nearest3(tp, sources);
            if best[0].0 == 0.0 {
                return IdwStencil {
                    len: 1,
                    source: [best[0].1, 0, 0],
                    weight: [1.0, 0.0, 0.0],
                };
            }
            let len = sources.len().min(3);
            let mut st = IdwStencil {
                len,
                source: [0; 3],
                weight: [0.0; 3],
            };
            let mut total = 0.0;
            for j in 0..len {
                st.source[j] = best[j].1;
                st.weight[j] = 1.0 / best[j].0;
                total += st.weight[j];
            }
            for w in &mut st.weight[..len] {
                *w /= total;
            }
            st
        })
        .collect()
}

/// Interpolates `T x D` source features onto every target.
pub fn idw_interpolate(
    targets: &[NormalizedPoint],
    sources: &[NormalizedPoint],
    features: ArrayView2<f64>,
) -> Array2<f64> {
    assert_eq!(features.nrows(), sources.len());
    let stencils = idw_stencils(targets, sources);
    let mut out = Array2::zeros((targets.len(), features.ncols()));
    for (i, st) in stencils.iter().enumerate() {
        for j in 0..st.len {
            let w = st.weight[j];
            let row = features.row(st.source[j]);
            out.row_mut(i).scaled_add(w, &row);
        }
    }
    out
}
