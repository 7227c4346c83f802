//! Metastable state geometry: membership, partitioned boundary regions,
//! exit classification, and the Agmon-distance assumption check.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::landscape::{boundary_minima, Potential};
use crate::{Error, Result};

/// A subset of the boundary, as a closed arc-length interval of the loop
/// parametrization (2D) or an endpoint index (1D).
#[derive(Debug, Clone)]
pub struct Region {
    pub name: String,
    pub span: RegionSpan,
}

#[derive(Debug, Clone, Copy)]
pub enum RegionSpan {
    /// Closed arc-length interval `[lo, hi]` on the boundary loop.
    Arc { lo: f64, hi: f64 },
    /// 1D endpoint: 0 = lower, 1 = upper.
    End(usize),
}

/// A bounded metastable state S with a partitioned boundary.
///
/// `contains` tests the open interior; the boundary itself is outside.
/// Immutable after construction and shared freely across workers.
pub trait Domain: Sync + Send {
    fn dim(&self) -> usize;

    fn contains(&self, x: &[f64]) -> bool;

    /// Axis-aligned bounding box (lo, hi).
    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>);

    /// Ordered boundary regions. May cover a strict subset of the boundary.
    fn regions(&self) -> &[Region];

    /// Closed boundary curve, 2D domains only.
    fn boundary(&self) -> Option<&BoundaryLoop> {
        None
    }
}

// ---------------------------------------------------------------------------
// Boundary parametrization
// ---------------------------------------------------------------------------

/// One analytic piece of a closed boundary curve.
#[derive(Debug, Clone)]
pub enum Piece {
    Segment {
        start: [f64; 2],
        end: [f64; 2],
        outward: [f64; 2],
    },
    /// Circular arc `center + r (cos t, sin t)` for `t` in
    /// `[theta0, theta0 + dtheta]` (`dtheta > 0` traverses counterclockwise).
    Arc {
        center: [f64; 2],
        radius: f64,
        theta0: f64,
        dtheta: f64,
    },
}

impl Piece {
    fn length(&self) -> f64 {
        match self {
            Piece::Segment { start, end, .. } => {
                ((end[0] - start[0]).powi(2) + (end[1] - start[1]).powi(2)).sqrt()
            }
            Piece::Arc { radius, dtheta, .. } => radius * dtheta.abs(),
        }
    }
}

/// A closed boundary curve traversed once, with arc-length parametrization.
#[derive(Debug, Clone)]
pub struct BoundaryLoop {
    pieces: Vec<Piece>,
    offsets: Vec<f64>,
    total: f64,
}

impl BoundaryLoop {
    pub fn new(pieces: Vec<Piece>) -> Self {
        let mut offsets = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            offsets.push(acc);
            acc += p.length();
        }
        BoundaryLoop {
            pieces,
            offsets,
            total: acc,
        }
    }

    pub fn total_length(&self) -> f64 {
        self.total
    }

    fn piece_at(&self, s: f64) -> (usize, f64) {
        let s = s.rem_euclid(self.total);
        let mut idx = match self
            .offsets
            .binary_search_by(|probe| probe.total_cmp(&s))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if idx >= self.pieces.len() {
            idx = self.pieces.len() - 1;
        }
        (idx, s - self.offsets[idx])
    }

    /// Position, outward unit normal, and unit tangent at arc length `s`.
    pub fn point_normal_tangent(&self, s: f64) -> (Vec<f64>, [f64; 2], [f64; 2]) {
        let (idx, local) = self.piece_at(s);
        match &self.pieces[idx] {
            Piece::Segment { start, end, outward } => {
                let len = self.pieces[idx].length();
                let t = [(end[0] - start[0]) / len, (end[1] - start[1]) / len];
                (
                    vec![start[0] + t[0] * local, start[1] + t[1] * local],
                    *outward,
                    t,
                )
            }
            Piece::Arc {
                center,
                radius,
                theta0,
                dtheta,
            } => {
                let sign = dtheta.signum();
                let th = theta0 + sign * local / radius;
                let (sin, cos) = th.sin_cos();
                (
                    vec![center[0] + radius * cos, center[1] + radius * sin],
                    [sign * cos, sign * sin].map(|v| v * 1.0),
                    [-sign * sin, sign * cos],
                )
            }
        }
    }

    /// d(tangent)/ds — the curvature vector of the parametrization.
    pub fn tangent_derivative(&self, s: f64) -> [f64; 2] {
        let (idx, local) = self.piece_at(s);
        match &self.pieces[idx] {
            Piece::Segment { .. } => [0.0, 0.0],
            Piece::Arc {
                radius,
                theta0,
                dtheta,
                ..
            } => {
                let sign = dtheta.signum();
                let th = theta0 + sign * local / radius;
                [-th.cos() / radius, -th.sin() / radius]
            }
        }
    }

    /// Arc-length coordinate of the boundary point nearest to `pt`.
    pub fn locate(&self, pt: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (idx, piece) in self.pieces.iter().enumerate() {
            let (dist, local) = match piece {
                Piece::Segment { start, end, .. } => {
                    let len = piece.length();
                    let tx = (end[0] - start[0]) / len;
                    let ty = (end[1] - start[1]) / len;
                    let proj =
                        ((pt[0] - start[0]) * tx + (pt[1] - start[1]) * ty).clamp(0.0, len);
                    let px = start[0] + tx * proj;
                    let py = start[1] + ty * proj;
                    (((pt[0] - px).powi(2) + (pt[1] - py).powi(2)).sqrt(), proj)
                }
                Piece::Arc {
                    center,
                    radius,
                    theta0,
                    dtheta,
                } => {
                    let vx = pt[0] - center[0];
                    let vy = pt[1] - center[1];
                    let ang = vy.atan2(vx);
                    // Bring the angle into the arc interval.
                    let sign = dtheta.signum();
                    let rel = (sign * (ang - theta0)).rem_euclid(2.0 * std::f64::consts::PI);
                    let rel = rel.clamp(0.0, dtheta.abs());
                    let th = theta0 + sign * rel;
                    let px = center[0] + radius * th.cos();
                    let py = center[1] + radius * th.sin();
                    (
                        ((pt[0] - px).powi(2) + (pt[1] - py).powi(2)).sqrt(),
                        rel * radius,
                    )
                }
            };
            if dist < best.0 {
                best = (dist, self.offsets[idx] + local);
            }
        }
        best.1
    }
}

// ---------------------------------------------------------------------------
// Concrete domains
// ---------------------------------------------------------------------------

/// Open interval (lo, hi) in 1D; regions are the two endpoints.
#[derive(Debug, Clone)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    regions: Vec<Region>,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            regions: vec![
                Region {
                    name: "left".into(),
                    span: RegionSpan::End(0),
                },
                Region {
                    name: "right".into(),
                    span: RegionSpan::End(1),
                },
            ],
        }
    }
}

impl Domain for Interval {
    fn dim(&self) -> usize {
        1
    }
    #[inline]
    fn contains(&self, x: &[f64]) -> bool {
        x[0] > self.lo && x[0] < self.hi
    }
    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.lo], vec![self.hi])
    }
    fn regions(&self) -> &[Region] {
        &self.regions
    }
}

/// The 2D test domain: the square with corners (-1,-1), (1,1) joined with the
/// half-disks of radius 1 centered at (0,1) and (0,-1).
///
/// Boundary loop, counterclockwise from (1,-1):
/// right wall -> top arc -> left wall -> bottom arc.
/// Default regions: `sigma1` (right wall), `sigma2` (left wall), then the arcs.
#[derive(Debug, Clone)]
pub struct PaperDomain {
    loop_: BoundaryLoop,
    regions: Vec<Region>,
}

/// Arc length of one wall of [`PaperDomain`].
pub const WALL_LEN: f64 = 2.0;

impl PaperDomain {
    pub fn new() -> Self {
        use std::f64::consts::PI;
        let pieces = vec![
            Piece::Segment {
                start: [1.0, -1.0],
                end: [1.0, 1.0],
                outward: [1.0, 0.0],
            },
            Piece::Arc {
                center: [0.0, 1.0],
                radius: 1.0,
                theta0: 0.0,
                dtheta: PI,
            },
            Piece::Segment {
                start: [-1.0, 1.0],
                end: [-1.0, -1.0],
                outward: [-1.0, 0.0],
            },
            Piece::Arc {
                center: [0.0, -1.0],
                radius: 1.0,
                theta0: PI,
                dtheta: PI,
            },
        ];
        let loop_ = BoundaryLoop::new(pieces);
        let regions = vec![
            Region {
                name: "sigma1".into(),
                span: RegionSpan::Arc { lo: 0.0, hi: 2.0 },
            },
            Region {
                name: "sigma2".into(),
                span: RegionSpan::Arc {
                    lo: 2.0 + PI,
                    hi: 4.0 + PI,
                },
            },
            Region {
                name: "arc_top".into(),
                span: RegionSpan::Arc {
                    lo: 2.0,
                    hi: 2.0 + PI,
                },
            },
            Region {
                name: "arc_bottom".into(),
                span: RegionSpan::Arc {
                    lo: 4.0 + PI,
                    hi: 4.0 + 2.0 * PI,
                },
            },
        ];
        PaperDomain { loop_, regions }
    }

    /// Same geometry with caller-supplied regions (e.g. boundary windows).
    pub fn with_regions(regions: Vec<Region>) -> Self {
        let mut d = PaperDomain::new();
        d.regions = regions;
        d
    }

    /// Arc-length coordinate of the point (1, y) on the right wall.
    pub fn right_wall_s(y: f64) -> f64 {
        1.0 + y
    }

    /// Arc-length coordinate of the point (-1, y) on the left wall.
    pub fn left_wall_s(y: f64) -> f64 {
        use std::f64::consts::PI;
        2.0 + PI + (1.0 - y)
    }
}

impl Default for PaperDomain {
    fn default() -> Self {
        Self::new()
    }
}

impl Domain for PaperDomain {
    fn dim(&self) -> usize {
        2
    }
    #[inline]
    fn contains(&self, x: &[f64]) -> bool {
        let (px, py) = (x[0], x[1]);
        if px > -1.0 && px < 1.0 && py > -1.0 && py < 1.0 {
            return true;
        }
        let up = px * px + (py - 1.0) * (py - 1.0);
        if up < 1.0 {
            return true;
        }
        let dn = px * px + (py + 1.0) * (py + 1.0);
        dn < 1.0
    }
    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0, -2.0], vec![1.0, 2.0])
    }
    fn regions(&self) -> &[Region] {
        &self.regions
    }
    fn boundary(&self) -> Option<&BoundaryLoop> {
        Some(&self.loop_)
    }
}

/// Open disk of radius `r` about the origin; single boundary region.
#[derive(Debug, Clone)]
pub struct Disk {
    pub radius: f64,
    loop_: BoundaryLoop,
    regions: Vec<Region>,
}

impl Disk {
    pub fn new(radius: f64) -> Self {
        use std::f64::consts::PI;
        let loop_ = BoundaryLoop::new(vec![Piece::Arc {
            center: [0.0, 0.0],
            radius,
            theta0: 0.0,
            dtheta: 2.0 * PI,
        }]);
        let regions = vec![Region {
            name: "circle".into(),
            span: RegionSpan::Arc {
                lo: 0.0,
                hi: 2.0 * PI * radius,
            },
        }];
        Disk {
            radius,
            loop_,
            regions,
        }
    }
}

impl Domain for Disk {
    fn dim(&self) -> usize {
        2
    }
    #[inline]
    fn contains(&self, x: &[f64]) -> bool {
        x[0] * x[0] + x[1] * x[1] < self.radius * self.radius
    }
    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.radius, -self.radius], vec![self.radius, self.radius])
    }
    fn regions(&self) -> &[Region] {
        &self.regions
    }
    fn boundary(&self) -> Option<&BoundaryLoop> {
        Some(&self.loop_)
    }
}

/// Builds the standard 2D test domain.
pub fn build_paper_domain() -> PaperDomain {
    PaperDomain::new()
}

// ---------------------------------------------------------------------------
// Exit classification
// ---------------------------------------------------------------------------

/// Classifies an exit: intersects the segment `last_inside -> first_outside`
/// with the boundary and returns `(region index, crossing point)`.
///
/// Crossings exactly on a shared region endpoint go to the lower-indexed
/// region; crossings in no region go to the nearest region by arc length.
pub fn classify_exit<Dm: Domain + ?Sized>(
    domain: &Dm,
    last_inside: &[f64],
    first_outside: &[f64],
) -> Result<(usize, Vec<f64>)> {
    if !domain.contains(last_inside) {
        return Err(Error::Input("last_inside is not inside the domain".into()));
    }
    if domain.contains(first_outside) {
        return Err(Error::Input("first_outside is inside the domain".into()));
    }
    match domain.dim() {
        1 => {
            let (lo, hi) = domain.bounding_box();
            let end = if first_outside[0] <= lo[0] { 0 } else { 1 };
            let crossing = if end == 0 { lo[0] } else { hi[0] };
            let region = domain
                .regions()
                .iter()
                .position(|r| matches!(r.span, RegionSpan::End(e) if e == end))
                .ok_or_else(|| Error::Geometry(format!("no region covers endpoint {end}")))?;
            Ok((region, vec![crossing]))
        }
        2 => {
            // Bisection on the membership predicate along the segment.
            let mut t_in = 0.0f64;
            let mut t_out = 1.0f64;
            let point_at = |t: f64| {
                vec![
                    last_inside[0] + t * (first_outside[0] - last_inside[0]),
                    last_inside[1] + t * (first_outside[1] - last_inside[1]),
                ]
            };
            for _ in 0..80 {
                let mid = 0.5 * (t_in + t_out);
                if domain.contains(&point_at(mid)) {
                    t_in = mid;
                } else {
                    t_out = mid;
                }
            }
            let crossing = point_at(0.5 * (t_in + t_out));
            let loop_ = domain
                .boundary()
                .ok_or_else(|| Error::Geometry("2D domain without boundary loop".into()))?;
            let s = loop_.locate(&crossing);
            let region = region_for_arc_s(domain.regions(), s, loop_.total_length())?;
            Ok((region, crossing))
        }
        d => Err(Error::Input(format!("unsupported dimension {d}"))),
    }
}

/// Region lookup for an arc-length coordinate, with the documented tie-breaks.
pub fn region_for_arc_s(regions: &[Region], s: f64, total: f64) -> Result<usize> {
    for (i, r) in regions.iter().enumerate() {
        if let RegionSpan::Arc { lo, hi } = r.span {
            if s >= lo && s <= hi {
                return Ok(i);
            }
        }
    }
    // Not covered: nearest region by circular arc distance.
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in regions.iter().enumerate() {
        if let RegionSpan::Arc { lo, hi } = r.span {
            let d_lo = circular_distance(s, lo, total);
            let d_hi = circular_distance(s, hi, total);
            let d = d_lo.min(d_hi);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
        .ok_or_else(|| Error::Geometry("region list has no arc spans".into()))
}

fn circular_distance(a: f64, b: f64, total: f64) -> f64 {
    let d = (a - b).rem_euclid(total);
    d.min(total - d)
}

// ---------------------------------------------------------------------------
// Agmon distance
// ---------------------------------------------------------------------------

/// Output of the Agmon-distance computation from one boundary minimum.
#[derive(Debug, Clone)]
pub struct AgmonResult {
    pub source: Vec<f64>,
    /// Interior grid nodes and their distances from the source.
    pub grid_points: Vec<[f64; 2]>,
    pub grid_distance: Vec<f64>,
    /// Boundary chain samples: arc-length coordinates, distances, basin label
    /// (index into the sorted boundary-minima list) and the watershed flag.
    pub boundary_s: Vec<f64>,
    pub boundary_distance: Vec<f64>,
    pub boundary_label: Vec<Option<usize>>,
    pub boundary_ambiguous: Vec<bool>,
    /// Index of the boundary minimum the source corresponds to.
    pub source_minimum: usize,
    /// `inf { d_a(z, source) : z on the boundary outside the source basin }`.
    pub inf_outside_basin: f64,
    /// `V(z_I) - V(z_1)` over the boundary minima.
    pub saddle_gap: f64,
    /// Whether `inf_outside_basin > saddle_gap`.
    pub assumption_satisfied: bool,
}

impl AgmonResult {
    /// Distance at the grid node nearest to `pt` (diagnostics only).
    pub fn distance_at(&self, pt: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, f64::INFINITY);
        for (i, g) in self.grid_points.iter().enumerate() {
            let d2 = (g[0] - pt[0]).powi(2) + (g[1] - pt[1]).powi(2);
            if d2 < best.0 {
                best = (d2, self.grid_distance[i]);
            }
        }
        best.1
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapKey(f64);
impl Eq for HeapKey {}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Shortest-path Agmon distance field from `source` (a boundary point) on a
/// 16-neighbor grid graph with metric `|grad V|` in the interior and the
/// tangential `|grad_T V|` along the boundary chain.
pub fn agmon_distance(
    potential: &dyn Potential,
    domain: &dyn Domain,
    source: &[f64],
    grid_step: f64,
) -> Result<AgmonResult> {
    if domain.dim() != 2 {
        return Err(Error::Input("agmon_distance requires a 2D domain".into()));
    }
    let loop_ = domain
        .boundary()
        .ok_or_else(|| Error::Input("domain exposes no boundary loop".into()))?;
    // Source must lie in the closure of the domain.
    let s_src = loop_.locate(source);
    let (bp, _, _) = loop_.point_normal_tangent(s_src);
    let dist_to_boundary = ((bp[0] - source[0]).powi(2) + (bp[1] - source[1]).powi(2)).sqrt();
    if !domain.contains(source) && dist_to_boundary > grid_step {
        return Err(Error::Input("source lies outside the closure of S".into()));
    }

    let (lo, hi) = domain.bounding_box();
    let span = [hi[0] - lo[0], hi[1] - lo[1]];
    let cells = [
        (span[0] / grid_step).round().max(2.0) as i64,
        (span[1] / grid_step).round().max(2.0) as i64,
    ];
    let nx = cells[0] + 1;
    let ny = cells[1] + 1;
    let hs = [span[0] / cells[0] as f64, span[1] / cells[1] as f64];

    // Interior grid nodes; boundary-aligned lines must be exact, so nodes
    // one ulp inside a wall never appear.
    let mut index = vec![-1i64; (nx * ny) as usize];
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [
                lo[0] + (ix as f64 * span[0]) / cells[0] as f64,
                lo[1] + (iy as f64 * span[1]) / cells[1] as f64,
            ];
            if domain.contains(&p) {
                index[(iy * nx + ix) as usize] = pts.len() as i64;
                pts.push(p);
            }
        }
    }
    let n_int = pts.len();

    // Boundary chain samples.
    let total = loop_.total_length();
    let n_bnd = (total / grid_step).ceil() as usize;
    let ds = total / n_bnd as f64;
    let mut bnd_s = Vec::with_capacity(n_bnd);
    let mut bnd_pts = Vec::with_capacity(n_bnd);
    let mut bnd_g = Vec::with_capacity(n_bnd);
    let mut grad = [0.0f64; 2];
    for k in 0..n_bnd {
        let s = k as f64 * ds;
        let (p, normal, _) = loop_.point_normal_tangent(s);
        potential.gradient(&p, &mut grad);
        let gn = grad[0] * normal[0] + grad[1] * normal[1];
        let tx = grad[0] - gn * normal[0];
        let ty = grad[1] - gn * normal[1];
        bnd_s.push(s);
        bnd_pts.push([p[0], p[1]]);
        bnd_g.push((tx * tx + ty * ty).sqrt());
        }
    let metric_int: Vec<f64> = pts
        .iter()
        .map(|p| {
            let mut g = [0.0; 2];
            potential.gradient(p, &mut g);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        })
        .collect();

    // Adjacency: interior 16-neighborhood + boundary chain + coupling edges.
    let n_total = n_int + n_bnd;
    let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_total];
    let push_edge = |adj: &mut Vec<Vec<(u32, f64)>>, a: usize, b: usize, w: f64| {
        adj[a].push((b as u32, w));
        adj[b].push((a as u32, w));
    };
    const OFFSETS: [(i64, i64); 8] = [
        (1, 0),
        (0, 1),
        (1, 1),
        (1, -1),
        (2, 1),
        (2, -1),
        (1, 2),
        (1, -2),
    ];
    for iy in 0..ny {
        for ix in 0..nx {
            let a = index[(iy * nx + ix) as usize];
            if a < 0 {
                continue;
            }
            let a = a as usize;
            for (dx, dy) in OFFSETS {
                let (jx, jy) = (ix + dx, iy + dy);
                if jx < 0 || jx >= nx || jy < 0 || jy >= ny {
                    continue;
                }
                let b = index[(jy * nx + jx) as usize];
                if b < 0 {
                    continue;
                }
                let b = b as usize;
                // Knight moves must not jump across an outside notch.
                if dx.abs() + dy.abs() > 2 {
                    let mid = [
                        0.5 * (pts[a][0] + pts[b][0]),
                        0.5 * (pts[a][1] + pts[b][1]),
                    ];
                    if !domain.contains(&mid) {
                        continue;
                    }
                }
                let len = ((dx as f64 * hs[0]).powi(2) + (dy as f64 * hs[1]).powi(2)).sqrt();
                let w = 0.5 * (metric_int[a] + metric_int[b]) * len;
                push_edge(&mut adj, a, b, w);
            }
        }
    }
    for k in 0..n_bnd {
        let k2 = (k + 1) % n_bnd;
        let w = 0.5 * (bnd_g[k] + bnd_g[k2]) * ds;
        push_edge(&mut adj, n_int + k, n_int + k2, w);
    }
    // Couple each boundary sample to interior nodes within ~2 grid steps.
    {
        let r = 2.0 * hs[0].max(hs[1]);
        for k in 0..n_bnd {
            let p = bnd_pts[k];
            let ix0 = (((p[0] - lo[0]) / hs[0]).floor() as i64 - 2).max(0);
            let iy0 = (((p[1] - lo[1]) / hs[1]).floor() as i64 - 2).max(0);
            for iy in iy0..(iy0 + 5).min(ny) {
                for ix in ix0..(ix0 + 5).min(nx) {
                    let a = index[(iy * nx + ix) as usize];
                    if a < 0 {
                        continue;
                    }
                    let a = a as usize;
                    let d = ((pts[a][0] - p[0]).powi(2) + (pts[a][1] - p[1]).powi(2)).sqrt();
                    if d <= r && d > 1e-12 {
                        let w = 0.5 * (metric_int[a] + bnd_g[k]) * d;
                        push_edge(&mut adj, a, n_int + k, w);
                    }
                }
            }
        }
    }

    // Dijkstra from the boundary sample nearest the source.
    let src_k = bnd_s
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            circular_distance(**a, s_src, total).total_cmp(&circular_distance(**b, s_src, total))
        })
        .map(|(k, _)| k)
        .unwrap();
    let mut dist = vec![f64::INFINITY; n_total];
    let mut heap = BinaryHeap::new();
    dist[n_int + src_k] = 0.0;
    heap.push(Reverse((HeapKey(0.0), (n_int + src_k) as u32)));
    while let Some(Reverse((HeapKey(d), u))) = heap.pop() {
        let u = u as usize;
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let v = v as usize;
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((HeapKey(nd), v as u32)));
            }
        }
    }

    // Boundary basins of attraction by discrete steepest descent on the chain.
    // A degenerate boundary (constant V) has no basins; the distance field is
    // still valid, so return it with empty labels and a failed assumption.
    let minima = match boundary_minima(potential, domain) {
        Ok(m) => m,
        Err(Error::Degeneracy(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    if minima.is_empty() {
        return Ok(AgmonResult {
            source: source.to_vec(),
            grid_points: pts,
            grid_distance: dist[..n_int].to_vec(),
            boundary_s: bnd_s,
            boundary_distance: dist[n_int..].to_vec(),
            boundary_label: vec![None; n_bnd],
            boundary_ambiguous: vec![false; n_bnd],
            source_minimum: 0,
            inf_outside_basin: 0.0,
            saddle_gap: 0.0,
            assumption_satisfied: false,
        });
    }
    let saddle_gap = minima[minima.len() - 1].energy - minima[0].energy;
    let chain_v: Vec<f64> = bnd_pts.iter().map(|p| potential.energy(p)).collect();
    let mut label: Vec<Option<usize>> = vec![None; n_bnd];
    for k in 0..n_bnd {
        let mut cur = k;
        for _ in 0..(2 * n_bnd) {
            let left = (cur + n_bnd - 1) % n_bnd;
            let right = (cur + 1) % n_bnd;
            let next = if chain_v[left] < chain_v[cur] && chain_v[left] <= chain_v[right] {
                left
            } else if chain_v[right] < chain_v[cur] {
                right
            } else {
                break;
            };
            cur = next;
        }
        // Match the reached chain minimum to the nearest boundary minimum.
        let p = bnd_pts[cur];
        let (mi, md) = minima
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let d = ((m.position[0] - p[0]).powi(2) + (m.position[1] - p[1]).powi(2)).sqrt();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if md < 4.0 * ds {
            label[k] = Some(mi);
        }
    }
    let ambiguous: Vec<bool> = (0..n_bnd)
        .map(|k| {
            let l = label[k];
            let ln = label[(k + 1) % n_bnd];
            let lp = label[(k + n_bnd - 1) % n_bnd];
            l != ln || l != lp
        })
        .collect();

    let source_minimum = minima
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (a.position[0] - source[0]).powi(2) + (a.position[1] - source[1]).powi(2);
            let db = (b.position[0] - source[0]).powi(2) + (b.position[1] - source[1]).powi(2);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap();

    let mut inf_outside = f64::INFINITY;
    for k in 0..n_bnd {
        if label[k] != Some(source_minimum) {
            inf_outside = inf_outside.min(dist[n_int + k]);
        }
    }

    Ok(AgmonResult {
        source: source.to_vec(),
        grid_points: pts,
        grid_distance: dist[..n_int].to_vec(),
        boundary_s: bnd_s,
        boundary_distance: dist[n_int..].to_vec(),
        boundary_label: label,
        boundary_ambiguous: ambiguous,
        source_minimum,
        inf_outside_basin: inf_outside,
        saddle_gap,
        assumption_satisfied: inf_outside > saddle_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::Zero;

    #[test]
    fn paper_domain_membership() {
        let d = build_paper_domain();
        assert!(d.contains(&[0.0, 1.9]));
        assert!(!d.contains(&[-1.01, 0.0]));
        assert!(d.contains(&[0.0, 0.0]));
        assert!(!d.contains(&[0.9, 1.9]));
    }

    #[test]
    fn z1_lies_on_sigma1() {
        let d = build_paper_domain();
        let s = d.boundary().unwrap().locate(&[1.0, 0.0]);
        let r = region_for_arc_s(d.regions(), s, d.boundary().unwrap().total_length()).unwrap();
        assert_eq!(d.regions()[r].name, "sigma1");
    }

    #[test]
    fn horizontal_crossing_of_left_wall() {
        let d = build_paper_domain();
        let (region, crossing) = classify_exit(&d, &[-0.99, 0.2], &[-1.02, 0.2]).unwrap();
        assert_eq!(d.regions()[region].name, "sigma2");
        assert!((crossing[0] + 1.0).abs() < 1e-9);
        assert!((crossing[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn top_arc_crossing() {
        let d = build_paper_domain();
        let (region, crossing) = classify_exit(&d, &[0.1, 1.99], &[0.1, 2.02]).unwrap();
        assert_eq!(d.regions()[region].name, "arc_top");
        // Crossing on the circle x^2 + (y-1)^2 = 1.
        let r2 = crossing[0].powi(2) + (crossing[1] - 1.0).powi(2);
        assert!((r2 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn endpoint_tie_goes_to_lower_indexed_region() {
        let d = build_paper_domain();
        // s = 2.0 is shared by sigma1 (index 0) and arc_top (index 2).
        let r = region_for_arc_s(d.regions(), 2.0, d.boundary().unwrap().total_length()).unwrap();
        assert_eq!(r, 0);
    }

    #[test]
    fn classify_rejects_bad_inputs() {
        let d = build_paper_domain();
        assert!(classify_exit(&d, &[5.0, 0.0], &[6.0, 0.0]).is_err());
        assert!(classify_exit(&d, &[0.0, 0.0], &[0.1, 0.0]).is_err());
    }

    #[test]
    fn constant_potential_has_zero_agmon_distance() {
        let d = build_paper_domain();
        let res = agmon_distance(&Zero { dim: 2 }, &d, &[-1.0, 0.0], 0.05).unwrap();
        // g = |grad V| vanishes identically, so every reachable node is at 0.
        let max = res
            .grid_distance
            .iter()
            .chain(res.boundary_distance.iter())
            .fold(0.0f64, |m, &v| m.max(v));
        assert_eq!(max, 0.0);
        assert!(!res.assumption_satisfied);
    }

    #[test]
    fn interval_exit_classifies_ends() {
        let d = Interval::new(0.0, 1.0);
        let (r, x) = classify_exit(&d, &[0.05], &[-0.01]).unwrap();
        assert_eq!(d.regions()[r].name, "left");
        assert_eq!(x[0], 0.0);
        let (r, _) = classify_exit(&d, &[0.95], &[1.01]).unwrap();
        assert_eq!(d.regions()[r].name, "right");
    }

    #[test]
    fn loop_length_and_points() {
        let d = build_paper_domain();
        let l = d.boundary().unwrap();
        assert!((l.total_length() - (4.0 + 2.0 * std::f64::consts::PI)).abs() < 1e-12);
        let (p, n, _) = l.point_normal_tangent(2.0 + std::f64::consts::FRAC_PI_2);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        assert!((n[0]).abs() < 1e-12 && (n[1] - 1.0).abs() < 1e-12);
    }
}
