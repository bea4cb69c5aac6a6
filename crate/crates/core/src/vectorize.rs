//! Multi-round raster-to-vector conversion.
//!
//! Each round quantizes the image (or a region of it) to a target color
//! count, traces the outer boundary of every connected component per palette
//! color, simplifies the boundary polygon, and fits closed cubic Bézier
//! paths. Rounds stack back-to-front with increasing precision; round one is
//! prefixed with a canvas-sized background element of the mean color so the
//! document covers every pixel from the start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{IRect, Point};
use crate::model::{CubicPath, Rgba, Round, VectorDocument};
use crate::raster::Raster;
use crate::{Error, Result};

/// Parameters of one vectorization round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSpec {
    /// Target color count N_c.
    pub n_colors: u32,
    /// Region to trace; `None` means the full canvas.
    pub region: Option<IRect>,
    /// Douglas-Peucker tolerance in pixels.
    pub simplify_tolerance: f64,
    /// Maximum curve-fit deviation in pixels.
    pub fit_tolerance: f64,
    /// Components smaller than this many pixels are discarded.
    pub min_area: f64,
}

impl RoundSpec {
    pub fn new(n_colors: u32) -> Self {
        RoundSpec { n_colors, region: None, simplify_tolerance: 1.0, fit_tolerance: 1.0, min_area: 16.0 }
    }

    pub fn with_region(n_colors: u32, region: IRect) -> Self {
        RoundSpec { region: Some(region), ..RoundSpec::new(n_colors) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorizeConfig {
    pub rounds: Vec<RoundSpec>,
    pub seed: u64,
}

impl Default for VectorizeConfig {
    /// Two full-canvas rounds at 10 then 30 target colors.
    fn default() -> Self {
        VectorizeConfig { rounds: vec![RoundSpec::new(10), RoundSpec::new(30)], seed: 0 }
    }
}

impl VectorizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::InvalidConfig("at least one vectorization round is required".into()));
        }
        if self.rounds[0].region.is_some() {
            return Err(Error::InvalidConfig("round 1 must cover the full canvas".into()));
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if r.n_colors == 0 {
                return Err(Error::InvalidConfig(format!("round {i}: n_colors must be at least 1")));
            }
            if !(r.simplify_tolerance > 0.0) || !(r.fit_tolerance > 0.0) {
                return Err(Error::InvalidConfig(format!("round {i}: tolerances must be positive")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Color quantization

fn luminance(c: [f64; 3]) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

fn palette_sort_key(c: [f64; 3]) -> (f64, [f64; 3]) {
    (luminance(c), c)
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    dr * dr + dg * dg + db * db
}

/// K-means color quantization in RGB with k-means++ seeding.
///
/// Runs at most 20 Lloyd iterations (or until the largest centroid shift
/// drops below 1e-4). The returned palette is sorted by luminance and each
/// pixel is labeled with its nearest entry. Images with no more distinct
/// colors than requested return those colors exactly, so the palette may be
/// shorter than `n_colors`. Deterministic for a fixed seed.
pub fn quantize_colors(image: &Raster, n_colors: u32, seed: u64) -> (Vec<[f64; 3]>, Vec<u32>) {
    let pixels: Vec<[f64; 3]> = image
        .data()
        .chunks_exact(3)
        .map(|p| [p[0], p[1], p[2]])
        .collect();

    // Cluster over distinct colors weighted by frequency.
    let mut distinct: Vec<([f64; 3], u64)> = Vec::new();
    {
        let mut seen = std::collections::BTreeMap::new();
        for p in &pixels {
            let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
            *seen.entry(key).or_insert(0u64) += 1;
        }
        for (key, count) in seen {
            distinct.push(([f64::from_bits(key[0]), f64::from_bits(key[1]), f64::from_bits(key[2])], count));
        }
    }

    let k = n_colors as usize;
    let palette: Vec<[f64; 3]> = if distinct.len() <= k {
        let mut colors: Vec<[f64; 3]> = distinct.iter().map(|(c, _)| *c).collect();
        colors.sort_by(|a, b| palette_sort_key(*a).partial_cmp(&palette_sort_key(*b)).unwrap());
        colors
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: u64 = distinct.iter().map(|(_, c)| c).sum();
        let mut centroids: Vec<[f64; 3]> = Vec::with_capacity(k);
        // k-means++: first pick uniform over pixels, then proportional to
        // squared distance from the chosen set.
        let mut pick = rng.gen_range(0..total);
        for (c, count) in &distinct {
            if pick < *count {
                centroids.push(*c);
                break;
            }
            pick -= count;
        }
        let mut d2: Vec<f64> = distinct.iter().map(|(c, _)| dist2(*c, centroids[0])).collect();
        while centroids.len() < k {
            let weight_total: f64 = distinct.iter().zip(&d2).map(|((_, n), d)| *n as f64 * d).sum();
            if weight_total <= 0.0 {
                break;
            }
            let mut target = rng.gen::<f64>() * weight_total;
            let mut chosen = distinct.len() - 1;
            for (i, ((_, n), d)) in distinct.iter().zip(&d2).enumerate() {
                target -= *n as f64 * d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            let c = distinct[chosen].0;
            centroids.push(c);
            for (i, (p, _)) in distinct.iter().enumerate() {
                let d = dist2(*p, c);
                if d < d2[i] {
                    d2[i] = d;
                }
            }
        }

        for _ in 0..20 {
            let mut sums = vec![[0.0f64; 3]; centroids.len()];
            let mut counts = vec![0u64; centroids.len()];
            for (p, n) in &distinct {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, c) in centroids.iter().enumerate() {
                    let d = dist2(*p, *c);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                let w = *n as f64;
                sums[best][0] += p[0] * w;
                sums[best][1] += p[1] * w;
                sums[best][2] += p[2] * w;
                counts[best] += n;
            }
            let mut shift = 0.0f64;
            for i in 0..centroids.len() {
                if counts[i] == 0 {
                    continue;
                }
                let w = counts[i] as f64;
                let next = [sums[i][0] / w, sums[i][1] / w, sums[i][2] / w];
                shift = shift.max(dist2(next, centroids[i]).sqrt());
                centroids[i] = next;
            }
            if shift < 1e-4 {
                break;
            }
        }
        centroids.sort_by(|a, b| palette_sort_key(*a).partial_cmp(&palette_sort_key(*b)).unwrap());
        centroids
    };

    let labels = pixels
        .iter()
        .map(|p| {
            let mut best = 0u32;
            let mut best_d = f64::INFINITY;
            for (i, c) in palette.iter().enumerate() {
                let d = dist2(*p, *c);
                if d < best_d {
                    best_d = d;
                    best = i as u32;
                }
            }
            best
        })
        .collect();
    (palette, labels)
}

// ---------------------------------------------------------------------------
// Contour extraction

/// Outer boundary polygons of every 4-connected component labeled
/// `color_index`, one counter-clockwise (positive shoelace) polygon per
/// component, with vertices on the pixel-corner lattice.
pub fn extract_contours(labels: &[u32], width: u32, height: u32, color_index: u32) -> Vec<Vec<Point>> {
    components(labels, width, height, color_index)
        .into_iter()
        .map(|c| c.outline)
        .collect()
}

struct Component {
    outline: Vec<Point>,
    pixel_count: u64,
}

fn components(labels: &[u32], width: u32, height: u32, color_index: u32) -> Vec<Component> {
    let w = width as usize;
    let h = height as usize;
    debug_assert_eq!(labels.len(), w * h);
    let mut comp = vec![u32::MAX; w * h];
    let mut out = Vec::new();
    let mut queue = Vec::new();
    let mut next = 0u32;
    for start in 0..w * h {
        if labels[start] != color_index || comp[start] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        comp[start] = id;
        queue.clear();
        queue.push(start);
        let mut count = 0u64;
        while let Some(i) = queue.pop() {
            count += 1;
            let x = i % w;
            let y = i / w;
            let mut visit = |j: usize| {
                if labels[j] == color_index && comp[j] == u32::MAX {
                    comp[j] = id;
                    queue.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if let Some(outline) = trace_outer_boundary(&comp, w, h, id) {
            out.push(Component { outline, pixel_count: count });
        }
    }
    out
}

const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)]; // E S W N

/// Walk the boundary cracks of one component keeping it on the left, merging
/// collinear steps. Returns the single outer loop oriented counter-clockwise
/// (positive shoelace); hole loops are skipped, they belong to whatever
/// component fills them.
fn trace_outer_boundary(comp: &[u32], w: usize, h: usize, id: u32) -> Option<Vec<Point>> {
    let inside = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && comp[y as usize * w + x as usize] == id
    };
    // Start at the top-left-most pixel; its left side is on the outer loop.
    let start_pixel = (0..w * h).find(|&i| comp[i] == id)?;
    let sx = (start_pixel % w) as i64;
    let sy = (start_pixel / w) as i64;

    // Directed crack edges keep the component on the LEFT of travel in
    // screen coordinates (x right, y down):
    //   left side of pixel: travels south, top side: west, right: north,
    //   bottom: east.
    // At each corner the next direction is forced except at saddle corners,
    // where turning left keeps wrapping the same pixel (4-connectivity).
    let mut loop_pts: Vec<Point> = Vec::new();
    let start_corner = (sx, sy);
    let start_dir = 1usize; // south along the pixel's left side
    let mut corner = start_corner;
    let mut dir = start_dir;
    loop {
        let (dx, dy) = DIRS[dir];
        let next = (corner.0 + dx, corner.1 + dy);
        // Pixels around the next corner, named by quadrant.
        let tl = inside(next.0 - 1, next.1 - 1);
        let tr = inside(next.0, next.1 - 1);
        let bl = inside(next.0 - 1, next.1);
        let br = inside(next.0, next.1);
        // Candidate outgoing directions with the component on the left.
        let mut candidates = [false; 4];
        candidates[0] = bl && !tl; // east: pixel below-left inside, above it outside
        candidates[1] = br && !bl; // south
        candidates[2] = tr && !br; // west
        candidates[3] = tl && !tr; // north
        let left = (dir + 3) % 4;
        let straight = dir;
        let right = (dir + 1) % 4;
        let next_dir = if candidates[left] {
            left
        } else if candidates[straight] {
            straight
        } else if candidates[right] {
            right
        } else {
            (dir + 2) % 4
        };
        if next_dir == dir {
            // Collinear: extend the pending step.
        } else {
            loop_pts.push(Point::new(next.0 as f64, next.1 as f64));
        }
        corner = next;
        dir = next_dir;
        if corner == start_corner && dir == start_dir {
            break;
        }
        if loop_pts.len() > 8 * w * h + 16 {
            log::warn!("boundary trace did not close; dropping component");
            return None;
        }
    }
    if loop_pts.len() < 3 {
        return None;
    }
    // Component-on-left in y-down coordinates walks the outer loop with
    // negative shoelace; flip to the documented counter-clockwise form.
    if shoelace(&loop_pts) < 0.0 {
        loop_pts.reverse();
    }
    Some(loop_pts)
}

fn shoelace(pts: &[Point]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    s * 0.5
}

// ---------------------------------------------------------------------------
// Polygon simplification

fn point_line_distance(p: Point, a: Point, b: Point) -> f64 {
    let e = b - a;
    let len = e.norm();
    if len < 1e-12 {
        return (p - a).norm();
    }
    ((p.x - a.x) * e.y - (p.y - a.y) * e.x).abs() / len
}

fn douglas_peucker(pts: &[Point], tolerance: f64, keep: &mut Vec<usize>, offset: usize) {
    if pts.len() < 3 {
        return;
    }
    let a = pts[0];
    let b = pts[pts.len() - 1];
    let mut max_d = -1.0;
    let mut max_i = 0;
    for (i, p) in pts.iter().enumerate().skip(1).take(pts.len() - 2) {
        let d = point_line_distance(*p, a, b);
        if d > max_d {
            max_d = d;
            max_i = i;
        }
    }
    if max_d > tolerance {
        douglas_peucker(&pts[..=max_i], tolerance, keep, offset);
        keep.push(offset + max_i);
        douglas_peucker(&pts[max_i..], tolerance, keep, offset + max_i);
    }
}

/// Douglas-Peucker simplification of a closed polygon. Tolerance zero
/// returns the input unchanged; otherwise the polygon is split at vertex 0
/// and its farthest vertex, each chain simplified, and at least three
/// vertices are retained.
pub fn simplify_polygon(poly: &[Point], tolerance: f64) -> Vec<Point> {
    if tolerance <= 0.0 || poly.len() <= 3 {
        return poly.to_vec();
    }
    let anchor = 0usize;
    let far = poly
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            let da = (**a - poly[anchor]).norm();
            let db = (**b - poly[anchor]).norm();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    if far == 0 {
        // All vertices coincide with the anchor.
        return poly.to_vec();
    }
    let mut keep = vec![anchor];
    douglas_peucker(&poly[anchor..=far], tolerance, &mut keep, anchor);
    keep.push(far);
    let mut wrapped: Vec<Point> = poly[far..].to_vec();
    wrapped.push(poly[0]);
    let mut keep_wrap = Vec::new();
    douglas_peucker(&wrapped, tolerance, &mut keep_wrap, far);
    keep.extend(keep_wrap);

    if keep.len() < 3 {
        // Reinstate the vertex that deviates most from the chord.
        let a = poly[keep[0]];
        let b = poly[keep[1 % keep.len()]];
        if let Some((i, _)) = poly
            .iter()
            .enumerate()
            .filter(|(i, _)| !keep.contains(i))
            .map(|(i, p)| (i, point_line_distance(*p, a, b)))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        {
            keep.push(i);
        }
    }
    keep.sort_unstable();
    keep.dedup();
    keep.iter().map(|&i| poly[i]).collect()
}

// ---------------------------------------------------------------------------
// Bézier fitting

fn eval_bezier(ctrl: &[Point; 4], t: f64) -> Point {
    let s = 1.0 - t;
    let b0 = s * s * s;
    let b1 = 3.0 * s * s * t;
    let b2 = 3.0 * s * t * t;
    let b3 = t * t * t;
    Point::new(
        b0 * ctrl[0].x + b1 * ctrl[1].x + b2 * ctrl[2].x + b3 * ctrl[3].x,
        b0 * ctrl[0].y + b1 * ctrl[1].y + b2 * ctrl[2].y + b3 * ctrl[3].y,
    )
}

fn bezier_derivatives(ctrl: &[Point; 4], t: f64) -> (Point, Point) {
    let s = 1.0 - t;
    let d1 = (ctrl[1] - ctrl[0]) * (3.0 * s * s)
        + (ctrl[2] - ctrl[1]) * (6.0 * s * t)
        + (ctrl[3] - ctrl[2]) * (3.0 * t * t);
    let d2 = (ctrl[2] - ctrl[1] * 2.0 + ctrl[0]) * (6.0 * s) + (ctrl[3] - ctrl[2] * 2.0 + ctrl[1]) * (6.0 * t);
    (d1, d2)
}

fn chord_params(pts: &[Point]) -> Vec<f64> {
    let mut u = Vec::with_capacity(pts.len());
    u.push(0.0);
    let mut acc = 0.0;
    for i in 1..pts.len() {
        acc += (pts[i] - pts[i - 1]).norm();
        u.push(acc);
    }
    if acc > 0.0 {
        for v in u.iter_mut() {
            *v /= acc;
        }
    } else {
        for (i, v) in u.iter_mut().enumerate() {
            *v = i as f64 / (pts.len() - 1).max(1) as f64;
        }
    }
    u
}

/// Least-squares inner control points for fixed endpoints and parameters.
fn lsq_inner(pts: &[Point], u: &[f64], p0: Point, p3: Point) -> (Point, Point) {
    let mut a11 = 0.0;
    let mut a12 = 0.0;
    let mut a22 = 0.0;
    let mut bx = [0.0f64; 2];
    let mut by = [0.0f64; 2];
    for (p, &t) in pts.iter().zip(u) {
        let s = 1.0 - t;
        let b0 = s * s * s;
        let b1 = 3.0 * s * s * t;
        let b2 = 3.0 * s * t * t;
        let b3 = t * t * t;
        let rx = p.x - b0 * p0.x - b3 * p3.x;
        let ry = p.y - b0 * p0.y - b3 * p3.y;
        a11 += b1 * b1;
        a12 += b1 * b2;
        a22 += b2 * b2;
        bx[0] += b1 * rx;
        bx[1] += b2 * rx;
        by[0] += b1 * ry;
        by[1] += b2 * ry;
    }
    let det = a11 * a22 - a12 * a12;
    let fallback = (p0 + (p3 - p0) * (1.0 / 3.0), p0 + (p3 - p0) * (2.0 / 3.0));
    if det.abs() < 1e-12 {
        return fallback;
    }
    let p1 = Point::new((bx[0] * a22 - bx[1] * a12) / det, (by[0] * a22 - by[1] * a12) / det);
    let p2 = Point::new((bx[1] * a11 - bx[0] * a12) / det, (by[1] * a11 - by[0] * a12) / det);
    if p1.is_finite() && p2.is_finite() {
        (p1, p2)
    } else {
        fallback
    }
}

fn fit_single(pts: &[Point]) -> ([Point; 4], f64, usize) {
    let p0 = pts[0];
    let p3 = pts[pts.len() - 1];
    let mut u = chord_params(pts);
    let (p1, p2) = lsq_inner(pts, &u, p0, p3);
    let mut ctrl = [p0, p1, p2, p3];
    for _ in 0..4 {
        // Newton step on each parameter toward the closest curve point,
        // then refit the inner control points.
        for (i, p) in pts.iter().enumerate() {
            let t = u[i];
            let q = eval_bezier(&ctrl, t);
            let (d1, d2) = bezier_derivatives(&ctrl, t);
            let diff = q - *p;
            let num = diff.dot(d1);
            let den = d1.dot(d1) + diff.dot(d2);
            if den.abs() > 1e-12 {
                u[i] = (t - num / den).clamp(0.0, 1.0);
            }
        }
        let (p1, p2) = lsq_inner(pts, &u, p0, p3);
        ctrl = [p0, p1, p2, p3];
    }
    let mut max_err = 0.0;
    let mut split = pts.len() / 2;
    for (i, p) in pts.iter().enumerate() {
        let err = (eval_bezier(&ctrl, u[i]) - *p).norm();
        if err > max_err {
            max_err = err;
            split = i;
        }
    }
    (ctrl, max_err, split)
}

fn fit_chain(pts: &[Point], tolerance: f64, out: &mut Vec<[Point; 4]>) {
    if pts.len() <= 2 {
        let a = pts[0];
        let b = *pts.last().unwrap();
        out.push([a, a + (b - a) * (1.0 / 3.0), a + (b - a) * (2.0 / 3.0), b]);
        return;
    }
    let (ctrl, max_err, split) = fit_single(pts);
    if max_err <= tolerance {
        out.push(ctrl);
        return;
    }
    let split = split.clamp(1, pts.len() - 2);
    fit_chain(&pts[..=split], tolerance, out);
    fit_chain(&pts[split..], tolerance, out);
}

/// Fit a closed cubic path to a closed polygon.
///
/// Spans are fit by least squares with Newton reparameterization; whenever
/// the deviation at some polygon vertex exceeds `fit_tolerance` the span is
/// split at the worst vertex and refit, so the returned path stays within
/// tolerance of every input vertex.
pub fn fit_beziers(poly: &[Point], fit_tolerance: f64) -> Result<CubicPath> {
    if poly.len() < 3 {
        return Err(Error::LayoutMismatch(format!("polygon needs at least 3 vertices, got {}", poly.len())));
    }
    let mut chain: Vec<Point> = poly.to_vec();
    chain.push(poly[0]);
    let mut segs = Vec::new();
    fit_chain(&chain, fit_tolerance, &mut segs);
    let mut points = Vec::with_capacity(3 * segs.len());
    for seg in &segs {
        points.push(seg[0]);
        points.push(seg[1]);
        points.push(seg[2]);
    }
    CubicPath::new(points)
}

// ---------------------------------------------------------------------------
// Rounds

fn crop_plain(image: &Raster, rect: IRect) -> Raster {
    let mut out = Raster::new(rect.w, rect.h);
    for y in 0..rect.h {
        for x in 0..rect.w {
            let sx = rect.x + x as i64;
            let sy = rect.y + y as i64;
            if sx >= 0 && sy >= 0 && (sx as u32) < image.width() && (sy as u32) < image.height() {
                out.set(x, y, image.get(sx as u32, sy as u32));
            }
        }
    }
    out
}

/// Vectorize one round: quantize within the region, trace component
/// contours per palette color, simplify, fit, and sort elements by component
/// area descending so the largest paint first. Element ids are local to the
/// returned round.
pub fn vectorize_round(image: &Raster, spec: &RoundSpec, seed: u64) -> Round {
    let (sub, off_x, off_y) = match spec.region {
        Some(r) => (crop_plain(image, r), r.x as f64, r.y as f64),
        None => (image.clone(), 0.0, 0.0),
    };
    let (palette, labels) = quantize_colors(&sub, spec.n_colors, seed);

    struct Piece {
        path: CubicPath,
        fill: Rgba,
        area: u64,
    }
    let mut pieces: Vec<Piece> = Vec::new();
    for (ci, color) in palette.iter().enumerate() {
        for comp in components(&labels, sub.width(), sub.height(), ci as u32) {
            if (comp.pixel_count as f64) < spec.min_area {
                continue;
            }
            let shifted: Vec<Point> = comp
                .outline
                .iter()
                .map(|p| Point::new(p.x + off_x, p.y + off_y))
                .collect();
            let simple = simplify_polygon(&shifted, spec.simplify_tolerance);
            if simple.len() < 3 {
                log::warn!("degenerate contour ({} vertices) dropped", simple.len());
                continue;
            }
            match fit_beziers(&simple, spec.fit_tolerance) {
                Ok(path) => pieces.push(Piece {
                    path,
                    fill: Rgba::opaque(color[0], color[1], color[2]),
                    area: comp.pixel_count,
                }),
                Err(e) => log::warn!("curve fit failed: {e}"),
            }
        }
    }
    pieces.sort_by_key(|p| std::cmp::Reverse(p.area));

    let mut elements = Vec::with_capacity(pieces.len());
    for (i, p) in pieces.into_iter().enumerate() {
        elements.push(crate::model::PathElement { id: i as u64, path: p.path, fill: p.fill });
    }
    Round { elements, precision: spec.n_colors, region: spec.region }
}

/// Multi-round vectorization: rounds are produced independently and stacked
/// in config order, with a canvas-sized mean-color background element
/// prefixed to round 1 so coverage is total before optimization starts.
pub fn vectorize(image: &Raster, config: &VectorizeConfig) -> Result<VectorDocument> {
    config.validate()?;
    let w = image.width();
    let h = image.height();
    let mut doc = VectorDocument::new(w, h)?;
    for (i, spec) in config.rounds.iter().enumerate() {
        if let Some(r) = spec.region {
            let canvas = IRect::new(0, 0, w, h);
            if !canvas.contains(&r) {
                return Err(Error::InvalidConfig(format!("round {i} region lies outside the canvas")));
            }
        }
        let seed = config.seed.wrapping_add(i as u64);
        let round = vectorize_round(image, spec, seed);
        doc.begin_round(round.precision, round.region);
        if i == 0 {
            let mean = image.mean_rgb();
            doc.push_element(CubicPath::rect(0.0, 0.0, w as f64, h as f64), Rgba::opaque(mean[0], mean[1], mean[2]))?;
        }
        for e in round.elements {
            doc.push_element(e.path, e.fill)?;
        }
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render, RenderSettings};

    fn two_tone(width: u32, height: u32) -> Raster {
        let mut img = Raster::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let c = if x < width / 2 { [0.1, 0.1, 0.1] } else { [0.9, 0.9, 0.9] };
                img.set(x, y, c);
            }
        }
        img
    }

    #[test]
    fn quantize_exact_colors_when_separable() {
        let img = two_tone(16, 16);
        let (palette, labels) = quantize_colors(&img, 2, 7);
        assert_eq!(palette.len(), 2);
        assert_eq!(palette[0], [0.1, 0.1, 0.1]);
        assert_eq!(palette[1], [0.9, 0.9, 0.9]);
        assert_eq!(labels[0], 0);
        assert_eq!(labels[15], 1);
    }

    #[test]
    fn quantize_constant_image_returns_one_color() {
        let img = Raster::filled(8, 8, [0.4, 0.5, 0.6]);
        let (palette, _) = quantize_colors(&img, 5, 0);
        assert_eq!(palette, vec![[0.4, 0.5, 0.6]]);
    }

    #[test]
    fn quantize_single_cluster_is_mean_color() {
        let img = two_tone(16, 16);
        let (palette, _) = quantize_colors(&img, 1, 3);
        assert_eq!(palette.len(), 1);
        for c in palette[0] {
            assert!((c - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn quantize_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut img = Raster::new(12, 12);
        for v in img.data_mut() {
            *v = rng.gen();
        }
        let a = quantize_colors(&img, 4, 9);
        let b = quantize_colors(&img, 4, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn contour_of_a_square_component() {
        // 10x10 block of label 1 inside a 16x16 field of label 0.
        let mut labels = vec![0u32; 16 * 16];
        for y in 3..13 {
            for x in 2..12 {
                labels[y * 16 + x] = 1;
            }
        }
        let polys = extract_contours(&labels, 16, 16, 1);
        assert_eq!(polys.len(), 1);
        let bbox = crate::geom::Rect::bounding(&polys[0]);
        assert_eq!(bbox, crate::geom::Rect::new(2.0, 3.0, 12.0, 13.0));
        assert!(shoelace(&polys[0]) > 0.0);
    }

    #[test]
    fn absent_label_has_no_contours() {
        let labels = vec![0u32; 64];
        assert!(extract_contours(&labels, 8, 8, 3).is_empty());
    }

    #[test]
    fn disjoint_components_trace_separately() {
        let mut labels = vec![0u32; 12 * 12];
        for y in 1..4 {
            for x in 1..4 {
                labels[y * 12 + x] = 1;
            }
        }
        for y in 7..11 {
            for x in 7..11 {
                labels[y * 12 + x] = 1;
            }
        }
        assert_eq!(extract_contours(&labels, 12, 12, 1).len(), 2);
    }

    #[test]
    fn simplify_drops_collinear_run() {
        let mut poly: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 0.0)).collect();
        poly.push(Point::new(9.0, 5.0));
        poly.push(Point::new(0.0, 5.0));
        let out = simplify_polygon(&poly, 0.5);
        assert!(out.contains(&Point::new(0.0, 0.0)));
        assert!(out.contains(&Point::new(9.0, 0.0)));
        for i in 1..9 {
            assert!(!out.contains(&Point::new(i as f64, 0.0)));
        }
    }

    #[test]
    fn simplify_zero_tolerance_is_identity() {
        let poly: Vec<Point> = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 2.0),
        ];
        assert_eq!(simplify_polygon(&poly, 0.0), poly);
    }

    #[test]
    fn simplify_removes_small_perturbation() {
        let poly = vec![
            Point::new(0.0, 0.0),
            Point::new(5.0, 0.1),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
        ];
        let out = simplify_polygon(&poly, 0.5);
        assert!(!out.contains(&Point::new(5.0, 0.1)));
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn fit_recovers_single_closed_cubic() {
        let ctrl = [
            Point::new(20.0, 20.0),
            Point::new(60.0, 0.0),
            Point::new(60.0, 60.0),
            Point::new(20.0, 20.0),
        ];
        let samples: Vec<Point> = (0..24).map(|j| eval_bezier(&ctrl, j as f64 / 24.0)).collect();
        let path = fit_beziers(&samples, 1.0).unwrap();
        assert_eq!(path.segment_count(), 1);
        // Deviation oracle: every sample within tolerance of the curve.
        let verts = crate::render::flatten_path(&path, 64);
        for s in &samples {
            let d = verts.iter().map(|v| (*v - *s).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 1.0 + 0.1, "sample off by {d}");
        }
    }

    #[test]
    fn fit_square_splits_at_corners() {
        let poly = vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
        ];
        let path = fit_beziers(&poly, 0.1).unwrap();
        assert!(path.segment_count() >= 4, "got {} segments", path.segment_count());
        assert_eq!(path.point_count() % 3, 0);
        // Deviation oracle against the polygon vertices.
        let verts = crate::render::flatten_path(&path, 64);
        for p in &poly {
            let d = verts.iter().map(|v| (*v - *p).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 0.2, "corner off by {d}");
        }
    }

    #[test]
    fn fit_triangle_is_closed_with_m_multiple_of_three() {
        let poly = vec![Point::new(0.0, 0.0), Point::new(8.0, 0.0), Point::new(4.0, 6.0)];
        let path = fit_beziers(&poly, 0.5).unwrap();
        assert_eq!(path.point_count() % 3, 0);
        assert!(path.segment_count() >= 1);
    }

    #[test]
    fn round_of_constant_image_is_one_element() {
        let img = Raster::filled(24, 24, [0.3, 0.6, 0.2]);
        let round = vectorize_round(&img, &RoundSpec::new(10), 0);
        assert_eq!(round.elements.len(), 1);
        assert_eq!(round.elements[0].fill, Rgba::opaque(0.3, 0.6, 0.2));
    }

    #[test]
    fn round_of_bisected_image_has_two_elements() {
        let img = two_tone(24, 24);
        let round = vectorize_round(&img, &RoundSpec::new(2), 0);
        assert_eq!(round.elements.len(), 2);
    }

    #[test]
    fn min_area_removes_specks() {
        let mut img = Raster::filled(24, 24, [0.9, 0.9, 0.9]);
        for y in 4..6 {
            for x in 4..6 {
                img.set(x, y, [0.0, 0.0, 0.0]);
            }
        }
        let round = vectorize_round(&img, &RoundSpec::new(2), 0);
        // The 2x2 speck (4 px) is below min_area 16; only the backdrop stays.
        assert_eq!(round.elements.len(), 1);
    }

    #[test]
    fn default_vectorize_has_two_rounds_and_background() {
        let img = two_tone(32, 32);
        let doc = vectorize(&img, &VectorizeConfig::default()).unwrap();
        assert_eq!(doc.rounds().len(), 2);
        let first = &doc.rounds()[0].elements[0];
        // Background rectangle spans the canvas with the mean color.
        let bbox = first.path.control_bbox();
        assert_eq!(bbox, crate::geom::Rect::new(0.0, 0.0, 32.0, 32.0));
        for c in [first.fill.r, first.fill.g, first.fill.b] {
            assert!((c - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn region_round_elements_stay_in_region() {
        let mut img = two_tone(32, 32);
        for y in 8..16 {
            for x in 8..16 {
                img.set(x, y, [0.5, 0.1, 0.1]);
            }
        }
        let region = IRect::new(4, 4, 16, 16);
        let mut config = VectorizeConfig::default();
        config.rounds.push(RoundSpec::with_region(30, region));
        let doc = vectorize(&img, &config).unwrap();
        assert_eq!(doc.rounds().len(), 3);
        let r = region.to_rect();
        for e in &doc.rounds()[2].elements {
            let bbox = e.path.control_bbox();
            assert!(bbox.x0 >= r.x0 - 1.5 && bbox.x1 <= r.x1 + 1.5);
            assert!(bbox.y0 >= r.y0 - 1.5 && bbox.y1 <= r.y1 + 1.5);
        }
    }

    #[test]
    fn constant_image_reconstructs_within_one_count() {
        let img = Raster::filled(16, 16, [0.25, 0.5, 0.75]);
        let doc = vectorize(&img, &VectorizeConfig::default()).unwrap();
        let out = render(&doc, &RenderSettings::default()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn vectorize_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = Raster::new(20, 20);
        for v in img.data_mut() {
            *v = (rng.gen::<f64>() * 4.0).floor() / 4.0;
        }
        let cfg = VectorizeConfig { rounds: vec![RoundSpec::new(4), RoundSpec::new(6)], seed: 77 };
        assert_eq!(vectorize(&img, &cfg).unwrap(), vectorize(&img, &cfg).unwrap());
    }
}
