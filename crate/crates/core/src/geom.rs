//! Convex hulls, minimum-area oriented rectangles, and grasp assembly.
//!
//! Points are `(x, y)` pixel coordinates with `y` down. Angles are degrees
//! measured from `+x` towards `+y` and normalised to `[0, 180)`.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::raster::PixelCluster;
use crate::scenegen::CategorySet;

/// Half-thickness given to rectangles fitted around collinear points.
pub const DEGENERATE_HALF_WIDTH: f64 = 0.5;

const TIE_REL: f64 = 1e-9;

pub type Point = (f64, f64);

/// Axis-aligned box by center and size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Tight bounds of a pixel set, covering whole pixels.
    pub fn from_pixels(pixels: &[(usize, usize)]) -> Result<Self> {
        if pixels.is_empty() {
            return arg("bounding box of no pixels");
        }
        let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
        for &(i, j) in pixels {
            i0 = i0.min(i);
            i1 = i1.max(i);
            j0 = j0.min(j);
            j1 = j1.max(j);
        }
        Ok(Self {
            x: (j0 + j1 + 1) as f64 / 2.0,
            y: (i0 + i1 + 1) as f64 / 2.0,
            w: (j1 - j0 + 1) as f64,
            h: (i1 - i0 + 1) as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Point,
    /// `(a, b)` with `a ≥ b`; `a` lies along `theta`.
    pub half_extents: (f64, f64),
    pub theta: f64,
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        4.0 * self.half_extents.0 * self.half_extents.1
    }

    fn axes(&self) -> (Point, Point) {
        let (s, c) = self.theta.to_radians().sin_cos();
        ((c, s), (-s, c))
    }

    /// How far `p` lies outside the rectangle (0 when inside).
    pub fn excess(&self, p: Point) -> f64 {
        let (u, v) = self.axes();
        let d = (p.0 - self.center.0, p.1 - self.center.1);
        let pu = (d.0 * u.0 + d.1 * u.1).abs() - self.half_extents.0;
        let pv = (d.0 * v.0 + d.1 * v.1).abs() - self.half_extents.1;
        pu.max(pv).max(0.0)
    }

    pub fn corners(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let (a, b) = self.half_extents;
        let (cx, cy) = self.center;
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .map(|(su, sv)| (cx + su * a * u.0 + sv * b * v.0, cy + su * a * u.1 + sv * b * v.1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspSolution {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub label: String,
    pub rect: OrientedRect,
    pub bbox: BoundingBox,
    pub score: f64,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain hull with positive orientation, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    if points.is_empty() {
        return arg("convex hull of no points");
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return arg("non-finite point");
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(pts);
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    Ok(hull)
}

fn angle_deg(d: Point) -> f64 {
    let t = d.1.atan2(d.0).to_degrees().rem_euclid(180.0);
    if t >= 180.0 - 1e-9 {
        0.0
    } else {
        t
    }
}

/// Builds the rectangle for axis `u` with extents `du ≥ 0` along `u` and
/// `dv` along its left normal; the long side decides `theta`.
fn rect_from(u: Point, center: Point, du: f64, dv: f64) -> OrientedRect {
    let v = (-u.1, u.0);
    let (tu, tv) = (angle_deg(u), angle_deg(v));
    let tie = (du - dv).abs() <= TIE_REL * du.max(dv);
    let (theta, a, b) = if tie {
        (tu.min(tv), du / 2.0, dv / 2.0)
    } else if du > dv {
        (tu, du / 2.0, dv / 2.0)
    } else {
        (tv, dv / 2.0, du / 2.0)
    };
    OrientedRect {
        center,
        half_extents: (a.max(b), a.min(b)),
        theta,
    }
}

/// Minimum-area enclosing rectangle of a convex polygon by rotating calipers.
///
/// One side of the result is collinear with a hull edge. Equal-area candidates
/// (within a relative 1e-9) resolve to the smallest `theta`.
pub fn min_area_rect(hull: &[Point]) -> Result<OrientedRect> {
    let eps = DEGENERATE_HALF_WIDTH;
    match hull.len() {
        0 => return arg("empty hull"),
        1 => {
            return Ok(OrientedRect {
                center: hull[0],
                half_extents: (eps, eps),
                theta: 0.0,
            })
        }
        2 => {
            let (p, q) = (hull[0], hull[1]);
            let d = (q.0 - p.0, q.1 - p.1);
            let a = (d.0.hypot(d.1) / 2.0).max(eps);
            return Ok(OrientedRect {
                center: ((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0),
                half_extents: (a, eps),
                theta: angle_deg(d),
            });
        }
        _ => {}
    }
    let n = hull.len();
    let at = |k: usize| hull[k % n];
    let dot = |a: Point, b: Point| a.0 * b.0 + a.1 * b.1;
    let (mut j, mut k, mut m) = (1usize, 1usize, 0usize);
    let mut best: Option<(f64, OrientedRect)> = None;
    for i in 0..n {
        let (p, q) = (at(i), at(i + 1));
        let len = (q.0 - p.0).hypot(q.1 - p.1);
        if len == 0.0 {
            continue;
        }
        let u = ((q.0 - p.0) / len, (q.1 - p.1) / len);
        let v = (-u.1, u.0);
        // caliper along +v: farthest from the edge
        let mut steps = 0;
        while steps < n && dot(at(j + 1), v) >= dot(at(j), v) {
            j += 1;
            steps += 1;
        }
        steps = 0;
        while steps < n && dot(at(k + 1), u) >= dot(at(k), u) {
            k += 1;
            steps += 1;
        }
        if i == 0 {
            m = j;
        }
        steps = 0;
        while steps < n && dot(at(m + 1), u) <= dot(at(m), u) {
            m += 1;
            steps += 1;
        }
        let (umin, umax) = (dot(at(m), u), dot(at(k), u));
        let (vmin, vmax) = (dot(p, v), dot(at(j), v));
        let (du, dv) = (umax - umin, vmax - vmin);
        let area = du * dv;
        let (cu, cv) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
        let center = (cu * u.0 + cv * v.0, cu * u.1 + cv * v.1);
        let rect = rect_from(u, center, du, dv);
        best = match best {
            None => Some((area, rect)),
            Some((ba, br)) => {
                let tol = TIE_REL * ba.max(area);
                if area < ba - tol || ((area - ba).abs() <= tol && rect.theta < br.theta) {
                    Some((area, rect))
                } else {
                    Some((ba, br))
                }
            }
        };
    }
    Ok(best.expect("non-degenerate hull has an edge").1)
}

/// The grasp rectangle and the axis-aligned box of a pixel cluster.
pub fn grasp_from_cluster(cluster: &PixelCluster) -> Result<(OrientedRect, BoundingBox)> {
    let hull = convex_hull(&cluster.centers())?;
    Ok((min_area_rect(&hull)?, BoundingBox::from_pixels(&cluster.pixels)?))
}

pub fn assemble_grasp(
    rect: OrientedRect,
    bbox: BoundingBox,
    label: &str,
    score: f64,
    categories: &CategorySet,
) -> Result<GraspSolution> {
    if categories.index_of(label).is_none() {
        return arg(format!("unknown label {label:?}"));
    }
    if !(0.0..=1.0).contains(&score) {
        return arg(format!("score {score} outside [0, 1]"));
    }
    Ok(GraspSolution {
        x: rect.center.0,
        y: rect.center.1,
        theta: rect.theta,
        label: label.to_string(),
        rect,
        bbox,
        score,
    })
}

/// Smallest axis-aligned bounding area of `points` rotated by `-deg`, for
/// sweeping rotations.
pub fn rotated_aabb_area(points: &[Point], deg: f64) -> f64 {
    let (s, c) = deg.to_radians().sin_cos();
    let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        let u = x * c + y * s;
        let v = -x * s + y * c;
        u0 = u0.min(u);
        u1 = u1.max(u);
        v0 = v0.min(v);
        v1 = v1.max(v);
    }
    (u1 - u0) * (v1 - v0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_corners(cx: f64, cy: f64, w: f64, h: f64, deg: f64) -> Vec<Point> {
        let (s, c) = deg.to_radians().sin_cos();
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .iter()
            .map(|&(a, b)| {
                let (u, v) = (a * w / 2.0, b * h / 2.0);
                (cx + u * c - v * s, cy + u * s + v * c)
            })
            .collect()
    }

    #[test]
    fn hull_drops_interior_point() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)];
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.len(), 4);
        for c in &pts[..4] {
            assert!(h.contains(c));
        }
    }

    #[test]
    fn hull_degenerate_cases() {
        assert!(convex_hull(&[]).is_err());
        assert_eq!(convex_hull(&[(2.0, 3.0)]).unwrap(), [(2.0, 3.0)]);
        let line: Vec<Point> = (0..10).map(|k| (k as f64, 2.0 * k as f64)).collect();
        assert_eq!(convex_hull(&line).unwrap(), [(0.0, 0.0), (9.0, 18.0)]);
    }

    #[test]
    fn axis_aligned_rectangle() {
        let r = min_area_rect(&convex_hull(&rect_corners(30.0, 20.0, 20.0, 10.0, 0.0)).unwrap()).unwrap();
        assert!((r.center.0 - 30.0).abs() < 1e-12 && (r.center.1 - 20.0).abs() < 1e-12);
        assert!((r.half_extents.0 - 10.0).abs() < 1e-12);
        assert!((r.half_extents.1 - 5.0).abs() < 1e-12);
        assert_eq!(r.theta, 0.0);
    }

    #[test]
    fn rotated_rectangle_angle() {
        for deg in [30.0, 95.0, 150.0, 179.5] {
            let r = min_area_rect(&convex_hull(&rect_corners(0.0, 0.0, 20.0, 10.0, deg)).unwrap()).unwrap();
            assert!((r.theta - deg).abs() < 1e-6, "{deg} → {}", r.theta);
            assert!((r.area() - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_tie_goes_to_smallest_theta() {
        let r = min_area_rect(&convex_hull(&rect_corners(5.0, 5.0, 8.0, 8.0, 0.0)).unwrap()).unwrap();
        assert!((r.area() - 64.0).abs() < 1e-9);
        assert_eq!(r.theta, 0.0);
        let r = min_area_rect(&convex_hull(&rect_corners(5.0, 5.0, 8.0, 8.0, 20.0)).unwrap()).unwrap();
        assert!((r.theta - 20.0).abs() < 1e-6);
    }

    #[test]
    fn solid_blob_grasp() {
        let pixels: Vec<_> = (40..50).flat_map(|i| (30..50).map(move |j| (i, j))).collect();
        let (r, b) = grasp_from_cluster(&PixelCluster { pixels }).unwrap();
        assert!((r.center.0 - 40.0).abs() < 1e-12 && (r.center.1 - 45.0).abs() < 1e-12);
        assert_eq!(r.theta, 0.0);
        assert_eq!(b, BoundingBox { x: 40.0, y: 45.0, w: 20.0, h: 10.0 });
    }

    #[test]
    fn thin_line_grasp() {
        let pixels: Vec<_> = (0..250).map(|j| (3, j)).collect();
        let (r, _) = grasp_from_cluster(&PixelCluster { pixels }).unwrap();
        assert_eq!(r.theta, 0.0);
        assert_eq!(r.half_extents, (124.5, DEGENERATE_HALF_WIDTH));
        let diag: Vec<_> = (0..250).map(|k| (k, k)).collect();
        let (r, _) = grasp_from_cluster(&PixelCluster { pixels: diag }).unwrap();
        assert!((r.theta - 45.0).abs() < 1e-12);
    }

    #[test]
    fn assemble_checks_label_and_score() {
        let cats = CategorySet::default();
        let rect = OrientedRect { center: (5.0, 5.0), half_extents: (3.0, 2.0), theta: 90.0 };
        let bbox = BoundingBox { x: 5.0, y: 5.0, w: 4.0, h: 6.0 };
        let g = assemble_grasp(rect, bbox, "apple", 0.98, &cats).unwrap();
        assert_eq!((g.x, g.y, g.theta, g.label.as_str()), (5.0, 5.0, 90.0, "apple"));
        assert!(assemble_grasp(rect, bbox, "banana", 0.5, &cats).is_err());
        assert!(assemble_grasp(rect, bbox, "apple", 1.0, &cats).is_ok());
        assert!(assemble_grasp(rect, bbox, "apple", 0.0, &cats).is_ok());
        assert!(assemble_grasp(rect, bbox, "apple", 1.5, &cats).is_err());
    }
}
