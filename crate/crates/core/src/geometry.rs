//! Planar primitives used by mask decoding and mask enhancement: polygon
//! scan conversion, convex hulls, minimum-volume enclosing ellipses and
//! cubic curves.
//!
//! Two coordinate conventions are in play. Annotation polygons live in
//! corner coordinates, where pixel `(x, y)` spans `[x, x+1) x [y, y+1)` and
//! its center is `(x + 0.5, y + 0.5)`. Hulls and ellipses are computed over
//! pixel indices directly, so pixel `(x, y)` is the point `(x, y)`.

use crate::model::BinaryMask;

/// Even-odd fill of a closed polygon in corner coordinates, sampled at
/// pixel centers.
pub fn fill_polygon(vertices: &[(f64, f64)], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    let n = vertices.len();
    if n < 3 {
        return mask;
    }
    let mut crossings = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (xi, yi) = vertices[i];
            let (xj, yj) = vertices[(i + n - 1) % n];
            if (yi > yc) != (yj > yc) {
                crossings.push(xi + (yc - yi) * (xj - xi) / (yj - yi));
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        // A center is inside when an odd number of crossings lie strictly
        // to its right.
        let mut right = 0;
        for x in 0..width {
            let xc = x as f64 + 0.5;
            while right < crossings.len() && crossings[right] <= xc {
                right += 1;
            }
            if (crossings.len() - right) % 2 == 1 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull with collinear points removed. Degenerate
/// inputs return one or two points.
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Pixels whose index point lies in the closed hull polygon.
pub fn fill_convex(hull: &[(i64, i64)], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    if hull.is_empty() {
        return mask;
    }
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let x0 = clamp(hull.iter().map(|p| p.0).min().unwrap_or(0), width);
    let x1 = clamp(hull.iter().map(|p| p.0).max().unwrap_or(0), width);
    let y0 = clamp(hull.iter().map(|p| p.1).min().unwrap_or(0), height);
    let y1 = clamp(hull.iter().map(|p| p.1).max().unwrap_or(0), height);
    let n = hull.len();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x as i64, y as i64);
            let inside = (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0);
            if inside {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Ellipse `{p : (p - c)^T A (p - c) <= 1}` with `A` symmetric positive
/// definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub shape: [[f64; 2]; 2],
}

impl Ellipse {
    pub fn level(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let a = self.shape;
        a[0][0] * dx * dx + 2.0 * a[0][1] * dx * dy + a[1][1] * dy * dy
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.level(p) <= 1.0 + 1e-9
    }

    /// Multiplies both semi-axes by `factor`.
    pub fn scaled(&self, factor: f64) -> Ellipse {
        let k = 1.0 / (factor * factor);
        Ellipse {
            center: self.center,
            shape: [
                [self.shape[0][0] * k, self.shape[0][1] * k],
                [self.shape[1][0] * k, self.shape[1][1] * k],
            ],
        }
    }

    pub fn area(&self) -> f64 {
        let det = self.shape[0][0] * self.shape[1][1] - self.shape[0][1] * self.shape[1][0];
        std::f64::consts::PI / det.sqrt()
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> [f64; 2] {
        let det = self.shape[0][0] * self.shape[1][1] - self.shape[0][1] * self.shape[1][0];
        [
            (self.shape[1][1] / det).sqrt(),
            (self.shape[0][0] / det).sqrt(),
        ]
    }

    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        let mut mask = BinaryMask::empty(width, height);
        let [hx, hy] = self.half_extents();
        let lo = |c: f64, h: f64| (c - h).floor().max(0.0) as usize;
        let hi = |c: f64, h: f64, n: usize| ((c + h).ceil().max(0.0) as usize).min(n - 1);
        let (x0, x1) = (lo(self.center[0], hx), hi(self.center[0], hx, width));
        let (y0, y1) = (lo(self.center[1], hy), hi(self.center[1], hy, height));
        if x0 > x1 || y0 > y1 {
            return mask;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains([x as f64, y as f64]) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !(det.abs() > 1e-12 * scale.powi(3)) {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        [
            c00 * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            c01 * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            c02 * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}

/// Khachiyan's iteration for the minimum-volume enclosing ellipse of a 2-D
/// point set. Stops once the weight update is below `tolerance`. The result
/// is then rescaled so that every input point satisfies the ellipse
/// inequality exactly. Returns `None` when the points do not span the plane.
pub fn minimum_enclosing_ellipse(points: &[[f64; 2]], tolerance: f64) -> Option<Ellipse> {
    const DIM: f64 = 2.0;
    const MAX_ITER: usize = 10_000;
    let n = points.len();
    if n < 3 {
        return None;
    }
    // centered coordinates keep the moment matrix well conditioned
    let offset = points.iter().fold([0.0; 2], |a, p| [a[0] + p[0] / n as f64, a[1] + p[1] / n as f64]);
    let input = points;
    let points: Vec<[f64; 2]> = input.iter().map(|p| [p[0] - offset[0], p[1] - offset[1]]).collect();
    let mut u = vec![1.0 / n as f64; n];
    for _ in 0..MAX_ITER {
        let mut x = [[0.0; 3]; 3];
        for (p, &w) in points.iter().zip(&u) {
            let q = [p[0], p[1], 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    x[i][j] += w * q[i] * q[j];
                }
            }
        }
        let xi = invert3(&x)?;
        let (mut best, mut best_m) = (0, f64::NEG_INFINITY);
        for (j, p) in points.iter().enumerate() {
            let q = [p[0], p[1], 1.0];
            let mut m = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    m += q[a] * xi[a][b] * q[b];
                }
            }
            if m > best_m {
                best_m = m;
                best = j;
            }
        }
        let step = (best_m - DIM - 1.0) / ((DIM + 1.0) * (best_m - 1.0));
        let mut change = 0.0;
        for (j, w) in u.iter_mut().enumerate() {
            let next = (1.0 - step) * *w + if j == best { step } else { 0.0 };
            change += (next - *w) * (next - *w);
            *w = next;
        }
        if change.sqrt() < tolerance {
            break;
        }
    }

    let mut c = [0.0; 2];
    for (p, &w) in points.iter().zip(&u) {
        c[0] += w * p[0];
        c[1] += w * p[1];
    }
    let mut s = [[0.0; 2]; 2];
    for (p, &w) in points.iter().zip(&u) {
        s[0][0] += w * p[0] * p[0];
        s[0][1] += w * p[0] * p[1];
        s[1][1] += w * p[1] * p[1];
    }
    s[0][0] -= c[0] * c[0];
    s[0][1] -= c[0] * c[1];
    s[1][1] -= c[1] * c[1];
    s[1][0] = s[0][1];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if !(det > 0.0) {
        return None;
    }
    let inv = 1.0 / (DIM * det);
    let mut ellipse = Ellipse {
        center: [c[0] + offset[0], c[1] + offset[1]],
        shape: [
            [s[1][1] * inv, -s[0][1] * inv],
            [-s[1][0] * inv, s[0][0] * inv],
        ],
    };
    let worst = input.iter().map(|&p| ellipse.level(p)).fold(0.0, f64::max);
    if worst > 1.0 {
        ellipse = ellipse.scaled(worst.sqrt());
    }
    Some(ellipse)
}

pub fn cubic_point(p: [[f64; 2]; 4], t: f64) -> [f64; 2] {
    let mt = 1.0 - t;
    let w = [mt * mt * mt, 3.0 * mt * mt * t, 3.0 * mt * t * t, t * t * t];
    [
        w[0] * p[0][0] + w[1] * p[1][0] + w[2] * p[2][0] + w[3] * p[3][0],
        w[0] * p[0][1] + w[1] * p[1][1] + w[2] * p[2][1] + w[3] * p[3][1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pnpoly(vertices: &[(f64, f64)], px: f64, py: f64) -> bool {
        let mut inside = false;
        let n = vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = vertices[i];
            let (xj, yj) = vertices[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    #[test]
    fn square_polygon_covers_nine_centers() {
        let poly = [(1.0, 1.0), (4.0, 1.0), (4.0, 4.0), (1.0, 4.0)];
        let mask = fill_polygon(&poly, 6, 6);
        let brute = BinaryMask::from_fn(6, 6, |x, y| pnpoly(&poly, x as f64 + 0.5, y as f64 + 0.5));
        assert_eq!(mask, brute);
        assert_eq!(mask.area(), 9);
    }

    #[test]
    fn concave_and_self_intersecting_polygons_match_pnpoly() {
        let polys: Vec<Vec<(f64, f64)>> = vec![
            vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (5.0, 3.0), (0.0, 10.0)],
            vec![(1.0, 1.0), (11.0, 9.0), (11.0, 1.0), (1.0, 9.0)],
            vec![(2.3, 0.7), (8.9, 2.1), (6.2, 11.4), (0.2, 6.6), (9.5, 7.7)],
        ];
        for poly in polys {
            let mask = fill_polygon(&poly, 12, 12);
            let brute =
                BinaryMask::from_fn(12, 12, |x, y| pnpoly(&poly, x as f64 + 0.5, y as f64 + 0.5));
            assert_eq!(mask, brute);
        }
    }

    #[test]
    fn hull_of_square_with_interior() {
        let pts = [(0, 0), (2, 0), (2, 2), (0, 2), (1, 1), (1, 0)];
        assert_eq!(convex_hull(&pts), vec![(0, 0), (2, 0), (2, 2), (0, 2)]);
        assert_eq!(convex_hull(&[(1, 1), (1, 1)]), vec![(1, 1)]);
        assert_eq!(convex_hull(&[(0, 0), (1, 1), (2, 2)]).len(), 2);
    }

    #[test]
    fn degenerate_hull_fills_segment() {
        let hull = convex_hull(&[(1, 1), (2, 2), (4, 4)]);
        let mask = fill_convex(&hull, 6, 6);
        assert_eq!(mask.area(), 4);
        for i in 1..5 {
            assert!(mask.get(i, i));
        }
    }

    #[test]
    fn ellipse_of_rectangle_corners() {
        // the MVEE of a centered 2a x 2b rectangle has semi-axes a*sqrt2, b*sqrt2
        let pts = [[-3.0, -1.0], [3.0, -1.0], [3.0, 1.0], [-3.0, 1.0]];
        let e = minimum_enclosing_ellipse(&pts, 1e-7).unwrap();
        assert!(e.center[0].abs() < 1e-6 && e.center[1].abs() < 1e-6);
        assert!((e.shape[0][0] - 1.0 / 18.0).abs() < 1e-5);
        assert!((e.shape[1][1] - 1.0 / 2.0).abs() < 1e-4);
        for p in pts {
            assert!(e.contains(p));
        }
    }

    #[test]
    fn ellipse_of_small_triangle_far_from_origin() {
        let pts = [[500.0, 700.0], [501.0, 700.0], [500.0, 701.0]];
        let e = minimum_enclosing_ellipse(&pts, 1e-7).unwrap();
        assert!((e.center[0] - 500.0 - 1.0 / 3.0).abs() < 1e-4);
        assert!((e.center[1] - 700.0 - 1.0 / 3.0).abs() < 1e-4);
        for p in pts {
            assert!(e.contains(p));
        }
    }

    #[test]
    fn ellipse_rejects_collinear_points() {
        assert!(minimum_enclosing_ellipse(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 1e-3).is_none());
    }

    #[test]
    fn cubic_endpoints() {
        let p = [[0.0, 0.0], [1.0, 2.0], [3.0, 2.0], [4.0, 0.0]];
        assert_eq!(cubic_point(p, 0.0), [0.0, 0.0]);
        assert_eq!(cubic_point(p, 1.0), [4.0, 0.0]);
        assert!((cubic_point(p, 0.5)[1] - 1.5).abs() < 1e-12);
    }
}
