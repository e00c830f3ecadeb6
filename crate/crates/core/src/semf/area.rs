//! Planar areas on the ground plane (x/y; z is ignored).

use serde::{Deserialize, Serialize};

use crate::scene::Vec3;

const EPS: f64 = 1e-9;

/// A simple polygon given by its vertices in order, `[x, y]` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon(pub Vec<[f64; 2]>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolygonError {
    #[error("a polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
    #[error("polygon has zero area")]
    Degenerate,
    #[error("edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    cross(a, b, p).abs() <= EPS * (1.0 + dist(a, b))
        && p[0] >= a[0].min(b[0]) - EPS
        && p[0] <= a[0].max(b[0]) + EPS
        && p[1] >= a[1].min(b[1]) - EPS
        && p[1] <= a[1].max(b[1]) + EPS
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Whether closed segments `ab` and `cd` share a point.
fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
        && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Whether segments `ab` and `cd` cross at a single point interior to both.
fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
        && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

impl Polygon {
    /// Axis-aligned rectangle.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.0
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.0.len();
        (0..n).map(move |i| (self.0[i], self.0[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        self.edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
            / 2.0
    }

    pub fn validate(&self) -> Result<(), PolygonError> {
        let n = self.0.len();
        if n < 3 {
            return Err(PolygonError::TooFewVertices(n));
        }
        if let Some(i) = self
            .0
            .iter()
            .position(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(PolygonError::NonFinite(i));
        }
        for i in 0..n {
            let (a, b) = (self.0[i], self.0[(i + 1) % n]);
            if dist(a, b) <= EPS {
                return Err(PolygonError::Degenerate);
            }
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (c, d) = (self.0[j], self.0[(j + 1) % n]);
                if segments_touch(a, b, c, d) {
                    return Err(PolygonError::SelfIntersecting(i, j));
                }
            }
        }
        if self.signed_area().abs() <= EPS {
            return Err(PolygonError::Degenerate);
        }
        Ok(())
    }

    /// Vertex centroid lifted to the ground plane.
    pub fn centroid(&self) -> Vec3 {
        let area = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (a, b) in self.edges() {
            let w = a[0] * b[1] - b[0] * a[1];
            cx += (a[0] + b[0]) * w;
            cy += (a[1] + b[1]) * w;
        }
        Vec3::new(cx / (6.0 * area), cy / (6.0 * area), 0.0)
    }

    /// Point-in-polygon on the ground plane; the boundary counts as inside.
    pub fn contains_xy(&self, p: [f64; 2]) -> bool {
        if self.edges().any(|(a, b)| on_segment(p, a, b)) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.contains_xy([p.x, p.y])
    }

    /// `other ⊆ self`, boundaries allowed to touch.
    pub fn covers(&self, other: &Polygon) -> bool {
        if !other.0.iter().all(|v| self.contains_xy(*v)) {
            return false;
        }
        for (a, b) in other.edges() {
            if self.edges().any(|(c, d)| segments_cross(a, b, c, d)) {
                return false;
            }
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            if !self.contains_xy(mid) {
                return false;
            }
        }
        true
    }

    /// Whether the two areas share any point with positive area.
    pub fn overlaps(&self, other: &Polygon) -> bool {
        for (a, b) in self.edges() {
            if other.edges().any(|(c, d)| segments_cross(a, b, c, d)) {
                return true;
            }
        }
        let strictly_inside = |poly: &Polygon, p: [f64; 2]| {
            poly.contains_xy(p) && !poly.edges().any(|(a, b)| on_segment(p, a, b))
        };
        if other.0.iter().any(|v| strictly_inside(self, *v))
            || self.0.iter().any(|v| strictly_inside(other, *v))
        {
            return true;
        }
        // Identical or edge-aligned shapes: probe the interior of each.
        let c = other.centroid();
        let c2 = self.centroid();
        strictly_inside(self, [c.x, c.y]) || strictly_inside(other, [c2.x, c2.y])
    }

    /// Whether a disc of `radius` around `center` reaches the area.
    pub fn intersects_disc(&self, center: Vec3, radius: f64) -> bool {
        let p = [center.x, center.y];
        self.contains_xy(p)
            || self
                .edges()
                .any(|(a, b)| point_segment_distance(p, a, b) <= radius)
    }

    /// Azimuths of the vertices seen from `from`, in radians.
    pub fn vertex_azimuths(&self, from: Vec3) -> Vec<f64> {
        self.0
            .iter()
            .map(|v| (v[1] - from.y).atan2(v[0] - from.x))
            .collect()
    }
}
