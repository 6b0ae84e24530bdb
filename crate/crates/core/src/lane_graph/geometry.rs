//! Planar polyline helpers shared by projection, scene synthesis and the
//! lane encoder.

pub type Point = [f64; 2];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Rotates `p` by `angle` radians about the origin.
pub fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(std::f64::consts::TAU);
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Closest point on a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub distance: f64,
    /// Unit tangent of the piece containing the closest point.
    pub tangent: Point,
    pub point: Point,
    /// Arc length from the polyline start to `point`.
    pub arc_length: f64,
}

pub fn project_onto_polyline(points: &[Point], p: Point) -> Projection {
    let mut best: Option<Projection> = None;
    let mut walked = 0.0;
    for w in points.windows(2) {
        let d = sub(w[1], w[0]);
        let len = norm(d);
        let t = (((p[0] - w[0][0]) * d[0] + (p[1] - w[0][1]) * d[1]) / (len * len)).clamp(0.0, 1.0);
        let q = [w[0][0] + t * d[0], w[0][1] + t * d[1]];
        let distance = dist(p, q);
        if best.is_none_or(|b| distance < b.distance) {
            best = Some(Projection {
                distance,
                tangent: [d[0] / len, d[1] / len],
                point: q,
                arc_length: walked + t * len,
            });
        }
        walked += len;
    }
    best.expect("polyline has at least one piece")
}

/// Position and unit tangent at arc length `s`, clamped to the polyline.
pub fn point_at(points: &[Point], s: f64) -> (Point, Point) {
    let mut remaining = s.max(0.0);
    for (i, w) in points.windows(2).enumerate() {
        let d = sub(w[1], w[0]);
        let len = norm(d);
        let tangent = [d[0] / len, d[1] / len];
        let last = i + 2 == points.len();
        if remaining <= len || last {
            let t = (remaining / len).min(1.0);
            return ([w[0][0] + t * d[0], w[0][1] + t * d[1]], tangent);
        }
        remaining -= len;
    }
    unreachable!("polyline has at least one piece")
}

/// `count` points equally spaced in arc length, endpoints included.
pub fn resample(points: &[Point], count: usize) -> Vec<Point> {
    let total = polyline_length(points);
    (0..count)
        .map(|i| {
            let s = if count == 1 { 0.0 } else { total * i as f64 / (count - 1) as f64 };
            point_at(points, s).0
        })
        .collect()
}
