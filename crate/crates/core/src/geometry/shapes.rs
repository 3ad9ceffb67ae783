//! Planar signed-distance primitives. Negative values mean penetration.

pub type Point = [f64; 2];

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Closest-point distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let s = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm(sub(p, [a[0] + s * ab[0], a[1] + s * ab[1]]))
}

pub fn point_circle(p: Point, center: Point, radius: f64) -> f64 {
    norm(sub(p, center)) - radius
}

pub fn point_rect(p: Point, min: Point, max: Point) -> f64 {
    let dx = (min[0] - p[0]).max(p[0] - max[0]);
    let dy = (min[1] - p[1]).max(p[1] - max[1]);
    if dx <= 0.0 && dy <= 0.0 {
        dx.max(dy)
    } else {
        dx.max(0.0).hypot(dy.max(0.0))
    }
}

pub fn segment_circle(a: Point, b: Point, center: Point, radius: f64) -> f64 {
    point_segment_distance(center, a, b) - radius
}

/// Parameter interval of `a + s (b - a)`, `s` in `[0, 1]`, lying inside the
/// box (Liang-Barsky clipping).
fn clip_segment(a: Point, b: Point, min: Point, max: Point) -> Option<(f64, f64)> {
    let d = sub(b, a);
    let mut s0 = 0.0_f64;
    let mut s1 = 1.0_f64;
    for axis in 0..2 {
        let (p, q_lo, q_hi) = (d[axis], a[axis] - min[axis], max[axis] - a[axis]);
        for (p, q) in [(-p, q_lo), (p, q_hi)] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    s0 = s0.max(r);
                } else {
                    s1 = s1.min(r);
                }
            }
        }
    }
    (s0 <= s1).then_some((s0, s1))
}

/// Minimum over the segment's points of the box signed distance.
pub fn segment_rect(a: Point, b: Point, min: Point, max: Point) -> f64 {
    let d = sub(b, a);
    match clip_segment(a, b, min, max) {
        None => {
            let corners = [min, [max[0], min[1]], max, [min[0], max[1]]];
            let mut best = f64::INFINITY;
            for i in 0..4 {
                let (c0, c1) = (corners[i], corners[(i + 1) % 4]);
                best = best
                    .min(point_segment_distance(a, c0, c1))
                    .min(point_segment_distance(b, c0, c1))
                    .min(point_segment_distance(c0, a, b));
            }
            best
        }
        Some((s0, s1)) => {
            // Inside the box the signed distance is -min of four affine face
            // distances, so the minimum sits at a clip end or a crossing.
            let faces = [
                (a[0] - min[0], d[0]),
                (max[0] - a[0], -d[0]),
                (a[1] - min[1], d[1]),
                (max[1] - a[1], -d[1]),
            ];
            let eval = |s: f64| point_rect([a[0] + s * d[0], a[1] + s * d[1]], min, max);
            let mut best = eval(s0).min(eval(s1));
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let slope = faces[i].1 - faces[j].1;
                    if slope != 0.0 {
                        let s = (faces[j].0 - faces[i].0) / slope;
                        if s > s0 && s < s1 {
                            best = best.min(eval(s));
                        }
                    }
                }
            }
            best
        }
    }
}
