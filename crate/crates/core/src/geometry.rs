//! BEV overlap of yaw-rotated rectangles by convex polygon clipping.

use alloc::vec::Vec;

use crate::anchors::ProposalBox;

type Point = (f64, f64);

/// Intersection over union of two boxes' BEV footprints (z and height ignored).
///
/// Disjoint boxes give 0; boxes with zero or non-finite area give 0.
/// The result is symmetric bit-for-bit: the pair is put in a canonical
/// order before clipping.
pub fn rotated_iou(a: &ProposalBox, b: &ProposalBox) -> f64 {
    let area_a = a.length * a.width;
    let area_b = b.length * b.width;
    if !(area_a > 0.0 && area_b > 0.0) || !area_a.is_finite() || !area_b.is_finite() {
        return 0.0;
    }
    let (first, second) = if canonical_key(a) <= canonical_key(b) { (a, b) } else { (b, a) };
    let inter = intersection_area(&first.corners(), &second.corners());
    let union = area_a + area_b - inter;
    if !(union > 0.0) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn canonical_key(b: &ProposalBox) -> [u64; 5] {
    [b.x, b.y, b.length, b.width, b.yaw].map(|v| v.to_bits())
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn intersection_area(subject: &[Point], clip: &[Point]) -> f64 {
    let poly = clip_polygon(subject, clip);
    if poly.len() < 3 {
        return 0.0;
    }
    shoelace(&poly).max(0.0)
}

/// Sutherland-Hodgman: clips `subject` against every edge of the convex `clip`.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let input = output;
        output = Vec::with_capacity(input.len() + 2);
        let mut prev = input[input.len() - 1];
        let mut prev_in = side(e0, e1, prev) >= 0.0;
        for &cur in &input {
            let cur_in = side(e0, e1, cur) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, e0, e1));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, e0, e1));
            }
            prev = cur;
            prev_in = cur_in;
        }
    }
    output
}

/// Positive when `p` lies to the left of the directed edge `a -> b`.
#[inline]
fn side(a: Point, b: Point, p: Point) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let sp = side(a, b, p);
    let sq = side(a, b, q);
    let denom = sp - sq;
    if denom == 0.0 {
        return q;
    }
    let t = sp / denom;
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

pub fn shoelace(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}
