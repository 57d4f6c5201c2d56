pub type Polygon = [[f64; 2]];

/// Even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon(poly: &Polygon, x: f64, y: f64) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let [x1, y1] = poly[i];
        let [x2, y2] = poly[(i + 1) % n];
        // On-edge check.
        let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
        if cross.abs() < 1e-9 * (1.0 + (x2 - x1).abs() + (y2 - y1).abs())
            && x >= x1.min(x2) - 1e-9
            && x <= x1.max(x2) + 1e-9
            && y >= y1.min(y2) - 1e-9
            && y <= y1.max(y2) + 1e-9
        {
            return true;
        }
        if (y1 > y) != (y2 > y) && x < x1 + (y - y1) * (x2 - x1) / (y2 - y1) {
            inside = !inside;
        }
    }
    inside
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Whether the closed square `[x0, x0 + side] x [y0, y0 + side]` lies inside
/// the polygon: all corners inside, no polygon vertex strictly inside the
/// square, and no edge crossing.
pub fn square_inside_polygon(poly: &Polygon, x0: f64, y0: f64, side: f64) -> bool {
    let corners = [[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]];
    if !corners.iter().all(|c| point_in_polygon(poly, c[0], c[1])) {
        return false;
    }
    if poly
        .iter()
        .any(|p| p[0] > x0 && p[0] < x0 + side && p[1] > y0 && p[1] < y0 + side)
    {
        return false;
    }
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for k in 0..4 {
            if segments_cross(a, b, corners[k], corners[(k + 1) % 4]) {
                return false;
            }
        }
    }
    true
}

/// Sutherland-Hodgman clip against `[x0, x1] x [y0, y1]`.
pub fn clip_polygon_to_rect(poly: &Polygon, x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = poly.to_vec();
    let planes: [(usize, f64, bool); 4] = [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)];
    for (axis, bound, keep_greater) in planes {
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_greater { p[axis] >= bound } else { p[axis] <= bound };
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let hit = |a: [f64; 2], b: [f64; 2]| {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            };
            match (inside(&prev), inside(&cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(hit(prev, cur)),
                (false, true) => {
                    out.push(hit(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment() {
        let sq = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        assert!(point_in_polygon(&sq, 5.0, 5.0));
        assert!(point_in_polygon(&sq, 10.0, 3.0));
        assert!(!point_in_polygon(&sq, 11.0, 3.0));
        assert!(square_inside_polygon(&sq, 0.0, 0.0, 10.0));
        assert!(!square_inside_polygon(&sq, 1.0, 1.0, 10.0));
        // An L-shape: the notch rules out squares that only have corners inside.
        let l = [[0.0, 0.0], [10.0, 0.0], [10.0, 4.0], [4.0, 4.0], [4.0, 10.0], [0.0, 10.0]];
        assert!(square_inside_polygon(&l, 0.0, 0.0, 4.0));
        assert!(!square_inside_polygon(&l, 2.0, 2.0, 4.0));
    }

    #[test]
    fn clipping() {
        let tri = [[-5.0, 5.0], [15.0, 5.0], [5.0, 15.0]];
        let c = clip_polygon_to_rect(&tri, 0.0, 0.0, 10.0, 10.0);
        assert!(c.iter().all(|p| (0.0..=10.0).contains(&p[0]) && (0.0..=10.0).contains(&p[1])));
        assert!(point_in_polygon(&c, 5.0, 8.0));
        assert!(!point_in_polygon(&c, 5.0, 4.0));
    }
}
