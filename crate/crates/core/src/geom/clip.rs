//! Exact polygon-over-grid overlap areas.
//!
//! Every cell touched by a ring edge is clipped against the polygon with
//! Sutherland-Hodgman; the remaining cells in the polygon's window are either
//! fully inside or fully outside, which one scanline per row decides.

use super::polygon::signed_ring_area;
use super::{GridSpec, PlanarPoint, Polygon, Rect};

/// Area of `poly` ∩ `rect`.
///
/// Clipping a ring against a convex window yields a (possibly degenerate)
/// ring whose signed area equals the signed area of the true intersection, so
/// summing over exterior and holes is exact even for concave input.
pub fn polygon_rect_area(poly: &Polygon, rect: &Rect) -> f64 {
    if !poly.bbox().intersects(rect) {
        return 0.0;
    }
    let mut buf_a = Vec::with_capacity(poly.exterior().len() + 8);
    let mut buf_b = Vec::with_capacity(poly.exterior().len() + 8);
    let total: f64 = poly
        .rings()
        .map(|ring| clipped_ring_area(ring, rect, &mut buf_a, &mut buf_b))
        .sum();
    total.clamp(0.0, rect.area())
}

fn clipped_ring_area(
    ring: &[PlanarPoint],
    rect: &Rect,
    a: &mut Vec<PlanarPoint>,
    b: &mut Vec<PlanarPoint>,
) -> f64 {
    a.clear();
    a.extend_from_slice(&ring[..ring.len() - 1]);
    clip_half_plane(a, b, |p| p.x >= rect.min.x, |p, q| lerp_x(p, q, rect.min.x));
    clip_half_plane(b, a, |p| p.x <= rect.max.x, |p, q| lerp_x(p, q, rect.max.x));
    clip_half_plane(a, b, |p| p.y >= rect.min.y, |p, q| lerp_y(p, q, rect.min.y));
    clip_half_plane(b, a, |p| p.y <= rect.max.y, |p, q| lerp_y(p, q, rect.max.y));
    if a.len() < 3 {
        return 0.0;
    }
    a.push(a[0]);
    signed_ring_area(a)
}

fn clip_half_plane(
    input: &[PlanarPoint],
    output: &mut Vec<PlanarPoint>,
    inside: impl Fn(&PlanarPoint) -> bool,
    cross: impl Fn(&PlanarPoint, &PlanarPoint) -> PlanarPoint,
) {
    output.clear();
    let Some(&last) = input.last() else { return };
    let mut prev = last;
    let mut prev_in = inside(&prev);
    for &cur in input {
        let cur_in = inside(&cur);
        if cur_in {
            if !prev_in {
                output.push(cross(&prev, &cur));
            }
            output.push(cur);
        } else if prev_in {
            output.push(cross(&prev, &cur));
        }
        prev = cur;
        prev_in = cur_in;
    }
}

fn lerp_x(p: &PlanarPoint, q: &PlanarPoint, x: f64) -> PlanarPoint {
    let t = (x - p.x) / (q.x - p.x);
    PlanarPoint::new(x, p.y + t * (q.y - p.y))
}

fn lerp_y(p: &PlanarPoint, q: &PlanarPoint, y: f64) -> PlanarPoint {
    let t = (y - p.y) / (q.y - p.y);
    PlanarPoint::new(p.x + t * (q.x - p.x), y)
}

/// Overlap area of `poly` with every grid cell it touches, as `(cell id, area)`
/// in ascending cell-id order. Cells with zero overlap are omitted.
pub fn cell_overlaps(grid: &GridSpec, poly: &Polygon) -> Vec<(usize, f64)> {
    let Some(win) = grid.window(&poly.bbox()) else {
        return Vec::new();
    };
    let (ncols, nrows) = (win.col_end - win.col_start, win.row_end - win.row_start);
    let mut boundary = vec![false; ncols * nrows];
    let step = grid.cell_size / 2.0;
    for ring in poly.rings() {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            let pieces = ((a.distance(&b) / step).ceil() as usize).max(1);
            for i in 0..pieces {
                let t0 = i as f64 / pieces as f64;
                let t1 = (i + 1) as f64 / pieces as f64;
                let p = PlanarPoint::new(a.x + t0 * (b.x - a.x), a.y + t0 * (b.y - a.y));
                let q = PlanarPoint::new(a.x + t1 * (b.x - a.x), a.y + t1 * (b.y - a.y));
                let piece = Rect::new(p.x.min(q.x), p.y.min(q.y), p.x.max(q.x), p.y.max(q.y));
                if let Some(sub) = grid.window(&piece) {
                    let (c0, c1) = (
                        sub.col_start.max(win.col_start),
                        sub.col_end.min(win.col_end),
                    );
                    let (r0, r1) = (
                        sub.row_start.max(win.row_start),
                        sub.row_end.min(win.row_end),
                    );
                    for r in r0..r1 {
                        for c in c0..c1 {
                            boundary[(r - win.row_start) * ncols + (c - win.col_start)] = true;
                        }
                    }
                }
            }
        }
    }

    let cell_area = grid.cell_area();
    let mut out = Vec::new();
    let mut crossings = Vec::new();
    for r in win.row_start..win.row_end {
        let y = grid.origin.y + (r as f64 + 0.5) * grid.cell_size;
        crossings.clear();
        for ring in poly.rings() {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if (a.y > y) != (b.y > y) {
                    crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
            }
        }
        crossings.sort_by(f64::total_cmp);
        for c in win.col_start..win.col_end {
            let id = r * grid.n_cols + c;
            if boundary[(r - win.row_start) * ncols + (c - win.col_start)] {
                let area = polygon_rect_area(poly, &grid.cell_rect(id));
                if area > 0.0 {
                    out.push((id, area));
                }
            } else {
                let x = grid.origin.x + (c as f64 + 0.5) * grid.cell_size;
                if crossings.partition_point(|&cx| cx < x) % 2 == 1 {
                    out.push((id, cell_area));
                }
            }
        }
    }
    out
}
