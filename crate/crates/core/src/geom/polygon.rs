use geo::{Area, BooleanOps};
use serde::{Deserialize, Serialize};

use super::{GeomError, PlanarPoint};

/// Axis-aligned rectangle in planar meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: PlanarPoint,
    pub max: PlanarPoint,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min: PlanarPoint::new(min_x, min_y),
            max: PlanarPoint::new(max_x, max_y),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> PlanarPoint {
        PlanarPoint::new(
            (self.min.x + self.max.x) / 2.0,
            (self.min.y + self.max.y) / 2.0,
        )
    }

    /// Closed-interval overlap test.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    pub fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(
            self.min.x.min(other.min.x),
            self.min.y.min(other.min.y),
            self.max.x.max(other.max.x),
            self.max.y.max(other.max.y),
        )
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon::from_rect(*self)
    }
}

/// A simple polygon with optional holes.
///
/// Rings are stored closed (first point repeated at the end). The exterior is
/// oriented counter-clockwise and holes clockwise, so the signed ring areas
/// sum to the polygon area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<PlanarPoint>,
    holes: Vec<Vec<PlanarPoint>>,
}

impl Polygon {
    /// Builds a polygon, closing open rings and normalizing orientation.
    ///
    /// Self-intersection is not checked here; see [`Polygon::validate`].
    pub fn new(
        exterior: Vec<PlanarPoint>,
        holes: Vec<Vec<PlanarPoint>>,
    ) -> Result<Self, GeomError> {
        let exterior = normalize_ring(exterior, true)?;
        let holes = holes
            .into_iter()
            .map(|h| normalize_ring(h, false))
            .collect::<Result<Vec<_>, _>>()?;
        let poly = Self { exterior, holes };
        let area = poly.area();
        if !(area > 0.0) {
            return Err(GeomError::Degenerate { area });
        }
        Ok(poly)
    }

    pub fn from_rect(r: Rect) -> Self {
        Self {
            exterior: vec![
                r.min,
                PlanarPoint::new(r.max.x, r.min.y),
                r.max,
                PlanarPoint::new(r.min.x, r.max.y),
                r.min,
            ],
            holes: Vec::new(),
        }
    }

    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self::from_rect(Rect::new(min_x, min_y, max_x, max_y))
    }

    /// Regular `n`-gon inscribed in the circle, first vertex due east of the center.
    pub fn regular(center: PlanarPoint, radius: f64, n: usize) -> Result<Self, GeomError> {
        let n = n.max(3);
        let ring = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                PlanarPoint::new(center.x + radius * t.cos(), center.y + radius * t.sin())
            })
            .collect();
        Self::new(ring, Vec::new())
    }

    pub fn exterior(&self) -> &[PlanarPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<PlanarPoint>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[PlanarPoint]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn area(&self) -> f64 {
        self.rings().map(signed_ring_area).sum()
    }

    pub fn perimeter(&self) -> f64 {
        ring_length(&self.exterior)
    }

    pub fn bbox(&self) -> Rect {
        ring_bbox(&self.exterior)
    }

    /// Area-weighted centroid (holes subtracted).
    pub fn centroid(&self) -> PlanarPoint {
        // shift to the first vertex for numerical stability with large offsets
        let o = self.exterior[0];
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (x0, y0) = (w[0].x - o.x, w[0].y - o.y);
                let (x1, y1) = (w[1].x - o.x, w[1].y - o.y);
                let cross = x0 * y1 - x1 * y0;
                a += cross;
                cx += (x0 + x1) * cross;
                cy += (y0 + y1) * cross;
            }
        }
        PlanarPoint::new(o.x + cx / (3.0 * a), o.y + cy / (3.0 * a))
    }

    /// Even-odd point-in-polygon test. Points exactly on an edge may go either way.
    pub fn contains_point(&self, p: PlanarPoint) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if (a.y > p.y) != (b.y > p.y) {
                    let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                    if p.x < x {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    /// Distance from `p` to the nearest ring edge.
    pub fn boundary_distance(&self, p: PlanarPoint) -> f64 {
        self.rings()
            .flat_map(|r| r.windows(2))
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks that no two ring edges cross or touch (other than consecutive
    /// edges sharing their common vertex).
    pub fn validate(&self) -> Result<(), GeomError> {
        let mut segs: Vec<Segment> = Vec::new();
        for (ri, ring) in self.rings().enumerate() {
            let n = ring.len() - 1;
            for i in 0..n {
                segs.push(Segment {
                    ring: ri,
                    index: i,
                    ring_len: n,
                    a: ring[i],
                    b: ring[i + 1],
                });
            }
        }
        segs.sort_by(|s, t| s.min_x().total_cmp(&t.min_x()));
        for i in 0..segs.len() {
            let s = &segs[i];
            for t in &segs[i + 1..] {
                if t.min_x() > s.max_x() {
                    break;
                }
                if s.adjacent(t) {
                    if collinear_overlap(s, t) {
                        return Err(GeomError::SelfIntersection { at: t.a });
                    }
                    continue;
                }
                if segments_intersect(s.a, s.b, t.a, t.b) {
                    return Err(GeomError::SelfIntersection { at: s.a });
                }
            }
        }
        Ok(())
    }

    pub fn to_geo(&self) -> geo::Polygon<f64> {
        let ls = |r: &[PlanarPoint]| {
            geo::LineString::from(r.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>())
        };
        geo::Polygon::new(
            ls(&self.exterior),
            self.holes.iter().map(|h| ls(h)).collect(),
        )
    }

    pub fn from_geo(p: &geo::Polygon<f64>) -> Result<Self, GeomError> {
        let pts = |ls: &geo::LineString<f64>| {
            ls.coords()
                .map(|c| PlanarPoint::new(c.x, c.y))
                .collect::<Vec<_>>()
        };
        Self::new(pts(p.exterior()), p.interiors().iter().map(pts).collect())
    }

    pub fn map_points(
        &self,
        mut f: impl FnMut(PlanarPoint) -> PlanarPoint,
    ) -> Result<Self, GeomError> {
        let exterior = self.exterior.iter().map(|p| f(*p)).collect();
        let holes = self
            .holes
            .iter()
            .map(|h| h.iter().map(|p| f(*p)).collect())
            .collect();
        Self::new(exterior, holes)
    }
}

/// A set of polygons with pairwise disjoint interiors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiPolygon(pub Vec<Polygon>);

impl MultiPolygon {
    pub fn area(&self) -> f64 {
        self.0.iter().map(Polygon::area).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.0.iter().map(Polygon::bbox).reduce(|a, b| a.union(&b))
    }

    pub fn contains_point(&self, p: PlanarPoint) -> bool {
        self.0.iter().any(|poly| poly.contains_point(p))
    }

    pub fn to_geo(&self) -> geo::MultiPolygon<f64> {
        geo::MultiPolygon(self.0.iter().map(Polygon::to_geo).collect())
    }

    /// Converts back from `geo`, discarding parts with area below `min_area`.
    pub fn from_geo(mp: &geo::MultiPolygon<f64>, min_area: f64) -> Self {
        Self(
            mp.0.iter()
                .filter(|p| p.unsigned_area() > min_area)
                .filter_map(|p| Polygon::from_geo(p).ok())
                .collect(),
        )
    }

    /// Union of all input polygons, with shared interior boundaries dissolved.
    pub fn union_all<'a>(polys: impl IntoIterator<Item = &'a Polygon>) -> Self {
        let geoms: Vec<geo::Polygon<f64>> = polys.into_iter().map(Polygon::to_geo).collect();
        match geoms.len() {
            0 => Self::default(),
            1 => Self::from_geo(&geo::MultiPolygon(geoms), 0.0),
            _ => Self::from_geo(&geo::unary_union(&geoms), 0.0),
        }
    }

    pub fn union(&self, other: &MultiPolygon) -> Self {
        Self::from_geo(&self.to_geo().union(&other.to_geo()), 0.0)
    }
}

impl From<Polygon> for MultiPolygon {
    fn from(p: Polygon) -> Self {
        Self(vec![p])
    }
}

/// Area of the intersection of two polygons, in square meters.
///
/// Rejects self-intersecting input. The operands are put in a canonical order
/// first so the result is bit-identical under swapping.
pub fn intersection_area(a: &Polygon, b: &Polygon) -> Result<f64, GeomError> {
    a.validate()?;
    b.validate()?;
    let (first, second) = if canonical_cmp(a, b).is_le() {
        (a, b)
    } else {
        (b, a)
    };
    if !first.bbox().intersects(&second.bbox()) {
        return Ok(0.0);
    }
    let area = first
        .to_geo()
        .intersection(&second.to_geo())
        .unsigned_area();
    Ok(area.min(first.area()).min(second.area()).max(0.0))
}

fn canonical_cmp(a: &Polygon, b: &Polygon) -> std::cmp::Ordering {
    let key = |p: &Polygon| {
        p.rings()
            .flat_map(|r| r.iter())
            .flat_map(|q| [q.x, q.y])
            .collect::<Vec<f64>>()
    };
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| ka.len().cmp(&kb.len()))
}

pub(crate) fn signed_ring_area(ring: &[PlanarPoint]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let o = ring[0];
    ring.windows(2)
        .map(|w| (w[0].x - o.x) * (w[1].y - o.y) - (w[1].x - o.x) * (w[0].y - o.y))
        .sum::<f64>()
        / 2.0
}

pub(crate) fn ring_length(ring: &[PlanarPoint]) -> f64 {
    ring.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

pub(crate) fn ring_bbox(ring: &[PlanarPoint]) -> Rect {
    ring.iter().fold(
        Rect::new(
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ),
        |r, p| {
            Rect::new(
                r.min.x.min(p.x),
                r.min.y.min(p.y),
                r.max.x.max(p.x),
                r.max.y.max(p.y),
            )
        },
    )
}

fn normalize_ring(mut ring: Vec<PlanarPoint>, ccw: bool) -> Result<Vec<PlanarPoint>, GeomError> {
    if ring.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeomError::NonFinite);
    }
    ring.dedup();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(GeomError::TooFewVertices { count: ring.len() });
    }
    ring.push(ring[0]);
    if (signed_ring_area(&ring) > 0.0) != ccw {
        ring.reverse();
    }
    Ok(ring)
}

struct Segment {
    ring: usize,
    index: usize,
    ring_len: usize,
    a: PlanarPoint,
    b: PlanarPoint,
}

impl Segment {
    fn min_x(&self) -> f64 {
        self.a.x.min(self.b.x)
    }

    fn max_x(&self) -> f64 {
        self.a.x.max(self.b.x)
    }

    fn adjacent(&self, other: &Segment) -> bool {
        if self.ring != other.ring {
            return false;
        }
        let d = self.index.abs_diff(other.index);
        d == 1 || d == self.ring_len - 1
    }
}

fn orient(a: PlanarPoint, b: PlanarPoint, c: PlanarPoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: PlanarPoint, b: PlanarPoint, p: PlanarPoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub(crate) fn segments_intersect(
    p1: PlanarPoint,
    p2: PlanarPoint,
    q1: PlanarPoint,
    q2: PlanarPoint,
) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn collinear_overlap(s: &Segment, t: &Segment) -> bool {
    if orient(s.a, s.b, t.a) != 0.0 || orient(s.a, s.b, t.b) != 0.0 {
        return false;
    }
    // consecutive collinear edges share exactly one endpoint; overlap means
    // the far endpoint of one lies strictly inside the other
    let shared = if s.b == t.a || s.b == t.b { s.b } else { s.a };
    let far_t = if t.a == shared { t.b } else { t.a };
    let far_s = if s.a == shared { s.b } else { s.a };
    let dot =
        (far_t.x - shared.x) * (far_s.x - shared.x) + (far_t.y - shared.y) * (far_s.y - shared.y);
    dot > 0.0
}

fn segment_distance(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    p.distance(&PlanarPoint::new(a.x + t * dx, a.y + t * dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<PlanarPoint> {
        v.iter().map(|&(x, y)| PlanarPoint::new(x, y)).collect()
    }

    #[test]
    fn orientation_and_closure() {
        let p = Polygon::new(
            pts(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]),
            vec![],
        )
        .unwrap();
        assert_eq!(p.exterior().len(), 5);
        assert_eq!(p.exterior().first(), p.exterior().last());
        assert!((p.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hole_subtracts_area() {
        let p = Polygon::new(
            pts(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]),
            vec![pts(&[(1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)])],
        )
        .unwrap();
        assert!((p.area() - 15.0).abs() < 1e-12);
        assert!(!p.contains_point(PlanarPoint::new(1.5, 1.5)));
        assert!(p.contains_point(PlanarPoint::new(3.0, 3.0)));
    }

    #[test]
    fn degenerate_rejected() {
        assert!(matches!(
            Polygon::new(pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]), vec![]),
            Err(GeomError::Degenerate { .. })
        ));
        assert!(matches!(
            Polygon::new(pts(&[(0.0, 0.0), (1.0, 1.0)]), vec![]),
            Err(GeomError::TooFewVertices { .. })
        ));
    }

    #[test]
    fn centroid_of_square() {
        let c = Polygon::rect(10.0, 20.0, 60.0, 70.0).centroid();
        assert!((c.x - 35.0).abs() < 1e-9 && (c.y - 45.0).abs() < 1e-9);
    }

    #[test]
    fn bowtie_is_invalid() {
        let bowtie = Polygon::new(
            pts(&[(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)]),
            vec![],
        );
        // the bowtie has zero net signed area, so construction itself fails
        assert!(bowtie.is_err());
        let skewed = Polygon::new(
            pts(&[(0.0, 0.0), (3.0, 2.0), (3.0, 0.0), (0.0, 1.0)]),
            vec![],
        )
        .unwrap();
        assert!(matches!(
            skewed.validate(),
            Err(GeomError::SelfIntersection { .. })
        ));
        assert!(matches!(
            intersection_area(&skewed, &Polygon::rect(0.0, 0.0, 1.0, 1.0)),
            Err(GeomError::SelfIntersection { .. })
        ));
    }

    #[test]
    fn simple_polygons_validate() {
        Polygon::rect(0.0, 0.0, 1.0, 1.0).validate().unwrap();
        Polygon::regular(PlanarPoint::new(0.0, 0.0), 1200.0, 256)
            .unwrap()
            .validate()
            .unwrap();
        let l = Polygon::new(
            pts(&[
                (0.0, 0.0),
                (2.0, 0.0),
                (2.0, 1.0),
                (1.0, 1.0),
                (1.0, 2.0),
                (0.0, 2.0),
            ]),
            vec![],
        )
        .unwrap();
        l.validate().unwrap();
        // collinear vertex on an edge is fine
        Polygon::new(
            pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]),
            vec![],
        )
        .unwrap()
        .validate()
        .unwrap();
    }

    #[test]
    fn intersection_area_examples() {
        let a = Polygon::rect(0.0, 0.0, 250.0, 250.0);
        assert_eq!(intersection_area(&a, &a).unwrap(), 62_500.0);
        let far = Polygon::rect(1000.0, 1000.0, 1250.0, 1250.0);
        assert_eq!(intersection_area(&a, &far).unwrap(), 0.0);
    }

    #[test]
    fn offset_unit_squares_match_monte_carlo() {
        let a = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        let b = Polygon::rect(0.5, 0.0, 1.5, 1.0);
        // Monte Carlo over the union bbox [0, 1.5] x [0, 1]
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| {
                let p = PlanarPoint::new(rng.random::<f64>() * 1.5, rng.random::<f64>());
                a.contains_point(p) && b.contains_point(p)
            })
            .count();
        let mc = 1.5 * hits as f64 / n as f64;
        let exact = intersection_area(&a, &b).unwrap();
        assert!((mc - exact).abs() < 1e-3, "mc {mc} vs {exact}");
        assert!((exact - 0.5).abs() < 1e-12);
    }

    #[test]
    fn union_of_overlapping_circles_is_one_part() {
        let c1 = Polygon::regular(PlanarPoint::new(0.0, 0.0), 1200.0, 64).unwrap();
        let c2 = Polygon::regular(PlanarPoint::new(100.0, 0.0), 1200.0, 64).unwrap();
        let u = MultiPolygon::union_all([&c1, &c2]);
        assert_eq!(u.0.len(), 1);
        assert!(u.0[0].holes().is_empty());
        assert!(u.area() < c1.area() + c2.area());
        assert!(u.area() > c1.area());
    }

    fn arb_rect() -> impl Strategy<Value = Polygon> {
        (0.0f64..100.0, 0.0f64..100.0, 1.0f64..80.0, 1.0f64..80.0)
            .prop_map(|(x, y, w, h)| Polygon::rect(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn intersection_is_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = intersection_area(&a, &b).unwrap();
            let ba = intersection_area(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= a.area().min(b.area()) + 1e-9);
        }

        #[test]
        fn union_is_idempotent(a in arb_rect(), b in arb_rect()) {
            let ma = MultiPolygon::from(a);
            let mb = MultiPolygon::from(b);
            let u = ma.union(&mb);
            let uu = u.union(&mb);
            prop_assert!((uu.area() - u.area()).abs() <= 1e-6 * u.area());
        }
    }
}
