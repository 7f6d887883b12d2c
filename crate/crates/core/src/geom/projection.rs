use serde::{Deserialize, Serialize};

use super::GeomError;

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeomError> {
        if !(lat.is_finite() && lon.is_finite())
            || !(-90.0..=90.0).contains(&lat)
            || !(-180.0..=180.0).contains(&lon)
        {
            return Err(GeomError::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }
}

/// Meters east (`x`) and north (`y`) of a projection reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Local equirectangular projection about a fixed reference coordinate.
///
/// Good to well under a meter across a city-sized study area; not meant for
/// extents beyond a couple hundred kilometers or across the antimeridian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    reference: LatLon,
    #[serde(skip)]
    cos_ref: f64,
}

impl Projection {
    pub fn new(reference: LatLon) -> Self {
        Self {
            reference,
            cos_ref: reference.lat.to_radians().cos(),
        }
    }

    /// Projection centered on the bounding box of `points`.
    pub fn centered_on<'a>(points: impl IntoIterator<Item = &'a LatLon>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut min_lat, mut max_lat, mut min_lon, mut max_lon) =
            (first.lat, first.lat, first.lon, first.lon);
        for p in it {
            min_lat = min_lat.min(p.lat);
            max_lat = max_lat.max(p.lat);
            min_lon = min_lon.min(p.lon);
            max_lon = max_lon.max(p.lon);
        }
        Some(Self::new(LatLon {
            lat: (min_lat + max_lat) / 2.0,
            lon: (min_lon + max_lon) / 2.0,
        }))
    }

    pub fn reference(&self) -> LatLon {
        self.reference
    }

    pub fn forward(&self, p: LatLon) -> PlanarPoint {
        PlanarPoint {
            x: EARTH_RADIUS_M * self.cos_ref * (p.lon - self.reference.lon).to_radians(),
            y: EARTH_RADIUS_M * (p.lat - self.reference.lat).to_radians(),
        }
    }

    pub fn inverse(&self, p: PlanarPoint) -> LatLon {
        LatLon {
            lat: self.reference.lat + (p.y / EARTH_RADIUS_M).to_degrees(),
            lon: self.reference.lon + (p.x / (EARTH_RADIUS_M * self.cos_ref)).to_degrees(),
        }
    }
}

// `cos_ref` is derived state; rebuild it after deserializing.
impl<'de> Deserialize<'de> for Projection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            reference: LatLon,
        }
        Raw::deserialize(d).map(|r| Projection::new(r.reference))
    }
}

/// Projects `p` into the local frame centered on `reference`.
pub fn project(p: LatLon, reference: LatLon) -> PlanarPoint {
    Projection::new(reference).forward(p)
}

pub fn unproject(p: PlanarPoint, reference: LatLon) -> LatLon {
    Projection::new(reference).inverse(p)
}
