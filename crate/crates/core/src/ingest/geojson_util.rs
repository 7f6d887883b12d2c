use geojson::{Feature, FeatureCollection, PolygonType, Position};
use serde_json::Value as Json;

use super::IngestError;
use crate::geom::{LatLon, Polygon, Projection};

pub(crate) fn parse_collection(bytes: &[u8]) -> Result<FeatureCollection, IngestError> {
    let value: Json = serde_json::from_slice(bytes).map_err(|e| IngestError::Parse {
        context: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    FeatureCollection::try_from(value).map_err(|e| IngestError::Parse {
        context: "top level".into(),
        message: e.to_string(),
    })
}

/// Reads a property as a string; numbers are rendered in their JSON form.
pub(crate) fn property_string(feature: &Feature, name: &str) -> Option<String> {
    match feature.properties.as_ref()?.get(name)? {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub(crate) fn feature_id(feature: &Feature, property: &str) -> Option<String> {
    property_string(feature, property).or_else(|| match &feature.id {
        Some(geojson::feature::Id::String(s)) => Some(s.clone()),
        Some(geojson::feature::Id::Number(n)) => Some(n.to_string()),
        None => None,
    })
}

pub(crate) fn position(p: &Position) -> Result<LatLon, String> {
    match p.as_slice() {
        [lon, lat, ..] => LatLon::new(*lat, *lon).map_err(|e| e.to_string()),
        _ => Err("position needs two coordinates".into()),
    }
}

/// A polygon still in geographic coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPolygon {
    pub exterior: Vec<LatLon>,
    pub holes: Vec<Vec<LatLon>>,
}

impl GeoPolygon {
    pub(crate) fn from_geojson(rings: &PolygonType) -> Result<Self, String> {
        let mut rings = rings
            .iter()
            .map(|r| r.iter().map(position).collect::<Result<Vec<_>, _>>());
        let exterior = rings.next().ok_or("polygon without rings")??;
        let holes = rings.collect::<Result<Vec<_>, _>>()?;
        Ok(Self { exterior, holes })
    }

    pub fn project(&self, proj: &Projection) -> Result<Polygon, crate::geom::GeomError> {
        let ring = |r: &[LatLon]| r.iter().map(|p| proj.forward(*p)).collect::<Vec<_>>();
        Polygon::new(
            ring(&self.exterior),
            self.holes.iter().map(|h| ring(h)).collect(),
        )
    }

    pub fn points(&self) -> impl Iterator<Item = &LatLon> {
        self.exterior.iter().chain(self.holes.iter().flatten())
    }
}

/// Splits Polygon/MultiPolygon values into parts; `None` for other geometry types.
pub(crate) fn polygon_parts(value: &geojson::Value) -> Option<Result<Vec<GeoPolygon>, String>> {
    match value {
        geojson::Value::Polygon(p) => Some(GeoPolygon::from_geojson(p).map(|p| vec![p])),
        geojson::Value::MultiPolygon(ps) => Some(ps.iter().map(GeoPolygon::from_geojson).collect()),
        _ => None,
    }
}

/// `base` for single-part geometries, `base#i` per part otherwise.
pub(crate) fn part_id(base: &str, index: usize, parts: usize) -> String {
    if parts == 1 {
        base.to_owned()
    } else {
        format!("{base}#{index}")
    }
}
