use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::geojson_util::{
    feature_id, parse_collection, part_id, polygon_parts, position, property_string, GeoPolygon,
};
use super::{CategoryTaxonomy, IngestError};
use crate::geom::{LatLon, Projection};

#[derive(Debug, Clone, PartialEq)]
pub enum AmenityGeometry {
    Point(LatLon),
    Polygon(GeoPolygon),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmenityFeature {
    pub id: String,
    pub category: String,
    pub geometry: AmenityGeometry,
}

/// Property names read from amenity features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmenityFields {
    pub id_property: String,
    pub category_property: String,
}

impl Default for AmenityFields {
    fn default() -> Self {
        Self {
            id_property: "id".into(),
            category_property: "category".into(),
        }
    }
}

/// Parsed amenities plus per-reason counts of input features that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct AmenitySet {
    pub features: Vec<AmenityFeature>,
    pub input_features: usize,
    pub dropped_unknown_category: usize,
    pub dropped_unsupported_geometry: usize,
    pub dropped_invalid_geometry: usize,
    pub dropped_duplicate_id: usize,
}

impl AmenitySet {
    pub fn dropped(&self) -> usize {
        self.dropped_unknown_category
            + self.dropped_unsupported_geometry
            + self.dropped_invalid_geometry
            + self.dropped_duplicate_id
    }
}

/// Parses an amenity FeatureCollection.
///
/// Features whose category is not in `taxonomy` are dropped and counted, as
/// are non-areal/non-point geometries and repeated ids (first one wins).
/// MultiPolygons become one feature per part with ids `base#0`, `base#1`, ...
/// Output is sorted by id.
pub fn load_amenities(
    bytes: &[u8],
    taxonomy: &CategoryTaxonomy,
    fields: &AmenityFields,
) -> Result<AmenitySet, IngestError> {
    let fc = parse_collection(bytes)?;
    let mut set = AmenitySet {
        features: Vec::new(),
        input_features: fc.features.len(),
        dropped_unknown_category: 0,
        dropped_unsupported_geometry: 0,
        dropped_invalid_geometry: 0,
        dropped_duplicate_id: 0,
    };
    let mut by_id: BTreeMap<String, Vec<AmenityFeature>> = BTreeMap::new();
    for (index, feature) in fc.features.iter().enumerate() {
        let context = |id: Option<&str>| match id {
            Some(id) => format!("feature {index} ({id})"),
            None => format!("feature {index}"),
        };
        let id = feature_id(feature, &fields.id_property).ok_or_else(|| {
            IngestError::MissingProperty {
                property: fields.id_property.clone(),
                feature: context(None),
            }
        })?;
        let category = property_string(feature, &fields.category_property).ok_or_else(|| {
            IngestError::MissingProperty {
                property: fields.category_property.clone(),
                feature: context(Some(&id)),
            }
        })?;
        let category = category.trim().to_ascii_lowercase();
        if !taxonomy.contains(&category) {
            set.dropped_unknown_category += 1;
            continue;
        }
        let Some(geometry) = &feature.geometry else {
            set.dropped_unsupported_geometry += 1;
            continue;
        };
        let parts = match &geometry.value {
            geojson::Value::Point(p) => match position(p) {
                Ok(ll) => vec![AmenityGeometry::Point(ll)],
                Err(message) => {
                    return Err(IngestError::Parse {
                        context: context(Some(&id)),
                        message,
                    })
                }
            },
            other => match polygon_parts(other) {
                None => {
                    set.dropped_unsupported_geometry += 1;
                    continue;
                }
                Some(Err(message)) => {
                    return Err(IngestError::Parse {
                        context: context(Some(&id)),
                        message,
                    })
                }
                Some(Ok(polys)) => {
                    if !polys.iter().all(polygon_is_valid) {
                        set.dropped_invalid_geometry += 1;
                        continue;
                    }
                    polys.into_iter().map(AmenityGeometry::Polygon).collect()
                }
            },
        };
        if by_id.contains_key(&id) {
            set.dropped_duplicate_id += 1;
            continue;
        }
        let n = parts.len();
        let features = parts
            .into_iter()
            .enumerate()
            .map(|(i, geometry)| AmenityFeature {
                id: part_id(&id, i, n),
                category: category.clone(),
                geometry,
            })
            .collect();
        by_id.insert(id, features);
    }
    set.features = by_id.into_values().flatten().collect();
    set.features.sort_by(|a, b| a.id.cmp(&b.id));
    if set.features.is_empty() {
        return Err(IngestError::EmptyResult);
    }
    Ok(set)
}

fn polygon_is_valid(p: &GeoPolygon) -> bool {
    let Some(proj) = Projection::centered_on(p.points()) else {
        return false;
    };
    p.project(&proj).is_ok_and(|poly| poly.validate().is_ok())
}
