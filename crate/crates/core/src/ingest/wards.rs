use std::collections::BTreeSet;

use super::geojson_util::{feature_id, parse_collection, part_id, polygon_parts, GeoPolygon};
use super::IngestError;
use crate::geom::{Projection, Ward};

/// Ward parts projected into a shared planar frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WardSet {
    pub projection: Projection,
    pub wards: Vec<Ward>,
}

/// Parses ward boundaries and projects them about the center of their extent.
pub fn load_wards(bytes: &[u8], id_property: &str) -> Result<WardSet, IngestError> {
    load_wards_in(bytes, id_property, None)
}

/// Like [`load_wards`], with an explicit projection when one is given.
pub fn load_wards_in(
    bytes: &[u8],
    id_property: &str,
    projection: Option<Projection>,
) -> Result<WardSet, IngestError> {
    let fc = parse_collection(bytes)?;
    let mut parsed: Vec<(String, GeoPolygon)> = Vec::new();
    for (index, feature) in fc.features.iter().enumerate() {
        // only the configured property counts; the feature-level id is not a fallback here
        let id = super::geojson_util::property_string(feature, id_property).ok_or_else(|| {
            IngestError::MissingProperty {
                property: id_property.to_owned(),
                feature: match feature_id(feature, "id") {
                    Some(id) => format!("feature {index} ({id})"),
                    None => format!("feature {index}"),
                },
            }
        })?;
        let context = format!("feature {index} ({id})");
        let geometry = feature
            .geometry
            .as_ref()
            .ok_or_else(|| IngestError::Parse {
                context: context.clone(),
                message: "missing geometry".into(),
            })?;
        let parts = polygon_parts(&geometry.value)
            .ok_or_else(|| IngestError::Parse {
                context: context.clone(),
                message: "ward geometry must be Polygon or MultiPolygon".into(),
            })?
            .map_err(|message| IngestError::Parse {
                context: context.clone(),
                message,
            })?;
        let n = parts.len();
        parsed.extend(
            parts
                .into_iter()
                .enumerate()
                .map(|(i, p)| (part_id(&id, i, n), p)),
        );
    }
    if parsed.is_empty() {
        return Err(IngestError::EmptyResult);
    }
    let mut seen = BTreeSet::new();
    for (id, _) in &parsed {
        if !seen.insert(id.as_str()) {
            return Err(IngestError::DuplicateId(id.clone()));
        }
    }
    let projection = projection
        .or_else(|| Projection::centered_on(parsed.iter().flat_map(|(_, p)| p.points())))
        .expect("non-empty");
    let wards = parsed
        .into_iter()
        .map(|(id, p)| {
            let shape = p.project(&projection).map_err(|e| IngestError::Parse {
                context: format!("ward {id}"),
                message: e.to_string(),
            })?;
            Ok(Ward::new(id, shape))
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    Ok(WardSet { projection, wards })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ward(id: serde_json::Value, lon: f64, lat: f64) -> serde_json::Value {
        let d = 0.005;
        json!({"type": "Feature", "properties": {"ward_id": id, "name": "x"},
            "geometry": {"type": "Polygon", "coordinates": [[[lon, lat], [lon + d, lat], [lon + d, lat + d], [lon, lat + d], [lon, lat]]]}})
    }

    fn fc(features: Vec<serde_json::Value>) -> Vec<u8> {
        serde_json::to_vec(&json!({"type": "FeatureCollection", "features": features})).unwrap()
    }

    #[test]
    fn full_city_of_198_wards() {
        let features = (0..198)
            .map(|i| {
                ward(
                    json!(i),
                    77.4 + 0.01 * (i % 20) as f64,
                    12.8 + 0.01 * (i / 20) as f64,
                )
            })
            .collect();
        let set = load_wards(&fc(features), "ward_id").unwrap();
        assert_eq!(set.wards.len(), 198);
        assert!(set.wards.iter().all(|w| w.shape.area() > 0.0));
        // roughly 0.005 deg squared at 13 N
        let a = set.wards[0].shape.area();
        assert!((a - 556.0 * 541.0).abs() < 2_000.0, "{a}");
    }

    #[test]
    fn missing_id_property() {
        let mut f = ward(json!("w1"), 77.5, 12.9);
        f["properties"] = json!({"name": "nameless"});
        match load_wards(&fc(vec![f]), "ward_id") {
            Err(IngestError::MissingProperty { property, feature }) => {
                assert_eq!(property, "ward_id");
                assert_eq!(feature, "feature 0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_collection() {
        assert!(matches!(
            load_wards(&fc(vec![]), "ward_id"),
            Err(IngestError::EmptyResult)
        ));
    }

    #[test]
    fn multipolygon_wards_expand_and_ids_stay_unique() {
        let a = ward(json!("A"), 77.5, 12.9);
        let mut b = ward(json!("B"), 77.6, 12.9);
        let ring = a["geometry"]["coordinates"].clone();
        let ring2 = b["geometry"]["coordinates"].clone();
        b["geometry"] = json!({"type": "MultiPolygon", "coordinates": [ring, ring2]});
        let set = load_wards(&fc(vec![a, b]), "ward_id").unwrap();
        let ids: Vec<_> = set.wards.iter().map(|w| w.id.0.as_str()).collect();
        assert_eq!(ids, ["A", "B#0", "B#1"]);

        let dup = load_wards(
            &fc(vec![
                ward(json!("A"), 77.5, 12.9),
                ward(json!("A"), 77.6, 12.9),
            ]),
            "ward_id",
        );
        assert!(matches!(dup, Err(IngestError::DuplicateId(_))));
    }

    #[test]
    fn configurable_id_property() {
        let mut f = ward(json!("w"), 77.5, 12.9);
        f["properties"] = json!({"KGISWardNo": 17});
        let set = load_wards(&fc(vec![f]), "KGISWardNo").unwrap();
        assert_eq!(set.wards[0].id.0, "17");
    }
}
