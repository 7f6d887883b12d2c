//! Catchments persisted as GeoJSON, one file per category.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value as Json};

use super::Catchment;
use crate::geom::{MultiPolygon, PlanarPoint, Polygon, Projection};
use crate::ingest::{CategoryTaxonomy, IngestError};

fn io_err(path: &Path, e: impl std::fmt::Display) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `<dir>/<category>.geojson` for every category present, features
/// sorted by `amenity_id`, coordinates in lon/lat.
pub fn write_catchments(
    dir: &Path,
    catchments: &[Catchment],
    projection: &Projection,
) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut by_category: BTreeMap<&str, Vec<&Catchment>> = BTreeMap::new();
    for c in catchments {
        by_category.entry(&c.category).or_default().push(c);
    }
    for (category, mut list) in by_category {
        list.sort_by(|a, b| a.amenity_id.cmp(&b.amenity_id));
        let ring = |r: &[PlanarPoint]| -> Json {
            r.iter()
                .map(|p| {
                    let ll = projection.inverse(*p);
                    json!([ll.lon, ll.lat])
                })
                .collect()
        };
        let features: Vec<Json> = list
            .iter()
            .map(|c| {
                let polys: Vec<Json> = c
                    .shape
                    .0
                    .iter()
                    .map(|p| Json::Array(p.rings().map(ring).collect()))
                    .collect();
                json!({
                    "type": "Feature",
                    "properties": {"amenity_id": c.amenity_id, "category": c.category},
                    "geometry": {"type": "MultiPolygon", "coordinates": polys},
                })
            })
            .collect();
        let path = dir.join(format!("{category}.geojson"));
        let body = serde_json::to_vec(&json!({"type": "FeatureCollection", "features": features}))
            .expect("json");
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Reads every `*.geojson` in `dir`. The file stem names the category and
/// must be in `taxonomy`. Output is sorted by (category, amenity id).
pub fn read_catchments(
    dir: &Path,
    taxonomy: &CategoryTaxonomy,
    projection: &Projection,
) -> Result<Vec<Catchment>, IngestError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "geojson"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let category = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        if !taxonomy.contains(&category) {
            return Err(IngestError::Parse {
                context: path.display().to_string(),
                message: format!("unknown category {category:?}"),
            });
        }
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let fc = super::super::ingest::parse_feature_collection(&bytes)?;
        for (i, f) in fc.features.iter().enumerate() {
            let context = format!("{} feature {i}", path.display());
            let amenity_id = f
                .properties
                .as_ref()
                .and_then(|p| p.get("amenity_id"))
                .and_then(Json::as_str)
                .ok_or_else(|| IngestError::MissingProperty {
                    property: "amenity_id".into(),
                    feature: context.clone(),
                })?
                .to_owned();
            let value = f.geometry.as_ref().map(|g| &g.value);
            let polys: Vec<&geojson::PolygonType> = match value {
                Some(geojson::Value::Polygon(p)) => vec![p],
                Some(geojson::Value::MultiPolygon(ps)) => ps.iter().collect(),
                _ => {
                    return Err(IngestError::Parse {
                        context,
                        message: "catchment must be a (multi)polygon".into(),
                    })
                }
            };
            let mut parts = Vec::with_capacity(polys.len());
            for rings in polys {
                let mut rings = rings.iter().map(|r| {
                    r.iter()
                        .map(|pos| {
                            crate::ingest::parse_position(pos).map(|ll| projection.forward(ll))
                        })
                        .collect::<Result<Vec<_>, _>>()
                });
                let ext = rings.next().ok_or_else(|| IngestError::Parse {
                    context: context.clone(),
                    message: "empty polygon".into(),
                })?;
                let holes = rings.collect::<Result<Vec<_>, _>>();
                let poly = ext
                    .and_then(|e| holes.map(|h| (e, h)))
                    .map_err(|message| IngestError::Parse {
                        context: context.clone(),
                        message,
                    })
                    .and_then(|(e, h)| {
                        Polygon::new(e, h).map_err(|err| IngestError::Parse {
                            context: context.clone(),
                            message: err.to_string(),
                        })
                    })?;
                parts.push(poly);
            }
            out.push(Catchment {
                amenity_id,
                category: category.clone(),
                frame: projection.reference(),
                shape: MultiPolygon(parts),
            });
        }
    }
    Ok(out)
}
