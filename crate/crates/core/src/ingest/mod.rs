//! GeoJSON ingestion of amenities and ward boundaries.

mod amenities;
mod geojson_util;
mod taxonomy;
mod wards;

use thiserror::Error;

pub use amenities::{load_amenities, AmenityFeature, AmenityFields, AmenityGeometry, AmenitySet};
pub use geojson_util::GeoPolygon;
pub(crate) use geojson_util::{
    parse_collection as parse_feature_collection, position as parse_position,
};
pub use taxonomy::{Category, CategoryTaxonomy};
pub use wards::{load_wards, load_wards_in, WardSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("GeoJSON parse error at {context}: {message}")]
    Parse { context: String, message: String },
    #[error("{feature} is missing property {property:?}")]
    MissingProperty { property: String, feature: String },
    #[error("no usable features in input")]
    EmptyResult,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}
