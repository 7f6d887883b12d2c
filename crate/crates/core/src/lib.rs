//! Personalized walking-accessibility scoring on a metric grid.
//!
//! Preprocessing turns ward boundaries and amenity catchments into a
//! [`precompute::KVectorStore`] of per-cell overlap counts. Scoring applies
//! user weights, required-amenity gates, substitute groups and exponential
//! decay to those counts at request time.

pub mod converge;
pub mod geom;
pub mod ingest;
pub mod isochrone;
pub mod precompute;
pub mod scoring;
