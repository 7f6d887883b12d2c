//! Planar geometry, the local projection, and grid construction.

mod clip;
mod grid;
mod polygon;
mod projection;

use thiserror::Error;

pub use clip::{cell_overlaps, polygon_rect_area};
pub use grid::{assign_ward, build_grid, CellWindow, Grid, GridCell, GridSpec, Ward, WardId};
pub use polygon::{intersection_area, MultiPolygon, Polygon, Rect};
pub use projection::{project, unproject, LatLon, PlanarPoint, Projection, EARTH_RADIUS_M};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("ring has {count} distinct vertices, need at least 3")]
    TooFewVertices { count: usize },
    #[error("polygon area must be positive (got {area})")]
    Degenerate { area: f64 },
    #[error("self-intersecting geometry near ({}, {})", at.x, at.y)]
    SelfIntersection { at: PlanarPoint },
    #[error("no wards given")]
    EmptyInput,
    #[error("ward {0} has no area")]
    DegenerateWard(WardId),
    #[error("cell size must be positive (got {0})")]
    InvalidCellSize(f64),
}
