//! Offline stage: count overlapping catchments per grid cell and category.

mod store;

use rayon::prelude::*;
use thiserror::Error;

pub use store::{load_store, save_store, KVectorStore, LoadOptions, FORMAT_VERSION, NO_WARD};

use crate::geom::{cell_overlaps, polygon_rect_area, Grid, GridSpec, LatLon, Rect};
use crate::ingest::CategoryTaxonomy;
use crate::isochrone::Catchment;

/// Relative slack on the 50 % threshold so that constructions meant to be
/// exactly half-covered are not lost to rounding.
pub const COVERAGE_REL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecomputeError {
    #[error("catchment {amenity_id} is in frame {found:?}, grid is in {expected:?}")]
    FrameMismatch {
        amenity_id: String,
        expected: LatLon,
        found: LatLon,
    },
    #[error("catchment {amenity_id} has category {category:?} not in the taxonomy")]
    UnknownCategory {
        amenity_id: String,
        category: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("store format version {found} is not supported (expected {supported})")]
    Version { found: u16, supported: u16 },
    #[error("malformed store: {0}")]
    Format(String),
    #[error("taxonomy mismatch: expected {expected}, found {found}")]
    TaxonomyMismatch { expected: String, found: String },
}

/// How a cell decides it is covered by a catchment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) enum CoverageRule {
    /// At least half of the cell area lies inside the catchment.
    #[default]
    HalfArea,
    /// The cell centroid lies inside the catchment.
    Centroid,
}

pub fn is_covered(overlap_area: f64, cell_area: f64) -> bool {
    overlap_area >= 0.5 * cell_area * (1.0 - COVERAGE_REL_EPS)
}

/// True iff at least 50 % of `cell` lies inside the catchment (ties count).
pub fn coverage_test(cell: &Rect, catchment: &Catchment) -> bool {
    let area: f64 = catchment
        .shape
        .0
        .iter()
        .map(|p| polygon_rect_area(p, cell))
        .sum();
    is_covered(area, cell.area())
}

/// Ids of the cells covered by `catchment`, ascending.
pub(crate) fn covered_cells(
    spec: &GridSpec,
    catchment: &Catchment,
    rule: CoverageRule,
) -> Vec<usize> {
    match rule {
        CoverageRule::HalfArea => {
            let mut overlaps: Vec<(usize, f64)> = catchment
                .shape
                .0
                .iter()
                .flat_map(|p| cell_overlaps(spec, p))
                .collect();
            overlaps.sort_by_key(|&(id, _)| id);
            let mut out = Vec::new();
            let mut i = 0;
            while i < overlaps.len() {
                let id = overlaps[i].0;
                let mut area = 0.0;
                while i < overlaps.len() && overlaps[i].0 == id {
                    area += overlaps[i].1;
                    i += 1;
                }
                if is_covered(area, spec.cell_area()) {
                    out.push(id);
                }
            }
            out
        }
        CoverageRule::Centroid => {
            let Some(bbox) = catchment.shape.bbox() else {
                return Vec::new();
            };
            let Some(w) = spec.window(&bbox) else {
                return Vec::new();
            };
            (w.row_start..w.row_end)
                .flat_map(|r| (w.col_start..w.col_end).map(move |c| r * spec.n_cols + c))
                .filter(|&id| catchment.shape.contains_point(spec.centroid(id)))
                .collect()
        }
    }
}

/// Counts, for every cell and category, the catchments that cover the cell.
///
/// Each catchment only visits the cells under its bounding box. The result
/// does not depend on the order of `catchments`.
pub fn build_k_vectors(
    grid: &Grid,
    catchments: &[Catchment],
    taxonomy: &CategoryTaxonomy,
) -> Result<KVectorStore, PrecomputeError> {
    build_k_vectors_with(grid, catchments, taxonomy, CoverageRule::HalfArea)
}

pub(crate) fn build_k_vectors_with(
    grid: &Grid,
    catchments: &[Catchment],
    taxonomy: &CategoryTaxonomy,
    rule: CoverageRule,
) -> Result<KVectorStore, PrecomputeError> {
    let expected = grid.projection.reference();
    let mut indexed = Vec::with_capacity(catchments.len());
    for c in catchments {
        if c.frame != expected {
            return Err(PrecomputeError::FrameMismatch {
                amenity_id: c.amenity_id.clone(),
                expected,
                found: c.frame,
            });
        }
        let cat =
            taxonomy
                .index_of(&c.category)
                .ok_or_else(|| PrecomputeError::UnknownCategory {
                    amenity_id: c.amenity_id.clone(),
                    category: c.category.clone(),
                })?;
        indexed.push((cat, c));
    }

    let hits: Vec<(usize, Vec<usize>)> = indexed
        .par_iter()
        .map(|&(cat, c)| (cat, covered_cells(&grid.spec, c, rule)))
        .collect();
    let n = grid.spec.n_cells();
    let mut wide = vec![Vec::<u32>::new(); taxonomy.len()];
    for (cat, cells) in hits {
        let column = &mut wide[cat];
        if column.is_empty() {
            column.resize(n, 0);
        }
        for id in cells {
            column[id] += 1;
        }
    }
    let counts = wide
        .into_iter()
        .map(|col| {
            if col.is_empty() {
                vec![0u16; n]
            } else {
                col.into_iter()
                    .map(|k| k.min(u16::MAX as u32) as u16)
                    .collect()
            }
        })
        .collect();
    Ok(KVectorStore::from_parts(grid, taxonomy.clone(), counts))
}
