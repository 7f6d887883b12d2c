use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clip::{cell_overlaps, polygon_rect_area};
use super::{GeomError, PlanarPoint, Polygon, Projection, Rect};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WardId(pub String);

impl fmt::Display for WardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for WardId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// An administrative boundary part in the planar frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ward {
    pub id: WardId,
    pub shape: Polygon,
}

impl Ward {
    pub fn new(id: impl Into<String>, shape: Polygon) -> Self {
        Self {
            id: WardId(id.into()),
            shape,
        }
    }
}

/// Regular square tiling, row-major from the south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: PlanarPoint,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

/// Half-open column/row range of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellWindow {
    pub col_start: usize,
    pub col_end: usize,
    pub row_start: usize,
    pub row_end: usize,
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(
            self.origin.x,
            self.origin.y,
            self.origin.x + self.n_cols as f64 * self.cell_size,
            self.origin.y + self.n_rows as f64 * self.cell_size,
        )
    }

    pub fn col_row(&self, id: usize) -> (usize, usize) {
        (id % self.n_cols, id / self.n_cols)
    }

    pub fn cell_rect(&self, id: usize) -> Rect {
        let (c, r) = self.col_row(id);
        let x0 = self.origin.x + c as f64 * self.cell_size;
        let y0 = self.origin.y + r as f64 * self.cell_size;
        Rect::new(x0, y0, x0 + self.cell_size, y0 + self.cell_size)
    }

    pub fn centroid(&self, id: usize) -> PlanarPoint {
        self.cell_rect(id).center()
    }

    /// The cell containing `p`. Points on the shared edge of two cells belong
    /// to the cell on the east/north side; the outer east/north edge of the
    /// grid belongs to the last column/row.
    pub fn cell_at(&self, p: PlanarPoint) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.n_cols as f64 && fy <= self.n_rows as f64) {
            return None;
        }
        let c = (fx.floor() as usize).min(self.n_cols - 1);
        let r = (fy.floor() as usize).min(self.n_rows - 1);
        Some(r * self.n_cols + c)
    }

    /// Cells whose closed extent touches the closed rectangle `r`.
    pub fn window(&self, r: &Rect) -> Option<CellWindow> {
        let span = |lo: f64, hi: f64, origin: f64, n: usize| -> Option<(usize, usize)> {
            let a = ((lo - origin) / self.cell_size).floor();
            let b = ((hi - origin) / self.cell_size).floor() + 1.0;
            let a = a.max(0.0);
            let b = b.min(n as f64);
            (a < b).then_some((a as usize, b as usize))
        };
        let (col_start, col_end) = span(r.min.x, r.max.x, self.origin.x, self.n_cols)?;
        let (row_start, row_end) = span(r.min.y, r.max.y, self.origin.y, self.n_rows)?;
        Some(CellWindow {
            col_start,
            col_end,
            row_start,
            row_end,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: usize,
    pub centroid: PlanarPoint,
    pub ward_id: Option<WardId>,
}

/// A grid laid over a set of wards, with each cell's majority ward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub projection: Projection,
    pub spec: GridSpec,
    pub cells: Vec<GridCell>,
    /// The wards the grid was built over, sorted by id.
    pub wards: Vec<Ward>,
}

impl Grid {
    pub fn cell_rect(&self, id: usize) -> Rect {
        self.spec.cell_rect(id)
    }
}

/// Tiles the bounding box of `wards` with `cell_size` squares and assigns each
/// cell to the ward it overlaps most.
///
/// The origin is the south-west corner of the ward bounding box and the
/// extent is rounded up to whole cells. Cells that overlap no ward are kept
/// with `ward_id = None`.
pub fn build_grid(
    projection: Projection,
    wards: &[Ward],
    cell_size: f64,
) -> Result<Grid, GeomError> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(GeomError::InvalidCellSize(cell_size));
    }
    if wards.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if let Some(w) = wards.iter().find(|w| !(w.shape.area() > 0.0)) {
        return Err(GeomError::DegenerateWard(w.id.clone()));
    }
    let bbox = wards
        .iter()
        .map(|w| w.shape.bbox())
        .reduce(|a, b| a.union(&b))
        .expect("non-empty");
    // tolerate float noise so an exact multiple does not gain a sliver column
    let count = |extent: f64| ((extent / cell_size - 1e-9).ceil() as usize).max(1);
    let spec = GridSpec {
        origin: bbox.min,
        cell_size,
        n_cols: count(bbox.width()),
        n_rows: count(bbox.height()),
    };

    // ward indices sorted by id so that ties resolve to the smallest id
    let mut order: Vec<usize> = (0..wards.len()).collect();
    order.sort_by(|&a, &b| wards[a].id.cmp(&wards[b].id));
    let per_ward: Vec<Vec<(usize, f64)>> = order
        .par_iter()
        .map(|&w| cell_overlaps(&spec, &wards[w].shape))
        .collect();

    let mut best: Vec<Option<(usize, f64)>> = vec![None; spec.n_cells()];
    for (rank, overlaps) in per_ward.iter().enumerate() {
        for &(cell, area) in overlaps {
            match best[cell] {
                Some((_, a)) if a >= area => {}
                _ => best[cell] = Some((rank, area)),
            }
        }
    }
    let cells = best
        .into_iter()
        .enumerate()
        .map(|(id, b)| GridCell {
            id,
            centroid: spec.centroid(id),
            ward_id: b.map(|(rank, _)| wards[order[rank]].id.clone()),
        })
        .collect();
    let wards = order.iter().map(|&i| wards[i].clone()).collect();
    Ok(Grid {
        projection,
        spec,
        cells,
        wards,
    })
}

/// Majority-overlap ward for a single cell; ties go to the smallest ward id.
pub fn assign_ward(cell: &Rect, wards: &[Ward]) -> Option<WardId> {
    let mut best: Option<(&WardId, f64)> = None;
    for w in wards {
        let area = polygon_rect_area(&w.shape, cell);
        if area <= 0.0 {
            continue;
        }
        best = match best {
            Some((id, a)) if a > area || (a == area && id <= &w.id) => Some((id, a)),
            _ => Some((&w.id, area)),
        };
    }
    best.map(|(id, _)| id.clone())
}
