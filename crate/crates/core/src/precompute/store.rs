//! The persisted k-vector store.
//!
//! Binary layout, all integers little-endian:
//!
//! | offset        | size            | content                                   |
//! |---------------|-----------------|-------------------------------------------|
//! | 0             | 4               | magic `WSKV`                              |
//! | 4             | 2               | format version (`u16`)                    |
//! | 6             | 2               | reserved, zero                            |
//! | 8             | 4               | header length `H` (`u32`)                 |
//! | 12            | H               | UTF-8 JSON header (grid, taxonomy, wards) |
//! | 12 + H        | 4 · N           | ward index per cell (`u32`, `0xFFFFFFFF` = none) |
//! | 12 + H + 4N   | 2 · N · C       | counts, one contiguous `u16` column per category in taxonomy order |
//!
//! `N` is the cell count and `C` the category count. A human-readable copy of
//! the header (without ward geometry) is written next to the store as
//! `<file>.json`; it is informational and not read back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PrecomputeError;
use crate::geom::{Grid, GridCell, GridSpec, PlanarPoint, Projection, Ward, WardId};
use crate::ingest::CategoryTaxonomy;

pub const FORMAT_VERSION: u16 = 1;
pub const NO_WARD: u32 = u32::MAX;
const MAGIC: &[u8; 4] = b"WSKV";

/// Grid metadata, ward assignment and per-category overlap counts.
#[derive(Debug, Clone, PartialEq)]
pub struct KVectorStore {
    projection: Projection,
    grid: GridSpec,
    taxonomy: CategoryTaxonomy,
    taxonomy_hash: String,
    wards: Vec<Ward>,
    cell_ward: Vec<u32>,
    counts: Vec<Vec<u16>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    projection: Projection,
    grid: GridSpec,
    taxonomy: CategoryTaxonomy,
    taxonomy_hash: String,
    n_cells: usize,
    wards: Vec<Ward>,
}

impl KVectorStore {
    pub(crate) fn from_parts(
        grid: &Grid,
        taxonomy: CategoryTaxonomy,
        counts: Vec<Vec<u16>>,
    ) -> Self {
        let index: BTreeMap<&WardId, u32> = grid
            .wards
            .iter()
            .enumerate()
            .map(|(i, w)| (&w.id, i as u32))
            .collect();
        let cell_ward = grid
            .cells
            .iter()
            .map(|c| c.ward_id.as_ref().map_or(NO_WARD, |w| index[w]))
            .collect();
        Self {
            projection: grid.projection,
            grid: grid.spec,
            taxonomy_hash: taxonomy.hash(),
            taxonomy,
            wards: grid.wards.clone(),
            cell_ward,
            counts,
        }
    }

    /// Assembles a store directly from columns. `cell_ward` holds indices into
    /// `wards` (or [`NO_WARD`]); `counts` has one column per taxonomy entry.
    pub fn from_columns(
        projection: Projection,
        grid: GridSpec,
        taxonomy: CategoryTaxonomy,
        wards: Vec<Ward>,
        cell_ward: Vec<u32>,
        counts: Vec<Vec<u16>>,
    ) -> Result<Self, PrecomputeError> {
        let n = grid.n_cells();
        if cell_ward.len() != n {
            return Err(PrecomputeError::Format(format!(
                "{} ward entries for {n} cells",
                cell_ward.len()
            )));
        }
        if wards.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(PrecomputeError::Format(
                "wards must be sorted by id and unique".into(),
            ));
        }
        if cell_ward
            .iter()
            .any(|&w| w != NO_WARD && w as usize >= wards.len())
        {
            return Err(PrecomputeError::Format("ward index out of range".into()));
        }
        if counts.len() != taxonomy.len() || counts.iter().any(|c| c.len() != n) {
            return Err(PrecomputeError::Format(
                "count columns do not match taxonomy and grid".into(),
            ));
        }
        Ok(Self {
            projection,
            grid,
            taxonomy_hash: taxonomy.hash(),
            taxonomy,
            wards,
            cell_ward,
            counts,
        })
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn taxonomy(&self) -> &CategoryTaxonomy {
        &self.taxonomy
    }

    pub fn taxonomy_hash(&self) -> &str {
        &self.taxonomy_hash
    }

    pub fn wards(&self) -> &[Ward] {
        &self.wards
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ward.len()
    }

    pub fn ward_index(&self, cell: usize) -> Option<usize> {
        match self.cell_ward[cell] {
            NO_WARD => None,
            w => Some(w as usize),
        }
    }

    pub fn ward_of(&self, cell: usize) -> Option<&WardId> {
        self.ward_index(cell).map(|w| &self.wards[w].id)
    }

    pub fn ward_indices(&self) -> &[u32] {
        &self.cell_ward
    }

    pub fn column(&self, category: usize) -> &[u16] {
        &self.counts[category]
    }

    pub fn count(&self, cell: usize, category: usize) -> u32 {
        self.counts[category][cell] as u32
    }

    pub fn centroid(&self, cell: usize) -> PlanarPoint {
        self.grid.centroid(cell)
    }

    pub fn cell(&self, id: usize) -> GridCell {
        GridCell {
            id,
            centroid: self.centroid(id),
            ward_id: self.ward_of(id).cloned(),
        }
    }

    /// Outline of a cell as a closed lon/lat ring.
    pub fn cell_ring_lonlat(&self, cell: usize) -> Vec<[f64; 2]> {
        let r = self.grid.cell_rect(cell);
        [
            (r.min.x, r.min.y),
            (r.max.x, r.min.y),
            (r.max.x, r.max.y),
            (r.min.x, r.max.y),
            (r.min.x, r.min.y),
        ]
        .into_iter()
        .map(|(x, y)| self.lonlat(PlanarPoint::new(x, y)))
        .collect()
    }

    /// Rings (exterior first) of a ward as lon/lat coordinates.
    pub fn ward_rings_lonlat(&self, ward: usize) -> Vec<Vec<[f64; 2]>> {
        self.wards[ward]
            .shape
            .rings()
            .map(|r| r.iter().map(|p| self.lonlat(*p)).collect())
            .collect()
    }

    /// Index of each ward that has at least one cell.
    pub fn populated_wards(&self) -> Vec<usize> {
        let mut has = vec![false; self.wards.len()];
        for w in self.cell_ward.iter().filter(|&&w| w != NO_WARD) {
            has[*w as usize] = true;
        }
        (0..self.wards.len()).filter(|&w| has[w]).collect()
    }

    fn lonlat(&self, p: PlanarPoint) -> [f64; 2] {
        let ll = self.projection.inverse(p);
        [ll.lon, ll.lat]
    }

    /// Counts of one cell keyed by category id, zero entries omitted.
    pub fn k_vector(&self, cell: usize) -> BTreeMap<String, u32> {
        self.taxonomy
            .categories()
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let k = self.count(cell, i);
                (k > 0).then(|| (c.id.clone(), k))
            })
            .collect()
    }

    /// Per category, the number of cells with k in 0, 1, 2, 3-4, 5-9, 10+.
    pub fn coverage_histogram(&self) -> Vec<(String, [usize; 6])> {
        self.taxonomy
            .categories()
            .iter()
            .zip(&self.counts)
            .map(|(c, col)| {
                let mut bins = [0usize; 6];
                for &k in col {
                    let b = match k {
                        0 => 0,
                        1 => 1,
                        2 => 2,
                        3..=4 => 3,
                        5..=9 => 4,
                        _ => 5,
                    };
                    bins[b] += 1;
                }
                (c.id.clone(), bins)
            })
            .collect()
    }

    fn header(&self) -> Header {
        Header {
            projection: self.projection,
            grid: self.grid,
            taxonomy: self.taxonomy.clone(),
            taxonomy_hash: self.taxonomy_hash.clone(),
            n_cells: self.n_cells(),
            wards: self.wards.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let n = self.n_cells();
        let mut out = Vec::with_capacity(12 + header.len() + 4 * n + 2 * n * self.counts.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.cell_ward {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for col in &self.counts {
            for k in col {
                out.extend_from_slice(&k.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], opts: &LoadOptions) -> Result<Self, PrecomputeError> {
        let bad = |m: &str| PrecomputeError::Format(m.to_owned());
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(bad("not a k-vector store (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(PrecomputeError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[12..header_end]).map_err(|e| bad(&e.to_string()))?;

        let actual_hash = header.taxonomy.hash();
        if !opts.force {
            if actual_hash != header.taxonomy_hash {
                return Err(PrecomputeError::TaxonomyMismatch {
                    expected: header.taxonomy_hash,
                    found: actual_hash,
                });
            }
            if let Some(expected) = &opts.expected_taxonomy_hash {
                if expected != &header.taxonomy_hash {
                    return Err(PrecomputeError::TaxonomyMismatch {
                        expected: expected.clone(),
                        found: header.taxonomy_hash,
                    });
                }
            }
        }

        let n = header.n_cells;
        if n != header.grid.n_cells() {
            return Err(bad("cell count disagrees with grid"));
        }
        let c = header.taxonomy.len();
        let expected_len = header_end + 4 * n + 2 * n * c;
        if bytes.len() != expected_len {
            return Err(bad(&format!(
                "expected {expected_len} bytes, found {}",
                bytes.len()
            )));
        }
        let body = &bytes[header_end..];
        let cell_ward = body[..4 * n]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let counts = body[4 * n..]
            .chunks_exact(2 * n.max(1))
            .take(c)
            .map(|col| {
                col.chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect()
            })
            .collect::<Vec<Vec<u16>>>();
        let counts = if n == 0 { vec![Vec::new(); c] } else { counts };
        let mut store = Self::from_columns(
            header.projection,
            header.grid,
            header.taxonomy,
            header.wards,
            cell_ward,
            counts,
        )?;
        store.taxonomy_hash = header.taxonomy_hash;
        Ok(store)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Refuse stores built with a different taxonomy.
    pub expected_taxonomy_hash: Option<String>,
    /// Skip all taxonomy hash checks.
    pub force: bool,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_store(store: &KVectorStore, path: &Path) -> Result<(), PrecomputeError> {
    let io = |p: &Path, e: std::io::Error| PrecomputeError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    fs::write(path, store.to_bytes()).map_err(|e| io(path, e))?;
    let meta = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "projection": store.projection,
        "grid": store.grid,
        "taxonomy_hash": store.taxonomy_hash,
        "categories": store.taxonomy.categories().iter().map(|c| &c.id).collect::<Vec<_>>(),
        "n_cells": store.n_cells(),
        "wards": store.wards.iter().map(|w| &w.id).collect::<Vec<_>>(),
        "layout": "magic WSKV | u16 version | u16 reserved | u32 header_len | header JSON | u32 ward index x n_cells | u16 counts x n_cells per category (little-endian)",
    });
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta).expect("json")).map_err(|e| io(&side, e))
}

pub fn load_store(path: &Path, opts: &LoadOptions) -> Result<KVectorStore, PrecomputeError> {
    let bytes = fs::read(path).map_err(|e| PrecomputeError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    KVectorStore::from_bytes(&bytes, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{build_grid, LatLon, MultiPolygon, Polygon};
    use crate::ingest::Category;
    use crate::isochrone::Catchment;
    use crate::precompute::build_k_vectors;

    fn sample() -> KVectorStore {
        let proj = Projection::new(LatLon {
            lat: 12.97,
            lon: 77.59,
        });
        let wards = [
            Ward::new("A", Polygon::rect(0.0, 0.0, 500.0, 750.0)),
            Ward::new("B", Polygon::rect(500.0, 0.0, 1000.0, 750.0)),
        ];
        let grid = build_grid(proj, &wards, 250.0).unwrap();
        let c = Catchment {
            amenity_id: "a".into(),
            category: "cafes".into(),
            frame: proj.reference(),
            shape: MultiPolygon::from(
                Polygon::regular(PlanarPoint::new(400.0, 300.0), 350.0, 64).unwrap(),
            ),
        };
        build_k_vectors(&grid, &[c.clone(), c], &CategoryTaxonomy::builtin()).unwrap()
    }

    #[test]
    fn round_trip() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.kvs");
        save_store(&s, &path).unwrap();
        let back = load_store(&path, &LoadOptions::default()).unwrap();
        assert_eq!(back, s);
        assert!(dir.path().join("store.kvs.json").exists());
        assert!(back.count(5, back.taxonomy().index_of("cafes").unwrap()) >= 1);
    }

    #[test]
    fn bumped_version_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            KVectorStore::from_bytes(&bytes, &LoadOptions::default()),
            Err(PrecomputeError::Version { found: 2, .. })
        ));
    }

    #[test]
    fn taxonomy_mismatch_unless_forced() {
        let bytes = sample().to_bytes();
        let other = CategoryTaxonomy::new(vec![Category {
            id: "x".into(),
            name: "X".into(),
        }])
        .unwrap();
        let opts = LoadOptions {
            expected_taxonomy_hash: Some(other.hash()),
            force: false,
        };
        assert!(matches!(
            KVectorStore::from_bytes(&bytes, &opts),
            Err(PrecomputeError::TaxonomyMismatch { .. })
        ));
        let forced = LoadOptions {
            force: true,
            ..opts
        };
        assert!(KVectorStore::from_bytes(&bytes, &forced).is_ok());
    }

    #[test]
    fn truncation_and_garbage() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            KVectorStore::from_bytes(&bytes[..bytes.len() - 1], &LoadOptions::default()),
            Err(PrecomputeError::Format(_))
        ));
        assert!(matches!(
            KVectorStore::from_bytes(b"nope", &LoadOptions::default()),
            Err(PrecomputeError::Format(_))
        ));
        let missing = load_store(
            Path::new("/definitely/not/here.kvs"),
            &LoadOptions::default(),
        );
        assert!(matches!(missing, Err(PrecomputeError::Io { .. })));
    }

    #[test]
    fn layout_is_columnar_little_endian() {
        let s = sample();
        let bytes = s.to_bytes();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = s.n_cells();
        let cafes = s.taxonomy().index_of("cafes").unwrap();
        let base = 12 + hlen + 4 * n + 2 * n * cafes;
        for cell in 0..n {
            let k = u16::from_le_bytes([bytes[base + 2 * cell], bytes[base + 2 * cell + 1]]);
            assert_eq!(k as u32, s.count(cell, cafes));
        }
    }
}
