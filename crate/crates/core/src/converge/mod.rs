//! Grid-versus-continuous convergence runs on synthetic scenarios.
//!
//! A scenario lives directly in planar metres. The grid side goes through the
//! production path (grid, k-vectors, ward mean); the continuous side uses the
//! exact arrangement oracle.

use std::fmt::Write as _;
use std::path::Path;

use geo::{BooleanOps, Euclidean, Length};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    build_grid, GeomError, Grid, LatLon, MultiPolygon, PlanarPoint, Polygon, Projection, Rect, Ward,
};
use crate::ingest::CategoryTaxonomy;
use crate::isochrone::Catchment;
use crate::precompute::{build_k_vectors_with, CoverageRule, PrecomputeError};
use crate::scoring::{
    continuous_point_score, continuous_ward_score, ScoreError, ScoringPlan, UserConfig,
};

/// Vertex count used for every circle, in both the grid and oracle paths.
pub const CIRCLE_SEGMENTS: usize = 256;
/// Constant of the boundary-band error bound.
pub const BOUND_C: f64 = 2.0;
const WARD_ID: &str = "W";

#[derive(Debug, Error)]
pub enum ConvergeError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid resolutions: {0}")]
    Resolutions(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Precompute(#[from] PrecomputeError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Rect {
        min: [f64; 2],
        max: [f64; 2],
    },
    /// Regular polygon with [`CIRCLE_SEGMENTS`] vertices on the circle.
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    /// The rectangle `min..max` with a `notch` (width, height) removed from
    /// its north-east corner.
    LShape {
        min: [f64; 2],
        max: [f64; 2],
        notch: [f64; 2],
    },
    Polygon {
        exterior: Vec<[f64; 2]>,
    },
}

impl Shape {
    pub fn to_polygon(&self) -> Result<Polygon, ConvergeError> {
        let pt = |p: [f64; 2]| PlanarPoint::new(p[0], p[1]);
        match self {
            Shape::Rect { min, max } => {
                if !(min[0] < max[0] && min[1] < max[1]) {
                    return Err(ConvergeError::Scenario("rect min must be below max".into()));
                }
                Ok(Polygon::rect(min[0], min[1], max[0], max[1]))
            }
            Shape::Circle { center, radius } => {
                Ok(Polygon::regular(pt(*center), *radius, CIRCLE_SEGMENTS)?)
            }
            Shape::LShape { min, max, notch } => {
                let (nx, ny) = (max[0] - notch[0], max[1] - notch[1]);
                if !(min[0] < nx && nx < max[0] && min[1] < ny && ny < max[1]) {
                    return Err(ConvergeError::Scenario(
                        "notch must lie strictly inside the rectangle".into(),
                    ));
                }
                let ring = [
                    [min[0], min[1]],
                    [max[0], min[1]],
                    [max[0], ny],
                    [nx, ny],
                    [nx, max[1]],
                    [min[0], max[1]],
                ];
                Ok(Polygon::new(ring.into_iter().map(pt).collect(), vec![])?)
            }
            Shape::Polygon { exterior } => Ok(Polygon::new(
                exterior.iter().copied().map(pt).collect(),
                vec![],
            )?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCatchment {
    pub category: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    #[serde(default)]
    pub name: String,
    pub ward: Shape,
    #[serde(default)]
    pub catchments: Vec<ScenarioCatchment>,
    pub config: UserConfig,
}

/// A scenario with its shapes built and its config checked.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ward: Polygon,
    pub catchments: Vec<Catchment>,
    pub config: UserConfig,
    pub taxonomy: CategoryTaxonomy,
    projection: Projection,
}

impl SyntheticScenario {
    pub fn from_json(text: &str) -> Result<Self, ConvergeError> {
        serde_json::from_str(text).map_err(|e| ConvergeError::Scenario(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ConvergeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConvergeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn prepare(&self) -> Result<Prepared, ConvergeError> {
        let taxonomy = CategoryTaxonomy::builtin();
        self.config.validate_against(&taxonomy)?;
        let projection = Projection::new(LatLon { lat: 0.0, lon: 0.0 });
        let ward = self.ward.to_polygon()?;
        ward.validate()?;
        let mut catchments = Vec::with_capacity(self.catchments.len());
        for (i, c) in self.catchments.iter().enumerate() {
            if !taxonomy.contains(&c.category) {
                return Err(ConvergeError::Scenario(format!(
                    "catchments[{i}]: unknown category {:?}",
                    c.category
                )));
            }
            let shape = c.shape.to_polygon()?;
            shape.validate()?;
            catchments.push(Catchment {
                amenity_id: format!("s{i}"),
                category: c.category.clone(),
                frame: projection.reference(),
                shape: MultiPolygon::from(shape),
            });
        }
        Ok(Prepared {
            ward,
            catchments,
            config: self.config.clone(),
            taxonomy,
            projection,
        })
    }
}

/// How the grid path decides that a cell is covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    /// At least half of the cell area (the production rule).
    #[default]
    HalfArea,
    /// Cell centroid inside the catchment.
    Centroid,
}

impl From<CoverageMode> for CoverageRule {
    fn from(m: CoverageMode) -> Self {
        match m {
            CoverageMode::HalfArea => CoverageRule::HalfArea,
            CoverageMode::Centroid => CoverageRule::Centroid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementRow {
    pub cell_size: f64,
    pub grid_score: f64,
    pub oracle_score: f64,
    pub abs_error: f64,
}

fn check_sizes(sizes: &[f64]) -> Result<(), ConvergeError> {
    if sizes.is_empty() {
        return Err(ConvergeError::Resolutions(
            "at least one cell size is required".into(),
        ));
    }
    if let Some(s) = sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(ConvergeError::Resolutions(format!(
            "cell size {s} is not positive"
        )));
    }
    if sizes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConvergeError::Resolutions(
            "cell sizes must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

impl Prepared {
    fn grid(&self, cell_size: f64) -> Result<Grid, ConvergeError> {
        Ok(build_grid(
            self.projection,
            &[Ward::new(WARD_ID, self.ward.clone())],
            cell_size,
        )?)
    }

    /// Ward score through grid, k-vectors and ward mean.
    pub fn grid_score(&self, cell_size: f64, mode: CoverageMode) -> Result<f64, ConvergeError> {
        let grid = self.grid(cell_size)?;
        let store = build_k_vectors_with(&grid, &self.catchments, &self.taxonomy, mode.into())?;
        let plan = ScoringPlan::compile(&self.config, &self.taxonomy)?;
        let surface = plan.ward_surface(&store)?;
        Ok(surface.get(WARD_ID).unwrap_or(0.0))
    }

    pub fn oracle_score(&self) -> Result<f64, ConvergeError> {
        Ok(continuous_ward_score(
            &self.ward,
            &self.catchments,
            &self.taxonomy,
            &self.config,
        )?)
    }

    /// Total catchment boundary length strictly inside the ward.
    pub fn interior_boundary_length(&self) -> f64 {
        let ward = self.ward.to_geo();
        self.catchments
            .iter()
            .flat_map(|c| &c.shape.0)
            .flat_map(|p| p.rings().map(|r| r.to_vec()).collect::<Vec<_>>())
            .map(|ring| {
                let ls = geo::LineString::from(ring.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>());
                let inside = ward.clip(&geo::MultiLineString(vec![ls]), false);
                let on_edge: f64 = inside
                    .0
                    .iter()
                    .flat_map(|l| l.lines())
                    .filter(|seg| {
                        self.ward.boundary_distance(PlanarPoint::new(
                            (seg.start.x + seg.end.x) / 2.0,
                            (seg.start.y + seg.end.y) / 2.0,
                        )) < 1e-6
                    })
                    .map(|seg| Euclidean.length(&seg))
                    .sum();
                Euclidean.length(&inside) - on_edge
            })
            .sum()
    }
}

pub fn run_refinement(
    scenario: &SyntheticScenario,
    cell_sizes: &[f64],
) -> Result<Vec<RefinementRow>, ConvergeError> {
    run_refinement_with(scenario, cell_sizes, CoverageMode::HalfArea)
}

pub fn run_refinement_with(
    scenario: &SyntheticScenario,
    cell_sizes: &[f64],
    mode: CoverageMode,
) -> Result<Vec<RefinementRow>, ConvergeError> {
    check_sizes(cell_sizes)?;
    let prepared = scenario.prepare()?;
    let oracle = prepared.oracle_score()?;
    cell_sizes
        .par_iter()
        .map(|&cs| {
            let grid = prepared.grid_score(cs, mode)?;
            Ok(RefinementRow {
                cell_size: cs,
                grid_score: grid,
                oracle_score: oracle,
                abs_error: (grid - oracle).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub cell_size: f64,
    /// Distance from the location to the nearest catchment edge.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRefinement {
    pub rows: Vec<(f64, f64)>,
    pub continuous: f64,
    pub warnings: Vec<BoundaryPoint>,
}

impl PointRefinement {
    /// True when the two finest resolutions give the same score.
    pub fn stabilized(&self) -> bool {
        matches!(self.rows.as_slice(), [.., (_, a), (_, b)] if a == b)
    }
}

pub fn run_point_refinement(
    scenario: &SyntheticScenario,
    location: PlanarPoint,
    cell_sizes: &[f64],
) -> Result<PointRefinement, ConvergeError> {
    check_sizes(cell_sizes)?;
    let prepared = scenario.prepare()?;
    let plan = ScoringPlan::compile(&prepared.config, &prepared.taxonomy)?;
    let edge = prepared
        .catchments
        .iter()
        .flat_map(|c| &c.shape.0)
        .map(|p| p.boundary_distance(location))
        .fold(f64::INFINITY, f64::min);
    let mut rows = Vec::with_capacity(cell_sizes.len());
    let mut warnings = Vec::new();
    for &cs in cell_sizes {
        let grid = prepared.grid(cs)?;
        let store = build_k_vectors_with(
            &grid,
            &prepared.catchments,
            &prepared.taxonomy,
            CoverageRule::HalfArea,
        )?;
        let cell = grid.spec.cell_at(location).ok_or_else(|| {
            let ll = prepared.projection.inverse(location);
            ScoreError::OutOfBounds {
                lat: ll.lat,
                lon: ll.lon,
            }
        })?;
        if edge < cs {
            log::warn!(
                "location ({}, {}) is {edge:.3} m from a catchment edge at cell size {cs}",
                location.x,
                location.y
            );
            warnings.push(BoundaryPoint {
                cell_size: cs,
                distance: edge,
            });
        }
        rows.push((cs, plan.point(&store, cell)?.0));
    }
    let continuous = continuous_point_score(
        location,
        &prepared.catchments,
        &prepared.taxonomy,
        &prepared.config,
    )?;
    Ok(PointRefinement {
        rows,
        continuous,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub holds: bool,
    pub error: f64,
    pub bound: f64,
    /// `error / bound`; 0 when both are 0.
    pub ratio: f64,
}

/// Compares `|grid - oracle|` with `C * L * cell_size / area(ward)`, L being
/// the catchment boundary length inside the ward.
pub fn error_bound_check(
    scenario: &SyntheticScenario,
    cell_size: f64,
) -> Result<BoundCheck, ConvergeError> {
    check_sizes(&[cell_size])?;
    let prepared = scenario.prepare()?;
    let error =
        (prepared.grid_score(cell_size, CoverageMode::HalfArea)? - prepared.oracle_score()?).abs();
    let bound = BOUND_C * prepared.interior_boundary_length() * cell_size / prepared.ward.area();
    let ratio = if error == 0.0 { 0.0 } else { error / bound };
    Ok(BoundCheck {
        holds: error <= bound,
        error,
        bound,
        ratio,
    })
}

/// `error[i+1] / error[i]` for consecutive rows; `None` where the earlier
/// error is 0.
pub fn error_ratios(rows: &[RefinementRow]) -> Vec<Option<f64>> {
    rows.windows(2)
        .map(|w| (w[0].abs_error > 0.0).then(|| w[1].abs_error / w[0].abs_error))
        .collect()
}

pub const CSV_HEADER: &str = "cell_size,grid_score,oracle_score,abs_error";

pub fn rows_to_csv(rows: &[RefinementRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{:.10},{:.10},{:.10}",
            r.cell_size, r.grid_score, r.oracle_score, r.abs_error
        )
        .expect("string write");
    }
    out
}

/// Bounding box of the scenario's ward, for callers choosing locations.
pub fn ward_bbox(scenario: &SyntheticScenario) -> Result<Rect, ConvergeError> {
    Ok(scenario.ward.to_polygon()?.bbox())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::oracle::{area_k_exact, area_k_monte_carlo, MONTE_CARLO_SEED};
    use crate::scoring::{ConfigEntry, DecayPreset, Tier};

    const SIZES: [f64; 4] = [500.0, 250.0, 125.0, 62.5];

    fn scenario(catchments: Vec<(&str, Shape)>, config: Vec<ConfigEntry>) -> SyntheticScenario {
        SyntheticScenario {
            name: "t".into(),
            ward: Shape::Rect {
                min: [0.0, 0.0],
                max: [2000.0, 2000.0],
            },
            catchments: catchments
                .into_iter()
                .map(|(c, s)| ScenarioCatchment {
                    category: c.into(),
                    shape: s,
                })
                .collect(),
            config: UserConfig::new(config),
        }
    }

    fn parks() -> Vec<ConfigEntry> {
        vec![ConfigEntry::new(
            ["parks"],
            Tier::Standard,
            DecayPreset::Balanced,
        )]
    }

    fn half() -> SyntheticScenario {
        scenario(
            vec![(
                "parks",
                Shape::Rect {
                    min: [-100.0, -100.0],
                    max: [1600.0, 1250.0],
                },
            )],
            parks(),
        )
    }

    #[test]
    fn half_coverage_converges() {
        let rows = run_refinement(&half(), &SIZES).unwrap();
        assert!(rows.iter().all(|r| (r.oracle_score - 0.25).abs() < 1e-12));
        let errors: Vec<f64> = rows.iter().map(|r| r.abs_error).collect();
        let expected = [0.03125, 0.015625, 0.00390625, 0.00390625];
        for (e, x) in errors.iter().zip(expected) {
            assert!((e - x).abs() < 1e-12, "{errors:?}");
        }
        assert!(errors[3] < 0.01 && errors[3] < errors[0]);
        for r in error_ratios(&rows).into_iter().flatten() {
            assert!((0.25..=1.0).contains(&r), "{r}");
        }
    }

    #[test]
    fn centroid_mode_agrees_in_the_limit() {
        let s = scenario(
            vec![(
                "parks",
                Shape::Circle {
                    center: [1000.0, 1000.0],
                    radius: 650.0,
                },
            )],
            parks(),
        );
        let half = run_refinement_with(&s, &SIZES, CoverageMode::HalfArea).unwrap();
        let cent = run_refinement_with(&s, &SIZES, CoverageMode::Centroid).unwrap();
        let gap = |i: usize| (half[i].grid_score - cent[i].grid_score).abs();
        assert!(gap(3) < 0.01);
        assert!(cent[3].abs_error < cent[0].abs_error);
    }

    #[test]
    fn whole_ward_and_empty() {
        let whole = scenario(
            vec![(
                "parks",
                Shape::Rect {
                    min: [0.0, 0.0],
                    max: [2000.0, 2000.0],
                },
            )],
            parks(),
        );
        for r in run_refinement(&whole, &SIZES).unwrap() {
            assert_eq!(r.abs_error, 0.0);
        }
        let b = error_bound_check(&whole, 125.0).unwrap();
        assert!(b.holds && b.error == 0.0);
        for r in run_refinement(&scenario(vec![], parks()), &SIZES).unwrap() {
            assert_eq!((r.grid_score, r.oracle_score), (0.0, 0.0));
        }
    }

    #[test]
    fn bound_holds_on_half_coverage() {
        let b = error_bound_check(&half(), 125.0).unwrap();
        let l = half().prepare().unwrap().interior_boundary_length();
        assert!((l - 2850.0).abs() < 1e-6, "{l}");
        assert!(b.holds, "{b:?}");
        assert!((b.bound - 2.0 * 2850.0 * 125.0 / 4e6).abs() < 1e-12);
    }

    #[test]
    fn required_absent_gates_everything() {
        let mut config = parks();
        config.push(ConfigEntry::new(
            ["hospitals"],
            Tier::Required,
            DecayPreset::Focused,
        ));
        let s = scenario(
            vec![(
                "parks",
                Shape::Circle {
                    center: [1000.0, 1000.0],
                    radius: 900.0,
                },
            )],
            config,
        );
        for r in run_refinement(&s, &SIZES).unwrap() {
            assert_eq!((r.grid_score, r.oracle_score), (0.0, 0.0));
        }
    }

    #[test]
    fn point_refinement() {
        let s = scenario(
            vec![(
                "parks",
                Shape::Circle {
                    center: [1000.0, 1000.0],
                    radius: 600.0,
                },
            )],
            parks(),
        );
        let inside = run_point_refinement(&s, PlanarPoint::new(1100.0, 950.0), &SIZES).unwrap();
        assert!(inside.stabilized());
        assert_eq!(inside.rows.last().unwrap().1, 0.5);
        assert_eq!(inside.continuous, 0.5);
        let outside = run_point_refinement(&s, PlanarPoint::new(100.0, 100.0), &SIZES).unwrap();
        assert_eq!(outside.rows.last().unwrap().1, 0.0);
        let edge = run_point_refinement(&s, PlanarPoint::new(1600.0, 1000.0), &SIZES).unwrap();
        assert_eq!(edge.warnings.len(), SIZES.len());
        assert!(inside.warnings.len() < SIZES.len());
    }

    #[test]
    fn resolution_validation() {
        assert!(matches!(
            run_refinement(&half(), &[]),
            Err(ConvergeError::Resolutions(_))
        ));
        assert!(matches!(
            run_refinement(&half(), &[250.0, 500.0]),
            Err(ConvergeError::Resolutions(_))
        ));
        assert!(matches!(
            run_refinement(&half(), &[0.0]),
            Err(ConvergeError::Resolutions(_))
        ));
        assert_eq!(run_refinement(&half(), &[250.0]).unwrap().len(), 1);
    }

    #[test]
    fn l_shape_ward() {
        let mut s = half();
        s.ward = Shape::LShape {
            min: [0.0, 0.0],
            max: [2000.0, 2000.0],
            notch: [1000.0, 1000.0],
        };
        let rows = run_refinement(&s, &SIZES).unwrap();
        assert!(rows[3].abs_error < rows[0].abs_error);
        assert!(rows[3].abs_error < 0.01);
    }

    #[test]
    fn monte_carlo_agrees_with_overlay() {
        let ward = Polygon::rect(0.0, 0.0, 2000.0, 2000.0);
        let a = MultiPolygon::from(Polygon::rect(-100.0, -100.0, 1600.0, 1250.0));
        let b = MultiPolygon::from(Polygon::rect(700.0, 300.0, 2300.0, 1800.0));
        let c = MultiPolygon::from(Polygon::rect(200.0, 900.0, 900.0, 2100.0));
        let exact = area_k_exact(&ward, &[&a, &b, &c]).unwrap();
        let mc = area_k_monte_carlo(&ward, &[&a, &b, &c], 1_000_000, MONTE_CARLO_SEED);
        for (e, m) in exact.iter().zip(&mc) {
            assert!((e - m.value).abs() <= 3.0 * m.std_error, "{e} vs {m:?}");
        }
    }

    #[test]
    fn scenario_json() {
        let s = SyntheticScenario::from_json(
            r#"{"name":"c","ward":{"type":"rect","min":[0,0],"max":[10,10]},
                "catchments":[{"category":"parks","shape":{"type":"circle","center":[5,5],"radius":3}}],
                "config":{"entries":[{"members":["parks"],"tier":"standard","decay":"balanced"}]}}"#,
        )
        .unwrap();
        let p = s.prepare().unwrap();
        assert_eq!(
            p.catchments[0].shape.0[0].exterior().len(),
            CIRCLE_SEGMENTS + 1
        );
        assert!(matches!(
            SyntheticScenario::from_json(r#"{"ward":{"type":"hexagon"}}"#),
            Err(ConvergeError::Scenario(_))
        ));
    }

    #[test]
    fn csv_format() {
        let rows = run_refinement(&half(), &[500.0, 62.5]).unwrap();
        let csv = rows_to_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "500,0.2812500000,0.2500000000,0.0312500000");
        assert!(lines[2].starts_with("62.5,"));
    }
}
