//! Walking catchments: origin selection, provider calls, and union.

mod buffer;
mod cache;
mod routing;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::{buffer_provider, BufferProvider};
pub use cache::{read_catchments, write_catchments};
pub use routing::{HttpResponse, HttpTransport, ReqwestTransport, RoutingClient, RoutingConfig};

use crate::geom::{LatLon, MultiPolygon, PlanarPoint, Projection};
use crate::ingest::{AmenityFeature, AmenityGeometry};

/// Arc-length spacing of catchment origins along large polygon outlines, and
/// the perimeter at or below which a polygon uses its centroid instead.
pub const ORIGIN_SPACING_M: f64 = 250.0;

/// Catchments at or below this area (m²) are treated as empty.
pub const MIN_CATCHMENT_AREA_M2: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TravelMode {
    #[default]
    Walking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatchmentSpec {
    pub mode: TravelMode,
    pub max_minutes: f64,
}

impl Default for CatchmentSpec {
    fn default() -> Self {
        Self {
            mode: TravelMode::Walking,
            max_minutes: 15.0,
        }
    }
}

/// Area reachable from one amenity, in the planar frame centered on `frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catchment {
    pub amenity_id: String,
    pub category: String,
    pub frame: LatLon,
    pub shape: MultiPolygon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProviderInfo {
    pub name: String,
    pub supports_batch: bool,
}

/// Source of travel-time isochrones.
///
/// Implementations must be deterministic: the same origin and spec always
/// produce the same polygon.
pub trait IsochroneProvider: Send + Sync {
    fn info(&self) -> ProviderInfo;

    fn isochrone(
        &self,
        origin: PlanarPoint,
        spec: &CatchmentSpec,
    ) -> Result<MultiPolygon, ProviderError>;

    fn isochrones(
        &self,
        origins: &[PlanarPoint],
        spec: &CatchmentSpec,
    ) -> Result<Vec<MultiPolygon>, ProviderError> {
        origins.iter().map(|o| self.isochrone(*o, spec)).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("routing request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("routing engine rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("routing response violates contract: {0}")]
    Contract(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatchmentError {
    #[error("amenity {amenity_id}: {source}")]
    Provider {
        amenity_id: String,
        source: ProviderError,
    },
    #[error("amenity {amenity_id}: {message}")]
    Contract { amenity_id: String, message: String },
    #[error("amenity {amenity_id}: isochrone has no area")]
    EmptyIsochrone { amenity_id: String },
    #[error("amenity {amenity_id}: {message}")]
    Geometry { amenity_id: String, message: String },
}

/// Points from which isochrones are requested for `feature`.
///
/// Points are used as-is. Polygons with a perimeter up to 250 m use their
/// centroid; larger ones are sampled every 250 m of arc length along the
/// exterior ring, starting at its first vertex, dropping a final sample that
/// lands within 1 m of the first.
pub fn catchment_origins(
    feature: &AmenityFeature,
    projection: &Projection,
) -> Result<Vec<PlanarPoint>, CatchmentError> {
    match &feature.geometry {
        AmenityGeometry::Point(p) => Ok(vec![projection.forward(*p)]),
        AmenityGeometry::Polygon(gp) => {
            let poly = gp
                .project(projection)
                .map_err(|e| CatchmentError::Geometry {
                    amenity_id: feature.id.clone(),
                    message: e.to_string(),
                })?;
            let perimeter = poly.perimeter();
            if perimeter <= ORIGIN_SPACING_M {
                return Ok(vec![poly.centroid()]);
            }
            Ok(sample_ring(poly.exterior(), ORIGIN_SPACING_M))
        }
    }
}

fn sample_ring(ring: &[PlanarPoint], spacing: f64) -> Vec<PlanarPoint> {
    let perimeter: f64 = ring.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let count = (perimeter / spacing).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 0..count {
        let target = i as f64 * spacing;
        while seg + 1 < ring.len() - 1 && seg_start + ring[seg].distance(&ring[seg + 1]) < target {
            seg_start += ring[seg].distance(&ring[seg + 1]);
            seg += 1;
        }
        let (a, b) = (ring[seg], ring[seg + 1]);
        let len = a.distance(&b);
        let t = if len > 0.0 {
            ((target - seg_start) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(PlanarPoint::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
        ));
    }
    if out.len() > 1 && out[out.len() - 1].distance(&out[0]) < 1.0 {
        out.pop();
    }
    out
}

/// The union of the provider's isochrones over all origins of `feature`.
pub fn compute_catchment(
    feature: &AmenityFeature,
    spec: &CatchmentSpec,
    provider: &dyn IsochroneProvider,
    projection: &Projection,
) -> Result<Catchment, CatchmentError> {
    let origins = catchment_origins(feature, projection)?;
    let shapes = provider.isochrones(&origins, spec).map_err(|e| match e {
        ProviderError::Contract(message) => CatchmentError::Contract {
            amenity_id: feature.id.clone(),
            message,
        },
        other => CatchmentError::Provider {
            amenity_id: feature.id.clone(),
            source: other,
        },
    })?;
    let parts: Vec<_> = shapes.iter().flat_map(|m| m.0.iter()).collect();
    let shape = if shapes.len() == 1 {
        shapes.into_iter().next().unwrap_or_default()
    } else {
        MultiPolygon::union_all(parts)
    };
    if shape.area() <= MIN_CATCHMENT_AREA_M2 {
        return Err(CatchmentError::EmptyIsochrone {
            amenity_id: feature.id.clone(),
        });
    }
    Ok(Catchment {
        amenity_id: feature.id.clone(),
        category: feature.category.clone(),
        frame: projection.reference(),
        shape,
    })
}

/// Result of a batch run. Features whose isochrone came back empty are
/// listed rather than failing the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CatchmentRun {
    pub catchments: Vec<Catchment>,
    pub empty: Vec<String>,
}

/// Computes catchments for `features` with at most `concurrency` provider
/// requests in flight. Output follows input order; the first hard error in
/// input order is returned.
pub fn compute_catchments(
    features: &[AmenityFeature],
    spec: &CatchmentSpec,
    provider: &dyn IsochroneProvider,
    projection: &Projection,
    concurrency: usize,
) -> Result<CatchmentRun, CatchmentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| CatchmentError::Provider {
            amenity_id: String::new(),
            source: ProviderError::Other(e.to_string()),
        })?;
    let results: Vec<_> = pool.install(|| {
        features
            .par_iter()
            .map(|f| compute_catchment(f, spec, provider, projection))
            .collect()
    });
    let mut run = CatchmentRun {
        catchments: Vec::with_capacity(results.len()),
        empty: Vec::new(),
    };
    for r in results {
        match r {
            Ok(c) => run.catchments.push(c),
            Err(CatchmentError::EmptyIsochrone { amenity_id }) => run.empty.push(amenity_id),
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}
