use super::{CatchmentSpec, IsochroneProvider, ProviderError, ProviderInfo};
use crate::geom::{MultiPolygon, PlanarPoint, Polygon};

/// Straight-line fallback: a regular 64-gon of radius `speed × minutes`.
///
/// Ignores the street network entirely; meant for tests and for running the
/// pipeline without a routing engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferProvider {
    walk_speed: f64,
}

impl BufferProvider {
    pub const DEFAULT_WALK_SPEED: f64 = 80.0;
    pub const SEGMENTS: usize = 64;

    /// `walk_speed` in meters per minute.
    pub fn new(walk_speed: f64) -> Result<Self, ProviderError> {
        if !(walk_speed > 0.0 && walk_speed.is_finite()) {
            return Err(ProviderError::Other(format!(
                "walk speed must be positive (got {walk_speed})"
            )));
        }
        Ok(Self { walk_speed })
    }

    pub fn radius(&self, spec: &CatchmentSpec) -> f64 {
        self.walk_speed * spec.max_minutes
    }
}

impl Default for BufferProvider {
    fn default() -> Self {
        Self {
            walk_speed: Self::DEFAULT_WALK_SPEED,
        }
    }
}

impl IsochroneProvider for BufferProvider {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: "buffer".into(),
            supports_batch: true,
        }
    }

    fn isochrone(
        &self,
        origin: PlanarPoint,
        spec: &CatchmentSpec,
    ) -> Result<MultiPolygon, ProviderError> {
        let r = self.radius(spec);
        Ok(Polygon::regular(origin, r, Self::SEGMENTS)
            .map(MultiPolygon::from)
            .unwrap_or_default())
    }
}

pub fn buffer_provider(walk_speed: f64) -> Result<BufferProvider, ProviderError> {
    BufferProvider::new(walk_speed)
}
