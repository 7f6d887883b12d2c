use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::{CatchmentSpec, IsochroneProvider, ProviderError, ProviderInfo};
use crate::geom::{MultiPolygon, PlanarPoint, Polygon, Projection};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking HTTP POST, so the client can be exercised without a network.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Other(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, String> {
        let resp = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned())
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    /// Full isochrone URL, e.g. `http://localhost:8002/isochrone`.
    pub endpoint: String,
    /// Engine costing model for walking.
    pub costing: String,
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl RoutingConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            costing: "pedestrian".into(),
            max_attempts: 3,
            backoff_base: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

/// Client for a Valhalla-style `/isochrone` JSON endpoint.
///
/// One origin per request. Transport failures and 5xx responses are retried
/// with exponential backoff (`base`, `2·base`, ...) up to `max_attempts`
/// attempts in total; 4xx responses fail immediately.
pub struct RoutingClient {
    config: RoutingConfig,
    projection: Projection,
    transport: Box<dyn HttpTransport>,
    sleep: Sleeper,
}

impl RoutingClient {
    pub fn new(config: RoutingConfig, projection: Projection) -> Result<Self, ProviderError> {
        let transport = ReqwestTransport::new(config.timeout)?;
        Ok(Self::with_transport(
            config,
            projection,
            Box::new(transport),
        ))
    }

    pub fn with_transport(
        config: RoutingConfig,
        projection: Projection,
        transport: Box<dyn HttpTransport>,
    ) -> Self {
        Self {
            config,
            projection,
            transport,
            sleep: Box::new(std::thread::sleep),
        }
    }

    /// Replaces the backoff sleep (for tests).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    fn request_body(&self, origin: PlanarPoint, spec: &CatchmentSpec) -> String {
        let ll = self.projection.inverse(origin);
        json!({
            "locations": [{"lat": ll.lat, "lon": ll.lon}],
            "costing": self.config.costing,
            "contours": [{"time": spec.max_minutes}],
            "polygons": true,
        })
        .to_string()
    }

    fn send(&self, body: &str) -> Result<String, ProviderError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                (self.sleep)(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.transport.post_json(&self.config.endpoint, body) {
                Ok(r) if (200..300).contains(&r.status) => return Ok(r.body),
                Ok(r) if r.status >= 500 => last = format!("HTTP {}", r.status),
                Ok(r) => {
                    return Err(ProviderError::Rejected {
                        status: r.status,
                        body: r.body,
                    })
                }
                Err(e) => last = e,
            }
            log::debug!(
                "routing attempt {} of {attempts} failed: {last}",
                attempt + 1
            );
        }
        Err(ProviderError::Exhausted { attempts, last })
    }

    /// Extracts the contour for `max_minutes` from an isochrone response.
    pub fn parse_response(
        &self,
        body: &str,
        spec: &CatchmentSpec,
    ) -> Result<MultiPolygon, ProviderError> {
        let fc: geojson::FeatureCollection = body
            .parse::<geojson::GeoJson>()
            .map_err(|e| ProviderError::Contract(e.to_string()))
            .and_then(|g| {
                geojson::FeatureCollection::try_from(g)
                    .map_err(|e| ProviderError::Contract(e.to_string()))
            })?;
        let contour = fc
            .features
            .iter()
            .find(|f| {
                f.properties
                    .as_ref()
                    .and_then(|p| p.get("contour"))
                    .and_then(Json::as_f64)
                    .is_some_and(|c| (c - spec.max_minutes).abs() < 1e-9)
            })
            .ok_or_else(|| {
                ProviderError::Contract(format!(
                    "no {} minute contour in response",
                    spec.max_minutes
                ))
            })?;
        let geometry = contour
            .geometry
            .as_ref()
            .ok_or_else(|| ProviderError::Contract("contour without geometry".into()))?;
        let rings: Vec<&geojson::PolygonType> = match &geometry.value {
            geojson::Value::Polygon(p) => vec![p],
            geojson::Value::MultiPolygon(ps) => ps.iter().collect(),
            other => {
                return Err(ProviderError::Contract(format!(
                    "expected polygon contour, got {}",
                    other.type_name()
                )))
            }
        };
        let mut polys = Vec::new();
        for rings in rings {
            let mut it = rings.iter().map(|ring| {
                ring.iter()
                    .map(|pos| match pos.as_slice() {
                        [lon, lat, ..] => Ok(self.projection.forward(crate::geom::LatLon {
                            lat: *lat,
                            lon: *lon,
                        })),
                        _ => Err(ProviderError::Contract("short position".into())),
                    })
                    .collect::<Result<Vec<_>, _>>()
            });
            let Some(exterior) = it.next() else { continue };
            let holes = it.collect::<Result<Vec<_>, _>>()?;
            // zero-area slivers are skipped; the caller's empty-catchment guard handles the rest
            if let Ok(p) = Polygon::new(exterior?, holes) {
                polys.push(p);
            }
        }
        Ok(match polys.len() {
            0 | 1 => MultiPolygon(polys),
            _ => MultiPolygon::union_all(&polys),
        })
    }
}

impl IsochroneProvider for RoutingClient {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: format!("routing:{}", self.config.endpoint),
            supports_batch: false,
        }
    }

    fn isochrone(
        &self,
        origin: PlanarPoint,
        spec: &CatchmentSpec,
    ) -> Result<MultiPolygon, ProviderError> {
        let body = self.send(&self.request_body(origin, spec))?;
        self.parse_response(&body, spec)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::geom::LatLon;

    struct Scripted {
        responses: Mutex<Vec<Result<HttpResponse, String>>>,
        requests: Arc<Mutex<Vec<String>>>,
    }

    impl HttpTransport for Scripted {
        fn post_json(&self, _url: &str, body: &str) -> Result<HttpResponse, String> {
            self.requests.lock().unwrap().push(body.to_owned());
            self.responses.lock().unwrap().remove(0)
        }
    }

    fn contour_fc(minutes: &[f64], proj: &Projection) -> String {
        let features: Vec<_> = minutes
            .iter()
            .map(|&m| {
                let r = m * 80.0;
                let ring: Vec<Vec<f64>> = (0..=16)
                    .map(|i| {
                        let t = std::f64::consts::TAU * (i % 16) as f64 / 16.0;
                        let ll = proj.inverse(PlanarPoint::new(r * t.cos(), r * t.sin()));
                        vec![ll.lon, ll.lat]
                    })
                    .collect();
                json!({"type": "Feature", "properties": {"contour": m, "metric": "time"},
                       "geometry": {"type": "Polygon", "coordinates": [ring]}})
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features}).to_string()
    }

    fn client(
        responses: Vec<Result<HttpResponse, String>>,
    ) -> (
        RoutingClient,
        Arc<Mutex<Vec<String>>>,
        Arc<Mutex<Vec<Duration>>>,
    ) {
        let proj = Projection::new(LatLon {
            lat: 12.97,
            lon: 77.59,
        });
        let requests = Arc::new(Mutex::new(Vec::new()));
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let s = sleeps.clone();
        let c = RoutingClient::with_transport(
            RoutingConfig::new("http://routing.test/isochrone"),
            proj,
            Box::new(Scripted {
                responses: Mutex::new(responses),
                requests: requests.clone(),
            }),
        )
        .with_sleeper(move |d| s.lock().unwrap().push(d));
        (c, requests, sleeps)
    }

    #[test]
    fn happy_path_returns_one_polygon() {
        let proj = Projection::new(LatLon {
            lat: 12.97,
            lon: 77.59,
        });
        let (c, requests, _) = client(vec![Ok(HttpResponse {
            status: 200,
            body: contour_fc(&[15.0], &proj),
        })]);
        let shape = c
            .isochrone(PlanarPoint::new(0.0, 0.0), &CatchmentSpec::default())
            .unwrap();
        assert_eq!(shape.0.len(), 1);
        assert!(shape.contains_point(PlanarPoint::new(0.0, 0.0)));
        let sent: Json = serde_json::from_str(&requests.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["costing"], "pedestrian");
        assert_eq!(sent["contours"][0]["time"], 15.0);
        assert!((sent["locations"][0]["lat"].as_f64().unwrap() - 12.97).abs() < 1e-12);
    }

    #[test]
    fn retries_then_gives_up() {
        let e500 = || {
            Ok(HttpResponse {
                status: 500,
                body: "boom".into(),
            })
        };
        let (c, requests, sleeps) = client(vec![e500(), e500(), e500()]);
        let err = c
            .isochrone(PlanarPoint::new(0.0, 0.0), &CatchmentSpec::default())
            .unwrap_err();
        assert!(
            matches!(err, ProviderError::Exhausted { attempts: 3, .. }),
            "{err:?}"
        );
        assert_eq!(requests.lock().unwrap().len(), 3);
        assert_eq!(
            *sleeps.lock().unwrap(),
            vec![Duration::from_millis(200), Duration::from_millis(400)]
        );
    }

    #[test]
    fn transient_failure_recovers() {
        let proj = Projection::new(LatLon {
            lat: 12.97,
            lon: 77.59,
        });
        let (c, _, sleeps) = client(vec![
            Err("connection reset".into()),
            Ok(HttpResponse {
                status: 200,
                body: contour_fc(&[15.0], &proj),
            }),
        ]);
        assert!(c
            .isochrone(PlanarPoint::new(0.0, 0.0), &CatchmentSpec::default())
            .is_ok());
        assert_eq!(sleeps.lock().unwrap().len(), 1);
    }

    #[test]
    fn client_error_is_not_retried() {
        let (c, requests, _) = client(vec![Ok(HttpResponse {
            status: 400,
            body: "bad costing".into(),
        })]);
        let err = c
            .isochrone(PlanarPoint::new(0.0, 0.0), &CatchmentSpec::default())
            .unwrap_err();
        assert!(matches!(err, ProviderError::Rejected { status: 400, .. }));
        assert_eq!(requests.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_contour_is_contract_error() {
        let proj = Projection::new(LatLon {
            lat: 12.97,
            lon: 77.59,
        });
        let (c, _, _) = client(vec![Ok(HttpResponse {
            status: 200,
            body: contour_fc(&[5.0, 10.0], &proj),
        })]);
        let err = c
            .isochrone(PlanarPoint::new(0.0, 0.0), &CatchmentSpec::default())
            .unwrap_err();
        assert!(matches!(err, ProviderError::Contract(_)), "{err:?}");
    }

    #[test]
    fn picks_matching_contour_among_several() {
        let proj = Projection::new(LatLon {
            lat: 12.97,
            lon: 77.59,
        });
        let (c, _, _) = client(vec![Ok(HttpResponse {
            status: 200,
            body: contour_fc(&[5.0, 10.0, 15.0], &proj),
        })]);
        let shape = c
            .isochrone(PlanarPoint::new(0.0, 0.0), &CatchmentSpec::default())
            .unwrap();
        // 16-gon of radius 1200
        let expect = 8.0 * (std::f64::consts::TAU / 16.0).sin() * 1200.0 * 1200.0;
        assert!((shape.area() - expect).abs() / expect < 1e-6);
    }
}
