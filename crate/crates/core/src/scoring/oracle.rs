//! Exact continuous-space ward scores for small synthetic instances.
//!
//! The ward is cut into the faces of the arrangement of all relevant
//! catchments; every face has a constant count per entry, so the area
//! integral of the pointwise score is a finite sum. A seeded Monte Carlo
//! estimator is provided as an independent check.

use geo::{Area, BooleanOps};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ScoreError, ScoringPlan, UserConfig};
use crate::geom::{MultiPolygon, PlanarPoint, Polygon};
use crate::ingest::CategoryTaxonomy;
use crate::isochrone::Catchment;

pub const MONTE_CARLO_SEED: u64 = 0x5EED;
pub const MAX_CATCHMENTS_PER_CATEGORY: usize = 20;
pub const MAX_FACES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// A face of the arrangement: its area and the pooled count per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub area: f64,
    pub ks: Vec<u32>,
}

struct Resolved<'a> {
    entry: usize,
    shape: &'a MultiPolygon,
}

fn resolve<'a>(
    catchments: &'a [Catchment],
    taxonomy: &CategoryTaxonomy,
    plan_members: &[Vec<usize>],
) -> Result<Vec<Resolved<'a>>, ScoreError> {
    let mut entry_of = vec![None; taxonomy.len()];
    for (e, members) in plan_members.iter().enumerate() {
        for &m in members {
            entry_of[m] = Some(e);
        }
    }
    let mut per_category = vec![0usize; taxonomy.len()];
    let mut out = Vec::new();
    for c in catchments {
        let cat = taxonomy
            .index_of(&c.category)
            .ok_or_else(|| ScoreError::UnknownCategory {
                category: c.category.clone(),
            })?;
        per_category[cat] += 1;
        if per_category[cat] > MAX_CATCHMENTS_PER_CATEGORY {
            return Err(ScoreError::ComplexityGuard(format!(
                "more than {MAX_CATCHMENTS_PER_CATEGORY} catchments of category {}",
                c.category
            )));
        }
        if let Some(entry) = entry_of[cat] {
            out.push(Resolved {
                entry,
                shape: &c.shape,
            });
        }
    }
    Ok(out)
}

/// Faces of the arrangement of `shapes` restricted to `ward`. Each shape is
/// tagged with the entry whose count it increments.
pub fn arrangement(
    ward: &Polygon,
    shapes: &[(usize, &MultiPolygon)],
    n_entries: usize,
) -> Result<Vec<Face>, ScoreError> {
    let ward_geo = geo::MultiPolygon(vec![ward.to_geo()]);
    let sliver = ward.area() * 1e-14;
    let mut faces: Vec<(geo::MultiPolygon<f64>, Vec<u32>)> = vec![(ward_geo, vec![0; n_entries])];
    for &(entry, shape) in shapes {
        if entry >= n_entries {
            return Err(ScoreError::InvalidParameter(format!(
                "entry {entry} out of range"
            )));
        }
        let Some(sb) = shape.bbox() else { continue };
        if !sb.intersects(&ward.bbox()) {
            continue;
        }
        let s = shape.to_geo();
        let mut next = Vec::with_capacity(faces.len() * 2);
        for (region, ks) in faces {
            let inside = region.intersection(&s);
            if inside.unsigned_area() <= sliver {
                next.push((region, ks));
                continue;
            }
            let outside = region.difference(&s);
            let mut bumped = ks.clone();
            bumped[entry] += 1;
            next.push((inside, bumped));
            if outside.unsigned_area() > sliver {
                next.push((outside, ks));
            }
        }
        if next.len() > MAX_FACES {
            return Err(ScoreError::ComplexityGuard(format!(
                "arrangement exceeds {MAX_FACES} faces"
            )));
        }
        faces = next;
    }
    Ok(faces
        .into_iter()
        .map(|(r, ks)| Face {
            area: r.unsigned_area(),
            ks,
        })
        .collect())
}

/// Area of `ward` covered by exactly k of `shapes`, for k = 0..=shapes.len().
pub fn area_k_exact(ward: &Polygon, shapes: &[&MultiPolygon]) -> Result<Vec<f64>, ScoreError> {
    let tagged: Vec<_> = shapes.iter().map(|s| (0usize, *s)).collect();
    let mut out = vec![0.0; shapes.len() + 1];
    for f in arrangement(ward, &tagged, 1)? {
        out[f.ks[0] as usize] += f.area;
    }
    Ok(out)
}

/// Monte Carlo estimate of the same quantities as [`area_k_exact`], sampling
/// the ward bounding box uniformly.
pub fn area_k_monte_carlo(
    ward: &Polygon,
    shapes: &[&MultiPolygon],
    samples: usize,
    seed: u64,
) -> Vec<Estimate> {
    let bbox = ward.bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; shapes.len() + 1];
    for _ in 0..samples {
        let p = PlanarPoint::new(
            rng.random_range(bbox.min.x..bbox.max.x),
            rng.random_range(bbox.min.y..bbox.max.y),
        );
        if ward.contains_point(p) {
            hits[shapes.iter().filter(|s| s.contains_point(p)).count()] += 1;
        }
    }
    let n = samples as f64;
    hits.into_iter()
        .map(|h| {
            let p = h as f64 / n;
            Estimate {
                value: bbox.area() * p,
                std_error: bbox.area() * (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect()
}

fn members_of(config: &UserConfig, taxonomy: &CategoryTaxonomy) -> Vec<Vec<usize>> {
    config
        .entries
        .iter()
        .map(|e| {
            e.members
                .iter()
                .filter_map(|m| taxonomy.index_of(m))
                .collect()
        })
        .collect()
}

/// Area-weighted mean over `ward` of the pointwise score, computed exactly
/// from the catchment arrangement.
pub fn continuous_ward_score(
    ward: &Polygon,
    catchments: &[Catchment],
    taxonomy: &CategoryTaxonomy,
    config: &UserConfig,
) -> Result<f64, ScoreError> {
    let plan = ScoringPlan::compile(config, taxonomy)?;
    let members = members_of(config, taxonomy);
    let resolved = resolve(catchments, taxonomy, &members)?;
    let tagged: Vec<_> = resolved.iter().map(|r| (r.entry, r.shape)).collect();
    let faces = arrangement(ward, &tagged, members.len())?;
    let total: f64 = faces
        .iter()
        .map(|f| f.area * plan.score_entry_ks(&f.ks))
        .sum();
    Ok((total / ward.area()).clamp(0.0, 1.0))
}

/// Pointwise score at `p`, counting catchments that contain it.
pub fn continuous_point_score(
    p: PlanarPoint,
    catchments: &[Catchment],
    taxonomy: &CategoryTaxonomy,
    config: &UserConfig,
) -> Result<f64, ScoreError> {
    let plan = ScoringPlan::compile(config, taxonomy)?;
    let members = members_of(config, taxonomy);
    let resolved = resolve(catchments, taxonomy, &members)?;
    Ok(plan.score_entry_ks(&point_ks(p, &resolved, members.len())))
}

fn point_ks(p: PlanarPoint, resolved: &[Resolved<'_>], n: usize) -> Vec<u32> {
    let mut ks = vec![0u32; n];
    for r in resolved {
        if r.shape.bbox().is_some_and(|b| b.contains(p)) && r.shape.contains_point(p) {
            ks[r.entry] += 1;
        }
    }
    ks
}

/// Monte Carlo estimate of [`continuous_ward_score`] over `samples` points
/// drawn uniformly from the ward.
pub fn continuous_ward_score_monte_carlo(
    ward: &Polygon,
    catchments: &[Catchment],
    taxonomy: &CategoryTaxonomy,
    config: &UserConfig,
    samples: usize,
    seed: u64,
) -> Result<Estimate, ScoreError> {
    if samples < 2 {
        return Err(ScoreError::InvalidParameter(
            "need at least 2 samples".into(),
        ));
    }
    let plan = ScoringPlan::compile(config, taxonomy)?;
    let members = members_of(config, taxonomy);
    let resolved = resolve(catchments, taxonomy, &members)?;
    let bbox = ward.bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    while n < samples {
        let p = PlanarPoint::new(
            rng.random_range(bbox.min.x..bbox.max.x),
            rng.random_range(bbox.min.y..bbox.max.y),
        );
        if !ward.contains_point(p) {
            continue;
        }
        let s = plan.score_entry_ks(&point_ks(p, &resolved, members.len()));
        sum += s;
        sum_sq += s * s;
        n += 1;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean,
        std_error: (var / nf).sqrt(),
    })
}
