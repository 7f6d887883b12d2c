use rayon::prelude::*;
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

use super::{ConfigEntry, ScoreError, UserConfig};
use crate::geom::{LatLon, WardId};
use crate::ingest::CategoryTaxonomy;
use crate::precompute::KVectorStore;

/// `1 - exp(-lambda * k)`.
pub fn decay_value(k: u32, lambda: f64) -> f64 {
    decay(k as f64, lambda)
}

/// Real-valued form of [`decay_value`].
pub fn decay(k: f64, lambda: f64) -> f64 {
    -(-lambda * k).exp_m1()
}

/// Pooled count of an entry's members. `counts` is indexed by `taxonomy`.
pub fn entry_k(
    counts: &[u32],
    taxonomy: &CategoryTaxonomy,
    entry: &ConfigEntry,
) -> Result<u32, ScoreError> {
    entry.members.iter().try_fold(0u32, |acc, m| {
        let i = taxonomy
            .index_of(m)
            .ok_or_else(|| ScoreError::UnknownCategory {
                category: m.clone(),
            })?;
        Ok(acc.saturating_add(counts[i]))
    })
}

/// Score of one k-vector under `config`.
pub fn cell_score(
    counts: &[u32],
    taxonomy: &CategoryTaxonomy,
    config: &UserConfig,
) -> Result<f64, ScoreError> {
    let plan = ScoringPlan::compile(config, taxonomy)?;
    Ok(plan.score_with(|cat| counts[cat]))
}

/// A compiled scoring term: member column indices, weight, rate, gate.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub members: Vec<usize>,
    pub weight: f64,
    pub lambda: f64,
    pub gate: bool,
}

const TABLE_LEN: usize = 256;

#[derive(Debug, Clone)]
struct Term {
    members: Vec<usize>,
    weight: f64,
    lambda: f64,
    gate: bool,
    table: Vec<f64>,
}

impl Term {
    #[inline]
    fn decay(&self, k: u32) -> f64 {
        match self.table.get(k as usize) {
            Some(&d) => d,
            None => decay_value(k, self.lambda),
        }
    }
}

/// Config resolved against a taxonomy, ready to evaluate many cells.
#[derive(Debug, Clone)]
pub struct ScoringPlan {
    terms: Vec<Term>,
    total_weight: f64,
    taxonomy_hash: String,
    fingerprint: String,
}

impl ScoringPlan {
    pub fn compile(config: &UserConfig, taxonomy: &CategoryTaxonomy) -> Result<Self, ScoreError> {
        config.validate_against(taxonomy)?;
        let entries = config
            .entries
            .iter()
            .map(|e| PlanEntry {
                members: e
                    .members
                    .iter()
                    .map(|m| taxonomy.index_of(m).expect("validated"))
                    .collect(),
                weight: e.tier.weight(),
                lambda: e.decay.lambda(),
                gate: e.tier.is_gate(),
            })
            .collect();
        let mut plan = Self::from_entries(entries, taxonomy)?;
        plan.fingerprint = config.fingerprint();
        Ok(plan)
    }

    /// Builds a plan with arbitrary positive weights and rates.
    pub fn from_entries(
        entries: Vec<PlanEntry>,
        taxonomy: &CategoryTaxonomy,
    ) -> Result<Self, ScoreError> {
        if entries.is_empty() {
            return Err(ScoreError::InvalidParameter(
                "plan needs at least one entry".into(),
            ));
        }
        let mut terms = Vec::with_capacity(entries.len());
        for e in entries {
            if !(e.weight > 0.0 && e.weight.is_finite())
                || !(e.lambda > 0.0 && e.lambda.is_finite())
            {
                return Err(ScoreError::InvalidParameter(format!(
                    "weight {} and lambda {} must be positive",
                    e.weight, e.lambda
                )));
            }
            if e.members.is_empty() || e.members.iter().any(|&m| m >= taxonomy.len()) {
                return Err(ScoreError::InvalidParameter(
                    "entry members must be taxonomy indices".into(),
                ));
            }
            let table = (0..TABLE_LEN as u32)
                .map(|k| decay_value(k, e.lambda))
                .collect();
            terms.push(Term {
                members: e.members,
                weight: e.weight,
                lambda: e.lambda,
                gate: e.gate,
                table,
            });
        }
        let total_weight = terms.iter().map(|t| t.weight).sum();
        Ok(Self {
            terms,
            total_weight,
            taxonomy_hash: taxonomy.hash(),
            fingerprint: String::new(),
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn taxonomy_hash(&self) -> &str {
        &self.taxonomy_hash
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Pooled count per entry, given a count lookup by category index.
    pub fn entry_ks(&self, count: impl Fn(usize) -> u32) -> Vec<u32> {
        self.terms
            .iter()
            .map(|t| {
                t.members
                    .iter()
                    .fold(0u32, |a, &m| a.saturating_add(count(m)))
            })
            .collect()
    }

    /// Score from pooled per-entry counts.
    pub fn score_entry_ks(&self, ks: &[u32]) -> f64 {
        let mut num = 0.0;
        for (t, &k) in self.terms.iter().zip(ks) {
            if t.gate && k == 0 {
                return 0.0;
            }
            num += t.weight * t.decay(k);
        }
        (num / self.total_weight).clamp(0.0, 1.0)
    }

    pub fn score_with(&self, count: impl Fn(usize) -> u32) -> f64 {
        self.score_entry_ks(&self.entry_ks(count))
    }

    fn check_store(&self, store: &KVectorStore) -> Result<(), ScoreError> {
        if store.taxonomy_hash() != self.taxonomy_hash {
            return Err(ScoreError::TaxonomyMismatch {
                expected: self.taxonomy_hash.clone(),
                found: store.taxonomy_hash().to_owned(),
            });
        }
        Ok(())
    }

    /// Score of every cell, in cell id order.
    pub fn cell_scores(&self, store: &KVectorStore) -> Result<Vec<f64>, ScoreError> {
        self.check_store(store)?;
        let columns: Vec<Vec<&[u16]>> = self
            .terms
            .iter()
            .map(|t| t.members.iter().map(|&m| store.column(m)).collect())
            .collect();
        let mut out = vec![0.0; store.n_cells()];
        out.par_chunks_mut(4096)
            .enumerate()
            .for_each(|(chunk, slots)| {
                let base = chunk * 4096;
                for (off, slot) in slots.iter_mut().enumerate() {
                    let cell = base + off;
                    let mut num = 0.0;
                    let mut gated = false;
                    for (t, cols) in self.terms.iter().zip(&columns) {
                        let k: u32 = cols.iter().map(|c| c[cell] as u32).sum();
                        if t.gate && k == 0 {
                            gated = true;
                            break;
                        }
                        num += t.weight * t.decay(k);
                    }
                    *slot = if gated {
                        0.0
                    } else {
                        (num / self.total_weight).clamp(0.0, 1.0)
                    };
                }
            });
        Ok(out)
    }

    pub fn grid_surface(&self, store: &KVectorStore) -> Result<ScoreSurface, ScoreError> {
        let scores = self.cell_scores(store)?;
        Ok(ScoreSurface {
            granularity: Granularity::Grid,
            fingerprint: self.fingerprint.clone(),
            ids: (0..scores.len()).map(|i| i.to_string()).collect(),
            values: scores,
        })
    }

    pub fn ward_surface(&self, store: &KVectorStore) -> Result<ScoreSurface, ScoreError> {
        let scores = self.cell_scores(store)?;
        let (ids, values) = ward_means(store, &scores)
            .into_iter()
            .map(|(w, v)| (w.0.clone(), v))
            .unzip();
        Ok(ScoreSurface {
            granularity: Granularity::Ward,
            fingerprint: self.fingerprint.clone(),
            ids,
            values,
        })
    }

    pub fn point(&self, store: &KVectorStore, cell: usize) -> Result<(f64, Vec<u32>), ScoreError> {
        self.check_store(store)?;
        let ks = self.entry_ks(|m| store.count(cell, m));
        Ok((self.score_entry_ks(&ks), ks))
    }
}

/// Mean of `cell_scores` over the cells of each ward, in ward id order.
/// Wards without cells are omitted.
pub fn ward_means<'a>(store: &'a KVectorStore, cell_scores: &[f64]) -> Vec<(&'a WardId, f64)> {
    let n_wards = store.wards().len();
    let mut sum = vec![0.0; n_wards];
    let mut count = vec![0usize; n_wards];
    for (cell, &s) in cell_scores.iter().enumerate() {
        if let Some(w) = store.ward_index(cell) {
            sum[w] += s;
            count[w] += 1;
        }
    }
    store
        .wards()
        .iter()
        .enumerate()
        .filter(|&(w, _)| count[w] > 0)
        .map(|(w, ward)| (&ward.id, sum[w] / count[w] as f64))
        .collect()
}

pub fn grid_surface(store: &KVectorStore, config: &UserConfig) -> Result<ScoreSurface, ScoreError> {
    ScoringPlan::compile(config, store.taxonomy())?.grid_surface(store)
}

pub fn ward_scores(store: &KVectorStore, config: &UserConfig) -> Result<ScoreSurface, ScoreError> {
    ScoringPlan::compile(config, store.taxonomy())?.ward_surface(store)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointScore {
    pub cell: usize,
    pub score: f64,
    /// Pooled count per config entry, in entry order.
    pub entry_k: Vec<u32>,
    pub ward: Option<WardId>,
}

pub fn point_score(
    location: LatLon,
    store: &KVectorStore,
    config: &UserConfig,
) -> Result<PointScore, ScoreError> {
    let plan = ScoringPlan::compile(config, store.taxonomy())?;
    point_score_with(&plan, location, store)
}

pub fn point_score_with(
    plan: &ScoringPlan,
    location: LatLon,
    store: &KVectorStore,
) -> Result<PointScore, ScoreError> {
    let p = store.projection().forward(location);
    let cell = store.grid().cell_at(p).ok_or(ScoreError::OutOfBounds {
        lat: location.lat,
        lon: location.lon,
    })?;
    let (score, entry_k) = plan.point(store, cell)?;
    Ok(PointScore {
        cell,
        score,
        entry_k,
        ward: store.ward_of(cell).cloned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Grid,
    #[default]
    Ward,
}

/// Scores keyed by cell id (decimal) or ward id, in a stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSurface {
    pub granularity: Granularity,
    pub fingerprint: String,
    ids: Vec<String>,
    values: Vec<f64>,
}

impl ScoreSurface {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        match self.granularity {
            Granularity::Grid => id
                .parse::<usize>()
                .ok()
                .filter(|&i| self.ids.get(i).is_some_and(|s| s == id))
                .map(|i| self.values[i]),
            Granularity::Ward => self
                .ids
                .binary_search_by(|s| s.as_str().cmp(id))
                .ok()
                .map(|i| self.values[i]),
        }
    }

    /// Keeps only entries whose id satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        let (ids, values) = self
            .ids
            .drain(..)
            .zip(self.values.drain(..))
            .filter(|(id, _)| keep(id))
            .unzip();
        self.ids = ids;
        self.values = values;
    }
}

/// Rounds to 6 decimal places, the precision used for serialized scores.
pub fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

struct Scores<'a>(&'a ScoreSurface);

impl Serialize for Scores<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (id, v) in self.0.iter() {
            m.serialize_entry(id, &round6(v))?;
        }
        m.end()
    }
}

impl Serialize for ScoreSurface {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ScoreSurface", 3)?;
        st.serialize_field("granularity", &self.granularity)?;
        st.serialize_field("fingerprint", &self.fingerprint)?;
        st.serialize_field("scores", &Scores(self))?;
        st.end()
    }
}
