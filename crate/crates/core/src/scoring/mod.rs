//! Real-time stage: exponential-decay scores under a user configuration.

mod config;
mod kernel;
pub mod oracle;

use thiserror::Error;

pub use config::{ConfigEntry, ConfigIssue, DecayPreset, Tier, UserConfig};
pub use kernel::{
    cell_score, decay, decay_value, entry_k, grid_surface, point_score, point_score_with, round6,
    ward_means, ward_scores, Granularity, PlanEntry, PointScore, ScoreSurface, ScoringPlan,
};
pub use oracle::{
    continuous_point_score, continuous_ward_score, continuous_ward_score_monte_carlo, Estimate,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("invalid config: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<ConfigIssue>),
    #[error("unknown category {category:?}")]
    UnknownCategory { category: String },
    #[error("taxonomy mismatch: expected {expected}, found {found}")]
    TaxonomyMismatch { expected: String, found: String },
    #[error("location ({lat}, {lon}) is outside the grid")]
    OutOfBounds { lat: f64, lon: f64 },
    #[error("instance too large for the exact oracle: {0}")]
    ComplexityGuard(String),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use proptest::prelude::*;

    use super::*;
    use crate::geom::Polygon;
    use crate::geom::{GridSpec, LatLon, PlanarPoint, Projection, Ward};
    use crate::ingest::CategoryTaxonomy;
    use crate::precompute::{KVectorStore, NO_WARD};

    fn tax() -> CategoryTaxonomy {
        CategoryTaxonomy::builtin()
    }

    fn counts(pairs: &[(&str, u32)]) -> Vec<u32> {
        let t = tax();
        let mut v = vec![0; t.len()];
        for &(c, k) in pairs {
            v[t.index_of(c).unwrap()] = k;
        }
        v
    }

    fn entry(members: &[&str], tier: Tier, decay: DecayPreset) -> ConfigEntry {
        ConfigEntry::new(members.iter().copied(), tier, decay)
    }

    /// A 1-row store with one count column set and everything else zero.
    fn row_store(category: &str, ks: &[u16], ward_of: &[u32], wards: &[&str]) -> KVectorStore {
        let t = tax();
        let n = ks.len();
        let grid = GridSpec {
            origin: PlanarPoint::new(0.0, 0.0),
            cell_size: 250.0,
            n_cols: n,
            n_rows: 1,
        };
        let mut cols = vec![vec![0u16; n]; t.len()];
        cols[t.index_of(category).unwrap()] = ks.to_vec();
        let wards = wards
            .iter()
            .enumerate()
            .map(|(i, w)| Ward::new(*w, Polygon::rect(i as f64, 0.0, i as f64 + 1.0, 1.0)))
            .collect();
        KVectorStore::from_columns(
            Projection::new(LatLon { lat: 0.0, lon: 0.0 }),
            grid,
            t,
            wards,
            ward_of.to_vec(),
            cols,
        )
        .unwrap()
    }

    #[test]
    fn presets() {
        assert_eq!(DecayPreset::Balanced.lambda(), LN_2);
        assert_eq!(DecayPreset::Expansive.lambda(), LN_2 / 2.0);
        assert_eq!(DecayPreset::Focused.lambda(), 2.0 * LN_2);
        assert_eq!(Tier::Preferred.weight(), 2.0);
        assert!(Tier::Required.is_gate() && Tier::Required.weight() == 1.0);
    }

    #[test]
    fn decay_table() {
        let b = DecayPreset::Balanced.lambda();
        assert!((decay_value(2, b) - 0.7499).abs() < 1e-3);
        assert!((decay_value(2, b) - 0.75).abs() < 1e-12);
        assert!((decay_value(4, b) - 0.9375).abs() < 1e-12);
        assert!((decay_value(2, DecayPreset::Expansive.lambda()) - 0.5).abs() < 1e-12);
        assert!((decay_value(2, DecayPreset::Focused.lambda()) - 0.9375).abs() < 1e-12);
        for p in DecayPreset::ALL {
            assert_eq!(decay_value(0, p.lambda()), 0.0);
            assert!((decay(p.half_life(), p.lambda()) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn entry_k_sums_members() {
        let t = tax();
        let k = counts(&[("restaurants", 2), ("cafes", 3)]);
        let e = entry(
            &["restaurants", "cafes", "fast_food"],
            Tier::Standard,
            DecayPreset::Balanced,
        );
        assert_eq!(entry_k(&k, &t, &e).unwrap(), 5);
        let e = entry(&["restaurants"], Tier::Standard, DecayPreset::Balanced);
        assert_eq!(entry_k(&counts(&[("restaurants", 4)]), &t, &e).unwrap(), 4);
        let e = entry(&["dragons"], Tier::Standard, DecayPreset::Balanced);
        assert!(matches!(
            entry_k(&k, &t, &e),
            Err(ScoreError::UnknownCategory { .. })
        ));
    }

    #[test]
    fn cell_score_examples() {
        let t = tax();
        let cfg = UserConfig::new(vec![entry(
            &["restaurants"],
            Tier::Standard,
            DecayPreset::Balanced,
        )]);
        assert!(
            (cell_score(&counts(&[("restaurants", 2)]), &t, &cfg).unwrap() - 0.75).abs() < 1e-12
        );

        let cfg = UserConfig::new(vec![
            entry(&["metro_stations"], Tier::Required, DecayPreset::Focused),
            entry(&["parks"], Tier::Standard, DecayPreset::Balanced),
        ]);
        assert_eq!(cell_score(&counts(&[("parks", 7)]), &t, &cfg).unwrap(), 0.0);

        let cfg = UserConfig::new(vec![
            entry(&["banks"], Tier::Standard, DecayPreset::Balanced),
            entry(&["atms"], Tier::Preferred, DecayPreset::Balanced),
        ]);
        let s = cell_score(&counts(&[("banks", 1)]), &t, &cfg).unwrap();
        assert!((s - 0.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn surfaces() {
        let store = row_store("parks", &[0, 1, 2, 3], &[0, 0, 1, NO_WARD], &["A", "B"]);
        let cfg = UserConfig::new(vec![entry(
            &["parks"],
            Tier::Standard,
            DecayPreset::Balanced,
        )]);
        let g = grid_surface(&store, &cfg).unwrap();
        let expect = [0.0, 0.5, 0.75, 0.875];
        for (v, e) in g.values().iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(g.get("3"), Some(g.values()[3]));
        let w = ward_scores(&store, &cfg).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w.get("A").unwrap() - 0.25).abs() < 1e-12);
        assert!((w.get("B").unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(w.fingerprint, cfg.fingerprint());
        let json = serde_json::to_string(&w).unwrap();
        assert!(json.contains(r#""scores":{"A":0.25,"B":0.75}"#), "{json}");
    }

    #[test]
    fn ward_mean_and_omitted_wards() {
        let store = row_store("parks", &[1, 1, 1, 1], &[0, 0, 0, 0], &["A", "Empty"]);
        let cfg = UserConfig::new(vec![entry(
            &["parks"],
            Tier::Standard,
            DecayPreset::Balanced,
        )]);
        let w = ward_scores(&store, &cfg).unwrap();
        assert_eq!(w.iter().map(|(id, _)| id).collect::<Vec<_>>(), ["A"]);
        let gated = UserConfig::new(vec![
            entry(&["parks"], Tier::Standard, DecayPreset::Balanced),
            entry(&["schools"], Tier::Required, DecayPreset::Balanced),
        ]);
        assert_eq!(ward_scores(&store, &gated).unwrap().get("A"), Some(0.0));
    }

    #[test]
    fn point_queries() {
        let store = row_store("restaurants", &[2, 0], &[0, 0], &["A"]);
        let cfg = UserConfig::new(vec![entry(
            &["restaurants"],
            Tier::Standard,
            DecayPreset::Balanced,
        )]);
        let at = |x: f64, y: f64| store.projection().inverse(PlanarPoint::new(x, y));
        let p = point_score(at(125.0, 125.0), &store, &cfg).unwrap();
        assert_eq!((p.cell, p.entry_k.as_slice()), (0, &[2][..]));
        assert!((p.score - 0.75).abs() < 1e-12);
        let q = point_score(at(10.0, 240.0), &store, &cfg).unwrap();
        assert_eq!(p.score, q.score);
        assert!(matches!(
            point_score(at(-10.0, 10.0), &store, &cfg),
            Err(ScoreError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn taxonomy_mismatch() {
        let store = row_store("parks", &[1], &[0], &["A"]);
        let other = CategoryTaxonomy::new(vec![crate::ingest::Category {
            id: "parks".into(),
            name: "Parks".into(),
        }])
        .unwrap();
        let cfg = UserConfig::new(vec![entry(
            &["parks"],
            Tier::Standard,
            DecayPreset::Balanced,
        )]);
        let plan = ScoringPlan::compile(&cfg, &other).unwrap();
        assert!(matches!(
            plan.grid_surface(&store),
            Err(ScoreError::TaxonomyMismatch { .. })
        ));
    }

    const N_CATS: usize = 6;

    fn small_tax() -> CategoryTaxonomy {
        CategoryTaxonomy::new(
            (0..N_CATS)
                .map(|i| crate::ingest::Category {
                    id: format!("c{i}"),
                    name: format!("C{i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    prop_compose! {
        fn arb_plan()(groups in proptest::sample::subsequence((0..N_CATS).collect::<Vec<_>>(), 1..=N_CATS)
                          .prop_flat_map(|cats| { let n = cats.len(); (Just(cats), proptest::collection::vec(0..n, n)) }),
                      params in proptest::collection::vec((0.01f64..10.0, 0.05f64..5.0, any::<bool>()), N_CATS))
            -> Vec<PlanEntry>
        {
            let (cats, bucket) = groups;
            let mut entries: Vec<PlanEntry> = Vec::new();
            let mut slot = vec![usize::MAX; N_CATS];
            for (c, b) in cats.into_iter().zip(bucket) {
                if slot[b] == usize::MAX {
                    let (w, l, g) = params[b];
                    slot[b] = entries.len();
                    entries.push(PlanEntry { members: vec![], weight: w, lambda: l, gate: g });
                }
                entries[slot[b]].members.push(c);
            }
            entries
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn bounded_and_gated(entries in arb_plan(), k in proptest::collection::vec(0u32..6, N_CATS)) {
            let plan = ScoringPlan::from_entries(entries.clone(), &small_tax()).unwrap();
            let s = plan.score_with(|c| k[c]);
            prop_assert!((0.0..=1.0).contains(&s));
            let gated = entries.iter().any(|e| e.gate && e.members.iter().map(|&m| k[m]).sum::<u32>() == 0);
            if gated {
                prop_assert_eq!(s, 0.0);
            }
        }

        #[test]
        fn weight_scale_invariance(entries in arb_plan(), k in proptest::collection::vec(0u32..8, N_CATS), c in 1e-3f64..1e3) {
            let t = small_tax();
            let base = ScoringPlan::from_entries(entries.clone(), &t).unwrap();
            let scaled = entries.into_iter().map(|e| PlanEntry { weight: e.weight * c, ..e }).collect();
            let scaled = ScoringPlan::from_entries(scaled, &t).unwrap();
            prop_assert!((base.score_with(|i| k[i]) - scaled.score_with(|i| k[i])).abs() <= 1e-12);
        }

        #[test]
        fn grouping_is_scalar_sum(k in proptest::collection::vec(0u32..1000, N_CATS), members in proptest::sample::subsequence((0..N_CATS).collect::<Vec<_>>(), 1..=N_CATS)) {
            let t = small_tax();
            let e = ConfigEntry::new(members.iter().map(|&m| format!("c{m}")), Tier::Standard, DecayPreset::Balanced);
            let expected: u32 = members.iter().map(|&m| k[m]).sum();
            prop_assert_eq!(entry_k(&k, &t, &e).unwrap(), expected);
            let plan = ScoringPlan::compile(&UserConfig::new(vec![e]), &t).unwrap();
            prop_assert_eq!(plan.score_with(|i| k[i]), decay_value(expected, LN_2));
        }

        #[test]
        fn diminishing_returns(k in 0u32..200) {
            for p in DecayPreset::ALL {
                let l = p.lambda();
                let d0 = decay_value(k + 1, l) - decay_value(k, l);
                let d1 = decay_value(k + 2, l) - decay_value(k + 1, l);
                // Past ~20 the increments of the steepest preset drop below one ulp.
                if k < 20 {
                    prop_assert!(d1 < d0);
                }
                prop_assert!(d0 >= 0.0 && decay_value(k, l) <= 1.0);
            }
        }

        #[test]
        fn monotone_in_ungated_counts(entries in arb_plan(), k in proptest::collection::vec(0u32..6, N_CATS), bump in 0usize..N_CATS) {
            let plan = ScoringPlan::from_entries(entries.clone(), &small_tax()).unwrap();
            let in_gate = entries.iter().any(|e| e.gate && e.members.contains(&bump));
            prop_assume!(!in_gate);
            let mut k2 = k.clone();
            k2[bump] += 1;
            prop_assert!(plan.score_with(|i| k2[i]) >= plan.score_with(|i| k[i]));
        }

        #[test]
        fn grouped_never_exceeds_separate(k1 in 0u16..10, k2 in 0u16..10) {
            let t = tax();
            let n = t.len();
            let mut cols = vec![vec![0u16; 1]; n];
            cols[t.index_of("cafes").unwrap()][0] = k1;
            cols[t.index_of("bars").unwrap()][0] = k2;
            let grid = GridSpec { origin: PlanarPoint::new(0.0, 0.0), cell_size: 1.0, n_cols: 1, n_rows: 1 };
            let store = KVectorStore::from_columns(Projection::new(LatLon { lat: 0.0, lon: 0.0 }), grid, t,
                vec![Ward::new("A", Polygon::rect(0.0, 0.0, 1.0, 1.0))], vec![0], cols).unwrap();
            for p in DecayPreset::ALL {
                let grouped = UserConfig::new(vec![entry(&["cafes", "bars"], Tier::Standard, p)]);
                let separate = UserConfig::new(vec![entry(&["cafes"], Tier::Standard, p), entry(&["bars"], Tier::Standard, p)]);
                let g = ward_scores(&store, &grouped).unwrap().get("A").unwrap();
                let s = ward_scores(&store, &separate).unwrap().get("A").unwrap();
                // Compare weighted numerators: total weight is 1 grouped, 2 separate.
                prop_assert!(g * 1.0 <= s * 2.0 + 1e-12, "{} > {}", g, 2.0 * s);
            }
        }
    }
}
