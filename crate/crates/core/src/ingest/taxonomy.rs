use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IngestError;

const DEFAULT_TAXONOMY: &str = include_str!("../../data/default_taxonomy.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    pub name: String,
}

/// Ordered registry of amenity category identifiers.
///
/// The order fixes the column layout of a k-vector store, and the hash of the
/// identifier list is what stores and clients compare to detect drift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryTaxonomy {
    categories: Vec<Category>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl CategoryTaxonomy {
    pub fn new(categories: Vec<Category>) -> Result<Self, IngestError> {
        if categories.is_empty() {
            return Err(IngestError::Taxonomy("taxonomy has no categories".into()));
        }
        let mut index = HashMap::with_capacity(categories.len());
        for (i, c) in categories.iter().enumerate() {
            let well_formed = !c.id.is_empty()
                && c.id
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
            if !well_formed {
                return Err(IngestError::Taxonomy(format!(
                    "category id {:?} must be lowercase [a-z0-9_]+",
                    c.id
                )));
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(IngestError::Taxonomy(format!(
                    "duplicate category id {:?}",
                    c.id
                )));
            }
        }
        Ok(Self { categories, index })
    }

    /// The built-in 45-category taxonomy.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TAXONOMY.as_bytes()).expect("bundled taxonomy is valid")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, IngestError> {
        #[derive(Deserialize)]
        struct File {
            categories: Vec<Category>,
        }
        let f: File =
            serde_json::from_slice(bytes).map_err(|e| IngestError::Taxonomy(e.to_string()))?;
        Self::new(f.categories)
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let bytes = std::fs::read(path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&bytes)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Hex SHA-256 over the newline-joined identifiers (display names excluded).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.categories {
            h.update(c.id.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

impl<'de> Deserialize<'de> for CategoryTaxonomy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            categories: Vec<Category>,
        }
        let raw = Raw::deserialize(d)?;
        Self::new(raw.categories).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_45_unique_categories() {
        let t = CategoryTaxonomy::builtin();
        assert_eq!(t.len(), 45);
        for id in [
            "restaurants",
            "fast_food",
            "cafes",
            "metro_stations",
            "general_stores",
            "dry_cleaning",
            "fabric_stores",
        ] {
            assert!(t.contains(id), "{id}");
        }
    }

    #[test]
    fn hash_is_stable_and_order_sensitive() {
        let a = CategoryTaxonomy::new(vec![
            Category {
                id: "a".into(),
                name: "A".into(),
            },
            Category {
                id: "b".into(),
                name: "B".into(),
            },
        ])
        .unwrap();
        let renamed = CategoryTaxonomy::new(vec![
            Category {
                id: "a".into(),
                name: "Alpha".into(),
            },
            Category {
                id: "b".into(),
                name: "B".into(),
            },
        ])
        .unwrap();
        let swapped = CategoryTaxonomy::new(vec![
            Category {
                id: "b".into(),
                name: "B".into(),
            },
            Category {
                id: "a".into(),
                name: "A".into(),
            },
        ])
        .unwrap();
        assert_eq!(a.hash(), renamed.hash());
        assert_ne!(a.hash(), swapped.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_ids() {
        let cat = |id: &str| Category {
            id: id.into(),
            name: id.into(),
        };
        assert!(CategoryTaxonomy::new(vec![cat("Parks")]).is_err());
        assert!(CategoryTaxonomy::new(vec![cat("parks"), cat("parks")]).is_err());
        assert!(CategoryTaxonomy::new(vec![]).is_err());
    }
}
