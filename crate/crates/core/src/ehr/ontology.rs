use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::DataError;

/// Three-level diagnosis-code hierarchy: unique (leaf) -> category -> typing.
/// Ids at each level are dense integers starting at 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub typing_count: usize,
    pub category_count: usize,
    pub unique_count: usize,
    /// `parent_of_unique[u]` is the category of unique code `u`.
    pub parent_of_unique: Vec<usize>,
    /// `parent_of_category[c]` is the typing of category `c`.
    pub parent_of_category: Vec<usize>,
}

impl Ontology {
    pub fn category_of(&self, unique: usize) -> usize {
        self.parent_of_unique[unique]
    }

    pub fn typing_of_category(&self, category: usize) -> usize {
        self.parent_of_category[category]
    }

    pub fn typing_of(&self, unique: usize) -> usize {
        self.typing_of_category(self.category_of(unique))
    }

    /// Sorted, deduplicated category set of a code set.
    pub fn categories_of(&self, codes: &[usize]) -> Vec<usize> {
        let mut cats: Vec<usize> = codes.iter().map(|&c| self.category_of(c)).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    /// Sorted, deduplicated typing set of a code set.
    pub fn typings_of(&self, codes: &[usize]) -> Vec<usize> {
        let mut ts: Vec<usize> = codes.iter().map(|&c| self.typing_of(c)).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Unique codes under each category, from the inverse parent map.
    pub fn children_of_categories(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.category_count];
        for (u, &c) in self.parent_of_unique.iter().enumerate() {
            out[c].push(u);
        }
        out
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.typing_count == 0
            || self.typing_count > self.category_count
            || self.category_count > self.unique_count
        {
            return Err(DataError::NonMonotoneOntology {
                typing: self.typing_count,
                category: self.category_count,
                unique: self.unique_count,
            });
        }
        let ok = self.parent_of_unique.len() == self.unique_count
            && self.parent_of_category.len() == self.category_count
            && self.parent_of_unique.iter().all(|&c| c < self.category_count)
            && self.parent_of_category.iter().all(|&t| t < self.typing_count);
        if !ok {
            return Err(DataError::InvalidConfig("ontology parent maps out of range".into()));
        }
        // no orphans: every category and typing has at least one child
        let mut cat_covered = vec![false; self.category_count];
        for &c in &self.parent_of_unique {
            cat_covered[c] = true;
        }
        let mut typ_covered = vec![false; self.typing_count];
        for &t in &self.parent_of_category {
            typ_covered[t] = true;
        }
        if !cat_covered.iter().all(|&b| b) || !typ_covered.iter().all(|&b| b) {
            return Err(DataError::InvalidConfig("ontology has childless levels".into()));
        }
        Ok(())
    }
}

/// Draw a uniformly-random valid tree: parent maps are uniform over the
/// surjective assignments, obtained by rejection.
pub fn build_ontology<R: Rng>(
    typing_count: usize,
    category_count: usize,
    unique_count: usize,
    rng: &mut R,
) -> Result<Ontology, DataError> {
    if typing_count == 0 || typing_count > category_count || category_count > unique_count {
        return Err(DataError::NonMonotoneOntology {
            typing: typing_count,
            category: category_count,
            unique: unique_count,
        });
    }
    let parent_of_unique = surjective_map(unique_count, category_count, rng);
    let parent_of_category = surjective_map(category_count, typing_count, rng);
    let onto = Ontology {
        typing_count,
        category_count,
        unique_count,
        parent_of_unique,
        parent_of_category,
    };
    debug_assert!(onto.validate().is_ok());
    Ok(onto)
}

/// Uniform random surjection {0..n} -> {0..m}, n >= m, by rejection. The miss
/// probability is tiny at the scales used here, but a deterministic repair
/// caps the loop regardless.
fn surjective_map<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(n >= m && m > 0);
    for _ in 0..10_000 {
        let map: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
        let mut seen = vec![false; m];
        for &v in &map {
            seen[v] = true;
        }
        if seen.iter().all(|&b| b) {
            return map;
        }
    }
    let mut map: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    let mut counts = vec![0usize; m];
    for &v in &map {
        counts[v] += 1;
    }
    for missing in 0..m {
        if counts[missing] > 0 {
            continue;
        }
        let donor = (0..n)
            .find(|&i| counts[map[i]] > 1)
            .expect("n >= m guarantees a donor");
        counts[map[donor]] -= 1;
        map[donor] = missing;
        counts[missing] += 1;
    }
    map
}
