use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::backbone::VocabSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub items: usize,
    pub categories: usize,
    pub intents: usize,
    pub sessions: usize,
    /// Probabilities of 1, 2, 3, ... bundles per session.
    pub bundles_per_session: Vec<f64>,
    /// Probabilities of bundle sizes 2, 3, 4, ...
    pub bundle_size: Vec<f64>,
    pub pool_size: usize,
    /// Fraction of session items that belong to no bundle.
    pub distractor_rate: f64,
    /// Probability that an intent pool spans two categories instead of one.
    pub two_category_rate: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            items: 120,
            categories: 8,
            intents: 24,
            sessions: 1150,
            bundles_per_session: vec![0.55, 0.37, 0.08],
            bundle_size: vec![0.2, 0.3, 0.3, 0.2],
            pool_size: 7,
            distractor_rate: 0.25,
            two_category_rate: 0.5,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn max_bundles(&self) -> usize {
        self.bundles_per_session.len()
    }

    pub fn max_bundle_size(&self) -> usize {
        self.bundle_size.len() + 1
    }

    pub fn mean_bundle_size(&self) -> f64 {
        let total: f64 = self.bundle_size.iter().sum();
        self.bundle_size.iter().enumerate().map(|(i, p)| (i + 2) as f64 * p).sum::<f64>() / total
    }

    /// Two fixed rules plus one per unordered category pair.
    pub fn rule_count(&self) -> usize {
        2 + self.categories * self.categories.saturating_sub(1) / 2
    }

    pub fn vocab_spec(&self) -> VocabSpec {
        VocabSpec {
            items: self.items,
            categories: self.categories,
            intents: self.intents,
            rules: self.rule_count(),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.items == 0 || self.categories == 0 || self.intents == 0 || self.sessions == 0 {
            return bad("counts must be positive");
        }
        if self.intents < self.categories {
            return bad("need at least one intent per category");
        }
        if self.items < self.categories {
            return bad("need at least one item per category");
        }
        for (name, dist) in [("bundles_per_session", &self.bundles_per_session), ("bundle_size", &self.bundle_size)] {
            let total: f64 = dist.iter().sum();
            if dist.is_empty() || dist.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(WorldError::Config(format!("{name} must be a normalized distribution")));
            }
        }
        if self.max_bundles() > self.intents {
            return bad("more bundles per session than intents");
        }
        if self.pool_size < self.max_bundle_size() {
            return Err(WorldError::Config(format!(
                "intent pool size {} is smaller than the maximum bundle size {}",
                self.pool_size,
                self.max_bundle_size()
            )));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) || !(0.0..=1.0).contains(&self.two_category_rate) {
            return bad("rates must lie in [0, 1)");
        }
        if self.categories < 2 && self.two_category_rate > 0.0 {
            return bad("two-category pools need at least two categories");
        }
        Ok(())
    }

    /// Index of the compatibility rule for the unordered pair `a < b`.
    pub fn pair_rule(&self, a: usize, b: usize) -> usize {
        let (a, b) = (a.min(b), a.max(b));
        let c = self.categories;
        // Pairs enumerated lexicographically: (0,1), (0,2), ..., (1,2), ...
        2 + a * c - a * (a + 1) / 2 + (b - a - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub title: Vec<String>,
    pub category: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentPool {
    pub intent: usize,
    pub categories: Vec<usize>,
    /// Ascending item ids.
    pub items: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub items: Vec<Item>,
    pub pools: Vec<IntentPool>,
}

impl World {
    /// Category pairs that share at least one intent pool, ascending.
    pub fn compatible_pairs(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .pools
            .iter()
            .filter(|p| p.categories.len() == 2)
            .map(|p| (p.categories[0].min(p.categories[1]), p.categories[0].max(p.categories[1])))
            .collect();
        set.into_iter().collect()
    }

    pub fn in_pool(&self, intent: usize, item: usize) -> bool {
        self.pools[intent].items.binary_search(&item).is_ok()
    }
}

const TITLE_WORDS: [&str; 12] = [
    "basic", "pro", "mini", "max", "classic", "lite", "plus", "ultra", "prime", "eco", "smart", "core",
];

pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<Item> = (0..config.items)
        .map(|id| {
            let category = id % config.categories;
            let word = TITLE_WORDS[rng.gen_range(0..TITLE_WORDS.len())];
            Item {
                id,
                title: vec![format!("cat{category}"), word.to_string(), format!("m{id}")],
                category,
            }
        })
        .collect();
    let by_category: Vec<Vec<usize>> = (0..config.categories)
        .map(|c| items.iter().filter(|i| i.category == c).map(|i| i.id).collect())
        .collect();

    let mut pools = Vec::with_capacity(config.intents);
    for intent in 0..config.intents {
        let primary = intent % config.categories;
        let mut categories = vec![primary];
        if rng.gen_bool(config.two_category_rate) {
            let mut other = rng.gen_range(0..config.categories - 1);
            if other >= primary {
                other += 1;
            }
            categories.push(other);
            categories.sort_unstable();
        }
        let candidates: Vec<usize> = categories.iter().flat_map(|&c| by_category[c].iter().copied()).collect();
        if candidates.len() < config.max_bundle_size() {
            return Err(WorldError::Config(format!(
                "intent {intent} can draw from only {} items",
                candidates.len()
            )));
        }
        let take = config.pool_size.min(candidates.len());
        let mut chosen: Vec<usize> = candidates.choose_multiple(&mut rng, take).copied().collect();
        chosen.sort_unstable();
        pools.push(IntentPool { intent, categories, items: chosen });
    }

    // Every item joins at least one pool that already spans its category.
    for item in &items {
        if pools.iter().any(|p| p.items.binary_search(&item.id).is_ok()) {
            continue;
        }
        let hosts: Vec<usize> = pools
            .iter()
            .filter(|p| p.categories.contains(&item.category))
            .map(|p| p.intent)
            .collect();
        let host = hosts[rng.gen_range(0..hosts.len())];
        let pool = &mut pools[host].items;
        let at = pool.binary_search(&item.id).unwrap_err();
        pool.insert(at, item.id);
    }

    Ok(World { config: config.clone(), items, pools })
}
