use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{World, WorldConfig, WorldError};

/// Ascending item ids of one ground-truth bundle.
pub type Bundle = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionItem {
    pub id: usize,
    pub title: Vec<String>,
    pub category: usize,
}

/// One line of `sessions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: u64,
    pub ts: u64,
    pub items: Vec<SessionItem>,
    pub bundles: Vec<Bundle>,
    pub intents: Vec<usize>,
}

impl Session {
    pub fn contains(&self, item: usize) -> bool {
        self.items.iter().any(|i| i.id == item)
    }

    pub fn item_ids(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.id).collect()
    }
}

const MAX_ATTEMPTS: usize = 500;

pub fn generate_sessions(world: &World, config: &WorldConfig, seed: u64) -> Result<Vec<Session>, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count_dist = WeightedIndex::new(&config.bundles_per_session).map_err(|e| WorldError::Config(e.to_string()))?;
    let size_dist = WeightedIndex::new(&config.bundle_size).map_err(|e| WorldError::Config(e.to_string()))?;
    let all_intents: Vec<usize> = (0..world.pools.len()).collect();

    let mut sessions = Vec::with_capacity(config.sessions);
    let mut ts = 0u64;
    for session_id in 0..config.sessions as u64 {
        let m = count_dist.sample(&mut rng) + 1;
        let mut planted = None;
        for _ in 0..MAX_ATTEMPTS {
            if let Some(p) = plant(world, &all_intents, m, &size_dist, &mut rng) {
                planted = Some(p);
                break;
            }
        }
        let (mut intents, bundles) = planted.ok_or_else(|| {
            WorldError::Config(format!("could not plant {m} disjoint bundles; pools overlap too much"))
        })?;

        let forbidden: BTreeSet<usize> = intents.iter().flat_map(|&k| world.pools[k].items.iter().copied()).collect();
        let bundled: usize = bundles.iter().map(Vec::len).sum();
        let expected = bundled as f64 * config.distractor_rate / (1.0 - config.distractor_rate);
        let mut n_distractors = expected.floor() as usize;
        if rng.gen_bool(expected.fract()) {
            n_distractors += 1;
        }
        let outside: Vec<usize> = (0..world.items.len()).filter(|i| !forbidden.contains(i)).collect();
        let distractors: Vec<usize> = outside
            .choose_multiple(&mut rng, n_distractors.min(outside.len()))
            .copied()
            .collect();

        let mut ids: Vec<usize> = bundles.iter().flatten().copied().chain(distractors).collect();
        ids.shuffle(&mut rng);
        let items = ids
            .into_iter()
            .map(|id| {
                let item = &world.items[id];
                SessionItem { id, title: item.title.clone(), category: item.category }
            })
            .collect();

        let mut order: Vec<usize> = (0..intents.len()).collect();
        order.sort_by_key(|&i| intents[i]);
        let bundles = order.iter().map(|&i| bundles[i].clone()).collect();
        intents.sort_unstable();
        ts += rng.gen_range(1..=5);
        sessions.push(Session { session_id, ts, items, bundles, intents });
    }
    Ok(sessions)
}

/// Chooses `m` intents and a bundle per intent using only items exclusive to
/// that intent among the chosen pools, so the intents determine the partition.
fn plant(
    world: &World,
    all_intents: &[usize],
    m: usize,
    size_dist: &WeightedIndex<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<Bundle>)> {
    let intents: Vec<usize> = all_intents.choose_multiple(rng, m).copied().collect();
    let mut bundles = Vec::with_capacity(m);
    for &k in &intents {
        let exclusive: Vec<usize> = world.pools[k]
            .items
            .iter()
            .copied()
            .filter(|&item| intents.iter().all(|&j| j == k || !world.in_pool(j, item)))
            .collect();
        let size = size_dist.sample(rng) + 2;
        if exclusive.len() < size {
            return None;
        }
        let mut bundle: Vec<usize> = exclusive.choose_multiple(rng, size).copied().collect();
        bundle.sort_unstable();
        bundles.push(bundle);
    }
    Some((intents, bundles))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Session>,
    pub val: Vec<Session>,
    pub test: Vec<Session>,
}

/// Timestamp-ordered 7:1:2 split; boundaries are floored and the remainder
/// goes to test.
pub fn split_chronological(sessions: &[Session]) -> Result<Splits, WorldError> {
    let n = sessions.len();
    if n < 10 {
        return Err(WorldError::TooFewSessions(n));
    }
    let mut sorted = sessions.to_vec();
    sorted.sort_by_key(|s| (s.ts, s.session_id));
    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    Ok(Splits { train: sorted, val, test })
}

pub fn write_sessions_jsonl(path: &Path, sessions: &[Session]) -> Result<(), WorldError> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in sessions {
        serde_json::to_writer(&mut out, s).map_err(|e| WorldError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sessions_jsonl(path: &Path) -> Result<Vec<Session>, WorldError> {
    let reader = BufReader::new(File::open(path)?);
    let mut sessions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let session: Session = serde_json::from_str(&line).map_err(|e| WorldError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if session.bundles.iter().any(|b| b.len() < 2) {
            return Err(WorldError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "bundle with fewer than two items".into(),
            });
        }
        sessions.push(session);
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::generate_world;

    fn default_sessions() -> (World, Vec<Session>) {
        let cfg = WorldConfig::default();
        let world = generate_world(&cfg, 5).unwrap();
        let sessions = generate_sessions(&world, &cfg, 6).unwrap();
        (world, sessions)
    }

    #[test]
    fn bundles_are_disjoint_and_large_enough() {
        let (_, sessions) = default_sessions();
        for s in &sessions {
            assert!(!s.bundles.is_empty());
            let mut seen = BTreeSet::new();
            for b in &s.bundles {
                assert!(b.len() >= 2);
                for &i in b {
                    assert!(seen.insert(i), "overlapping bundles in session {}", s.session_id);
                    assert!(s.contains(i));
                }
            }
        }
    }

    #[test]
    fn mean_bundle_size_near_target() {
        let (_, sessions) = default_sessions();
        assert!(sessions.len() >= 1000);
        let sizes: Vec<usize> = sessions.iter().flat_map(|s| s.bundles.iter().map(Vec::len)).collect();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        assert!((mean - 3.5).abs() <= 0.3, "mean bundle size {mean}");
    }

    #[test]
    fn intents_recover_the_partition() {
        // Independent oracle: for each intent, the session items in its pool.
        let (world, sessions) = default_sessions();
        for s in &sessions {
            let mut recovered: Vec<Vec<usize>> = s
                .intents
                .iter()
                .map(|&k| {
                    let mut b: Vec<usize> = s.item_ids().into_iter().filter(|&i| world.in_pool(k, i)).collect();
                    b.sort_unstable();
                    b
                })
                .collect();
            recovered.sort();
            let mut truth = s.bundles.clone();
            truth.sort();
            assert_eq!(recovered, truth, "session {}", s.session_id);
        }
    }

    #[test]
    fn split_sizes() {
        let (_, sessions) = default_sessions();
        let s = split_chronological(&sessions).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (805, 115, 230));
        let max_train = s.train.iter().map(|x| x.ts).max().unwrap();
        let min_val = s.val.iter().map(|x| x.ts).min().unwrap();
        let max_val = s.val.iter().map(|x| x.ts).max().unwrap();
        let min_test = s.test.iter().map(|x| x.ts).min().unwrap();
        assert!(max_train <= min_val && max_val <= min_test);

        let s = split_chronological(&sessions[..10]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert!(matches!(split_chronological(&sessions[..9]), Err(WorldError::TooFewSessions(9))));
    }

    #[test]
    fn jsonl_round_trip() {
        let (_, sessions) = default_sessions();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        write_sessions_jsonl(&path, &sessions[..20]).unwrap();
        assert_eq!(read_sessions_jsonl(&path).unwrap(), sessions[..20].to_vec());
        let line = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["session_id", "ts", "items", "bundles", "intents"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }
}
