//! World collections, episode datasets and the synthetic benchmark layout.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{LangConfig, Vocabulary};
use crate::seed;
use crate::world::{generate_world, sample_episode, Episode, WorldConfig, WorldGraph};

/// Worlds addressed by their generation seed.
#[derive(Clone, Debug, Default)]
pub struct WorldSet {
    worlds: BTreeMap<u64, WorldGraph>,
}

impl WorldSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, w: WorldGraph) {
        self.worlds.insert(w.seed, w);
    }

    pub fn get(&self, seed: u64) -> Result<&WorldGraph> {
        self.worlds
            .get(&seed)
            .ok_or_else(|| Error::Data(format!("no world with seed {seed} loaded")))
    }

    pub fn len(&self) -> usize {
        self.worlds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worlds.is_empty()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.worlds.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorldGraph> {
        self.worlds.values()
    }

    /// Union of two sets; `other` wins on seed clashes.
    pub fn merged(&self, other: &WorldSet) -> WorldSet {
        let mut out = self.clone();
        for w in other.iter() {
            out.insert(w.clone());
        }
        out
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            kind: "jsonl",
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Parameters of a synthetic benchmark: training worlds, held-out worlds,
/// and how many episodes of each kind to draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub world: WorldConfig,
    /// Annotator behaviour in the training worlds.
    pub lang: LangConfig,
    /// Annotator behaviour in the held-out worlds.
    pub unseen_lang: LangConfig,
    pub train_worlds: usize,
    pub unseen_worlds: usize,
    pub train_episodes: usize,
    pub val_seen_episodes: usize,
    /// Episodes drawn in held-out worlds (evaluation and augmentation pool).
    pub unseen_episodes: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            lang: LangConfig::default(),
            unseen_lang: LangConfig {
                dialect_rate: 0.5,
                ..LangConfig::default()
            },
            train_worlds: 8,
            unseen_worlds: 2,
            train_episodes: 4000,
            val_seen_episodes: 300,
            unseen_episodes: 830,
            min_len: 3,
            max_len: 6,
        }
    }
}

/// Generated benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub vocab: Vocabulary,
    pub seen: WorldSet,
    pub unseen: WorldSet,
    pub train: Vec<Episode>,
    pub val_seen: Vec<Episode>,
    pub unseen_pool: Vec<Episode>,
}

impl Benchmark {
    pub fn all_worlds(&self) -> WorldSet {
        self.seen.merged(&self.unseen)
    }
}

pub fn train_world_seed(base: u64, i: usize) -> u64 {
    seed::derive(base, 10_000 + i as u64)
}

pub fn unseen_world_seed(base: u64, i: usize) -> u64 {
    seed::derive(base, 20_000 + i as u64)
}

/// Draws `n` episodes spread round-robin over `worlds`.
pub fn sample_episodes(
    worlds: &WorldSet,
    vocab: &Vocabulary,
    lang: &LangConfig,
    n: usize,
    len_range: (usize, usize),
    base_seed: u64,
) -> Result<Vec<Episode>> {
    let list: Vec<&WorldGraph> = worlds.iter().collect();
    if list.is_empty() {
        return Err(Error::Data("no worlds to sample episodes from".into()));
    }
    (0..n)
        .map(|i| {
            let w = list[i % list.len()];
            sample_episode(w, vocab, lang, seed::derive(base_seed, i as u64), len_range)
        })
        .collect()
}

pub fn generate_benchmark(config: &DataConfig, base_seed: u64) -> Result<Benchmark> {
    let vocab = Vocabulary::new(config.world.landmark_classes);
    let mut seen = WorldSet::new();
    for i in 0..config.train_worlds {
        seen.insert(generate_world(&config.world, train_world_seed(base_seed, i))?);
    }
    let mut unseen = WorldSet::new();
    for i in 0..config.unseen_worlds {
        unseen.insert(generate_world(&config.world, unseen_world_seed(base_seed, i))?);
    }
    let range = (config.min_len, config.max_len);
    let train = sample_episodes(
        &seen,
        &vocab,
        &config.lang,
        config.train_episodes,
        range,
        seed::derive(base_seed, 1),
    )?;
    let val_seen = sample_episodes(
        &seen,
        &vocab,
        &config.lang,
        config.val_seen_episodes,
        range,
        seed::derive(base_seed, 2),
    )?;
    let unseen_pool = sample_episodes(
        &unseen,
        &vocab,
        &config.unseen_lang,
        config.unseen_episodes,
        range,
        seed::derive(base_seed, 3),
    )?;
    Ok(Benchmark {
        vocab,
        seen,
        unseen,
        train,
        val_seen,
        unseen_pool,
    })
}

/// One line of a dataset dump: the episode plus its decoded tokens.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub episode: Episode,
    pub token_ids: Vec<usize>,
}

pub fn write_dataset(path: &Path, episodes: &[Episode]) -> Result<()> {
    let recs: Vec<DatasetRecord> = episodes
        .iter()
        .map(|e| DatasetRecord {
            episode: e.clone(),
            token_ids: e.instruction.token_ids.clone(),
        })
        .collect();
    write_jsonl(path, &recs)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Episode>> {
    Ok(read_jsonl::<DatasetRecord>(path)?
        .into_iter()
        .map(|r| r.episode)
        .collect())
}
