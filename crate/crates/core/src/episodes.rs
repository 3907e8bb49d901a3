//! C-way K-shot episode construction and class splits.
//!
//! Every episode draws from its own random stream: ChaCha8 keyed by
//! `seed_from_u64(seed)` with the ChaCha stream id set to the episode index.
//! Episode `t` is therefore the same no matter how many workers evaluate the
//! sequence or in which order.

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorSet, LabeledDataset};
use crate::error::{Error, Result};

/// Random stream type used for episode sampling.
pub type EpisodeRng = ChaCha8Rng;

/// Default queries per class.
pub const DEFAULT_QUERIES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

impl EpisodeSpec {
    pub fn new(ways: usize, shots: usize, queries: usize) -> Result<Self> {
        let spec = EpisodeSpec {
            ways,
            shots,
            queries,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.shots == 0 || self.queries == 0 {
            return Err(Error::InvalidSpec(
                "ways, shots and queries must be positive",
            ));
        }
        Ok(())
    }

    pub fn images_per_class(&self) -> usize {
        self.shots + self.queries
    }
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            ways: 5,
            shots: 1,
            queries: DEFAULT_QUERIES,
        }
    }
}

/// Disjoint train / validation / test class-id lists.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitSpec {
    /// First `train` classes of the dataset go to training, the next `val` to
    /// validation, the rest to test.
    pub fn by_counts(dataset: &LabeledDataset, train: usize, val: usize) -> Result<Self> {
        let ids: Vec<u32> = dataset.class_ids().collect();
        if train + val > ids.len() {
            return Err(Error::InvalidSpec("split counts exceed the class count"));
        }
        Ok(SplitSpec {
            train: ids[..train].to_vec(),
            val: ids[train..train + val].to_vec(),
            test: ids[train + val..].to_vec(),
        })
    }

    pub fn role(&self, role: SplitRole) -> &[u32] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Val => &self.val,
            SplitRole::Test => &self.test,
        }
    }

    /// Pairwise disjoint lists whose ids all exist in `dataset`.
    pub fn validate(&self, dataset: &LabeledDataset) -> Result<()> {
        let all: Vec<u32> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .copied()
            .collect();
        for (i, id) in all.iter().enumerate() {
            if all[..i].contains(id) {
                return Err(Error::InvalidSpec(
                    "split lists overlap or repeat a class id",
                ));
            }
            if dataset.class_by_id(*id).is_none() {
                return Err(Error::InvalidSpec(
                    "split names a class id absent from the dataset",
                ));
            }
        }
        Ok(())
    }
}

/// One query image with its episode-local label.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<'a> {
    pub label: usize,
    pub image: usize,
    pub set: &'a DescriptorSet,
}

/// A sampled task. Labels are episode-local `0..C`; `class_ids[label]` is the
/// dataset id.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<'a> {
    pub class_ids: Vec<u32>,
    /// Per class: dataset image indices of the support shots.
    pub support_images: Vec<Vec<usize>>,
    pub support: Vec<Vec<&'a DescriptorSet>>,
    pub queries: Vec<Query<'a>>,
}

impl Episode<'_> {
    pub fn ways(&self) -> usize {
        self.class_ids.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.queries.iter().map(|q| q.label)
    }
}

/// Independent stream for episode `index` under `seed`.
pub fn episode_stream(seed: u64, index: u64) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples a C-way K-shot episode from the classes in `split`.
///
/// Classes are drawn without replacement (draw order = episode label), then
/// per class `K + q` images without replacement: the first `K` become support,
/// the rest queries.
pub fn sample_episode<'a>(
    dataset: &'a LabeledDataset,
    split: &[u32],
    spec: &EpisodeSpec,
    rng: &mut EpisodeRng,
) -> Result<Episode<'a>> {
    spec.validate()?;
    if split.len() < spec.ways {
        return Err(Error::InsufficientClasses {
            needed: spec.ways,
            available: split.len(),
        });
    }
    let needed = spec.images_per_class();
    let mut classes = Vec::with_capacity(split.len());
    for &id in split {
        let class = dataset.class_by_id(id).ok_or(Error::InvalidSpec(
            "split names a class id absent from the dataset",
        ))?;
        if class.images.len() < needed {
            return Err(Error::InsufficientImages {
                class_id: id,
                needed,
                available: class.images.len(),
            });
        }
        classes.push(class);
    }

    let chosen = index::sample(rng, classes.len(), spec.ways);
    let mut episode = Episode {
        class_ids: Vec::with_capacity(spec.ways),
        support_images: Vec::with_capacity(spec.ways),
        support: Vec::with_capacity(spec.ways),
        queries: Vec::with_capacity(spec.ways * spec.queries),
    };
    for (label, ci) in chosen.iter().enumerate() {
        let class = classes[ci];
        let picks = index::sample(rng, class.images.len(), needed).into_vec();
        let (shots, queries) = picks.split_at(spec.shots);
        episode.class_ids.push(class.id);
        episode.support_images.push(shots.to_vec());
        episode
            .support
            .push(shots.iter().map(|&i| &class.images[i]).collect());
        episode.queries.extend(queries.iter().map(|&i| Query {
            label,
            image: i,
            set: &class.images[i],
        }));
    }
    Ok(episode)
}
