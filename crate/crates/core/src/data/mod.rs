//! Domain types: entities, relations, tags, videos, triplets, and the
//! dataset container that ties them together.
//!
//! Ids are dense indices assigned in first-appearance order so that a
//! dataset loaded twice from the same files is identical.

mod io;
mod synth;

pub use io::{
    load_dir, load_triplets, save_dir, write_triplets, ENTITY_FILE, FEATURE_FILE, LINK_FILE,
    RELATION_FILE, TAG_FILE, TEST_FILE, TRAIN_FILE, VIDEO_FILE,
};
pub use synth::{gen_synthetic, gen_synthetic_with_structure, PlantedStructure, SynthConfig};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($name:ident, $kind:expr) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }

            pub fn check(self, len: usize) -> Result<Self> {
                if self.index() < len {
                    Ok(self)
                } else {
                    Err(Error::InvalidId {
                        kind: $kind,
                        id: self.index(),
                        len,
                    })
                }
            }
        }
    };
}

id_type!(EntityId, "entity");
id_type!(RelationId, "relation");
id_type!(VideoId, "video");
id_type!(TagId, "tag");

/// A (head, relation, tail) fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triplet {
            head,
            relation,
            tail,
        }
    }
}

/// Interns string names to dense u32 ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Interner {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
    }
}

/// Per-modality feature lengths for the concatenated video feature vector:
/// frames, then audio, then text. The split is recorded so files round-trip;
/// encoders consume the concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalityDims {
    pub frames: usize,
    pub audio: usize,
    pub text: usize,
}

impl ModalityDims {
    pub fn total(&self) -> usize {
        self.frames + self.audio + self.text
    }
}

impl Default for ModalityDims {
    fn default() -> Self {
        ModalityDims {
            frames: 32,
            audio: 16,
            text: 16,
        }
    }
}

/// One video: exactly one tag, plus the concatenated modality features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: VideoId,
    pub tag: TagId,
    pub features: Vec<f32>,
}

impl VideoRecord {
    pub fn frames<'a>(&'a self, dims: &ModalityDims) -> &'a [f32] {
        &self.features[..dims.frames]
    }

    pub fn audio<'a>(&'a self, dims: &ModalityDims) -> &'a [f32] {
        &self.features[dims.frames..dims.frames + dims.audio]
    }

    pub fn text<'a>(&'a self, dims: &ModalityDims) -> &'a [f32] {
        &self.features[dims.frames + dims.audio..]
    }
}

/// video → head entity, with the inverse entity → videos index.
/// Each video links to exactly one entity; an entity may have many videos.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkTable {
    video_to_entity: Vec<EntityId>,
    entity_to_videos: Vec<Vec<VideoId>>,
}

impl LinkTable {
    pub fn new(video_to_entity: Vec<EntityId>, entity_count: usize) -> Self {
        let mut entity_to_videos = vec![Vec::new(); entity_count];
        for (v, e) in video_to_entity.iter().enumerate() {
            entity_to_videos[e.index()].push(VideoId(v as u32));
        }
        LinkTable {
            video_to_entity,
            entity_to_videos,
        }
    }

    pub fn entity_of(&self, v: VideoId) -> Option<EntityId> {
        self.video_to_entity.get(v.index()).copied()
    }

    pub fn videos_of(&self, e: EntityId) -> &[VideoId] {
        self.entity_to_videos
            .get(e.index())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.video_to_entity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_to_entity.is_empty()
    }
}

/// tag ↔ entity identification, injective on tags. Entities without a tag
/// (possible in text-only data) map to None.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagEntityMap {
    tag_to_entity: Vec<Option<EntityId>>,
    entity_to_tag: Vec<Option<TagId>>,
}

impl TagEntityMap {
    pub fn new(tag_count: usize, entity_count: usize) -> Self {
        TagEntityMap {
            tag_to_entity: vec![None; tag_count],
            entity_to_tag: vec![None; entity_count],
        }
    }

    pub fn identify(&mut self, tag: TagId, entity: EntityId) -> Result<()> {
        if self.tag_to_entity[tag.index()].is_some() {
            return Err(Error::Config(format!(
                "tag {} already identified with an entity",
                tag.index()
            )));
        }
        if self.entity_to_tag[entity.index()].is_some() {
            return Err(Error::Config(format!(
                "entity {} already identified with a tag (map must be injective)",
                entity.index()
            )));
        }
        self.tag_to_entity[tag.index()] = Some(entity);
        self.entity_to_tag[entity.index()] = Some(tag);
        Ok(())
    }

    pub fn entity_of(&self, tag: TagId) -> Option<EntityId> {
        self.tag_to_entity.get(tag.index()).copied().flatten()
    }

    pub fn tag_of(&self, entity: EntityId) -> Option<TagId> {
        self.entity_to_tag.get(entity.index()).copied().flatten()
    }
}

/// The full dataset: graph, videos, tags, and links.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub entities: Interner,
    pub relations: Interner,
    pub tags: Interner,
    pub train: Vec<Triplet>,
    pub test: Vec<Triplet>,
    pub videos: Vec<VideoRecord>,
    pub links: LinkTable,
    pub tag_entity: TagEntityMap,
    pub modality_dims: ModalityDims,
}

impl Dataset {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn video_count(&self) -> usize {
        self.videos.len()
    }

    pub fn all_triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.train.iter().chain(self.test.iter())
    }

    /// Checks the structural invariants. Called after load and generation.
    pub fn validate(&self) -> Result<()> {
        let ne = self.entity_count();
        let nr = self.relation_count();
        let nt = self.tag_count();
        for t in self.all_triplets() {
            t.head.check(ne)?;
            t.relation.check(nr)?;
            t.tail.check(ne)?;
        }
        let train_set: std::collections::HashSet<&Triplet> = self.train.iter().collect();
        if self.test.iter().any(|t| train_set.contains(t)) {
            return Err(Error::Config(
                "test triplets overlap the train split".into(),
            ));
        }
        for v in &self.videos {
            v.tag.check(nt)?;
            if v.features.len() != self.modality_dims.total() {
                return Err(Error::Dim(format!(
                    "video {} has {} features, expected {}",
                    v.id.index(),
                    v.features.len(),
                    self.modality_dims.total()
                )));
            }
            if v.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("features of video {}", v.id.index())));
            }
        }
        if !self.videos.is_empty() {
            if self.links.len() != self.videos.len() {
                return Err(Error::Config(
                    "link table must cover every video exactly once".into(),
                ));
            }
            // every head entity in train∪test must have at least one video
            for t in self.all_triplets() {
                if self.links.videos_of(t.head).is_empty() {
                    return Err(Error::Config(format!(
                        "head entity {} has no linked video",
                        t.head.index()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Seeded shuffle split of `count` indices: (front ≈ count·fraction, rest).
pub fn split_ids(count: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0,1), got {fraction}"
        )));
    }
    let mut ids: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let take = ((count as f64 * fraction).round() as usize).clamp(1, count.saturating_sub(1));
    let rest = ids.split_off(take);
    Ok((ids, rest))
}

/// Re-splits all triplets of the dataset into disjoint train/test parts.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let all: Vec<Triplet> = dataset.all_triplets().copied().collect();
    let (train_ids, test_ids) = split_ids(all.len(), fraction, seed)?;
    let mut out = dataset.clone();
    out.train = train_ids.iter().map(|&i| all[i]).collect();
    out.test = test_ids.iter().map(|&i| all[i]).collect();
    Ok(out)
}
