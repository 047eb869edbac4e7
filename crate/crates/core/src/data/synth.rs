//! Seeded generator for a heterogeneous video/knowledge-graph dataset with a
//! planted translational structure.
//!
//! Entities live on an integer lattice embedded into `R^latent_dim` by an
//! integer matrix, and every relation is a lattice shift. A triplet (h, r, t)
//! is emitted only when some entity sits at `point(h) + shift(r)`, so with
//! zero noise the residual `latent(h) + offset(r) - latent(t)` is exactly
//! zero in floating point (all values are small integers times a power of
//! two). With noise σ the tail is chosen nearest to a Gaussian-perturbed
//! target, which corrupts a σ-dependent fraction of edges and leaves
//! σ-scale residuals on the rest.
//!
//! Every entity is identified with a tag of the same name; entities that
//! occur as heads additionally receive 1..=N videos whose modality features
//! are fixed affine images of the entity latent plus Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

use super::{
    split_ids, Dataset, EntityId, LinkTable, ModalityDims, RelationId, TagEntityMap, TagId,
    Triplet, VideoId, VideoRecord,
};
use crate::error::{Error, Result};

/// All values are exact multiples of this power of two.
const LATTICE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    pub triplets: usize,
    /// Inclusive range of videos attached to each head entity.
    pub videos_per_head: (u32, u32),
    pub latent_dim: usize,
    pub modality_dims: ModalityDims,
    pub noise_std: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 200,
            relations: 10,
            triplets: 1000,
            videos_per_head: (1, 5),
            latent_dim: 8,
            modality_dims: ModalityDims::default(),
            noise_std: 0.0,
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entities < 2 || self.relations < 1 || self.triplets < 2 {
            return Err(Error::Config(
                "need at least 2 entities, 1 relation and 2 triplets".into(),
            ));
        }
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.modality_dims.total() < 1 {
            return Err(Error::Config("modality dims must not all be zero".into()));
        }
        if self.videos_per_head.0 < 1 || self.videos_per_head.0 > self.videos_per_head.1 {
            return Err(Error::Config(
                "videos_per_head range must satisfy 1 <= min <= max".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0,1)".into()));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        if self.triplets > self.entities * self.relations {
            return Err(Error::Config(format!(
                "{} triplets requested but only {} distinct (head, relation) pairs exist",
                self.triplets,
                self.entities * self.relations
            )));
        }
        Ok(())
    }
}

/// The planted ground truth behind a synthetic dataset. Exposed so tests and
/// the fusion baseline can build informative per-entity embeddings.
#[derive(Debug, Clone)]
pub struct PlantedStructure {
    pub entity_latents: Vec<Vec<f64>>,
    pub relation_offsets: Vec<Vec<f64>>,
}

impl PlantedStructure {
    pub fn residual(&self, t: &Triplet) -> f64 {
        let h = &self.entity_latents[t.head.index()];
        let r = &self.relation_offsets[t.relation.index()];
        let tl = &self.entity_latents[t.tail.index()];
        h.iter()
            .zip(r)
            .zip(tl)
            .map(|((&a, &b), &c)| {
                let d = a + b - c;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn nonzero_shifts(dim: usize, range: i64) -> Vec<Vec<i64>> {
    let side = (2 * range + 1) as usize;
    let total = side.pow(dim as u32);
    let mut out = Vec::with_capacity(total - 1);
    for mut idx in 0..total {
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push((idx % side) as i64 - range);
            idx /= side;
        }
        if v.iter().any(|&x| x != 0) {
            out.push(v);
        }
    }
    out
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generates the dataset. Fully determined by `cfg.seed`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(gen_synthetic_with_structure(cfg)?.0)
}

pub fn gen_synthetic_with_structure(cfg: &SynthConfig) -> Result<(Dataset, PlantedStructure)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lattice_dim = cfg.latent_dim.min(3);

    // integer embedding lattice -> R^latent_dim; identity block keeps it injective
    let mut embed = vec![vec![0i64; cfg.latent_dim]; lattice_dim];
    for (i, row) in embed.iter_mut().enumerate() {
        row[i] = 1;
        for x in row.iter_mut().skip(lattice_dim) {
            *x = rng.gen_range(-2..=2);
        }
    }
    let to_latent = |g: &[i64]| -> Vec<f64> {
        (0..cfg.latent_dim)
            .map(|j| {
                let s: i64 = g.iter().zip(&embed).map(|(&gi, row)| gi * row[j]).sum();
                s as f64 * LATTICE_SCALE
            })
            .collect()
    };

    // relation shifts, distinct while the pool allows; low-weight shifts
    // first so targets tend to stay inside the occupied box
    let mut pool = nonzero_shifts(lattice_dim, 1);
    if pool.len() < cfg.relations {
        pool = nonzero_shifts(lattice_dim, 2);
    }
    pool.shuffle(&mut rng);
    pool.sort_by_key(|s| s.iter().filter(|&&x| x != 0).count());
    let shifts: Vec<Vec<i64>> = (0..cfg.relations)
        .map(|i| {
            if i < pool.len() {
                pool[i].clone()
            } else {
                pool[rng.gen_range(0..pool.len())].clone()
            }
        })
        .collect();

    // entities sit uniformly in a box sized for ~3 entities per occupied
    // cell, so most relation shifts from most entities land on occupied
    // points and the distinct-triplet capacity comfortably exceeds the
    // entity count
    let side = ((cfg.entities as f64 / 3.0).powf(1.0 / lattice_dim as f64).ceil() as i64).max(2);
    let points: Vec<Vec<i64>> = (0..cfg.entities)
        .map(|_| (0..lattice_dim).map(|_| rng.gen_range(0..side)).collect())
        .collect();
    let mut occupants: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (e, p) in points.iter().enumerate() {
        occupants.entry(p.clone()).or_default().push(e);
    }

    let latents: Vec<Vec<f64>> = points.iter().map(|p| to_latent(p)).collect();
    let offsets: Vec<Vec<f64>> = shifts.iter().map(|s| to_latent(s)).collect();

    // (h, r) pairs whose exact target point is occupied
    let mut plantable: Vec<(usize, usize)> = Vec::new();
    let mut capacity = 0usize;
    for h in 0..cfg.entities {
        for r in 0..cfg.relations {
            if let Some(tails) = occupants.get(&add(&points[h], &shifts[r])) {
                plantable.push((h, r));
                capacity += tails.len();
            }
        }
    }
    if plantable.is_empty() {
        return Err(Error::Config("no plantable (head, relation) pairs".into()));
    }
    if cfg.noise_std == 0.0 && capacity < cfg.triplets {
        return Err(Error::Config(format!(
            "requested {} triplets but the planted structure supports at most {capacity}; \
             use more entities or relations",
            cfg.triplets
        )));
    }

    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample::<f64, _>(StandardNormal) };

    let mut chosen: Vec<Triplet> = Vec::with_capacity(cfg.triplets);
    let mut seen: HashSet<Triplet> = HashSet::new();
    let max_attempts = 200 * cfg.triplets + 10_000;
    let mut attempts = 0;
    while chosen.len() < cfg.triplets {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config(format!(
                "planted {} of {} requested triplets before exhausting attempts; \
                 config is infeasible (try more entities or relations)",
                chosen.len(),
                cfg.triplets
            )));
        }
        let &(h, r) = &plantable[rng.gen_range(0..plantable.len())];
        // noisy target in latent space, snapped to the nearest entity
        let mut target = latents[h].clone();
        for (x, o) in target.iter_mut().zip(&offsets[r]) {
            *x += o + cfg.noise_std * normal(&mut rng);
        }
        let mut best = f64::INFINITY;
        let mut dists = Vec::with_capacity(cfg.entities);
        for lat in &latents {
            let d: f64 = lat
                .iter()
                .zip(&target)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            dists.push(d);
            if d < best {
                best = d;
            }
        }
        let ties: Vec<usize> = (0..cfg.entities).filter(|&e| dists[e] == best).collect();
        let t = ties[rng.gen_range(0..ties.len())];
        if t == h {
            continue;
        }
        let triplet = Triplet::new(EntityId(h as u32), RelationId(r as u32), EntityId(t as u32));
        if seen.insert(triplet) {
            chosen.push(triplet);
        }
    }

    // split
    let split_seed = rng.gen::<u64>();
    let (train_ids, test_ids) = split_ids(chosen.len(), cfg.train_fraction, split_seed)?;
    let train: Vec<Triplet> = train_ids.iter().map(|&i| chosen[i]).collect();
    let test: Vec<Triplet> = test_ids.iter().map(|&i| chosen[i]).collect();

    // names, tags: every entity is identified with a tag of the same name
    let mut ds = Dataset::default();
    for e in 0..cfg.entities {
        ds.entities.intern(&format!("e{e}"));
        ds.tags.intern(&format!("e{e}"));
    }
    for r in 0..cfg.relations {
        ds.relations.intern(&format!("r{r}"));
    }
    ds.tag_entity = TagEntityMap::new(cfg.entities, cfg.entities);
    for e in 0..cfg.entities as u32 {
        ds.tag_entity.identify(TagId(e), EntityId(e))?;
    }
    ds.train = train;
    ds.test = test;
    ds.modality_dims = cfg.modality_dims;

    // fixed affine maps per modality
    let d_total = cfg.modality_dims.total();
    let feat_scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let feat_map: Vec<Vec<f64>> = (0..d_total)
        .map(|_| (0..cfg.latent_dim).map(|_| feat_scale * normal(&mut rng)).collect())
        .collect();
    let feat_bias: Vec<f64> = (0..d_total).map(|_| rng.gen_range(-0.5..0.5)).collect();

    // videos for every entity that occurs as a head
    let mut heads: Vec<usize> = ds
        .all_triplets()
        .map(|t| t.head.index())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    heads.sort_unstable();
    let mut video_to_entity = Vec::new();
    for &h in &heads {
        let count = rng.gen_range(cfg.videos_per_head.0..=cfg.videos_per_head.1);
        for _ in 0..count {
            let id = VideoId(video_to_entity.len() as u32);
            let features: Vec<f32> = feat_map
                .iter()
                .zip(&feat_bias)
                .map(|(row, &b)| {
                    let mut x = b;
                    for (w, l) in row.iter().zip(&latents[h]) {
                        x += w * l;
                    }
                    (x + cfg.noise_std * normal(&mut rng)) as f32
                })
                .collect();
            ds.videos.push(VideoRecord {
                id,
                tag: TagId(h as u32),
                features,
            });
            video_to_entity.push(EntityId(h as u32));
        }
    }
    ds.links = LinkTable::new(video_to_entity, cfg.entities);

    ds.validate()?;
    Ok((
        ds,
        PlantedStructure {
            entity_latents: latents,
            relation_offsets: offsets,
        },
    ))
}
