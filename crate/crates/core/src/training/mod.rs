//! The three-stage training protocol.
//!
//! Stage one fits the video encoder and tag classifier on the tag
//! classification loss. Stage two adds the tag encoder and temperature and
//! fits the contrastive alignment loss while the video encoder and its
//! projection head stay frozen. Stage three trains everything on the
//! weighted joint objective, where each batch video contributes its tag
//! pair plus one uniformly chosen training triplet headed by its linked
//! entity, with sampled corrupted tails.
//!
//! All three stages run through one batch function parameterized by the
//! loss weights, so a stage is exactly "the joint objective with the other
//! weights at zero". Randomness flows through the single RNG held in
//! [`ModelState`]; a fixed seed and config give bit-identical runs, and
//! checkpoints capture the RNG so resumed runs reproduce uninterrupted
//! ones.

pub mod adam;
pub mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, RelationId, TagId, VideoId};
use crate::encoders::{
    Activation, RelationTable, TagEncoder, TagEncoderGrads, VideoEncoder, VideoEncoderGrads,
    VideoEncoderKind,
};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};
use crate::objectives::{
    loss_clip, loss_clip_with_grad, loss_joint, loss_kg, loss_kg_with_grad, loss_tag,
    loss_tag_with_grad, tag_scores, ClipParams, JointLossWeights, KgeConfig, Similarity,
    TagClassifier,
};
use adam::{AdamParams, AdamSlot};

/// Which hidden-state source backs the video encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lookup,
    Mlp,
}

/// Hyperparameters for the staged training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Shared embedding dimension k.
    pub embed_dim: usize,
    /// Encoder hidden size H.
    pub hidden_dim: usize,
    pub encoder: EncoderKind,
    pub activation: Activation,
    pub clip_similarity: Similarity,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stage two uses its own, larger batch.
    pub batch_size_stage2: usize,
    pub kge: KgeConfig,
    pub tau_init: f64,
    pub weights: JointLossWeights,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Permit running a stage without its predecessors.
    pub allow_stage_skip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 128,
            hidden_dim: 1024,
            encoder: EncoderKind::Lookup,
            activation: Activation::Sigmoid,
            clip_similarity: Similarity::Dot,
            learning_rate: 1e-4,
            batch_size: 512,
            batch_size_stage2: 880,
            kge: KgeConfig::default(),
            tau_init: 0.07,
            weights: JointLossWeights::default(),
            epochs_stage1: 50,
            epochs_stage2: 50,
            epochs_stage3: 100,
            weight_decay: 0.0,
            seed: 0,
            allow_stage_skip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::Config("embedding and hidden sizes must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size < 1 || self.batch_size_stage2 < 1 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return Err(Error::Config("tau_init must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        self.kge.validate()?;
        self.weights.validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, recorded in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(&json));
        out
    }
}

/// Every parameter tensor of the joint model. Also the checkpoint tensor
/// identifier, so the order here is a file-format contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    VideoTable,
    VideoInWeight,
    VideoInBias,
    VideoHeadWeight,
    VideoHeadBias,
    TagTable,
    TagHeadWeight,
    TagHeadBias,
    Relations,
    Classifier,
    LogTau,
}

impl ParamId {
    pub const ALL: [ParamId; 11] = [
        ParamId::VideoTable,
        ParamId::VideoInWeight,
        ParamId::VideoInBias,
        ParamId::VideoHeadWeight,
        ParamId::VideoHeadBias,
        ParamId::TagTable,
        ParamId::TagHeadWeight,
        ParamId::TagHeadBias,
        ParamId::Relations,
        ParamId::Classifier,
        ParamId::LogTau,
    ];

    pub fn code(self) -> u16 {
        Self::ALL.iter().position(|&p| p == self).unwrap() as u16
    }

    pub fn from_code(code: u16) -> Option<ParamId> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Boolean per parameter group; frozen groups receive neither gradient
/// updates nor weight decay, so their bytes cannot change.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreezeMask {
    frozen: BTreeSet<ParamId>,
}

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn freezing(ids: impl IntoIterator<Item = ParamId>) -> Self {
        FreezeMask {
            frozen: ids.into_iter().collect(),
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            // only the video encoder and the classifier learn
            Stage::One => Self::freezing([
                ParamId::TagTable,
                ParamId::TagHeadWeight,
                ParamId::TagHeadBias,
                ParamId::Relations,
                ParamId::LogTau,
            ]),
            // the video encoder and its projection head are frozen, exactly
            Stage::Two => Self::freezing([
                ParamId::VideoTable,
                ParamId::VideoInWeight,
                ParamId::VideoInBias,
                ParamId::VideoHeadWeight,
                ParamId::VideoHeadBias,
            ]),
            Stage::Three => Self::none(),
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen.contains(&id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Stage> {
        match n {
            1 => Some(Stage::One),
            2 => Some(Stage::Two),
            3 => Some(Stage::Three),
            _ => None,
        }
    }
}

/// Adam step counter plus first/second moments mirroring every present
/// parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub slot: AdamSlot,
    pub moments: BTreeMap<ParamId, (Mat, Mat)>,
}

/// The complete trainable state: encoders, relation table, classifier,
/// temperature, optimizer moments, stage marker and the RNG that drives all
/// batching and sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub video: VideoEncoder,
    pub tag: TagEncoder,
    pub relations: RelationTable,
    pub classifier: TagClassifier,
    pub clip: ClipParams,
    pub opt: OptState,
    /// Highest completed stage, 0 for a freshly initialized model.
    pub stage: u8,
    pub rng: ChaCha8Rng,
    pub config_digest: [u8; 32],
}

impl ModelState {
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let video = match cfg.encoder {
            EncoderKind::Lookup => VideoEncoder::new_lookup(
                ds.video_count(),
                cfg.hidden_dim,
                cfg.embed_dim,
                cfg.activation,
                &mut rng,
            ),
            EncoderKind::Mlp => VideoEncoder::new_mlp(
                ds.modality_dims.total(),
                cfg.hidden_dim,
                cfg.embed_dim,
                cfg.activation,
                &mut rng,
            ),
        };
        let tag = TagEncoder::new(
            ds.tag_count(),
            cfg.hidden_dim,
            cfg.embed_dim,
            cfg.activation,
            &mut rng,
        );
        let relations = RelationTable::new(ds.relation_count(), cfg.embed_dim, &mut rng);
        let classifier = TagClassifier::new(ds.tag_count(), cfg.embed_dim, &mut rng);
        let clip = ClipParams::new(cfg.tau_init, cfg.clip_similarity)?;
        let mut state = ModelState {
            video,
            tag,
            relations,
            classifier,
            clip,
            opt: OptState {
                slot: AdamSlot::new(),
                moments: BTreeMap::new(),
            },
            stage: 0,
            rng,
            config_digest: cfg.digest(),
        };
        for id in ParamId::ALL {
            if let Some(p) = state.param(id) {
                let zero = (Mat::zeros(p.rows(), p.cols()), Mat::zeros(p.rows(), p.cols()));
                state.opt.moments.insert(id, zero);
            }
        }
        Ok(state)
    }

    pub fn embed_dim(&self) -> usize {
        self.relations.embed_dim()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        match id {
            ParamId::VideoTable => match &self.video.kind {
                VideoEncoderKind::Lookup { table } => Some(table),
                VideoEncoderKind::Mlp { .. } => None,
            },
            ParamId::VideoInWeight => match &self.video.kind {
                VideoEncoderKind::Mlp { in_weight, .. } => Some(in_weight),
                VideoEncoderKind::Lookup { .. } => None,
            },
            ParamId::VideoInBias => match &self.video.kind {
                VideoEncoderKind::Mlp { in_bias, .. } => Some(in_bias),
                VideoEncoderKind::Lookup { .. } => None,
            },
            ParamId::VideoHeadWeight => Some(&self.video.head.weight),
            ParamId::VideoHeadBias => Some(&self.video.head.bias),
            ParamId::TagTable => Some(&self.tag.table),
            ParamId::TagHeadWeight => Some(&self.tag.head.weight),
            ParamId::TagHeadBias => Some(&self.tag.head.bias),
            ParamId::Relations => Some(&self.relations.table),
            ParamId::Classifier => Some(&self.classifier.weight),
            ParamId::LogTau => Some(&self.clip.log_tau),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Mat> {
        match id {
            ParamId::VideoTable => match &mut self.video.kind {
                VideoEncoderKind::Lookup { table } => Some(table),
                VideoEncoderKind::Mlp { .. } => None,
            },
            ParamId::VideoInWeight => match &mut self.video.kind {
                VideoEncoderKind::Mlp { in_weight, .. } => Some(in_weight),
                VideoEncoderKind::Lookup { .. } => None,
            },
            ParamId::VideoInBias => match &mut self.video.kind {
                VideoEncoderKind::Mlp { in_bias, .. } => Some(in_bias),
                VideoEncoderKind::Lookup { .. } => None,
            },
            ParamId::VideoHeadWeight => Some(&mut self.video.head.weight),
            ParamId::VideoHeadBias => Some(&mut self.video.head.bias),
            ParamId::TagTable => Some(&mut self.tag.table),
            ParamId::TagHeadWeight => Some(&mut self.tag.head.weight),
            ParamId::TagHeadBias => Some(&mut self.tag.head.bias),
            ParamId::Relations => Some(&mut self.relations.table),
            ParamId::Classifier => Some(&mut self.classifier.weight),
            ParamId::LogTau => Some(&mut self.clip.log_tau),
        }
    }

    pub fn present_ids(&self) -> Vec<ParamId> {
        ParamId::ALL
            .into_iter()
            .filter(|&id| self.param(id).is_some())
            .collect()
    }

    /// One Adam step over every present, unfrozen parameter group.
    pub fn optimizer_step(
        &mut self,
        grads: &JointGrads,
        adam: &AdamParams,
        mask: &FreezeMask,
    ) -> Result<()> {
        self.opt.slot.begin_step();
        let slot = self.opt.slot;
        for id in ParamId::ALL {
            if mask.is_frozen(id) {
                continue;
            }
            let grad = grads.get(id);
            if grad.rows() == 0 || grad.cols() == 0 {
                continue;
            }
            let param: &mut Mat = match id {
                ParamId::VideoTable => match &mut self.video.kind {
                    VideoEncoderKind::Lookup { table } => table,
                    VideoEncoderKind::Mlp { .. } => continue,
                },
                ParamId::VideoInWeight => match &mut self.video.kind {
                    VideoEncoderKind::Mlp { in_weight, .. } => in_weight,
                    VideoEncoderKind::Lookup { .. } => continue,
                },
                ParamId::VideoInBias => match &mut self.video.kind {
                    VideoEncoderKind::Mlp { in_bias, .. } => in_bias,
                    VideoEncoderKind::Lookup { .. } => continue,
                },
                ParamId::VideoHeadWeight => &mut self.video.head.weight,
                ParamId::VideoHeadBias => &mut self.video.head.bias,
                ParamId::TagTable => &mut self.tag.table,
                ParamId::TagHeadWeight => &mut self.tag.head.weight,
                ParamId::TagHeadBias => &mut self.tag.head.bias,
                ParamId::Relations => &mut self.relations.table,
                ParamId::Classifier => &mut self.classifier.weight,
                ParamId::LogTau => &mut self.clip.log_tau,
            };
            let (m, v) = self
                .opt
                .moments
                .get_mut(&id)
                .ok_or_else(|| Error::Checkpoint(format!("missing moments for {id:?}")))?;
            slot.apply(adam, param, grad, m, v)?;
        }
        Ok(())
    }
}

/// Gradient accumulator shaped like the model.
#[derive(Debug, Clone)]
pub struct JointGrads {
    pub video: VideoEncoderGrads,
    pub tag: TagEncoderGrads,
    pub relations: Mat,
    pub classifier: Mat,
    pub log_tau: Mat,
}

impl JointGrads {
    pub fn zeros(state: &ModelState) -> Self {
        JointGrads {
            video: state.video.zero_grads(),
            tag: state.tag.zero_grads(),
            relations: Mat::zeros(state.relations.table.rows(), state.relations.table.cols()),
            classifier: Mat::zeros(state.classifier.weight.rows(), state.classifier.weight.cols()),
            log_tau: Mat::zeros(1, 1),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        match id {
            ParamId::VideoTable => &self.video.table,
            ParamId::VideoInWeight => &self.video.in_weight,
            ParamId::VideoInBias => &self.video.in_bias,
            ParamId::VideoHeadWeight => &self.video.head.weight,
            ParamId::VideoHeadBias => &self.video.head.bias,
            ParamId::TagTable => &self.tag.table,
            ParamId::TagHeadWeight => &self.tag.head.weight,
            ParamId::TagHeadBias => &self.tag.head.bias,
            ParamId::Relations => &self.relations,
            ParamId::Classifier => &self.classifier,
            ParamId::LogTau => &self.log_tau,
        }
    }
}

/// One uniformly drawn training triplet for a batch video, resolved to the
/// tags the tag encoder will embed.
#[derive(Debug, Clone, PartialEq)]
pub struct KgAssign {
    pub relation: RelationId,
    pub tail_tag: TagId,
    pub negative_tags: Vec<TagId>,
}

/// Draws triplets and corrupted tails for stage-three batches.
pub struct KgSampler {
    triplets_by_head: Vec<Vec<usize>>,
    tagged_tags: Vec<TagId>,
    tagged_pos: Vec<Option<usize>>,
}

impl KgSampler {
    pub fn new(ds: &Dataset) -> Self {
        let mut triplets_by_head = vec![Vec::new(); ds.entity_count()];
        for (i, t) in ds.train.iter().enumerate() {
            triplets_by_head[t.head.index()].push(i);
        }
        let mut tagged_tags = Vec::new();
        let mut tagged_pos = vec![None; ds.entity_count()];
        for e in 0..ds.entity_count() {
            if let Some(tag) = ds.tag_entity.tag_of(crate::data::EntityId(e as u32)) {
                tagged_pos[e] = Some(tagged_tags.len());
                tagged_tags.push(tag);
            }
        }
        KgSampler {
            triplets_by_head,
            tagged_tags,
            tagged_pos,
        }
    }

    /// None means the video contributes no graph term this batch: its head
    /// has no training triplet, or a tail lacks a tag.
    pub fn draw(
        &self,
        ds: &Dataset,
        video: VideoId,
        negatives: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<KgAssign> {
        let entity = ds.links.entity_of(video)?;
        let candidates = &self.triplets_by_head[entity.index()];
        if candidates.is_empty() || self.tagged_tags.len() < 2 {
            return None;
        }
        let triplet = &ds.train[candidates[rng.gen_range(0..candidates.len())]];
        let tail_tag = ds.tag_entity.tag_of(triplet.tail)?;
        let tail_pos = self.tagged_pos[triplet.tail.index()]?;
        let negative_tags = (0..negatives)
            .map(|_| {
                let raw = rng.gen_range(0..self.tagged_tags.len() - 1);
                let idx = if raw >= tail_pos { raw + 1 } else { raw };
                self.tagged_tags[idx]
            })
            .collect();
        Some(KgAssign {
            relation: triplet.relation,
            tail_tag,
            negative_tags,
        })
    }
}

/// Per-batch (and per-epoch) loss components; `total` is the λ-weighted
/// combination of the other three.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub tag: f64,
    pub clip: f64,
    pub kg: f64,
    pub total: f64,
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Value-only batch objective, used by the finite-difference checks.
pub fn joint_batch_loss(
    state: &ModelState,
    ds: &Dataset,
    batch: &[usize],
    assigns: &[Option<KgAssign>],
    weights: &JointLossWeights,
    kge: &KgeConfig,
) -> Result<f64> {
    let inv_b = 1.0 / batch.len() as f64;
    let mut parts = LossParts::default();
    let zv: Vec<Vec<f64>> = batch
        .iter()
        .map(|&i| state.video.encode(&ds.videos[i]))
        .collect::<Result<_>>()?;
    if weights.tag > 0.0 {
        for (z, &i) in zv.iter().zip(batch) {
            let s = tag_scores(z, &state.classifier)?;
            parts.tag += loss_tag(&s, ds.videos[i].tag)? * inv_b;
        }
    }
    if weights.clip > 0.0 {
        let zt: Vec<Vec<f64>> = batch
            .iter()
            .map(|&i| state.tag.encode(ds.videos[i].tag))
            .collect::<Result<_>>()?;
        parts.clip = loss_clip(&zv, &zt, &state.clip)?;
    }
    let kg_count = assigns.iter().flatten().count();
    if weights.kg > 0.0 && kg_count > 0 {
        for (z, assign) in zv.iter().zip(assigns) {
            let Some(a) = assign else { continue };
            let r = state.relations.embedding(a.relation)?;
            let t = state.tag.encode(a.tail_tag)?;
            let negs: Vec<Vec<f64>> = a
                .negative_tags
                .iter()
                .map(|&tag| state.tag.encode(tag))
                .collect::<Result<_>>()?;
            parts.kg += loss_kg(z, &r, &t, &negs, kge)? / kg_count as f64;
        }
    }
    Ok(loss_joint(parts.kg, parts.clip, parts.tag, weights))
}

/// Forward and backward over one batch. Returns the loss components and the
/// accumulated gradients of the λ-weighted objective.
pub fn joint_batch_grad(
    state: &ModelState,
    ds: &Dataset,
    batch: &[usize],
    assigns: &[Option<KgAssign>],
    weights: &JointLossWeights,
    kge: &KgeConfig,
) -> Result<(LossParts, JointGrads)> {
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let mut grads = JointGrads::zeros(state);
    let mut parts = LossParts::default();

    let caches: Vec<_> = batch
        .iter()
        .map(|&i| state.video.encode_cached(&ds.videos[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut dzv = vec![vec![0.0; state.embed_dim()]; b];

    if weights.tag > 0.0 {
        for (i, &vi) in batch.iter().enumerate() {
            let (l, dz) = loss_tag_with_grad(
                &caches[i].z,
                &state.classifier,
                ds.videos[vi].tag,
                weights.tag * inv_b,
                &mut grads.classifier,
            )?;
            parts.tag += l * inv_b;
            axpy(&mut dzv[i], &dz, 1.0);
        }
    }

    if weights.clip > 0.0 {
        let tag_caches: Vec<_> = batch
            .iter()
            .map(|&i| state.tag.encode_cached(ds.videos[i].tag))
            .collect::<Result<Vec<_>>>()?;
        let zv: Vec<Vec<f64>> = caches.iter().map(|c| c.z.clone()).collect();
        let zt: Vec<Vec<f64>> = tag_caches.iter().map(|c| c.z.clone()).collect();
        let (l, dv, dt, dlog_tau) = loss_clip_with_grad(&zv, &zt, &state.clip)?;
        parts.clip = l;
        for i in 0..b {
            axpy(&mut dzv[i], &dv[i], weights.clip);
            state
                .tag
                .backward(&tag_caches[i], &scaled(&dt[i], weights.clip), &mut grads.tag);
        }
        grads.log_tau.row_mut(0)[0] += weights.clip * dlog_tau;
    }

    let kg_count = assigns.iter().flatten().count();
    if weights.kg > 0.0 && kg_count > 0 {
        let scale = weights.kg / kg_count as f64;
        for (i, assign) in assigns.iter().enumerate() {
            let Some(a) = assign else { continue };
            let r_emb = state.relations.embedding(a.relation)?;
            let t_cache = state.tag.encode_cached(a.tail_tag)?;
            let neg_caches: Vec<_> = a
                .negative_tags
                .iter()
                .map(|&tag| state.tag.encode_cached(tag))
                .collect::<Result<Vec<_>>>()?;
            let negs: Vec<Vec<f64>> = neg_caches.iter().map(|c| c.z.clone()).collect();
            let (l, dh, dr, dt, dnegs) =
                loss_kg_with_grad(&caches[i].z, &r_emb, &t_cache.z, &negs, kge)?;
            parts.kg += l / kg_count as f64;
            axpy(&mut dzv[i], &dh, scale);
            axpy(grads.relations.row_mut(a.relation.index()), &dr, scale);
            state.tag.backward(&t_cache, &scaled(&dt, scale), &mut grads.tag);
            for (cache, dn) in neg_caches.iter().zip(&dnegs) {
                state.tag.backward(cache, &scaled(dn, scale), &mut grads.tag);
            }
        }
    }

    for (i, cache) in caches.iter().enumerate() {
        state.video.backward(cache, &dzv[i], &mut grads.video);
    }

    parts.total = loss_joint(parts.kg, parts.clip, parts.tag, weights);
    Ok((parts, grads))
}

/// One logged epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub stage: u8,
    pub epoch: usize,
    pub tag: f64,
    pub clip: f64,
    pub kg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub rows: Vec<LossRow>,
    /// Batch slots whose video had no usable training triplet.
    pub kg_skipped: u64,
}

fn stage_weights(stage: Stage, cfg: &TrainConfig) -> JointLossWeights {
    match stage {
        Stage::One => JointLossWeights {
            kg: 0.0,
            clip: 0.0,
            tag: 1.0,
        },
        Stage::Two => JointLossWeights {
            kg: 0.0,
            clip: 1.0,
            tag: 0.0,
        },
        Stage::Three => cfg.weights,
    }
}

/// Runs `epochs` epochs of one stage. Exposed with an explicit epoch count
/// so interrupted runs can resume; the stage wrappers below pass the
/// configured counts.
pub fn run_stage(
    state: &mut ModelState,
    ds: &Dataset,
    cfg: &TrainConfig,
    stage: Stage,
    epochs: usize,
) -> Result<StageReport> {
    cfg.validate()?;
    if ds.videos.is_empty() {
        return Err(Error::Empty("training requires videos".into()));
    }
    let required = stage.number() - 1;
    if state.stage < required && !cfg.allow_stage_skip {
        return Err(Error::Config(format!(
            "stage {} requires a completed stage {} checkpoint",
            stage.number(),
            required
        )));
    }
    let weights = stage_weights(stage, cfg);
    let mask = FreezeMask::for_stage(stage);
    let adam = AdamParams {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamParams::default()
    };
    let batch_size = match stage {
        Stage::Two => cfg.batch_size_stage2,
        _ => cfg.batch_size,
    };
    let sampler = KgSampler::new(ds);
    let mut report = StageReport::default();

    for epoch in 0..epochs {
        // fresh identity order per epoch: the permutation depends only on
        // the RNG stream, so resumed runs reproduce uninterrupted ones
        let mut order: Vec<usize> = (0..ds.videos.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut state.rng);
        let mut sums = LossParts::default();
        let mut video_total = 0usize;
        let mut kg_total = 0usize;
        for batch in order.chunks(batch_size) {
            let assigns: Vec<Option<KgAssign>> = if weights.kg > 0.0 {
                batch
                    .iter()
                    .map(|&i| {
                        let a = sampler.draw(ds, VideoId(i as u32), cfg.kge.negatives, &mut state.rng);
                        if a.is_none() {
                            report.kg_skipped += 1;
                        }
                        a
                    })
                    .collect()
            } else {
                vec![None; batch.len()]
            };
            let (parts, grads) = joint_batch_grad(state, ds, batch, &assigns, &weights, &cfg.kge)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "stage {} loss diverged in epoch {epoch}",
                    stage.number()
                )));
            }
            state.optimizer_step(&grads, &adam, &mask)?;
            let kg_count = assigns.iter().flatten().count();
            sums.tag += parts.tag * batch.len() as f64;
            sums.clip += parts.clip * batch.len() as f64;
            sums.kg += parts.kg * kg_count as f64;
            video_total += batch.len();
            kg_total += kg_count;
        }
        let tag = sums.tag / video_total as f64;
        let clip = sums.clip / video_total as f64;
        let kg = if kg_total > 0 {
            sums.kg / kg_total as f64
        } else {
            0.0
        };
        report.rows.push(LossRow {
            stage: stage.number(),
            epoch,
            tag,
            clip,
            kg,
            total: loss_joint(kg, clip, tag, &weights),
        });
    }
    state.stage = state.stage.max(stage.number());
    Ok(report)
}

pub fn stage_one(state: &mut ModelState, ds: &Dataset, cfg: &TrainConfig) -> Result<StageReport> {
    run_stage(state, ds, cfg, Stage::One, cfg.epochs_stage1)
}

pub fn stage_two(state: &mut ModelState, ds: &Dataset, cfg: &TrainConfig) -> Result<StageReport> {
    run_stage(state, ds, cfg, Stage::Two, cfg.epochs_stage2)
}

pub fn stage_three(state: &mut ModelState, ds: &Dataset, cfg: &TrainConfig) -> Result<StageReport> {
    run_stage(state, ds, cfg, Stage::Three, cfg.epochs_stage3)
}
