//! The comparison systems: pure KGE baselines, the contrastive-only
//! variant, the two-stage pipelines that chain text-side link prediction
//! with embedding retrieval, and the embedding-concatenation fusion for
//! text-only graphs.
//!
//! A capability matrix guards every task invocation: asking a baseline for
//! a task it cannot perform is a structured error, never a silent wrong
//! answer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::data::{Dataset, EntityId, RelationId, TagId, VideoId};
use crate::error::{Error, Result};
use crate::eval::{
    rank_queries, tail_tag_candidates, video_relation_queries, Direction, Query, RankResult, Task,
    TripletScorer, TruthIndex,
};
use crate::kge::{sample_negatives, KgeModel, KgeTrainConfig, KgeVariant};
use crate::linalg::{cosine, Mat};
use crate::objectives::neg_log_sigmoid_margin_pair;
use crate::training::adam::{AdamParams, AdamSlot};
use crate::training::{stage_one, stage_two, ModelState, StageReport, TrainConfig};

/// Every runnable method, with its allowed-task row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    TransE,
    TransH,
    TransR,
    Clip,
    ClipTransE,
    ClipTransH,
    ClipTransR,
    Ours,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::TransE,
        Method::TransH,
        Method::TransR,
        Method::Clip,
        Method::ClipTransE,
        Method::ClipTransH,
        Method::ClipTransR,
        Method::Ours,
    ];

    pub fn parse(name: &str) -> Result<Method> {
        match name.to_ascii_lowercase().as_str() {
            "transe" => Ok(Method::TransE),
            "transh" => Ok(Method::TransH),
            "transr" => Ok(Method::TransR),
            "clip" => Ok(Method::Clip),
            "clip+transe" => Ok(Method::ClipTransE),
            "clip+transh" => Ok(Method::ClipTransH),
            "clip+transr" => Ok(Method::ClipTransR),
            "ours" => Ok(Method::Ours),
            other => Err(Error::Config(format!("unknown method: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::TransE => "transe",
            Method::TransH => "transh",
            Method::TransR => "transr",
            Method::Clip => "clip",
            Method::ClipTransE => "clip+transe",
            Method::ClipTransH => "clip+transh",
            Method::ClipTransR => "clip+transr",
            Method::Ours => "ours",
        }
    }

    pub fn kge_variant(&self) -> Option<KgeVariant> {
        match self {
            Method::TransE | Method::ClipTransE => Some(KgeVariant::TransE),
            Method::TransH | Method::ClipTransH => Some(KgeVariant::TransH),
            Method::TransR | Method::ClipTransR => Some(KgeVariant::TransR),
            Method::Clip | Method::Ours => None,
        }
    }

    /// The allowed-task matrix.
    pub fn supports(&self, task: Task) -> bool {
        let trt = matches!(task, Task::TrtHead | Task::TrtTail);
        let retrieval = matches!(task, Task::VT | Task::TV);
        match self {
            Method::TransE | Method::TransH | Method::TransR => trt,
            Method::Clip => retrieval,
            Method::ClipTransE | Method::ClipTransH | Method::ClipTransR | Method::Ours => true,
        }
    }

    pub fn check(&self, task: Task) -> Result<()> {
        if self.supports(task) {
            Ok(())
        } else {
            Err(Error::Capability {
                method: self.name().into(),
                task,
            })
        }
    }
}

/// The contrastive-only variant: stages one and two, no graph objective.
/// The returned state is capable of VT/TV only (stage marker 2).
pub fn clip_only_train(ds: &Dataset, cfg: &TrainConfig) -> Result<(ModelState, Vec<StageReport>)> {
    let mut cfg = cfg.clone();
    cfg.weights.kg = 0.0;
    let mut state = ModelState::new(ds, &cfg)?;
    let r1 = stage_one(&mut state, ds, &cfg)?;
    let r2 = stage_two(&mut state, ds, &cfg)?;
    Ok((state, vec![r1, r2]))
}

/// Independently trained graph and retrieval models chained at inference
/// time through the link table.
pub struct TwoStagePipeline {
    pub kge: KgeModel,
    pub clip: ModelState,
}

impl TwoStagePipeline {
    /// Ranked (tag, distance) list for a (video, relation) query: the head
    /// entity comes from the link table, candidate tails are scored by the
    /// graph model, and tails without tags are dropped from the ranking.
    pub fn rank_tags(
        &self,
        ds: &Dataset,
        video: VideoId,
        relation: RelationId,
    ) -> Result<Vec<(TagId, f64)>> {
        let head = ds.links.entity_of(video).ok_or_else(|| {
            Error::Config(format!("video {} is not in the link table", video.index()))
        })?;
        let mut ranked: Vec<(TagId, f64)> = tail_tag_candidates(ds)
            .into_iter()
            .map(|(e, tag)| Ok((tag, self.kge.score(head, relation, e)?)))
            .collect::<Result<_>>()?;
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(ranked)
    }

    /// Ranked (video, cosine) list: predict the top-1 tail tag, then rank
    /// every video against that tag's embedding. Returns how many
    /// tag-lacking tails were passed over before one had a tag.
    pub fn rank_videos(
        &self,
        ds: &Dataset,
        video: VideoId,
        relation: RelationId,
    ) -> Result<(Vec<(VideoId, f64)>, usize)> {
        let head = ds.links.entity_of(video).ok_or_else(|| {
            Error::Config(format!("video {} is not in the link table", video.index()))
        })?;
        // rank raw entities so tag-lacking tails are observable events
        let mut entities: Vec<(EntityId, f64)> = (0..ds.entity_count())
            .map(|e| {
                let e = EntityId(e as u32);
                Ok((e, self.kge.score(head, relation, e)?))
            })
            .collect::<Result<_>>()?;
        entities.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut skipped_untagged = 0;
        let mut top_tag = None;
        for (e, _) in &entities {
            match ds.tag_entity.tag_of(*e) {
                Some(tag) => {
                    top_tag = Some(tag);
                    break;
                }
                None => skipped_untagged += 1,
            }
        }
        let tag = top_tag.ok_or_else(|| Error::Empty("no tagged entity to predict".into()))?;
        let zt = self.clip.tag.encode(tag)?;
        let mut ranked: Vec<(VideoId, f64)> = ds
            .videos
            .iter()
            .map(|v| Ok((v.id, cosine(&zt, &self.clip.video.encode(v)?))))
            .collect::<Result<_>>()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok((ranked, skipped_untagged))
    }
}

/// VRT through the two-stage pipeline, on the same queries and candidate
/// tags as the joint harness so results are directly comparable.
pub fn eval_vrt_two_stage(
    p: &TwoStagePipeline,
    ds: &Dataset,
    truth: &TruthIndex,
) -> Result<RankResult> {
    let candidates = tail_tag_candidates(ds);
    if candidates.is_empty() {
        return Err(Error::Empty("tail tag candidates".into()));
    }
    let index_of: std::collections::BTreeMap<EntityId, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, &(e, _))| (e, i))
        .collect();
    let mut queries = Vec::new();
    let mut skipped = 0usize;
    for q in video_relation_queries(ds, truth) {
        let targets: BTreeSet<usize> = q
            .target_tails
            .iter()
            .filter_map(|e| index_of.get(e).copied())
            .collect();
        if targets.is_empty() {
            skipped += 1;
            continue;
        }
        let head = ds
            .links
            .entity_of(q.video)
            .ok_or_else(|| Error::Config("query video unlinked".into()))?;
        let scores: Vec<f64> = candidates
            .iter()
            .map(|&(e, _)| p.kge.score(head, q.relation, e))
            .collect::<Result<_>>()?;
        let filter_out: BTreeSet<usize> = q
            .known_tails
            .iter()
            .filter_map(|e| index_of.get(e).copied())
            .collect();
        queries.push(Query {
            scores,
            targets,
            filter_out,
        });
    }
    rank_queries(Task::VRT, Direction::LowerBetter, queries, skipped)
}

/// VRV through the two-stage pipeline: the query's top-1 predicted tag
/// drives a cosine ranking over all videos.
pub fn eval_vrv_two_stage(
    p: &TwoStagePipeline,
    ds: &Dataset,
    truth: &TruthIndex,
) -> Result<RankResult> {
    if ds.videos.is_empty() {
        return Err(Error::Empty("candidate video set".into()));
    }
    let videos_of = |tails: &BTreeSet<EntityId>| -> BTreeSet<usize> {
        tails
            .iter()
            .flat_map(|&e| ds.links.videos_of(e).iter().map(|v| v.index()))
            .collect()
    };
    let mut queries = Vec::new();
    let mut skipped = 0usize;
    for q in video_relation_queries(ds, truth) {
        let targets = videos_of(&q.target_tails);
        if targets.is_empty() {
            skipped += 1;
            continue;
        }
        let (ranked, _) = p.rank_videos(ds, q.video, q.relation)?;
        let mut scores = vec![f64::NEG_INFINITY; ds.video_count()];
        for (v, c) in ranked {
            scores[v.index()] = c;
        }
        let filter_out = videos_of(&q.known_tails);
        queries.push(Query {
            scores,
            targets,
            filter_out,
        });
    }
    rank_queries(Task::VRV, Direction::HigherBetter, queries, skipped)
}

/// Top-1 tail accuracy of the pipeline's graph stage: the fraction of
/// (video, relation) queries whose best-scoring entity is a known-true
/// tail of the pair. This is the quantity the two-stage failure mode
/// turns on: when the top-1 tail is wrong, the recalled videos are wrong
/// wholesale.
pub fn two_stage_top1_tail_accuracy(
    p: &TwoStagePipeline,
    ds: &Dataset,
    truth: &TruthIndex,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for q in video_relation_queries(ds, truth) {
        let head = ds
            .links
            .entity_of(q.video)
            .ok_or_else(|| Error::Config("query video unlinked".into()))?;
        let mut best = (EntityId(0), f64::INFINITY);
        for e in 0..ds.entity_count() {
            let e = EntityId(e as u32);
            let s = p.kge.score(head, q.relation, e)?;
            if s < best.1 {
                best = (e, s);
            }
        }
        total += 1;
        if q.known_tails.contains(&best.0) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("video-relation queries".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// How the fusion reduction matrix starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionInit {
    Random,
    /// `[0 | I]`: the fused representation starts as exactly the KGE block.
    SelectKge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub train: KgeTrainConfig,
    pub reduction_init: ReductionInit,
    /// Freeze the reduction matrix (used by the selector-equivalence
    /// check, where fusion must reproduce the pure baseline exactly).
    pub freeze_reduction: bool,
}

/// Dimensionality-reducing fusion of a frozen per-entity text embedding
/// with the trainable KGE entity embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    /// k × (d_text + k)
    pub reduce: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub kge: KgeModel,
    /// |E| × d_text, frozen.
    pub text: Mat,
    pub head: FusionHead,
    /// Entities that had no text embedding and got a zero substitute.
    pub missing_text: usize,
}

impl FusionModel {
    pub fn entity_repr(&self, e: usize) -> Vec<f64> {
        let k = self.kge.dim();
        let d_text = self.text.cols();
        let mut out = vec![0.0; k];
        for i in 0..k {
            let row = self.head.reduce.row(i);
            let mut acc = 0.0;
            for (j, &t) in self.text.row(e).iter().enumerate() {
                acc += row[j] * t;
            }
            for (j, &g) in self.kge.entities.row(e).iter().enumerate() {
                acc += row[d_text + j] * g;
            }
            out[i] = acc;
        }
        out
    }
}

impl TripletScorer for FusionModel {
    fn score_triplet(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        let h = h.check(self.kge.entity_count())?.index();
        let r = r.check(self.kge.relation_count())?.index();
        let t = t.check(self.kge.entity_count())?.index();
        Ok(self
            .kge
            .distance_repr(r, &self.entity_repr(h), &self.entity_repr(t)))
    }
}

/// Routes a gradient on the fused representation back to the reduction
/// matrix and the KGE entity row (the text block is frozen).
fn route_fused_grad(
    model: &FusionModel,
    entity: usize,
    dfused: &[f64],
    d_reduce: &mut Mat,
    d_entities: &mut Mat,
) {
    let k = model.kge.dim();
    let d_text = model.text.cols();
    let text_row = model.text.row(entity);
    let kge_row = model.kge.entities.row(entity);
    for (i, &df) in dfused.iter().enumerate() {
        if df == 0.0 {
            continue;
        }
        let rrow = d_reduce.row_mut(i);
        for (j, &t) in text_row.iter().enumerate() {
            rrow[j] += df * t;
        }
        for (j, &g) in kge_row.iter().enumerate() {
            rrow[d_text + j] += df * g;
        }
    }
    let erow = d_entities.row_mut(entity);
    for j in 0..k {
        let mut acc = 0.0;
        for (i, &df) in dfused.iter().enumerate() {
            acc += df * model.head.reduce.get(i, d_text + j);
        }
        erow[j] += acc;
    }
}

/// Trains a fused model on the train split: entity representation =
/// reduce(concat(frozen text, trainable KGE row)), optimized with the
/// negative-sampling loss under the chosen variant score. Entities lacking
/// a text embedding get a zero block and are counted.
pub fn fuse_and_train(
    variant: KgeVariant,
    ds: &Dataset,
    text: &[Option<Vec<f64>>],
    cfg: &FusionConfig,
) -> Result<(FusionModel, Vec<f64>)> {
    cfg.train.kge.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    if text.len() != ds.entity_count() {
        return Err(Error::Dim(format!(
            "text embeddings cover {} entities, dataset has {}",
            text.len(),
            ds.entity_count()
        )));
    }
    let d_text = text
        .iter()
        .flatten()
        .map(|v| v.len())
        .next()
        .ok_or_else(|| Error::Empty("no entity has a text embedding".into()))?;
    if text.iter().flatten().any(|v| v.len() != d_text) {
        return Err(Error::Dim("text embeddings have mixed lengths".into()));
    }
    // init and loop draws run on separate streams from the same seed, so a
    // fused run and a pure run of the same seed shuffle and corrupt
    // identically and stay comparable step for step
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let k = cfg.train.dim;
    let kge = KgeModel::new(variant, ds.entity_count(), ds.relation_count(), k, &mut init_rng);
    let mut missing = 0usize;
    let text_mat = Mat::from_fn(ds.entity_count(), d_text, |e, j| match &text[e] {
        Some(v) => v[j],
        None => 0.0,
    });
    for t in text {
        if t.is_none() {
            missing += 1;
        }
    }
    let reduce = match cfg.reduction_init {
        ReductionInit::Random => {
            let bound = 1.0 / ((d_text + k) as f64).sqrt();
            Mat::uniform(k, d_text + k, bound, &mut init_rng)
        }
        ReductionInit::SelectKge => {
            Mat::from_fn(k, d_text + k, |i, j| if j == d_text + i { 1.0 } else { 0.0 })
        }
    };
    let mut model = FusionModel {
        kge,
        text: text_mat,
        head: FusionHead { reduce },
        missing_text: missing,
    };

    let adam = AdamParams {
        learning_rate: cfg.train.learning_rate,
        weight_decay: cfg.train.weight_decay,
        ..AdamParams::default()
    };
    let mut slot = AdamSlot::new();
    let mut m_kge = model.kge.zero_grads();
    let mut v_kge = model.kge.zero_grads();
    let mut m_reduce = Mat::zeros(k, d_text + k);
    let mut v_reduce = Mat::zeros(k, d_text + k);
    let mut trace = Vec::with_capacity(cfg.train.epochs);

    for epoch in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.train.batch_size.max(1)) {
            let mut grads = model.kge.zero_grads();
            let mut d_reduce = Mat::zeros(k, d_text + k);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let triplet = &ds.train[i];
                let negatives = sample_negatives(
                    triplet,
                    cfg.train.kge.negatives,
                    model.kge.entity_count(),
                    &mut rng,
                )?;
                let h = triplet.head.index();
                let r = triplet.relation.index();
                let t = triplet.tail.index();
                let fused_h = model.entity_repr(h);
                let fused_t = model.entity_repr(t);
                let d_pos = model.kge.distance_repr(r, &fused_h, &fused_t);
                let fused_negs: Vec<(usize, Vec<f64>)> = negatives
                    .iter()
                    .map(|n| {
                        let e = n.corrupted_tail.index();
                        (e, model.entity_repr(e))
                    })
                    .collect();
                let neg_dists: Vec<f64> = fused_negs
                    .iter()
                    .map(|(_, f)| model.kge.distance_repr(r, &fused_h, f))
                    .collect();
                let (loss, pos_coeff, neg_coeffs) =
                    neg_log_sigmoid_margin_pair(d_pos, &neg_dists, &cfg.train.kge);
                batch_loss += loss;

                let (_, dxh, dxt) = model.kge.distance_grad_repr(
                    r,
                    &fused_h,
                    &fused_t,
                    scale * pos_coeff,
                    &mut grads,
                );
                route_fused_grad(&model, h, &dxh, &mut d_reduce, &mut grads.entities);
                route_fused_grad(&model, t, &dxt, &mut d_reduce, &mut grads.entities);
                for ((e, fused_n), &coeff) in fused_negs.iter().zip(&neg_coeffs) {
                    let (_, dxh, dxt) = model.kge.distance_grad_repr(
                        r,
                        &fused_h,
                        fused_n,
                        scale * coeff,
                        &mut grads,
                    );
                    route_fused_grad(&model, h, &dxh, &mut d_reduce, &mut grads.entities);
                    route_fused_grad(&model, *e, &dxt, &mut d_reduce, &mut grads.entities);
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "fusion loss diverged in epoch {epoch}"
                )));
            }
            slot.begin_step();
            slot.apply(&adam, &mut model.kge.entities, &grads.entities, &mut m_kge.entities, &mut v_kge.entities)?;
            slot.apply(&adam, &mut model.kge.relations, &grads.relations, &mut m_kge.relations, &mut v_kge.relations)?;
            slot.apply(&adam, &mut model.kge.normals, &grads.normals, &mut m_kge.normals, &mut v_kge.normals)?;
            slot.apply(&adam, &mut model.kge.projections, &grads.projections, &mut m_kge.projections, &mut v_kge.projections)?;
            if !cfg.freeze_reduction {
                slot.apply(&adam, &mut model.head.reduce, &d_reduce, &mut m_reduce, &mut v_reduce)?;
            }
            if model.kge.variant == KgeVariant::TransH {
                crate::kge::normalize_rows(&mut model.kge.normals);
            }
            epoch_loss += batch_loss * batch.len() as f64;
        }
        trace.push(epoch_loss / ds.train.len() as f64);
    }
    Ok((model, trace))
}

/// Per-entity text embeddings read off a trained tag encoder through the
/// tag↔entity identification; entities without tags get `None`.
pub fn entity_text_embeddings(state: &ModelState, ds: &Dataset) -> Result<Vec<Option<Vec<f64>>>> {
    let mut out = Vec::with_capacity(ds.entity_count());
    for e in 0..ds.entity_count() {
        match ds.tag_entity.tag_of(EntityId(e as u32)) {
            Some(tag) => out.push(Some(state.tag.encode(tag)?)),
            None => out.push(None),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::gradcheck::{fd_grad, max_rel_err, DEFAULT_STEP};
    use crate::kge::train_kge;
    use crate::objectives::KgeConfig;

    #[test]
    fn capability_matrix_matches_the_table() {
        use Task::*;
        let rows: [(Method, [bool; 6]); 8] = [
            // VT, TV, TrtHead, TrtTail, VRT, VRV
            (Method::TransE, [false, false, true, true, false, false]),
            (Method::TransH, [false, false, true, true, false, false]),
            (Method::TransR, [false, false, true, true, false, false]),
            (Method::Clip, [true, true, false, false, false, false]),
            (Method::ClipTransE, [true, true, true, true, true, true]),
            (Method::ClipTransH, [true, true, true, true, true, true]),
            (Method::ClipTransR, [true, true, true, true, true, true]),
            (Method::Ours, [true, true, true, true, true, true]),
        ];
        let order = [VT, TV, TrtHead, TrtTail, VRT, VRV];
        for (method, expected) in rows {
            for (task, &want) in order.iter().zip(&expected) {
                assert_eq!(method.supports(*task), want, "{method:?} {task:?}");
                if !want {
                    assert!(matches!(
                        method.check(*task),
                        Err(Error::Capability { .. })
                    ));
                }
            }
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("bert").is_err());
    }

    fn planted_text_dataset(seed: u64) -> (Dataset, Vec<Option<Vec<f64>>>) {
        let cfg = SynthConfig {
            entities: 60,
            relations: 6,
            triplets: 240,
            latent_dim: 8,
            noise_std: 0.12,
            seed,
            ..Default::default()
        };
        let (ds, planted) = crate::data::gen_synthetic_with_structure(&cfg).unwrap();
        // informative text embeddings: the planted latents themselves
        let text: Vec<Option<Vec<f64>>> = planted
            .entity_latents
            .iter()
            .map(|l| Some(l.clone()))
            .collect();
        (ds, text)
    }

    #[test]
    fn fusion_with_frozen_selector_equals_pure_kge_exactly() {
        let (ds, text) = planted_text_dataset(31);
        let train = KgeTrainConfig {
            dim: 8,
            learning_rate: 0.02,
            batch_size: 32,
            epochs: 8,
            seed: 77,
            kge: KgeConfig {
                margin: 2.0,
                negatives: 2,
                adversarial_temp: None,
            },
            ..Default::default()
        };
        // pure baseline with the same seed draws the identical init and
        // sampling sequence
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let mut pure = KgeModel::new(KgeVariant::TransE, ds.entity_count(), ds.relation_count(), 8, &mut rng);
        let pure_trace = train_kge(&mut pure, &ds, &train).unwrap();

        let fusion_cfg = FusionConfig {
            train,
            reduction_init: ReductionInit::SelectKge,
            freeze_reduction: true,
        };
        let (fused, fused_trace) = fuse_and_train(KgeVariant::TransE, &ds, &text, &fusion_cfg).unwrap();
        for (a, b) in pure_trace.iter().zip(&fused_trace) {
            assert!((a - b).abs() < 1e-12, "trace diverged: {a} vs {b}");
        }
        assert_eq!(fused.kge.entities, pure.entities);
        assert_eq!(fused.kge.relations, pure.relations);
    }

    #[derive(Clone)]
    struct FusionState {
        model: FusionModel,
        cfg: KgeConfig,
    }

    impl FusionState {
        fn eval(&self) -> f64 {
            let d_pos = self
                .model
                .kge
                .distance_repr(0, &self.model.entity_repr(0), &self.model.entity_repr(1));
            let d_neg = self
                .model
                .kge
                .distance_repr(0, &self.model.entity_repr(0), &self.model.entity_repr(2));
            neg_log_sigmoid_margin_pair(d_pos, &[d_neg], &self.cfg).0
        }
    }

    #[test]
    fn fusion_head_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kge = KgeModel::new(KgeVariant::TransE, 4, 2, 3, &mut rng);
        let text = Mat::uniform(4, 5, 1.0, &mut rng);
        let reduce = Mat::uniform(3, 8, 0.5, &mut rng);
        let state = FusionState {
            model: FusionModel {
                kge,
                text,
                head: FusionHead { reduce },
                missing_text: 0,
            },
            cfg: KgeConfig {
                margin: 1.0,
                negatives: 1,
                adversarial_temp: None,
            },
        };
        // analytic: positive pair plus one negative, via the routing path
        let mut grads = state.model.kge.zero_grads();
        let mut d_reduce = Mat::zeros(3, 8);
        let fused_h = state.model.entity_repr(0);
        let fused_t = state.model.entity_repr(1);
        let fused_n = state.model.entity_repr(2);
        let d_pos = state.model.kge.distance_repr(0, &fused_h, &fused_t);
        let d_neg = state.model.kge.distance_repr(0, &fused_h, &fused_n);
        let (_, pos_coeff, neg_coeffs) =
            neg_log_sigmoid_margin_pair(d_pos, &[d_neg], &state.cfg);
        let (_, dxh, dxt) =
            state
                .model
                .kge
                .distance_grad_repr(0, &fused_h, &fused_t, pos_coeff, &mut grads);
        route_fused_grad(&state.model, 0, &dxh, &mut d_reduce, &mut grads.entities);
        route_fused_grad(&state.model, 1, &dxt, &mut d_reduce, &mut grads.entities);
        let (_, dxh, dxt) =
            state
                .model
                .kge
                .distance_grad_repr(0, &fused_h, &fused_n, neg_coeffs[0], &mut grads);
        route_fused_grad(&state.model, 0, &dxh, &mut d_reduce, &mut grads.entities);
        route_fused_grad(&state.model, 2, &dxt, &mut d_reduce, &mut grads.entities);

        let fd_reduce = fd_grad(&state, DEFAULT_STEP, |s| &mut s.model.head.reduce, |s| s.eval());
        let fd_entities = fd_grad(&state, DEFAULT_STEP, |s| &mut s.model.kge.entities, |s| s.eval());
        assert!(max_rel_err(&d_reduce, &fd_reduce) < 1e-4);
        assert!(max_rel_err(&grads.entities, &fd_entities) < 1e-4);
    }

    #[test]
    fn two_stage_errors_on_unlinked_video() {
        let ds = gen_synthetic(&SynthConfig {
            entities: 30,
            relations: 4,
            triplets: 60,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kge = KgeModel::new(KgeVariant::TransE, ds.entity_count(), ds.relation_count(), 8, &mut rng);
        let cfg = TrainConfig {
            embed_dim: 8,
            hidden_dim: 8,
            epochs_stage1: 1,
            epochs_stage2: 1,
            batch_size: 16,
            batch_size_stage2: 16,
            seed: 1,
            ..Default::default()
        };
        let (clip, _) = clip_only_train(&ds, &cfg).unwrap();
        let p = TwoStagePipeline { kge, clip };
        let bad = VideoId(ds.video_count() as u32 + 5);
        assert!(p.rank_tags(&ds, bad, RelationId(0)).is_err());
        // a linked video ranks fine and deterministically
        let a = p.rank_tags(&ds, VideoId(0), RelationId(0)).unwrap();
        let b = p.rank_tags(&ds, VideoId(0), RelationId(0)).unwrap();
        assert_eq!(a, b);
    }
}
