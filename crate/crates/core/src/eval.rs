//! Ranking harness for the five tasks: video↔tag retrieval (VT, TV),
//! tag-relation-tag head and tail prediction (TRT), and the video inference
//! tasks (VRT, VRV).
//!
//! Every task reduces to the same shape: a set of queries, a fixed
//! candidate list, a per-query score vector, and a nonempty target set.
//! The rank of a query is 1 + the number of candidates strictly better
//! than the best-scoring target, so ties never flatter the model. Raw and
//! filtered protocols are always computed side by side; filtering removes
//! known-true candidates that are not targets of the query.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::data::{Dataset, EntityId, RelationId, TagId, VideoId};
use crate::error::{Error, Result};
use crate::kge::KgeModel;
use crate::linalg::cosine;
use crate::objectives::transe_distance;
use crate::training::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    VT,
    TV,
    TrtHead,
    TrtTail,
    VRT,
    VRV,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::VT,
        Task::TV,
        Task::TrtHead,
        Task::TrtTail,
        Task::VRT,
        Task::VRV,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::VT => "vt",
            Task::TV => "tv",
            Task::TrtHead => "trt_head",
            Task::TrtTail => "trt_tail",
            Task::VRT => "vrt",
            Task::VRV => "vrv",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether higher or lower scores are better for a candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// 1 + the number of candidates strictly better than the best-scoring
/// target. Multi-target queries use the best rank among their targets.
pub fn rank_of(scores: &[f64], targets: &BTreeSet<usize>, direction: Direction) -> Result<usize> {
    if targets.is_empty() {
        return Err(Error::Empty("rank target set".into()));
    }
    let best = targets
        .iter()
        .map(|&t| scores[t])
        .fold(f64::INFINITY * sign(direction), |acc, s| match direction {
            Direction::LowerBetter => acc.min(s),
            Direction::HigherBetter => acc.max(s),
        });
    let better = scores
        .iter()
        .filter(|&&s| match direction {
            Direction::LowerBetter => s < best,
            Direction::HigherBetter => s > best,
        })
        .count();
    Ok(1 + better)
}

fn sign(direction: Direction) -> f64 {
    match direction {
        Direction::LowerBetter => 1.0,
        Direction::HigherBetter => -1.0,
    }
}

/// Aggregates: mean rank and HITS@{1,3,10}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

pub fn metrics(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list".into()));
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mr: ranks.iter().sum::<usize>() as f64 / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
    })
}

/// Per-query ranks under both protocols plus the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub task: Task,
    pub raw_ranks: Vec<usize>,
    pub filtered_ranks: Vec<usize>,
    pub raw: Metrics,
    pub filtered: Metrics,
    pub queries: usize,
    pub skipped: usize,
}

/// One evaluation query: candidate scores, the target set, and candidates
/// the filtered protocol removes (always a superset-disjoint set from the
/// targets).
pub struct Query {
    pub scores: Vec<f64>,
    pub targets: BTreeSet<usize>,
    pub filter_out: BTreeSet<usize>,
}

/// Ranks a stream of queries under the raw and filtered protocols.
pub fn rank_queries(
    task: Task,
    direction: Direction,
    queries: Vec<Query>,
    skipped: usize,
) -> Result<RankResult> {
    if queries.is_empty() {
        return Err(Error::Empty(format!("no scorable queries for {task}")));
    }
    let mut raw_ranks = Vec::with_capacity(queries.len());
    let mut filtered_ranks = Vec::with_capacity(queries.len());
    for q in &queries {
        let raw = rank_of(&q.scores, &q.targets, direction)?;
        // filtered protocol: push removed candidates beyond reach
        let worst = match direction {
            Direction::LowerBetter => f64::INFINITY,
            Direction::HigherBetter => f64::NEG_INFINITY,
        };
        let mut scores = q.scores.clone();
        for &i in &q.filter_out {
            if !q.targets.contains(&i) {
                scores[i] = worst;
            }
        }
        let filtered = rank_of(&scores, &q.targets, direction)?;
        debug_assert!(filtered <= raw);
        raw_ranks.push(raw);
        filtered_ranks.push(filtered);
    }
    let raw = metrics(&raw_ranks)?;
    let filtered = metrics(&filtered_ranks)?;
    Ok(RankResult {
        task,
        queries: raw_ranks.len(),
        raw_ranks,
        filtered_ranks,
        raw,
        filtered,
        skipped,
    })
}

/// Known-true (head, relation) → tails and (relation, tail) → heads over
/// train ∪ test, for filtered ranking.
pub struct TruthIndex {
    tails: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    heads: BTreeMap<(RelationId, EntityId), BTreeSet<EntityId>>,
}

impl TruthIndex {
    pub fn new(ds: &Dataset) -> Self {
        let mut tails: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>> = BTreeMap::new();
        let mut heads: BTreeMap<(RelationId, EntityId), BTreeSet<EntityId>> = BTreeMap::new();
        for t in ds.all_triplets() {
            tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            heads.entry((t.relation, t.tail)).or_default().insert(t.head);
        }
        TruthIndex { tails, heads }
    }

    pub fn true_tails(&self, h: EntityId, r: RelationId) -> Option<&BTreeSet<EntityId>> {
        self.tails.get(&(h, r))
    }

    pub fn true_heads(&self, r: RelationId, t: EntityId) -> Option<&BTreeSet<EntityId>> {
        self.heads.get(&(r, t))
    }
}

/// Anything that scores an (h, r, t) substitution; implemented by the KGE
/// baselines, the joint model (through tag-encoder embeddings), and the
/// fusion variant. Lower is better.
pub trait TripletScorer {
    fn score_triplet(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64>;
}

impl TripletScorer for KgeModel {
    fn score_triplet(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        self.score(h, r, t)
    }
}

/// The joint model scores TRT through tag-encoder entity embeddings and
/// the trained relation table. Entities must be identified with tags.
pub struct JointTrtScorer<'a> {
    state: &'a ModelState,
    tag_embeddings: Vec<Option<Vec<f64>>>,
}

impl<'a> JointTrtScorer<'a> {
    pub fn new(state: &'a ModelState, ds: &Dataset) -> Result<Self> {
        let mut tag_embeddings = Vec::with_capacity(ds.entity_count());
        for e in 0..ds.entity_count() {
            let emb = match ds.tag_entity.tag_of(EntityId(e as u32)) {
                Some(tag) => Some(state.tag.encode(tag)?),
                None => None,
            };
            tag_embeddings.push(emb);
        }
        Ok(JointTrtScorer {
            state,
            tag_embeddings,
        })
    }
}

impl TripletScorer for JointTrtScorer<'_> {
    fn score_triplet(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        let missing = |e: EntityId| {
            Error::Config(format!(
                "entity {} has no tag and cannot be scored by the joint model",
                e.index()
            ))
        };
        let he = self.tag_embeddings[h.index()].as_ref().ok_or_else(|| missing(h))?;
        let te = self.tag_embeddings[t.index()].as_ref().ok_or_else(|| missing(t))?;
        let r = self.state.relations.embedding(r)?;
        transe_distance(he, &r, te)
    }
}

/// Video-to-tag retrieval: for each query video, rank all tags by cosine
/// similarity; the target is the video's own tag.
pub fn eval_vt(state: &ModelState, ds: &Dataset, videos: &[VideoId]) -> Result<RankResult> {
    if ds.tag_count() == 0 {
        return Err(Error::Empty("candidate tag set".into()));
    }
    let tag_embs: Vec<Vec<f64>> = (0..ds.tag_count())
        .map(|t| state.tag.encode(TagId(t as u32)))
        .collect::<Result<_>>()?;
    let mut queries = Vec::with_capacity(videos.len());
    for &v in videos {
        let zv = state.video.encode(&ds.videos[v.index()])?;
        let scores: Vec<f64> = tag_embs.iter().map(|zt| cosine(&zv, zt)).collect();
        queries.push(Query {
            scores,
            targets: BTreeSet::from([ds.videos[v.index()].tag.index()]),
            filter_out: BTreeSet::new(),
        });
    }
    rank_queries(Task::VT, Direction::HigherBetter, queries, 0)
}

/// Tag-to-video retrieval: for each tag borne by at least one query video,
/// rank the query videos; all videos bearing the tag are targets.
pub fn eval_tv(state: &ModelState, ds: &Dataset, videos: &[VideoId]) -> Result<RankResult> {
    if videos.is_empty() {
        return Err(Error::Empty("candidate video set".into()));
    }
    let video_embs: Vec<Vec<f64>> = videos
        .iter()
        .map(|&v| state.video.encode(&ds.videos[v.index()]))
        .collect::<Result<_>>()?;
    let mut by_tag: BTreeMap<TagId, BTreeSet<usize>> = BTreeMap::new();
    for (i, &v) in videos.iter().enumerate() {
        by_tag.entry(ds.videos[v.index()].tag).or_default().insert(i);
    }
    let mut queries = Vec::new();
    for (tag, targets) in by_tag {
        let zt = state.tag.encode(tag)?;
        let scores: Vec<f64> = video_embs.iter().map(|zv| cosine(&zt, zv)).collect();
        queries.push(Query {
            scores,
            targets,
            filter_out: BTreeSet::new(),
        });
    }
    rank_queries(Task::TV, Direction::HigherBetter, queries, 0)
}

/// Head/tail entity prediction over the test triplets with any scorer.
/// Returns (head result, tail result).
pub fn eval_trt(
    scorer: &dyn TripletScorer,
    ds: &Dataset,
    truth: &TruthIndex,
) -> Result<(RankResult, RankResult)> {
    if ds.test.is_empty() {
        return Err(Error::Empty("test triplets".into()));
    }
    let ne = ds.entity_count();
    let mut head_queries = Vec::with_capacity(ds.test.len());
    let mut tail_queries = Vec::with_capacity(ds.test.len());
    for t in &ds.test {
        let mut tail_scores = Vec::with_capacity(ne);
        let mut head_scores = Vec::with_capacity(ne);
        for e in 0..ne {
            let e = EntityId(e as u32);
            tail_scores.push(scorer.score_triplet(t.head, t.relation, e)?);
            head_scores.push(scorer.score_triplet(e, t.relation, t.tail)?);
        }
        let tail_filter: BTreeSet<usize> = truth
            .true_tails(t.head, t.relation)
            .map(|s| s.iter().map(|e| e.index()).collect())
            .unwrap_or_default();
        let head_filter: BTreeSet<usize> = truth
            .true_heads(t.relation, t.tail)
            .map(|s| s.iter().map(|e| e.index()).collect())
            .unwrap_or_default();
        tail_queries.push(Query {
            scores: tail_scores,
            targets: BTreeSet::from([t.tail.index()]),
            filter_out: tail_filter,
        });
        head_queries.push(Query {
            scores: head_scores,
            targets: BTreeSet::from([t.head.index()]),
            filter_out: head_filter,
        });
    }
    let head = rank_queries(Task::TrtHead, Direction::LowerBetter, head_queries, 0)?;
    let tail = rank_queries(Task::TrtTail, Direction::LowerBetter, tail_queries, 0)?;
    Ok((head, tail))
}

/// The (video, relation) queries implied by the test split: one query per
/// link-table head video and relation under which that head has test
/// triplets. Targets are the test tails of that (head, relation).
pub struct VideoRelationQuery {
    pub video: VideoId,
    pub relation: RelationId,
    pub target_tails: BTreeSet<EntityId>,
    pub known_tails: BTreeSet<EntityId>,
}

pub fn video_relation_queries(ds: &Dataset, truth: &TruthIndex) -> Vec<VideoRelationQuery> {
    let mut test_tails: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>> = BTreeMap::new();
    for t in &ds.test {
        test_tails
            .entry((t.head, t.relation))
            .or_default()
            .insert(t.tail);
    }
    let mut queries = Vec::new();
    for ((head, relation), targets) in test_tails {
        let known = truth
            .true_tails(head, relation)
            .cloned()
            .unwrap_or_default();
        for &video in ds.links.videos_of(head) {
            queries.push(VideoRelationQuery {
                video,
                relation,
                target_tails: targets.clone(),
                known_tails: known.clone(),
            });
        }
    }
    queries
}

/// Video-relation-tag: rank candidate tail tags by distance between
/// `z_V + T_r` and the tag embedding. Candidates are the tags of entities
/// occurring as tails anywhere in the dataset.
pub fn eval_vrt(state: &ModelState, ds: &Dataset, truth: &TruthIndex) -> Result<RankResult> {
    let candidates = tail_tag_candidates(ds);
    if candidates.is_empty() {
        return Err(Error::Empty("tail tag candidates".into()));
    }
    let cand_embs: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&(_, tag)| state.tag.encode(tag))
        .collect::<Result<_>>()?;
    let index_of: BTreeMap<EntityId, usize> = candidates
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
        let zv = state.video.encode(&ds.videos[q.video.index()])?;
        let r = state.relations.embedding(q.relation)?;
        let shifted: Vec<f64> = zv.iter().zip(&r).map(|(a, b)| a + b).collect();
        let scores: Vec<f64> = cand_embs
            .iter()
            .map(|zt| {
                shifted
                    .iter()
                    .zip(zt)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
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

/// How VRV compares the shifted query embedding `z_V + T_r` against each
/// candidate video embedding. Distance is the direct translational
/// reading; cosine matches the retrieval convention used by the
/// content tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VrvScore {
    Distance,
    Cosine,
}

/// Video-relation-video: rank all videos against `z_V + T_r`; the true
/// tails' linked videos are the targets. Queries whose tails have no
/// linked videos are skipped.
pub fn eval_vrv(state: &ModelState, ds: &Dataset, truth: &TruthIndex) -> Result<RankResult> {
    eval_vrv_scored(state, ds, truth, VrvScore::Distance)
}

pub fn eval_vrv_scored(
    state: &ModelState,
    ds: &Dataset,
    truth: &TruthIndex,
    score: VrvScore,
) -> Result<RankResult> {
    if ds.videos.is_empty() {
        return Err(Error::Empty("candidate video set".into()));
    }
    let video_embs: Vec<Vec<f64>> = ds
        .videos
        .iter()
        .map(|v| state.video.encode(v))
        .collect::<Result<_>>()?;

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
        let zv = &video_embs[q.video.index()];
        let r = state.relations.embedding(q.relation)?;
        let shifted: Vec<f64> = zv.iter().zip(&r).map(|(a, b)| a + b).collect();
        let scores: Vec<f64> = video_embs
            .iter()
            .map(|zc| match score {
                VrvScore::Distance => shifted
                    .iter()
                    .zip(zc)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                VrvScore::Cosine => cosine(&shifted, zc),
            })
            .collect();
        let filter_out = videos_of(&q.known_tails);
        queries.push(Query {
            scores,
            targets,
            filter_out,
        });
    }
    let direction = match score {
        VrvScore::Distance => Direction::LowerBetter,
        VrvScore::Cosine => Direction::HigherBetter,
    };
    rank_queries(Task::VRV, direction, queries, skipped)
}

/// Entities appearing as a tail anywhere, with their tags, in entity order.
pub fn tail_tag_candidates(ds: &Dataset) -> Vec<(EntityId, TagId)> {
    let tails: BTreeSet<EntityId> = ds.all_triplets().map(|t| t.tail).collect();
    tails
        .into_iter()
        .filter_map(|e| ds.tag_entity.tag_of(e).map(|tag| (e, tag)))
        .collect()
}

/// Head-entity videos for TRT-style planted checks; convenience used by
/// tests and the CLI to pick evaluation video sets.
pub fn video_ids(ds: &Dataset) -> Vec<VideoId> {
    ds.videos.iter().map(|v| v.id).collect()
}

/// Seeded train/test split of the dataset's videos, mirroring the triplet
/// split machinery.
pub fn video_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Vec<VideoId>, Vec<VideoId>)> {
    let (train, test) = crate::data::split_ids(ds.video_count(), fraction, seed)?;
    Ok((
        train.into_iter().map(|i| VideoId(i as u32)).collect(),
        test.into_iter().map(|i| VideoId(i as u32)).collect(),
    ))
}

/// Sanity helper: the expected mean rank of a uniformly random ranker.
pub fn uniform_mr(candidates: usize) -> f64 {
    (candidates as f64 + 1.0) / 2.0
}
