//! Standalone knowledge-graph embedding baselines: entity/relation tables
//! with TransE, TransH or TransR scoring, uniform tail corruption, and a
//! seeded training loop over the negative-sampling loss.
//!
//! Scores are distances (lower is better):
//! - TransE: ‖h + r − t‖₂
//! - TransH: ‖h⊥ + r − t⊥‖₂ with x⊥ = x − (w_rᵀx)·w_r, w_r kept unit-norm
//! - TransR: ‖M_r·h + r − M_r·t‖₂

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EntityId, Triplet};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, l2_norm, Mat};
use crate::objectives::{neg_log_sigmoid_margin_pair, KgeConfig};
use crate::training::adam::{AdamParams, AdamSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeVariant {
    TransE,
    TransH,
    TransR,
}

impl KgeVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "transe" => Ok(KgeVariant::TransE),
            "transh" => Ok(KgeVariant::TransH),
            "transr" => Ok(KgeVariant::TransR),
            other => Err(Error::Config(format!("unknown KGE variant: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KgeVariant::TransE => "transe",
            KgeVariant::TransH => "transh",
            KgeVariant::TransR => "transr",
        }
    }
}

/// Entity and relation tables plus the per-variant relation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgeModel {
    pub variant: KgeVariant,
    /// |E|×k
    pub entities: Mat,
    /// |R|×k
    pub relations: Mat,
    /// TransH hyperplane normals, |R|×k with unit rows; 0×0 otherwise.
    pub normals: Mat,
    /// TransR projection matrices, one k×k matrix flattened per row; 0×0
    /// otherwise. Initialized to the identity.
    pub projections: Mat,
}

/// Gradient (or Adam moment) storage shaped like a [`KgeModel`].
#[derive(Debug, Clone, Default)]
pub struct KgeGrads {
    pub entities: Mat,
    pub relations: Mat,
    pub normals: Mat,
    pub projections: Mat,
}

impl KgeModel {
    pub fn new_seeded(
        variant: KgeVariant,
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(variant, entity_count, relation_count, dim, &mut rng)
    }

    pub fn new(
        variant: KgeVariant,
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let entities = Mat::uniform(entity_count, dim, bound, rng);
        let relations = Mat::uniform(relation_count, dim, bound, rng);
        let mut normals = Mat::zeros(0, 0);
        let mut projections = Mat::zeros(0, 0);
        match variant {
            KgeVariant::TransE => {}
            KgeVariant::TransH => {
                normals = Mat::uniform(relation_count, dim, 1.0, rng);
                normalize_rows(&mut normals);
            }
            KgeVariant::TransR => {
                projections = Mat::zeros(relation_count, dim * dim);
                for r in 0..relation_count {
                    for i in 0..dim {
                        projections.set(r, i * dim + i, 1.0);
                    }
                }
            }
        }
        KgeModel {
            variant,
            entities,
            relations,
            normals,
            projections,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.rows()
    }

    pub fn zero_grads(&self) -> KgeGrads {
        KgeGrads {
            entities: Mat::zeros(self.entities.rows(), self.entities.cols()),
            relations: Mat::zeros(self.relations.rows(), self.relations.cols()),
            normals: Mat::zeros(self.normals.rows(), self.normals.cols()),
            projections: Mat::zeros(self.projections.rows(), self.projections.cols()),
        }
    }

    fn transform(&self, r: usize, x: &[f64]) -> Vec<f64> {
        match self.variant {
            KgeVariant::TransE => x.to_vec(),
            KgeVariant::TransH => {
                let w = self.normals.row(r);
                let wx = dot(w, x);
                x.iter().zip(w).map(|(&xi, &wi)| xi - wx * wi).collect()
            }
            KgeVariant::TransR => {
                let k = self.dim();
                let m = self.projections.row(r);
                (0..k).map(|i| dot(&m[i * k..(i + 1) * k], x)).collect()
            }
        }
    }

    /// Variant distance for arbitrary entity-space representations. The
    /// fusion baseline routes fused vectors through here.
    pub fn distance_repr(&self, r: usize, xh: &[f64], xt: &[f64]) -> f64 {
        let fh = self.transform(r, xh);
        let ft = self.transform(r, xt);
        let rel = self.relations.row(r);
        (0..fh.len())
            .map(|i| {
                let d = fh[i] + rel[i] - ft[i];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Distance (lower is better) for a triplet of table ids.
    pub fn score(&self, h: EntityId, r: crate::data::RelationId, t: EntityId) -> Result<f64> {
        let h = h.check(self.entity_count())?.index();
        let r = r.check(self.relation_count())?.index();
        let t = t.check(self.entity_count())?.index();
        Ok(self.distance_repr(r, self.entities.row(h), self.entities.row(t)))
    }

    /// Adds `coeff · ∂d/∂θ` for every parameter the distance touches, and
    /// returns the gradients w.r.t. the two entity-space representations so
    /// the caller can route them (entity rows, or a fusion head).
    pub fn distance_grad_repr(
        &self,
        r: usize,
        xh: &[f64],
        xt: &[f64],
        coeff: f64,
        grads: &mut KgeGrads,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let k = self.dim();
        let fh = self.transform(r, xh);
        let ft = self.transform(r, xt);
        let rel = self.relations.row(r);
        let u: Vec<f64> = (0..k).map(|i| fh[i] + rel[i] - ft[i]).collect();
        let d = l2_norm(&u);
        let mut dxh = vec![0.0; k];
        let mut dxt = vec![0.0; k];
        if d <= 1e-12 {
            return (d, dxh, dxt);
        }
        // g = coeff · dd/du
        let g: Vec<f64> = u.iter().map(|&ui| coeff * ui / d).collect();
        axpy(grads.relations.row_mut(r), &g, 1.0);
        match self.variant {
            KgeVariant::TransE => {
                axpy(&mut dxh, &g, 1.0);
                axpy(&mut dxt, &g, -1.0);
            }
            KgeVariant::TransH => {
                let w = self.normals.row(r);
                let wg = dot(w, &g);
                // (I - wwᵀ) g
                for i in 0..k {
                    dxh[i] += g[i] - wg * w[i];
                    dxt[i] -= g[i] - wg * w[i];
                }
                // u depends on w through -(wᵀy)w with y = xh - xt
                let y: Vec<f64> = (0..k).map(|i| xh[i] - xt[i]).collect();
                let wy = dot(w, &y);
                let gw = grads.normals.row_mut(r);
                for i in 0..k {
                    gw[i] += -(y[i] * wg + wy * g[i]);
                }
            }
            KgeVariant::TransR => {
                let m = self.projections.row(r);
                for i in 0..k {
                    let row = &m[i * k..(i + 1) * k];
                    axpy(&mut dxh, row, g[i]);
                    axpy(&mut dxt, row, -g[i]);
                }
                let y: Vec<f64> = (0..k).map(|i| xh[i] - xt[i]).collect();
                let gm = grads.projections.row_mut(r);
                for i in 0..k {
                    for j in 0..k {
                        gm[i * k + j] += g[i] * y[j];
                    }
                }
            }
        }
        (d, dxh, dxt)
    }
}

pub fn normalize_rows(m: &mut Mat) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = l2_norm(row);
        if n > 0.0 {
            for x in row {
                *x /= n;
            }
        }
    }
}

/// A corrupted triplet: the original fact with its tail replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeSample {
    pub triplet: Triplet,
    pub corrupted_tail: EntityId,
}

/// Draws `n` corrupted tails uniformly from E \ {true tail}, i.i.d. with
/// replacement.
pub fn sample_negatives(
    triplet: &Triplet,
    n: usize,
    entity_count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<NegativeSample>> {
    if entity_count < 2 {
        return Err(Error::Config(
            "negative sampling needs at least 2 entities".into(),
        ));
    }
    Ok((0..n)
        .map(|_| {
            let raw = rng.gen_range(0..entity_count - 1) as u32;
            let tail = if raw >= triplet.tail.0 { raw + 1 } else { raw };
            NegativeSample {
                triplet: *triplet,
                corrupted_tail: EntityId(tail),
            }
        })
        .collect())
}

/// Optimizer settings for the standalone baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgeTrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub kge: KgeConfig,
}

impl Default for KgeTrainConfig {
    fn default() -> Self {
        KgeTrainConfig {
            dim: 128,
            learning_rate: 1e-4,
            batch_size: 512,
            epochs: 100,
            weight_decay: 0.0,
            seed: 0,
            kge: KgeConfig::default(),
        }
    }
}

impl KgeTrainConfig {
    /// SHA-256 over the canonical JSON form, recorded in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(&json));
        out
    }
}

/// Accumulates the loss and gradients of one positive triplet with its
/// sampled negatives, reading entity representations from the tables.
fn triplet_loss_grad(
    model: &KgeModel,
    triplet: &Triplet,
    negatives: &[NegativeSample],
    cfg: &KgeConfig,
    scale: f64,
    grads: &mut KgeGrads,
) -> f64 {
    let h = triplet.head.index();
    let r = triplet.relation.index();
    let t = triplet.tail.index();
    let xh = model.entities.row(h).to_vec();

    let d_pos = model.distance_repr(r, &xh, model.entities.row(t));
    let neg_dists: Vec<f64> = negatives
        .iter()
        .map(|n| model.distance_repr(r, &xh, model.entities.row(n.corrupted_tail.index())))
        .collect();
    let (loss, d_pos_coeff, neg_coeffs) =
        neg_log_sigmoid_margin_pair(d_pos, &neg_dists, cfg);

    let (_, dxh, dxt) =
        model.distance_grad_repr(r, &xh, model.entities.row(t), scale * d_pos_coeff, grads);
    axpy(grads.entities.row_mut(h), &dxh, 1.0);
    axpy(grads.entities.row_mut(t), &dxt, 1.0);
    for (n, &coeff) in negatives.iter().zip(&neg_coeffs) {
        let tn = n.corrupted_tail.index();
        let (_, dxh, dxt) =
            model.distance_grad_repr(r, &xh, model.entities.row(tn), scale * coeff, grads);
        axpy(grads.entities.row_mut(h), &dxh, 1.0);
        axpy(grads.entities.row_mut(tn), &dxt, 1.0);
    }
    loss
}

/// Trains the model on the train split; returns the per-epoch mean loss.
pub fn train_kge(
    model: &mut KgeModel,
    dataset: &Dataset,
    cfg: &KgeTrainConfig,
) -> Result<Vec<f64>> {
    cfg.kge.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Empty("train split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamParams {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamParams::default()
    };
    let mut slot = AdamSlot::new();
    let mut moments_m = model.zero_grads();
    let mut moments_v = model.zero_grads();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let triplet = &dataset.train[i];
                let negatives = sample_negatives(
                    triplet,
                    cfg.kge.negatives,
                    model.entity_count(),
                    &mut rng,
                )?;
                batch_loss +=
                    triplet_loss_grad(model, triplet, &negatives, &cfg.kge, scale, &mut grads);
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "KGE loss diverged in epoch {epoch}"
                )));
            }
            slot.begin_step();
            slot.apply(&adam, &mut model.entities, &grads.entities, &mut moments_m.entities, &mut moments_v.entities)?;
            slot.apply(&adam, &mut model.relations, &grads.relations, &mut moments_m.relations, &mut moments_v.relations)?;
            slot.apply(&adam, &mut model.normals, &grads.normals, &mut moments_m.normals, &mut moments_v.normals)?;
            slot.apply(&adam, &mut model.projections, &grads.projections, &mut moments_m.projections, &mut moments_v.projections)?;
            if model.variant == KgeVariant::TransH {
                normalize_rows(&mut model.normals);
            }
            epoch_loss += batch_loss * batch.len() as f64;
        }
        trace.push(epoch_loss / dataset.train.len() as f64);
    }
    Ok(trace)
}
