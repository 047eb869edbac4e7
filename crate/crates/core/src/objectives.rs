//! The three training objectives and their weighted combination.
//!
//! - tag classification: `L_TAG = -log softmax(z_V · W2ᵀ)[target]`
//! - symmetric contrastive alignment over a batch of (video, tag) pairs:
//!   both softmax directions of the pairwise similarity matrix divided by a
//!   learnable temperature τ
//! - translational graph loss with sampled negatives:
//!   `L_KG = -log σ(γ - d(h+r,t)) - Σ_i w_i log σ(d(h+r,t'_i) - γ)`
//!   with `d` the Euclidean norm of `h + r - t` and uniform weights
//!   `w_i = 1/n` by default
//!
//! Each loss comes in a value-only form and a `_with_grad` form returning
//! analytic gradients; the latter are checked against finite differences in
//! the test suites. Probabilities are clamped at 1e-12 and every softmax and
//! log-sum-exp subtracts its max.

use serde::{Deserialize, Serialize};

use crate::data::TagId;
use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dot, l2_norm, log_sum_exp, neg_log_sigmoid, sigmoid, softmax_in_place, Mat,
};

pub const PROB_FLOOR: f64 = 1e-12;

/// Learnable temperature, stored and optimized as ln τ so τ stays positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    /// 1×1 matrix holding ln τ.
    pub log_tau: Mat,
    pub similarity: Similarity,
}

impl ClipParams {
    pub fn new(tau: f64, similarity: Similarity) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        Ok(ClipParams {
            log_tau: Mat::from_vec(1, 1, vec![tau.ln()]),
            similarity,
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.get(0, 0).exp()
    }
}

/// How batch similarities are computed inside the contrastive loss. The
/// equation form uses raw dot products; cosine is available for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
    Cosine,
}

/// Classification layer over the embedding: one row per tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagClassifier {
    /// T×k
    pub weight: Mat,
}

impl TagClassifier {
    pub fn new(tag_count: usize, embed_dim: usize, rng: &mut impl rand::Rng) -> Self {
        let bound = 1.0 / (embed_dim as f64).sqrt();
        TagClassifier {
            weight: Mat::uniform(tag_count, embed_dim, bound, rng),
        }
    }

    pub fn tag_count(&self) -> usize {
        self.weight.rows()
    }
}

/// Margin and negative-sample count for the graph loss. The norm order is
/// fixed at p = 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgeConfig {
    pub margin: f64,
    pub negatives: usize,
    /// Self-adversarial negative weighting temperature; `None` keeps the
    /// printed uniform 1/n weights.
    pub adversarial_temp: Option<f64>,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            margin: 4.0,
            negatives: 5,
            adversarial_temp: None,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if self.negatives < 1 {
            return Err(Error::Config("need at least one negative sample".into()));
        }
        Ok(())
    }
}

/// λ1, λ2, λ3 for the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLossWeights {
    pub kg: f64,
    pub clip: f64,
    pub tag: f64,
}

impl Default for JointLossWeights {
    fn default() -> Self {
        JointLossWeights {
            kg: 0.35,
            clip: 0.35,
            tag: 0.3,
        }
    }
}

impl JointLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kg", self.kg), ("clip", self.clip), ("tag", self.tag)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// s = softmax(z · Wᵀ), entries in [0,1] summing to 1.
pub fn tag_scores(z: &[f64], clf: &TagClassifier) -> Result<Vec<f64>> {
    if z.len() != clf.weight.cols() {
        return Err(Error::Dim(format!(
            "classifier expects embedding size {}, got {}",
            clf.weight.cols(),
            z.len()
        )));
    }
    let mut s = clf.weight.matvec(z);
    softmax_in_place(&mut s);
    Ok(s)
}

/// Cross-entropy against the single target tag: -log s[target].
pub fn loss_tag(s: &[f64], target: TagId) -> Result<f64> {
    let t = target.check(s.len())?.index();
    Ok(-s[t].max(PROB_FLOOR).ln())
}

/// Classification loss with gradients w.r.t. the embedding and the
/// classifier weight. Both gradients are multiplied by `scale` (the weight
/// of this sample in the batch objective); the returned loss is unscaled.
pub fn loss_tag_with_grad(
    z: &[f64],
    clf: &TagClassifier,
    target: TagId,
    scale: f64,
    d_weight: &mut Mat,
) -> Result<(f64, Vec<f64>)> {
    let s = tag_scores(z, clf)?;
    let t = target.check(s.len())?.index();
    let loss = -s[t].max(PROB_FLOOR).ln();
    // d loss / d logits = s - onehot(target)
    let mut dz = vec![0.0; z.len()];
    for (j, &sj) in s.iter().enumerate() {
        let dlogit = scale * (if j == t { sj - 1.0 } else { sj });
        axpy(&mut dz, clf.weight.row(j), dlogit);
        axpy(d_weight.row_mut(j), z, dlogit);
    }
    Ok((loss, dz))
}

fn similarity_matrix(
    zv: &[Vec<f64>],
    zt: &[Vec<f64>],
    params: &ClipParams,
) -> (Mat, f64) {
    let b = zv.len();
    let tau = params.tau();
    let sim = Mat::from_fn(b, b, |i, j| match params.similarity {
        Similarity::Dot => dot(&zv[i], &zt[j]) / tau,
        Similarity::Cosine => crate::linalg::cosine(&zv[i], &zt[j]) / tau,
    });
    (sim, tau)
}

/// Symmetric two-direction contrastive loss over a batch where row i of
/// `zv` pairs with row i of `zt`.
pub fn loss_clip(zv: &[Vec<f64>], zt: &[Vec<f64>], params: &ClipParams) -> Result<f64> {
    if zv.is_empty() {
        return Err(Error::Empty("contrastive batch".into()));
    }
    if zv.len() != zt.len() {
        return Err(Error::Dim(format!(
            "batch sides differ: {} videos vs {} tags",
            zv.len(),
            zt.len()
        )));
    }
    let b = zv.len();
    let (sim, _) = similarity_matrix(zv, zt, params);
    let mut loss = 0.0;
    let mut col = vec![0.0; b];
    for i in 0..b {
        loss += log_sum_exp(sim.row(i)) - sim.get(i, i);
        for (j, c) in col.iter_mut().enumerate() {
            *c = sim.get(j, i);
        }
        loss += log_sum_exp(&col) - sim.get(i, i);
    }
    Ok(loss / b as f64)
}

/// Contrastive loss with gradients w.r.t. every embedding row and ln τ.
pub fn loss_clip_with_grad(
    zv: &[Vec<f64>],
    zt: &[Vec<f64>],
    params: &ClipParams,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    let loss = loss_clip(zv, zt, params)?;
    let b = zv.len();
    let (sim, tau) = similarity_matrix(zv, zt, params);
    let inv_b = 1.0 / b as f64;

    // dL/dS = (1/B)(p_row - I) + (1/B)(p_col - I)
    let mut dsim = Mat::zeros(b, b);
    for i in 0..b {
        let mut p = sim.row(i).to_vec();
        softmax_in_place(&mut p);
        for j in 0..b {
            dsim.set(i, j, inv_b * (p[j] - if i == j { 1.0 } else { 0.0 }));
        }
    }
    for j in 0..b {
        let mut p: Vec<f64> = (0..b).map(|i| sim.get(i, j)).collect();
        softmax_in_place(&mut p);
        for i in 0..b {
            let v = dsim.get(i, j) + inv_b * (p[i] - if i == j { 1.0 } else { 0.0 });
            dsim.set(i, j, v);
        }
    }

    let k = zv[0].len();
    let mut dzv = vec![vec![0.0; k]; b];
    let mut dzt = vec![vec![0.0; k]; b];
    let mut dlog_tau = 0.0;
    for i in 0..b {
        for j in 0..b {
            let g = dsim.get(i, j);
            if g == 0.0 {
                continue;
            }
            // dS/d(ln τ) = -S
            dlog_tau -= g * sim.get(i, j);
            match params.similarity {
                Similarity::Dot => {
                    axpy(&mut dzv[i], &zt[j], g / tau);
                    axpy(&mut dzt[j], &zv[i], g / tau);
                }
                Similarity::Cosine => {
                    let nv = l2_norm(&zv[i]);
                    let nt = l2_norm(&zt[j]);
                    if nv == 0.0 || nt == 0.0 {
                        continue;
                    }
                    let c = dot(&zv[i], &zt[j]) / (nv * nt);
                    for d in 0..k {
                        dzv[i][d] += g / tau * (zt[j][d] / (nv * nt) - c * zv[i][d] / (nv * nv));
                        dzt[j][d] += g / tau * (zv[i][d] / (nv * nt) - c * zt[j][d] / (nt * nt));
                    }
                }
            }
        }
    }
    Ok((loss, dzv, dzt, dlog_tau))
}

/// d(h+r, t) = ‖h + r − t‖₂
pub fn transe_distance(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(Error::Dim(format!(
            "embedding sizes differ: h={}, r={}, t={}",
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(h.iter()
        .zip(r)
        .zip(t)
        .map(|((&a, &b), &c)| {
            let d = a + b - c;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Negative weights: uniform 1/n, or a detached softmax over plausibility
/// when an adversarial temperature is configured.
fn negative_weights(neg_dists: &[f64], cfg: &KgeConfig) -> Vec<f64> {
    match cfg.adversarial_temp {
        None => vec![1.0 / neg_dists.len() as f64; neg_dists.len()],
        Some(alpha) => {
            let mut w: Vec<f64> = neg_dists.iter().map(|&d| -alpha * d).collect();
            softmax_in_place(&mut w);
            w
        }
    }
}

/// Loss value plus dL/dd coefficients for one positive distance and its
/// negatives. Shared by the joint objective and every baseline score
/// function: only the distance and its gradient differ between variants.
pub fn neg_log_sigmoid_margin_pair(
    d_pos: f64,
    neg_dists: &[f64],
    cfg: &KgeConfig,
) -> (f64, f64, Vec<f64>) {
    let weights = negative_weights(neg_dists, cfg);
    let mut loss = neg_log_sigmoid(cfg.margin - d_pos);
    let d_pos_coeff = sigmoid(d_pos - cfg.margin);
    let mut neg_coeffs = Vec::with_capacity(neg_dists.len());
    for (&d, &w) in neg_dists.iter().zip(&weights) {
        loss += w * neg_log_sigmoid(d - cfg.margin);
        neg_coeffs.push(-w * sigmoid(cfg.margin - d));
    }
    (loss, d_pos_coeff, neg_coeffs)
}

/// Negative-sampling graph loss for one positive triplet given the
/// embeddings of `n` corrupted tails.
pub fn loss_kg(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    negs: &[Vec<f64>],
    cfg: &KgeConfig,
) -> Result<f64> {
    if negs.is_empty() {
        return Err(Error::Empty("negative samples".into()));
    }
    let d_pos = transe_distance(h, r, t)?;
    let neg_dists: Vec<f64> = negs
        .iter()
        .map(|tn| transe_distance(h, r, tn))
        .collect::<Result<_>>()?;
    Ok(neg_log_sigmoid_margin_pair(d_pos, &neg_dists, cfg).0)
}

/// Graph loss with gradients for h, r, t and every corrupted tail. The
/// adversarial weights, when enabled, are treated as constants.
#[allow(clippy::type_complexity)]
pub fn loss_kg_with_grad(
    h: &[f64],
    r: &[f64],
    t: &[f64],
    negs: &[Vec<f64>],
    cfg: &KgeConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    if negs.is_empty() {
        return Err(Error::Empty("negative samples".into()));
    }
    let k = h.len();
    let d_pos = transe_distance(h, r, t)?;
    let neg_dists: Vec<f64> = negs
        .iter()
        .map(|tn| transe_distance(h, r, tn))
        .collect::<Result<_>>()?;
    let (loss, d_pos_coeff, neg_coeffs) = neg_log_sigmoid_margin_pair(d_pos, &neg_dists, cfg);

    let mut dh = vec![0.0; k];
    let mut dr = vec![0.0; k];
    let mut dt = vec![0.0; k];
    let mut dnegs = vec![vec![0.0; k]; negs.len()];

    // dd/dh = (h+r-t)/d, undefined at d = 0 where we use subgradient 0
    let u: Vec<f64> = (0..k).map(|i| h[i] + r[i] - t[i]).collect();
    if d_pos > PROB_FLOOR {
        let g = d_pos_coeff / d_pos;
        axpy(&mut dh, &u, g);
        axpy(&mut dr, &u, g);
        axpy(&mut dt, &u, -g);
    }
    for (i, tn) in negs.iter().enumerate() {
        let un: Vec<f64> = (0..k).map(|j| h[j] + r[j] - tn[j]).collect();
        let d = neg_dists[i];
        if d <= PROB_FLOOR {
            continue;
        }
        let g = neg_coeffs[i] / d;
        axpy(&mut dh, &un, g);
        axpy(&mut dr, &un, g);
        axpy(&mut dnegs[i], &un, -g);
    }
    Ok((loss, dh, dr, dt, dnegs))
}

/// λ1·L_KG + λ2·L_CLIP + λ3·L_TAG
pub fn loss_joint(l_kg: f64, l_clip: f64, l_tag: f64, w: &JointLossWeights) -> f64 {
    w.kg * l_kg + w.clip * l_clip + w.tag * l_tag
}
