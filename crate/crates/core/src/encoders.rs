//! Video and tag encoders ending in a shared-shape projection head, plus the
//! relation embedding table.
//!
//! The projection head computes `z = act(W·C + b)` where `C` is the encoder
//! hidden state, `W` is k×H and `b` is length k. Two desk-scale encoder
//! bodies are provided behind one interface: a per-item lookup table of
//! hidden states, and a one-layer tanh MLP over the concatenated modality
//! features. Backward passes are hand-written and verified against central
//! finite differences in the test suites.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RelationId, TagId, VideoRecord};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => crate::linalg::sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// d act / d pre, expressed through the output value.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map plus activation taking a hidden state into the shared
/// k-dimensional embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    /// k×H
    pub weight: Mat,
    /// 1×k
    pub bias: Mat,
    pub activation: Activation,
}

#[derive(Debug, Clone, Default)]
pub struct HeadGrads {
    pub weight: Mat,
    pub bias: Mat,
}

impl ProjectionHead {
    pub fn new(embed_dim: usize, hidden_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        ProjectionHead {
            weight: Mat::uniform(embed_dim, hidden_dim, bound, rng),
            bias: Mat::uniform(1, embed_dim, bound, rng),
            activation,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.cols()
    }

    /// z = act(W·C + b)
    pub fn project(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        if hidden.len() != self.hidden_dim() {
            return Err(Error::Dim(format!(
                "projection head expects hidden size {}, got {}",
                self.hidden_dim(),
                hidden.len()
            )));
        }
        let mut z = self.weight.matvec(hidden);
        for (zi, &b) in z.iter_mut().zip(self.bias.row(0)) {
            *zi = self.activation.apply(*zi + b);
        }
        Ok(z)
    }

    pub fn zero_grads(&self) -> HeadGrads {
        HeadGrads {
            weight: Mat::zeros(self.weight.rows(), self.weight.cols()),
            bias: Mat::zeros(1, self.bias.cols()),
        }
    }

    /// Accumulates dL/dW and dL/db from dL/dz; returns dL/dhidden.
    pub fn backward(&self, hidden: &[f64], z: &[f64], dz: &[f64], grads: &mut HeadGrads) -> Vec<f64> {
        let mut dpre = vec![0.0; z.len()];
        for i in 0..z.len() {
            dpre[i] = dz[i] * self.activation.derivative_from_output(z[i]);
        }
        grads.weight.add_outer(&dpre, hidden, 1.0);
        axpy(grads.bias.row_mut(0), &dpre, 1.0);
        self.weight.matvec_t(&dpre)
    }
}

/// Cached intermediates of one encoder forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    input: EncodeInput,
    hidden: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
enum EncodeInput {
    Row(usize),
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VideoEncoderKind {
    /// Per-video table of hidden vectors, |videos|×H.
    Lookup { table: Mat },
    /// One tanh layer over the concatenated modality features.
    Mlp { in_weight: Mat, in_bias: Mat },
}

/// Desk-scale stand-in for the video encoder: a hidden-state source plus the
/// projection head whose output is the video embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEncoder {
    pub kind: VideoEncoderKind,
    pub head: ProjectionHead,
}

#[derive(Debug, Clone, Default)]
pub struct VideoEncoderGrads {
    pub table: Mat,
    pub in_weight: Mat,
    pub in_bias: Mat,
    pub head: HeadGrads,
}

impl VideoEncoder {
    pub fn new_lookup(
        video_count: usize,
        hidden_dim: usize,
        embed_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        VideoEncoder {
            kind: VideoEncoderKind::Lookup {
                table: Mat::uniform(video_count, hidden_dim, bound, rng),
            },
            head: ProjectionHead::new(embed_dim, hidden_dim, activation, rng),
        }
    }

    pub fn new_mlp(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        VideoEncoder {
            kind: VideoEncoderKind::Mlp {
                in_weight: Mat::uniform(hidden_dim, input_dim, bound, rng),
                in_bias: Mat::uniform(1, hidden_dim, bound, rng),
            },
            head: ProjectionHead::new(embed_dim, hidden_dim, activation, rng),
        }
    }

    fn hidden_for(&self, video: &VideoRecord) -> Result<(EncodeInput, Vec<f64>)> {
        match &self.kind {
            VideoEncoderKind::Lookup { table } => {
                let row = video.id.check(table.rows())?.index();
                Ok((EncodeInput::Row(row), table.row(row).to_vec()))
            }
            VideoEncoderKind::Mlp { in_weight, in_bias } => {
                if video.features.len() != in_weight.cols() {
                    return Err(Error::Dim(format!(
                        "encoder expects {} features, video {} has {}",
                        in_weight.cols(),
                        video.id.index(),
                        video.features.len()
                    )));
                }
                let x: Vec<f64> = video.features.iter().map(|&v| v as f64).collect();
                let mut hidden = in_weight.matvec(&x);
                for (h, &b) in hidden.iter_mut().zip(in_bias.row(0)) {
                    *h = (*h + b).tanh();
                }
                Ok((EncodeInput::Features(x), hidden))
            }
        }
    }

    /// z_V for one video.
    pub fn encode(&self, video: &VideoRecord) -> Result<Vec<f64>> {
        Ok(self.encode_cached(video)?.z)
    }

    pub fn encode_cached(&self, video: &VideoRecord) -> Result<EncodeCache> {
        let (input, hidden) = self.hidden_for(video)?;
        let z = self.head.project(&hidden)?;
        Ok(EncodeCache { input, hidden, z })
    }

    pub fn zero_grads(&self) -> VideoEncoderGrads {
        let (table, in_weight, in_bias) = match &self.kind {
            VideoEncoderKind::Lookup { table } => (
                Mat::zeros(table.rows(), table.cols()),
                Mat::zeros(0, 0),
                Mat::zeros(0, 0),
            ),
            VideoEncoderKind::Mlp { in_weight, in_bias } => (
                Mat::zeros(0, 0),
                Mat::zeros(in_weight.rows(), in_weight.cols()),
                Mat::zeros(1, in_bias.cols()),
            ),
        };
        VideoEncoderGrads {
            table,
            in_weight,
            in_bias,
            head: self.head.zero_grads(),
        }
    }

    pub fn backward(&self, cache: &EncodeCache, dz: &[f64], grads: &mut VideoEncoderGrads) {
        let dhidden = self.head.backward(&cache.hidden, &cache.z, dz, &mut grads.head);
        match (&self.kind, &cache.input) {
            (VideoEncoderKind::Lookup { .. }, EncodeInput::Row(row)) => {
                axpy(grads.table.row_mut(*row), &dhidden, 1.0);
            }
            (VideoEncoderKind::Mlp { .. }, EncodeInput::Features(x)) => {
                let mut dpre = vec![0.0; dhidden.len()];
                for i in 0..dhidden.len() {
                    dpre[i] = dhidden[i] * (1.0 - cache.hidden[i] * cache.hidden[i]);
                }
                grads.in_weight.add_outer(&dpre, x, 1.0);
                axpy(grads.in_bias.row_mut(0), &dpre, 1.0);
            }
            _ => unreachable!("cache does not match encoder variant"),
        }
    }
}

/// Tag encoder: per-tag hidden table plus its own projection head into the
/// same embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagEncoder {
    pub table: Mat,
    pub head: ProjectionHead,
}

#[derive(Debug, Clone, Default)]
pub struct TagEncoderGrads {
    pub table: Mat,
    pub head: HeadGrads,
}

impl TagEncoder {
    pub fn new(
        tag_count: usize,
        hidden_dim: usize,
        embed_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        TagEncoder {
            table: Mat::uniform(tag_count, hidden_dim, bound, rng),
            head: ProjectionHead::new(embed_dim, hidden_dim, activation, rng),
        }
    }

    /// z_T for one tag.
    pub fn encode(&self, tag: TagId) -> Result<Vec<f64>> {
        Ok(self.encode_cached(tag)?.z)
    }

    pub fn encode_cached(&self, tag: TagId) -> Result<EncodeCache> {
        let row = tag.check(self.table.rows())?.index();
        let hidden = self.table.row(row).to_vec();
        let z = self.head.project(&hidden)?;
        Ok(EncodeCache {
            input: EncodeInput::Row(row),
            hidden,
            z,
        })
    }

    pub fn zero_grads(&self) -> TagEncoderGrads {
        TagEncoderGrads {
            table: Mat::zeros(self.table.rows(), self.table.cols()),
            head: self.head.zero_grads(),
        }
    }

    pub fn backward(&self, cache: &EncodeCache, dz: &[f64], grads: &mut TagEncoderGrads) {
        let dhidden = self.head.backward(&cache.hidden, &cache.z, dz, &mut grads.head);
        match &cache.input {
            EncodeInput::Row(row) => axpy(grads.table.row_mut(*row), &dhidden, 1.0),
            EncodeInput::Features(_) => unreachable!("tag encoder caches are row-based"),
        }
    }
}

/// T_r: one k-vector per relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationTable {
    pub table: Mat,
}

impl RelationTable {
    pub fn new(relation_count: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (embed_dim as f64).sqrt();
        RelationTable {
            table: Mat::uniform(relation_count, embed_dim, bound, rng),
        }
    }

    pub fn embedding(&self, r: RelationId) -> Result<Vec<f64>> {
        let row = r.check(self.table.rows())?.index();
        Ok(self.table.row(row).to_vec())
    }

    pub fn embed_dim(&self) -> usize {
        self.table.cols()
    }
}
