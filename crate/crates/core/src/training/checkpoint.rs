//! Versioned binary checkpoints.
//!
//! Layout: magic bytes, format version, the config digest, a length
//! prefixed JSON metadata block (kind, stage, optimizer step, RNG state,
//! activation/similarity switches), then length-prefixed parameter blobs as
//! little-endian 64-bit floats. Every tensor record carries its id, a role
//! byte (parameter, first moment, second moment) and its shape, so a
//! checkpoint restores training exactly: parameters, Adam moments and the
//! RNG position all round-trip bit-for-bit.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{ModelState, OptState, ParamId};
use crate::encoders::{
    Activation, ProjectionHead, RelationTable, TagEncoder, VideoEncoder, VideoEncoderKind,
};
use crate::error::{Error, Result};
use crate::kge::{KgeModel, KgeVariant};
use crate::linalg::Mat;
use crate::objectives::{ClipParams, Similarity, TagClassifier};
use crate::training::adam::AdamSlot;

const MAGIC: &[u8; 4] = b"VKGC";
const VERSION: u32 = 1;

const ROLE_PARAM: u8 = 0;
const ROLE_M: u8 = 1;
const ROLE_V: u8 = 2;

// tensor ids 0..=10 are ParamId codes; the standalone KGE tables live here
const KGE_ENTITIES: u16 = 100;
const KGE_RELATIONS: u16 = 101;
const KGE_NORMALS: u16 = 102;
const KGE_PROJECTIONS: u16 = 103;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    kind: String,
    stage: u8,
    step: u64,
    rng_seed: String,
    rng_word_hi: u64,
    rng_word_lo: u64,
    activation: Option<Activation>,
    similarity: Option<Similarity>,
    kge_variant: Option<KgeVariant>,
}

/// A saved model: either the joint training state or a standalone KGE
/// baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Joint(Box<ModelState>),
    Kge {
        model: KgeModel,
        digest: [u8; 32],
    },
}

impl Checkpoint {
    pub fn stage(&self) -> u8 {
        match self {
            Checkpoint::Joint(s) => s.stage,
            Checkpoint::Kge { .. } => 0,
        }
    }

    pub fn as_joint(&self) -> Result<&ModelState> {
        match self {
            Checkpoint::Joint(s) => Ok(s),
            Checkpoint::Kge { .. } => Err(Error::Checkpoint(
                "expected a joint-model checkpoint, found a KGE baseline".into(),
            )),
        }
    }

    pub fn as_kge(&self) -> Result<&KgeModel> {
        match self {
            Checkpoint::Kge { model, .. } => Ok(model),
            Checkpoint::Joint(_) => Err(Error::Checkpoint(
                "expected a KGE checkpoint, found a joint model".into(),
            )),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Checkpoint("odd hex string".into()));
    }
    (0..s.len() / 2)
        .map(|i| {
            u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint("bad hex digit".into()))
        })
        .collect()
}

fn write_tensor(w: &mut impl Write, id: u16, role: u8, m: &Mat) -> Result<()> {
    w.write_all(&id.to_le_bytes())?;
    w.write_all(&[role])?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &x in m.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

struct TensorReader<R: Read> {
    inner: R,
}

impl<R: Read> TensorReader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn tensor(&mut self) -> Result<(u16, u8, Mat)> {
        let id = self.u16("tensor id")?;
        let mut role = [0u8; 1];
        self.exact(&mut role, "tensor role")?;
        let rows = self.u64("tensor rows")? as usize;
        let cols = self.u64("tensor cols")? as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut b = [0u8; 8];
        for x in data.iter_mut() {
            self.exact(&mut b, "tensor data")?;
            *x = f64::from_le_bytes(b);
        }
        Ok((id, role[0], Mat::from_vec(rows, cols, data)))
    }
}

fn write_file(
    path: &Path,
    digest: &[u8; 32],
    meta: &Meta,
    tensors: &[(u16, u8, &Mat)],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(digest)?;
    let meta_json = serde_json::to_vec(meta).expect("meta serializes");
    w.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    w.write_all(&meta_json)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for &(id, role, m) in tensors {
        write_tensor(&mut w, id, role, m)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes a model to `path`.
pub fn save_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match cp {
        Checkpoint::Joint(state) => {
            let meta = Meta {
                kind: "joint".into(),
                stage: state.stage,
                step: state.opt.slot.step,
                rng_seed: hex(&state.rng.get_seed()),
                rng_word_hi: (state.rng.get_word_pos() >> 64) as u64,
                rng_word_lo: state.rng.get_word_pos() as u64,
                activation: Some(state.video.head.activation),
                similarity: Some(state.clip.similarity),
                kge_variant: None,
            };
            let mut tensors: Vec<(u16, u8, &Mat)> = Vec::new();
            for id in ParamId::ALL {
                if let Some(p) = state.param(id) {
                    let (m, v) = state
                        .opt
                        .moments
                        .get(&id)
                        .ok_or_else(|| Error::Checkpoint(format!("missing moments for {id:?}")))?;
                    tensors.push((id.code(), ROLE_PARAM, p));
                    tensors.push((id.code(), ROLE_M, m));
                    tensors.push((id.code(), ROLE_V, v));
                }
            }
            write_file(path, &state.config_digest, &meta, &tensors)
        }
        Checkpoint::Kge { model, digest } => {
            let meta = Meta {
                kind: "kge".into(),
                stage: 0,
                step: 0,
                rng_seed: hex(&[0u8; 32]),
                rng_word_hi: 0,
                rng_word_lo: 0,
                activation: None,
                similarity: None,
                kge_variant: Some(model.variant),
            };
            let tensors = vec![
                (KGE_ENTITIES, ROLE_PARAM, &model.entities),
                (KGE_RELATIONS, ROLE_PARAM, &model.relations),
                (KGE_NORMALS, ROLE_PARAM, &model.normals),
                (KGE_PROJECTIONS, ROLE_PARAM, &model.projections),
            ];
            write_file(path, digest, &meta, &tensors)
        }
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]; corrupt files and
/// version mismatches produce structured errors.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut r = TensorReader {
        inner: BufReader::new(fs::File::open(path)?),
    };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} unsupported (expected {VERSION})"
        )));
    }
    let mut digest = [0u8; 32];
    r.exact(&mut digest, "config digest")?;
    let meta_len = r.u32("metadata length")? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.exact(&mut meta_buf, "metadata")?;
    let meta: Meta = serde_json::from_slice(&meta_buf)
        .map_err(|e| Error::Checkpoint(format!("bad metadata block: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors: BTreeMap<(u16, u8), Mat> = BTreeMap::new();
    for _ in 0..count {
        let (id, role, m) = r.tensor()?;
        tensors.insert((id, role), m);
    }

    match meta.kind.as_str() {
        "joint" => restore_joint(&meta, digest, tensors).map(|s| Checkpoint::Joint(Box::new(s))),
        "kge" => {
            let variant = meta
                .kge_variant
                .ok_or_else(|| Error::Checkpoint("kge checkpoint without variant".into()))?;
            let take = |id: u16, tensors: &mut BTreeMap<(u16, u8), Mat>| {
                tensors
                    .remove(&(id, ROLE_PARAM))
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {id}")))
            };
            let mut tensors = tensors;
            Ok(Checkpoint::Kge {
                model: KgeModel {
                    variant,
                    entities: take(KGE_ENTITIES, &mut tensors)?,
                    relations: take(KGE_RELATIONS, &mut tensors)?,
                    normals: take(KGE_NORMALS, &mut tensors)?,
                    projections: take(KGE_PROJECTIONS, &mut tensors)?,
                },
                digest,
            })
        }
        other => Err(Error::Checkpoint(format!("unknown checkpoint kind {other}"))),
    }
}

fn restore_joint(
    meta: &Meta,
    digest: [u8; 32],
    mut tensors: BTreeMap<(u16, u8), Mat>,
) -> Result<ModelState> {
    let activation = meta
        .activation
        .ok_or_else(|| Error::Checkpoint("joint checkpoint without activation".into()))?;
    let similarity = meta
        .similarity
        .ok_or_else(|| Error::Checkpoint("joint checkpoint without similarity".into()))?;

    let is_lookup = tensors.contains_key(&(ParamId::VideoTable.code(), ROLE_PARAM));
    let mut take = |id: ParamId, role: u8| -> Result<Mat> {
        tensors
            .remove(&(id.code(), role))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {id:?} role {role}")))
    };

    let kind = if is_lookup {
        VideoEncoderKind::Lookup {
            table: take(ParamId::VideoTable, ROLE_PARAM)?,
        }
    } else {
        VideoEncoderKind::Mlp {
            in_weight: take(ParamId::VideoInWeight, ROLE_PARAM)?,
            in_bias: take(ParamId::VideoInBias, ROLE_PARAM)?,
        }
    };
    let video = VideoEncoder {
        kind,
        head: ProjectionHead {
            weight: take(ParamId::VideoHeadWeight, ROLE_PARAM)?,
            bias: take(ParamId::VideoHeadBias, ROLE_PARAM)?,
            activation,
        },
    };
    let tag = TagEncoder {
        table: take(ParamId::TagTable, ROLE_PARAM)?,
        head: ProjectionHead {
            weight: take(ParamId::TagHeadWeight, ROLE_PARAM)?,
            bias: take(ParamId::TagHeadBias, ROLE_PARAM)?,
            activation,
        },
    };
    let relations = RelationTable {
        table: take(ParamId::Relations, ROLE_PARAM)?,
    };
    let classifier = TagClassifier {
        weight: take(ParamId::Classifier, ROLE_PARAM)?,
    };
    let clip = ClipParams {
        log_tau: take(ParamId::LogTau, ROLE_PARAM)?,
        similarity,
    };

    let seed_bytes = unhex(&meta.rng_seed)?;
    if seed_bytes.len() != 32 {
        return Err(Error::Checkpoint("rng seed must be 32 bytes".into()));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&seed_bytes);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(((meta.rng_word_hi as u128) << 64) | meta.rng_word_lo as u128);

    let mut state = ModelState {
        video,
        tag,
        relations,
        classifier,
        clip,
        opt: OptState {
            slot: AdamSlot { step: meta.step },
            moments: BTreeMap::new(),
        },
        stage: meta.stage,
        rng,
        config_digest: digest,
    };
    for id in ParamId::ALL {
        if state.param(id).is_some() {
            let m = tensors
                .remove(&(id.code(), ROLE_M))
                .ok_or_else(|| Error::Checkpoint(format!("missing first moment for {id:?}")))?;
            let v = tensors
                .remove(&(id.code(), ROLE_V))
                .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {id:?}")))?;
            state.opt.moments.insert(id, (m, v));
        }
    }
    Ok(state)
}
