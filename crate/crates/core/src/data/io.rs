//! Dataset file formats.
//!
//! - triplet files: `head<TAB>relation<TAB>tail` per line, string names
//! - video manifest: `video_id<TAB>tag_name` per line, features in a
//!   sidecar blob of little-endian f32 with an index header
//! - link file: `video_id<TAB>entity_name` per line

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{
    Dataset, EntityId, Interner, LinkTable, ModalityDims, RelationId, TagEntityMap, TagId, Triplet,
    VideoId, VideoRecord,
};
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const VIDEO_FILE: &str = "videos.tsv";
pub const FEATURE_FILE: &str = "features.bin";
pub const LINK_FILE: &str = "links.tsv";
pub const ENTITY_FILE: &str = "entities.tsv";
pub const RELATION_FILE: &str = "relations.tsv";
pub const TAG_FILE: &str = "tags.tsv";

const FEATURE_MAGIC: &[u8; 4] = b"VKFB";
const FEATURE_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_triplet_lines(
    path: &Path,
    entities: &mut Interner,
    relations: &mut Interner,
) -> Result<Vec<Triplet>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut triplets = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut any = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        any = true;
        let mut fields = line.split('\t');
        let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                (h, r, t)
            }
            _ => {
                return Err(parse_err(
                    path,
                    i + 1,
                    "expected exactly 3 tab-separated fields: head, relation, tail",
                ))
            }
        };
        let triplet = Triplet::new(
            EntityId(entities.intern(h)),
            RelationId(relations.intern(r)),
            EntityId(entities.intern(t)),
        );
        // duplicates permitted in raw files, dropped on load
        if seen.insert(triplet) {
            triplets.push(triplet);
        }
    }
    if !any {
        return Err(Error::Empty(format!("triplet file {}", path.display())));
    }
    Ok(triplets)
}

/// Loads a text-only dataset from a single triplet file. All triplets land
/// in the train split; use [`super::split`] to carve out a test set.
pub fn load_triplets(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut ds = Dataset::default();
    ds.train = read_triplet_lines(path, &mut ds.entities, &mut ds.relations)?;
    ds.validate()?;
    Ok(ds)
}

/// Writes one split back out as names, in order.
pub fn write_triplets(ds: &Dataset, triplets: &[Triplet], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in triplets {
        writeln!(
            w,
            "{}\t{}\t{}",
            ds.entities.name(t.head.0),
            ds.relations.name(t.relation.0),
            ds.entities.name(t.tail.0)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_features(videos: &[VideoRecord], dims: &ModalityDims, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(videos.len() as u64).to_le_bytes())?;
    w.write_all(&(dims.frames as u32).to_le_bytes())?;
    w.write_all(&(dims.audio as u32).to_le_bytes())?;
    w.write_all(&(dims.text as u32).to_le_bytes())?;
    // index header: byte offset of each record within the payload
    let record = dims.total() as u64 * 4;
    for i in 0..videos.len() as u64 {
        w.write_all(&(i * record).to_le_bytes())?;
    }
    for v in videos {
        for x in &v.features {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| parse_err(path, 0, format!("truncated feature blob while reading {what}")))
}

fn read_features(path: &Path, expected: usize) -> Result<(ModalityDims, Vec<Vec<f32>>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, path, "magic")?;
    if &magic != FEATURE_MAGIC {
        return Err(parse_err(path, 0, "bad magic bytes in feature blob"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b4, path, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != FEATURE_VERSION {
        return Err(parse_err(
            path,
            0,
            format!("unsupported feature blob version {version}"),
        ));
    }
    read_exact_or(&mut r, &mut b8, path, "count")?;
    let count = u64::from_le_bytes(b8) as usize;
    if count != expected {
        return Err(parse_err(
            path,
            0,
            format!("blob holds {count} videos, manifest lists {expected}"),
        ));
    }
    read_exact_or(&mut r, &mut b4, path, "frame dim")?;
    let frames = u32::from_le_bytes(b4) as usize;
    read_exact_or(&mut r, &mut b4, path, "audio dim")?;
    let audio = u32::from_le_bytes(b4) as usize;
    read_exact_or(&mut r, &mut b4, path, "text dim")?;
    let text = u32::from_le_bytes(b4) as usize;
    let dims = ModalityDims {
        frames,
        audio,
        text,
    };
    for _ in 0..count {
        read_exact_or(&mut r, &mut b8, path, "index")?;
    }
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let mut rec = Vec::with_capacity(dims.total());
        for _ in 0..dims.total() {
            read_exact_or(&mut r, &mut b4, path, "features")?;
            rec.push(f32::from_le_bytes(b4));
        }
        features.push(rec);
    }
    Ok((dims, features))
}

fn write_names(names: &[String], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for n in names {
        writeln!(w, "{n}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_names(path: &Path, interner: &mut Interner) -> Result<()> {
    let reader = BufReader::new(fs::File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if !line.is_empty() {
            interner.intern(&line);
        }
    }
    Ok(())
}

/// Writes the full dataset bundle into a directory: name dictionaries (so
/// ids stay stable across reloads), triplet splits, the video manifest +
/// feature blob, and the link file.
pub fn save_dir(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_names(ds.entities.names(), &dir.join(ENTITY_FILE))?;
    write_names(ds.relations.names(), &dir.join(RELATION_FILE))?;
    write_names(ds.tags.names(), &dir.join(TAG_FILE))?;
    write_triplets(ds, &ds.train, dir.join(TRAIN_FILE))?;
    write_triplets(ds, &ds.test, dir.join(TEST_FILE))?;

    let mut w = BufWriter::new(fs::File::create(dir.join(VIDEO_FILE))?);
    for v in &ds.videos {
        writeln!(w, "{}\t{}", v.id.index(), ds.tags.name(v.tag.0))?;
    }
    w.flush()?;
    write_features(&ds.videos, &ds.modality_dims, &dir.join(FEATURE_FILE))?;

    let mut w = BufWriter::new(fs::File::create(dir.join(LINK_FILE))?);
    for v in &ds.videos {
        let e = ds.links.entity_of(v.id).ok_or_else(|| {
            Error::Config(format!("video {} missing from link table", v.id.index()))
        })?;
        writeln!(w, "{}\t{}", v.id.index(), ds.entities.name(e.0))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset bundle written by [`save_dir`]. Name dictionaries, when
/// present, pin the id assignment; otherwise ids follow first-appearance
/// order. The tag↔entity map is reconstructed by name equality between
/// tags and entities.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut ds = Dataset::default();
    for (file, interner) in [
        (ENTITY_FILE, &mut ds.entities),
        (RELATION_FILE, &mut ds.relations),
        (TAG_FILE, &mut ds.tags),
    ] {
        let path = dir.join(file);
        if path.exists() {
            read_names(&path, interner)?;
        }
    }
    ds.train = read_triplet_lines(&dir.join(TRAIN_FILE), &mut ds.entities, &mut ds.relations)?;
    let test_path = dir.join(TEST_FILE);
    if test_path.exists() {
        ds.test = read_triplet_lines(&test_path, &mut ds.entities, &mut ds.relations)?;
        let train_set: std::collections::HashSet<Triplet> = ds.train.iter().copied().collect();
        ds.test.retain(|t| !train_set.contains(t));
    }

    let video_path = dir.join(VIDEO_FILE);
    if video_path.exists() {
        let reader = BufReader::new(fs::File::open(&video_path)?);
        let mut tag_of_video = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (id, tag) = match (fields.next(), fields.next(), fields.next()) {
                (Some(id), Some(tag), None) => (id, tag),
                _ => {
                    return Err(parse_err(
                        &video_path,
                        i + 1,
                        "expected 2 tab-separated fields: video id, tag name",
                    ))
                }
            };
            let id: usize = id
                .parse()
                .map_err(|_| parse_err(&video_path, i + 1, "video id is not an integer"))?;
            if id != tag_of_video.len() {
                return Err(parse_err(
                    &video_path,
                    i + 1,
                    format!("video ids must be dense and ordered, got {id}"),
                ));
            }
            tag_of_video.push(TagId(ds.tags.intern(tag)));
        }
        let (dims, features) = read_features(&dir.join(FEATURE_FILE), tag_of_video.len())?;
        ds.modality_dims = dims;
        ds.videos = tag_of_video
            .into_iter()
            .zip(features)
            .enumerate()
            .map(|(i, (tag, features))| VideoRecord {
                id: VideoId(i as u32),
                tag,
                features,
            })
            .collect();

        let link_path = dir.join(LINK_FILE);
        let reader = BufReader::new(fs::File::open(&link_path)?);
        let mut video_to_entity = vec![None; ds.videos.len()];
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (id, entity) = match (fields.next(), fields.next(), fields.next()) {
                (Some(id), Some(e), None) => (id, e),
                _ => {
                    return Err(parse_err(
                        &link_path,
                        i + 1,
                        "expected 2 tab-separated fields: video id, entity name",
                    ))
                }
            };
            let id: usize = id
                .parse()
                .map_err(|_| parse_err(&link_path, i + 1, "video id is not an integer"))?;
            if id >= video_to_entity.len() {
                return Err(parse_err(&link_path, i + 1, "video id out of range"));
            }
            let e = ds
                .entities
                .get(entity)
                .ok_or_else(|| parse_err(&link_path, i + 1, format!("unknown entity {entity}")))?;
            if video_to_entity[id].replace(EntityId(e)).is_some() {
                return Err(parse_err(
                    &link_path,
                    i + 1,
                    format!("video {id} linked twice; each video links to exactly one entity"),
                ));
            }
        }
        let video_to_entity: Vec<EntityId> = video_to_entity
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.ok_or_else(|| parse_err(&link_path, 0, format!("video {i} unlinked"))))
            .collect::<Result<_>>()?;
        ds.links = LinkTable::new(video_to_entity, ds.entity_count());
    }

    // tags sharing a name with an entity are identified with it
    ds.tag_entity = TagEntityMap::new(ds.tag_count(), ds.entity_count());
    for (tag_id, name) in ds.tags.names().iter().enumerate() {
        if let Some(e) = ds.entities.get(name) {
            ds.tag_entity.identify(TagId(tag_id as u32), EntityId(e))?;
        }
    }

    ds.validate()?;
    Ok(ds)
}
