//! Embedding exports: raw vectors as CSV, and a deterministic 2D principal
//! component projection of video embeddings for external plotting.

use std::io::Write;

use crate::data::{Dataset, TagId, VideoId};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Mat};
use crate::training::ModelState;

/// Centers the points and projects them onto their top two principal
/// components. Deterministic: power iteration from fixed start vectors.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 3 {
        return Err(Error::Config(format!(
            "2D projection needs at least 3 points, got {}",
            points.len()
        )));
    }
    let k = points[0].len();
    if points.iter().any(|p| p.len() != k) {
        return Err(Error::Dim("points have mixed dimensions".into()));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; k];
    for p in points {
        for (m, &x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(&x, &m)| x - m).collect())
        .collect();
    let mut cov = Mat::zeros(k, k);
    for c in &centered {
        cov.add_outer(c, c, 1.0 / n);
    }

    let axis1 = principal_axis(&cov, &[])?;
    let axis2 = principal_axis(&cov, &[axis1.clone()])?;
    Ok(centered
        .iter()
        .map(|c| (dot(c, &axis1), dot(c, &axis2)))
        .collect())
}

/// Power iteration for the dominant eigenvector of `cov`, kept orthogonal
/// to `fixed`. Falls back to a deterministic orthogonal unit vector when
/// the remaining spectrum is (numerically) zero.
fn principal_axis(cov: &Mat, fixed: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = cov.rows();
    let orthogonalize = |v: &mut Vec<f64>| {
        for f in fixed {
            let c = dot(v, f);
            for (x, &fx) in v.iter_mut().zip(f) {
                *x -= c * fx;
            }
        }
    };
    // fixed pseudo-random start, reproducible across runs
    let mut v: Vec<f64> = (0..k)
        .map(|i| (((i as u64).wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407)
            >> 33) as f64
            / (1u64 << 31) as f64)
            - 0.5)
        .collect();
    orthogonalize(&mut v);
    let norm = l2_norm(&v);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    let mut prev = v.clone();
    for _ in 0..500 {
        let mut next = cov.matvec(&v);
        orthogonalize(&mut next);
        let norm = l2_norm(&next);
        if norm < 1e-14 {
            // degenerate direction: pick a deterministic unit vector
            // orthogonal to everything fixed so far
            return fallback_axis(k, fixed);
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        let delta: f64 = next
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev = next.clone();
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    Ok(v)
}

fn fallback_axis(k: usize, fixed: &[Vec<f64>]) -> Result<Vec<f64>> {
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        for f in fixed {
            let c = dot(&e, f);
            for (x, &fx) in e.iter_mut().zip(f) {
                *x -= c * fx;
            }
        }
        let norm = l2_norm(&e);
        if norm > 1e-9 {
            for x in e.iter_mut() {
                *x /= norm;
            }
            return Ok(e);
        }
    }
    Err(Error::Config("no orthogonal axis available".into()))
}

fn write_vector_row(w: &mut impl Write, kind: &str, id: usize, name: &str, v: &[f64]) -> Result<()> {
    write!(w, "{kind},{id},{name}")?;
    for x in v {
        write!(w, ",{x:.17}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// All embeddings (videos, tags, relations) as one CSV with a kind column.
pub fn export_embeddings(state: &ModelState, ds: &Dataset, w: &mut impl Write) -> Result<()> {
    write!(w, "kind,id,name")?;
    for i in 0..state.embed_dim() {
        write!(w, ",v{i}")?;
    }
    writeln!(w)?;
    for v in &ds.videos {
        let z = state.video.encode(v)?;
        write_vector_row(w, "video", v.id.index(), &format!("video{}", v.id.index()), &z)?;
    }
    for t in 0..ds.tag_count() {
        let z = state.tag.encode(TagId(t as u32))?;
        write_vector_row(w, "tag", t, ds.tags.name(t as u32), &z)?;
    }
    for r in 0..ds.relation_count() {
        let row = state.relations.embedding(crate::data::RelationId(r as u32))?;
        write_vector_row(w, "relation", r, ds.relations.name(r as u32), &row)?;
    }
    Ok(())
}

/// 2D projection of the selected videos' embeddings with their tag labels,
/// as `video_id,tag,x,y`.
pub fn export_projection_2d(
    state: &ModelState,
    ds: &Dataset,
    videos: &[VideoId],
    w: &mut impl Write,
) -> Result<()> {
    if videos.is_empty() {
        return Err(Error::Empty("video selection for projection".into()));
    }
    let points: Vec<Vec<f64>> = videos
        .iter()
        .map(|&v| state.video.encode(&ds.videos[v.index()]))
        .collect::<Result<_>>()?;
    let projected = project_2d(&points)?;
    writeln!(w, "video_id,tag,x,y")?;
    for (&v, (x, y)) in videos.iter().zip(projected) {
        let tag = ds.tags.name(ds.videos[v.index()].tag.0);
        writeln!(w, "{},{tag},{x:.17},{y:.17}", v.index())?;
    }
    Ok(())
}
