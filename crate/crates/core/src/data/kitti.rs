//! SemanticKITTI velodyne scans (`.bin`) and point labels (`.label`).

use std::path::Path;

use crate::error::{Error, Result};

/// Parses `x, y, z, intensity` quadruples of little-endian `f32`.
pub fn parse_kitti_points(bytes: &[u8]) -> Result<Vec<[f32; 4]>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % 16) as u64,
            reason: format!(
                "point file of {} bytes is not a multiple of 16",
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().unwrap());
            [f(0), f(1), f(2), f(3)]
        })
        .collect())
}

/// Raw little-endian `u32` label words.
pub fn parse_kitti_label_words(bytes: &[u8]) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % 4) as u64,
            reason: format!("label file of {} bytes is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Semantic class id: the lower 16 bits of a label word (the upper half is
/// the instance id).
pub fn semantic_id(word: u32) -> u16 {
    (word & 0xFFFF) as u16
}

pub fn load_kitti_points(path: impl AsRef<Path>) -> Result<Vec<[f32; 4]>> {
    parse_kitti_points(&std::fs::read(path)?)
}

pub fn load_kitti_labels(path: impl AsRef<Path>) -> Result<Vec<u16>> {
    Ok(parse_kitti_label_words(&std::fs::read(path)?)?
        .into_iter()
        .map(semantic_id)
        .collect())
}

/// Loads a scan with its labels, checking that both describe the same points.
pub fn load_kitti_pair(
    points: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<(Vec<[f32; 4]>, Vec<u16>)> {
    let p = load_kitti_points(points)?;
    let l = load_kitti_labels(labels)?;
    if p.len() != l.len() {
        return Err(Error::Pairing {
            points: p.len(),
            labels: l.len(),
        });
    }
    Ok((p, l))
}
