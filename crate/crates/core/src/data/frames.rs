use rand::RngExt;

use super::manifest::SampleRecord;
use crate::error::{EfaError, Result};

/// `k` uniformly spaced frame indices: index `i` is `floor(i * frame_count / k)`.
pub fn sample_frames(record: &SampleRecord, k: usize) -> Result<Vec<usize>> {
    uniform_indices(record.frame_count, k)
}

pub fn uniform_indices(frame_count: usize, k: usize) -> Result<Vec<usize>> {
    check(frame_count, k)?;
    Ok((0..k).map(|i| i * frame_count / k).collect())
}

/// Like [`uniform_indices`] but each index is drawn uniformly inside its segment
/// `[i * frame_count / k, (i + 1) * frame_count / k)`. Used only when training
/// with frame jitter enabled.
pub fn jittered_indices(frame_count: usize, k: usize, rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    check(frame_count, k)?;
    Ok((0..k)
        .map(|i| {
            let lo = i * frame_count / k;
            let hi = ((i + 1) * frame_count / k).max(lo + 1);
            rng.random_range(lo..hi).min(frame_count - 1)
        })
        .collect())
}

fn check(frame_count: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(EfaError::InvalidArgument("frames per video must be at least 1".into()));
    }
    if frame_count == 0 {
        return Err(EfaError::InvalidArgument("video has no frames".into()));
    }
    Ok(())
}
