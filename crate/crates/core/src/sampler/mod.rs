//! Snippet sampling, tuple shuffling and frame-set splitting, plus the
//! synthetic video source and its on-disk dataset format.

mod dataset;
mod perm;
mod synth;
mod video;

use std::ops::Range;

use rand::Rng;

pub use dataset::{
    decode_manifest, decode_video, encode_manifest, encode_video, Dataset, DatasetManifest,
    DatasetSpec, ManifestEntry,
};
pub use perm::{factorial, invert, permutation_from_index, permutation_index};
pub use synth::{gen_synthetic_video, SyntheticLabel};
pub use video::VideoTensor;

use crate::error::{Error, Result};

/// Shortest video that fits `n` snippets of `l` frames separated by `p`.
pub fn required_frames(l: usize, p: usize, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    n * l + (n - 1) * p
}

/// First frame of each snippet when sampling from `offset`.
pub fn snippet_starts(frames: usize, l: usize, p: usize, n: usize, offset: usize) -> Result<Vec<usize>> {
    if l == 0 || n == 0 {
        return Err(Error::invalid("snippet length and count must be positive"));
    }
    let required = required_frames(l, p, n) + offset;
    if frames < required {
        return Err(Error::VideoTooShort { frames, required });
    }
    Ok((0..n).map(|k| offset + k * (l + p)).collect())
}

/// Uniformly drawn start offset so that the snippets still fit.
pub fn random_offset(frames: usize, l: usize, p: usize, n: usize, rng: &mut impl Rng) -> Result<usize> {
    let required = required_frames(l, p, n);
    if frames < required {
        return Err(Error::VideoTooShort { frames, required });
    }
    Ok(rng.gen_range(0..=frames - required))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    pub start: usize,
    pub clip: VideoTensor,
}

/// `n` snippets of `l` frames spaced `p` apart, in chronological order,
/// starting at frame 0.
pub fn sample_snippets(video: &VideoTensor, l: usize, p: usize, n: usize) -> Result<Vec<Snippet>> {
    sample_snippets_at(video, l, p, n, 0)
}

pub fn sample_snippets_at(
    video: &VideoTensor,
    l: usize,
    p: usize,
    n: usize,
    offset: usize,
) -> Result<Vec<Snippet>> {
    snippet_starts(video.frames(), l, p, n, offset)?
        .into_iter()
        .map(|start| {
            Ok(Snippet {
                start,
                clip: video.clip(start, l)?,
            })
        })
        .collect()
}

/// Frame ranges of the `m` frame-sets of an `l`-frame snippet.
pub fn frameset_ranges(l: usize, m: usize) -> Result<Vec<Range<usize>>> {
    if m == 0 || !l.is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "{m} frame-sets do not evenly divide a {l}-frame snippet"
        )));
    }
    let len = l / m;
    Ok((0..m).map(|j| j * len..(j + 1) * len).collect())
}

pub fn split_framesets(snippet: &VideoTensor, m: usize) -> Result<Vec<VideoTensor>> {
    frameset_ranges(snippet.frames(), m)?
        .into_iter()
        .map(|r| snippet.clip(r.start, r.len()))
        .collect()
}

pub fn draw_permutation(n: usize, rng: &mut impl Rng) -> usize {
    rng.gen_range(0..factorial(n))
}

/// Snippets in shuffled order with their order label.
#[derive(Clone, Debug, PartialEq)]
pub struct SnippetTuple {
    /// Shuffled; position `j` holds chronological snippet `order[j]`.
    pub snippets: Vec<VideoTensor>,
    pub order: Vec<usize>,
    pub permutation_id: usize,
    /// Frame-sets of each entry of `snippets`, chronological within a snippet.
    pub frame_sets: Vec<Vec<VideoTensor>>,
}

impl SnippetTuple {
    pub fn classes(&self) -> usize {
        factorial(self.snippets.len())
    }

    /// Snippets restored to chronological order.
    pub fn chronological(&self) -> Vec<&VideoTensor> {
        invert(&self.order)
            .into_iter()
            .map(|pos| &self.snippets[pos])
            .collect()
    }
}

/// Shuffles chronologically ordered snippets by the lexicographic
/// permutation `permutation_id`, or by a uniform draw when it is `None`.
pub fn shuffle_tuple(
    snippets: Vec<VideoTensor>,
    permutation_id: Option<usize>,
    m: usize,
    rng: &mut impl Rng,
) -> Result<SnippetTuple> {
    let n = snippets.len();
    if n == 0 {
        return Err(Error::invalid("cannot shuffle an empty snippet list"));
    }
    let id = match permutation_id {
        Some(id) => id,
        None => draw_permutation(n, rng),
    };
    let order = permutation_from_index(n, id)?;
    let mut slots: Vec<Option<VideoTensor>> = snippets.into_iter().map(Some).collect();
    let shuffled: Vec<VideoTensor> = order
        .iter()
        .map(|&k| slots[k].take().expect("permutation visits each snippet once"))
        .collect();
    let frame_sets = shuffled
        .iter()
        .map(|s| split_framesets(s, m))
        .collect::<Result<_>>()?;
    Ok(SnippetTuple {
        snippets: shuffled,
        order,
        permutation_id: id,
        frame_sets,
    })
}

#[cfg(test)]
mod tests;
