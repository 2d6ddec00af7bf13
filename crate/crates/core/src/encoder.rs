//! Clip encoder: per-frame spatial statistics followed by a shared linear
//! projection and ReLU.

use rand::Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{eval_constant, fan_in_uniform, linear};
use crate::sampler::VideoTensor;

/// Statistics per frame and channel: spatial mean and population std.
pub const STATS_PER_CHANNEL: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `[pooled_dim, feature_dim]`.
    pub weight: Tensor,
    /// `[feature_dim]`.
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub weight: Var,
    pub bias: Var,
}

impl EncoderParams {
    pub fn init(pooled_dim: usize, feature_dim: usize, rng: &mut impl Rng) -> Self {
        EncoderParams {
            weight: fan_in_uniform(rng, &[pooled_dim, feature_dim], pooled_dim),
            bias: fan_in_uniform(rng, &[feature_dim], pooled_dim),
        }
    }

    pub fn pooled_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 2] {
        [("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 2] {
        [("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

impl EncoderVars {
    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Pooled dimension for a clip of `frames` frames.
pub fn pooled_dim(frames: usize, channels: usize) -> usize {
    frames * channels * STATS_PER_CHANNEL
}

/// Per-frame statistics of a whole video, frame-major:
/// `[mean_c0, std_c0, mean_c1, std_c1, ...]` for each frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStats {
    frames: usize,
    per_frame: usize,
    data: Vec<f64>,
}

impl FrameStats {
    pub fn of(video: &VideoTensor) -> Self {
        let per_frame = video.channels() * STATS_PER_CHANNEL;
        let mut data = Vec::with_capacity(video.frames() * per_frame);
        for t in 0..video.frames() {
            for c in 0..video.channels() {
                let plane = video.plane(t, c);
                let n = plane.len() as f64;
                let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = plane
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                data.push(mean);
                data.push(var.sqrt());
            }
        }
        FrameStats {
            frames: video.frames(),
            per_frame,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Concatenated statistics of frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<&[f64]> {
        if start + len > self.frames {
            return Err(Error::invalid(format!(
                "frames [{start}, {}) outside a {}-frame video",
                start + len,
                self.frames
            )));
        }
        Ok(&self.data[start * self.per_frame..(start + len) * self.per_frame])
    }
}

/// Pooled statistic vector of a clip.
pub fn pooled_stats(clip: &VideoTensor) -> Vec<f64> {
    FrameStats::of(clip).data
}

/// Encodes each row of `stats` (`[k, pooled_dim]`) into `[k, feature_dim]`.
pub fn encode_on(tape: &mut Tape, stats: Var, vars: &EncoderVars) -> Result<Var> {
    let h = linear(tape, stats, vars.weight, vars.bias)?;
    Ok(tape.relu(h))
}

/// Stacks statistic windows into a constant `[k, pooled_dim]` matrix.
pub fn stats_matrix(tape: &mut Tape, rows: &[&[f64]], pooled_dim: usize) -> Result<Var> {
    let mut data = Vec::with_capacity(rows.len() * pooled_dim);
    for r in rows {
        if r.len() != pooled_dim {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: vec![r.len()],
                rhs: vec![pooled_dim],
            });
        }
        data.extend_from_slice(r);
    }
    Ok(tape.constant(Tensor::matrix(rows.len(), pooled_dim, data)?))
}

/// Feature vector of one clip.
pub fn encode(clip: &VideoTensor, params: &EncoderParams) -> Result<Tensor> {
    let stats = pooled_stats(clip);
    if stats.len() != params.pooled_dim() {
        return Err(Error::invalid(format!(
            "clip of {} frames pools to {} values but the encoder expects {}",
            clip.frames(),
            stats.len(),
            params.pooled_dim()
        )));
    }
    let x = Tensor::vector(stats);
    eval_constant(&[&x, &params.weight, &params.bias], |t, v| {
        encode_on(t, v[0], &EncoderVars { weight: v[1], bias: v[2] })
    })
}
