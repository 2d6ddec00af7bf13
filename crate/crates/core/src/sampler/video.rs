use crate::error::{Error, Result};

/// Dense video or clip, laid out frame-major: `[frames][channels][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "video dimensions must be positive, got {frames}x{channels}x{height}x{width}"
            )));
        }
        let expected = frames
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(height))
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::invalid("video dimensions overflow"))?;
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "video of {frames}x{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(VideoTensor {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// One channel plane of frame `t`.
    pub fn plane(&self, t: usize, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.frame(t)[c * hw..(c + 1) * hw]
    }

    /// Copy of frames `[start, start + len)`.
    pub fn clip(&self, start: usize, len: usize) -> Result<VideoTensor> {
        if len == 0 || start + len > self.frames {
            return Err(Error::invalid(format!(
                "clip [{start}, {}) outside a {}-frame video",
                start + len,
                self.frames
            )));
        }
        let n = self.frame_len();
        Ok(VideoTensor {
            frames: len,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    /// Joins clips of identical frame geometry along time.
    pub fn concat(clips: &[VideoTensor]) -> Result<VideoTensor> {
        let first = clips
            .first()
            .ok_or_else(|| Error::invalid("concatenating zero clips"))?;
        let mut data = Vec::new();
        let mut frames = 0;
        for c in clips {
            if (c.channels, c.height, c.width) != (first.channels, first.height, first.width) {
                return Err(Error::invalid("clips differ in frame geometry"));
            }
            data.extend_from_slice(&c.data);
            frames += c.frames;
        }
        VideoTensor::new(frames, first.channels, first.height, first.width, data)
    }
}
