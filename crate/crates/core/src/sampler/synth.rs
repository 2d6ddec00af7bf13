use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::video::VideoTensor;
use crate::error::{Error, Result};

/// Motion parameters that stand in for an action class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticLabel {
    pub class_id: usize,
    /// Grating translation, pixels per frame.
    pub drift_velocity: f64,
    /// Brightness gained over the whole clip.
    pub ramp_slope: f64,
}

impl SyntheticLabel {
    pub fn for_class(class_id: usize) -> Self {
        SyntheticLabel {
            class_id,
            drift_velocity: 0.25 + 0.15 * class_id as f64,
            ramp_slope: 4.0 + 4.0 * class_id as f64,
        }
    }
}

const NOISE_STD: f64 = 0.05;
const SLOPE_JITTER: f64 = 0.3;
const FLICKER: f64 = 1.5;

/// Deterministic video for `(seed, label)`.
///
/// Each pixel is a small per-video brightness offset, plus a brightness ramp
/// whose steepness is set by the class (the frame-order cue), plus a drifting
/// sinusoidal grating, plus Gaussian noise. The grating contrast is a
/// class-free nuisance: a large per-video gain, modulated by a slow wave of
/// random period and by per-frame flicker.
pub fn gen_synthetic_video(
    seed: u64,
    label: &SyntheticLabel,
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<VideoTensor> {
    if frames == 0 || channels == 0 || height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "video dimensions must be positive, got {frames}x{channels}x{height}x{width}"
        )));
    }
    if !label.ramp_slope.is_finite() || !label.drift_velocity.is_finite() {
        return Err(Error::invalid("synthetic label needs a finite slope and drift"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.gen_range(-0.5..0.5);
    let slope = label.ramp_slope + rng.gen_range(-SLOPE_JITTER..SLOPE_JITTER);
    let grating_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let gain: f64 = rng.gen_range(20.0..60.0);
    let wave_period: f64 = rng.gen_range(4.0..30.0);
    let wave_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");

    let wavelength = (width as f64 / 2.0).max(1.0);
    let span = (frames.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(frames * channels * height * width);
    for t in 0..frames {
        let tf = t as f64;
        let ramp = slope * tf / span;
        let flicker: f64 = rng.gen_range(0.0..FLICKER);
        let wave = 0.7 * (2.0 * PI * tf / wave_period + wave_phase).sin();
        let contrast = 0.3 + gain * (1.0 + wave + flicker);
        for c in 0..channels {
            let channel_shift = c as f64 * PI / 3.0;
            for _y in 0..height {
                for x in 0..width {
                    let arg = 2.0 * PI * (x as f64 - label.drift_velocity * tf) / wavelength
                        + grating_phase
                        + channel_shift;
                    let v = offset + ramp + contrast * arg.sin() + noise.sample(&mut rng);
                    data.push(v as f32);
                }
            }
        }
    }
    VideoTensor::new(frames, channels, height, width, data)
}
