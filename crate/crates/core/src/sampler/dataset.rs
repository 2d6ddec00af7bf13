//! Synthetic dataset directory: one binary file per video plus a text
//! manifest.
//!
//! Video file: five little-endian `i32` (frames, channels, height, width,
//! class_id) followed by `frames * channels * height * width` little-endian
//! `f32` values, frame-major.
//!
//! Manifest (`manifest.txt`):
//!
//! ```text
//! tcgl-dataset v1
//! seed <u64>
//! <file name> <class_id>
//! ...
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{gen_synthetic_video, SyntheticLabel};
use super::video::VideoTensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "tcgl-dataset v1";
const HEADER_BYTES: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub videos: usize,
    pub classes: usize,
    pub seed: u64,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            videos: 200,
            classes: 10,
            seed: 7,
            frames: 64,
            channels: 1,
            height: 16,
            width: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub class_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoTensor>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
        if spec.videos == 0 || spec.classes == 0 {
            return Err(Error::invalid("dataset needs at least one video and one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut entries = Vec::with_capacity(spec.videos);
        let mut videos = Vec::with_capacity(spec.videos);
        for i in 0..spec.videos {
            let class_id = i % spec.classes;
            let video_seed: u64 = rng.gen();
            let label = SyntheticLabel::for_class(class_id);
            videos.push(gen_synthetic_video(
                video_seed,
                &label,
                spec.frames,
                spec.channels,
                spec.height,
                spec.width,
            )?);
            entries.push(ManifestEntry {
                file: format!("video_{i:05}.bin"),
                class_id,
            });
        }
        Ok(Dataset {
            manifest: DatasetManifest {
                seed: spec.seed,
                entries,
            },
            videos,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.manifest.entries.iter().map(|e| e.class_id).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, video) in self.manifest.entries.iter().zip(&self.videos) {
            let path = dir.join(&entry.file);
            fs::write(&path, encode_video(video, entry.class_id)?).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, encode_manifest(&self.manifest)).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = decode_manifest(&text)?;
        let mut videos = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let (video, class_id) = decode_video(&bytes)?;
            if class_id != entry.class_id {
                return Err(Error::format(
                    "dataset",
                    format!(
                        "{} has class {class_id} but the manifest says {}",
                        entry.file, entry.class_id
                    ),
                ));
            }
            videos.push(video);
        }
        Ok(Dataset { manifest, videos })
    }
}

pub fn encode_video(video: &VideoTensor, class_id: usize) -> Result<Vec<u8>> {
    let dims = [
        video.frames(),
        video.channels(),
        video.height(),
        video.width(),
        class_id,
    ];
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * video.data().len());
    for d in dims {
        let v = i32::try_from(d)
            .map_err(|_| Error::invalid(format!("{d} does not fit the 32-bit video header")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in video.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses one video file; returns the video and its class id.
pub fn decode_video(bytes: &[u8]) -> Result<(VideoTensor, usize)> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::format(
            "video file",
            format!("{} bytes is shorter than the {HEADER_BYTES}-byte header", bytes.len()),
        ));
    }
    let mut dims = [0usize; 5];
    for (i, d) in dims.iter_mut().enumerate() {
        let raw = i32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        *d = usize::try_from(raw)
            .map_err(|_| Error::format("video file", format!("negative header field {raw}")))?;
    }
    let [frames, channels, height, width, class_id] = dims;
    let count = frames
        .checked_mul(channels)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::format("video file", "dimension product overflows"))?;
    let payload = &bytes[HEADER_BYTES..];
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(Error::format(
            "video file",
            format!(
                "{frames}x{channels}x{height}x{width} needs {} payload bytes, found {}",
                count.saturating_mul(4),
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let video = VideoTensor::new(frames, channels, height, width, data)
        .map_err(|e| Error::format("video file", e.to_string()))?;
    Ok((video, class_id))
}

pub fn encode_manifest(m: &DatasetManifest) -> String {
    let mut s = format!("{MANIFEST_MAGIC}\nseed {}\n", m.seed);
    for e in &m.entries {
        s.push_str(&format!("{} {}\n", e.file, e.class_id));
    }
    s
}

pub fn decode_manifest(text: &str) -> Result<DatasetManifest> {
    let bad = |reason: String| Error::format("dataset manifest", reason);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MANIFEST_MAGIC => {}
        Some((_, l)) => return Err(bad(format!("unexpected header `{}`", l.trim()))),
        None => return Err(bad("empty manifest".into())),
    }
    let seed = match lines.next() {
        Some((_, l)) => {
            let rest = l
                .trim()
                .strip_prefix("seed ")
                .ok_or_else(|| bad(format!("expected `seed <u64>`, got `{}`", l.trim())))?;
            rest.trim()
                .parse::<u64>()
                .map_err(|e| bad(format!("seed: {e}")))?
        }
        None => return Err(bad("missing seed line".into())),
    };
    let mut entries = Vec::new();
    for (no, line) in lines {
        let mut parts = line.split_whitespace();
        let (Some(file), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("line {}: expected `<file> <class_id>`", no + 1)));
        };
        if file.contains('/') || file.contains('\\') || file == "." || file == ".." {
            return Err(bad(format!("line {}: file name `{file}` must be a bare name", no + 1)));
        }
        let class_id = class
            .parse::<usize>()
            .map_err(|e| bad(format!("line {}: class id: {e}", no + 1)))?;
        entries.push(ManifestEntry {
            file: file.to_string(),
            class_id,
        });
    }
    if entries.is_empty() {
        return Err(bad("manifest lists no videos".into()));
    }
    Ok(DatasetManifest { seed, entries })
}
