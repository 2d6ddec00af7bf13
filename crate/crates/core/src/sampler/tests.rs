use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn ramp_video(frames: usize) -> VideoTensor {
    // Frame t is filled with the value t.
    let data = (0..frames).flat_map(|t| vec![t as f32; 4]).collect();
    VideoTensor::new(frames, 1, 2, 2, data).unwrap()
}

fn first_value(v: &VideoTensor) -> f32 {
    v.frame(0)[0]
}

#[test]
fn default_sampling_starts() {
    let v = ramp_video(64);
    let s = sample_snippets(&v, 16, 8, 3).unwrap();
    let starts: Vec<usize> = s.iter().map(|s| s.start).collect();
    assert_eq!(starts, vec![0, 24, 48]);
    assert_eq!(first_value(&s[2].clip), 48.0);
}

#[test]
fn too_short_video_names_minimum() {
    let v = ramp_video(63);
    match sample_snippets(&v, 16, 8, 3) {
        Err(crate::Error::VideoTooShort { frames, required }) => {
            assert_eq!((frames, required), (63, 64));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn contiguous_split() {
    let v = ramp_video(32);
    let s = sample_snippets(&v, 16, 0, 2).unwrap();
    assert_eq!(s.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 16]);
}

#[test]
fn concatenated_snippets_reproduce_covered_frames() {
    let v = ramp_video(32);
    let s = sample_snippets(&v, 16, 0, 2).unwrap();
    let clips: Vec<VideoTensor> = s.into_iter().map(|s| s.clip).collect();
    assert_eq!(VideoTensor::concat(&clips).unwrap(), v);

    let v = ramp_video(70);
    let s = sample_snippets_at(&v, 16, 8, 3, 5).unwrap();
    for snip in &s {
        assert_eq!(snip.clip, v.clip(snip.start, 16).unwrap());
    }
}

#[test]
fn random_offset_keeps_snippets_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let off = random_offset(70, 16, 8, 3, &mut rng).unwrap();
        assert!(off <= 6);
        assert!(sample_snippets_at(&ramp_video(70), 16, 8, 3, off).is_ok());
    }
}

#[test]
fn identity_permutation_keeps_order() {
    let v = ramp_video(64);
    let snips: Vec<VideoTensor> = sample_snippets(&v, 16, 8, 3)
        .unwrap()
        .into_iter()
        .map(|s| s.clip)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = shuffle_tuple(snips.clone(), Some(0), 4, &mut rng).unwrap();
    assert_eq!(t.snippets, snips);
    assert_eq!(t.classes(), 6);
    assert!(shuffle_tuple(snips, Some(6), 4, &mut rng).is_err());
}

#[test]
fn shuffle_then_unshuffle_restores_chronology() {
    let v = ramp_video(64);
    let snips: Vec<VideoTensor> = sample_snippets(&v, 16, 8, 3)
        .unwrap()
        .into_iter()
        .map(|s| s.clip)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for id in 0..6 {
        let t = shuffle_tuple(snips.clone(), Some(id), 4, &mut rng).unwrap();
        let chrono: Vec<VideoTensor> = t.chronological().into_iter().cloned().collect();
        assert_eq!(chrono, snips);
        assert_eq!(permutation_index(&t.order).unwrap(), id);
        for (pos, snip) in t.snippets.iter().enumerate() {
            assert_eq!(first_value(snip), (t.order[pos] * 24) as f32);
            assert_eq!(t.frame_sets[pos].len(), 4);
        }
    }
}

#[test]
fn four_snippet_tuples_are_structurally_sound() {
    let v = ramp_video(16 * 4 + 3 * 8);
    let snips: Vec<VideoTensor> = sample_snippets(&v, 16, 8, 4)
        .unwrap()
        .into_iter()
        .map(|s| s.clip)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = shuffle_tuple(snips.clone(), None, 4, &mut rng).unwrap();
    assert_eq!(t.classes(), 24);
    assert!(t.permutation_id < 24);
    let chrono: Vec<VideoTensor> = t.chronological().into_iter().cloned().collect();
    assert_eq!(chrono, snips);
}

#[test]
fn uniform_permutation_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 6];
    let draws = 10_000;
    for _ in 0..draws {
        counts[draw_permutation(3, &mut rng)] += 1;
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 1.0 / 6.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn frameset_splits() {
    let v = ramp_video(16);
    let sets = split_framesets(&v, 4).unwrap();
    assert_eq!(sets.len(), 4);
    assert!(sets.iter().all(|s| s.frames() == 4));
    assert_eq!(first_value(&sets[3]), 12.0);

    let singles = split_framesets(&v, 16).unwrap();
    assert_eq!(singles.len(), 16);
    assert!(singles.iter().all(|s| s.frames() == 1));

    assert!(split_framesets(&v, 3).is_err());
    assert!(split_framesets(&v, 0).is_err());
}

#[test]
fn generator_is_deterministic_and_moving() {
    let label = SyntheticLabel::for_class(2);
    let a = gen_synthetic_video(42, &label, 64, 1, 16, 16).unwrap();
    let b = gen_synthetic_video(42, &label, 64, 1, 16, 16).unwrap();
    assert_eq!(a, b);
    let other = gen_synthetic_video(42, &SyntheticLabel::for_class(3), 64, 1, 16, 16).unwrap();
    assert_ne!(a, other);
    for t in 0..63 {
        let diff: f64 = a
            .frame(t)
            .iter()
            .zip(a.frame(t + 1))
            .map(|(x, y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.frame_len() as f64;
        assert!(diff > 0.0, "frames {t} and {} identical", t + 1);
    }
    assert!(gen_synthetic_video(1, &label, 0, 1, 16, 16).is_err());
    assert!(gen_synthetic_video(1, &label, 64, 1, 0, 16).is_err());
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn frame_mean_tracks_frame_index() {
    // The per-frame spatial mean is the ramp channel; it must encode time.
    for seed in 0..100u64 {
        let label = SyntheticLabel::for_class((seed % 10) as usize);
        let v = gen_synthetic_video(seed, &label, 64, 1, 16, 16).unwrap();
        let idx: Vec<f64> = (0..64).map(|t| t as f64).collect();
        let means: Vec<f64> = (0..64)
            .map(|t| v.frame(t).iter().map(|&x| x as f64).sum::<f64>() / v.frame_len() as f64)
            .collect();
        let r = pearson(&idx, &means);
        assert!(r > 0.9, "seed {seed}: r = {r}");
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let spec = DatasetSpec {
        videos: 6,
        classes: 3,
        ..DatasetSpec::default()
    };
    let ds = Dataset::generate(&spec).unwrap();
    assert_eq!(ds.labels(), vec![0, 1, 2, 0, 1, 2]);
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let back = Dataset::read(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(Dataset::generate(&spec).unwrap(), ds);
}

#[test]
fn video_header_is_little_endian_i32() {
    let v = ramp_video(2);
    let bytes = encode_video(&v, 9).unwrap();
    assert_eq!(&bytes[..4], &2i32.to_le_bytes());
    assert_eq!(&bytes[16..20], &9i32.to_le_bytes());
    assert_eq!(bytes.len(), 20 + 4 * 8);
    let (back, class) = decode_video(&bytes).unwrap();
    assert_eq!((back, class), (v, 9));
}

#[test]
fn decode_rejects_bad_inputs() {
    let v = ramp_video(2);
    let mut bytes = encode_video(&v, 1).unwrap();
    assert!(decode_video(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_video(&bytes[..10]).is_err());
    bytes[0..4].copy_from_slice(&(-1i32).to_le_bytes());
    assert!(decode_video(&bytes).is_err());

    assert!(decode_manifest("").is_err());
    assert!(decode_manifest("tcgl-dataset v2\nseed 1\na.bin 0\n").is_err());
    assert!(decode_manifest("tcgl-dataset v1\nseed x\na.bin 0\n").is_err());
    assert!(decode_manifest("tcgl-dataset v1\nseed 1\n").is_err());
    assert!(decode_manifest("tcgl-dataset v1\nseed 1\n../a.bin 0\n").is_err());
    assert!(decode_manifest("tcgl-dataset v1\nseed 1\na.bin 0 extra\n").is_err());
    let ok = decode_manifest("tcgl-dataset v1\nseed 1\na.bin 4\n").unwrap();
    assert_eq!(ok.entries[0].class_id, 4);
}

proptest! {
    #[test]
    fn framesets_partition_the_snippet(m_pow in 0u32..5) {
        let m = 1usize << m_pow;
        let ranges = frameset_ranges(16, m).unwrap();
        let covered: Vec<usize> = ranges.iter().flat_map(|r| r.clone()).collect();
        prop_assert_eq!(covered, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_video(&bytes);
        let _ = decode_manifest(&String::from_utf8_lossy(&bytes));
    }
}
