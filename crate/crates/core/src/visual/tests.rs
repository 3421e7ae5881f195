use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn seq(colors: &[[u8; 3]]) -> FrameSequence {
    FrameSequence::new(colors.iter().map(|&c| Image::solid(32, 24, c)).collect()).unwrap()
}

#[test]
fn histogram_examples() {
    let red = Image::solid(16, 16, [255, 0, 0]);
    let h = color_histogram(&red, 8).unwrap();
    let mut expect = vec![0.0f32; 24];
    expect[7] = 1.0;
    expect[8] = 1.0;
    expect[16] = 1.0;
    assert_eq!(h, expect);

    let mut half = Image::solid(16, 16, [0, 0, 0]);
    for px in half.pixels_mut()[..16 * 8 * 3].iter_mut() {
        *px = 255;
    }
    let h = color_histogram(&half, 8).unwrap();
    for c in 0..3 {
        let block = &h[c * 8..(c + 1) * 8];
        assert_eq!(block, &[0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
    }
    assert!(color_histogram(&red, 1).is_err());
}

proptest! {
    #[test]
    fn histogram_blocks_sum_to_one(px in proptest::collection::vec(any::<u8>(), 16 * 16 * 3)) {
        let img = Image::new(16, 16, px).unwrap();
        let h = color_histogram(&img, 8).unwrap();
        for c in 0..3 {
            prop_assert!((h[c * 8..(c + 1) * 8].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn semantic_unit_norm(px in proptest::collection::vec(any::<u8>(), 16 * 16 * 3), seed in any::<u64>()) {
        let img = Image::new(16, 16, px).unwrap();
        let v = stub_semantic_embed(&img, 16, seed).unwrap();
        let n: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn semantic_is_deterministic_and_smooth() {
    let mut img = Image::solid(40, 30, [10, 120, 200]);
    img.pixels_mut()[100] = 7;
    let a = stub_semantic_embed(&img, 64, 9).unwrap();
    let b = stub_semantic_embed(&img, 64, 9).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    let mut img2 = img.clone();
    img2.pixels_mut()[100] += 1;
    let c = stub_semantic_embed(&img2, 64, 9).unwrap();
    let cos: f32 = a.iter().zip(&c).map(|(x, y)| x * y).sum();
    assert!(cos > 0.99);
    assert!(stub_semantic_embed(&img, 4, 9).is_err());
    let black = stub_semantic_embed(&Image::solid(16, 16, [0, 0, 0]), 8, 1).unwrap();
    assert_eq!(black[0], 1.0);
}

#[test]
fn scene_examples() {
    let same = seq(&[[30, 60, 90]; 5]);
    assert_eq!(
        detect_scene_transitions(&same, SCENE_THRESHOLD),
        vec![0.0; 5]
    );

    let mut colors = vec![[0, 0, 0]; 3];
    colors.extend([[255, 0, 0]; 3]);
    assert_eq!(
        detect_scene_transitions(&seq(&colors), SCENE_THRESHOLD),
        vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
    );

    let alt: Vec<[u8; 3]> = (0..6)
        .map(|i| {
            if i % 2 == 0 {
                [0, 0, 0]
            } else {
                [255, 255, 255]
            }
        })
        .collect();
    assert_eq!(
        detect_scene_transitions(&seq(&alt), SCENE_THRESHOLD),
        vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]
    );
}

#[test]
fn hsv_conversion() {
    assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
    let [h, s, v] = rgb_to_hsv([0.0, 1.0, 0.0]);
    assert!((h - 1.0 / 3.0).abs() < 1e-12 && s == 1.0 && v == 1.0);
    assert_eq!(rgb_to_hsv([0.5, 0.5, 0.5]), [0.0, 0.0, 0.5]);
}

#[test]
fn rhythm_curve_examples() {
    assert_eq!(visual_rhythm_curve(&seq(&[[5, 5, 5]; 4])), vec![0.0; 4]);

    let cut = visual_rhythm_curve(&seq(&[[0, 0, 0], [0, 0, 0], [200, 10, 10], [200, 10, 10]]));
    assert_eq!(cut, vec![0.0, 0.0, 1.0, 0.0]);

    let fade: Vec<[u8; 3]> = (0..6).map(|i| [10 + 20 * i as u8; 3]).collect();
    let c = visual_rhythm_curve(&seq(&fade));
    assert_eq!(c[0], 0.0);
    for &v in &c[1..] {
        assert!((v - c[1]).abs() < 1e-6 && v > 0.0);
    }
}

#[test]
fn beats_examples() {
    assert_eq!(
        visual_beats(&[0.0, 0.2, 1.0, 0.2, 0.0]),
        vec![0.0, 0.0, 1.0, 0.0, 0.0]
    );
    assert_eq!(visual_beats(&[0.0, 0.0, 0.0, 0.0]), vec![0.0; 4]);
    let v = visual_beats(&[0.0, 1.0, 0.0, 0.0, 0.8, 0.0]);
    assert_eq!(v, vec![0.0, 1.0, 0.0, 0.0, 0.8, 0.0]);
}

proptest! {
    #[test]
    fn beats_sit_on_local_maxima(curve in proptest::collection::vec(0.0f32..1.0, 2..20)) {
        let v = visual_beats(&curve);
        prop_assert_eq!(v.len(), curve.len());
        for (m, &b) in v.iter().enumerate() {
            prop_assert!(b >= 0.0);
            if b > 0.0 {
                let lo = m.saturating_sub(1);
                let hi = (m + 1).min(curve.len() - 1);
                prop_assert!(curve[lo..=hi].iter().all(|&x| x <= curve[m]));
            }
        }
    }

    #[test]
    fn solid_scene_cuts_are_exact(cuts in proptest::collection::btree_set(1usize..12, 0..5)) {
        let palette = [[230, 25, 75], [60, 180, 75], [0, 130, 200], [255, 225, 25], [145, 30, 180], [0, 0, 0]];
        let mut scene = 0;
        let colors: Vec<[u8; 3]> = (0..12)
            .map(|m| {
                if cuts.contains(&m) {
                    scene += 1;
                }
                palette[scene % palette.len()]
            })
            .collect();
        let fs = seq(&colors);
        let e = detect_scene_transitions(&fs, SCENE_THRESHOLD);
        let curve = visual_rhythm_curve(&fs);
        let beats = visual_beats(&curve);
        for m in 0..12 {
            prop_assert_eq!(e[m] == 1.0, cuts.contains(&m));
            if e[m] == 1.0 {
                prop_assert!(curve[m] > 0.0);
            } else {
                prop_assert_eq!(curve[m], 0.0);
                prop_assert_eq!(beats[m], 0.0);
            }
        }
    }
}

#[test]
fn features_have_m_rows() {
    let fs = seq(&[[0, 0, 0], [255, 0, 0], [255, 0, 0], [0, 0, 255]]);
    let f = extract_video_features(&fs, &VisualParams::default()).unwrap();
    assert_eq!(f.semantic.shape(), (4, SEMANTIC_DIM));
    assert_eq!(f.emotional.shape(), (4, EMO_DIM));
    assert_eq!(f.scene, vec![0.0, 1.0, 0.0, 1.0]);
    assert_eq!(f.beats.len(), 4);
}

#[test]
fn sequence_validation() {
    assert!(FrameSequence::new(vec![]).is_err());
    assert!(FrameSequence::new(vec![Image::solid(8, 8, [0; 3])]).is_err());
    assert!(FrameSequence::new(vec![
        Image::solid(16, 16, [0; 3]),
        Image::solid(17, 16, [0; 3])
    ])
    .is_err());
}

#[test]
fn ppm_round_trip_and_errors() {
    let mut img = Image::solid(17, 16, [1, 2, 3]);
    img.pixels_mut()[5] = 250;
    let bytes = encode_ppm(&img);
    assert_eq!(parse_ppm(&bytes, Path::new("x.ppm")).unwrap(), img);

    let with_comment = b"P6\n# made by hand\n16 16\n255\n"
        .iter()
        .copied()
        .chain(vec![0u8; 768])
        .collect::<Vec<_>>();
    assert_eq!(
        parse_ppm(&with_comment, Path::new("c.ppm"))
            .unwrap()
            .width(),
        16
    );

    let err = parse_ppm(b"P3\n1 1\n255\n", Path::new("p3.ppm")).unwrap_err();
    assert!(matches!(err, Error::Malformed { offset: 0, .. }));
    let err = parse_ppm(&bytes[..bytes.len() - 3], Path::new("short.ppm")).unwrap_err();
    assert!(matches!(err, Error::Malformed { .. }));
    assert!(err.to_string().contains("short.ppm"));
    let err = parse_ppm(b"P6\n16 16\n65535\n", Path::new("deep.ppm")).unwrap_err();
    assert!(matches!(err, Error::Malformed { offset: 9, .. }), "{err}");
}

#[test]
fn frame_directory_listing() {
    let dir = tempfile::tempdir().unwrap();
    for m in [2usize, 0, 1] {
        write_ppm(
            &dir.path().join(frame_file_name(m)),
            &Image::solid(16, 16, [m as u8; 3]),
        )
        .unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    let fs = FrameSequence::read_dir(dir.path()).unwrap();
    assert_eq!(fs.seconds(), 3);
    assert_eq!(fs.frames()[2].pixel(0, 0), [2, 2, 2]);
}
