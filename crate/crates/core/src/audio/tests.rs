use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::error::Error;

const SR: usize = SAMPLE_RATE as usize;

fn sine(freq: f64, amp: f32, seconds: f64) -> Vec<f32> {
    let n = (seconds * SR as f64) as usize;
    (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin() as f32)
        .collect()
}

/// Unit impulses every `period` seconds starting at `first`.
fn click_train(period: f64, first: f64, seconds: f64) -> (Vec<f32>, Vec<usize>) {
    let n = (seconds * SR as f64) as usize;
    let mut x = vec![0.0f32; n];
    let mut at = Vec::new();
    let mut t = first;
    while ((t * SR as f64).round() as usize) < n {
        let s = (t * SR as f64).round() as usize;
        x[s] = 1.0;
        at.push(s);
        t += period;
    }
    (x, at)
}

fn wave(x: Vec<f32>) -> Waveform {
    Waveform::new(x, SAMPLE_RATE).unwrap()
}

#[test]
fn waveform_contract() {
    assert!(matches!(
        Waveform::new(vec![0.0; 100], SAMPLE_RATE),
        Err(Error::AudioTooShort { samples: 100, .. })
    ));
    assert!(Waveform::new(vec![0.0; SR], 22050).is_err());
    assert_eq!(wave(vec![0.0; SR * 3 + 5]).seconds(), 3);
}

#[test]
fn stft_sine_peaks_at_expected_bin() {
    let expect = (440.0f64 * 2048.0 / 44100.0).round() as usize;
    let spec = stft_magnitude(&sine(440.0, 0.5, 1.0), 2048, 512).unwrap();
    assert_eq!(spec.rows(), 1 + (SR - 2048) / 512);
    assert_eq!(spec.cols(), 1025);
    for row in spec.row_iter() {
        let arg = row
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        assert_eq!(arg, expect);
    }
}

#[test]
fn stft_silence_and_impulse() {
    let spec = stft_magnitude(&vec![0.0; 4096], 2048, 512).unwrap();
    assert!(spec.data().iter().all(|&v| v == 0.0));
    let mut x = vec![0.0f32; 2048];
    x[1024] = 1.0;
    let spec = stft_magnitude(&x, 2048, 512).unwrap();
    let mean = spec.row(0).iter().sum::<f32>() / 1025.0;
    assert!(spec.row(0).iter().all(|&v| (v - mean).abs() <= 0.1 * mean));
}

#[test]
fn stft_rejects_bad_arguments() {
    assert!(matches!(
        stft_magnitude(&[0.0; 100], 2048, 512),
        Err(Error::AudioTooShort { .. })
    ));
    assert!(stft_magnitude(&[0.0; 4096], 1000, 512).is_err());
    assert!(stft_magnitude(&[0.0; 4096], 2048, 0).is_err());
    assert!(stft_magnitude(&[0.0; 4096], 2048, 4096).is_err());
}

#[test]
fn mel_sine_peaks_at_nearest_center() {
    let spec = stft_magnitude(&sine(440.0, 0.5, 1.0), N_FFT, HOP).unwrap();
    let mel = mel_raw(&spec, 64, N_FFT, SAMPLE_RATE).unwrap();
    let fb = MelFilterbank::new(64, N_FFT, SAMPLE_RATE).unwrap();
    let nearest = (0..64)
        .min_by(|&a, &b| {
            (fb.center(a) - 440.0)
                .abs()
                .total_cmp(&(fb.center(b) - 440.0).abs())
        })
        .unwrap();
    for row in mel.row_iter() {
        let arg = (0..64).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(arg, nearest);
        let (lo, hi) = fb.band(arg);
        assert!(lo < 440.0 && 440.0 < hi);
    }
}

#[test]
fn mel_silence_noise_and_bounds() {
    let silent = stft_magnitude(&vec![0.0; SR], N_FFT, HOP).unwrap();
    let m0 = mel_raw(&silent, 32, N_FFT, SAMPLE_RATE).unwrap();
    assert!(m0.data().iter().all(|&v| v == 0.0));
    let noise: Vec<f32> = (0..SR)
        .map(|i| ((i * 7919 % 1000) as f32 / 1000.0 - 0.5) * 0.2)
        .collect();
    let noisy = stft_magnitude(&noise, N_FFT, HOP).unwrap();
    let m1 = mel_raw(&noisy, 32, N_FFT, SAMPLE_RATE).unwrap();
    assert!(m1.data().iter().sum::<f32>() > m0.data().iter().sum::<f32>());
    assert!(mel_raw(&noisy, 2000, N_FFT, SAMPLE_RATE).is_err());
}

#[test]
fn htk_scale_round_trip() {
    assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
    for f in [0.0, 440.0, 8000.0, 22050.0] {
        assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-6);
    }
}

#[test]
fn norm_resize_examples() {
    let c = Matrix::new(3, 4, vec![2.5; 12]).unwrap();
    assert!(norm_resize(&c, (2, 2))
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    let x = Matrix::new(2, 3, vec![0.0, 1.0, 0.25, 0.5, 1.0, 0.0]).unwrap();
    assert_eq!(norm_resize(&x, (2, 3)).unwrap(), x);

    let cb: Vec<f32> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f32).collect();
    let cb = Matrix::new(4, 4, cb).unwrap();
    let out = norm_resize(&cb, (2, 2)).unwrap();
    assert!(
        out.data().iter().all(|&v| (v - 0.5).abs() < 1e-7),
        "{out:?}"
    );

    assert!(norm_resize(&Matrix::zeros(0, 0), (2, 2)).is_err());
}

#[test]
fn resize_box_and_bilinear() {
    assert_eq!(resize_1d(&[1.0, 3.0, 5.0], 1), vec![3.0]);
    let r = resize_1d(&[0.0, 1.0, 2.0], 2);
    assert!((r[0] - 1.0 / 3.0).abs() < 1e-12 && (r[1] - 5.0 / 3.0).abs() < 1e-12);
    assert_eq!(resize_1d(&[0.0, 1.0], 4), vec![0.0, 0.25, 0.75, 1.0]);
}

proptest! {
    #[test]
    fn norm_resize_bounded_and_idempotent(r in 1usize..12, c in 1usize..12, tr in 1usize..8, tc in 1usize..8,
                                          vals in proptest::collection::vec(-5.0f32..5.0, 144)) {
        let m = Matrix::new(r, c, vals[..r * c].to_vec()).unwrap();
        let once = norm_resize(&m, (tr, tc)).unwrap();
        prop_assert_eq!(once.shape(), (tr, tc));
        prop_assert!(once.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let at_target = norm_resize(&Matrix::new(tr, tc, vals[..tr * tc].to_vec()).unwrap(), (tr, tc)).unwrap();
        let twice = norm_resize(&at_target, (tr, tc)).unwrap();
        for (a, b) in twice.data().iter().zip(at_target.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn onset_silence_is_zero() {
    let c = onset_envelope(&wave(vec![0.0; SR])).unwrap();
    assert!(c.values.iter().all(|&v| v == 0.0));
    assert!((c.frame_rate - 86.1328125).abs() < 1e-9);
}

/// Frame whose window first holds the click at or past its midpoint.
fn click_frame(s: usize) -> usize {
    (s - N_FFT / 2) / HOP
}

#[test]
fn onset_click_train_local_maxima() {
    let (x, at) = click_train(0.5, 0.25, 3.0);
    let c = onset_envelope(&wave(x)).unwrap();
    for &s in &at {
        let f = click_frame(s);
        if f + 2 >= c.values.len() {
            continue;
        }
        let lo = f.saturating_sub(4);
        let hi = (f + 4).min(c.values.len() - 1);
        let arg = (lo..=hi)
            .max_by(|&a, &b| c.values[a].total_cmp(&c.values[b]))
            .unwrap();
        assert!(
            arg.abs_diff(f) <= 1,
            "click at {s}: max at frame {arg}, expected {f}"
        );
    }
}

#[test]
fn onset_steady_sine_after_onset_is_small() {
    let mut x = vec![0.0f32; SR / 2];
    x.extend(sine(440.0, 0.5, 1.5));
    let c = onset_envelope(&wave(x)).unwrap();
    let peak = c.values.iter().fold(0.0f32, |m, &v| m.max(v));
    let first_full = SR / 2 / HOP + N_FFT / HOP + 1;
    for &v in &c.values[first_full..] {
        assert!(v < 0.05 * peak, "{v} vs peak {peak}");
    }
}

#[test]
fn onset_shift_under_leading_silence() {
    let (x, _) = click_train(0.3, 0.1, 1.5);
    let base = onset_envelope(&wave(x.clone())).unwrap();
    let k = 10;
    let mut padded = vec![0.0f32; k * HOP];
    padded.extend(&x);
    let shifted = onset_envelope(&wave(padded)).unwrap();
    for j in 0..=k - N_FFT / HOP {
        assert_eq!(shifted.values[j], 0.0);
    }
    for i in 1..base.values.len() {
        assert_eq!(shifted.values[k + i], base.values[i]);
    }
}

fn curve(v: &[f32]) -> OnsetCurve {
    OnsetCurve {
        values: v.to_vec(),
        frame_rate: 1.0,
    }
}

fn params(pre: usize, post: usize, delta: f32, wait: usize) -> PeakParams {
    PeakParams {
        pre,
        post,
        delta,
        wait,
    }
}

#[test]
fn pick_peaks_examples() {
    let p = pick_peaks(&curve(&[0.0, 1.0, 0.0]), params(1, 1, 0.0, 1));
    assert_eq!(p.peaks, vec![(1.0, 1.0)]);

    let mono: Vec<f32> = (0..10).map(|i| i as f32).collect();
    let p = pick_peaks(&curve(&mono), params(2, 2, 0.0, 1));
    assert!(p.peaks.len() <= 1);
    if let Some(&(t, _)) = p.peaks.first() {
        assert_eq!(t, 9.0);
    }

    let flat = pick_peaks(&curve(&[0.5; 8]), params(2, 2, 0.0, 1));
    assert!(flat.peaks.is_empty());

    let p = pick_peaks(
        &curve(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
        params(1, 1, 0.0, 5),
    );
    assert_eq!(p.peaks, vec![(1.0, 1.0)]);
}

#[test]
fn default_peak_params() {
    let c = OnsetCurve {
        values: vec![0.0, 2.0, 0.0],
        frame_rate: 86.1328125,
    };
    let p = PeakParams::default_for(&c);
    assert_eq!((p.pre, p.post, p.wait), (3, 3, 9));
    assert!((p.delta - 0.14).abs() < 1e-7);
}

/// Brute-force reference: for every second, scan all peaks.
fn odf_oracle(peaks: &[(f64, f32)], m: usize) -> Vec<f32> {
    (0..m)
        .map(|sec| {
            peaks
                .iter()
                .filter(|(t, _)| {
                    let r = t.round() as i64;
                    r.clamp(0, m as i64 - 1) as usize == sec
                })
                .map(|&(_, s)| s)
                .fold(0.0, f32::max)
        })
        .collect()
}

#[test]
fn odf_lr_examples() {
    let p = PeakList {
        peaks: vec![(1.2, 0.8), (3.7, 0.5)],
    };
    assert_eq!(odf_lr_raw(&p, 5), vec![0.0, 0.8, 0.0, 0.0, 0.5]);
    let p = PeakList {
        peaks: vec![(2.1, 0.3), (2.4, 0.9)],
    };
    assert_eq!(odf_lr_raw(&p, 4), vec![0.0, 0.0, 0.9, 0.0]);
    assert_eq!(odf_lr(&PeakList::default(), 3), vec![0.0; 3]);
    assert_eq!(odf_lr(&p, 4), vec![0.0, 0.0, 1.0, 0.0]);
}

proptest! {
    #[test]
    fn odf_lr_matches_oracle_and_is_order_free(
        raw in proptest::collection::vec((0.0f64..9.49, 0.01f32..1.0), 0..12),
        rot in 0usize..12,
    ) {
        let m = 9;
        let mut sorted = raw.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let out = odf_lr_raw(&PeakList { peaks: sorted.clone() }, m);
        prop_assert_eq!(&out, &odf_oracle(&sorted, m));
        let mut shuffled = sorted.clone();
        if !shuffled.is_empty() {
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
        }
        prop_assert_eq!(odf_lr(&PeakList { peaks: shuffled }, m), odf_lr(&PeakList { peaks: sorted }, m));
        let norm = min_max_normalize(&out);
        prop_assert_eq!(min_max_normalize(&norm), norm);
    }
}

fn nearest_bin(bpm: f64) -> usize {
    let bins = tempo_bins();
    (0..bins.len())
        .min_by(|&a, &b| (bins[a] - bpm).abs().total_cmp(&(bins[b] - bpm).abs()))
        .unwrap()
}

fn tempo_argmaxes(period: f64, seconds: f64) -> Vec<usize> {
    let (x, _) = click_train(period, 0.25, seconds);
    let c = onset_envelope(&wave(x)).unwrap();
    let t = tempogram_raw(&c, TEMPOGRAM_WINDOW_S).unwrap();
    t.row_iter()
        .filter(|r| r.iter().any(|&v| v > 0.0))
        .map(|r| {
            (0..TEMPO_BINS)
                .max_by(|&a, &b| r[a].total_cmp(&r[b]))
                .unwrap()
        })
        .collect()
}

#[test]
fn tempo_bins_span() {
    let b = tempo_bins();
    assert_eq!(b.len(), 64);
    assert!((b[0] - 30.0).abs() < 1e-9 && (b[63] - 300.0).abs() < 1e-9);
}

#[test]
fn tempogram_finds_120_bpm() {
    let target = nearest_bin(120.0);
    let bins = tempo_bins();
    let args = tempo_argmaxes(0.5, 12.0);
    assert!(!args.is_empty());
    for a in args {
        assert!(
            (bins[a] - 120.0).abs() <= 6.0 && a.abs_diff(target) <= 1,
            "bin {a} = {} BPM",
            bins[a]
        );
    }
}

#[test]
fn tempogram_halves_when_stretched() {
    let target = nearest_bin(60.0);
    for a in tempo_argmaxes(1.0, 12.0) {
        assert!(a.abs_diff(target) <= 1, "bin {a}");
    }
}

#[test]
fn tempogram_silence_and_short_input() {
    let c = onset_envelope(&wave(vec![0.0; SR * 9])).unwrap();
    let t = tempogram_raw(&c, TEMPOGRAM_WINDOW_S).unwrap();
    assert!(t.data().iter().all(|&v| v == 0.0));
    let short = onset_envelope(&wave(vec![0.0; SR * 2])).unwrap();
    assert!(tempogram_raw(&short, TEMPOGRAM_WINDOW_S).is_err());
}

#[test]
fn representations_have_m_rows_in_unit_range() {
    let (mut x, _) = click_train(0.5, 0.25, 9.0);
    for (a, b) in x.iter_mut().zip(sine(440.0, 0.1, 9.0)) {
        *a += b;
    }
    let w = wave(x);
    for kind in RhythmKind::ALL {
        let r = extract_rhythm(&w, kind).unwrap();
        assert_eq!(r.matrix.shape(), (9, kind.dim()));
        assert!(r.matrix.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn rhythm_kind_parsing() {
    for k in RhythmKind::ALL {
        assert_eq!(k.as_str().parse::<RhythmKind>().unwrap(), k);
        assert_eq!(RhythmKind::from_code(k.code()), Some(k));
    }
    assert!("chroma".parse::<RhythmKind>().is_err());
}

#[test]
fn wav_round_trip_and_errors() {
    let x = sine(440.0, 0.5, 1.0);
    let bytes = encode_wav(&x, SAMPLE_RATE);
    let w = parse_wav(&bytes, Path::new("mem.wav")).unwrap();
    assert_eq!(w.samples().len(), x.len());
    for (a, b) in w.samples().iter().zip(&x) {
        assert!((a - b).abs() < 1.0 / 16000.0);
    }
    assert_eq!(encode_wav(w.samples(), SAMPLE_RATE), bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        parse_wav(&bad, Path::new("a.wav")),
        Err(Error::Malformed { offset: 0, .. })
    ));
    let mut stereo = bytes.clone();
    stereo[22] = 2;
    assert!(matches!(
        parse_wav(&stereo, Path::new("a.wav")),
        Err(Error::Malformed { offset: 22, .. })
    ));
    let truncated = &bytes[..bytes.len() - 10];
    let err = parse_wav(truncated, Path::new("t.wav")).unwrap_err();
    assert!(matches!(err, Error::Malformed { .. }));
    assert!(err.to_string().contains("t.wav"));
}

#[test]
fn peak_normalize_to_minus_one_dbfs() {
    let mut x = vec![0.25f32, -0.5, 0.1];
    peak_normalize(&mut x, -1.0);
    assert!((x[1].abs() as f64 - 10f64.powf(-0.05)).abs() < 1e-6);
    let mut z = vec![0.0f32; 3];
    peak_normalize(&mut z, -1.0);
    assert_eq!(z, vec![0.0; 3]);
}
