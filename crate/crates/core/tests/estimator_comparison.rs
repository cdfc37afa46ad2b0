//! Cross-module checks: the weighted estimator against the plain whitened
//! one on noisy scenes, and the consistency search fed with delays produced
//! by real array geometry.

use soundloc_core::geometry::ArrayGeometry;
use soundloc_core::rng::Rng;
use soundloc_core::simulate::{render, Scene, SignalKind, SourceSignal};
use soundloc_core::spectral::{
    crosscorr_weighted, crosscorr_whitened, enhanced_weight, frame_stream, noise_mask_weight,
    whitening_floor, CrossCorrelation, FrameConfig, NoiseState, Window,
};
use soundloc_core::tdoa::{consistency_search, Peak, PeakList};

fn prism() -> ArrayGeometry {
    ArrayGeometry::new(
        ArrayGeometry::prism_corners(0.50, 0.40, 0.36),
        343.0,
        48_000.0,
    )
    .unwrap()
}

/// Noise concentrated in the lower half of the band (raised-cosine rolloff
/// over its top octave; fan and machinery noise dies off smoothly, not at a
/// cliff), unit RMS.
fn halfband_noise(len: usize, seed: u64) -> Vec<f64> {
    use soundloc_core::Complex64;
    let mut rng = Rng::new(seed);
    let n = len.next_power_of_two();
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n / 4 {
        let edge = n / 8;
        let mag = if k < edge {
            1.0
        } else {
            0.5 * (1.0 + (core::f64::consts::PI * (k - edge) as f64 / edge as f64).cos())
        };
        let phase = rng.range(0.0, core::f64::consts::TAU);
        spec[k] = Complex64::new(mag * phase.cos(), mag * phase.sin());
        spec[n - k] = spec[k].conj();
    }
    soundloc_core::fft::Fft::new(n).inverse(&mut spec);
    let raw: Vec<f64> = spec[..len].iter().map(|c| c.re).collect();
    let rms = (raw.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    raw.iter().map(|x| x / rms).collect()
}

fn peak_to_background(corr: &CrossCorrelation, true_lag: i64) -> f64 {
    let peak = corr.value_at(true_lag);
    let mut background: Vec<f64> = corr
        .lags()
        .filter(|(lag, _)| (lag - true_lag).abs() > 3)
        .map(|(_, v)| v.abs())
        .collect();
    background.sort_by(f64::total_cmp);
    peak / background[background.len() / 2]
}

/// Intermittent speech-band bursts from a prism-array source at SNR 0 dB
/// against stationary noise concentrated in the lower half of the band.
/// Uniform whitening spreads the correlation over every bin, so a source
/// confined to a narrow band gets drowned by the noise-only bins; scaling
/// each bin by the squared SNR weight concentrates the correlation where
/// the source actually is. While a burst is sounding, the weighted
/// correlation must show the sharper true-delay peak relative to its
/// background.
#[test]
fn weighting_beats_whitening_in_colored_noise() {
    let geom = prism();
    let n = 1024;
    let hop = n / 2;
    let total_frames = 140;
    let len = hop * total_frames + n;

    // Bursts of 4 hops every 16 hops, starting after the warm-up. Frames
    // fully inside a burst start at b, b + hop, b + 2*hop; the first one
    // catches the envelope onset before the weights can know about the
    // source, so the comparison runs on the two sounding frames.
    let mut source = vec![0.0; len];
    let mut sounding_starts = Vec::new();
    let mut seed = 100;
    let mut start = hop * 14;
    while start + 4 * hop < len - n - 512 {
        let burst = SourceSignal::speech_burst(4 * hop, 48_000.0, seed).samples;
        source[start..start + 4 * hop].copy_from_slice(&burst);
        sounding_starts.push(start + hop);
        sounding_starts.push(start + 2 * hop);
        seed += 1;
        start += 16 * hop;
    }

    let scene = Scene::new(
        [3.0, 1.0, 0.5],
        SourceSignal {
            samples: source,
            kind: SignalKind::SpeechBurst,
        },
        f64::INFINITY,
        48_000.0,
    );
    let mut channels = render(&scene, &geom, len as f64 / 48_000.0 + 0.02).unwrap();
    for ch in &mut channels {
        ch.truncate(len);
    }

    // Unit-RMS-scaled halfband noise per channel at 0 dB against the mean
    // in-burst signal level.
    let in_burst_rms = {
        let mut acc = 0.0;
        let mut count = 0usize;
        for ch in &channels {
            for &s in sounding_starts.iter() {
                acc += ch[s..s + n].iter().map(|x| x * x).sum::<f64>();
                count += n;
            }
        }
        (acc / count as f64).sqrt()
    };
    for (c, ch) in channels.iter_mut().enumerate() {
        let noise = halfband_noise(len, 900 + c as u64);
        for (x, nv) in ch.iter_mut().zip(&noise) {
            *x += nv * in_burst_rms;
        }
    }

    // True lag for pair (0, 1) from the scene geometry.
    let mics = geom.mic_positions();
    let src = [3.0, 1.0, 0.5];
    let dist = |m: [f64; 3]| {
        ((src[0] - m[0]).powi(2) + (src[1] - m[1]).powi(2) + (src[2] - m[2]).powi(2)).sqrt()
    };
    let true_lag = ((dist(mics[0]) - dist(mics[1])) / 343.0 * 48_000.0).round() as i64;

    let cfg = FrameConfig::new(n, 48_000.0, Window::Hann).unwrap();
    let mut noise_state = NoiseState::with_defaults(cfg.bins());

    let mut improved = 0usize;
    let mut compared = 0usize;
    let mut argmax_hits = (0usize, 0usize); // (plain, weighted)
    for frame in frame_stream(&channels, &cfg).unwrap() {
        let psd = frame.mean_psd();
        if !noise_state.warmed_up() {
            noise_state.update(&psd).unwrap();
            continue;
        }
        let mask = noise_mask_weight(&psd, &noise_state);
        let weights = enhanced_weight(&mask, &psd, &noise_state);
        noise_state.update(&psd).unwrap();

        let frame_start = frame.index as usize * hop;
        if !sounding_starts.contains(&frame_start) {
            continue;
        }

        let si = &frame.spectra[0];
        let sj = &frame.spectra[1];
        let floor = whitening_floor(si, sj);
        let max_lag = geom.max_lag(0, 1);
        let plain = crosscorr_whitened((0, 1), si, sj, max_lag, floor).unwrap();
        let weighted = crosscorr_weighted((0, 1), si, sj, &weights, max_lag, floor).unwrap();

        compared += 1;
        if peak_to_background(&weighted, true_lag) > peak_to_background(&plain, true_lag) {
            improved += 1;
        }
        if plain.argmax().0 == true_lag {
            argmax_hits.0 += 1;
        }
        if weighted.argmax().0 == true_lag {
            argmax_hits.1 += 1;
        }
    }
    assert!(compared >= 15, "not enough frames compared: {compared}");
    assert_eq!(
        improved, compared,
        "weighting must sharpen the peak on every sounding frame"
    );
    assert!(
        argmax_hits.1 >= argmax_hits.0,
        "weighted correlation found the true lag less often ({} vs {})",
        argmax_hits.1,
        argmax_hits.0
    );
}

/// Peak lists built from exact prism-geometry delays: the search must
/// return the true set with every one of the 21 derived-pair constraints
/// honored at one-sample tolerance.
#[test]
fn search_recovers_true_delays_on_prism_geometry() {
    let geom = prism();
    let mut rng = Rng::new(42);
    for trial in 0..50 {
        let dir = rng.unit_vector();
        let mics = geom.mic_positions();
        // Far-field arrival differences, rounded per pair like a correlator.
        let lag = |i: usize, j: usize| -> i64 {
            let di = dir[0] * mics[i][0] + dir[1] * mics[i][1] + dir[2] * mics[i][2];
            let dj = dir[0] * mics[j][0] + dir[1] * mics[j][1] + dir[2] * mics[j][2];
            // Arrival at i lags arrival at j when j sits closer to the
            // source along dir: dt = (t_i - t_j) * fs.
            ((dj - di) / geom.speed_of_sound() * geom.sample_rate()).round() as i64
        };

        let mut primary = Vec::new();
        for j in 1..8 {
            let truth = lag(0, j);
            // True peak plus decoys away from it.
            let peaks = vec![
                Peak {
                    lag: truth,
                    value: 1.0,
                },
                Peak {
                    lag: truth + 17,
                    value: 0.6,
                },
                Peak {
                    lag: truth - 23,
                    value: 0.5,
                },
            ];
            primary.push(PeakList::new((0, j), peaks));
        }
        let found = consistency_search(&primary, 1, 0.0, |i, j| {
            PeakList::new(
                (i, j),
                vec![Peak {
                    lag: lag(i, j),
                    value: 0.4,
                }],
            )
        })
        .unwrap()
        .unwrap_or_else(|| panic!("trial {trial}: no detection for {dir:?}"));

        let mut constraints_checked = 0;
        for i in 1..8 {
            for j in (i + 1)..8 {
                let derived = found.delays[j - 1] - found.delays[i - 1];
                assert!(
                    (derived - lag(i, j)).abs() <= 1,
                    "trial {trial}: pair ({i}, {j}) off by more than tolerance"
                );
                constraints_checked += 1;
            }
        }
        assert_eq!(constraints_checked, 21);
        for (k, &d) in found.delays.iter().enumerate() {
            assert_eq!(
                d,
                lag(0, k + 1),
                "trial {trial}: wrong delay for pair (0, {})",
                k + 1
            );
        }
    }
}

/// A decoy list replacing one pair must sink the whole combination.
#[test]
fn decoy_pair_prevents_detection() {
    let geom = prism();
    let mut rng = Rng::new(7);
    let dir = rng.unit_vector();
    let mics = geom.mic_positions();
    let lag = |i: usize, j: usize| -> i64 {
        let di = dir[0] * mics[i][0] + dir[1] * mics[i][1] + dir[2] * mics[i][2];
        let dj = dir[0] * mics[j][0] + dir[1] * mics[j][1] + dir[2] * mics[j][2];
        ((dj - di) / geom.speed_of_sound() * geom.sample_rate()).round() as i64
    };
    let mut primary = Vec::new();
    for j in 1..8 {
        let truth = if j == 4 {
            // Decoys only for this pair, far from the true delay.
            lag(0, j) + 40
        } else {
            lag(0, j)
        };
        primary.push(PeakList::new(
            (0, j),
            vec![Peak {
                lag: truth,
                value: 1.0,
            }],
        ));
    }
    let found = consistency_search(&primary, 1, 0.0, |i, j| {
        PeakList::new(
            (i, j),
            vec![Peak {
                lag: lag(i, j),
                value: 0.4,
            }],
        )
    })
    .unwrap();
    assert!(
        found.is_none(),
        "derived-pair verification must reject the decoy"
    );
}
