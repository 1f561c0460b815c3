use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use vimo::binselect::*;
use vimo::combine::*;
use vimo::dsp;
use vimo::eval::{pcc, rate_error};
use vimo::fit::{fit_templates, FitConfig};
use vimo::preprocess::*;
use vimo::sim::*;
use vimo::templates::{ParamBounds, TemplateParams};
use vimo::DisplacementSeries;

const FS: f64 = 20.0;

fn small_config() -> RadarConfig {
    RadarConfig {
        samples_per_chirp: 32,
        n_frames: 40,
        ..RadarConfig::default()
    }
}

prop_compose! {
    fn complex()(re in -1.0..1.0f64, im in -1.0..1.0f64) -> Complex64 {
        Complex64::new(re, im)
    }
}

prop_compose! {
    fn small_cube()(samples in prop::collection::vec(complex(), 32 * 40)) -> IFDataCube {
        IFDataCube::new(samples, small_config()).unwrap()
    }
}

prop_compose! {
    /// 120-frame map of `n` bins: sinusoidal phase in a few bins, noise
    /// elsewhere.
    fn vital_map()(
        n in 4usize..12,
        seed in any::<u64>(),
    ) -> RangeMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = 120;
        let mut bins = vec![Complex64::new(0.0, 0.0); m * n];
        for b in 0..n {
            let gain: f64 = rng.gen_range(0.01..1.0);
            let f: f64 = rng.gen_range(0.1..2.0);
            let depth: f64 = rng.gen_range(0.0..6.0);
            let noisy = rng.gen_bool(0.5);
            for t in 0..m {
                let phase = depth * (2.0 * PI * f * t as f64 / FS).sin();
                let mut v = Complex64::cis(phase) * gain;
                if noisy {
                    v += Complex64::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)) * gain;
                }
                bins[t * n + b] = v;
            }
        }
        RangeMap::new(bins, m, n, 0.0375, FS).unwrap()
    }
}

fn smooth_series(n: usize, shift: f64, freqs: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let t = m as f64 / FS - shift;
            freqs.iter().enumerate().map(|(k, f)| (2.0 * PI * f * t).sin() / (k + 1) as f64).sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unwrap_steps_stay_below_pi(wrapped in prop::collection::vec(-PI..PI, 2..200)) {
        let u = dsp::unwrap(&wrapped);
        for w in u.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= PI + 1e-12);
        }
        for (a, b) in u.iter().zip(&wrapped) {
            let k = (a - b) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn clutter_removal_is_idempotent(cube in small_cube()) {
        let once = remove_clutter(&cube).unwrap();
        let twice = remove_clutter(&once).unwrap();
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        for k in 0..32 {
            let mean: Complex64 = (0..40).map(|m| once.frame(m)[k]).sum::<Complex64>() / 40.0;
            prop_assert!(mean.norm() < 1e-12);
        }
    }

    #[test]
    fn range_fft_is_linear_and_unitary(a in small_cube(), b in small_cube(), k in complex()) {
        let mix = IFDataCube::new(a.samples.iter().zip(&b.samples).map(|(x, y)| x + k * y).collect(), small_config()).unwrap();
        for window in [Window::Rectangular, Window::Hann] {
            let (ma, mb, mm) = (range_fft(&a, window), range_fft(&b, window), range_fft(&mix, window));
            for ((x, y), z) in ma.bins.iter().zip(&mb.bins).zip(&mm.bins) {
                prop_assert!((x + k * y - z).norm() < 1e-10);
            }
        }
        let raw: f64 = a.samples.iter().map(|v| v.norm_sqr()).sum();
        let mapped = range_fft(&a, Window::Rectangular).total_energy();
        prop_assert!((raw - mapped).abs() < 1e-9 * raw);
    }

    #[test]
    fn selection_is_nonempty_and_drawn_from_candidates(map in vital_map()) {
        let sel = select_bins(&map, &SelectionConfig::default()).unwrap();
        prop_assert!(!sel.msp_bins.is_empty());
        let top = strongest_bin(&map.motion_energies());
        for b in &sel.msp_bins {
            prop_assert!(sel.candidates.contains(b) || *b == top);
        }
        prop_assert_eq!(sel.msp_bins.len(), sel.detection.len());
    }

    #[test]
    fn selection_ignores_overall_scale(map in vital_map(), k in 1e-4..1e4f64) {
        let cfg = SelectionConfig::default();
        let a = select_bins(&map, &cfg).unwrap();
        let b = select_bins(&map.scaled(k), &cfg).unwrap();
        prop_assert_eq!(a.candidates, b.candidates);
        prop_assert_eq!(a.msp_bins, b.msp_bins);
    }

    #[test]
    fn stricter_resp_threshold_shrinks_resp_set(map in vital_map(), lo in 0.5..10.0f64, extra in 0.0..50.0f64) {
        let set = |th: f64| -> Vec<usize> {
            let cfg = SelectionConfig { th_resp: th, ..Default::default() };
            let sel = select_bins(&map, &cfg).unwrap();
            sel.msp_bins.iter().zip(&sel.detection)
                .filter(|(_, d)| **d == Detection::Respiration)
                .map(|(b, _)| *b)
                .collect()
        };
        let loose = set(lo);
        let strict = set(lo + extra);
        prop_assert!(strict.iter().all(|b| loose.contains(b)));
    }

    #[test]
    fn channel_estimate_invariants(map in vital_map(), max_lag in 0.2..2.5f64) {
        let bins: Vec<usize> = (0..map.n_bins).collect();
        let est = estimate_channels(&map, &bins, max_lag).unwrap();
        let r = est.bins.iter().position(|&b| b == est.reference_bin).unwrap();
        prop_assert_eq!(est.delays[r], 0.0);
        for d in &est.delays {
            prop_assert!(d.abs() <= max_lag + 1e-12);
        }
        for c in &est.correlations {
            prop_assert!(*c <= 1.0 + 1e-12 && *c >= -1.0 - 1e-12);
        }
    }

    #[test]
    fn combining_is_order_free_and_centered(map in vital_map(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut bins: Vec<usize> = (0..map.n_bins).collect();
        let a = estimate_channels(&map, &bins, DEFAULT_MAX_LAG).unwrap();
        bins.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let b = estimate_channels(&map, &bins, DEFAULT_MAX_LAG).unwrap();
        prop_assert_eq!(&a, &b);
        let out = coherent_combine(&map, &a, 5e-3).unwrap();
        prop_assert!(dsp::mean(&out.values).abs() < 1e-12);
    }

    #[test]
    fn xcorr_recovers_whole_frame_shifts(lag in -10i64..=10, f in 0.15..0.6f64) {
        let base = smooth_series(400, 0.0, &[f, 3.1 * f]);
        let shifted = smooth_series(400, lag as f64 / FS, &[f, 3.1 * f]);
        let (c, got) = xcorr_frames(&base, &shifted, 20).unwrap();
        prop_assert_eq!(got, lag);
        prop_assert!(c > 0.99);
    }

    #[test]
    fn pcc_ignores_positive_affine_maps(
        x in prop::collection::vec(-1.0..1.0f64, 8..64),
        y in prop::collection::vec(-1.0..1.0f64, 64),
        a in 0.01..100.0f64,
        b in -10.0..10.0f64,
    ) {
        let y = &y[..x.len()];
        if let Some(base) = pcc(&x, y) {
            let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let y2: Vec<f64> = y.iter().map(|v| a * v - b).collect();
            prop_assert!((pcc(&x2, y).unwrap() - base).abs() < 1e-9);
            prop_assert!((pcc(&x, &y2).unwrap() - base).abs() < 1e-9);
            prop_assert!(base.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn rate_error_is_scale_free(e in 0.0..300.0f64, t in 0.1..300.0f64, k in 0.01..100.0f64) {
        let a = rate_error(e, t).unwrap();
        let b = rate_error(k * e, k * t).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn rbm_has_requested_rms(amplitude in 1e-5..2e-3f64, seed in any::<u64>(), sway in any::<bool>()) {
        let kind = if sway { RbmKind::Sway } else { RbmKind::Shake };
        let x = make_rbm(&RbmSpec::new(kind, amplitude, seed), FS, 300).unwrap();
        prop_assert!((dsp::rms(&x.values) - amplitude).abs() < 1e-9 * amplitude);
    }

    #[test]
    fn cube_file_roundtrips(cube in small_cube(), reserved in prop::array::uniform16(any::<u8>())) {
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf, reserved).unwrap();
        let back = read_cube(buf.as_slice()).unwrap();
        // Samples are stored as f32.
        let stored: Vec<Complex64> = cube.samples.iter()
            .map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
            .collect();
        prop_assert_eq!(back.samples, stored);
        prop_assert_eq!(back.config, cube.config);
        prop_assert!(read_cube(&buf[..buf.len() - 1]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fitted_parameters_stay_in_bounds(
        t_res in 1.5..6.0f64,
        t_h in 0.55..1.2f64,
        a_res in 1e-3..5e-3f64,
        start_t_h in 0.5..1.25f64,
    ) {
        let truth = TemplateParams { t_res, t_h, a_res, ..TemplateParams::harmonic_overlap_scene() };
        let x: DisplacementSeries = synthesize_chest_motion(&truth, FS, 300).unwrap();
        let init = TemplateParams { t_h: start_t_h, t_res: (t_res * 1.05).min(10.0), ..truth };
        let r = fit_templates(&x, &init, &FitConfig::default()).unwrap();
        let bounds = ParamBounds::default();
        prop_assert!(bounds.contains(&r.params));
        for it in &r.trace {
            let p = TemplateParams::from_array(it.trial.as_slice().try_into().unwrap());
            prop_assert!(bounds.contains(&p));
        }
        prop_assert!(r.sse <= vimo::fit::TemplateObjective::new(&x, vimo::templates::TemplateBank::shared()).sse(&init));
    }
}
