use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::{Array2, Array5, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use eegconn::connectivity::{extract_window, plv_matrix, Feature, PipelineConfig, WindowTensor};
use eegconn::dsp::{analytic_signal, design_bandpass_hz, filtfilt, BandSpec, Rhythm};
use eegconn::model::{train, FusionModel, Metrics, Mode, ModelConfig, TrainConfig};
use eegconn::mvar::{fit_mvar, spectral_decomposition, MvarModel};
use eegconn::relevance::{
    activation_potentials, contributions, feature_relevance, net_contribution, DenseWeights, EmbeddingBatch,
};
use eegconn::signal_io::{
    extract_labeled_windows, split_subwindows, train_test_split, window_len, AnnotationSet, ExtractOptions, Label,
    LabeledWindow, Recording, SeizureInterval,
};

fn noise(n: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, c), |_| StandardNormal.sample(&mut rng))
}

/// A coupled VAR(2) realization, so fits have real cross terms to recover.
fn var_signal(n: usize, c: usize, seed: u64) -> Array2<f64> {
    let u = noise(n + 200, c, seed);
    let mut y = Array2::<f64>::zeros((n + 200, c));
    for t in 2..n + 200 {
        for i in 0..c {
            let drive = if i > 0 { 0.3 * y[[t - 1, i - 1]] } else { 0.0 };
            y[[t, i]] = 0.5 * y[[t - 1, i]] - 0.2 * y[[t - 2, i]] + drive + u[[t, i]];
        }
    }
    y.slice_move(ndarray::s![200.., ..])
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn permutation(c: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..c).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn tiny_config(scheme: u8, seed: u64) -> ModelConfig {
    ModelConfig {
        scheme,
        channels: 3,
        time_steps: 4,
        bands: 5,
        features: 7,
        embed_dim: 2,
        lstm_hidden: 3,
        lstm_layers: 1,
        dense_sizes: vec![4],
        attention: true,
        dropout: 0.0,
        seed,
    }
}

fn random_tensor(cfg: &ModelConfig, seed: u64, label: Label) -> WindowTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    WindowTensor {
        values: Array5::from_shape_fn(cfg.input_shape(), |_| StandardNormal.sample(&mut rng)),
        label,
        id: format!("rand-{seed}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn windows_lie_inside_their_labelled_regions(
        fs in prop_oneof![Just(100.0), Just(128.0), Just(173.61), Just(256.0)],
        onset in 5.0f64..40.0,
        length in 5.0f64..45.0,
        tail in 0.0f64..60.0,
        seed in any::<u64>(),
    ) {
        let opts = ExtractOptions::default();
        let duration = onset + length + opts.guard_s + 20.0 + tail;
        let n = (duration * fs) as usize;
        let rec = Recording::new(Array2::zeros((n, 2)), fs, vec!["a".into(), "b".into()], "r").unwrap();
        let ann = AnnotationSet::new(vec![SeizureInterval::new(onset, onset + length)]);
        let windows = extract_labeled_windows(&rec, &ann, &opts, seed).unwrap();
        let w = window_len(fs);
        prop_assert_eq!(w, (20.0 * fs).round() as usize);
        let span = |x: &LabeledWindow| (x.offset_s, x.offset_s + w as f64 / fs);
        for x in &windows {
            prop_assert_eq!(x.samples.nrows(), w);
            let (a, b) = span(x);
            prop_assert!(a >= 0.0 && b <= rec.duration_s() + 1e-9);
            match x.label {
                Label::Seizure => prop_assert!(a >= onset - 1.0 / fs && b <= onset + length + 1.0 / fs, "{a}..{b}"),
                Label::NonSeizure => prop_assert!(b <= onset || a >= onset + length, "{a}..{b}"),
            }
        }
        let seizures = windows.iter().filter(|x| x.label == Label::Seizure).count();
        prop_assert_eq!(seizures > 0, length >= 20.0);
        prop_assert_eq!(&windows, &extract_labeled_windows(&rec, &ann, &opts, seed).unwrap());
    }

    #[test]
    fn subwindows_concatenate_back_to_the_window(parts in prop_oneof![Just(1usize), Just(2), Just(4), Just(10)], seed in any::<u64>()) {
        let w = LabeledWindow {
            samples: noise(2560, 3, seed),
            label: Label::Seizure,
            source_id: "x".into(),
            offset_s: 0.0,
            fs: 128.0,
        };
        let seq = split_subwindows(&w, parts).unwrap();
        prop_assert_eq!(seq.sub_windows.len(), parts);
        prop_assert_eq!(seq.concatenate(), w.samples);
    }

    #[test]
    fn splits_are_seeded_stratified_partitions(n_seizure in 2usize..40, n_other in 2usize..40, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let labels: Vec<WindowTensor> = (0..n_seizure + n_other)
            .map(|i| WindowTensor {
                values: Array5::zeros((1, 1, 1, 1, 1)),
                label: if i < n_seizure { Label::Seizure } else { Label::NonSeizure },
                id: i.to_string(),
            })
            .collect();
        let split = train_test_split(&labels, frac, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for label in [Label::Seizure, Label::NonSeizure] {
            prop_assert!(split.test.iter().any(|&i| labels[i].label == label));
            prop_assert!(split.train.iter().any(|&i| labels[i].label == label));
        }
        prop_assert_eq!(split, train_test_split(&labels, frac, seed).unwrap());
    }

    #[test]
    fn bandpass_designs_are_stable(fs in 100.0f64..512.0, lo_frac in 0.002f64..0.3, width in 0.05f64..0.6, half_order in 1usize..=4) {
        let nyq = fs / 2.0;
        let lo = lo_frac * nyq;
        let hi = (lo + width * nyq).min(0.95 * nyq);
        prop_assume!(hi > lo * 1.05);
        let f = design_bandpass_hz(lo, hi, fs, 2 * half_order).unwrap();
        prop_assert!(f.is_stable());
    }

    #[test]
    fn filtfilt_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let f = design_bandpass_hz(4.0, 8.0, 128.0, 4).unwrap();
        let x: Vec<f64> = noise(1024, 1, seed).into_raw_vec_and_offset().0;
        let y: Vec<f64> = noise(1024, 1, seed ^ 0x5eed).into_raw_vec_and_offset().0;
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = filtfilt(&f, &x).unwrap();
        let fy = filtfilt(&f, &y).unwrap();
        let fm = filtfilt(&f, &mix).unwrap();
        let err = fm.iter().zip(fx.iter().zip(&fy)).map(|(m, (p, q))| (m - a * p - b * q).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn passband_tones_come_through_without_lag(freq in 5.0f64..7.0, phase in 0.0f64..(2.0 * PI)) {
        let fs = 128.0;
        let f = design_bandpass_hz(4.0, 8.0, fs, 4).unwrap();
        let x: Vec<f64> = (0..2048).map(|n| (2.0 * PI * freq * n as f64 / fs + phase).sin()).collect();
        let y = filtfilt(&f, &x).unwrap();
        let core = 256..1792;
        let xcorr = |lag: i64| -> f64 {
            core.clone().map(|n| x[n] * y[(n as i64 + lag) as usize]).sum()
        };
        let best = (-10..=10).max_by(|&p, &q| xcorr(p).total_cmp(&xcorr(q))).unwrap();
        prop_assert_eq!(best, 0);
    }

    #[test]
    fn analytic_signal_keeps_the_input_as_its_real_part(len in 16usize..600, seed in any::<u64>()) {
        let x: Vec<f64> = noise(len, 1, seed).into_raw_vec_and_offset().0;
        let z = analytic_signal(&x).unwrap();
        let err = z.samples.iter().zip(&x).map(|(s, v)| (s.re - v).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn mvar_fit_commutes_with_channel_permutation(c in 2usize..5, order in 1usize..4, seed in any::<u64>()) {
        let x = var_signal(640, c, seed);
        let perm = permutation(c, seed.wrapping_add(1));
        let xp = x.select(Axis(1), &perm);
        let m = fit_mvar(x.view(), order, 1e-6, 128.0).unwrap();
        let mp = fit_mvar(xp.view(), order, 1e-6, 128.0).unwrap();
        let permute = |a: &DMatrix<f64>| DMatrix::from_fn(c, c, |i, j| a[(perm[i], perm[j])]);
        for (a, ap) in m.coeffs.iter().zip(&mp.coeffs) {
            prop_assert!(max_abs(&permute(a), ap) <= 1e-12);
        }
        prop_assert!(max_abs(&permute(&m.sigma), &mp.sigma) <= 1e-12);
    }

    #[test]
    fn mvar_fit_scales_only_the_noise_covariance(c in 2usize..5, order in 1usize..4, scale in 0.01f64..100.0, seed in any::<u64>()) {
        let x = var_signal(640, c, seed);
        let m = fit_mvar(x.view(), order, 1e-6, 128.0).unwrap();
        let ms = fit_mvar((&x * scale).view(), order, 1e-6, 128.0).unwrap();
        for (a, a_s) in m.coeffs.iter().zip(&ms.coeffs) {
            prop_assert!(max_abs(a, a_s) <= 1e-10);
        }
        let rel = max_abs(&(&m.sigma * (scale * scale)), &ms.sigma) / ms.sigma.abs().max();
        prop_assert!(rel <= 1e-10, "{rel}");
    }

    #[test]
    fn fitted_spectra_are_hermitian_inverse_pairs(c in 2usize..5, order in 1usize..4, seed in any::<u64>()) {
        let x = var_signal(640, c, seed);
        let m: MvarModel = fit_mvar(x.view(), order, 1e-6, 128.0).unwrap();
        let sd = spectral_decomposition(&m, 32).unwrap();
        for (s, p) in sd.s.iter().zip(&sd.p) {
            prop_assert!((s - s.adjoint()).norm() <= 1e-10 * s.norm());
            prop_assert!((p - p.adjoint()).norm() <= 1e-10 * p.norm());
            let product = s * p;
            let eye = DMatrix::identity(c, c);
            prop_assert!((product - eye).norm() <= 1e-8);
            let eig = s.clone().symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|v| *v >= -1e-10 * s.norm()), "{eig}");
        }
    }

    #[test]
    fn metric_identities_hold(tp in 0usize..200, fp in 0usize..200, fn_ in 0usize..200, tn in 0usize..200) {
        let m = Metrics::from_counts(tp, fp, fn_, tn);
        let total = (tp + fp + fn_ + tn) as f64;
        if tp + fn_ > 0 {
            prop_assert!((m.sensitivity * (tp + fn_) as f64 - tp as f64).abs() <= 1e-9);
        }
        if tn + fp > 0 {
            prop_assert!((m.specificity * (tn + fp) as f64 - tn as f64).abs() <= 1e-9);
        }
        if tp + fn_ > 0 && tn + fp > 0 {
            let weighted = (m.sensitivity * (tp + fn_) as f64 + m.specificity * (tn + fp) as f64) / total;
            prop_assert!((m.accuracy - weighted).abs() <= 1e-12);
        }
    }

    #[test]
    fn relevance_shares_are_a_distribution(n_in in 2usize..12, n_hidden in 1usize..6, rows in 1usize..8, seed in any::<u64>()) {
        let (batch, w) = random_relevance_inputs(n_in, n_hidden, rows, seed);
        let c = contributions(&activation_potentials(&batch, &w).unwrap()).unwrap();
        for j in 0..n_hidden {
            prop_assert!((c.column(j).sum() - 1.0).abs() <= 1e-12);
        }
        let shares = feature_relevance(&net_contribution(&c), &batch.groups).unwrap();
        prop_assert!(shares.iter().all(|s| s.percent >= 0.0));
        prop_assert!((shares.iter().map(|s| s.percent).sum::<f64>() - 100.0).abs() <= 1e-9);
    }

    #[test]
    fn relevance_ignores_input_order_and_sample_duplication(n_in in 2usize..12, n_hidden in 1usize..6, rows in 1usize..8, seed in any::<u64>()) {
        let (batch, w) = random_relevance_inputs(n_in, n_hidden, rows, seed);
        let report = |b: &EmbeddingBatch, w: &DenseWeights| {
            feature_relevance(&net_contribution(&contributions(&activation_potentials(b, w).unwrap()).unwrap()), &b.groups)
                .unwrap()
        };
        let base = report(&batch, &w);

        let perm = permutation(n_in, seed.wrapping_add(7));
        let shuffled = EmbeddingBatch {
            values: batch.values.select_columns(&perm),
            class: batch.class,
            groups: perm.iter().map(|&i| batch.groups[i]).collect(),
        };
        let shuffled_w = DenseWeights { w: w.w.select_rows(&perm), b: w.b.clone() };
        for (a, b) in base.iter().zip(&report(&shuffled, &shuffled_w)) {
            prop_assert_eq!(a.feature, b.feature);
            prop_assert!((a.percent - b.percent).abs() <= 1e-9);
        }

        let doubled = EmbeddingBatch {
            values: DMatrix::from_fn(2 * rows, n_in, |r, i| batch.values[(r % rows, i)]),
            class: batch.class,
            groups: batch.groups.clone(),
        };
        let p = activation_potentials(&batch, &w).unwrap();
        let p2 = activation_potentials(&doubled, &w).unwrap();
        prop_assert!((p - p2).abs().max() <= 1e-12);
        for (a, b) in base.iter().zip(&report(&doubled, &w)) {
            prop_assert!((a.percent - b.percent).abs() <= 1e-9);
        }
    }
}

fn random_relevance_inputs(n_in: usize, n_hidden: usize, rows: usize, seed: u64) -> (EmbeddingBatch, DenseWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let values = DMatrix::from_fn(rows, n_in, |_, _| g());
    let w = DMatrix::from_fn(n_in, n_hidden, |_, _| g());
    let b = (0..n_hidden).map(|_| g()).collect();
    let groups = (0..n_in).map(|i| Feature::ALL[i % Feature::ALL.len()]).collect();
    (
        EmbeddingBatch {
            values,
            class: Label::Seizure,
            groups,
        },
        DenseWeights { w, b },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn plv_matrices_are_symmetric_with_unit_diagonal(seed in any::<u64>()) {
        let w = LabeledWindow {
            samples: var_signal(2560, 3, seed),
            label: Label::Seizure,
            source_id: "x".into(),
            offset_s: 0.0,
            fs: 128.0,
        };
        for m in plv_matrix(&w, &BandSpec::new(Rhythm::Alpha, 8.0, 13.0), 10, 4).unwrap() {
            prop_assert_eq!(m.transpose(), m.clone());
            for i in 0..3 {
                prop_assert_eq!(m[(i, i)], 1.0);
            }
            prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn channel_permutation_permutes_every_plane(seed in any::<u64>()) {
        let c = 3;
        let samples = var_signal(2560, c, seed);
        let perm = permutation(c, seed.wrapping_add(3));
        let window = |s: Array2<f64>| LabeledWindow { samples: s, label: Label::Seizure, source_id: "x".into(), offset_s: 0.0, fs: 128.0 };
        let cfg = PipelineConfig::default();
        let (t, _) = extract_window(&window(samples.clone()), &cfg).unwrap();
        let (tp, _) = extract_window(&window(samples.select(Axis(1), &perm)), &cfg).unwrap();
        let [f, steps, _, _, bands] = t.shape();
        for k in 0..f {
            let scale = t.values.index_axis(Axis(0), k).iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for s in 0..steps {
                for i in 0..c {
                    for j in 0..c {
                        for b in 0..bands {
                            let want = t.values[[k, s, perm[i], perm[j], b]];
                            let got = tp.values[[k, s, i, j, b]];
                            prop_assert!((want - got).abs() <= 1e-8 * scale, "feature {k} [{s},{i},{j},{b}]: {want} vs {got}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn attention_weights_sum_to_one(scheme in 1u8..=4, seed in any::<u64>()) {
        let cfg = tiny_config(scheme, seed);
        let model = FusionModel::build(&cfg).unwrap();
        let pass = model.forward_pass(&random_tensor(&cfg, seed ^ 1, Label::Seizure), Mode::Eval).unwrap();
        let weights = pass.attention_weights();
        prop_assert!(!weights.is_empty());
        for a in weights {
            prop_assert!(a.iter().all(|v| *v >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn feature_groups_form_contiguous_blocks(seed in any::<u64>(), channels in 2usize..6) {
        let mut cfg = tiny_config(2, seed);
        cfg.channels = channels;
        let model = FusionModel::build(&cfg).unwrap();
        let groups = model.group_map().unwrap();
        let block = groups.len() / Feature::ALL.len();
        prop_assert_eq!(block * Feature::ALL.len(), groups.len());
        for (k, f) in Feature::ALL.iter().enumerate() {
            prop_assert!(groups[k * block..(k + 1) * block].iter().all(|g| g == f));
        }
    }

    #[test]
    fn training_is_deterministic(scheme in 1u8..=4, seed in any::<u64>()) {
        let cfg = tiny_config(scheme, seed);
        let model = FusionModel::build(&cfg).unwrap();
        let ds: Vec<WindowTensor> = (0..6)
            .map(|k| random_tensor(&cfg, seed.wrapping_add(k), if k % 2 == 0 { Label::Seizure } else { Label::NonSeizure }))
            .collect();
        let tc = TrainConfig { epochs: 2, batch_size: 4, seed, ..TrainConfig::default() };
        let (a, ha) = train(&model, &ds, &tc).unwrap();
        let (b, hb) = train(&model, &ds, &tc).unwrap();
        prop_assert_eq!(a.params, b.params);
        prop_assert_eq!(ha, hb);
    }
}
