use candle_core::{Device, Tensor, Var};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use vai_core::attention::MaskedDataset;
use vai_core::data::{Episode, EpisodeStore, StoreMetadata};
use vai_core::invariance::*;
use vai_core::rng::Rng;
use vai_core::{BinaryMask, Frame, VaiError};

fn random_frame(rng: &mut Rng, h: usize, w: usize) -> Frame {
    Frame::from_clamped(Array3::from_shape_fn((h, w, 3), |_| rng.random::<f32>())).quantized()
}

fn disc_mask(h: usize, w: usize, cy: f32, cx: f32, r: f32) -> BinaryMask {
    BinaryMask::from_fn(h, w, |y, x| (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2) <= r * r)
}

fn all_ops() -> AugmentConfig {
    AugmentConfig {
        train_background_prob: 0.3,
        random_color_prob: 0.3,
        perturbed_fg_mean_prob: 0.4,
        gaussian_noise_prob: 0.5,
        multicolorout_prob: 0.5,
        darkened_copy_prob: 0.5,
        ..Default::default()
    }
}

#[test]
fn identity_transforms_give_masked_frame() {
    let mut rng = Rng::seed_from_u64(0);
    let f = random_frame(&mut rng, 16, 16);
    let m = disc_mask(16, 16, 8.0, 8.0, 4.0);
    let pair = make_training_pair(&f, &m, &AugmentConfig::identity(), &mut rng).unwrap();
    let expected = m.apply(&f).unwrap();
    assert_eq!(pair.clean, expected);
    assert_eq!(pair.noisy, expected);
    assert_eq!(pair.target_mask.values(), m.values());
}

#[test]
fn train_background_only_reproduces_the_crop() {
    // the ablation input is the raw cropped frame
    let mut rng = Rng::seed_from_u64(4);
    let f = random_frame(&mut rng, 16, 16);
    let m = disc_mask(16, 16, 5.0, 9.0, 3.0);
    let aug = Augmenter::new(AugmentConfig::train_background_only(), (16, 16)).unwrap();
    let pair = aug.make_training_pair(&f, &m, &mut rng).unwrap();
    let (o, d) = crop_pair(&f, &m, pair.crop_offset, (16, 16), aug.config().crop_pad);
    assert_eq!(pair.noisy, o);
    assert_eq!(pair.clean, d.apply(&o).unwrap());
}

#[test]
fn empty_mask_collapses_clean_target() {
    let mut rng = Rng::seed_from_u64(1);
    let f = random_frame(&mut rng, 16, 16);
    let m = BinaryMask::zeros(16, 16);
    let cfg = AugmentConfig {
        train_background_prob: 0.0,
        random_color_prob: 1.0,
        perturbed_fg_mean_prob: 0.0,
        gaussian_noise_prob: 0.0,
        multicolorout_prob: 0.0,
        darkened_copy_prob: 0.0,
        ..Default::default()
    };
    let pair = make_training_pair(&f, &m, &cfg, &mut rng).unwrap();
    assert!(pair.clean.pixels().iter().all(|&v| v == 0.0));
    // I_s = T_b(o): here a single random colour everywhere
    let first: Vec<f32> = (0..3).map(|c| pair.noisy.get(0, 0, c)).collect();
    for ((_, _, c), &v) in pair.noisy.pixels().indexed_iter() {
        assert_eq!(v, first[c]);
    }
}

#[test]
fn pairs_are_seed_deterministic() {
    let mut r = Rng::seed_from_u64(2);
    let f = random_frame(&mut r, 24, 24);
    let m = disc_mask(24, 24, 10.0, 12.0, 5.0);
    let a = make_training_pair(&f, &m, &all_ops(), &mut Rng::seed_from_u64(9)).unwrap();
    let b = make_training_pair(&f, &m, &all_ops(), &mut Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn crop_larger_than_frame_is_rejected() {
    let f = Frame::zeros(16, 16, 3);
    let cfg = AugmentConfig { crop_size: Some([20, 16]), ..Default::default() };
    let err = make_training_pair(&f, &BinaryMask::zeros(16, 16), &cfg, &mut Rng::seed_from_u64(0));
    assert!(matches!(err, Err(VaiError::InvalidArgument(_))));
}

#[test]
fn leftover_fill_mass_leaves_background_empty() {
    let cfg = AugmentConfig { train_background_prob: 0.5, ..AugmentConfig::identity() };
    let aug = Augmenter::new(cfg, (16, 16)).unwrap();
    let mut rng = Rng::seed_from_u64(9);
    let f = random_frame(&mut rng, 16, 16);
    let m = disc_mask(16, 16, 8.0, 8.0, 3.0);
    let bg = m.inverted().apply(&f).unwrap();
    let mut empty = 0;
    for _ in 0..400 {
        let (out, ops) = aug.augment_background_traced(&bg, &m, &f, &mut rng).unwrap();
        match ops.fill {
            BackgroundFill::Empty => {
                empty += 1;
                assert!(out.pixels().iter().all(|&v| v == 0.0));
            }
            BackgroundFill::TrainBackground => assert_eq!(out, bg),
            other => panic!("unexpected fill {other:?}"),
        }
    }
    assert!((150..250).contains(&empty), "{empty}");
    assert!(AugmentConfig { random_color_prob: 0.6, ..AugmentConfig::default() }.validate().is_err());
}

#[test]
fn crop_is_synchronized_via_marker_pixel() {
    let aug = Augmenter::new(AugmentConfig { crop_size: Some([12, 12]), ..AugmentConfig::identity() }, (12, 12)).unwrap();
    let aug = Augmenter::new(AugmentConfig { crop_pad: 4, ..aug.config().clone() }, (12, 12)).unwrap();
    let mut rng = Rng::seed_from_u64(3);
    for trial in 0..50 {
        let (my, mx) = (rng.random_range(0..16), rng.random_range(0..16));
        let mut px = Array3::from_elem((16, 16, 3), 0.2f32);
        px[[my, mx, 0]] = 1.0;
        let f = Frame::new(px).unwrap();
        let m = BinaryMask::from_fn(16, 16, |y, x| (y, x) == (my, mx));
        let pair = aug.make_training_pair(&f, &m, &mut rng).unwrap();
        let (oy, ox) = pair.crop_offset;
        let (py, px_) = (my as i64 + 4 - oy as i64, mx as i64 + 4 - ox as i64);
        let inside = (0..12).contains(&py) && (0..12).contains(&px_);
        assert_eq!(pair.target_mask.count(), usize::from(inside), "trial {trial}");
        if inside {
            let (py, px_) = (py as usize, px_ as usize);
            assert!(pair.target_mask.get(py, px_));
            assert_eq!(pair.clean.get(py, px_, 0), 1.0);
            assert_eq!(pair.noisy.get(py, px_, 0), 1.0);
        }
    }
}

#[test]
fn pair_regions_follow_their_sources() {
    // foreground of I_s differs from I_t only by T_f; background only by T_b
    let mut rng = Rng::seed_from_u64(11);
    let f = random_frame(&mut rng, 24, 24);
    let m = disc_mask(24, 24, 12.0, 12.0, 6.0);
    let cfg = AugmentConfig { color_jitter_prob: 0.0, brightness_prob: 0.0, ..all_ops() };
    for _ in 0..20 {
        let p = make_training_pair(&f, &m, &cfg, &mut rng).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                for c in 0..3 {
                    if p.target_mask.get(y, x) {
                        assert_eq!(p.noisy.get(y, x, c), p.clean.get(y, x, c));
                    } else {
                        assert_eq!(p.clean.get(y, x, c), 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn random_color_without_noise_is_constant() {
    let mut rng = Rng::seed_from_u64(5);
    let f = random_frame(&mut rng, 16, 16);
    let cfg = AugmentConfig {
        train_background_prob: 0.0,
        random_color_prob: 1.0,
        perturbed_fg_mean_prob: 0.0,
        gaussian_noise_prob: 0.0,
        multicolorout_prob: 0.0,
        darkened_copy_prob: 0.0,
        ..Default::default()
    };
    let out = augment_background(&f, &BinaryMask::zeros(16, 16), &f, &cfg, &mut rng).unwrap();
    let c0: Vec<f32> = (0..3).map(|c| out.get(0, 0, c)).collect();
    assert!(out.pixels().indexed_iter().all(|((_, _, c), &v)| v == c0[c]));
}

#[test]
fn full_foreground_leaves_frame_untouched() {
    let mut rng = Rng::seed_from_u64(6);
    let f = random_frame(&mut rng, 16, 16);
    let out = augment_background(&f, &BinaryMask::ones(16, 16), &f, &all_ops(), &mut rng).unwrap();
    assert_eq!(out, f);
}

#[test]
fn op_frequencies_match_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let img = image::RgbImage::from_fn(8, 8, |x, y| image::Rgb([(x * 30) as u8, (y * 30) as u8, 90]));
    img.save(dir.path().join("a.png")).unwrap();
    let cfg = AugmentConfig {
        overlay_prob: 0.5,
        overlay_dir: Some(dir.path().to_path_buf()),
        ..all_ops()
    };
    let aug = Augmenter::new(cfg.clone(), (16, 16)).unwrap();
    let mut rng = Rng::seed_from_u64(7);
    let f = random_frame(&mut rng, 16, 16);
    let m = disc_mask(16, 16, 8.0, 8.0, 3.0);
    let bg = m.inverted().apply(&f).unwrap();
    let n = 1000;
    let mut counts = [0usize; 7];
    for _ in 0..n {
        let (_, ops) = aug.augment_background_traced(&bg, &m, &f, &mut rng).unwrap();
        counts[0] += usize::from(ops.fill == BackgroundFill::TrainBackground);
        counts[1] += usize::from(ops.fill == BackgroundFill::RandomColor);
        counts[2] += usize::from(ops.fill == BackgroundFill::PerturbedForegroundMean);
        counts[3] += usize::from(ops.gaussian_noise);
        counts[4] += usize::from(ops.multicolorout);
        counts[5] += usize::from(ops.darkened_copy);
        counts[6] += usize::from(ops.overlay);
    }
    let want = [0.3, 0.3, 0.4, 0.5, 0.5, 0.5, 0.5];
    for (i, (&c, &p)) in counts.iter().zip(&want).enumerate() {
        let freq = c as f64 / n as f64;
        assert!((freq - p).abs() <= 0.03, "op {i}: {freq} vs {p}");
    }
}

#[test]
fn overlay_from_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = AugmentConfig {
        overlay_prob: 1.0,
        overlay_dir: Some(dir.path().to_path_buf()),
        ..all_ops()
    };
    let f = Frame::zeros(8, 8, 3);
    let err = augment_background(&f, &BinaryMask::zeros(8, 8), &f, &cfg, &mut Rng::seed_from_u64(0));
    assert!(matches!(err, Err(VaiError::EmptyOverlayDir)));
}

#[test]
fn invalid_probabilities_are_rejected() {
    assert!(AugmentConfig { gaussian_noise_prob: 1.5, ..Default::default() }.validate().is_err());
    assert!(AugmentConfig { random_color_prob: 0.9, ..Default::default() }.validate().is_err());
    assert!(AugmentConfig { overlay_prob: 0.5, ..Default::default() }.validate().is_err());
}

#[test]
fn multicolorout_degenerate_ranges() {
    let mut rng = Rng::seed_from_u64(8);
    let f = random_frame(&mut rng, 20, 20);
    assert_eq!(multicolorout(&f, &mut rng, 0..=0, 1..=5), f);
    let full = multicolorout(&f, &mut rng, 1..=1, 20..=20);
    let c0: Vec<f32> = (0..3).map(|c| full.get(0, 0, c)).collect();
    assert!(full.pixels().indexed_iter().all(|((_, _, c), &v)| v == c0[c]));
}

/// Smallest number of axis-aligned rectangles, each inside `diff`, whose
/// union is `diff`; `None` if more than `limit` are needed.
fn rectangle_cover(diff: &Array2<bool>, limit: usize) -> Option<usize> {
    let (h, w) = diff.dim();
    let mut ys = vec![0, h];
    let mut xs = vec![0, w];
    for y in 0..h {
        for x in 0..w {
            if x > 0 && diff[[y, x]] != diff[[y, x - 1]] {
                xs.push(x);
            }
            if y > 0 && diff[[y, x]] != diff[[y - 1, x]] {
                ys.push(y);
            }
        }
    }
    ys.sort_unstable();
    ys.dedup();
    xs.sort_unstable();
    xs.dedup();
    let inside = |r: &(usize, usize, usize, usize)| (r.0..r.1).all(|y| (r.2..r.3).all(|x| diff[[y, x]]));
    let mut cands = vec![];
    for (i, &y0) in ys.iter().enumerate() {
        for &y1 in &ys[i + 1..] {
            for (j, &x0) in xs.iter().enumerate() {
                for &x1 in &xs[j + 1..] {
                    let r = (y0, y1, x0, x1);
                    if inside(&r) {
                        cands.push(r);
                    }
                }
            }
        }
    }
    let contains = |a: &(usize, usize, usize, usize), b: &(usize, usize, usize, usize)| {
        a.0 <= b.0 && a.1 >= b.1 && a.2 <= b.2 && a.3 >= b.3
    };
    let maximal: Vec<_> = cands
        .iter()
        .filter(|r| !cands.iter().any(|o| o != *r && contains(o, r)))
        .copied()
        .collect();
    let total = diff.iter().filter(|&&d| d).count();
    if total == 0 {
        return Some(0);
    }
    let covers = |set: &[&(usize, usize, usize, usize)]| {
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                if set.iter().any(|r| (r.0..r.1).contains(&y) && (r.2..r.3).contains(&x)) {
                    n += 1;
                }
            }
        }
        n == total
    };
    for k in 1..=limit {
        let mut idx: Vec<usize> = (0..k).collect();
        if k > maximal.len() {
            break;
        }
        loop {
            let set: Vec<_> = idx.iter().map(|&i| &maximal[i]).collect();
            if covers(&set) {
                return Some(k);
            }
            // next combination
            let mut i = k;
            while i > 0 && idx[i - 1] == maximal.len() - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    None
}

#[test]
fn three_boxes_change_at_most_three_rectangles() {
    let mut rng = Rng::seed_from_u64(10);
    for _ in 0..20 {
        let f = random_frame(&mut rng, 84, 84);
        let out = multicolorout(&f, &mut rng, 3..=3, 5..=30);
        let diff = Array2::from_shape_fn((84, 84), |(y, x)| (0..3).any(|c| out.get(y, x, c) != f.get(y, x, c)));
        let n = rectangle_cover(&diff, 3);
        assert!(matches!(n, Some(1..=3)), "cover {n:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn background_ops_never_touch_foreground(seed in 0u64..10_000, cy in 0f32..16.0, cx in 0f32..16.0, r in 0f32..8.0) {
        let mut rng = Rng::seed_from_u64(seed);
        let f = random_frame(&mut rng, 16, 16);
        let train = random_frame(&mut rng, 16, 16);
        let m = disc_mask(16, 16, cy, cx, r);
        let out = augment_background(&f, &m, &train, &all_ops(), &mut rng).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if m.get(y, x) {
                    for c in 0..3 {
                        prop_assert_eq!(out.get(y, x, c).to_bits(), f.get(y, x, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn pairs_stay_in_unit_range(seed in 0u64..10_000) {
        let mut rng = Rng::seed_from_u64(seed);
        let f = random_frame(&mut rng, 16, 16);
        let m = disc_mask(16, 16, 7.0, 9.0, 4.0);
        let p = make_training_pair(&f, &m, &all_ops(), &mut rng).unwrap();
        prop_assert!(p.noisy.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

// ---- adapter ----

fn tiny_adapter(lambda: f64) -> AdapterConfig {
    AdapterConfig {
        hidden_channels: 8,
        feature_channels: 4,
        lambda,
        steps: 5,
        batch_size: 4,
        learning_rate: 1e-2,
        warmup_steps: 10,
        ..Default::default()
    }
}

fn tensor(v: &[f64], shape: (usize, usize, usize, usize)) -> Tensor {
    Tensor::from_vec(v.iter().map(|&x| x as f32).collect::<Vec<_>>(), shape, &Device::Cpu).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    f64::from(t.to_scalar::<f32>().unwrap())
}

#[test]
fn objective_vanishes_for_perfect_prediction() {
    let m = tensor(&[0.0, 1.0, 1.0, 0.0], (1, 1, 2, 2));
    let f = tensor(&[0.3; 8], (1, 2, 2, 2));
    let l = adapter_objective(&m, &m, &f, &f, 1.0).unwrap();
    assert_eq!(scalar(&l.total), 0.0);
}

#[test]
fn objective_matches_hand_computation() {
    // 4x4 toy tensors; reference is a float64 sum of the two squared norms
    let pred: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let target: Vec<f64> = (0..16).map(|i| f64::from(i % 3 == 0)).collect();
    let fs: Vec<f64> = (0..16).map(|i| (i as f64 * 0.11).cos()).collect();
    let ft: Vec<f64> = (0..16).map(|i| i as f64 / 16.0 - 0.4).collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let shape = (1, 1, 4, 4);
    for lambda in [0.0, 0.5, 1.0, 3.0] {
        let l = adapter_objective(&tensor(&pred, shape), &tensor(&target, shape), &tensor(&fs, shape), &tensor(&ft, shape), lambda).unwrap();
        let want = sq(&pred, &target) + lambda * sq(&fs, &ft);
        assert!((scalar(&l.total) - want).abs() < 1e-5, "lambda {lambda}");
        assert!((scalar(&l.mask) - sq(&pred, &target)).abs() < 1e-5);
        if lambda == 0.0 {
            assert_eq!(scalar(&l.total), scalar(&l.mask));
        }
    }
}

#[test]
fn objective_gradients_match_finite_differences() {
    let pred: Vec<f64> = (0..16).map(|i| 0.1 + (i as f64) / 20.0).collect();
    let target: Vec<f64> = (0..16).map(|i| f64::from(i % 2 == 0)).collect();
    let fs: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
    let ft: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
    let lambda = 0.7;
    let f = |p: &[f64], s: &[f64]| {
        p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            + lambda * s.iter().zip(&ft).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let shape = (1, 1, 4, 4);
    let pv = Var::from_tensor(&tensor(&pred, shape)).unwrap();
    let sv = Var::from_tensor(&tensor(&fs, shape)).unwrap();
    let l = adapter_objective(pv.as_tensor(), &tensor(&target, shape), sv.as_tensor(), &tensor(&ft, shape), lambda).unwrap();
    let grads = l.total.backward().unwrap();
    let gp: Vec<f32> = grads.get(pv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let gs: Vec<f32> = grads.get(sv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let h = 1e-4;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
    for i in 0..16 {
        let (mut up, mut dn) = (pred.clone(), pred.clone());
        up[i] += h;
        dn[i] -= h;
        let fd = (f(&up, &fs) - f(&dn, &fs)) / (2.0 * h);
        assert!(rel(f64::from(gp[i]), fd) < 1e-3, "mask {i}: {} vs {fd}", gp[i]);
        let (mut up, mut dn) = (fs.clone(), fs.clone());
        up[i] += h;
        dn[i] -= h;
        let fd = (f(&pred, &up) - f(&pred, &dn)) / (2.0 * h);
        assert!(rel(f64::from(gs[i]), fd) < 1e-3, "feature {i}: {} vs {fd}", gs[i]);
    }
}

fn force_mask(model: &AdapterModel, logit: f32) {
    let p = model.params();
    let w = p.get("decoder.c3.weight").unwrap();
    w.set(&w.as_tensor().zeros_like().unwrap()).unwrap();
    p.get("decoder.c3.bias").unwrap().set(&Tensor::new(&[logit], &Device::Cpu).unwrap()).unwrap();
}

#[test]
fn adapt_with_constant_masks() {
    let mut rng = Rng::seed_from_u64(12);
    let f = random_frame(&mut rng, 16, 16);
    let model = AdapterModel::new(tiny_adapter(1.0), (16, 16, 3), 0).unwrap();
    force_mask(&model, 200.0);
    assert_eq!(adapt_observation(&model, &f).unwrap(), f);
    force_mask(&model, -200.0);
    assert!(adapt_observation(&model, &f).unwrap().pixels().iter().all(|&v| v == 0.0));
    assert!(adapt_observation(&model, &Frame::zeros(8, 8, 3)).is_err());
}

#[test]
fn suppressed_pixels_stay_suppressed() {
    let mut rng = Rng::seed_from_u64(13);
    for seed in 0..4 {
        let model = AdapterModel::new(tiny_adapter(1.0), (16, 16, 3), seed).unwrap();
        let f = random_frame(&mut rng, 16, 16);
        let once = adapt_observation(&model, &f).unwrap();
        let twice = adapt_observation(&model, &once).unwrap();
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            if *a == 0.0 {
                assert_eq!(*b, 0.0);
            }
            assert!(*b <= *a + 1e-7);
        }
    }
}

fn dataset(frames: Vec<Frame>, masks: Vec<BinaryMask>) -> MaskedDataset {
    let store = EpisodeStore::new(
        StoreMetadata { env_id: "toy".into(), texture_id: "noise".into(), seed: 0 },
        vec![Episode::new(0, frames).unwrap()],
    )
    .unwrap();
    MaskedDataset::new(store, masks, 0.5).unwrap()
}

#[test]
fn single_frame_is_memorized() {
    let mut rng = Rng::seed_from_u64(14);
    let f = random_frame(&mut rng, 16, 16);
    let m = disc_mask(16, 16, 6.0, 9.0, 4.0);
    let ds = dataset(vec![f.clone()], vec![m.clone()]);
    let cfg = AdapterConfig { steps: 300, ..tiny_adapter(1.0) };
    let (model, log) = train_adapter(&ds, &AugmentConfig::identity(), &cfg, 0).unwrap();
    assert!(log.total.last(10) < 0.05 * log.total.initial(10), "{} -> {}", log.total.initial(10), log.total.last(10));
    // identity augmentation: the training input is the masked frame
    let pred = model.predict_binary_mask(&m.apply(&f).unwrap()).unwrap();
    assert!(pred.iou(&m).unwrap() > 0.9);
}

#[test]
fn adapter_training_is_deterministic_and_round_trips() {
    let mut rng = Rng::seed_from_u64(15);
    let frames: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, 16, 16)).collect();
    let masks = vec![disc_mask(16, 16, 5.0, 5.0, 3.0); 3];
    let ds = dataset(frames, masks);
    let (a, la) = train_adapter(&ds, &all_ops(), &tiny_adapter(1.0), 3).unwrap();
    let (b, lb) = train_adapter(&ds, &all_ops(), &tiny_adapter(1.0), 3).unwrap();
    assert_eq!(la, lb);
    let bytes = a.checkpoint().unwrap().to_bytes();
    assert_eq!(bytes, b.checkpoint().unwrap().to_bytes());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapter.ckpt");
    a.save(&path).unwrap();
    let back = AdapterModel::load(&path).unwrap();
    assert_eq!(back.checkpoint().unwrap().to_bytes(), bytes);
}

#[test]
fn lambda_zero_logs_mask_term_only() {
    let mut rng = Rng::seed_from_u64(16);
    let ds = dataset(vec![random_frame(&mut rng, 16, 16)], vec![disc_mask(16, 16, 8.0, 8.0, 4.0)]);
    let (_, log) = train_adapter(&ds, &all_ops(), &tiny_adapter(0.0), 0).unwrap();
    assert_eq!(log.total.losses, log.mask);
    assert!(log.feature.iter().any(|&v| v > 0.0));
}

#[test]
fn adapter_divergence_names_step() {
    let mut rng = Rng::seed_from_u64(17);
    let ds = dataset(vec![random_frame(&mut rng, 16, 16)], vec![BinaryMask::zeros(16, 16)]);
    let cfg = AdapterConfig { learning_rate: f64::NAN, ..tiny_adapter(1.0) };
    match train_adapter(&ds, &all_ops(), &cfg, 0) {
        Err(VaiError::Divergence { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn loss_of_a_pair_is_nonnegative() {
    let mut rng = Rng::seed_from_u64(18);
    let f = random_frame(&mut rng, 16, 16);
    let m = disc_mask(16, 16, 8.0, 8.0, 4.0);
    let model = AdapterModel::new(tiny_adapter(1.0), (16, 16, 3), 0).unwrap();
    let pair = make_training_pair(&f, &m, &all_ops(), &mut rng).unwrap();
    assert!(adapter_loss(&model, &pair).unwrap() >= 0.0);
}
