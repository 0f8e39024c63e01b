mod common;

use common::*;
use denoisegs::cloud::CloudRole;
use denoisegs::losses::*;
use denoisegs::Error;
use ndarray::Array3;
use proptest::prelude::*;

#[test]
fn fast_dft_matches_double_sum() {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let img = random_image(&mut r, 8, 8, 3);
        let fast = dft2(img.view());
        let slow = brute_dft(&img);
        let scale = fast.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for ((u, v, c), z) in fast.indexed_iter() {
            let (re, im) = slow[u][v][c];
            let diff = ((z.re - re).powi(2) + (z.im - im).powi(2)).sqrt();
            worst = worst.max(diff / scale);
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn frequency_gradient_matches_finite_differences() {
    let mut r = rng(5);
    for _ in 0..3 {
        let pred = random_image(&mut r, 4, 4, 3);
        let gt = random_image(&mut r, 4, 4, 3);
        let (loss, grad) = lwf_loss_grad(pred.view(), gt.view()).unwrap();
        assert!((loss - lwf_loss(pred.view(), gt.view()).unwrap()).abs() < 1e-12);
        // The per-frequency weights are constants of the gradient, so the
        // reference differentiates with them held at their base values.
        let omega = lwf_weights(pred.view(), gt.view()).unwrap();
        let num = numeric_grad(&pred, 1e-6, |p| lwf_loss_weighted(p.view(), gt.view(), omega.view()).unwrap());
        for (a, b) in grad.iter().zip(num.iter()) {
            assert!(rel_err(*a, *b, 1e-3) < 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn weighted_form_agrees_with_plain_loss_at_its_own_weights() {
    let mut r = rng(8);
    let pred = random_image(&mut r, 6, 5, 3);
    let gt = random_image(&mut r, 6, 5, 3);
    let omega = lwf_weights(pred.view(), gt.view()).unwrap();
    let a = lwf_loss(pred.view(), gt.view()).unwrap();
    let b = lwf_loss_weighted(pred.view(), gt.view(), omega.view()).unwrap();
    assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
}

#[test]
fn self_consistency_gradient_contract() {
    let (h, w) = (3, 4);
    let d: Vec<f64> = (0..h * w).map(|i| 2.0 + 0.3 * i as f64).collect();
    let g: Vec<f64> = (0..h * w).map(|i| 2.5 + 0.1 * (i as f64).sin()).collect();
    let noisy = aligned_cloud(&d, h, w, CloudRole::Primary);
    let guide = aligned_cloud(&g, h, w, CloudRole::Guidance);
    let (loss, grad) = gsc_loss_grad(&noisy, &guide).unwrap();
    assert!(grad.guidance_depths.iter().all(|&v| v == 0.0));
    let n = d.len() as f64;
    for ((gd, a), b) in grad.noisy_depths.iter().zip(&d).zip(&g) {
        assert!((gd - 2.0 * (a - b) / n).abs() < 1e-6);
    }
    let expect = d.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    assert!((loss - expect).abs() < 1e-12);

    let same = aligned_cloud(&d, h, w, CloudRole::Guidance);
    assert_eq!(gsc_loss(&noisy, &same).unwrap(), 0.0);
    assert!(matches!(gsc_loss(&guide, &noisy), Err(Error::Contract(_))));
    let other = aligned_cloud(&d[..w * 2], 2, w, CloudRole::Guidance);
    assert!(matches!(gsc_loss(&noisy, &other), Err(Error::Alignment(_))));
}

#[test]
fn total_requires_guidance_when_active() {
    let img = Array3::<f64>::from_elem((4, 4, 3), 0.5);
    let cloud = aligned_cloud(&[3.0; 16], 4, 4, CloudRole::Primary);
    let ex = GradientPyramid::default();
    let r = total_loss(img.view(), img.view(), &cloud, None, &LossWeights::default(), true, &ex);
    assert!(matches!(r, Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn total_is_the_weighted_sum(seed in any::<u64>(), mse in 0.0f64..3.0, lp in 0.0f64..3.0, gs in 0.0f64..3.0, fq in 0.0f64..3.0, active in any::<bool>()) {
        let mut r = rng(seed);
        let pred = random_image(&mut r, 8, 8, 3);
        let gt = random_image(&mut r, 8, 8, 3);
        let d: Vec<f64> = (0..64).map(|_| 1.0 + 5.0 * rand::Rng::random::<f64>(&mut r)).collect();
        let g: Vec<f64> = d.iter().map(|v| v + 0.1).collect();
        let noisy = aligned_cloud(&d, 8, 8, CloudRole::Primary);
        let guide = aligned_cloud(&g, 8, 8, CloudRole::Guidance);
        let w = LossWeights { mse, lpips: lp, gsc: gs, freq: fq };
        let ex = GradientPyramid::default();
        let rep = total_loss(pred.view(), gt.view(), &noisy, Some(&guide), &w, active, &ex).unwrap();
        let gsc_term = if active { gs * gsc_loss(&noisy, &guide).unwrap() } else { 0.0 };
        let expect = mse * mse_loss(pred.view(), gt.view()).unwrap()
            + lp * perceptual_loss(pred.view(), gt.view(), &ex).unwrap()
            + gsc_term
            + fq * lwf_loss(pred.view(), gt.view()).unwrap();
        prop_assert!((rep.total - expect).abs() <= 1e-10 * expect.abs().max(1.0));
    }

    #[test]
    fn frequency_loss_is_nonnegative_and_zero_on_equal_images(seed in any::<u64>(), h in 1usize..7, w in 1usize..7) {
        let mut r = rng(seed);
        let a = random_image(&mut r, h, w, 3);
        let b = random_image(&mut r, h, w, 3);
        prop_assert!(lwf_loss(a.view(), b.view()).unwrap() >= 0.0);
        prop_assert_eq!(lwf_loss(a.view(), a.view()).unwrap(), 0.0);
    }
}
