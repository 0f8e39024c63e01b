mod common;

use denoisegs::camera::{look_at, CameraView, EncodingKind};
use denoisegs::linalg::Vec3;
use denoisegs::losses::{total_loss_grad, GradientPyramid, LossWeights};
use denoisegs::model::{GaussianModel, ModelConfig, ModelInput};
use denoisegs::render::{render_view, render_view_with_tape, RenderSettings};
use ndarray::Array3;

#[test]
fn renderer_gradients_match_finite_differences() {
    let worst = common::renderer_gradient_worst();
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn full_pipeline_weight_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        patch_size: 2,
        embed_dim: 8,
        num_blocks: 1,
        num_heads: 2,
        init_std: 0.4,
        encoding: EncodingKind::Rppc,
        ..ModelConfig::default()
    };
    let size = 4;
    let model = GaussianModel::<f64>::new(cfg.clone(), size, size, 11).unwrap();
    let views: Vec<CameraView<f64>> = (0..3)
        .map(|i| {
            let eye = Vec3::new(0.15 * i as f64 - 0.15, 0.05 * i as f64, 0.0);
            CameraView::with_fov(60.0, size, size, look_at(eye, Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, -1.0, 0.0)), eye)
        })
        .collect();
    let imgs: Vec<Array3<f64>> = (0..2)
        .map(|v| Array3::from_shape_fn((size, size, 3), |(y, x, c)| (((y * 3 + x * 5 + c + v * 7) % 9) as f64) / 8.0))
        .collect();
    let clean: Vec<Array3<f64>> = imgs.iter().map(|i| i.mapv(|v| v * 0.9 + 0.05)).collect();
    let gt = Array3::from_shape_fn((size, size, 3), |(y, x, c)| (((y + x * 2 + c * 3) % 5) as f64) / 4.0);
    let input = ModelInput::new(imgs, &views[..2], cfg.encoding).unwrap();
    let clean_input = input.with_images(clean).unwrap();
    let guidance = model.forward_clean_branch(&clean_input).unwrap();
    let extractor = GradientPyramid { levels: 2 };
    // The frequency term's weight map is frozen in its gradient; it is
    // checked on its own in the losses tests.
    let weights = LossWeights { freq: 0.0, ..LossWeights::default() };
    let settings = RenderSettings::exact();

    let loss_of = |m: &GaussianModel<f64>| {
        let cloud = m.predict_gaussians(&input).unwrap();
        let out = render_view(&cloud, &views[2], &settings).unwrap();
        total_loss_grad(out.color.view(), gt.view(), &cloud, Some(&guidance), &weights, true, &extractor, false)
            .unwrap()
            .report
            .total
    };

    let (cloud, cache) = model.forward_with_cache(&input).unwrap();
    let (out, tape) = render_view_with_tape(&cloud, &views[2], &settings).unwrap();
    let lg = total_loss_grad(out.color.view(), gt.view(), &cloud, Some(&guidance), &weights, true, &extractor, true).unwrap();
    let cg = tape.backward(&cloud, &views[2], lg.image.as_ref().unwrap().view()).unwrap();
    let mut grads = model.weights.zeros_like();
    model.backward(&cache, &cloud, &cg, lg.depths.as_deref(), &mut grads).unwrap();

    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.2.to_vec()).collect();
    let names: Vec<String> = grads.tensors().into_iter().map(|t| t.0).collect();
    let h = 1e-6;
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        for j in [0, len / 3, len - 1] {
            let mut p = model.clone();
            p.weights.tensors_mut()[ti][j] += h;
            let mut m = model.clone();
            m.weights.tensors_mut()[ti][j] -= h;
            let fd = (loss_of(&p) - loss_of(&m)) / (2.0 * h);
            let a = analytic[ti][j];
            assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()) + 1e-7, "{name}[{j}]: fd {fd} vs analytic {a}");
            checked += 1;
        }
    }
    assert!(checked > 40);
    assert!(grads.sq_norm() > 0.0);
}
