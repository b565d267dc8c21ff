use ascnet::conv::{asc_conv_forward, ConvLayer, LayerKind};
use ascnet::models::*;
use ascnet::tensor::{relu, softmax_cross_entropy};
use ascnet::{LabelMap, RngState, Tensor};

fn random_image(h: usize, w: usize, rng: &mut RngState) -> Tensor<f32> {
    Tensor::from_vec(&[1, 1, h, w], (0..h * w).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn random_labels(h: usize, w: usize, rng: &mut RngState) -> LabelMap {
    LabelMap::new(h, w, (0..h * w).map(|_| rng.int_range(0, 1) as u32).collect()).unwrap()
}

/// The classic twin of an adaptive model: same conv weights, no rate network.
fn classic_twin(model: &Model<f32>) -> Model<f32> {
    let mut twin = Model::build(
        ModelSpec::new(Variant::ClassicCnn7, model.num_classes, model.height, model.width),
        &mut RngState::new(0),
    )
    .unwrap();
    for (dst, src) in twin.layers.iter_mut().zip(&model.layers) {
        *dst = ConvLayer {
            kind: LayerKind::Classic,
            ..src.clone()
        };
    }
    twin
}

#[test]
fn layouts_follow_variant_tables() {
    let mut rng = RngState::new(1);
    let classic = build_model::<f32>(ModelSpec::new(Variant::ClassicCnn7, 2, 16, 16), &mut rng).unwrap();
    let out: Vec<_> = classic.layers.iter().map(|l| l.out_channels()).collect();
    assert_eq!(out, [8, 8, 8, 8, 8, 8, 2]);
    assert!(classic.rate_net.is_none());

    let dilated = build_model::<f32>(ModelSpec::new(Variant::DilatedCnn7, 2, 16, 16), &mut rng).unwrap();
    let rates: Vec<_> = dilated
        .layers
        .iter()
        .map(|l| match l.kind {
            LayerKind::Dilated(r) => r,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(rates, [1, 1, 2, 4, 8, 16, 1]);

    let asc14 = build_model::<f32>(ModelSpec::new(Variant::AscNet14, 2, 16, 16), &mut rng).unwrap();
    let out: Vec<_> = asc14.layers.iter().map(|l| l.out_channels()).collect();
    assert_eq!(out.len(), 14);
    assert!(out[..13].iter().all(|&c| c == 32) && out[13] == 2);
    assert!(asc14.layers.iter().all(|l| l.kind == LayerKind::Adaptive));
    let net: Vec<_> = asc14.rate_net.as_ref().unwrap().layers.iter().map(|l| l.out_channels()).collect();
    assert_eq!(net, [8, 4, 1]);
}

#[test]
fn shape_law_for_every_variant() {
    let mut rng = RngState::new(2);
    for variant in Variant::ALL {
        for (h, w) in [(8, 8), (9, 13), (16, 10)] {
            let model = build_model::<f32>(ModelSpec::new(variant, 3, h, w), &mut rng).unwrap();
            let (logits, rates) = model_forward(&model, &random_image(h, w, &mut rng)).unwrap();
            assert_eq!(logits.shape(), &[1, 3, h, w]);
            assert_eq!(rates.is_some(), variant.is_adaptive());
        }
    }
}

#[test]
fn fresh_asc_model_emits_unit_rates() {
    for seed in 0..5 {
        let mut rng = RngState::new(seed);
        let model = build_model::<f32>(ModelSpec::new(Variant::AscNet7, 2, 12, 12), &mut rng).unwrap();
        let rates = model_forward(&model, &random_image(12, 12, &mut rng)).unwrap().1.unwrap();
        assert!(rates.values().data().iter().all(|&r| r == 1.0));
    }
}

#[test]
fn rate_network_zero_weights_unit_bias() {
    let mut rng = RngState::new(3);
    let mut net = RateNetwork::<f64>::new(1, &mut rng);
    for layer in &mut net.layers {
        layer.weight.data_mut().fill(0.0);
        layer.bias.data_mut().fill(0.0);
    }
    net.layers[2].bias.data_mut()[0] = 1.0;
    let image = random_image(9, 7, &mut rng).cast::<f64>();
    let rates = rate_network_forward(&image, &net).unwrap();
    assert_eq!(rates.values().shape(), &[1, 1, 9, 7]);
    assert!(rates.values().data().iter().all(|&r| r == 1.0));
}

#[test]
fn fresh_asc_matches_classic_twin() {
    let mut rng = RngState::new(4);
    let asc = build_model::<f32>(ModelSpec::new(Variant::AscNet7, 2, 16, 16), &mut rng).unwrap();
    let twin = classic_twin(&asc);
    let image = random_image(16, 16, &mut rng);
    let labels = random_labels(16, 16, &mut rng);
    let a = asc.forward(&image).unwrap();
    let c = twin.forward(&image).unwrap();
    assert!(a.logits.max_abs_diff(&c.logits) <= 1e-6);

    let (_, ga) = softmax_cross_entropy(&a.logits, &labels).unwrap();
    let (_, gc) = softmax_cross_entropy(&c.logits, &labels).unwrap();
    let grads_a = model_backward(&asc, &a, &ga).unwrap();
    let grads_c = model_backward(&twin, &c, &gc).unwrap();
    for (x, y) in grads_a.layers.iter().zip(&grads_c.layers) {
        assert!(x.weight.max_abs_diff(&y.weight) <= 1e-6);
        assert!(x.bias.max_abs_diff(&y.bias) <= 1e-6);
    }
}

#[test]
fn every_layer_consumes_the_same_rate_field() {
    let mut rng = RngState::new(5);
    let mut model = build_model::<f64>(ModelSpec::new(Variant::AscNet7, 2, 10, 10), &mut rng).unwrap();
    let net = model.rate_net.as_mut().unwrap();
    for v in net.layers[2].weight.data_mut() {
        *v = 0.2 * rng.normal();
    }
    let image = random_image(10, 10, &mut rng).cast::<f64>();
    let pass = model.forward(&image).unwrap();
    let rates = pass.rates.clone().unwrap();
    assert!(rates.values().data().iter().any(|&r| r != 1.0));
    assert_eq!(&rates, &model.rate_net.as_ref().unwrap().forward(&image).unwrap());

    let mut h = image;
    for (i, layer) in model.layers.iter().enumerate() {
        let z = asc_conv_forward(&h, layer, &rates).unwrap();
        h = if i + 1 < model.layers.len() { relu(&z) } else { z };
    }
    assert_eq!(h, pass.logits);
}

#[test]
fn smoke_sweep_random_parameters() {
    for seed in 0..10 {
        let mut rng = RngState::new(seed);
        let mut model = build_model::<f32>(ModelSpec::new(Variant::AscNet7, 2, 16, 16), &mut rng).unwrap();
        for v in model.rate_net.as_mut().unwrap().layers[2].weight.data_mut() {
            *v = rng.normal() as f32;
        }
        let pass = model.forward(&random_image(16, 16, &mut rng)).unwrap();
        assert!(pass.logits.is_finite());
        assert!(pass.rates.unwrap().values().data().iter().all(|&r| r >= 0.0));
    }
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    let mut rng = RngState::new(6);
    for variant in Variant::ALL {
        let model = build_model::<f32>(ModelSpec::new(variant, 2, 12, 12), &mut rng).unwrap();
        let pass = model.forward(&random_image(12, 12, &mut rng)).unwrap();
        let (_, g) = softmax_cross_entropy(&pass.logits, &random_labels(12, 12, &mut rng)).unwrap();
        let grads = model.backward(&pass, &g).unwrap();
        assert!(grads.is_finite());
        let shapes: Vec<_> = grads.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let want: Vec<_> = model.params().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, want);
        assert_eq!(grads.rate_net.is_some(), variant.is_adaptive());
    }
}

#[test]
fn rate_gradient_reaches_rate_network_at_init() {
    let mut rng = RngState::new(7);
    let model = build_model::<f32>(ModelSpec::new(Variant::AscNet7, 2, 16, 16), &mut rng).unwrap();
    let pass = model.forward(&random_image(16, 16, &mut rng)).unwrap();
    let (_, g) = softmax_cross_entropy(&pass.logits, &random_labels(16, 16, &mut rng)).unwrap();
    let grads = model.backward(&pass, &g).unwrap();
    let rate_net = grads.rate_net.unwrap();
    assert!(rate_net[2].bias.data()[0] != 0.0);
    assert!(rate_net[2].weight.data().iter().any(|&v| v != 0.0));
}

#[test]
fn checkpoint_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngState::new(8);
    for variant in Variant::ALL {
        let model = build_model::<f32>(ModelSpec::new(variant, 3, 9, 11), &mut rng).unwrap();
        let path = dir.path().join(format!("{variant}.ckpt"));
        model.save(&path).unwrap();
        let back = Model::<f32>::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.spec().unwrap().variant, variant);
    }
}
