use proptest::prelude::*;

use super::*;
use crate::tensor::Tensor;

fn small_backbone() -> BackboneSpec {
    BackboneSpec::new(&[(8, 1), (16, 1)], false, (3, 16, 16))
}

fn ramp_input(n: usize) -> Tensor<f64> {
    let len = n * 3 * 16 * 16;
    Tensor::new(vec![n, 3, 16, 16], (0..len).map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.4).collect()).unwrap()
}

#[test]
fn backbone_width_is_final_stage_channels() {
    let spec = NetworkSpec { backbone: small_backbone(), heads: vec![] };
    let net = Network::<f32>::build(spec, 1).unwrap();
    assert_eq!(net.feature_dim(), 16);
    let out = net.forward_features(&ramp_input(2).cast(), &[BACKBONE_TAP]).unwrap();
    assert_eq!(out[BACKBONE_TAP].shape(), &[2, 16]);
}

#[test]
fn same_seed_same_parameters() {
    let spec = NetworkSpec { backbone: small_backbone(), heads: vec![HeadSpec::new(16, 8, HeadLayout::Mlp4)] };
    let a = Network::<f32>::build(spec.clone(), 9).unwrap();
    let b = Network::<f32>::build(spec.clone(), 9).unwrap();
    let c = Network::<f32>::build(spec, 10).unwrap();
    assert_eq!(a.store, b.store);
    assert_ne!(a.store, c.store);
}

#[test]
fn zero_input_stays_finite() {
    let spec = NetworkSpec { backbone: BackboneSpec::new(&[(8, 1), (16, 2)], true, (3, 16, 16)), heads: vec![] };
    let net = Network::<f32>::build(spec, 3).unwrap();
    let zeros = Tensor::zeros(vec![2, 3, 16, 16]);
    let out = net.forward_features(&zeros, &["stage1", BACKBONE_TAP]).unwrap();
    assert!(out["stage1"].data().iter().all(|&v| v == 0.0));
    assert!(out[BACKBONE_TAP].all_finite());
}

#[test]
fn collapsing_spatial_extent_is_rejected() {
    let spec = BackboneSpec::new(&[(4, 1), (4, 1), (4, 1)], false, (3, 4, 4));
    assert!(matches!(spec.stage_extents(), Err(ModelError::InvalidSpec(_))));
    let ok = BackboneSpec::new(&[(4, 1), (4, 1), (4, 1)], false, (3, 8, 8));
    assert_eq!(ok.stage_extents().unwrap(), vec![(4, 4), (2, 2), (1, 1)]);
}

#[test]
fn head_dimension_schedules() {
    assert_eq!(HeadSpec::new(512, 2048, HeadLayout::Mlp4).dims().unwrap(), vec![512, 1024, 512, 1024, 2048]);
    assert_eq!(HeadSpec::new(1280, 2048, HeadLayout::Mlp2).dims().unwrap(), vec![1280, 2560, 2048]);
    assert_eq!(HeadSpec::new(512, 2048, HeadLayout::Linear).dims().unwrap(), vec![512, 2048]);
    assert_eq!(HeadSpec::new(512, 2048, HeadLayout::EqualDim4).dims().unwrap(), vec![512, 2048, 2048, 2048, 2048]);
    assert!(HeadSpec::new(4, 8, HeadLayout::Custom(vec![5, 8])).dims().is_err());
    assert!(HeadSpec::new(4, 8, HeadLayout::Custom(vec![4, 16, 7])).dims().is_err());
    assert!(HeadSpec::new(0, 8, HeadLayout::Linear).dims().is_err());
}

#[test]
fn linear_head_is_a_single_affine_map() {
    let spec = NetworkSpec { backbone: small_backbone(), heads: vec![HeadSpec::new(16, 32, HeadLayout::Linear)] };
    let net = Network::<f64>::build(spec, 4).unwrap();
    let head: Vec<_> = net.store.iter().filter(|p| p.name.starts_with("head0")).map(|p| p.name.clone()).collect();
    assert_eq!(head, vec!["head0.layer1.weight", "head0.layer1.bias"]);
    let x = ramp_input(3);
    let out = net.forward_features(&x, &[BACKBONE_TAP, "head0.out"]).unwrap();
    let fs = &out[BACKBONE_TAP];
    let w = &net.store.by_name("head0.layer1.weight").unwrap().tensor;
    let b = &net.store.by_name("head0.layer1.bias").unwrap().tensor;
    for n in 0..3 {
        for j in 0..32 {
            let expect: f64 = (0..16).map(|i| w.data()[i * 32 + j] * fs.row(n)[i]).sum::<f64>() + b.data()[j];
            assert!((out["head0.out"].row(n)[j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn four_layer_head_skips_norm_after_layer_two() {
    let spec = NetworkSpec { backbone: small_backbone(), heads: vec![HeadSpec::new(16, 8, HeadLayout::Mlp4)] };
    let net = Network::<f32>::build(spec, 4).unwrap();
    let norms: Vec<_> = net
        .store
        .iter()
        .filter(|p| p.name.starts_with("head0") && p.name.ends_with("norm.gamma"))
        .map(|p| p.name.clone())
        .collect();
    assert_eq!(norms, vec!["head0.layer1.norm.gamma", "head0.layer3.norm.gamma"]);
}

#[test]
fn taps_report_declared_widths() {
    let spec = NetworkSpec {
        backbone: small_backbone(),
        heads: vec![HeadSpec::new(16, 24, HeadLayout::Mlp4), HeadSpec::new(16, 24, HeadLayout::EqualDim4)],
    };
    let net = Network::<f64>::build(spec, 5).unwrap();
    let names: Vec<_> = net.taps().into_iter().map(|t| (t.name, t.width)).collect();
    assert_eq!(
        names,
        vec![
            ("stage1".to_string(), 8 * 8 * 8),
            ("stage2".to_string(), 16 * 4 * 4),
            ("backbone".to_string(), 16),
            ("head0.1".to_string(), 32),
            ("head0.2".to_string(), 16),
            ("head0.3".to_string(), 32),
            ("head0.out".to_string(), 24),
            ("head1.1".to_string(), 24),
            ("head1.2".to_string(), 24),
            ("head1.3".to_string(), 24),
            ("head1.out".to_string(), 24),
        ]
    );
    let out = net.forward_features(&ramp_input(2), &["backbone", "head0.out", "head1.2"]).unwrap();
    assert_eq!(out["backbone"].shape(), &[2, 16]);
    assert_eq!(out["head0.out"].shape(), &[2, 24]);
    assert_eq!(out["head1.2"].shape(), &[2, 24]);
    assert!(matches!(net.forward_features(&ramp_input(1), &["head9.out"]), Err(ModelError::UnknownTap(_))));
}

#[test]
fn eval_features_do_not_depend_on_batch_composition() {
    let spec = NetworkSpec { backbone: small_backbone(), heads: vec![HeadSpec::new(16, 8, HeadLayout::Mlp2)] };
    let net = Network::<f64>::build(spec, 6).unwrap();
    let batch = ramp_input(4);
    let all = net.forward_features(&batch, &["head0.out"]).unwrap();
    let one = Tensor::new(vec![1, 3, 16, 16], batch.row(2).to_vec()).unwrap();
    let alone = net.forward_features(&one, &["head0.out"]).unwrap();
    for (a, b) in all["head0.out"].row(2).iter().zip(alone["head0.out"].row(0)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn heads_are_severable() {
    let spec = NetworkSpec { backbone: small_backbone(), heads: vec![HeadSpec::new(16, 8, HeadLayout::Mlp4)] };
    let net = Network::<f32>::build(spec, 7).unwrap();
    let bare = net.backbone_only();
    assert_eq!(bare.num_heads(), 0);
    let x = ramp_input(3).cast();
    let a = net.forward_features(&x, &[BACKBONE_TAP]).unwrap();
    let b = bare.forward_features(&x, &[BACKBONE_TAP]).unwrap();
    assert_eq!(a[BACKBONE_TAP], b[BACKBONE_TAP]);
}

#[test]
fn pool_intermediate_sizes() {
    let f = Tensor::<f32>::full(vec![2, 64, 16, 16], 1.0);
    let p = pool_intermediate(&f, 512).unwrap();
    assert_eq!(p.shape(), &[2, 256]);
    let f = Tensor::<f32>::full(vec![1, 512, 2, 2], 1.0);
    assert_eq!(pool_intermediate(&f, 512).unwrap().shape(), &[1, 512]);
    let f = Tensor::<f32>::full(vec![1, 3, 8, 8], 1.0);
    assert_eq!(pool_intermediate(&f, 48).unwrap().shape(), &[1, 48]);
    assert!(pool_intermediate(&f, 2).is_err());
}

#[test]
fn pool_intermediate_averages_blocks() {
    // 1x1x4x4 ramp pooled to 2x2
    let f = Tensor::<f64>::new(vec![1, 1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
    let p = pool_intermediate(&f, 4).unwrap();
    assert_eq!(p.data(), &[2.5, 4.5, 10.5, 12.5]);
    // global pool
    let p = pool_intermediate(&f, 1).unwrap();
    assert_eq!(p.data(), &[7.5]);
}

proptest! {
    #[test]
    fn head_dims_follow_schedules(m in 1usize..600, d in 1usize..600) {
        let four = HeadSpec::new(m, d, HeadLayout::Mlp4);
        prop_assert_eq!(four.dims().unwrap(), vec![m, 2 * m, m, 2 * m, d]);
        prop_assert!(four.has_norm_act(1) && !four.has_norm_act(2) && four.has_norm_act(3) && !four.has_norm_act(4));
        let two = HeadSpec::new(m, d, HeadLayout::Mlp2);
        prop_assert_eq!(two.dims().unwrap(), vec![m, 2 * m, d]);
        prop_assert!(two.has_norm_act(1) && !two.has_norm_act(2));
        let lin = HeadSpec::new(m, d, HeadLayout::Linear);
        prop_assert_eq!(lin.dims().unwrap(), vec![m, d]);
        prop_assert!(!lin.has_norm_act(1));
        prop_assert_eq!(HeadSpec::new(m, d, HeadLayout::EqualDim4).dims().unwrap(), vec![m, d, d, d, d]);
    }
}
