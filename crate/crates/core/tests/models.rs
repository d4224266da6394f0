use deskbc::augment::Batch;
use deskbc::models::autobc::{AutoBc, AutoBcConfig};
use deskbc::models::autoencoder::{Autoencoder, AutoencoderConfig};
use deskbc::models::spatial::{spatial_fuse, SpatialConfig, SpatialNet};
use deskbc::models::vit::{apply_mask, group_mask, patchify, unpatchify, VitConfig, VitNet, VitObjective};
use deskbc::models::{ae_loss, sit_recon_loss, ModelBundle, ModelConfig, Network, Trainable};
use deskbc::nn::gradcheck::check_gradients;
use deskbc::nn::{Adam, Layer, Mode, Module, Parameterized, Tensor};
use deskbc::seed;
use proptest::prelude::*;
use rand::Rng as _;

fn random_tensor(shape: &[usize], lo: f64, hi: f64, s: u64) -> Tensor {
    let mut rng = seed::rng(s);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn images(b: usize, s: u64) -> Tensor {
    random_tensor(&[b, 3, 224, 224], -0.5, 0.5, s)
}

fn batch(b: usize, with_masks: bool, s: u64) -> Batch {
    let masks = with_masks.then(|| random_tensor(&[b, 1, 224, 224], 0.0, 1.0, s + 1).map(|v| (v > 0.8) as u8 as f64));
    Batch {
        images: images(b, s),
        steering: (0..b).map(|i| 0.1 * i as f64 - 0.2).collect(),
        masks,
        indices: (0..b).collect(),
    }
}

fn tiny_ae() -> AutoencoderConfig {
    AutoencoderConfig {
        widths: [2, 3, 4],
        input_downsample: 14,
    }
}

fn tiny_spatial() -> SpatialConfig {
    SpatialConfig {
        input_downsample: 14,
        stem_width: 3,
        blocks: 1,
        feature_channels: 2,
        head_width: 2,
        ..Default::default()
    }
}

fn tiny_vit() -> VitConfig {
    VitConfig {
        input_downsample: 14,
        patch: 4,
        width: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        embed_dim: 1000,
        head_hidden: 4,
        recon_hidden: 4,
        recon_channels: 2,
        ..Default::default()
    }
}

#[test]
fn autoencoder_shapes_for_several_batch_sizes() {
    let mut ae = Autoencoder::new(AutoencoderConfig::desk(), 1).unwrap();
    for b in [1, 2, 7] {
        let x = images(b, b as u64);
        let z = ae.ae_encode(&x, Mode::Eval).unwrap();
        assert_eq!(z.shape(), &[b, 32, 7, 7]);
        let r = ae.ae_decode(&z, Mode::Eval).unwrap();
        assert_eq!(r.shape(), &[b, 3, 224, 224]);
        assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn autobc_and_spatial_shapes() {
    let mut bc = AutoBc::new(AutoBcConfig::desk(), 2).unwrap();
    let mut sp = SpatialNet::new(SpatialConfig::desk(), 3).unwrap();
    for b in [1, 2, 7] {
        let x = images(b, 10 + b as u64);
        assert_eq!(bc.autobc_forward(&x, Mode::Eval).unwrap().shape(), &[b, 1]);
        let out = sp.spattn_forward(&x, Mode::Eval, true).unwrap();
        assert_eq!(out.steering.shape(), &[b, 1]);
        assert_eq!(out.mask.shape(), &[b, 1, 224, 224]);
        assert_eq!(out.recon.unwrap().shape(), &[b, 3, 224, 224]);
    }
}

#[test]
fn vit_shapes() {
    let mut v = VitNet::new(VitConfig::desk(), 4).unwrap();
    assert_eq!(v.config.tokens(), 196);
    for b in [1, 2, 7] {
        let x = images(b, 20 + b as u64);
        let out = v.vit_forward(&x, Mode::Eval).unwrap();
        assert_eq!(out.steering.shape(), &[b, 1]);
        assert_eq!(out.embedding.shape(), &[b, 1000]);
        let masks = v.draw_masks(b);
        assert_eq!(
            v.reconstruct(&x, &masks, Mode::Eval).unwrap().shape(),
            &[b, 3, 224, 224]
        );
    }
}

#[test]
fn full_size_configurations() {
    let x = images(1, 99);
    let mut ae = Autoencoder::new(AutoencoderConfig::default(), 1).unwrap();
    assert_eq!(ae.ae_encode(&x, Mode::Eval).unwrap().shape(), &[1, 128, 28, 28]);
    let mut sp = SpatialNet::new(SpatialConfig::default(), 1).unwrap();
    assert_eq!(sp.features(&x, Mode::Eval).unwrap().shape(), &[1, 256, 56, 56]);
    let mut v = VitNet::new(VitConfig::default(), 1).unwrap();
    assert_eq!(v.config.tokens(), 196);
    let p = patchify(&x, 16).unwrap();
    assert_eq!(p.shape(), &[1, 196, 768]);
    let out = v.vit_forward(&x, Mode::Eval).unwrap();
    assert_eq!(out.embedding.shape(), &[1, 1000]);
}

#[test]
fn rejects_wrong_input_size() {
    let mut bc = AutoBc::new(AutoBcConfig::desk(), 2).unwrap();
    assert!(bc
        .autobc_forward(&Tensor::zeros(&[1, 3, 112, 112]), Mode::Eval)
        .is_err());
    let mut v = VitNet::new(VitConfig::desk(), 2).unwrap();
    assert!(v.vit_forward(&Tensor::zeros(&[1, 1, 224, 224]), Mode::Eval).is_err());
}

fn gradcheck<M: Trainable>(model: &mut M, b: &Batch, reseed: u64) -> f64 {
    let report = check_gradients(
        model,
        |m: &mut M, backward| {
            m.reseed(reseed);
            m.batch_loss(b, backward).unwrap()
        },
        20,
        1e-5,
        7,
    );
    assert_eq!(report.checks.len(), 20);
    report.max_rel_err()
}

#[test]
fn gradient_check_autoencoder() {
    let mut m = Autoencoder::new(tiny_ae(), 11).unwrap();
    let err = gradcheck(&mut m, &batch(2, false, 1), 0);
    assert!(err < 1e-3, "max rel err {err}");
}

#[test]
fn gradient_check_autobc() {
    let cfg = AutoBcConfig {
        encoder: tiny_ae(),
        hidden: 6,
        ..Default::default()
    };
    let mut m = AutoBc::new(cfg, 12).unwrap();
    let err = gradcheck(&mut m, &batch(2, false, 2), 5);
    assert!(err < 1e-3, "max rel err {err}");
}

#[test]
fn gradient_check_spatial() {
    let mut m = SpatialNet::new(tiny_spatial(), 13).unwrap();
    let err = gradcheck(&mut m, &batch(2, true, 3), 0);
    assert!(err < 1e-3, "max rel err {err}");
}

#[test]
fn gradient_check_vit_steering_and_pretraining() {
    let mut m = VitNet::new(tiny_vit(), 14).unwrap();
    let b = batch(2, false, 4);
    let err = gradcheck(&mut m, &b, 0);
    assert!(err < 1e-3, "steering max rel err {err}");
    m.objective = VitObjective::Pretrain;
    let err = gradcheck(&mut m, &b, 3);
    assert!(err < 1e-3, "pretraining max rel err {err}");
}

#[test]
fn fuse_matches_elementwise_definition() {
    let z = random_tensor(&[2, 3, 4, 5], -2.0, 2.0, 1);
    let m = random_tensor(&[2, 1, 4, 5], 0.0, 1.0, 2);
    let f = spatial_fuse(&z, &m).unwrap();
    for b in 0..2 {
        for c in 0..3 {
            for p in 0..20 {
                let zv = z.item(b)[c * 20 + p];
                let mv = m.item(b)[p];
                assert_eq!(f.item(b)[c * 20 + p], zv * mv + zv);
            }
        }
    }
    assert_eq!(spatial_fuse(&z, &Tensor::zeros(&[2, 1, 4, 5])).unwrap(), z);
    assert_eq!(
        spatial_fuse(&z, &Tensor::full(&[2, 1, 4, 5], 1.0)).unwrap(),
        z.clone().scale(2.0)
    );
    assert!(spatial_fuse(&z, &Tensor::zeros(&[2, 1, 4, 4])).is_err());
}

#[test]
fn silencing_the_mask_head_removes_attention() {
    let mut net = SpatialNet::new(SpatialConfig::desk(), 5).unwrap();
    let last = net
        .mask_head
        .layers
        .iter_mut()
        .filter_map(|m| match m {
            Module::Conv(c) => Some(c),
            _ => None,
        })
        .last()
        .unwrap();
    last.weight.value.fill(0.0);
    last.bias.value.fill(-40.0);
    let x = images(3, 8);
    let with = net.spattn_forward(&x, Mode::Eval, false).unwrap().steering;
    let without = net.forward_without_attention(&x).unwrap();
    for (a, b) in with.data().iter().zip(without.data()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn patchify_index_oracle_and_inverse() {
    let x = random_tensor(&[2, 3, 32, 32], -1.0, 1.0, 3);
    let p = 8;
    let t = patchify(&x, p).unwrap();
    assert_eq!(t.shape(), &[2, 16, 3 * 64]);
    for b in 0..2 {
        for tok in 0..16 {
            let (ty, tx) = (tok / 4, tok % 4);
            for c in 0..3 {
                for py in 0..p {
                    for px in 0..p {
                        let want = x.item(b)[(c * 32 + ty * p + py) * 32 + tx * p + px];
                        assert_eq!(t.item(b)[tok * 192 + (c * p + py) * p + px], want);
                    }
                }
            }
        }
    }
    assert_eq!(unpatchify(&t, p, 3, 32).unwrap(), x);
    assert!(patchify(&x, 5).is_err());
}

/// Every masked cell must touch another masked cell, since rectangles have
/// at least two patches.
fn no_isolated_cells(mask: &[bool], g: usize) -> bool {
    (0..g * g).filter(|&k| mask[k]).all(|k| {
        let (y, x) = (k / g, k % g);
        let nb = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
        nb.iter().any(|&(ny, nx)| ny < g && nx < g && mask[ny * g + nx])
    })
}

#[test]
fn group_mask_coverage_monte_carlo() {
    let mut rng = seed::rng(42);
    let mut total = 0usize;
    for _ in 0..1000 {
        let m = group_mask(14, 0.5, &mut rng);
        let n = m.iter().filter(|&&v| v).count();
        assert!((98..=118).contains(&n), "masked {n}");
        assert!(no_isolated_cells(&m, 14));
        total += n;
    }
    let mean = total as f64 / 1000.0;
    assert!((98.0..110.0).contains(&mean), "mean {mean}");
}

#[test]
fn mask_token_replaces_masked_positions_only() {
    let t = random_tensor(&[1, 4, 3], -1.0, 1.0, 5);
    let masks = vec![vec![true, false, false, true]];
    let out = apply_mask(&t, &masks, &[9.0, 9.0, 9.0]).unwrap();
    assert_eq!(&out.data()[0..3], &[9.0; 3]);
    assert_eq!(&out.data()[3..9], &t.data()[3..9]);
    assert_eq!(&out.data()[9..12], &[9.0; 3]);
}

#[test]
fn loss_oracles() {
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
    let y = Tensor::from_vec(&[1, 1, 2, 2], vec![0.5, 0.5, 0.0, 0.25]).unwrap();
    // (0.25 + 0 + 1 + 0) / 4
    assert!((ae_loss(&x, &y).unwrap() - 0.3125).abs() < 1e-15);
    let x2 = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, -1.0, 0.5, 0.0]).unwrap();
    let y2 = Tensor::from_vec(&[2, 1, 1, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    // per-image sums 2 and 0.5, averaged
    assert!((sit_recon_loss(&x2, &y2).unwrap() - 1.25).abs() < 1e-15);
}

fn bundle_roundtrip(config: ModelConfig, with_masks: bool) {
    let mut a = ModelBundle::new(config, 77).unwrap();
    // a training step moves weights and batch-norm statistics off their init
    let b = batch(2, with_masks, 6);
    let mut opt = Adam::new(1e-3);
    a.net.zero_grad();
    a.net.trainable().batch_loss(&b, true).unwrap();
    opt.step(&mut a.net);
    a.meta.insert("epochs".into(), "1".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    a.save(&path).unwrap();
    let mut c = ModelBundle::load(&path).unwrap();
    assert_eq!(c.config, a.config);
    assert_eq!(c.meta, a.meta);
    let ta = a.named_tensors();
    let tc = c.named_tensors();
    assert_eq!(ta.len(), tc.len());
    for ((na, va), (nc, vc)) in ta.iter().zip(&tc) {
        assert_eq!(na, nc);
        let bits_a: Vec<u64> = va.data().iter().map(|v| v.to_bits()).collect();
        let bits_c: Vec<u64> = vc.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_c, "{na}");
    }
    if !matches!(a.net, Network::Autoencoder(_)) {
        let x = images(2, 9);
        let pa = a.predict(&x).unwrap();
        let pc = c.predict(&x).unwrap();
        assert_eq!(
            pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pc.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    bundle_roundtrip(ModelConfig::Autoencoder(AutoencoderConfig::desk()), false);
    bundle_roundtrip(ModelConfig::Autobc(AutoBcConfig::desk()), false);
    bundle_roundtrip(ModelConfig::AutobcSpatial(SpatialConfig::desk()), true);
    bundle_roundtrip(ModelConfig::Vit(tiny_vit()), false);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut a = ModelBundle::new(ModelConfig::Autobc(AutoBcConfig::desk()), 1).unwrap();
    let bytes = a.to_bytes().unwrap();
    assert!(ModelBundle::from_bytes(&bytes).is_ok());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ModelBundle::from_bytes(&bad).is_err());
    assert!(ModelBundle::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(ModelBundle::from_bytes(&bad).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(ModelBundle::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn frozen_encoder_does_not_move() {
    let ae = Autoencoder::new(tiny_ae(), 3).unwrap();
    let cfg = AutoBcConfig {
        freeze_encoder: true,
        hidden: 4,
        ..Default::default()
    };
    let mut bc = AutoBc::from_autoencoder(&ae, cfg, 4).unwrap();
    let snapshot = |bc: &mut AutoBc| {
        let mut v = Vec::new();
        bc.encoder
            .visit_params("", &mut |_, p| v.extend_from_slice(p.value.data()));
        v
    };
    let before = snapshot(&mut bc);
    let mut opt = Adam::new(1e-2);
    for _ in 0..3 {
        bc.zero_grad();
        bc.batch_loss(&batch(2, false, 5), true).unwrap();
        opt.step(&mut bc);
    }
    assert_eq!(before, snapshot(&mut bc));
}

#[test]
fn autoencoder_loss_decreases_with_adam() {
    let mut ae = Autoencoder::new(tiny_ae(), 9).unwrap();
    let b = batch(4, false, 10);
    let mut opt = Adam::new(1e-2);
    let first = ae.batch_loss(&b, false).unwrap();
    for _ in 0..30 {
        ae.zero_grad();
        ae.batch_loss(&b, true).unwrap();
        opt.step(&mut ae);
    }
    let last = ae.batch_loss(&b, false).unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn eval_forward_is_deterministic() {
    let mut bc = AutoBc::new(AutoBcConfig::desk(), 2).unwrap();
    let x = images(2, 3);
    let a = bc.autobc_forward(&x, Mode::Eval).unwrap();
    let b = bc.autobc_forward(&x, Mode::Eval).unwrap();
    assert_eq!(a, b);
    // dropout only acts in training mode
    let t1 = bc.autobc_forward(&x, Mode::Train).unwrap();
    assert_ne!(a, t1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patchify_roundtrip(c in 1usize..4, g in 1usize..5, p in 1usize..5, s in any::<u64>()) {
        let side = g * p;
        let x = random_tensor(&[2, c, side, side], -1.0, 1.0, s);
        let t = patchify(&x, p).unwrap();
        prop_assert_eq!(t.shape(), &[2, g * g, c * p * p]);
        prop_assert_eq!(unpatchify(&t, p, c, side).unwrap(), x);
    }

    #[test]
    fn group_mask_reaches_ratio(g in 2usize..16, ratio in 0.05f64..0.95, s in any::<u64>()) {
        let m = group_mask(g, ratio, &mut seed::rng(s));
        let n = m.iter().filter(|&&v| v).count();
        let target = (ratio * (g * g) as f64).ceil() as usize;
        prop_assert!(n >= target);
        prop_assert!(n < target + 16);
        prop_assert!(no_isolated_cells(&m, g));
    }

    #[test]
    fn fuse_is_identity_plus_product(v in -5.0f64..5.0, a in 0.0f64..1.0) {
        let z = Tensor::full(&[1, 2, 1, 1], v);
        let m = Tensor::full(&[1, 1, 1, 1], a);
        let f = spatial_fuse(&z, &m).unwrap();
        prop_assert!(f.data().iter().all(|&x| x == v * a + v));
    }
}

#[test]
fn layer_trait_is_object_safe_for_blocks() {
    // Sequential of the encoder is usable behind the Layer trait
    let mut ae = Autoencoder::new(tiny_ae(), 1).unwrap();
    let enc: &mut dyn Layer = &mut ae.encoder;
    assert_eq!(enc.forward(&images(1, 1), Mode::Eval).unwrap().shape(), &[1, 4, 2, 2]);
}

#[test]
fn upsampled_losses_match_full_resolution() {
    use deskbc::models::losses::{bce, bce_upsampled, mse, mse_upsampled};
    use deskbc::nn::pool::upsample_nearest;
    for k in [1usize, 2, 4] {
        let small = random_tensor(&[2, 3, 5, 6], 0.05, 0.95, 40 + k as u64);
        let target = random_tensor(&[2, 3, 5 * k, 6 * k], 0.0, 1.0, 50 + k as u64);
        let up = upsample_nearest(&small, k);
        for (fast, full) in [
            (mse_upsampled(&small, &target, k).unwrap(), mse(&up, &target).unwrap()),
            (bce_upsampled(&small, &target, k).unwrap(), bce(&up, &target).unwrap()),
        ] {
            assert!(
                (fast.0 - full.0).abs() < 1e-12 * full.0.abs().max(1.0),
                "k={k}: {} vs {}",
                fast.0,
                full.0
            );
            // upsample backward sums each block's gradient
            let mut folded = vec![0.0; small.len()];
            let (h, w) = (5 * k, 6 * k);
            for (i, g) in full.1.data().iter().enumerate() {
                let p = i / (h * w);
                let (y, x) = ((i % (h * w)) / w, i % w);
                folded[(p * 5 + y / k) * 6 + x / k] += g;
            }
            for (a, b) in fast.1.data().iter().zip(&folded) {
                assert!((a - b).abs() < 1e-12, "k={k}: grad {a} vs {b}");
            }
        }
    }
}
