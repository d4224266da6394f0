use deskbc::augment::*;
use deskbc::datasetio::LoadedDataset;
use deskbc::image::ImageU8;
use deskbc::nn::Tensor;
use deskbc::seed;
use proptest::prelude::*;
use rand::Rng as _;

fn random_image(seed_: u64) -> Tensor {
    let mut rng = seed::rng(seed_);
    let d = (0..3 * 224 * 224)
        .map(|_| rng.random_range(0..=255u8) as f64 / 255.0)
        .collect();
    Tensor::from_vec(&[3, 224, 224], d).unwrap()
}

fn dataset(n: usize) -> LoadedDataset {
    let mut rng = seed::rng(9);
    let images = (0..n)
        .map(|_| {
            let mut img = ImageU8::new(224, 224, 3);
            img.data.iter_mut().for_each(|v| *v = rng.random());
            img
        })
        .collect();
    LoadedDataset {
        frame_ids: (0..n).map(|i| format!("f{i}")).collect(),
        images,
        masks: None,
        steering: (0..n).map(|i| -0.5 + i as f64 / n as f64).collect(),
    }
}

#[test]
fn forced_flip_negates_and_is_an_involution() {
    let img = random_image(1);
    let mut rng = seed::rng(0);
    let (f, s, did) = hflip_pair(&img, -0.2, 1.0, &mut rng);
    assert!(did);
    assert_eq!(s, 0.2);
    let (back, s2, _) = hflip_pair(&f, s, 1.0, &mut rng);
    assert_eq!(back, img);
    assert_eq!(s2, -0.2);
    // pixel (c, y, x) moves to (c, y, W-1-x)
    assert_eq!(f.data()[5 * 224 + 3], img.data()[5 * 224 + 220]);
}

#[test]
fn flip_rate_is_near_half() {
    let img = Tensor::zeros(&[1, 2, 2]);
    let mut rng = seed::rng(42);
    let flips = (0..10_000).filter(|_| hflip_pair(&img, 0.1, 0.5, &mut rng).2).count();
    assert!((4800..=5200).contains(&flips), "{flips}");
}

#[test]
fn shift_index_mapping() {
    let img = random_image(2);
    assert_eq!(shift_rows(&img, 0), img);
    let s = shift_rows(&img, 44);
    for c in 0..3 {
        for y in 0..224 {
            let src = if y >= 44 { y - 44 } else { 0 };
            assert_eq!(
                &s.data()[(c * 224 + y) * 224..(c * 224 + y + 1) * 224],
                &img.data()[(c * 224 + src) * 224..(c * 224 + src + 1) * 224]
            );
        }
    }
    let mut rng = seed::rng(3);
    for _ in 0..200 {
        let off = draw_shift(224, 0.2, &mut rng);
        assert!(off.abs() <= 44);
    }
}

#[test]
fn full_region_darkening_halves_everything() {
    let img = random_image(4);
    let d = darken_rect(
        &img,
        Rect {
            x0: 0,
            y0: 0,
            x1: 224,
            y1: 224,
        },
        0.5,
    );
    for (a, b) in d.data().iter().zip(img.data()) {
        assert_eq!(*a, b * 0.5);
    }
}

#[test]
fn darkening_touches_only_its_region() {
    let img = random_image(5);
    let cfg = AugmentConfig::default();
    let mut rng = seed::rng(6);
    for _ in 0..1000 {
        let r = draw_region(224, 224, 0.1, 0.5, &mut rng);
        let frac = r.area() as f64 / (224.0 * 224.0);
        assert!((0.1..=0.5).contains(&frac) && r.area() > 0);
    }
    let (d, r) = darken_region(&img, &cfg, &mut rng);
    for c in 0..3 {
        for y in 0..224 {
            for x in 0..224 {
                let i = (c * 224 + y) * 224 + x;
                let inside = x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
                if inside {
                    assert_eq!(d.data()[i], img.data()[i] * 0.5);
                } else {
                    assert_eq!(d.data()[i].to_bits(), img.data()[i].to_bits());
                }
            }
        }
    }
}

#[test]
fn normalize_endpoints() {
    assert_eq!(normalize_value(0), -0.5);
    assert_eq!(normalize_value(255), 0.5);
    assert!((normalize_value(128) - (128.0 / 255.0 - 0.5)).abs() < 1e-15);
    assert!((normalize_value(128) - 0.00196).abs() < 1e-5);
    for v in 0..=255u8 {
        assert_eq!(denormalize_value(normalize_value(v)), v);
        if v > 0 {
            assert!(normalize_value(v) > normalize_value(v - 1));
        }
    }
}

#[test]
fn disabled_stream_is_deterministic_reordering() {
    let d = dataset(23);
    let s = AugmentStream::new(&d, 5, AugmentConfig::default(), 11).unwrap();
    let a: Vec<Batch> = s.epoch(0).collect();
    let b: Vec<Batch> = s.epoch(0).collect();
    assert_eq!(a.len(), 5);
    assert_eq!(s.batches_per_epoch(), 5);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.images, y.images);
        assert_eq!(x.steering, y.steering);
    }
    // pure normalization of the source rows
    for batch in &a {
        for (k, &i) in batch.indices.iter().enumerate() {
            let want = normalize_image(&d.images[i]);
            assert_eq!(batch.images.item(k), want.data());
            assert_eq!(batch.steering[k], d.steering[i]);
        }
    }
    // different epochs visit the same rows in a different order
    let e1: Vec<usize> = s.epoch(1).flat_map(|b| b.indices).collect();
    let e0: Vec<usize> = a.iter().flat_map(|b| b.indices.clone()).collect();
    assert_ne!(e0, e1);
    let (mut s0, mut s1) = (e0.clone(), e1.clone());
    s0.sort();
    s1.sort();
    assert_eq!(s0, s1);
}

#[test]
fn enabled_stream_keeps_labels_in_range() {
    let d = dataset(17);
    let cfg = AugmentConfig {
        enabled: true,
        ..Default::default()
    };
    let s = AugmentStream::new(&d, 4, cfg, 3).unwrap();
    let mut flipped = 0;
    for e in 0..3 {
        for b in s.epoch(e) {
            for (k, &i) in b.indices.iter().enumerate() {
                assert!(b.steering[k].abs() <= 0.5);
                assert!(b.steering[k] == d.steering[i] || b.steering[k] == -d.steering[i]);
                if b.steering[k] != d.steering[i] {
                    flipped += 1;
                }
            }
            assert!(b.images.data().iter().all(|v| (-0.5..=0.5).contains(v)));
        }
    }
    assert!(flipped > 0);
}

#[test]
fn stream_rejects_bad_arguments() {
    let d = dataset(3);
    assert!(AugmentStream::new(&d, 0, AugmentConfig::default(), 0).is_err());
    let empty = LoadedDataset {
        frame_ids: vec![],
        images: vec![],
        masks: None,
        steering: vec![],
    };
    assert!(AugmentStream::new(&empty, 2, AugmentConfig::default(), 0).is_err());
}

proptest! {
    #[test]
    fn batch_count_is_ceiling(n in 1usize..40, bs in 1usize..12) {
        let d = LoadedDataset {
            frame_ids: (0..n).map(|i| i.to_string()).collect(),
            images: vec![ImageU8::new(4, 4, 3); n],
            masks: None,
            steering: vec![0.0; n],
        };
        let s = AugmentStream::new(&d, bs, AugmentConfig::default(), 1).unwrap();
        let batches: Vec<Batch> = s.epoch(0).collect();
        prop_assert_eq!(batches.len(), n.div_ceil(bs));
        prop_assert_eq!(batches.iter().map(|b| b.steering.len()).sum::<usize>(), n);
    }

    #[test]
    fn shift_preserves_value_range(off in -44isize..=44, seed_ in 0u64..1000) {
        let mut rng = seed::rng(seed_);
        let d = (0..3 * 8 * 8).map(|_| rng.random::<f64>()).collect();
        let img = Tensor::from_vec(&[3, 8, 8], d).unwrap();
        let s = shift_rows(&img, off / 6);
        prop_assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
