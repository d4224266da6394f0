use deskbc::nn::gradcheck::{check_gradients, relative_error};
use deskbc::nn::*;
use deskbc::seed;
use rand::Rng as _;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seed::rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks parameter and input gradients of `layer` under the probe loss
/// `<layer(x), r>`.
fn check_layer<L: Layer>(mut layer: L, x: Tensor) {
    let y = layer.forward(&x, Mode::Train).unwrap();
    let r = random(y.shape(), 99);

    let report = check_gradients(
        &mut layer,
        |m, bw| {
            let y = m.forward(&x, Mode::Train).unwrap();
            if bw {
                m.backward(&r);
            }
            dot(&y, &r)
        },
        20,
        1e-5,
        3,
    );
    assert!(report.max_rel_err() < 1e-5, "{:?}", report.checks);

    layer.zero_grad();
    layer.forward(&x, Mode::Train).unwrap();
    let dx = layer.backward(&r);
    let mut rng = seed::rng(5);
    for _ in 0..10 {
        let i = rng.random_range(0..x.len());
        let h = 1e-5;
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let lp = dot(&layer.forward(&xp, Mode::Train).unwrap(), &r);
        let lm = dot(&layer.forward(&xm, Mode::Train).unwrap(), &r);
        let fd = (lp - lm) / (2.0 * h);
        assert!(
            relative_error(dx.data()[i], fd, 1e-7) < 1e-5,
            "input {i}: {} vs {fd}",
            dx.data()[i]
        );
    }
}

#[test]
fn conv_gradients() {
    let mut rng = seed::rng(1);
    check_layer(Conv2d::new(2, 3, 3, 2, 1, &mut rng), random(&[2, 2, 7, 6], 10));
    check_layer(Conv2d::new(3, 4, 1, 1, 0, &mut rng), random(&[2, 3, 4, 4], 11));
}

#[test]
fn conv_transpose_gradients() {
    let mut rng = seed::rng(2);
    check_layer(ConvTranspose2d::new(3, 2, 4, 4, 0, &mut rng), random(&[2, 3, 3, 3], 12));
    check_layer(ConvTranspose2d::new(2, 2, 3, 1, 1, &mut rng), random(&[1, 2, 5, 5], 13));
}

#[test]
fn linear_gradients() {
    let mut rng = seed::rng(3);
    check_layer(Linear::new(5, 4, &mut rng), random(&[3, 2, 5], 14));
}

#[test]
fn norm_gradients() {
    check_layer(BatchNorm2d::new(3), random(&[4, 3, 3, 2], 15));
    check_layer(LayerNorm::new(6), random(&[2, 3, 6], 16));
}

#[test]
fn activation_gradients() {
    for kind in [ActKind::Elu, ActKind::Gelu, ActKind::Sigmoid, ActKind::Relu] {
        check_layer(Activation::new(kind), random(&[2, 3, 4, 4], 17));
    }
}

#[test]
fn pooling_gradients() {
    check_layer(MaxPool2::new(), random(&[2, 2, 6, 6], 18));
    check_layer(AvgPool::new(2), random(&[2, 2, 6, 6], 19));
    check_layer(Upsample::new(3), random(&[2, 2, 2, 3], 20));
}

#[test]
fn attention_gradients() {
    let mut rng = seed::rng(4);
    check_layer(MultiHeadAttention::new(8, 2, &mut rng), random(&[2, 5, 8], 21));
}

#[test]
fn sequential_gradients() {
    let mut rng = seed::rng(6);
    let net = Sequential::new(vec![
        Module::Conv(Conv2d::new(2, 4, 3, 1, 1, &mut rng)),
        Module::act(ActKind::Elu),
        Module::BatchNorm(BatchNorm2d::new(4)),
        Module::MaxPool(MaxPool2::new()),
        Module::Upsample(Upsample::new(2)),
        Module::ConvT(ConvTranspose2d::new(4, 1, 1, 1, 0, &mut rng)),
        Module::act(ActKind::Sigmoid),
    ]);
    check_layer(net, random(&[3, 2, 4, 4], 22));
}

#[test]
fn dropout_eval_is_identity_and_train_rescales() {
    let x = Tensor::full(&[1000], 1.0);
    let mut d = Dropout::new(0.3, 7);
    assert_eq!(d.forward(&x, Mode::Eval).unwrap().data(), x.data());
    let y = d.forward(&x, Mode::Train).unwrap();
    let kept = y.data().iter().filter(|v| **v > 0.0).count();
    assert!((600..800).contains(&kept));
    for v in y.data() {
        assert!(*v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut bn = BatchNorm2d::new(1);
    let x = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
    bn.forward(&x, Mode::Train).unwrap();
    // running mean 0.9*0 + 0.1*2, running var 0.9*1 + 0.1*1
    assert!((bn.running_mean.value.data()[0] - 0.2).abs() < 1e-12);
    assert!((bn.running_var.value.data()[0] - 1.0).abs() < 1e-12);
    let y = bn.forward(&x, Mode::Eval).unwrap();
    assert!((y.data()[0] - 0.8 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
}
