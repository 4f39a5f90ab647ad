mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spcgan::netzoo::{
    build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig, Network, INIT_STD,
};
use spcgan::tensor::autograd::Tape;
use spcgan::tensor::Tensor;
use spcgan::Error;

fn random_input(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_grid(h, w, (0..h * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

/// `mean((net(x) - 0.3)^2)` and its gradient for parameter `(tensor, offset)`.
fn functional(net: &Network<f64>, x: &Tensor<f64>, probe: Option<(usize, usize)>) -> (f64, f64) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = net.forward_on(&mut tape, xv, true).unwrap();
    let loss = tape.mean_sq_to(y, 0.3);
    let value = tape.value(loss).item();
    let grad = probe.map_or(0.0, |(t, o)| {
        let g = tape.backward(loss).unwrap();
        g.param(net.key(t)).map_or(0.0, |g| g.data()[o])
    });
    (value, grad)
}

fn fd_agreement(mut net: Network<f64>, x: &Tensor<f64>, samples: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = net.named_params().map(|(_, t)| t.len()).collect();
    let h = 1e-5;
    let mut ok = 0;
    for _ in 0..samples {
        let t = rng.random_range(0..sizes.len());
        let o = rng.random_range(0..sizes[t]);
        let (_, analytic) = functional(&net, x, Some((t, o)));
        let bump = |net: &mut Network<f64>, d: f64| {
            net.params_mut().nth(t).unwrap().1.data_mut()[o] += d;
        };
        bump(&mut net, h);
        let up = functional(&net, x, None).0;
        bump(&mut net, -2.0 * h);
        let down = functional(&net, x, None).0;
        bump(&mut net, h);
        if common::rel_err(analytic, (up - down) / (2.0 * h)) <= 1e-2 {
            ok += 1;
        }
    }
    (ok, samples)
}

#[test]
fn initialization_statistics() {
    let net: Network<f32> = build_generator(&GeneratorConfig::unet(32, 4), 3).unwrap();
    let (w, b) = net.weights_and_biases();
    let n = w.len() as f64;
    assert!(n >= 1e5, "only {n} weights");
    let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * INIT_STD / n.sqrt(), "mean {mean}");
    assert!((0.019..=0.021).contains(&std), "std {std}");
    assert!(!b.is_empty() && b.iter().all(|&v| v == 0.0));
}

#[test]
fn generators_keep_shape_and_range() {
    for cfg in [GeneratorConfig::resnet9(8), GeneratorConfig::unet(8, 4)] {
        let net: Network<f64> = build_generator(&cfg, 1).unwrap();
        let y = net.forward(&random_input(64, 64, 2)).unwrap();
        assert_eq!(y.shape(), [1, 1, 64, 64]);
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        let z = net.forward(&Tensor::zeros([1, 1, 64, 64])).unwrap();
        assert!(z.all_finite() && z.max_abs() <= 1.0);
    }
}

#[test]
fn divisibility_is_enforced_at_forward_time() {
    let unet: Network<f32> = build_generator(&GeneratorConfig::unet(4, 4), 0).unwrap();
    assert!(matches!(unet.forward(&Tensor::zeros([1, 1, 40, 40])), Err(Error::Shape(_))));
    assert!(unet.forward(&Tensor::zeros([1, 1, 48, 48])).is_ok());
    let res: Network<f32> = build_generator(&GeneratorConfig::resnet9(4), 0).unwrap();
    assert!(matches!(res.forward(&Tensor::zeros([1, 1, 30, 32])), Err(Error::Shape(_))));
}

#[test]
fn discriminator_output_extents() {
    let x = random_input(64, 64, 5);
    let pix: Network<f64> = build_discriminator(&DiscriminatorConfig::pixelwise(8), 1).unwrap();
    assert_eq!(pix.forward(&x).unwrap().shape(), [1, 1, 64, 64]);
    let patch: Network<f64> = build_discriminator(&DiscriminatorConfig::patch(8), 1).unwrap();
    let [_, _, h, w] = patch.forward(&x).unwrap().shape();
    assert!(h < 64 && w < 64 && h > 0 && w > 0);
}

#[test]
fn same_seed_same_weights() {
    let cfg = GeneratorConfig::resnet9(8);
    let a: Network<f32> = build_generator(&cfg, 9).unwrap();
    let b: Network<f32> = build_generator(&cfg, 9).unwrap();
    assert_eq!(a.flat_params(), b.flat_params());
    assert_ne!(a.id(), b.id());
    let d = DiscriminatorConfig::patch(8);
    let c: Network<f32> = build_discriminator(&d, 4).unwrap();
    let e: Network<f32> = build_discriminator(&d, 4).unwrap();
    assert_eq!(c.flat_params(), e.flat_params());
}

#[test]
fn networks_are_not_linear() {
    let net: Network<f64> = build_generator(&GeneratorConfig::unet(8, 2), 4).unwrap();
    let x = random_input(16, 16, 6);
    let y1 = net.forward(&x).unwrap();
    let y2 = net.forward(&x.map(|v| 2.0 * v)).unwrap();
    let gap = y1.data().iter().zip(y2.data()).map(|(a, b)| (2.0 * a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-9);
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let x = random_input(16, 16, 7);
    let nets: Vec<Network<f64>> = vec![
        build_generator(&GeneratorConfig::resnet9(4), 1).unwrap(),
        build_generator(&GeneratorConfig::unet(4, 3), 2).unwrap(),
        build_discriminator(&DiscriminatorConfig::pixelwise(4), 3).unwrap(),
        build_discriminator(
            &DiscriminatorConfig {
                n_layers: 2,
                ..DiscriminatorConfig::patch(4)
            },
            4,
        )
        .unwrap(),
    ];
    for (i, mut net) in nets.into_iter().enumerate() {
        // larger weights keep activations away from the flat region of tanh
        for (_, t) in net.params_mut() {
            for v in t.data_mut() {
                *v *= 10.0;
            }
        }
        let (ok, n) = fd_agreement(net, &x, 40, 10 + i as u64);
        assert!(ok as f64 >= 0.95 * n as f64, "net {i}: {ok}/{n} agree");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn unet_output_matches_input_dims(hq in 1usize..6, wq in 1usize..6, seed in any::<u64>()) {
        let net: Network<f32> = build_generator(&GeneratorConfig::unet(4, 2), seed).unwrap();
        let (h, w) = (4 * hq, 4 * wq);
        let y = net.forward(&Tensor::zeros([1, 1, h, w])).unwrap();
        prop_assert_eq!(y.shape(), [1, 1, h, w]);
        prop_assert!(y.all_finite());
    }
}
