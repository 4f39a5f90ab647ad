mod common;

use proptest::prelude::*;
use spcgan::evalstat::dice;
use spcgan::losses::{LossWeights, Regime};
use spcgan::netzoo::GeneratorConfig;
use spcgan::phantom::AugConfig;
use spcgan::trainer::{
    build_nets, generator_pass, lr_at, sample_tensors, segment, train, Checkpoint, TrainConfig, Trainer,
};

fn small(regime: Regime) -> TrainConfig {
    TrainConfig {
        regime,
        generator: GeneratorConfig::unet(8, 3),
        disc_base_width: 8,
        pixel_disc_layers: 2,
        patch_disc_layers: 2,
        epochs: 4,
        decay_start_epoch: 2,
        aug: AugConfig::identity(),
        pool_size: 3,
        val_every: 1,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn fcn_drives_pixel_loss_down_tenfold() {
    let data = common::phantoms(64, 12, 100);
    let cfg = TrainConfig {
        regime: Regime::Fcn,
        generator: GeneratorConfig::unet(32, 4),
        epochs: 200,
        decay_start_epoch: 100,
        seed: 3,
        ..TrainConfig::default()
    };
    let (ckpt, log) = train(&data, &[], &cfg).unwrap();
    let per_epoch = |e: usize| {
        let rows: Vec<f64> = log.iterations.iter().filter(|r| r.epoch == e).map(|r| r.report.pix).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    let (first, last) = (per_epoch(0), per_epoch(cfg.epochs - 1));
    assert!(first >= 10.0 * last, "pixel loss {first} -> {last}");

    let s = &data[0];
    let m = segment(&s.image, &ckpt, 0.0).unwrap();
    let d = dice(&m, &s.mask).unwrap().dsc;
    assert!(d >= 0.8, "dice on a training phantom {d}");
}

#[test]
fn spcgan_keeps_lowest_validation_loss() {
    let data = common::phantoms(32, 5, 200);
    let (train_set, val_set) = data.split_at(3);
    let cfg = small(Regime::Spcgan);
    let (ckpt, log) = train(train_set, val_set, &cfg).unwrap();
    assert_eq!(log.validations.len(), cfg.epochs);
    let best = log.validations.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(ckpt.val_loss, Some(best));
    let row = log.validations.iter().find(|r| r.val_loss == best).unwrap();
    assert_eq!(ckpt.epoch, row.epoch);
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let data = common::phantoms(32, 2, 300);
    let cfg = TrainConfig { epochs: 0, decay_start_epoch: 0, ..small(Regime::Spcgan) };
    let (ckpt, log) = train(&data, &data, &cfg).unwrap();
    assert!(log.iterations.is_empty() && log.validations.is_empty());
    let fresh = build_nets(&cfg).unwrap();
    assert_eq!(ckpt.nets.g_ab.flat_params(), fresh.g_ab.flat_params());
    assert_eq!(ckpt.epoch, 0);
}

#[test]
fn same_seed_same_run() {
    let data = common::phantoms(32, 3, 400);
    let cfg = TrainConfig { epochs: 2, decay_start_epoch: 1, aug: AugConfig::default(), ..small(Regime::GanPix) };
    let (a, la) = train(&data, &data[..1], &cfg).unwrap();
    let (b, lb) = train(&data, &data[..1], &cfg).unwrap();
    assert_eq!(a.nets.g_ab.flat_params(), b.nets.g_ab.flat_params());
    assert_eq!(la.iterations_csv(), lb.iterations_csv());
}

#[test]
fn steps_leave_the_other_side_frozen() {
    let s = &common::phantoms(32, 1, 500)[0];
    let mut t = Trainer::new(&small(Regime::Spcgan)).unwrap();
    let d_before: Vec<Vec<f32>> = t.nets().discriminators().map(|n| n.flat_params()).collect();
    let pass = t.generator_step(s, 2e-4).unwrap();
    let d_after: Vec<Vec<f32>> = t.nets().discriminators().map(|n| n.flat_params()).collect();
    assert_eq!(d_before, d_after);

    let g_before: Vec<Vec<f32>> = t.nets().generators().map(|n| n.flat_params()).collect();
    t.discriminator_step(s, pass.fake_a, pass.fake_b, 2e-4).unwrap();
    let g_after: Vec<Vec<f32>> = t.nets().generators().map(|n| n.flat_params()).collect();
    assert_eq!(g_before, g_after);
    let d_moved: Vec<Vec<f32>> = t.nets().discriminators().map(|n| n.flat_params()).collect();
    assert_ne!(d_before, d_moved);
}

#[test]
fn without_pixel_term_the_objective_is_plain_cycle_gan() {
    let s = &common::phantoms(32, 1, 600)[0];
    let nets = build_nets(&small(Regime::Spcgan)).unwrap();
    let (a, b) = sample_tensors::<f32>(s).unwrap();
    let w = LossWeights { lambda_pix: 0.0, ..LossWeights::default() };
    let r = generator_pass(&nets, &a, &b, &w, Regime::Spcgan, false).unwrap().report;
    let expected = r.adv_forward + r.adv_backward + w.lambda_cyc * r.cyc;
    assert!((r.total - expected).abs() <= 1e-6 * expected.abs().max(1.0));
}

#[test]
fn fcn_has_no_discriminators() {
    let s = &common::phantoms(32, 1, 700)[0];
    let nets = build_nets(&small(Regime::Fcn)).unwrap();
    assert_eq!(nets.discriminators().count(), 0);
    let (a, b) = sample_tensors::<f32>(s).unwrap();
    let pass = generator_pass(&nets, &a, &b, &LossWeights::default(), Regime::Fcn, true).unwrap();
    let grads = pass.grads.unwrap();
    assert!(grads.param_keys().all(|k| k.net == nets.g_ab.id()));
}

#[test]
fn pool_saturates_at_capacity() {
    let data = common::phantoms(32, 2, 800);
    let cfg = small(Regime::Spcgan);
    let mut t = Trainer::new(&cfg).unwrap();
    for i in 0..cfg.pool_size + 2 {
        t.step(&data[i % 2], 0, 2e-4).unwrap();
    }
    assert_eq!(t.pool_sizes(), (cfg.pool_size, cfg.pool_size));
}

#[test]
fn fresh_checkpoint_segments_and_roundtrips() {
    let s = &common::phantoms(32, 1, 900)[0];
    let cfg = TrainConfig { epochs: 0, decay_start_epoch: 0, ..small(Regime::GanPix) };
    let (ckpt, _) = train(std::slice::from_ref(s), &[], &cfg).unwrap();
    let m = segment(&s.image, &ckpt, 0.0).unwrap();
    assert_eq!((m.width(), m.height()), (32, 32));
    assert!(m.is_binarized());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.nets.g_ab.flat_params(), ckpt.nets.g_ab.flat_params());
    assert_eq!(back.config, ckpt.config);
}

#[test]
fn schedule_points() {
    let cfg = TrainConfig::default();
    for (e, want) in [(0, 2e-4), (750, 2e-4), (1125, 1e-4), (1500, 0.0)] {
        assert!((lr_at(e, &cfg).unwrap() - want).abs() < 1e-15, "epoch {e}");
    }
    assert!(lr_at(1501, &cfg).is_err());
}

proptest! {
    #[test]
    fn schedule_never_increases(epochs in 1usize..3000, frac in 0.0f64..=1.0, e in 0usize..3000) {
        let cfg = TrainConfig { epochs, decay_start_epoch: (frac * epochs as f64) as usize, ..TrainConfig::default() };
        let e = e % epochs;
        prop_assert!(lr_at(e + 1, &cfg).unwrap() <= lr_at(e, &cfg).unwrap());
    }
}
