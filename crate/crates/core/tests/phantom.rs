use proptest::prelude::*;
use spcgan::filter::gaussian_blur;
use spcgan::phantom::{
    augment, generate_phantom, load_manifest, resample, save_dataset, AugConfig, GrayImage, PairedSample,
    PhantomSpec, Split,
};
use spcgan::Error;

fn small_spec() -> PhantomSpec {
    PhantomSpec {
        canvas: [64, 64],
        lesion_radius_range: [6.0, 12.0],
        ..PhantomSpec::default()
    }
}

fn mean_where(img: &GrayImage, keep: impl Fn(usize, usize) -> bool) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for r in 0..img.height() {
        for c in 0..img.width() {
            if keep(r, c) {
                s += img.get(r, c) as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| s / n as f64)
}

/// Chebyshev distance from each pixel to the nearest mask pixel, capped.
fn ring_distance(s: &PairedSample, cap: usize) -> Vec<usize> {
    let (w, h) = (s.mask.width(), s.mask.height());
    let mut d = vec![cap + 1; w * h];
    for r in 0..h {
        for c in 0..w {
            if !s.mask.is_set(r, c) {
                continue;
            }
            for rr in r.saturating_sub(cap)..(r + cap + 1).min(h) {
                for cc in c.saturating_sub(cap)..(c + cap + 1).min(w) {
                    let k = rr.abs_diff(r).max(cc.abs_diff(c));
                    d[rr * w + cc] = d[rr * w + cc].min(k);
                }
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lesions_are_darker_than_their_surroundings(seed in any::<u64>()) {
        let s = generate_phantom(&small_spec(), seed).unwrap();
        let d = ring_distance(&s, 5);
        let w = s.image.width();
        let inside = mean_where(&s.image, |r, c| s.mask.is_set(r, c)).unwrap();
        let ring = mean_where(&s.image, |r, c| (1..=5).contains(&d[r * w + c])).unwrap();
        prop_assert!(inside < ring, "inside {inside} ring {ring}");
    }

    #[test]
    fn generation_is_pure(seed in any::<u64>()) {
        let spec = small_spec();
        prop_assert_eq!(generate_phantom(&spec, seed).unwrap(), generate_phantom(&spec, seed).unwrap());
    }

    #[test]
    fn augmentation_keeps_lesion_area(seed in any::<u64>(), aug_seed in any::<u64>()) {
        let s = generate_phantom(&small_spec(), seed).unwrap();
        let cfg = AugConfig::default();
        let a = augment(&s, &cfg, aug_seed).unwrap();
        let z = 1.0 + cfg.zoom_range;
        let ratio = a.mask.area() as f64 / s.mask.area() as f64;
        prop_assert!(ratio >= 0.85 / (z * z) && ratio <= 1.15 * z * z, "area ratio {ratio}");
        prop_assert!(a.mask.is_binarized());
    }

    #[test]
    fn resample_there_and_back(
        w in 16usize..48,
        h in 16usize..48,
        seed in any::<u64>(),
        factor in prop::sample::select(vec![0.5, 0.8, 1.25, 2.0]),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let smooth = gaussian_blur(&noise, w, h, 3.0);
        let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        let data: Vec<f32> = smooth.iter().map(|v| (0.9 * v / peak) as f32).collect();
        let img = GrayImage::new(w, h, 0.2, data).unwrap();
        let there = resample(&img, 0.2 * factor).unwrap();
        let back = resample(&there, 0.2).unwrap();
        prop_assume!(back.width() == w && back.height() == h);
        let mae = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>()
            / (w * h) as f64;
        prop_assert!(mae <= 0.05, "mae {mae}");
    }
}

#[test]
fn posterior_shadow_darkens_the_band_below_the_lesion() {
    let spec = PhantomSpec {
        shadow_probability: 1.0,
        ill_defined_edge_probability: 0.0,
        ..PhantomSpec::default()
    };
    let mut checked = 0;
    for seed in 0..24 {
        let s = generate_phantom(&spec, seed).unwrap();
        let (w, h) = (s.mask.width(), s.mask.height());
        let (mut c0, mut c1, mut r1) = (w, 0, 0);
        for r in 0..h {
            for c in 0..w {
                if s.mask.is_set(r, c) {
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                    r1 = r1.max(r);
                }
            }
        }
        let width = c1 - c0 + 1;
        let rows = (r1 + 3)..h.min(r1 + 3 + 20);
        let band = |lo: usize, hi: usize| mean_where(&s.image, |r, c| rows.contains(&r) && c >= lo && c < hi);
        let below = band(c0, c1 + 1).unwrap();
        let mut lateral = Vec::new();
        if c0 >= width {
            lateral.extend(band(c0 - width, c0));
        }
        if c1 + 1 + width <= w {
            lateral.extend(band(c1 + 1, c1 + 1 + width));
        }
        if lateral.is_empty() || rows.is_empty() {
            continue;
        }
        let side = lateral.iter().sum::<f64>() / lateral.len() as f64;
        assert!(below < side, "seed {seed}: below {below} lateral {side}");
        checked += 1;
    }
    assert!(checked >= 12, "only {checked} phantoms had room for lateral bands");
}

#[test]
fn manifest_of_forty_samples() {
    let spec = small_spec();
    let samples: Vec<_> = (0..40).map(|i| generate_phantom(&spec, 1000 + i).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let (ds, path) = save_dataset(dir.path(), Split::Train, 5, &samples).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.len(), 40);
    let mut ids = back.ids();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 40);
}

#[test]
fn missing_and_tampered_files_are_reported_by_id() {
    let spec = small_spec();
    let samples: Vec<_> = (0..3).map(|i| generate_phantom(&spec, i).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let (ds, path) = save_dataset(dir.path(), Split::Test, 0, &samples).unwrap();

    let victim = &ds.samples[1];
    std::fs::write(dir.path().join(&victim.mask), b"not a png").unwrap();
    match load_manifest(&path) {
        Err(Error::ChecksumMismatch { id, .. }) => assert_eq!(id, victim.id),
        other => panic!("expected checksum mismatch, got {other:?}"),
    }

    std::fs::remove_file(dir.path().join(&victim.image)).unwrap();
    match load_manifest(&path) {
        Err(Error::MissingFile { id, .. }) => assert_eq!(id, victim.id),
        other => panic!("expected missing file, got {other:?}"),
    }

    let text = std::fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::VersionMismatch { found: 9, .. })));
}
