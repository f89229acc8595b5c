use ptywm::data::shapes::{MAX_COVERAGE, MIN_COVERAGE};
use ptywm::data::{gen_shapescape, ShapeScapeConfig};
use ptywm::models::TargetArch;
use ptywm::ptynet::{build_ptynet, PtyNetConfig};
use ptywm::trigger::{make_key, make_verification_set, KeyConfig, StrategyKind};

fn small() -> ShapeScapeConfig {
    ShapeScapeConfig {
        n_train: 400,
        n_test: 200,
        ..Default::default()
    }
}

#[test]
fn every_mask_covers_five_to_fifty_percent() {
    let (train, test) = gen_shapescape(&small(), 11).unwrap();
    for s in train.samples.iter().chain(&test.samples) {
        let m = s.mask.as_ref().expect("generated samples carry masks");
        let on = m.data().iter().filter(|&&v| v > 0.5).count() as f64 / m.data().len() as f64;
        assert!((MIN_COVERAGE..=MAX_COVERAGE).contains(&on), "coverage {on}");
    }
}

#[test]
fn verification_images_differ_from_sources_on_most_pixels() {
    let (_, test) = gen_shapescape(&small(), 12).unwrap();
    for kind in [StrategyKind::Fixed, StrategyKind::Search, StrategyKind::Generated] {
        let key = make_key(&KeyConfig::new(kind, 13), None).unwrap();
        let vset = make_verification_set(&test, &key, 100, 14).unwrap();
        for item in &vset.items {
            let src = &test.samples[item.source].image;
            let frac = item.image.differing_pixels(src) as f64 / (src.height() * src.width()) as f64;
            assert!(frac >= 0.3, "{}: only {frac} of pixels differ", kind.name());
        }
    }
}

#[test]
fn watermark_net_is_smaller_than_every_target() {
    for w in 1..=4 {
        let pty = build_ptynet(&PtyNetConfig::new(w, 0)).unwrap().param_count();
        for arch in TargetArch::ALL {
            let target = arch.build(32, 32, 8, 0).unwrap().param_count();
            assert!(pty < target, "w={w}: {pty} >= {} ({})", target, arch.name());
        }
    }
}
