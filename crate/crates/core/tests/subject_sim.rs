use neglect_core::domain::{FovPoint, SceneId, SpawnPoint, MIN_TARGET};
use neglect_core::subject_sim::{expected_time, respond, NeglectField, Profile};
use proptest::prelude::*;

fn fixture(name: &str) -> NeglectField {
    NeglectField::from_json_file(format!("{}/../../fixtures/profiles/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn spawn_at(az: f64, el: f64) -> SpawnPoint {
    SpawnPoint { id: 3, pos: FovPoint::new(az, el), scene: SceneId::Playground }
}

fn truncation_rate(field: &NeglectField, spawn: &SpawnPoint, draws: u64) -> f64 {
    (0..draws).filter(|&s| !respond(field, spawn, 30.0, s).found).count() as f64 / draws as f64
}

#[test]
fn fixtures_load() {
    assert_eq!(fixture("hemifield").profile, Profile::HemifieldSigmoid);
    assert_eq!(fixture("uniform").profile, Profile::None);
    assert_eq!(fixture("linear").profile, Profile::LinearGradient);
    assert_eq!(fixture("patchy").blobs.len(), 2);
    let bad = std::env::temp_dir().join("neglect-bad-profile.json");
    std::fs::write(&bad, r#"{"profile":"HemifieldSigmoid","severity":2.0}"#).unwrap();
    assert!(NeglectField::from_json_file(&bad).is_err());
}

#[test]
fn truncation_rate_grows_with_severity() {
    // Near the sigmoid center, where truncation is neither rare nor certain.
    let spawn = spawn_at(-8.0, 0.0);
    let mut last = 0.0;
    for severity in [0.0, 0.3, 0.6, 0.8, 0.9, 1.0] {
        let f = NeglectField { noise_cv: 0.5, ..NeglectField::hemifield(0.0, severity) };
        let rate = truncation_rate(&f, &spawn, 10_000);
        assert!(rate >= last - 0.02, "severity {severity}: {rate} after {last}");
        last = rate;
    }
    assert!(last > 0.2);
}

#[test]
fn truncation_matches_lognormal_tail() {
    // P(T >= t_max) for T = mu * LogNormal(-s^2/2, s).
    let f = NeglectField { noise_cv: 0.4, ..NeglectField::hemifield(0.0, 0.8) };
    let spawn = spawn_at(-10.0, 5.0);
    let mu = expected_time(&f, &spawn.pos, 30.0);
    let s2 = (1.0f64 + 0.16).ln();
    let z = ((30.0f64 / mu).ln() + 0.5 * s2) / s2.sqrt();
    let expected = 0.5 * erfc(z / std::f64::consts::SQRT_2);
    let rate = truncation_rate(&f, &spawn, 10_000);
    assert!((rate - expected).abs() < 0.02, "{rate} vs {expected}");
}

/// Complementary error function (Numerical Recipes erfcc, |error| < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368 + t * (0.37409196 + t * (0.09678418 + t * (-0.18628806 + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn responses_are_valid_measurements(
        az in -50.5f64..=50.5, el in -30.0f64..=30.0, severity in 0.0f64..=1.0,
        border in -30.0f64..30.0, cv in 0.0f64..1.0, seed in any::<u64>(),
    ) {
        let f = NeglectField { noise_cv: cv, ..NeglectField::hemifield(border, severity) };
        let m = respond(&f, &spawn_at(az, el), 30.0, seed);
        prop_assert!(m.y >= MIN_TARGET && m.y <= 1.0);
        if m.found {
            prop_assert!(m.raw_time_s > 0.0 && m.raw_time_s < 30.0);
            prop_assert!((m.y - (m.raw_time_s / 30.0).max(MIN_TARGET)).abs() < 1e-15);
        } else {
            prop_assert_eq!((m.raw_time_s, m.y), (30.0, 1.0));
        }
        let t = expected_time(&f, &spawn_at(az, el).pos, 30.0);
        prop_assert!((3.0..=30.0).contains(&t));
    }
}
