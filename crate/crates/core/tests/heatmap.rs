use std::path::PathBuf;

use neglect_core::domain::{FovBounds, FovPoint};
use neglect_core::gp::{FitOptions, GpModel, Hyperparams};
use neglect_core::heatmap::{default_mask_threshold, evaluate_grid, mean_color, render, Which, BLACK, WHITE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn small_model() -> GpModel {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join("models/small.json")).unwrap()).unwrap()
}

/// Compares against a stored golden; `UPDATE_GOLDENS=1` rewrites it.
fn check_golden(name: &str, bytes: &[u8]) {
    let path = fixtures().join("goldens").join(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::write(&path, bytes).unwrap();
    }
    let golden = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(golden == bytes, "{name} differs from golden");
}

#[test]
fn ppm_goldens() {
    let m = small_model();
    let h = evaluate_grid(&m, &FovBounds::FULL, 31, 19, default_mask_threshold(&m)).unwrap();
    let mean = render(&h, Which::Mean);
    let sigma = render(&h, Which::TwoSigma);
    check_golden("small_mean.ppm", &mean.to_ppm());
    check_golden("small_two_sigma.ppm", &sigma.to_ppm());
    check_golden("small.csv", h.to_csv().as_bytes());

    // The golden must actually show every palette case.
    let px: Vec<[u8; 3]> = mean.rgb.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    assert!(px.contains(&WHITE), "unmeasured corner should be masked");
    assert!(px.contains(&BLACK), "not-found region should be black");
    assert!(px.iter().any(|p| p[1] > 200 && p[0] < 40), "fast region should be green");
    // The unmeasured top-right cell is white, the slow left side black.
    let px = mean.width / 31;
    assert_eq!(mean.pixel(mean.width - 1, 0), WHITE);
    assert_eq!(mean.pixel(2 * px + px / 2, mean.height / 2), BLACK);
}

#[test]
fn rendering_is_pure() {
    let m = small_model();
    let h = evaluate_grid(&m, &FovBounds::FULL, 31, 19, 0.3).unwrap();
    assert_eq!(render(&h, Which::Mean).to_ppm(), render(&h.clone(), Which::Mean).to_ppm());
    assert_eq!(render(&h, Which::TwoSigma).to_png().unwrap(), render(&h, Which::TwoSigma).to_png().unwrap());
}

#[test]
fn cell_at_training_point_matches_target() {
    // Put noise-free data exactly on cell centers of a 31x19 grid.
    let h0 = evaluate_grid(&GpModel::prior(Hyperparams::new(0.1, 10.0, 0.01).unwrap(), 0.0).unwrap(), &FovBounds::FULL, 31, 19, 1.0).unwrap();
    let cells = [(3, 4), (9, 15), (15, 27)];
    let x: Vec<FovPoint> = cells.iter().map(|&(r, c)| { let (a, e) = h0.cell_center(r, c); FovPoint::new(a, e) }).collect();
    let y = [0.2, 0.7, 0.45];
    let m = GpModel::with_hyperparams(x, &y, Hyperparams::new(0.2, 8.0, 1e-9).unwrap()).unwrap();
    let h = evaluate_grid(&m, &FovBounds::FULL, 31, 19, 1.0).unwrap();
    for (&(r, c), &target) in cells.iter().zip(&y) {
        assert!((h.mean[h.index(r, c)] - target).abs() < 1e-3);
    }
}

#[test]
fn masked_cells_are_white_whatever_the_mean() {
    for mean in [0.0, 0.5, 0.97, 1.0, 1.4, -0.2] {
        assert_eq!(mean_color(mean, true), WHITE);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mask_and_envelope(seed in any::<u64>(), n in 3usize..25, thr in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<FovPoint> = (0..n).map(|_| FovPoint::new(rng.random_range(-50.0..50.0), rng.random_range(-30.0..30.0))).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..=1.0)).collect();
        let m = GpModel::fit(x, &y, &FitOptions::with_seed(seed)).unwrap();
        let h = evaluate_grid(&m, &FovBounds::FULL, 13, 7, thr).unwrap();
        let sf = m.theta().sigma_f2.sqrt();
        for i in 0..h.len() {
            prop_assert_eq!(h.mask[i], h.two_sigma[i] > thr);
            prop_assert!((h.mean[i] - m.y_mean()).abs() <= 3.0 * sf + 1e-9);
        }
    }
}
