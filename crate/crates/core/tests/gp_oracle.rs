mod common;

use common::gp_oracle_gap;
use ecgtune::gp::{GpConfig, GpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn cholesky_posterior_matches_dense_inverse() {
    for (n, seed) in [(3, 1), (10, 2), (50, 3)] {
        let gap = gp_oracle_gap(n, seed);
        assert!(gap.mean <= 1e-8 && gap.variance <= 1e-8 && gap.lml <= 1e-8, "n={n}: {gap:?}");
    }
}

#[test]
fn fitted_hyperparameters_stay_in_bounds_and_improve_on_the_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0, ((i * 7) % 12) as f64 / 11.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (5.0 * p[0]).sin() + 0.3 * p[1]).collect();
    let cfg = GpConfig::default();
    let gp = GpModel::fit(x, &y, &cfg, &mut rng).unwrap();
    let k = gp.kernel();
    assert!((cfg.signal_variance_bounds.0..=cfg.signal_variance_bounds.1).contains(&k.signal_variance));
    assert!(k.lengthscales.iter().all(|l| (cfg.lengthscale_bounds.0..=cfg.lengthscale_bounds.1).contains(l)));
    assert!((cfg.noise_bounds.0..=cfg.noise_bounds.1).contains(&k.noise_variance));
    for t in gp.restart_traces() {
        assert!(t.final_lml >= t.start_lml);
    }
    // interpolates its own data closely
    let (m, v) = gp.posterior(&[0.0, 0.0]).unwrap();
    assert!((m - 0.0).abs() < 0.05, "{m}");
    assert!(v >= 0.0);
}
