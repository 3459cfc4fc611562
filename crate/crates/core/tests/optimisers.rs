mod common;

use common::*;
use ecgtune::bo::expected_improvement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ei_matches_monte_carlo() {
    assert!(ei_mc_gap(10, 400_000, 5) <= 3e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mc = ei_monte_carlo(0.0, 1.0, 0.0, 400_000, &mut rng);
    assert!((mc - expected_improvement(0.0, 1.0, 0.0)).abs() < 3e-3);
}

#[test]
fn ei_is_never_negative() {
    assert!(ei_min(20_000, 2) >= 0.0);
}

#[test]
fn bo_improves_on_its_design_and_beats_random_search() {
    let seeds = 0..5u64;
    let runs: Vec<BoRun> = seeds.clone().map(bo_on_quadratic).collect();
    let wins = runs.iter().filter(|r| r.final_best < r.design_best).count();
    assert!(wins >= 4, "{runs:?}");
    let bo_mean = runs.iter().map(|r| r.final_best).sum::<f64>() / 5.0;
    let rs_mean = seeds.map(|s| random_search_on_quadratic(s, 15)).sum::<f64>() / 5.0;
    assert!(bo_mean < rs_mean, "bo {bo_mean} vs random {rs_mean}");
}

#[test]
fn pso_reaches_the_sphere_minimum() {
    let hits = (0..5).filter(|&s| pso_on_sphere(s) <= 1e-3).count();
    assert!(hits >= 4);
}
