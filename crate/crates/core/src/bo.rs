//! Bayesian optimisation: expected improvement over a GP surrogate and the
//! sequential evaluate / fit / propose loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::gp::{GpConfig, GpModel};
use crate::space::{HyperParams, SearchSpace};
use crate::trial::{
    best_trial, derive_seed, run_trial, trial_seed, Fitness, SurrogateFit, TrialRecord, TrialSource,
};

const DESIGN_STREAM: u64 = 0x5eed_0001;
const PROPOSAL_STREAM: u64 = 0x5eed_0002;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a Gaussian prediction. Falls back
/// to the deterministic improvement `max(0, best - mean)` when the standard
/// deviation is below `1e-12`.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gain = best - mean;
    if sigma < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub budget: usize,
    pub initial_design_size: usize,
    pub acquisition_restarts: usize,
    pub candidates: usize,
    pub seed: u64,
    /// Objective recorded for trials whose fitness call fails.
    pub failure_objective: f64,
    pub gp: GpConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 15,
            initial_design_size: 5,
            acquisition_restarts: 8,
            candidates: 2048,
            seed: 0,
            failure_objective: 1.0,
            gp: GpConfig::default(),
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design_size < 2 || self.budget < self.initial_design_size {
            return Err(config_err!(
                "need budget >= initial_design_size >= 2 (got {} and {})",
                self.budget,
                self.initial_design_size
            ));
        }
        if self.candidates == 0 {
            return Err(config_err!("need at least one acquisition candidate"));
        }
        Ok(())
    }
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = f64::from(base);
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % u64::from(base)) as f64 * inv;
        i /= u64::from(base);
        inv /= b;
    }
    out
}

/// Halton points with a random Cranley-Patterson shift.
fn shifted_halton<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if dim > PRIMES.len() {
        return Err(shape_err!("at most {} dimensions supported", PRIMES.len()));
    }
    let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    Ok((1..=n as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect())
}

/// Best observed target of the fitted model, in original units.
fn best_observed(gp: &GpModel) -> f64 {
    let (mean, scale) = gp.target_transform();
    gp.standardized_targets()
        .iter()
        .map(|v| mean + scale * v)
        .fold(f64::INFINITY, f64::min)
}

fn acquisition(gp: &GpModel, x: &[f64], best: f64) -> Result<(f64, f64)> {
    let (m, v) = gp.posterior(x)?;
    Ok((expected_improvement(m, v, best), v))
}

/// Maximises expected improvement over the unit cube: a sweep of
/// `candidates` shifted Halton points, then coordinate-wise refinement of the
/// `restarts` best. If EI vanishes everywhere the highest-variance candidate
/// is returned instead.
pub fn propose_next<R: Rng + ?Sized>(
    gp: &GpModel,
    restarts: usize,
    candidates: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dim = gp.points().first().map_or(0, Vec::len);
    let best = best_observed(gp);
    let pool = shifted_halton(candidates.max(1), dim, rng)?;
    let scored: Vec<(f64, f64)> = pool
        .iter()
        .map(|x| acquisition(gp, x, best))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));

    let mut best_point = pool[order[0]].clone();
    let mut best_ei = scored[order[0]].0;
    for &start in order.iter().take(restarts) {
        let (x, ei) = refine(gp, pool[start].clone(), scored[start].0, best)?;
        if ei > best_ei {
            best_ei = ei;
            best_point = x;
        }
    }
    if best_ei > 0.0 {
        return Ok(best_point);
    }
    let widest = (0..pool.len())
        .fold(0, |w, i| if scored[i].1 > scored[w].1 { i } else { w });
    Ok(pool[widest].clone())
}

fn refine(gp: &GpModel, mut x: Vec<f64>, mut ei: f64, best: f64) -> Result<(Vec<f64>, f64)> {
    let mut step = 0.1;
    while step >= 1e-4 {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[d] = (cand[d] + dir * step).clamp(0.0, 1.0);
                if cand[d] == x[d] {
                    continue;
                }
                let (e, _) = acquisition(gp, &cand, best)?;
                if e > ei {
                    x = cand;
                    ei = e;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((x, ei))
}

/// The initial design: the default point (if any) as trial 0, then Latin
/// hypercube points filling the rest of `initial_design_size`.
pub fn initial_design(
    space: &SearchSpace,
    config: &BoConfig,
    default_point: Option<&HyperParams>,
) -> Result<Vec<(TrialSource, HyperParams, Vec<f64>)>> {
    let mut design = Vec::with_capacity(config.initial_design_size);
    if let Some(h) = default_point {
        design.push((TrialSource::Default, *h, space.encode(h)?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DESIGN_STREAM));
    let remaining = config.initial_design_size - design.len();
    for u in space.sample(remaining, &mut rng) {
        design.push((TrialSource::InitialDesign, space.decode(&u)?, u));
    }
    Ok(design)
}

#[derive(Debug, Clone)]
pub struct OptimiseResult {
    pub best: TrialRecord,
    pub log: Vec<TrialRecord>,
}

/// Runs the budgeted loop. `resume` holds trials already completed by an
/// earlier run with the same configuration; they are checked against the
/// regenerated design and not re-evaluated. `on_trial` sees every new record
/// as soon as it exists.
pub fn optimise(
    fitness: &mut dyn Fitness,
    space: &SearchSpace,
    config: &BoConfig,
    default_point: Option<&HyperParams>,
    resume: Vec<TrialRecord>,
    on_trial: &mut dyn FnMut(&TrialRecord) -> Result<()>,
) -> Result<OptimiseResult> {
    config.validate()?;
    space.validate()?;
    let design = initial_design(space, config, default_point)?;
    if resume.len() > config.budget {
        return Err(Error::State(format!(
            "log already holds {} trials, budget is {}",
            resume.len(),
            config.budget
        )));
    }
    for (r, (source, h, _)) in resume.iter().zip(&design) {
        if r.source != *source || r.hyper_params != *h || r.seed != trial_seed(config.seed, r.index) {
            return Err(Error::State(format!(
                "trial {} in the existing log does not match this configuration",
                r.index
            )));
        }
    }

    let mut log = resume;
    while log.len() < config.budget {
        let index = log.len();
        let seed = trial_seed(config.seed, index);
        let record = if let Some((source, h, u)) = design.get(index) {
            run_trial(fitness, index, *source, *h, u.clone(), seed, config.failure_objective)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed ^ PROPOSAL_STREAM,
                index as u64,
            ));
            let x: Vec<Vec<f64>> = log
                .iter()
                .map(|t| space.encode(&t.hyper_params))
                .collect::<Result<_>>()?;
            let y: Vec<f64> = log.iter().map(|t| t.objective).collect();
            let gp = GpModel::fit(x, &y, &config.gp, &mut rng)?;
            let u = propose_next(&gp, config.acquisition_restarts, config.candidates, &mut rng)?;
            let h = space.decode(&u)?;
            let mut r = run_trial(fitness, index, TrialSource::Acquisition, h, u, seed, config.failure_objective);
            r.surrogate = Some(SurrogateFit {
                kernel: gp.kernel().clone(),
                log_marginal_likelihood: gp.log_marginal_likelihood(),
                jitter: gp.jitter(),
            });
            r
        };
        on_trial(&record)?;
        log.push(record);
    }
    let best = best_trial(&log).cloned().expect("budget >= 2");
    Ok(OptimiseResult { best, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Kernel;
    use crate::trial::{best_so_far, Evaluation};

    #[test]
    fn ei_closed_form_points() {
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.3);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5), 0.0);
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!(expected_improvement(10.0, 1.0, 0.0) < 1e-20);
        let best = 0.4;
        let mean = 0.1;
        assert!((expected_improvement(mean, 1e-26, best) - 0.3).abs() <= 1e-9);
    }

    #[test]
    fn halton_is_in_unit_cube_and_seeded() {
        let a = shifted_halton(64, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = shifted_halton(64, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    fn space_1d_gp(x: Vec<Vec<f64>>, y: &[f64]) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        GpModel::fit(x, y, &GpConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn proposal_on_quadratic_lands_near_minimum() {
        let xs = [0.0, 0.15, 0.45, 0.6, 0.75, 0.9, 1.0, 0.05];
        let pts: Vec<Vec<f64>> = xs.iter().map(|&u| vec![u]).collect();
        let y: Vec<f64> = xs.iter().map(|u| (u - 0.3f64).powi(2)).collect();
        let gp = space_1d_gp(pts, &y);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = propose_next(&gp, 8, 2048, &mut rng).unwrap();
        assert!((u[0] - 0.3).abs() < 0.1, "proposal {u:?}");
    }

    #[test]
    fn identical_targets_drive_exploration() {
        let cluster: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.05 + 0.01 * i as f64, 0.05, 0.1, 0.05, 0.08])
            .collect();
        let gp = GpModel::with_kernel(
            cluster.clone(),
            &[0.3; 6],
            Kernel {
                signal_variance: 1.0,
                lengthscales: vec![0.3; 5],
                noise_variance: 1e-6,
            },
            &GpConfig::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = propose_next(&gp, 8, 2048, &mut rng).unwrap();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let nearest = cluster.iter().map(|c| dist(c, &u)).fold(f64::INFINITY, f64::min);
        let mut pairwise: Vec<f64> = Vec::new();
        for i in 0..cluster.len() {
            for j in i + 1..cluster.len() {
                pairwise.push(dist(&cluster[i], &cluster[j]));
            }
        }
        pairwise.sort_by(f64::total_cmp);
        assert!(nearest > pairwise[pairwise.len() / 2]);
        let again = propose_next(&gp, 8, 2048, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(u, again);
    }

    fn quadratic(h: &HyperParams, _seed: u64) -> Result<Evaluation> {
        let u = SearchSpace::default().encode(h)?;
        let c = [0.3, 0.6, 0.4, 0.7, 0.25];
        Ok(Evaluation::objective(
            u.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum(),
        ))
    }

    #[test]
    fn degenerate_budget_is_pure_design() {
        let config = BoConfig {
            budget: 5,
            seed: 3,
            ..BoConfig::default()
        };
        let mut f = quadratic;
        let res = optimise(&mut f, &SearchSpace::default(), &config, Some(&HyperParams::LEVEL_ONE_DEFAULT), vec![], &mut |_| Ok(())).unwrap();
        assert_eq!(res.log.len(), 5);
        assert_eq!(res.log[0].source, TrialSource::Default);
        assert!(res.log[1..].iter().all(|t| t.source == TrialSource::InitialDesign));
        let min = res.log.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(res.best.objective, min);
    }

    #[test]
    fn loop_is_monotone_deterministic_and_resumable() {
        let space = SearchSpace::default();
        let config = BoConfig {
            budget: 9,
            seed: 11,
            candidates: 512,
            ..BoConfig::default()
        };
        let run = |resume: Vec<TrialRecord>| {
            let mut f = quadratic;
            optimise(&mut f, &space, &config, Some(&HyperParams::LEVEL_ONE_DEFAULT), resume, &mut |_| Ok(())).unwrap()
        };
        let a = run(vec![]);
        let b = run(vec![]);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 9);
        let curve = best_so_far(&a.log);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        for t in &a.log {
            space.decode(&t.unit_point).unwrap().validate(&space).unwrap();
        }
        let resumed = run(a.log[..7].to_vec());
        assert_eq!(resumed.log, a.log);

        let mut tampered = a.log[..3].to_vec();
        tampered[1].seed ^= 1;
        let mut f = quadratic;
        assert!(optimise(&mut f, &space, &config, Some(&HyperParams::LEVEL_ONE_DEFAULT), tampered, &mut |_| Ok(())).is_err());
    }

    #[test]
    fn failing_fitness_is_recorded_not_fatal() {
        let mut calls = 0;
        let mut f = |h: &HyperParams, s: u64| {
            calls += 1;
            if calls == 2 {
                Err(Error::Training {
                    epoch: 1,
                    reason: "nan".into(),
                })
            } else {
                quadratic(h, s)
            }
        };
        let config = BoConfig {
            budget: 6,
            candidates: 256,
            ..BoConfig::default()
        };
        let res = optimise(&mut f, &SearchSpace::default(), &config, None, vec![], &mut |_| Ok(())).unwrap();
        assert_eq!(res.log[1].objective, 1.0);
        assert!(res.log[1].failure.is_some());
        assert_eq!(res.log.len(), 6);
    }

    #[test]
    fn rejects_bad_budget() {
        let config = BoConfig {
            budget: 3,
            ..BoConfig::default()
        };
        let mut f = quadratic;
        assert!(matches!(
            optimise(&mut f, &SearchSpace::default(), &config, None, vec![], &mut |_| Ok(())),
            Err(Error::Config(_))
        ));
    }
}
