//! Global-best particle swarm over the unit hypercube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::space::SearchSpace;
use crate::trial::{best_trial, run_trial, trial_seed, Fitness, TrialRecord, TrialSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Per-coordinate velocity limit.
    pub max_velocity: f64,
    pub seed: u64,
    pub failure_objective: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 5,
            iterations: 3,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            max_velocity: 0.5,
            seed: 0,
            failure_objective: 1.0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 1 || self.iterations < 1 {
            return Err(config_err!("need at least one particle and one iteration"));
        }
        if !(self.max_velocity > 0.0) {
            return Err(config_err!("max velocity must be positive"));
        }
        Ok(())
    }

    pub fn evaluations(&self) -> usize {
        self.particles * self.iterations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub global_best: (Vec<f64>, f64),
    config: PsoConfig,
}

impl Swarm {
    /// Builds a swarm from explicit positions and velocities and their
    /// already-known objective values.
    pub fn from_state(
        positions: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
        objectives: &[f64],
        config: PsoConfig,
    ) -> Result<Self> {
        if positions.is_empty()
            || positions.len() != velocities.len()
            || positions.len() != objectives.len()
        {
            return Err(shape_err!("positions, velocities and objectives must align"));
        }
        let particles: Vec<Particle> = positions
            .into_iter()
            .zip(velocities)
            .zip(objectives)
            .map(|((p, v), &f)| Particle {
                best_position: p.clone(),
                position: p,
                velocity: v,
                best_objective: f,
            })
            .collect();
        let mut swarm = Self {
            global_best: (particles[0].position.clone(), f64::INFINITY),
            particles,
            config,
        };
        swarm.update_global();
        Ok(swarm)
    }

    fn update_global(&mut self) {
        for p in &self.particles {
            if p.best_objective < self.global_best.1 {
                self.global_best = (p.best_position.clone(), p.best_objective);
            }
        }
    }

    /// Moves every particle once: `v <- w v + c1 r1 (pbest - x) + c2 r2 (gbest - x)`,
    /// velocity clamped to `max_velocity`, position clamped to `[0, 1]`.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let c = &self.config;
        let gbest = self.global_best.0.clone();
        for p in &mut self.particles {
            for d in 0..p.position.len() {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = c.inertia * p.velocity[d]
                    + c.cognitive * r1 * (p.best_position[d] - p.position[d])
                    + c.social * r2 * (gbest[d] - p.position[d]);
                p.velocity[d] = v.clamp(-c.max_velocity, c.max_velocity);
                p.position[d] = (p.position[d] + p.velocity[d]).clamp(0.0, 1.0);
            }
        }
    }

    /// Records the objective of each particle's current position. Personal
    /// and global bests update in particle order after all values are in.
    pub fn observe(&mut self, objectives: &[f64]) {
        for (p, &f) in self.particles.iter_mut().zip(objectives) {
            if f < p.best_objective {
                p.best_objective = f;
                p.best_position = p.position.clone();
            }
        }
        self.update_global();
    }
}

fn random_swarm<R: Rng + ?Sized>(dim: usize, config: &PsoConfig, rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let positions: Vec<Vec<f64>> = (0..config.particles)
        .map(|_| (0..dim).map(|_| rng.random()).collect())
        .collect();
    let velocities = positions
        .iter()
        .map(|x| {
            x.iter()
                .map(|&xi| {
                    let target: f64 = rng.random();
                    (0.5 * (target - xi)).clamp(-config.max_velocity, config.max_velocity)
                })
                .collect()
        })
        .collect();
    (positions, velocities)
}

/// Minimises `f` over `[0, 1]^dim`; returns the best point, its value and
/// the global-best value after each iteration.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    dim: usize,
    config: &PsoConfig,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (positions, velocities) = random_swarm(dim, config, &mut rng);
    let values: Vec<f64> = positions.iter().map(|x| f(x)).collect();
    let mut swarm = Swarm::from_state(positions, velocities, &values, config.clone())?;
    let mut curve = vec![swarm.global_best.1];
    for _ in 1..config.iterations {
        swarm.advance(&mut rng);
        let values: Vec<f64> = swarm.particles.iter().map(|p| f(&p.position)).collect();
        swarm.observe(&values);
        curve.push(swarm.global_best.1);
    }
    Ok((swarm.global_best.0, swarm.global_best.1, curve))
}

#[derive(Debug, Clone)]
pub struct PsoResult {
    pub best: TrialRecord,
    pub log: Vec<TrialRecord>,
}

/// Swarm search over the hyperparameter space. Trial `t * particles + p`
/// is particle `p` at iteration `t`; total evaluations are
/// `particles * iterations`. Trials listed in `resume` are reused instead of
/// re-evaluated.
pub fn pso_optimise(
    fitness: &mut dyn Fitness,
    space: &SearchSpace,
    config: &PsoConfig,
    resume: Vec<TrialRecord>,
    on_trial: &mut dyn FnMut(&TrialRecord) -> Result<()>,
) -> Result<PsoResult> {
    config.validate()?;
    space.validate()?;
    if resume.len() > config.evaluations() {
        return Err(crate::Error::State(format!(
            "log already holds {} trials, budget is {}",
            resume.len(),
            config.evaluations()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (positions, velocities) = random_swarm(space.dim(), config, &mut rng);
    let mut log = resume;
    let mut swarm: Option<Swarm> = None;

    let mut evaluate = |log: &mut Vec<TrialRecord>, index: usize, u: &[f64]| -> Result<f64> {
        let h = space.decode(u)?;
        if let Some(r) = log.get(index) {
            if r.unit_point != u || r.seed != trial_seed(config.seed, index) {
                return Err(crate::Error::State(format!(
                    "trial {index} in the existing log does not match this configuration"
                )));
            }
            return Ok(r.objective);
        }
        let record = run_trial(fitness, index, TrialSource::Pso, h, u.to_vec(), trial_seed(config.seed, index), config.failure_objective);
        on_trial(&record)?;
        let objective = record.objective;
        log.push(record);
        Ok(objective)
    };

    for t in 0..config.iterations {
        let points: Vec<Vec<f64>> = match &mut swarm {
            None => positions.clone(),
            Some(s) => {
                s.advance(&mut rng);
                s.particles.iter().map(|p| p.position.clone()).collect()
            }
        };
        let values: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(p, u)| evaluate(&mut log, t * config.particles + p, u))
            .collect::<Result<_>>()?;
        match &mut swarm {
            None => {
                swarm = Some(Swarm::from_state(
                    positions.clone(),
                    velocities.clone(),
                    &values,
                    config.clone(),
                )?)
            }
            Some(s) => s.observe(&values),
        }
    }
    let best = best_trial(&log).cloned().expect("at least one evaluation");
    Ok(PsoResult { best, log })
}
