//! Particle swarm optimization with a state-based adaptive velocity limit.
//!
//! Every iteration measures how isolated the swarm's best particle is
//! relative to the others (the evolutionary factor `f_e`) and maps it through
//! a logistic curve onto a per-dimension velocity cap. An isolated leader
//! widens the cap for exploration; a crowded one narrows it for local
//! refinement. The objective is maximized.
//!
//! Random numbers are consumed in a fixed order: initialization draws
//! positions then velocities per particle (dimension ascending), and each
//! velocity update draws `r1`, `r2` per dimension, particles ascending.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub population: usize,
    pub iterations: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub omega_start: f64,
    pub omega_end: f64,
    /// Per-dimension `[lo, hi]` box.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            population: 10,
            iterations: 50,
            v_min: 0.05,
            v_max: 0.2,
            c1: 2.05,
            c2: 2.05,
            omega_start: 0.9,
            omega_end: 0.1,
            bounds: vec![(0.0, 1.0), (0.0, 1.0)],
            seed: 42,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config(format!(
                "population must be >= 2, got {}",
                self.population
            )));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(0.0 < self.v_min && self.v_min < self.v_max && self.v_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < v_min < v_max < 1, got v_min = {}, v_max = {}",
                self.v_min, self.v_max
            )));
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err(Error::Config(format!(
                "c1 and c2 must be >= 0, got {} and {}",
                self.c1, self.c2
            )));
        }
        if !(self.omega_start.is_finite() && self.omega_end.is_finite()) {
            return Err(Error::Config("omega_start and omega_end must be finite".into()));
        }
        if self.bounds.is_empty() {
            return Err(Error::Config("bounds must have at least one dimension".into()));
        }
        for (k, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "bounds for dimension {k} must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dimensions(&self) -> usize {
        self.bounds.len()
    }

    /// Width of the search box along dimension `k`.
    pub fn x_max(&self, k: usize) -> f64 {
        let (lo, hi) = self.bounds[k];
        hi - lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub position: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best: Incumbent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub global_best: Incumbent,
    /// Completed iterations.
    pub iteration: usize,
    pub velocity_limit: Vec<f64>,
}

impl SwarmState {
    /// Index of the particle holding the best personal best; ties go to the
    /// lowest index.
    pub fn leader(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            if p.best.value > self.particles[best].best.value {
                best = i;
            }
        }
        best
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance from particle `i` to every other particle.
pub fn mean_distance(i: usize, swarm: &SwarmState) -> Result<f64> {
    let n = swarm.particles.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "mean distance needs at least 2 particles, swarm has {n}"
        )));
    }
    let here = &swarm.particles[i].position;
    let total: f64 = swarm
        .particles
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| distance(here, &p.position))
        .sum();
    Ok(total / (n - 1) as f64)
}

/// `(d_leader − d_min) / (d_max − d_min)`, or 0 when every distance is equal.
pub fn isolation(distances: &[f64], leader: usize) -> f64 {
    let (lo, hi) = distances
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if hi <= lo {
        return 0.0;
    }
    ((distances[leader] - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Evolutionary factor of the swarm in `[0, 1]`.
pub fn evolutionary_factor(swarm: &SwarmState) -> Result<f64> {
    let distances = (0..swarm.particles.len())
        .map(|i| mean_distance(i, swarm))
        .collect::<Result<Vec<_>>>()?;
    Ok(isolation(&distances, swarm.leader()))
}

/// Velocity cap for dimension `k`: a logistic curve through
/// `v_min·X_max` at `f_e = 0` and `v_max·X_max` at `f_e = 1`.
pub fn velocity_limit(f_e: f64, cfg: &PsoConfig, k: usize) -> f64 {
    let f_e = f_e.clamp(0.0, 1.0);
    let a = 1.0 / cfg.v_min - 1.0;
    let b = 1.0 / cfg.v_max - 1.0;
    cfg.x_max(k) / (1.0 + a * ((b / a).ln() * f_e).exp())
}

/// Linearly decreasing inertia weight for iteration `t` (0-based).
pub fn inertia(t: usize, cfg: &PsoConfig) -> f64 {
    if cfg.iterations <= 1 {
        return cfg.omega_start;
    }
    cfg.omega_start + (cfg.omega_end - cfg.omega_start) * t as f64 / (cfg.iterations - 1) as f64
}

/// Inertia plus cognitive and social pulls, clamped to `±limits`.
pub fn update_velocity<R: Rng + ?Sized>(
    particle: &Particle,
    global_best: &[f64],
    omega: f64,
    limits: &[f64],
    cfg: &PsoConfig,
    rng: &mut R,
) -> Vec<f64> {
    (0..particle.position.len())
        .map(|k| {
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let x = particle.position[k];
            let v = omega * particle.velocity[k]
                + cfg.c1 * r1 * (particle.best.position[k] - x)
                + cfg.c2 * r2 * (global_best[k] - x);
            v.clamp(-limits[k], limits[k])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Global-best value after each iteration.
    pub trace: Vec<f64>,
}

/// Maximizes `objective` over the configured box.
pub fn optimize<F>(objective: F, cfg: &PsoConfig) -> Result<PsoOutcome>
where
    F: Fn(&[f64]) -> f64,
{
    optimize_observed(objective, cfg, |_| {})
}

/// [`optimize`] with a callback receiving the swarm after every iteration.
pub fn optimize_observed<F, O>(objective: F, cfg: &PsoConfig, mut observer: O) -> Result<PsoOutcome>
where
    F: Fn(&[f64]) -> f64,
    O: FnMut(&SwarmState),
{
    cfg.validate()?;
    let dims = cfg.dimensions();
    let eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let particles: Vec<Particle> = (0..cfg.population)
        .map(|_| {
            let position: Vec<f64> = cfg.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
            let velocity: Vec<f64> = (0..dims)
                .map(|k| {
                    let cap = cfg.v_max * cfg.x_max(k);
                    rng.random_range(-cap..=cap)
                })
                .collect();
            let value = eval(&position);
            Particle {
                best: Incumbent {
                    position: position.clone(),
                    value,
                },
                position,
                velocity,
            }
        })
        .collect();
    let mut swarm = SwarmState {
        global_best: Incumbent {
            position: Vec::new(),
            value: f64::NEG_INFINITY,
        },
        particles,
        iteration: 0,
        velocity_limit: (0..dims).map(|k| cfg.v_max * cfg.x_max(k)).collect(),
    };
    swarm.global_best = swarm.particles[swarm.leader()].best.clone();

    let mut trace = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let f_e = evolutionary_factor(&swarm)?;
        swarm.velocity_limit = (0..dims).map(|k| velocity_limit(f_e, cfg, k)).collect();
        let omega = inertia(t, cfg);

        for particle in &mut swarm.particles {
            let velocity = update_velocity(
                particle,
                &swarm.global_best.position,
                omega,
                &swarm.velocity_limit,
                cfg,
                &mut rng,
            );
            for (k, (x, v)) in particle.position.iter_mut().zip(&velocity).enumerate() {
                let (lo, hi) = cfg.bounds[k];
                *x = (*x + v).clamp(lo, hi);
            }
            particle.velocity = velocity;
        }

        for particle in &mut swarm.particles {
            let value = eval(&particle.position);
            if value > particle.best.value {
                particle.best = Incumbent {
                    position: particle.position.clone(),
                    value,
                };
            }
            if particle.best.value > swarm.global_best.value {
                swarm.global_best = particle.best.clone();
            }
        }
        swarm.iteration = t + 1;
        trace.push(swarm.global_best.value);
        observer(&swarm);
    }

    Ok(PsoOutcome {
        best_position: swarm.global_best.position,
        best_value: swarm.global_best.value,
        trace,
    })
}
