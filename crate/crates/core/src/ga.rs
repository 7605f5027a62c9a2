//! Small elitist genetic algorithm shared by the dispersion and alignment stages.
//!
//! The loop is deliberately budget-bound: a fixed number of generations with
//! no convergence test. Fitness of a generation is evaluated in parallel, the
//! generation loop itself is sequential, so results depend only on the seed.

use std::cmp::{Ordering, Reverse};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type GaRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub elite_count: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 32,
            generations: 40,
            mutation_rate: 0.3,
            tournament_size: 4,
            elite_count: 2,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("genetic search: {msg}")));
        if self.population_size == 0 {
            return fail("population_size must be positive");
        }
        if self.generations == 0 {
            return fail("generations must be positive");
        }
        if self.elite_count >= self.population_size {
            return fail("elite_count must be smaller than population_size");
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return fail("tournament_size must be in 1..=population_size");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail("mutation_rate must be within [0, 1]");
        }
        Ok(())
    }

    /// Same budget, different stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// A search space the engine can evolve over.
///
/// Among equal fitness the genome that sorts first wins.
pub trait Problem: Sync {
    type Genome: Clone + Ord + Send + Sync;

    fn random(&self, rng: &mut GaRng) -> Self::Genome;
    fn fitness(&self, genome: &Self::Genome) -> u64;
    fn crossover(&self, a: &Self::Genome, b: &Self::Genome, rng: &mut GaRng) -> Self::Genome;
    fn mutate(&self, genome: &mut Self::Genome, rng: &mut GaRng);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolved<G> {
    pub best: G,
    pub score: u64,
    /// Best-so-far score: entry 0 is the initial population, then one per generation.
    pub history: Vec<u64>,
}

/// The random population `evolve` starts from for this config.
pub fn initial_population<P: Problem>(problem: &P, cfg: &GaConfig) -> Vec<P::Genome> {
    let mut rng = GaRng::seed_from_u64(cfg.seed);
    (0..cfg.population_size)
        .map(|_| problem.random(&mut rng))
        .collect()
}

fn rank<G: Ord + Send>(population: Vec<G>, scores: Vec<u64>) -> Vec<(u64, G)> {
    let mut ranked: Vec<(u64, G)> = scores.into_iter().zip(population).collect();
    ranked.sort_by(|a, b| better(a, b));
    ranked
}

fn better<G: Ord>(a: &(u64, G), b: &(u64, G)) -> Ordering {
    (Reverse(a.0), &a.1).cmp(&(Reverse(b.0), &b.1))
}

fn evaluate<P: Problem>(problem: &P, population: &[P::Genome]) -> Vec<u64> {
    population.par_iter().map(|g| problem.fitness(g)).collect()
}

pub fn evolve<P: Problem>(problem: &P, cfg: &GaConfig) -> Result<Evolved<P::Genome>> {
    cfg.validate()?;
    let mut rng = GaRng::seed_from_u64(cfg.seed);
    let population: Vec<P::Genome> = (0..cfg.population_size)
        .map(|_| problem.random(&mut rng))
        .collect();
    let scores = evaluate(problem, &population);
    let mut ranked = rank(population, scores);
    let mut best = ranked[0].clone();
    let mut history = Vec::with_capacity(cfg.generations + 1);
    history.push(best.0);

    for _ in 0..cfg.generations {
        let mut next: Vec<P::Genome> = ranked[..cfg.elite_count]
            .iter()
            .map(|(_, g)| g.clone())
            .collect();
        while next.len() < cfg.population_size {
            let a = tournament(&ranked, cfg.tournament_size, &mut rng);
            let b = tournament(&ranked, cfg.tournament_size, &mut rng);
            let mut child = problem.crossover(a, b, &mut rng);
            if rng.random::<f64>() < cfg.mutation_rate {
                problem.mutate(&mut child, &mut rng);
            }
            next.push(child);
        }
        let scores = evaluate(problem, &next);
        ranked = rank(next, scores);
        if better(&ranked[0], &best) == Ordering::Less {
            best = ranked[0].clone();
        }
        history.push(best.0);
    }

    Ok(Evolved {
        best: best.1,
        score: best.0,
        history,
    })
}

/// `ranked` is sorted best first, so the winner is the smallest sampled position.
fn tournament<'a, G>(ranked: &'a [(u64, G)], size: usize, rng: &mut GaRng) -> &'a G {
    let winner = (0..size)
        .map(|_| rng.random_range(0..ranked.len()))
        .min()
        .expect("tournament size is positive");
    &ranked[winner].1
}
