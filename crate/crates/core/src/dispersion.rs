//! Maximum dispersion: choose K points of one class whose all-pairs Hamming
//! sum is as large as a short genetic search can make it.
//!
//! The result only seeds K-medoid, so a rough answer is enough.

use rand::seq::index;
use rand::Rng;

use crate::bitdata::BitVector;
use crate::error::{contract, Error, Result};
use crate::ga::{self, Evolved, GaConfig, GaRng, Problem};

/// K distinct datapoint indices, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SelectionChromosome(Vec<usize>);

impl SelectionChromosome {
    pub fn new(mut indices: Vec<usize>, population: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(contract("selection contains a duplicate index"));
        }
        if let Some(&i) = indices.last().filter(|&&i| i >= population) {
            return Err(contract(format!("index {i} outside population of {population}")));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

/// Sum of Hamming distances over all unordered pairs of the selected points.
pub fn dispersion_score(points: &[BitVector], indices: &[usize]) -> Result<u64> {
    let sel = SelectionChromosome::new(indices.to_vec(), points.len())?;
    Ok(pair_sum(points, sel.indices()))
}

fn pair_sum(points: &[BitVector], indices: &[usize]) -> u64 {
    let mut total = 0u64;
    for (n, &i) in indices.iter().enumerate() {
        for &j in &indices[n + 1..] {
            total += u64::from(points[i].distance(&points[j]));
        }
    }
    total
}

/// GA search space over K-subsets of `points`.
pub struct DispersionProblem<'a> {
    points: &'a [BitVector],
    k: usize,
}

impl<'a> DispersionProblem<'a> {
    pub fn new(points: &'a [BitVector], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(contract("cannot select zero points"));
        }
        if k > points.len() {
            return Err(Error::NotEnoughPoints {
                available: points.len(),
                required: k,
            });
        }
        Ok(Self { points, k })
    }
}

impl Problem for DispersionProblem<'_> {
    type Genome = SelectionChromosome;

    fn random(&self, rng: &mut GaRng) -> SelectionChromosome {
        let mut v = index::sample(rng, self.points.len(), self.k).into_vec();
        v.sort_unstable();
        SelectionChromosome(v)
    }

    fn fitness(&self, g: &SelectionChromosome) -> u64 {
        pair_sum(self.points, &g.0)
    }

    /// Union of both parents, then random members dropped until K remain.
    fn crossover(
        &self,
        a: &SelectionChromosome,
        b: &SelectionChromosome,
        rng: &mut GaRng,
    ) -> SelectionChromosome {
        let mut union: Vec<usize> = a.0.iter().chain(&b.0).copied().collect();
        union.sort_unstable();
        union.dedup();
        let mut kept: Vec<usize> = index::sample(rng, union.len(), self.k)
            .into_iter()
            .map(|i| union[i])
            .collect();
        kept.sort_unstable();
        SelectionChromosome(kept)
    }

    /// Swap one member for a uniformly chosen non-member.
    fn mutate(&self, g: &mut SelectionChromosome, rng: &mut GaRng) {
        let n = self.points.len();
        if self.k == n {
            return;
        }
        // rank r among the n - k non-members
        let mut r = rng.random_range(0..n - self.k);
        let mut replacement = 0;
        for candidate in 0..n {
            if g.0.binary_search(&candidate).is_err() {
                if r == 0 {
                    replacement = candidate;
                    break;
                }
                r -= 1;
            }
        }
        let slot = rng.random_range(0..self.k);
        g.0[slot] = replacement;
        g.0.sort_unstable();
    }
}

/// Runs the dispersion GA. With K equal to the population the only subset is returned.
pub fn max_dispersion(
    points: &[BitVector],
    k: usize,
    cfg: &GaConfig,
) -> Result<Evolved<SelectionChromosome>> {
    let problem = DispersionProblem::new(points, k)?;
    if k == points.len() {
        cfg.validate()?;
        let best = SelectionChromosome((0..k).collect());
        let score = problem.fitness(&best);
        return Ok(Evolved {
            best,
            score,
            history: vec![score; cfg.generations + 1],
        });
    }
    ga::evolve(&problem, cfg)
}
