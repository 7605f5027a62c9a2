//! Class alignment: decide which cluster of each class shares a machine.
//!
//! The medoids form a grid with one row per class and one column per
//! machine. A column's score is the all-pairs Hamming sum of its medoids;
//! the grid score sums the columns. A genetic search over per-row
//! permutations maximizes it, and the winning columns split the training
//! set into K machine datasets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bitdata::{BinaryDataset, BitVector};
use crate::error::{contract, Result};
use crate::ga::{self, Evolved, GaConfig, GaRng, Problem};
use crate::kmedoid::ClusterResult;

/// `rows[c][column]` is the cluster of class `c` placed in `column`.
/// Row 0 is always the identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Arrangement {
    rows: Vec<Vec<usize>>,
}

impl Arrangement {
    pub fn identity(classes: usize, k: usize) -> Self {
        Self {
            rows: vec![(0..k).collect(); classes],
        }
    }

    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        for (c, row) in rows.iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            if sorted != (0..k).collect::<Vec<_>>() {
                return Err(contract(format!("row {c} is not a permutation of 0..{k}")));
            }
        }
        if rows.first().is_some_and(|r| r.iter().enumerate().any(|(i, &v)| i != v)) {
            return Err(contract("row 0 must be the identity"));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Column that holds `cluster` of `class`.
    pub fn column_of(&self, class: usize, cluster: usize) -> usize {
        self.rows[class]
            .iter()
            .position(|&c| c == cluster)
            .expect("rows are permutations")
    }
}

/// C rows of K medoids; `cluster_of[c][column]` names the source cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedoidGrid {
    pub medoids: Vec<Vec<BitVector>>,
    pub cluster_of: Vec<Vec<usize>>,
}

impl MedoidGrid {
    pub fn new(medoids_per_class: &[Vec<BitVector>], arrangement: &Arrangement) -> Result<Self> {
        check_rectangular(medoids_per_class)?;
        if arrangement.classes() != medoids_per_class.len()
            || arrangement.k() != medoids_per_class[0].len()
        {
            return Err(contract("arrangement shape does not match the medoids"));
        }
        let medoids = arrangement
            .rows()
            .iter()
            .zip(medoids_per_class)
            .map(|(row, meds)| row.iter().map(|&cl| meds[cl].clone()).collect())
            .collect();
        Ok(Self {
            medoids,
            cluster_of: arrangement.rows().to_vec(),
        })
    }

    pub fn classes(&self) -> usize {
        self.medoids.len()
    }

    pub fn k(&self) -> usize {
        self.medoids.first().map_or(0, Vec::len)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &BitVector> {
        self.medoids.iter().map(move |row| &row[j])
    }
}

fn check_rectangular(medoids_per_class: &[Vec<BitVector>]) -> Result<()> {
    let k = medoids_per_class
        .first()
        .map(Vec::len)
        .ok_or_else(|| contract("no classes given"))?;
    if k == 0 {
        return Err(contract("classes have no medoids"));
    }
    if let Some(c) = medoids_per_class.iter().position(|m| m.len() != k) {
        return Err(contract(format!(
            "class {c} has {} medoids, expected {k}",
            medoids_per_class[c].len()
        )));
    }
    Ok(())
}

/// Sum over columns of the all-pairs Hamming distance within the column.
pub fn alignment_score(grid: &MedoidGrid) -> u64 {
    let mut total = 0u64;
    for j in 0..grid.k() {
        for a in 0..grid.classes() {
            for b in a + 1..grid.classes() {
                total += u64::from(grid.medoids[a][j].distance(&grid.medoids[b][j]));
            }
        }
    }
    total
}

/// Permutation search space with precomputed cross-class medoid distances.
pub struct AlignmentProblem {
    classes: usize,
    k: usize,
    // dist[((a * classes + b) * k + i) * k + j] = d(medoid i of a, medoid j of b)
    dist: Vec<u32>,
}

impl AlignmentProblem {
    pub fn new(medoids_per_class: &[Vec<BitVector>]) -> Result<Self> {
        check_rectangular(medoids_per_class)?;
        let classes = medoids_per_class.len();
        let k = medoids_per_class[0].len();
        let mut dist = vec![0u32; classes * classes * k * k];
        for a in 0..classes {
            for b in a + 1..classes {
                for i in 0..k {
                    for j in 0..k {
                        dist[((a * classes + b) * k + i) * k + j] =
                            medoids_per_class[a][i].distance(&medoids_per_class[b][j]);
                    }
                }
            }
        }
        Ok(Self { classes, k, dist })
    }

    fn d(&self, a: usize, i: usize, b: usize, j: usize) -> u64 {
        u64::from(self.dist[((a * self.classes + b) * self.k + i) * self.k + j])
    }
}

impl Problem for AlignmentProblem {
    type Genome = Arrangement;

    fn random(&self, rng: &mut GaRng) -> Arrangement {
        let mut arr = Arrangement::identity(self.classes, self.k);
        for row in arr.rows.iter_mut().skip(1) {
            row.shuffle(rng);
        }
        arr
    }

    fn fitness(&self, g: &Arrangement) -> u64 {
        let mut total = 0;
        for col in 0..self.k {
            for a in 0..self.classes {
                for b in a + 1..self.classes {
                    total += self.d(a, g.rows[a][col], b, g.rows[b][col]);
                }
            }
        }
        total
    }

    fn crossover(&self, a: &Arrangement, b: &Arrangement, rng: &mut GaRng) -> Arrangement {
        let rows = a
            .rows
            .iter()
            .zip(&b.rows)
            .enumerate()
            .map(|(c, (ra, rb))| {
                if c == 0 {
                    ra.clone()
                } else {
                    order_crossover(ra, rb, rng)
                }
            })
            .collect();
        Arrangement { rows }
    }

    /// Swaps two positions in one row other than row 0.
    fn mutate(&self, g: &mut Arrangement, rng: &mut GaRng) {
        if self.classes < 2 || self.k < 2 {
            return;
        }
        let row = rng.random_range(1..self.classes);
        let i = rng.random_range(0..self.k);
        let mut j = rng.random_range(0..self.k - 1);
        if j >= i {
            j += 1;
        }
        g.rows[row].swap(i, j);
    }
}

/// OX1: copy a random slice of `a`, fill the rest in `b`'s order after the slice.
pub fn order_crossover(a: &[usize], b: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let n = a.len();
    if n < 2 {
        return a.to_vec();
    }
    let mut lo = rng.random_range(0..n);
    let mut hi = rng.random_range(0..n);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut child = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for i in lo..=hi {
        child[i] = a[i];
        used[a[i]] = true;
    }
    let mut pos = (hi + 1) % n;
    for step in 0..n {
        let gene = b[(hi + 1 + step) % n];
        if !used[gene] {
            child[pos] = gene;
            used[gene] = true;
            pos = (pos + 1) % n;
        }
    }
    child
}

/// Searches row permutations for the largest grid score.
pub fn align(medoids_per_class: &[Vec<BitVector>], cfg: &GaConfig) -> Result<Evolved<Arrangement>> {
    let problem = AlignmentProblem::new(medoids_per_class)?;
    if problem.classes < 2 || problem.k < 2 {
        cfg.validate()?;
        let best = Arrangement::identity(problem.classes, problem.k);
        let score = problem.fitness(&best);
        return Ok(Evolved {
            best,
            score,
            history: vec![score; cfg.generations + 1],
        });
    }
    ga::evolve(&problem, cfg)
}

/// Clustering of one class, with the dataset indices its local indices refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassClusters {
    pub members: Vec<usize>,
    pub result: ClusterResult,
}

/// Dataset indices routed to each machine, ascending within a machine.
pub fn partition_indices(
    dataset_len: usize,
    clusters: &[ClassClusters],
    arrangement: &Arrangement,
) -> Result<Vec<Vec<usize>>> {
    if clusters.len() != arrangement.classes() {
        return Err(contract("one clustering per class is required"));
    }
    let k = arrangement.k();
    let mut machines = vec![Vec::new(); k];
    let mut seen = vec![false; dataset_len];
    for (class, cc) in clusters.iter().enumerate() {
        if cc.result.assignment.len() != cc.members.len() || cc.result.k() != k {
            return Err(contract(format!("clustering of class {class} has the wrong shape")));
        }
        for (&point, &cluster) in cc.members.iter().zip(&cc.result.assignment) {
            if point >= dataset_len || std::mem::replace(&mut seen[point], true) {
                return Err(contract(format!("point {point} is out of range or clustered twice")));
            }
            machines[arrangement.column_of(class, cluster)].push(point);
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(contract(format!("point {missing} is not covered by any cluster")));
    }
    for m in &mut machines {
        m.sort_unstable();
    }
    Ok(machines)
}

/// Splits `dataset` into one dataset per column of the arrangement.
pub fn partition(
    dataset: &BinaryDataset,
    clusters: &[ClassClusters],
    arrangement: &Arrangement,
) -> Result<Vec<BinaryDataset>> {
    Ok(partition_indices(dataset.len(), clusters, arrangement)?
        .iter()
        .map(|idx| dataset.subset(idx))
        .collect())
}
