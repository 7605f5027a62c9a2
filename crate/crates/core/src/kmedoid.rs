//! Binary K-medoid clustering under Hamming distance.
//!
//! Each iteration assigns every point to its nearest medoid, then replaces
//! each medoid with the member of its cluster that has the smallest summed
//! distance to the rest of the cluster. It stops once an update leaves the
//! medoid set unchanged.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitdata::BitVector;
use crate::error::{contract, Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMedoidConfig {
    pub max_iterations: usize,
}

impl Default for KMedoidConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Point index of each cluster's medoid; cluster id = position.
    pub medoid_indices: Vec<usize>,
    /// Cluster id of every point.
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of distances to the assigned medoid, one entry per iteration.
    pub objective_history: Vec<u64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.medoid_indices.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        members_of(&self.assignment, cluster)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Writes `point,cluster,is_medoid` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["point", "cluster", "is_medoid"])?;
        for (i, &c) in self.assignment.iter().enumerate() {
            let is_medoid = self.medoid_indices[c] == i;
            w.write_record([i.to_string(), c.to_string(), u8::from(is_medoid).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn members_of(assignment: &[usize], cluster: usize) -> Vec<usize> {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (c == cluster).then_some(i))
        .collect()
}

fn check_medoids(points: &[BitVector], medoids: &[usize]) -> Result<()> {
    if medoids.is_empty() {
        return Err(contract("no medoids given"));
    }
    if medoids.len() > points.len() {
        return Err(Error::NotEnoughPoints {
            available: points.len(),
            required: medoids.len(),
        });
    }
    let mut sorted = medoids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(contract("medoid indices are not distinct"));
    }
    if let Some(&m) = sorted.last().filter(|&&m| m >= points.len()) {
        return Err(contract(format!("medoid index {m} out of range")));
    }
    Ok(())
}

/// Nearest-medoid assignment; ties go to the lowest medoid position.
///
/// A medoid is always placed in its own cluster, even when another medoid
/// has the identical bit pattern, so no cluster is ever empty.
pub fn assign(points: &[BitVector], medoids: &[usize]) -> Result<Vec<usize>> {
    check_medoids(points, medoids)?;
    Ok(assign_unchecked(points, medoids))
}

fn assign_unchecked(points: &[BitVector], medoids: &[usize]) -> Vec<usize> {
    let mut assignment: Vec<usize> = points
        .par_iter()
        .map(|p| {
            let mut best = (u32::MAX, 0);
            for (pos, &m) in medoids.iter().enumerate() {
                let d = p.distance(&points[m]);
                if d < best.0 {
                    best = (d, pos);
                }
            }
            best.1
        })
        .collect();
    for (pos, &m) in medoids.iter().enumerate() {
        assignment[m] = pos;
    }
    assignment
}

/// Member with the smallest summed distance to the other members.
/// Ties go to the lowest datapoint index.
pub fn update_medoid(points: &[BitVector], members: &[usize]) -> Result<usize> {
    if members.is_empty() {
        return Err(contract("cannot pick a medoid for an empty cluster"));
    }
    let costs: Vec<(u64, usize)> = members
        .par_iter()
        .map(|&i| {
            let cost = members
                .iter()
                .map(|&j| u64::from(points[i].distance(&points[j])))
                .sum();
            (cost, i)
        })
        .collect();
    Ok(costs.into_iter().min().expect("non-empty").1)
}

fn objective(points: &[BitVector], medoids: &[usize], assignment: &[usize]) -> u64 {
    points
        .par_iter()
        .zip(assignment.par_iter())
        .map(|(p, &c)| u64::from(p.distance(&points[medoids[c]])))
        .sum()
}

/// Alternates assignment and medoid update from `initial_medoids`.
///
/// `iterations` counts assign/update cycles, including the final one that
/// found the medoids unchanged.
pub fn cluster(
    points: &[BitVector],
    initial_medoids: &[usize],
    max_iterations: usize,
) -> Result<ClusterResult> {
    check_medoids(points, initial_medoids)?;
    if max_iterations == 0 {
        return Err(Error::Config("kmedoid max_iterations must be positive".into()));
    }
    let k = initial_medoids.len();
    let mut medoids = initial_medoids.to_vec();
    let mut assignment = assign_unchecked(points, &medoids);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iterations {
        iterations += 1;
        history.push(objective(points, &medoids, &assignment));
        let updated = (0..k)
            .map(|c| update_medoid(points, &members_of(&assignment, c)))
            .collect::<Result<Vec<_>>>()?;
        if updated == medoids {
            converged = true;
            break;
        }
        medoids = updated;
        assignment = assign_unchecked(points, &medoids);
    }

    Ok(ClusterResult {
        medoid_indices: medoids,
        assignment,
        iterations,
        converged,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> BitVector {
        BitVector::parse(s).unwrap()
    }

    fn pts(list: &[&str]) -> Vec<BitVector> {
        list.iter().map(|s| bits(s)).collect()
    }

    #[test]
    fn assign_self_and_ties() {
        let p = pts(&["0000", "1111", "0011", "0001"]);
        let a = assign(&p, &[0, 1]).unwrap();
        // 0011 is at distance 2 from both medoids
        assert_eq!(a, vec![0, 1, 0, 0]);
        let a = assign(&p, &[1, 0]).unwrap();
        assert_eq!(a, vec![1, 0, 0, 1]);
    }

    #[test]
    fn assign_matches_distance_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<BitVector> = (0..8)
            .map(|_| BitVector::from_bits((0..10).map(|_| rng.random::<bool>())))
            .collect();
        let medoids = [2, 5];
        let got = assign(&p, &medoids).unwrap();
        for (i, point) in p.iter().enumerate() {
            let d: Vec<u32> = medoids
                .iter()
                .map(|&m| (0..10).filter(|&b| point.get(b) != p[m].get(b)).count() as u32)
                .collect();
            let expect = if medoids.contains(&i) {
                medoids.iter().position(|&m| m == i).unwrap()
            } else if d[1] < d[0] {
                1
            } else {
                0
            };
            assert_eq!(got[i], expect, "point {i}");
        }
    }

    #[test]
    fn update_picks_middle_point() {
        let p = pts(&["0000", "0011", "0111"]);
        assert_eq!(update_medoid(&p, &[0, 1, 2]).unwrap(), 1);
        assert_eq!(update_medoid(&p, &[2]).unwrap(), 2);
        assert!(update_medoid(&p, &[]).is_err());
        // 0000 and 0011 tie at cost 2; lowest index wins
        assert_eq!(update_medoid(&p, &[1, 0]).unwrap(), 0);
    }

    #[test]
    fn one_point_per_cluster() {
        let p = pts(&["01", "10", "11"]);
        let r = cluster(&p, &[2, 0, 1], 10).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.medoid_indices, vec![2, 0, 1]);
        assert_eq!(r.assignment, vec![1, 2, 0]);
    }

    #[test]
    fn two_hamming_balls() {
        // radius-1 balls around 00000000 and 11111111
        let mut list = vec!["00000000", "11111111"];
        list.extend(["10000000", "01000000", "00100000", "00010000"]);
        list.extend(["01111111", "10111111", "11011111", "11101111"]);
        let p = pts(&list);
        // seeds start inside the balls but off centre
        let r = cluster(&p, &[2, 6], 20).unwrap();
        assert!(r.converged);
        assert_eq!(r.medoid_indices, vec![0, 1]);
        assert_eq!(r.cluster_sizes(), vec![5, 5]);

        let fixed = cluster(&p, &[0, 1], 20).unwrap();
        assert_eq!(fixed.iterations, 1);
        assert!(fixed.converged);
    }

    #[test]
    fn duplicate_patterns_keep_both_clusters() {
        let p = pts(&["0101", "0101", "1111", "0100"]);
        let r = cluster(&p, &[0, 1], 10).unwrap();
        assert_eq!(r.k(), 2);
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn errors() {
        let p = pts(&["0", "1"]);
        assert!(matches!(cluster(&p, &[0, 1, 1], 5), Err(Error::NotEnoughPoints { .. })));
        assert!(matches!(cluster(&p, &[0, 0], 5), Err(Error::Contract(_))));
        assert!(matches!(cluster(&p, &[0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<BitVector> = (0..60)
            .map(|_| BitVector::from_bits((0..24).map(|_| rng.random::<bool>())))
            .collect();
        let r = cluster(&p, &[0, 1, 2, 3], 1).unwrap();
        assert_eq!(r.iterations, 1);
        if !r.converged {
            assert_eq!(r.objective_history.len(), 1);
        }
    }

    #[test]
    fn csv_dump() {
        let p = pts(&["00", "01", "11"]);
        let r = cluster(&p, &[0, 2], 5).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some("point,cluster,is_medoid"));
        assert_eq!(text.lines().count(), 4);
    }
}
