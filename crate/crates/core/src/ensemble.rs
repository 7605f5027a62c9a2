//! Pre-sorted ensembles: the three sorting stages, clause apportionment,
//! training of the K machines, routing and evaluation.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, Arrangement, ClassClusters, MedoidGrid};
use crate::bitdata::{BinaryDataset, BitVector};
use crate::derive_seed;
use crate::dispersion;
use crate::error::{contract, Error, Result};
use crate::ga::GaConfig;
use crate::kmedoid::{self, KMedoidConfig};
use crate::tsetlin::{argmax, model, TmParams, TsetlinMachine, UpdateStats};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    /// Send the input to the column of its nearest medoid.
    #[default]
    #[serde(alias = "nearest")]
    NearestMedoid,
    /// Query every machine and take the largest class sum overall.
    #[serde(alias = "argmax")]
    AllMachinesArgmax,
}

/// How each machine's vote threshold `T` relates to the configured one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdScaling {
    /// `T * budget / total`, rounded, at least 1: a machine with a quarter
    /// of the clauses needs a quarter of the votes.
    #[default]
    Proportional,
    /// Every machine uses the configured `T`.
    Fixed,
}

impl ThresholdScaling {
    pub fn apply(self, threshold: u32, budget: usize, total: usize) -> u32 {
        match self {
            ThresholdScaling::Fixed => threshold,
            ThresholdScaling::Proportional => {
                let scaled = (u64::from(threshold) * budget as u64 * 2 + total as u64) / (2 * total as u64);
                (scaled as u32).max(1)
            }
        }
    }
}

/// Metric that ends a machine's training early once it reaches 100%.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStop {
    Off,
    /// Accuracy on the machine's own training partition.
    #[default]
    Train,
    /// Accuracy on the test points routed to the machine.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresortConfig {
    pub k: usize,
    pub dispersion: GaConfig,
    pub kmedoid: KMedoidConfig,
    pub alignment: GaConfig,
}

impl Default for PresortConfig {
    fn default() -> Self {
        Self {
            k: 2,
            dispersion: GaConfig::default(),
            kmedoid: KMedoidConfig::default(),
            alignment: GaConfig::default(),
        }
    }
}

/// Output of the dispersion, K-medoid and alignment stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presort {
    pub k: usize,
    pub clusters: Vec<ClassClusters>,
    /// Pair-sum of each class's dispersion selection.
    pub dispersion_scores: Vec<u64>,
    pub arrangement: Arrangement,
    pub alignment_score: u64,
    pub grid: MedoidGrid,
    /// Training-set indices per machine, ascending.
    pub partitions: Vec<Vec<usize>>,
}

/// Runs the three stages in order on `train`.
pub fn presort(train: &BinaryDataset, cfg: &PresortConfig) -> Result<Presort> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    train.ensure_all_classes()?;
    let counts = train.class_counts();
    if let Some(class) = counts.iter().position(|&n| n < k) {
        return Err(Error::ClassTooSmall {
            class,
            available: counts[class],
            required: k,
        });
    }

    let per_class = (0..train.classes())
        .into_par_iter()
        .map(|class| {
            let members = train.class_indices(class);
            let points: Vec<BitVector> = members.iter().map(|&i| train.point(i).clone()).collect();
            let ga = cfg.dispersion.with_seed(derive_seed(cfg.dispersion.seed, class as u64));
            let seeds = dispersion::max_dispersion(&points, k, &ga)?;
            let result = kmedoid::cluster(&points, seeds.best.indices(), cfg.kmedoid.max_iterations)?;
            let medoids: Vec<BitVector> = result
                .medoid_indices
                .iter()
                .map(|&m| points[m].clone())
                .collect();
            Ok((ClassClusters { members, result }, seeds.score, medoids))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clusters = Vec::with_capacity(per_class.len());
    let mut dispersion_scores = Vec::with_capacity(per_class.len());
    let mut medoids = Vec::with_capacity(per_class.len());
    for (cc, score, meds) in per_class {
        clusters.push(cc);
        dispersion_scores.push(score);
        medoids.push(meds);
    }

    let aligned = alignment::align(&medoids, &cfg.alignment)?;
    let grid = MedoidGrid::new(&medoids, &aligned.best)?;
    let partitions = alignment::partition_indices(train.len(), &clusters, &aligned.best)?;
    Ok(Presort {
        k,
        clusters,
        dispersion_scores,
        arrangement: aligned.best,
        alignment_score: aligned.score,
        grid,
        partitions,
    })
}

/// Splits `total_per_class` clauses over machines in proportion to `sizes`.
///
/// Works in clause pairs: largest-remainder on `total / 2` pairs (ties to
/// the lower machine index), then any machine left without a pair takes one
/// from the machine holding the most.
pub fn apportion(total_per_class: usize, sizes: &[usize]) -> Result<Vec<usize>> {
    let k = sizes.len();
    if k == 0 || sizes.contains(&0) {
        return Err(contract("machine sizes must be positive"));
    }
    if total_per_class % 2 != 0 || total_per_class < 2 * k {
        return Err(Error::Budget {
            total: total_per_class,
            machines: k,
        });
    }
    let pairs = (total_per_class / 2) as u128;
    let sum: u128 = sizes.iter().map(|&s| s as u128).sum();
    let mut alloc: Vec<u128> = sizes.iter().map(|&s| pairs * s as u128 / sum).collect();
    let mut remainders: Vec<(u128, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| (pairs * s as u128 % sum, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: u128 = alloc.iter().sum();
    for &(_, i) in remainders.iter().take((pairs - assigned) as usize) {
        alloc[i] += 1;
    }
    while let Some(empty) = alloc.iter().position(|&a| a == 0) {
        let donor = (0..k).max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a))).unwrap();
        alloc[donor] -= 1;
        alloc[empty] += 1;
    }
    Ok(alloc.into_iter().map(|a| 2 * a as usize).collect())
}

/// Checks that `partitions` is an exact set-partition of `0..n`.
pub fn verify_partition(partitions: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for (m, part) in partitions.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::EmptyPartition(m));
        }
        for &i in part {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(contract(format!("point {i} is out of range or in two partitions")));
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(contract(format!("point {i} is in no partition"))),
        None => Ok(()),
    }
}

pub fn verify_budgets(budgets: &[usize], total_per_class: usize) -> Result<()> {
    let sum: usize = budgets.iter().sum();
    if sum != total_per_class || budgets.iter().any(|&b| b < 2 || b % 2 != 0) {
        return Err(contract(format!(
            "budgets {budgets:?} do not split {total_per_class} into clause pairs"
        )));
    }
    Ok(())
}

/// Column of the nearest medoid; ties go to the lowest column, then the lowest class row.
pub fn route(input: &BitVector, grid: &MedoidGrid) -> usize {
    let mut best = (u32::MAX, 0);
    for col in 0..grid.k() {
        for medoid in grid.column(col) {
            let d = medoid.distance(input);
            if d < best.0 {
                best = (d, col);
            }
        }
    }
    best.1
}

/// Per-machine seed; machine 0 keeps the master seed so K = 1 matches the baseline.
pub fn machine_seed(master: u64, machine: usize) -> u64 {
    master.wrapping_add((machine as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Everything about an ensemble except the trained machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleLayout {
    pub routing: RoutingMode,
    /// Base parameters; `clauses_per_class` is the total over all machines.
    pub params: TmParams,
    #[serde(default)]
    pub threshold_scaling: ThresholdScaling,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid: MedoidGrid,
}

impl EnsembleLayout {
    pub fn k(&self) -> usize {
        self.budgets.len()
    }

    pub fn machine_params(&self, machine: usize) -> TmParams {
        let budget = self.budgets[machine];
        TmParams {
            clauses_per_class: budget,
            threshold: self
                .threshold_scaling
                .apply(self.params.threshold, budget, self.params.clauses_per_class),
            seed: self.seeds[machine],
            ..self.params.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub layout: EnsembleLayout,
    pub partitions: Vec<Vec<usize>>,
}

impl EnsemblePlan {
    pub fn new(presort: &Presort, params: &TmParams, routing: RoutingMode) -> Result<Self> {
        params.validate()?;
        let sizes: Vec<usize> = presort.partitions.iter().map(Vec::len).collect();
        let budgets = apportion(params.clauses_per_class, &sizes)?;
        let seeds = (0..presort.k).map(|m| machine_seed(params.seed, m)).collect();
        Ok(Self {
            layout: EnsembleLayout {
                routing,
                params: params.clone(),
                threshold_scaling: ThresholdScaling::default(),
                budgets,
                seeds,
                grid: presort.grid.clone(),
            },
            partitions: presort.partitions.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.layout.k()
    }

    /// Test-set indices routed to each machine.
    pub fn route_all(&self, data: &BinaryDataset) -> Vec<Vec<usize>> {
        let mut routed = vec![Vec::new(); self.k()];
        for (i, x) in data.points().iter().enumerate() {
            routed[route(x, &self.layout.grid)].push(i);
        }
        routed
    }

    fn train_one<'r>(
        &self,
        machine: usize,
        train: &BinaryDataset,
        opts: &TrainOptions,
        routed_test: Option<&BinaryDataset>,
        residency: &'r Residency,
    ) -> Result<(Resident<'r>, UpdateStats)> {
        let part_idx = &self.partitions[machine];
        if part_idx.is_empty() {
            return Err(Error::EmptyPartition(machine));
        }
        let part = train.subset(part_idx);
        let params = self.layout.machine_params(machine);
        let tm = TsetlinMachine::new(params, train.features(), train.classes())?;
        let mut resident = residency.admit(tm);
        let stop_on = match (opts.early_stop, routed_test) {
            (EarlyStop::Off, _) => None,
            (EarlyStop::Test, Some(t)) if !t.is_empty() => Some(t),
            // nothing routed here: fall back to the partition itself
            _ => Some(&part),
        };
        let stats = resident.get_mut().fit(&part, stop_on)?;
        Ok((resident, stats))
    }

    fn routed_subsets(&self, test: Option<&BinaryDataset>) -> Vec<Option<BinaryDataset>> {
        match test {
            Some(t) => self
                .route_all(t)
                .iter()
                .map(|idx| Some(t.subset(idx)))
                .collect(),
            None => vec![None; self.k()],
        }
    }

    /// Trains every machine, concurrently on up to `opts.workers` threads.
    pub fn train_parallel(
        &self,
        train: &BinaryDataset,
        opts: &TrainOptions,
        test: Option<&BinaryDataset>,
    ) -> Result<(PresortedEnsemble, TrainReport)> {
        verify_partition(&self.partitions, train.len())?;
        let start = Instant::now();
        let residency = Residency::default();
        let routed = self.routed_subsets(test);
        let workers = opts.workers.unwrap_or(self.k()).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let trained = pool.install(|| {
            (0..self.k())
                .into_par_iter()
                .map(|m| self.train_one(m, train, opts, routed[m].as_ref(), &residency))
                .collect::<Result<Vec<_>>>()
        })?;
        let wall = start.elapsed().as_secs_f64();

        let mut report = TrainReport::default();
        let mut machines = Vec::with_capacity(trained.len());
        for (resident, stats) in trained {
            report.push(resident.get(), stats);
            machines.push(resident.into_inner());
        }
        report.total.wall_time_s = wall;
        report.peak_resident_machines = residency.peak();
        Ok((
            PresortedEnsemble {
                layout: self.layout.clone(),
                machines,
            },
            report,
        ))
    }

    /// Momentary mastery: one machine at a time is built, trained, evaluated
    /// on its routed test points, handed to `sink` and dropped.
    pub fn train_sequential<F>(
        &self,
        train: &BinaryDataset,
        opts: &TrainOptions,
        test: Option<&BinaryDataset>,
        mut sink: F,
    ) -> Result<TrainReport>
    where
        F: FnMut(usize, &TsetlinMachine) -> Result<()>,
    {
        verify_partition(&self.partitions, train.len())?;
        let start = Instant::now();
        let residency = Residency::default();
        let routed = self.routed_subsets(test);
        let mut report = TrainReport::default();
        let mut one_shot = test.map(|_| OneShot::default());
        for (m, routed_test) in routed.iter().enumerate() {
            let (resident, stats) = self.train_one(m, train, opts, routed_test.as_ref(), &residency)?;
            if let (Some(acc), Some(t)) = (one_shot.as_mut(), routed_test) {
                // routed test points only ever meet this machine
                let tm = resident.get();
                acc.correct += t.iter().filter(|(x, y)| tm.predict(x) == *y).count();
                acc.total += t.len();
                acc.clause_evaluations += t.len() as u64 * tm.clause_evaluations_per_inference();
            }
            sink(m, resident.get())?;
            report.push(resident.get(), stats);
            drop(resident);
        }
        report.total.wall_time_s = start.elapsed().as_secs_f64();
        report.peak_resident_machines = residency.peak();
        report.one_shot = one_shot;
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub early_stop: EarlyStop,
    pub sequential: bool,
    /// Threads for parallel training; `None` means one per machine.
    pub workers: Option<usize>,
}

/// Correct predictions made during one-at-a-time training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OneShot {
    pub correct: usize,
    pub total: usize,
    pub clause_evaluations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub per_machine: Vec<UpdateStats>,
    pub total: UpdateStats,
    pub peak_resident_machines: usize,
    pub digests: Vec<String>,
    pub one_shot: Option<OneShot>,
}

impl TrainReport {
    fn push(&mut self, tm: &TsetlinMachine, stats: UpdateStats) {
        let wall = self.total.wall_time_s;
        self.total.absorb(&stats);
        self.total.wall_time_s = wall;
        self.digests.push(tm.digest());
        self.per_machine.push(stats);
    }
}

/// Live-machine counter with a high-water mark.
#[derive(Debug, Default)]
struct Residency {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl Residency {
    fn admit(&self, machine: TsetlinMachine) -> Resident<'_> {
        let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        Resident {
            machine: Some(machine),
            tracker: Some(self),
        }
    }

    fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

struct Resident<'a> {
    machine: Option<TsetlinMachine>,
    tracker: Option<&'a Residency>,
}

impl Resident<'_> {
    fn get(&self) -> &TsetlinMachine {
        self.machine.as_ref().expect("machine present until released")
    }

    fn get_mut(&mut self) -> &mut TsetlinMachine {
        self.machine.as_mut().expect("machine present until released")
    }

    /// Hands the machine out; it stays counted as resident.
    fn into_inner(mut self) -> TsetlinMachine {
        self.tracker = None;
        self.machine.take().expect("machine present until released")
    }
}

impl Drop for Resident<'_> {
    fn drop(&mut self) {
        if let Some(t) = self.tracker {
            t.live.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

/// K trained machines plus the grid used to route inputs to them.
#[derive(Debug, Clone, PartialEq)]
pub struct PresortedEnsemble {
    pub layout: EnsembleLayout,
    pub machines: Vec<TsetlinMachine>,
}

impl PresortedEnsemble {
    pub fn k(&self) -> usize {
        self.machines.len()
    }

    pub fn route(&self, input: &BitVector) -> usize {
        route(input, &self.layout.grid)
    }

    pub fn with_routing(mut self, routing: RoutingMode) -> Self {
        self.layout.routing = routing;
        self
    }

    pub fn classify(&self, input: &BitVector) -> usize {
        match self.layout.routing {
            RoutingMode::NearestMedoid => self.machines[self.route(input)].predict(input),
            RoutingMode::AllMachinesArgmax => {
                let mut best = (i32::MIN, 0);
                for tm in &self.machines {
                    let sums = tm.class_sums(input);
                    let c = argmax(&sums);
                    if sums[c] > best.0 {
                        best = (sums[c], c);
                    }
                }
                best.1
            }
        }
    }

    /// Writes `machine_<i>.tm` files and the manifest into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut digests = Vec::with_capacity(self.k());
        for (m, tm) in self.machines.iter().enumerate() {
            let bytes = tm.to_bytes();
            fs::write(dir.join(machine_file(m)), &bytes)?;
            digests.push(model::digest(&bytes));
        }
        let manifest = Manifest::new(self.layout.clone(), digests);
        manifest.write(dir)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::read(dir)?;
        let machines = manifest
            .machine_files
            .iter()
            .zip(&manifest.digests)
            .map(|(file, expected)| {
                let bytes = fs::read(dir.join(file))?;
                if &model::digest(&bytes) != expected {
                    return Err(Error::Format(format!("{file} does not match its manifest digest")));
                }
                TsetlinMachine::from_bytes(&bytes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout: manifest.layout,
            machines,
        })
    }
}

pub fn machine_file(machine: usize) -> String {
    format!("machine_{machine}.tm")
}

/// Ensemble description stored next to the machine files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(flatten)]
    pub layout: EnsembleLayout,
    pub machine_files: Vec<String>,
    pub digests: Vec<String>,
}

impl Manifest {
    pub fn new(layout: EnsembleLayout, digests: Vec<String>) -> Self {
        let machine_files = (0..layout.k()).map(machine_file).collect();
        Self {
            format_version: MANIFEST_VERSION,
            layout,
            machine_files,
            digests,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        if manifest.machine_files.len() != manifest.layout.k() || manifest.digests.len() != manifest.layout.k() {
            return Err(Error::Format("manifest lists the wrong number of machines".into()));
        }
        Ok(manifest)
    }
}

/// A trained model that can label datapoints.
pub trait Classifier {
    fn classify(&self, input: &BitVector) -> usize;
    /// Clauses evaluated by one call to `classify`.
    fn clause_evaluations(&self, input: &BitVector) -> u64;
}

impl Classifier for TsetlinMachine {
    fn classify(&self, input: &BitVector) -> usize {
        self.predict(input)
    }

    fn clause_evaluations(&self, _input: &BitVector) -> u64 {
        self.clause_evaluations_per_inference()
    }
}

impl Classifier for PresortedEnsemble {
    fn classify(&self, input: &BitVector) -> usize {
        PresortedEnsemble::classify(self, input)
    }

    fn clause_evaluations(&self, input: &BitVector) -> u64 {
        match self.layout.routing {
            RoutingMode::NearestMedoid => self.machines[self.route(input)].clause_evaluations_per_inference(),
            RoutingMode::AllMachinesArgmax => self
                .machines
                .iter()
                .map(TsetlinMachine::clause_evaluations_per_inference)
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub wall_time_s: f64,
    pub clause_evaluations: u64,
}

/// Single-threaded pass over `test`; the wall time covers classification only.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, test: &BinaryDataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let correct = test.iter().filter(|(x, y)| model.classify(x) == *y).count();
    let wall_time_s = start.elapsed().as_secs_f64();
    let clause_evaluations = test.points().iter().map(|x| model.clause_evaluations(x)).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        wall_time_s,
        clause_evaluations,
    })
}

/// Baseline: one machine over the whole training set.
pub fn train_baseline(
    train: &BinaryDataset,
    params: &TmParams,
    stop_on: Option<&BinaryDataset>,
) -> Result<(TsetlinMachine, UpdateStats)> {
    let mut tm = TsetlinMachine::new(params.clone(), train.features(), train.classes())?;
    let stats = tm.fit(train, stop_on)?;
    Ok((tm, stats))
}
