use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitdata::{BinaryDataset, BitVector};
use crate::error::{contract, Error, Result};

use super::clause::{ClauseBank, Mode, RareEvents};

/// Hyperparameters of one multi-class machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmParams {
    pub clauses_per_class: usize,
    /// Vote clamp `T`.
    pub threshold: u32,
    /// Specificity `s`.
    pub specificity: f64,
    /// Automaton states `N`.
    pub states: u16,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TmParams {
    fn default() -> Self {
        Self {
            clauses_per_class: 4000,
            threshold: 25,
            specificity: 10.0,
            states: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TmParams {
    pub fn validate(&self) -> Result<()> {
        if self.clauses_per_class == 0 || self.clauses_per_class % 2 != 0 {
            return Err(Error::Config(format!(
                "clauses_per_class {} must be even and positive",
                self.clauses_per_class
            )));
        }
        if self.threshold == 0 {
            return Err(Error::Config("threshold T must be positive".into()));
        }
        if self.specificity.is_nan() || self.specificity <= 1.0 {
            return Err(Error::Config(format!("specificity s = {} must exceed 1", self.specificity)));
        }
        if self.states < 2 || self.states % 2 != 0 || self.states == u16::MAX {
            return Err(Error::Config(format!("state count N = {} must be even and at least 2", self.states)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Work done by one or more training epochs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochCost {
    /// Clauses passed through the feedback step: every clause of the target
    /// class and of the sampled negative class, per datapoint.
    pub clause_updates: u64,
    /// Clauses that the per-clause gate selected and that actually received
    /// Type I or Type II feedback.
    pub feedback_applied: u64,
}

impl std::ops::AddAssign for EpochCost {
    fn add_assign(&mut self, rhs: Self) {
        self.clause_updates += rhs.clause_updates;
        self.feedback_applied += rhs.feedback_applied;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub clause_updates: u64,
    pub feedback_applied: u64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub wall_time_s: f64,
}

impl UpdateStats {
    pub fn absorb(&mut self, other: &UpdateStats) {
        self.clause_updates += other.clause_updates;
        self.feedback_applied += other.feedback_applied;
        self.epochs_run = self.epochs_run.max(other.epochs_run);
        self.early_stopped |= other.early_stopped;
        self.wall_time_s += other.wall_time_s;
    }
}

/// Two-class framing: class 1 iff the class sum exceeds zero.
pub fn mono_predict(class_sum: i32) -> usize {
    usize::from(class_sum > 0)
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(sums: &[i32]) -> usize {
    let mut best = 0;
    for (c, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = c;
        }
    }
    best
}

/// Multi-class Tsetlin machine: one clause bank per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TsetlinMachine {
    params: TmParams,
    banks: Vec<ClauseBank>,
}

impl TsetlinMachine {
    pub fn new(params: TmParams, features: usize, classes: usize) -> Result<Self> {
        params.validate()?;
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        let banks = (0..classes)
            .map(|_| ClauseBank::new(params.clauses_per_class, features, params.states))
            .collect::<Result<_>>()?;
        Ok(Self { params, banks })
    }

    pub(crate) fn from_banks(params: TmParams, banks: Vec<ClauseBank>) -> Result<Self> {
        params.validate()?;
        if banks.len() < 2 {
            return Err(Error::TooFewClasses(banks.len()));
        }
        Ok(Self { params, banks })
    }

    pub fn params(&self) -> &TmParams {
        &self.params
    }

    pub fn classes(&self) -> usize {
        self.banks.len()
    }

    pub fn features(&self) -> usize {
        self.banks[0].features()
    }

    pub fn clauses_per_class(&self) -> usize {
        self.params.clauses_per_class
    }

    pub fn bank(&self, class: usize) -> &ClauseBank {
        &self.banks[class]
    }

    pub fn bank_mut(&mut self, class: usize) -> &mut ClauseBank {
        &mut self.banks[class]
    }

    /// Clause evaluations performed by one call to [`predict`](Self::predict).
    pub fn clause_evaluations_per_inference(&self) -> u64 {
        (self.params.clauses_per_class * self.classes()) as u64
    }

    pub fn class_sum(&self, class: usize, input: &BitVector) -> i32 {
        self.banks[class].class_sum(input, Mode::Inference)
    }

    pub fn class_sums(&self, input: &BitVector) -> Vec<i32> {
        self.banks
            .iter()
            .map(|b| b.class_sum(input, Mode::Inference))
            .collect()
    }

    pub fn predict(&self, input: &BitVector) -> usize {
        argmax(&self.class_sums(input))
    }

    pub fn accuracy(&self, data: &BinaryDataset) -> Option<f64> {
        if data.is_empty() {
            return None;
        }
        let correct = data.iter().filter(|(x, y)| self.predict(x) == *y).count();
        Some(correct as f64 / data.len() as f64)
    }

    fn check_data(&self, data: &BinaryDataset) -> Result<()> {
        if data.classes() != self.classes() {
            return Err(contract(format!(
                "dataset has {} classes, machine has {}",
                data.classes(),
                self.classes()
            )));
        }
        if !data.is_empty() && data.features() != self.features() {
            return Err(Error::WidthMismatch {
                left: self.features(),
                right: data.features(),
            });
        }
        Ok(())
    }

    /// Feedback for one labeled datapoint.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        input: &BitVector,
        target: usize,
        rare: &RareEvents,
        rng: &mut R,
    ) -> EpochCost {
        let t = self.params.threshold as i32;
        let classes = self.classes();
        let mut cost = EpochCost::default();

        let sum = self.banks[target].class_sum(input, Mode::Training).clamp(-t, t);
        let p = f64::from(t - sum) / f64::from(2 * t);
        cost += self.feedback(target, input, p, true, rare, rng);

        let mut negative = rng.random_range(0..classes - 1);
        if negative >= target {
            negative += 1;
        }
        let sum = self.banks[negative].class_sum(input, Mode::Training).clamp(-t, t);
        let p = f64::from(t + sum) / f64::from(2 * t);
        cost += self.feedback(negative, input, p, false, rare, rng);
        cost
    }

    /// With `is_target`, positive clauses get Type I and negative ones Type II;
    /// the roles swap for the negative class. Each clause is gated with
    /// probability `p`.
    fn feedback<R: Rng + ?Sized>(
        &mut self,
        class: usize,
        input: &BitVector,
        p: f64,
        is_target: bool,
        rare: &RareEvents,
        rng: &mut R,
    ) -> EpochCost {
        let bank = &mut self.banks[class];
        let clauses = bank.clauses();
        let mut applied = 0;
        for j in 0..clauses {
            if rng.random::<f64>() >= p {
                continue;
            }
            applied += 1;
            let output = bank.evaluate(j, input, Mode::Training);
            if (bank.polarity(j) > 0) == is_target {
                bank.type_i_feedback(j, input, output, rare, rng);
            } else {
                bank.type_ii_feedback(j, input, output);
            }
        }
        EpochCost {
            clause_updates: clauses as u64,
            feedback_applied: applied,
        }
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn train_epoch<R: Rng + ?Sized>(&mut self, data: &BinaryDataset, rng: &mut R) -> Result<EpochCost> {
        self.check_data(data)?;
        let rare = RareEvents::for_specificity(self.params.specificity);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut cost = EpochCost::default();
        for i in order {
            cost += self.train_step(data.point(i), data.label(i), &rare, rng);
        }
        Ok(cost)
    }

    /// Trains for up to `params.epochs` epochs from `params.seed`.
    ///
    /// With `stop_on`, accuracy on that set is measured after every epoch
    /// and training ends once it reaches 100%; the measurement is part of
    /// the reported wall time.
    pub fn fit(&mut self, data: &BinaryDataset, stop_on: Option<&BinaryDataset>) -> Result<UpdateStats> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let mut stats = UpdateStats::default();
        for _ in 0..self.params.epochs {
            let cost = self.train_epoch(data, &mut rng)?;
            stats.clause_updates += cost.clause_updates;
            stats.feedback_applied += cost.feedback_applied;
            stats.epochs_run += 1;
            if let Some(check) = stop_on {
                if self.accuracy(check) == Some(1.0) {
                    stats.early_stopped = true;
                    break;
                }
            }
        }
        stats.wall_time_s = start.elapsed().as_secs_f64();
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(clauses: usize, seed: u64) -> TmParams {
        TmParams {
            clauses_per_class: clauses,
            threshold: 5,
            specificity: 3.0,
            states: 100,
            epochs: 50,
            seed,
        }
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(argmax(&[3, -1, 0]), 0);
        assert_eq!(argmax(&[2, 2]), 0);
        assert_eq!(argmax(&[-4, 1, 1]), 1);
        assert_eq!(mono_predict(-3), 0);
        assert_eq!(mono_predict(0), 0);
        assert_eq!(mono_predict(2), 1);
    }

    #[test]
    fn needs_two_classes() {
        assert!(matches!(
            TsetlinMachine::new(params(10, 0), 4, 1),
            Err(Error::TooFewClasses(1))
        ));
        assert!(TsetlinMachine::new(params(9, 0), 4, 2).is_err());
    }

    /// Target sum at T gives the target class no feedback; a sum of -T does
    /// the same for the negative class.
    #[test]
    fn clamp_endpoints_disable_feedback() {
        let mut tm = TsetlinMachine::new(params(10, 0), 2, 2).unwrap();
        let t = tm.params.threshold as usize;
        // make class 0's positive clauses fire on x0 and class 1's negative clauses fire too
        for j in (0..10).step_by(2) {
            tm.bank_mut(0).set_state(j, 0, 60).unwrap();
            tm.bank_mut(0).set_state(j + 1, 1, 60).unwrap();
            tm.bank_mut(1).set_state(j, 1, 60).unwrap();
            tm.bank_mut(1).set_state(j + 1, 0, 60).unwrap();
        }
        let x = BitVector::parse("10").unwrap();
        assert_eq!(tm.bank(0).class_sum(&x, Mode::Training), t as i32);
        assert_eq!(tm.bank(1).class_sum(&x, Mode::Training), -(t as i32));
        let before = tm.clone();
        let rare = RareEvents::for_specificity(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let cost = tm.train_step(&x, 0, &rare, &mut rng);
            assert_eq!(cost.feedback_applied, 0);
            assert_eq!(cost.clause_updates, 20);
        }
        assert_eq!(tm, before);
    }

    fn single_bit_dataset() -> BinaryDataset {
        let points: Vec<BitVector> = (0..8u8)
            .map(|i| BitVector::from_bits([i < 4, i & 1 == 1, i & 2 == 2, i & 4 == 4]))
            .collect();
        let labels = (0..8).map(|i| usize::from(i >= 4)).collect();
        BinaryDataset::new(points, labels, 2).unwrap()
    }

    #[test]
    fn learns_single_bit_rule() {
        let data = single_bit_dataset();
        let mut tm = TsetlinMachine::new(params(10, 17), 4, 2).unwrap();
        let stats = tm.fit(&data, Some(&data)).unwrap();
        assert_eq!(tm.accuracy(&data), Some(1.0));
        assert!(stats.epochs_run <= 50);
        assert!(stats.early_stopped);
        assert!(stats.clause_updates <= (10 * 2 * 8 * stats.epochs_run) as u64);
    }

    #[test]
    fn determinism() {
        let data = single_bit_dataset();
        let mut a = TsetlinMachine::new(params(10, 5), 4, 2).unwrap();
        let mut b = a.clone();
        let sa = a.fit(&data, None).unwrap();
        let sb = b.fit(&data, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.clause_updates, sb.clause_updates);
        assert_eq!(sa.feedback_applied, sb.feedback_applied);
    }

    #[test]
    fn inactive_clause_does_not_change_prediction() {
        let data = single_bit_dataset();
        let mut tm = TsetlinMachine::new(params(10, 5), 4, 2).unwrap();
        tm.fit(&data, None).unwrap();
        let preds: Vec<usize> = data.points().iter().map(|x| tm.predict(x)).collect();
        // two extra clause pairs whose literals contradict: never active
        let mut banks = Vec::new();
        for c in 0..2 {
            let old = tm.bank(c);
            let mut states = old.all_automata().to_vec();
            let mut extra = vec![old.states() / 2; 2 * 2 * 4];
            for j in 0..2 {
                extra[j * 8] = old.states();
                extra[j * 8 + 4] = old.states();
            }
            states.extend(extra);
            banks.push(ClauseBank::from_automata(12, 4, old.states(), states).unwrap());
        }
        let bigger = TsetlinMachine::from_banks(TmParams { clauses_per_class: 12, ..tm.params.clone() }, banks).unwrap();
        let again: Vec<usize> = data.points().iter().map(|x| bigger.predict(x)).collect();
        assert_eq!(preds, again);
    }

    #[test]
    fn update_bound_holds() {
        let data = single_bit_dataset();
        let mut tm = TsetlinMachine::new(params(10, 1), 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cost = tm.train_epoch(&data, &mut rng).unwrap();
        assert!(cost.clause_updates <= (10 * 2 * data.len()) as u64);
        assert!(cost.feedback_applied <= cost.clause_updates);
    }
}
