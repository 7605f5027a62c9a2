//! Clause storage for one class.
//!
//! Automaton states live in one flat array, `2F` per clause: literal `i` is
//! feature bit `i`, literal `F + i` its negation. Next to the states each
//! clause keeps two include masks (plain and negated literals) that are
//! flipped whenever a state crosses the boundary, so evaluating a clause is
//! a handful of word-wise ANDs.

use rand::Rng;

use crate::bitdata::{words_for, BitVector};
use crate::error::{contract, Result};

use super::automaton::{check_states, decrement, increment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Clauses without included literals output 1.
    Training,
    /// Clauses without included literals output 0.
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClauseBank {
    clauses: usize,
    features: usize,
    words: usize,
    states: u16,
    automata: Vec<u16>,
    include_pos: Vec<u64>,
    include_neg: Vec<u64>,
    included: Vec<u32>,
}

impl ClauseBank {
    /// Every automaton starts on the exclude side of the boundary.
    pub fn new(clauses: usize, features: usize, states: u16) -> Result<Self> {
        check_states(states)?;
        if clauses == 0 || clauses % 2 != 0 {
            return Err(contract(format!("clause count {clauses} must be even and positive")));
        }
        if features == 0 {
            return Err(contract("clauses need at least one feature"));
        }
        let words = words_for(features);
        Ok(Self {
            clauses,
            features,
            words,
            states,
            automata: vec![states / 2; clauses * 2 * features],
            include_pos: vec![0; clauses * words],
            include_neg: vec![0; clauses * words],
            included: vec![0; clauses],
        })
    }

    pub(crate) fn from_automata(
        clauses: usize,
        features: usize,
        states: u16,
        automata: Vec<u16>,
    ) -> Result<Self> {
        let mut bank = Self::new(clauses, features, states)?;
        if automata.len() != bank.automata.len() {
            return Err(contract("automata array has the wrong length"));
        }
        if let Some(&s) = automata.iter().find(|&&s| s == 0 || s > states) {
            return Err(contract(format!("automaton state {s} outside 1..={states}")));
        }
        bank.automata = automata;
        bank.rebuild_masks();
        Ok(bank)
    }

    fn rebuild_masks(&mut self) {
        self.include_pos.fill(0);
        self.include_neg.fill(0);
        self.included.fill(0);
        let half = self.states / 2;
        for j in 0..self.clauses {
            for l in 0..2 * self.features {
                if self.automata[j * 2 * self.features + l] > half {
                    self.set_include(j, l, true);
                }
            }
        }
    }

    pub fn clauses(&self) -> usize {
        self.clauses
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn states(&self) -> u16 {
        self.states
    }

    /// +1 for even clause positions, -1 for odd ones.
    #[inline]
    pub fn polarity(&self, clause: usize) -> i32 {
        if clause % 2 == 0 {
            1
        } else {
            -1
        }
    }

    /// The `2F` automaton states of `clause`.
    pub fn automata(&self, clause: usize) -> &[u16] {
        let l = 2 * self.features;
        &self.automata[clause * l..(clause + 1) * l]
    }

    pub(crate) fn all_automata(&self) -> &[u16] {
        &self.automata
    }

    pub fn included_literals(&self, clause: usize) -> u32 {
        self.included[clause]
    }

    pub fn set_state(&mut self, clause: usize, literal: usize, state: u16) -> Result<()> {
        if state == 0 || state > self.states {
            return Err(contract(format!("state {state} outside 1..={}", self.states)));
        }
        if literal >= 2 * self.features || clause >= self.clauses {
            return Err(contract("clause or literal out of range"));
        }
        self.automata[clause * 2 * self.features + literal] = state;
        self.set_include(clause, literal, state > self.states / 2);
        Ok(())
    }

    fn set_include(&mut self, clause: usize, literal: usize, on: bool) {
        let (masks, bit) = if literal < self.features {
            (&mut self.include_pos, literal)
        } else {
            (&mut self.include_neg, literal - self.features)
        };
        let word = &mut masks[clause * self.words + bit / 64];
        let mask = 1u64 << (bit % 64);
        let was = *word & mask != 0;
        if was != on {
            *word ^= mask;
            if on {
                self.included[clause] += 1;
            } else {
                self.included[clause] -= 1;
            }
        }
    }

    #[inline]
    fn up(&mut self, clause: usize, literal: usize) {
        let idx = clause * 2 * self.features + literal;
        let old = self.automata[idx];
        let new = increment(old, self.states);
        self.automata[idx] = new;
        if old == self.states / 2 && new != old {
            self.set_include(clause, literal, true);
        }
    }

    #[inline]
    fn down(&mut self, clause: usize, literal: usize) {
        let idx = clause * 2 * self.features + literal;
        let old = self.automata[idx];
        self.automata[idx] = decrement(old);
        if old == self.states / 2 + 1 {
            self.set_include(clause, literal, false);
        }
    }

    /// Conjunction of the included literals on `input`.
    #[inline]
    pub fn evaluate(&self, clause: usize, input: &BitVector, mode: Mode) -> bool {
        debug_assert_eq!(input.width(), self.features);
        if self.included[clause] == 0 {
            return mode == Mode::Training;
        }
        let base = clause * self.words;
        let pos = &self.include_pos[base..base + self.words];
        let neg = &self.include_neg[base..base + self.words];
        pos.iter()
            .zip(neg)
            .zip(input.words())
            .all(|((&p, &n), &x)| p & !x == 0 && n & x == 0)
    }

    pub fn try_evaluate(&self, clause: usize, input: &BitVector, mode: Mode) -> Result<bool> {
        if input.width() != self.features {
            return Err(crate::Error::WidthMismatch {
                left: self.features,
                right: input.width(),
            });
        }
        Ok(self.evaluate(clause, input, mode))
    }

    /// Sum of polarity over active clauses.
    pub fn class_sum(&self, input: &BitVector, mode: Mode) -> i32 {
        (0..self.clauses)
            .filter(|&j| self.evaluate(j, input, mode))
            .map(|j| self.polarity(j))
            .sum()
    }

    /// Type I feedback (pattern reinforcement).
    ///
    /// With `clause_output` set, true literals step toward include with
    /// probability `(s-1)/s` and false literals toward exclude with
    /// probability `1/s`. Otherwise every literal steps toward exclude with
    /// probability `1/s`.
    pub fn type_i_feedback<R: Rng + ?Sized>(
        &mut self,
        clause: usize,
        input: &BitVector,
        clause_output: bool,
        rare: &RareEvents,
        rng: &mut R,
    ) {
        let literals = 2 * self.features;
        let mut next = rare.first(rng);
        if !clause_output {
            while next < literals {
                self.down(clause, next);
                next = rare.after(next, rng);
            }
            return;
        }
        for l in 0..literals {
            let hit = l == next;
            if hit {
                next = rare.after(l, rng);
            }
            if literal_value(input, l, self.features) {
                if !hit {
                    self.up(clause, l);
                }
            } else if hit {
                self.down(clause, l);
            }
        }
    }

    /// Type II feedback (false-positive suppression): when the clause is
    /// active, every excluded literal that is false on `input` steps toward
    /// include.
    pub fn type_ii_feedback(&mut self, clause: usize, input: &BitVector, clause_output: bool) {
        if !clause_output {
            return;
        }
        let base = clause * self.words;
        let xs = input.words();
        let tail = crate::bitdata::tail_mask(self.features);
        let mut candidates = Vec::new();
        for w in 0..self.words {
            let valid = if w + 1 == self.words { tail } else { u64::MAX };
            // plain literal i is false where x_i = 0
            let mut plain = !xs[w] & !self.include_pos[base + w] & valid;
            // negated literal is false where x_i = 1
            let mut negated = xs[w] & !self.include_neg[base + w];
            while plain != 0 {
                candidates.push(w * 64 + plain.trailing_zeros() as usize);
                plain &= plain - 1;
            }
            while negated != 0 {
                candidates.push(self.features + w * 64 + negated.trailing_zeros() as usize);
                negated &= negated - 1;
            }
        }
        for l in candidates {
            self.up(clause, l);
        }
    }
}

#[inline]
pub(crate) fn literal_value(input: &BitVector, literal: usize, features: usize) -> bool {
    if literal < features {
        input.words()[literal / 64] >> (literal % 64) & 1 == 1
    } else {
        let i = literal - features;
        input.words()[i / 64] >> (i % 64) & 1 == 0
    }
}

/// Positions of independent Bernoulli(p) events, drawn by geometric skipping.
#[derive(Debug, Clone, Copy)]
pub struct RareEvents {
    p: f64,
    ln_q: f64,
}

impl RareEvents {
    pub fn new(p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p), "probability {p} out of range");
        Self {
            p,
            ln_q: (1.0 - p).ln(),
        }
    }

    /// Events with probability `1/s`.
    pub fn for_specificity(s: f64) -> Self {
        Self::new(1.0 / s)
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    #[inline]
    fn gap<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.p <= 0.0 {
            return usize::MAX;
        }
        if self.p >= 1.0 {
            return 0;
        }
        let u: f64 = rng.random();
        if u <= 0.0 {
            return usize::MAX;
        }
        let g = (u.ln() / self.ln_q).floor();
        if g >= usize::MAX as f64 {
            usize::MAX
        } else {
            g as usize
        }
    }

    #[inline]
    pub fn first<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.gap(rng)
    }

    #[inline]
    pub fn after<R: Rng + ?Sized>(&self, position: usize, rng: &mut R) -> usize {
        position.saturating_add(1).saturating_add(self.gap(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Generator stuck at zero: no rare event ever fires.
    struct Zero;

    impl RngCore for Zero {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn bits(s: &str) -> BitVector {
        BitVector::parse(s).unwrap()
    }

    /// Clause over (X1, X2, X3) including X2 and not-X1.
    fn fig_clause() -> ClauseBank {
        let mut bank = ClauseBank::new(2, 3, 6).unwrap();
        bank.set_state(0, 1, 4).unwrap();
        bank.set_state(0, 3, 5).unwrap();
        bank
    }

    #[test]
    fn subpattern_clause() {
        let bank = fig_clause();
        assert!(bank.evaluate(0, &bits("010"), Mode::Inference));
        assert!(!bank.evaluate(0, &bits("110"), Mode::Inference));
        for input in ["000", "001", "100", "101", "111"] {
            assert!(!bank.evaluate(0, &bits(input), Mode::Inference), "{input}");
        }
        assert!(bank.evaluate(0, &bits("011"), Mode::Inference));
    }

    #[test]
    fn empty_clause_depends_on_mode() {
        let bank = fig_clause();
        assert!(bank.evaluate(1, &bits("101"), Mode::Training));
        assert!(!bank.evaluate(1, &bits("101"), Mode::Inference));
        assert!(bank.try_evaluate(0, &bits("10"), Mode::Inference).is_err());
    }

    #[test]
    fn class_sums_cancel() {
        let mut bank = ClauseBank::new(4, 2, 10).unwrap();
        assert_eq!(bank.class_sum(&bits("11"), Mode::Inference), 0);
        // clause 0 (+1) needs x0, clause 1 (-1) needs x1
        bank.set_state(0, 0, 6).unwrap();
        bank.set_state(1, 1, 6).unwrap();
        assert_eq!(bank.class_sum(&bits("11"), Mode::Inference), 0);
        assert_eq!(bank.class_sum(&bits("10"), Mode::Inference), 1);
        assert_eq!(bank.class_sum(&bits("01"), Mode::Inference), -1);
        // clause 2 (+1) needs not-x1, clause 3 (-1) needs x0 and not-x1
        bank.set_state(2, 3, 6).unwrap();
        bank.set_state(3, 0, 6).unwrap();
        bank.set_state(3, 3, 6).unwrap();
        // hand trace for input 10: c0 on, c1 off, c2 on, c3 on => 1 + 1 - 1
        assert_eq!(bank.class_sum(&bits("10"), Mode::Inference), 1);
        // input 00: only c2 => +1
        assert_eq!(bank.class_sum(&bits("00"), Mode::Inference), 1);
        // input 01: c1 => -1
        assert_eq!(bank.class_sum(&bits("01"), Mode::Inference), -1);
    }

    #[test]
    fn type_i_without_rare_events() {
        let rare = RareEvents::for_specificity(f64::INFINITY);
        let mut bank = fig_clause();
        let before = bank.automata(0).to_vec();
        bank.type_i_feedback(0, &bits("110"), false, &rare, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(bank.automata(0), &before[..]);
    }

    #[test]
    fn type_i_forced_reward() {
        let rare = RareEvents::for_specificity(4.0);
        let mut bank = fig_clause();
        bank.type_i_feedback(0, &bits("010"), true, &rare, &mut Zero);
        // true literals X2, not-X1, not-X3 step up; false ones untouched
        assert_eq!(bank.automata(0), &[3, 5, 3, 6, 3, 4]);
        assert_eq!(bank.included_literals(0), 3);
    }

    #[test]
    fn type_i_exclude_rate() {
        let s = 4.0;
        let rare = RareEvents::for_specificity(s);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 10_000;
        let mut pushes = 0u64;
        let mut total = 0u64;
        for _ in 0..trials {
            let mut bank = ClauseBank::new(2, 8, 100).unwrap();
            for l in 0..16 {
                bank.set_state(0, l, 60).unwrap();
            }
            bank.type_i_feedback(0, &BitVector::zeros(8), false, &rare, &mut rng);
            pushes += bank.automata(0).iter().filter(|&&s| s == 59).count() as u64;
            total += 16;
        }
        let p = 1.0 / s;
        let mean = total as f64 * p;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        assert!((pushes as f64 - mean).abs() < 3.0 * sigma, "{pushes} vs {mean}");
    }

    #[test]
    fn type_ii_hand_trace() {
        let mut bank = ClauseBank::new(2, 3, 6).unwrap();
        bank.set_state(0, 1, 4).unwrap();
        let input = bits("010");
        assert!(bank.evaluate(0, &input, Mode::Training));
        bank.type_ii_feedback(0, &input, false);
        assert_eq!(bank.automata(0), &[3, 4, 3, 3, 3, 3]);
        bank.type_ii_feedback(0, &input, true);
        // false literals: X1, X3 and not-X2; X2 is included and left alone
        assert_eq!(bank.automata(0), &[4, 4, 4, 3, 4, 3]);
        assert!(!bank.evaluate(0, &input, Mode::Training));
    }

    fn naive_eval(bank: &ClauseBank, clause: usize, input: &BitVector, mode: Mode) -> bool {
        let f = bank.features();
        let states = bank.automata(clause);
        let mut any = false;
        for (l, &s) in states.iter().enumerate() {
            if s > bank.states() / 2 {
                any = true;
                let value = if l < f { input.get(l) } else { !input.get(l - f) };
                if !value {
                    return false;
                }
            }
        }
        any || mode == Mode::Training
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn packed_eval_matches_literal_loop(seed in any::<u64>(), features in 1usize..150, density in 0.0f64..0.05) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bank = ClauseBank::new(4, features, 8).unwrap();
            for j in 0..4 {
                for l in 0..2 * features {
                    let s = if rng.random_bool(density) { rng.random_range(5..=8) } else { rng.random_range(1..=4) };
                    bank.set_state(j, l, s).unwrap();
                }
            }
            for _ in 0..40 {
                let mut x = BitVector::from_bits((0..features).map(|_| rng.random::<bool>()));
                if rng.random_bool(0.5) {
                    // make clause 0 likely to fire
                    for l in 0..2 * features {
                        if bank.automata(0)[l] > 4 {
                            if l < features { x.set(l, true) } else { x.set(l - features, false) }
                        }
                    }
                }
                for j in 0..4 {
                    for mode in [Mode::Training, Mode::Inference] {
                        prop_assert_eq!(bank.evaluate(j, &x, mode), naive_eval(&bank, j, &x, mode));
                    }
                }
            }
        }

        #[test]
        fn feedback_keeps_states_in_range(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rare = RareEvents::for_specificity(3.0);
            let mut bank = ClauseBank::new(2, 5, 4).unwrap();
            for _ in 0..500 {
                let x = BitVector::from_bits((0..5).map(|_| rng.random::<bool>()));
                let j = rng.random_range(0..2);
                let out = bank.evaluate(j, &x, Mode::Training);
                if rng.random() {
                    bank.type_i_feedback(j, &x, out, &rare, &mut rng);
                } else {
                    bank.type_ii_feedback(j, &x, out);
                }
                prop_assert!(bank.all_automata().iter().all(|&s| (1..=4).contains(&s)));
                let recount: u32 = bank.automata(j).iter().filter(|&&s| s > 2).count() as u32;
                prop_assert_eq!(recount, bank.included_literals(j));
            }
        }
    }
}
