//! Slot-level channel model: which users transmit, and what the base
//! station observes.
//!
//! The base station cannot decode collided transmissions; all it sees per
//! slot is one of three classes: idle, singleton, or collision.

use crate::rng::RngStream;

/// Observable class of a slot, determined by its degree (the number of
/// simultaneous transmissions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotClass {
    Idle,
    Singleton,
    Collision,
}

impl SlotClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SlotClass::Idle => "idle",
            SlotClass::Singleton => "singleton",
            SlotClass::Collision => "collision",
        }
    }
}

/// Maps a slot degree to its observable class: 0 is idle, 1 a singleton,
/// 2 or more a collision.
pub fn classify(degree: usize) -> SlotClass {
    match degree {
        0 => SlotClass::Idle,
        1 => SlotClass::Singleton,
        _ => SlotClass::Collision,
    }
}

/// The batch of contending users and their resolution state for one run.
///
/// Resolution flags are monotone: once a user is resolved it stays
/// resolved for the rest of the run and stops transmitting.
#[derive(Debug, Clone)]
pub struct UserPopulation {
    resolved: Vec<bool>,
    resolved_count: u32,
}

impl UserPopulation {
    pub fn new(n_total: u32) -> Self {
        Self {
            resolved: vec![false; n_total as usize],
            resolved_count: 0,
        }
    }

    pub fn n_total(&self) -> u32 {
        self.resolved.len() as u32
    }

    pub fn resolved_count(&self) -> u32 {
        self.resolved_count
    }

    pub fn unresolved_count(&self) -> u32 {
        self.n_total() - self.resolved_count
    }

    pub fn is_resolved(&self, user: u32) -> bool {
        self.resolved[user as usize]
    }

    /// Marks a user resolved; returns false if it already was.
    pub fn mark_resolved(&mut self, user: u32) -> bool {
        let flag = &mut self.resolved[user as usize];
        if *flag {
            return false;
        }
        *flag = true;
        self.resolved_count += 1;
        true
    }
}

/// One simulated slot: the users that transmitted in it and the class the
/// base station observed.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub round_index: u32,
    pub slot_index: u32,
    pub access_prob: f64,
    pub contributors: Vec<u32>,
    pub observation: SlotClass,
}

/// Simulates one slot: every currently unresolved user transmits
/// independently with probability `p`; resolved users never transmit.
///
/// One uniform draw is consumed per unresolved user, in user-id order, so
/// the draw sequence is a pure function of (population state, p, stream).
pub fn simulate_slot(
    population: &UserPopulation,
    round_index: u32,
    slot_index: u32,
    p: f64,
    rng: &mut RngStream,
) -> SlotRecord {
    assert!(p > 0.0 && p <= 1.0, "access probability {p} outside (0, 1]");
    let mut contributors = Vec::new();
    for (user, resolved) in population.resolved.iter().enumerate() {
        if !resolved && rng.bernoulli(p) {
            contributors.push(user as u32);
        }
    }
    let observation = classify(contributors.len());
    SlotRecord {
        round_index,
        slot_index,
        access_prob: p,
        contributors,
        observation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_degrees() {
        assert_eq!(classify(0), SlotClass::Idle);
        assert_eq!(classify(1), SlotClass::Singleton);
        assert_eq!(classify(7), SlotClass::Collision);
    }

    #[test]
    fn no_contenders_gives_idle() {
        let mut pop = UserPopulation::new(3);
        for u in 0..3 {
            pop.mark_resolved(u);
        }
        let mut rng = RngStream::new(1);
        let rec = simulate_slot(&pop, 1, 1, 0.9, &mut rng);
        assert_eq!(rec.observation, SlotClass::Idle);
        assert!(rec.contributors.is_empty());
    }

    #[test]
    fn certain_transmission_collides_all() {
        let pop = UserPopulation::new(3);
        let mut rng = RngStream::new(1);
        let rec = simulate_slot(&pop, 1, 1, 1.0, &mut rng);
        assert_eq!(rec.observation, SlotClass::Collision);
        assert_eq!(rec.contributors, vec![0, 1, 2]);
    }

    #[test]
    fn resolved_users_never_contribute() {
        let mut pop = UserPopulation::new(10);
        pop.mark_resolved(2);
        pop.mark_resolved(7);
        let mut rng = RngStream::new(99);
        for slot in 0..200 {
            let rec = simulate_slot(&pop, 1, slot, 0.8, &mut rng);
            assert!(!rec.contributors.contains(&2));
            assert!(!rec.contributors.contains(&7));
        }
    }

    #[test]
    fn mark_resolved_is_monotone() {
        let mut pop = UserPopulation::new(2);
        assert!(pop.mark_resolved(0));
        assert!(!pop.mark_resolved(0));
        assert_eq!(pop.resolved_count(), 1);
        assert_eq!(pop.unresolved_count(), 1);
    }

    /// Two users at p = 1/2: exact class probabilities are (1/4, 1/2, 1/4).
    /// Empirical frequencies over 1e5 slots must sit within three standard
    /// errors of the exact values.
    #[test]
    fn two_user_class_frequencies() {
        let pop = UserPopulation::new(2);
        let mut rng = RngStream::new(2024);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for slot in 0..n {
            let rec = simulate_slot(&pop, 1, slot as u32, 0.5, &mut rng);
            let k = match rec.observation {
                SlotClass::Idle => 0,
                SlotClass::Singleton => 1,
                SlotClass::Collision => 2,
            };
            counts[k] += 1;
        }
        let expected = [0.25, 0.5, 0.25];
        for (count, exp) in counts.iter().zip(expected) {
            let freq = *count as f64 / n as f64;
            let se = (exp * (1.0 - exp) / n as f64).sqrt();
            assert!(
                (freq - exp).abs() <= 3.0 * se,
                "freq {freq} vs expected {exp} (3se = {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn identical_seeds_give_identical_slot_sequences() {
        let run = |seed: u64| {
            let pop = UserPopulation::new(20);
            let mut rng = RngStream::new(seed);
            (0..50)
                .map(|j| simulate_slot(&pop, 1, j, 0.3, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
