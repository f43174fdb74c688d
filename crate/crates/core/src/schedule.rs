//! Slot access probability schedules.
//!
//! The first round sweeps the access probability down a geometric ramp so
//! the slot classes traverse the collision-to-idle transient that carries
//! the information about the user count. Later rounds hold a constant
//! probability tuned to a target expected slot degree.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid {name}: {value} (must be {requirement})")]
    InvalidParam {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error(
        "collision probability {target} unreachable for n_min={n_min} at any access probability"
    )]
    Infeasible { n_min: u32, target: f64 },
}

/// Schedule tunables: the first-round ramp (p0, alpha), the target
/// expected slot degree for later rounds (beta), and the design inputs
/// that fix p0 (n_min, target_collision_prob).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub p0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_min: u32,
    pub target_collision_prob: f64,
}

impl ScheduleParams {
    pub fn new(
        p0: f64,
        alpha: f64,
        beta: f64,
        n_min: u32,
        target_collision_prob: f64,
    ) -> Result<Self, ScheduleError> {
        if !(p0 > 0.0 && p0 <= 1.0) {
            return Err(ScheduleError::InvalidParam {
                name: "p0",
                value: p0,
                requirement: "in (0, 1]",
            });
        }
        if !(alpha > 1.0) {
            return Err(ScheduleError::InvalidParam {
                name: "alpha",
                value: alpha,
                requirement: "> 1",
            });
        }
        if !(beta > 0.0) {
            return Err(ScheduleError::InvalidParam {
                name: "beta",
                value: beta,
                requirement: "> 0",
            });
        }
        if n_min < 1 {
            return Err(ScheduleError::InvalidParam {
                name: "n_min",
                value: n_min as f64,
                requirement: ">= 1",
            });
        }
        if !(target_collision_prob > 0.0 && target_collision_prob < 1.0) {
            return Err(ScheduleError::InvalidParam {
                name: "target_collision_prob",
                value: target_collision_prob,
                requirement: "in (0, 1)",
            });
        }
        Ok(Self {
            p0,
            alpha,
            beta,
            n_min,
            target_collision_prob,
        })
    }
}

/// Access probability for slot `j` (1-based) of the first round:
/// `p0 / alpha^j`, strictly decreasing in `j`.
pub fn initial_round_prob(j: u32, params: &ScheduleParams) -> f64 {
    assert!(j >= 1, "slot index is 1-based");
    params.p0 / params.alpha.powi(j as i32)
}

/// Constant access probability for a resolution round with an estimated
/// `n_hat_contending` contenders: `beta / n_hat`, clamped to 1 when fewer
/// contenders than the target slot degree remain.
pub fn subsequent_round_prob(
    n_hat_contending: f64,
    params: &ScheduleParams,
) -> Result<f64, ScheduleError> {
    if !(n_hat_contending > 0.0) {
        return Err(ScheduleError::InvalidParam {
            name: "n_hat_contending",
            value: n_hat_contending,
            requirement: "> 0",
        });
    }
    Ok((params.beta / n_hat_contending).min(1.0))
}

/// Probability that a slot is a collision when `n` users each transmit
/// independently with probability `p`:
/// `1 - (1-p)^n - n p (1-p)^(n-1)`.
pub fn collision_prob(p: f64, n: u32) -> f64 {
    let n = n as f64;
    let q = 1.0 - p;
    1.0 - q.powf(n) - n * p * q.powf(n - 1.0)
}

/// Smallest p0 for which a slot seen by at least `n_min` contenders is a
/// collision with probability at least `target_collision_prob`.
///
/// The collision probability is nondecreasing in p0 for fixed n_min, so
/// the floor is located by bisection on (0, 1) to absolute tolerance 1e-6;
/// the returned value satisfies the inequality and sits within 1e-6 of the
/// infimum.
pub fn collision_floor_p0(n_min: u32, target_collision_prob: f64) -> Result<f64, ScheduleError> {
    if n_min < 1 {
        return Err(ScheduleError::InvalidParam {
            name: "n_min",
            value: n_min as f64,
            requirement: ">= 1",
        });
    }
    if !(target_collision_prob > 0.0 && target_collision_prob < 1.0) {
        return Err(ScheduleError::InvalidParam {
            name: "target_collision_prob",
            value: target_collision_prob,
            requirement: "in (0, 1)",
        });
    }
    const TOL: f64 = 1e-6;
    if collision_prob(1.0, n_min) < target_collision_prob {
        // With one contender no slot can collide; n_min >= 2 always reaches
        // probability 1 at p0 = 1.
        return Err(ScheduleError::Infeasible {
            n_min,
            target: target_collision_prob,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // invariant: collision_prob(lo) < target <= collision_prob(hi)
    while hi - lo > TOL {
        let mid = 0.5 * (lo + hi);
        if collision_prob(mid, n_min) >= target_collision_prob {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_params() -> ScheduleParams {
        ScheduleParams::new(0.047, 1.02, 2.9, 100, 0.95).unwrap()
    }

    #[test]
    fn initial_prob_first_slot() {
        let p = initial_round_prob(1, &paper_params());
        assert!((p - 0.047 / 1.02).abs() < 1e-12);
        assert!((p - 0.046078).abs() < 1e-6);
    }

    #[test]
    fn initial_prob_direct_substitution() {
        let params = ScheduleParams::new(0.5, 2.0, 2.9, 100, 0.95).unwrap();
        assert!((initial_round_prob(1, &params) - 0.25).abs() < 1e-15);
    }

    /// Slot 100 of the ramp, cross-checked against repeated division.
    #[test]
    fn initial_prob_deep_slot_matches_repeated_division() {
        let params = paper_params();
        let mut expected = 0.047;
        for _ in 0..100 {
            expected /= 1.02;
        }
        let got = initial_round_prob(100, &params);
        assert!((got - expected).abs() / expected < 1e-12);
        assert!((got - 0.006488).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn initial_prob_strictly_decreasing(
            p0 in 0.001f64..1.0,
            alpha in 1.0001f64..3.0,
            j in 1u32..500,
        ) {
            let params = ScheduleParams::new(p0, alpha, 2.9, 100, 0.95).unwrap();
            let a = initial_round_prob(j, &params);
            let b = initial_round_prob(j + 1, &params);
            prop_assert!(b < a);
            prop_assert!(a <= p0);
            prop_assert!(b > 0.0);
        }

        /// Expected slot degree is preserved whenever the probability is
        /// not clamped: p * n == beta.
        #[test]
        fn subsequent_prob_preserves_expected_degree(n_hat in 2.9f64..1e6) {
            let params = paper_params();
            let p = subsequent_round_prob(n_hat, &params).unwrap();
            prop_assert!((p * n_hat - 2.9).abs() < 1e-9);
        }
    }

    #[test]
    fn subsequent_prob_examples() {
        let params = paper_params();
        assert!((subsequent_round_prob(1000.0, &params).unwrap() - 0.0029).abs() < 1e-15);
        assert_eq!(subsequent_round_prob(2.9, &params).unwrap(), 1.0);
        assert!((subsequent_round_prob(5.0, &params).unwrap() - 0.58).abs() < 1e-15);
        assert!(subsequent_round_prob(0.0, &params).is_err());
        assert!(subsequent_round_prob(-3.0, &params).is_err());
    }

    #[test]
    fn p0_floor_matches_paper_design_point() {
        let p0 = collision_floor_p0(100, 0.95).unwrap();
        assert!(
            (0.045..=0.049).contains(&p0),
            "p0 = {p0} outside the design window"
        );
        // The found floor satisfies the inequality; one tolerance below violates it.
        assert!(collision_prob(p0, 100) >= 0.95);
        assert!(collision_prob(p0 - 1e-6, 100) < 0.95);
    }

    /// Independent oracle: scan a p0 grid at step 1e-5 and take the first
    /// value satisfying the closed-form inequality.
    #[test]
    fn p0_floor_agrees_with_grid_scan() {
        let (n_min, pc) = (1000u32, 0.95);
        let mut scan = None;
        let mut p = 1e-5;
        while p < 1.0 {
            if collision_prob(p, n_min) >= pc {
                scan = Some(p);
                break;
            }
            p += 1e-5;
        }
        let scan = scan.expect("grid scan found no feasible p0");
        let solved = collision_floor_p0(n_min, pc).unwrap();
        assert!(
            (solved - scan).abs() <= 1e-5 + 1e-6,
            "bisection {solved} vs grid {scan}"
        );
    }

    #[test]
    fn p0_floor_vanishes_with_target() {
        let p0 = collision_floor_p0(2, 1e-9).unwrap();
        assert!(p0 < 1e-3, "tiny collision target should give tiny p0, got {p0}");
    }

    #[test]
    fn p0_floor_infeasible_for_single_user() {
        assert_eq!(
            collision_floor_p0(1, 0.5),
            Err(ScheduleError::Infeasible {
                n_min: 1,
                target: 0.5
            })
        );
    }

    /// Collision probability is nondecreasing in p0 on (0,1) for n_min >= 3,
    /// checked on a grid; bisection relies on this.
    #[test]
    fn collision_prob_monotone_in_p0() {
        for n in [3u32, 5, 17, 100, 1000] {
            let mut prev = 0.0;
            for k in 1..1000 {
                let p = k as f64 / 1000.0;
                let v = collision_prob(p, n);
                assert!(
                    v + 1e-12 >= prev,
                    "collision_prob not monotone at p={p}, n={n}"
                );
                prev = v;
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(ScheduleParams::new(0.0, 1.02, 2.9, 100, 0.95).is_err());
        assert!(ScheduleParams::new(1.5, 1.02, 2.9, 100, 0.95).is_err());
        assert!(ScheduleParams::new(0.047, 1.0, 2.9, 100, 0.95).is_err());
        assert!(ScheduleParams::new(0.047, 1.02, 0.0, 100, 0.95).is_err());
        assert!(ScheduleParams::new(0.047, 1.02, 2.9, 0, 0.95).is_err());
        assert!(ScheduleParams::new(0.047, 1.02, 2.9, 100, 1.0).is_err());
        assert!(ScheduleParams::new(0.047, 1.02, 2.9, 100, 0.95).is_ok());
    }
}
