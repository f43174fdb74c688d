//! Maximum-likelihood estimation of the total user count from the
//! accumulated slot observations.
//!
//! Each slot contributes a three-class likelihood term (idle / singleton /
//! collision) parameterized by the access probability in force and the
//! number of users already resolved when the slot occurred. The estimate is
//! the root of the summed score (derivative of the log-likelihood in the
//! continuous population size n), located with a Brent-style bracketing
//! root finder.

use std::collections::HashMap;

use thiserror::Error;

use crate::channel::SlotClass;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    /// An observation has zero probability at the evaluated population size
    /// (e.g. a collision with fewer than two contenders).
    #[error("observation impossible at the evaluated population size")]
    ImpossibleObservation,
    #[error("root finder did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("invalid estimate bounds: [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("cannot estimate from an empty observation log")]
    EmptyLog,
}

/// One slot observation as consumed by the estimator: the observed class,
/// the access probability in force, and the number of users already
/// resolved when the slot occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub class: SlotClass,
    pub access_prob: f64,
    pub resolved_before: u32,
}

/// Search interval for the estimate. The lower bound must exceed the
/// resolved count in force (the likelihood has poles at and below it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateBounds {
    pub n_lower: f64,
    pub n_upper: f64,
}

impl EstimateBounds {
    pub fn new(n_lower: f64, n_upper: f64) -> Result<Self, EstimatorError> {
        if !(n_lower < n_upper) || !n_lower.is_finite() || !n_upper.is_finite() {
            return Err(EstimatorError::InvalidBounds {
                lower: n_lower,
                upper: n_upper,
            });
        }
        Ok(Self { n_lower, n_upper })
    }
}

/// How the estimate was obtained: a proper root of the score, or
/// saturation at a search bound when the score does not change sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MleStatus {
    Root,
    SaturatedLow,
    SaturatedHigh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleEstimate {
    pub value: f64,
    pub status: MleStatus,
}

impl MleEstimate {
    pub fn saturated(&self) -> bool {
        self.status != MleStatus::Root
    }
}

/// Log-probability of observing `class` in a slot with access probability
/// `p` and `n_contending` contenders (continuous relaxation).
///
/// Evaluated in log-space: idle is `n ln(1-p)`, singleton is
/// `ln n + ln p + (n-1) ln(1-p)`, and the collision complement
/// `1 - (1-p)^n - n p (1-p)^{n-1}` is factored as
/// `1 - (1-p)^{n-1} (1 + (n-1)p)` and computed via
/// `-expm1((n-1) ln1p(-p) + ln1p((n-1)p))`, which keeps full precision
/// where the complement is tiny. Returns negative infinity for classes
/// that are impossible at `n_contending` (singleton needs n > 0, collision
/// needs n > 1).
pub fn slot_log_pmf(class: SlotClass, p: f64, n_contending: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "access probability {p} outside (0, 1)");
    let log_q = (-p).ln_1p();
    match class {
        SlotClass::Idle => n_contending * log_q,
        SlotClass::Singleton => {
            if n_contending <= 0.0 {
                return f64::NEG_INFINITY;
            }
            n_contending.ln() + p.ln() + (n_contending - 1.0) * log_q
        }
        SlotClass::Collision => {
            if n_contending <= 1.0 {
                return f64::NEG_INFINITY;
            }
            let a = (n_contending - 1.0) * log_q + ((n_contending - 1.0) * p).ln_1p();
            let mass = -a.exp_m1();
            if mass <= 0.0 {
                f64::NEG_INFINITY
            } else {
                mass.ln()
            }
        }
    }
}

/// Derivative of [`slot_log_pmf`] with respect to the population size.
///
/// Idle slots contribute the constant `ln(1-p)`; singletons
/// `1/n + ln(1-p)`. For collisions, differentiating
/// `ln(1 - (1-p)^n - n p (1-p)^{n-1})` gives
///
/// ```text
///   -(1-p)^{n-1} * (p + ln(1-p) * (1 + (n-1)p)) / mass
/// ```
///
/// This is the quotient form with numerator and denominator multiplied by
/// p and factored by (1-p)^{n-1}: the textbook layout carries a `1 - 1/p`
/// denominator term that cancels catastrophically at small p, while this
/// rearrangement stays well conditioned (verified against central finite
/// differences of the log-pmf).
pub fn score_term(class: SlotClass, p: f64, n_contending: f64) -> Result<f64, EstimatorError> {
    assert!(p > 0.0 && p < 1.0, "access probability {p} outside (0, 1)");
    let log_q = (-p).ln_1p();
    match class {
        SlotClass::Idle => Ok(log_q),
        SlotClass::Singleton => {
            if n_contending <= 0.0 {
                return Err(EstimatorError::ImpossibleObservation);
            }
            Ok(1.0 / n_contending + log_q)
        }
        SlotClass::Collision => {
            if n_contending <= 1.0 {
                return Err(EstimatorError::ImpossibleObservation);
            }
            let m1 = n_contending - 1.0;
            let mass = -(m1 * log_q + (m1 * p).ln_1p()).exp_m1();
            if mass <= 0.0 {
                return Err(EstimatorError::ImpossibleObservation);
            }
            let q_pow = (m1 * log_q).exp();
            Ok(-q_pow * (p + log_q * (1.0 + m1 * p)) / mass)
        }
    }
}

/// Collision observations at one access probability, grouped by the
/// resolved count in force. Entries are kept sorted by resolved count.
#[derive(Debug, Clone)]
struct CollisionGroup {
    p: f64,
    log_q: f64,
    /// (resolved_before, multiplicity), ascending in resolved_before.
    entries: Vec<(u32, u32)>,
}

/// Append-only log of slot observations.
///
/// Alongside the raw entry list, the log maintains aggregates grouped by
/// (class, access probability, resolved count): score evaluation cost then
/// scales with the number of distinct groups instead of the raw slot
/// count, which is what makes per-slot estimate refreshes affordable in
/// long rounds.
#[derive(Debug, Clone, Default)]
pub struct ObservationLog {
    entries: Vec<Observation>,
    /// Sum of ln(1-p) over idle slots (their entire score contribution).
    idle_log_q_sum: f64,
    /// Sum of ln(1-p) over singleton slots (the n-independent part).
    singleton_log_q_sum: f64,
    /// Singleton multiplicities by resolved count, ascending.
    singleton_groups: Vec<(u32, u32)>,
    collision_groups: Vec<CollisionGroup>,
    collision_index: HashMap<u64, usize>,
    /// Largest pole of the score among logged observations: n must exceed
    /// this for every term to be finite.
    domain_floor: f64,
}

/// Inserts into a (key, count) list kept sorted by key. The common case is
/// an append or a bump of the last entry, since resolved counts are
/// monotone within a run.
fn bump_sorted(groups: &mut Vec<(u32, u32)>, key: u32) {
    if let Some(last) = groups.last_mut() {
        if last.0 == key {
            last.1 += 1;
            return;
        }
        if last.0 < key {
            groups.push((key, 1));
            return;
        }
    } else {
        groups.push((key, 1));
        return;
    }
    match groups.binary_search_by_key(&key, |&(k, _)| k) {
        Ok(i) => groups[i].1 += 1,
        Err(i) => groups.insert(i, (key, 1)),
    }
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    /// Largest population size at which some logged term is still
    /// undefined; estimates must be sought strictly above this.
    pub fn domain_floor(&self) -> f64 {
        self.domain_floor
    }

    /// Appends an observation. Slots with access probability >= 1 are
    /// dropped: an idle outcome is impossible there and ln(1-p) diverges,
    /// so such slots carry no usable likelihood term.
    pub fn push(&mut self, obs: Observation) {
        if obs.access_prob >= 1.0 {
            return;
        }
        assert!(obs.access_prob > 0.0, "access probability must be positive");
        self.entries.push(obs);
        let log_q = (-obs.access_prob).ln_1p();
        let rb = obs.resolved_before;
        match obs.class {
            SlotClass::Idle => self.idle_log_q_sum += log_q,
            SlotClass::Singleton => {
                self.singleton_log_q_sum += log_q;
                bump_sorted(&mut self.singleton_groups, rb);
                self.domain_floor = self.domain_floor.max(rb as f64);
            }
            SlotClass::Collision => {
                let bits = obs.access_prob.to_bits();
                let idx = *self.collision_index.entry(bits).or_insert_with(|| {
                    self.collision_groups.push(CollisionGroup {
                        p: obs.access_prob,
                        log_q,
                        entries: Vec::new(),
                    });
                    self.collision_groups.len() - 1
                });
                bump_sorted(&mut self.collision_groups[idx].entries, rb);
                self.domain_floor = self.domain_floor.max(rb as f64 + 1.0);
            }
        }
    }

    /// Summed score at population size `n`, evaluated over the grouped
    /// aggregates. Agrees with [`total_score`] (the direct per-observation
    /// sum) up to float associativity.
    ///
    /// Within a collision group the factor (1-p)^{n-rb-1} is obtained from
    /// one exponential at the largest resolved count and multiplicative
    /// (1-p)^delta steps walking down, so underflow only affects entries
    /// whose contribution genuinely vanishes.
    pub fn score(&self, n: f64) -> Result<f64, EstimatorError> {
        if n <= self.domain_floor {
            return Err(EstimatorError::ImpossibleObservation);
        }
        let mut total = self.idle_log_q_sum + self.singleton_log_q_sum;
        for &(rb, count) in &self.singleton_groups {
            total += count as f64 / (n - rb as f64);
        }
        for group in &self.collision_groups {
            let p = group.p;
            let log_q = group.log_q;
            let one_minus_p = 1.0 - p;
            let mut q_pow = 0.0;
            let mut prev_rb = 0u32;
            for (i, &(rb, count)) in group.entries.iter().enumerate().rev() {
                if i + 1 == group.entries.len() {
                    q_pow = ((n - rb as f64 - 1.0) * log_q).exp();
                } else {
                    q_pow *= one_minus_p.powi((prev_rb - rb) as i32);
                }
                prev_rb = rb;
                let m1 = n - rb as f64 - 1.0;
                let one_plus = 1.0 + m1 * p;
                let mut mass = 1.0 - q_pow * one_plus;
                if mass < 1e-9 {
                    // Cancellation-prone corner: fall back to the exact form.
                    mass = -(m1 * log_q + (m1 * p).ln_1p()).exp_m1();
                    if mass <= 0.0 {
                        return Err(EstimatorError::ImpossibleObservation);
                    }
                }
                total += count as f64 * (-q_pow * (p + log_q * one_plus) / mass);
            }
        }
        Ok(total)
    }
}

/// Summed score over the log at population size `n`: the direct sum of
/// [`score_term`] over every observation, with the per-observation
/// contender count `n - resolved_before`. This is the definitional form;
/// [`ObservationLog::score`] computes the same quantity from grouped
/// aggregates.
pub fn total_score(log: &ObservationLog, n: f64) -> Result<f64, EstimatorError> {
    let mut total = 0.0;
    for obs in log.entries() {
        total += score_term(obs.class, obs.access_prob, n - obs.resolved_before as f64)?;
    }
    Ok(total)
}

pub const MLE_DEFAULT_TOL: f64 = 1e-3;
const MAX_ROOT_ITERATIONS: usize = 200;

/// Maximum-likelihood estimate of the total user count over `bounds`,
/// located to an absolute tolerance of [`MLE_DEFAULT_TOL`] (well inside
/// the half-user contract).
///
/// If the score never changes sign on the interval the estimate saturates:
/// all-negative score (e.g. only idle slots) pins it to the lower bound,
/// all-positive score (e.g. only collisions) to the upper bound, each
/// reported distinctly so callers may widen the interval.
pub fn mle_estimate(
    log: &ObservationLog,
    bounds: &EstimateBounds,
) -> Result<MleEstimate, EstimatorError> {
    mle_estimate_tol(log, bounds, MLE_DEFAULT_TOL)
}

/// [`mle_estimate`] with an explicit absolute tolerance on the root.
pub fn mle_estimate_tol(
    log: &ObservationLog,
    bounds: &EstimateBounds,
    tol: f64,
) -> Result<MleEstimate, EstimatorError> {
    if log.is_empty() {
        return Err(EstimatorError::EmptyLog);
    }
    // Keep strictly above the likelihood poles regardless of the caller's
    // lower bound.
    let floor = log.domain_floor();
    let lo = bounds.n_lower.max(floor + 1e-6 * floor.max(1.0));
    let hi = bounds.n_upper;
    if !(lo < hi) {
        return Err(EstimatorError::InvalidBounds {
            lower: lo,
            upper: hi,
        });
    }
    let f_lo = log.score(lo)?;
    if f_lo <= 0.0 {
        return Ok(MleEstimate {
            value: lo,
            status: MleStatus::SaturatedLow,
        });
    }
    let f_hi = log.score(hi)?;
    if f_hi >= 0.0 {
        return Ok(MleEstimate {
            value: hi,
            status: MleStatus::SaturatedHigh,
        });
    }
    let root = brent_root(|n| log.score(n), lo, hi, f_lo, f_hi, tol)?;
    Ok(MleEstimate {
        value: root,
        status: MleStatus::Root,
    })
}

/// Brent's method on a bracketing interval: bisection safeguarded with
/// secant and inverse quadratic interpolation steps, converging
/// superlinearly near simple roots.
fn brent_root<F>(
    mut f: F,
    a0: f64,
    b0: f64,
    fa0: f64,
    fb0: f64,
    xtol: f64,
) -> Result<f64, EstimatorError>
where
    F: FnMut(f64) -> Result<f64, EstimatorError>,
{
    debug_assert!(fa0 * fb0 < 0.0);
    let (mut a, mut b, mut c) = (a0, b0, b0);
    let (mut fa, mut fb, mut fc) = (fa0, fb0, fb0);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..MAX_ROOT_ITERATIONS {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Try interpolation: secant if only two points, inverse
            // quadratic otherwise.
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b)?;
    }
    Err(EstimatorError::NoConvergence(MAX_ROOT_ITERATIONS))
}

/// Exhaustive integer-grid argmax of the summed log-likelihood; the test
/// oracle paired with [`mle_estimate`]. Evaluates [`slot_log_pmf`] per
/// observation at every integer in `[n_lo, n_hi]` and returns the argmax
/// (the lowest maximizer on ties, and `n_lo` for an empty log).
pub fn grid_argmax_oracle(log: &ObservationLog, n_lo: i64, n_hi: i64) -> i64 {
    assert!(n_lo < n_hi, "need a nonempty grid");
    if log.is_empty() {
        return n_lo;
    }
    let mut best = n_lo;
    let mut best_ll = f64::NEG_INFINITY;
    for n in n_lo..=n_hi {
        let mut ll = 0.0;
        for obs in log.entries() {
            ll += slot_log_pmf(obs.class, obs.access_prob, n as f64 - obs.resolved_before as f64);
            if ll == f64::NEG_INFINITY {
                break;
            }
        }
        if ll > best_ll {
            best_ll = ll;
            best = n;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn obs(class: SlotClass, p: f64, rb: u32) -> Observation {
        Observation {
            class,
            access_prob: p,
            resolved_before: rb,
        }
    }

    /// Synthetic log drawn from the true per-slot class distribution at
    /// population size `n_true`, without any resolution.
    fn synthetic_log(n_true: u32, probs: &[f64], slots_per_prob: usize, seed: u64) -> ObservationLog {
        let mut rng = RngStream::new(seed);
        let mut log = ObservationLog::new();
        for &p in probs {
            for _ in 0..slots_per_prob {
                let idle = (n_true as f64 * (-p).ln_1p()).exp();
                let singleton = (n_true as f64) * p * ((n_true as f64 - 1.0) * (-p).ln_1p()).exp();
                let u = rng.uniform();
                let class = if u < idle {
                    SlotClass::Idle
                } else if u < idle + singleton {
                    SlotClass::Singleton
                } else {
                    SlotClass::Collision
                };
                log.push(obs(class, p, 0));
            }
        }
        log
    }

    #[test]
    fn pmf_trivial_two_user_cases() {
        let ln_quarter = 0.25f64.ln();
        let ln_half = 0.5f64.ln();
        assert!((slot_log_pmf(SlotClass::Idle, 0.5, 2.0) - ln_quarter).abs() < 1e-12);
        assert!((slot_log_pmf(SlotClass::Singleton, 0.5, 2.0) - ln_half).abs() < 1e-12);
        assert!((slot_log_pmf(SlotClass::Collision, 0.5, 2.0) - ln_quarter).abs() < 1e-12);
    }

    #[test]
    fn pmf_classes_sum_to_one_on_grid() {
        for &p in &[1e-4, 1e-3, 1e-2, 0.1, 0.3, 0.5, 0.7, 0.9] {
            for &n in &[2.0, 3.0, 5.0, 10.0, 100.0, 1000.0, 10000.0] {
                let total = slot_log_pmf(SlotClass::Idle, p, n).exp()
                    + slot_log_pmf(SlotClass::Singleton, p, n).exp()
                    + slot_log_pmf(SlotClass::Collision, p, n).exp();
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "pmf sums to {total} at p={p}, n={n}"
                );
            }
        }
    }

    #[test]
    fn pmf_impossible_cases_are_neg_infinity() {
        assert_eq!(slot_log_pmf(SlotClass::Singleton, 0.3, 0.0), f64::NEG_INFINITY);
        assert_eq!(slot_log_pmf(SlotClass::Collision, 0.3, 1.0), f64::NEG_INFINITY);
        assert_eq!(slot_log_pmf(SlotClass::Collision, 0.3, 0.5), f64::NEG_INFINITY);
    }

    #[test]
    fn score_idle_is_constant_in_n() {
        for &n in &[1.0, 7.0, 4000.0] {
            let s = score_term(SlotClass::Idle, 0.2, n).unwrap();
            assert!((s - 0.8f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn score_singleton_example() {
        let s = score_term(SlotClass::Singleton, 0.01, 100.0).unwrap();
        assert!((s - (0.01 + 0.99f64.ln())).abs() < 1e-15);
        assert!((s + 5.0336e-5).abs() < 1e-8);
    }

    /// Central finite differences of the log-pmf validate the analytic
    /// score for the singleton and collision branches.
    #[test]
    fn score_matches_finite_differences() {
        let h = 1e-4;
        for &(class, p, n) in &[
            (SlotClass::Singleton, 0.01, 100.0),
            (SlotClass::Collision, 0.01, 100.0),
            (SlotClass::Collision, 0.3, 10.0),
            (SlotClass::Collision, 1e-3, 5000.0),
        ] {
            let fd = (slot_log_pmf(class, p, n + h) - slot_log_pmf(class, p, n - h)) / (2.0 * h);
            let analytic = score_term(class, p, n).unwrap();
            assert!(
                (analytic - fd).abs() <= 1e-6 * analytic.abs().max(1e-9),
                "{class:?} p={p} n={n}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn score_impossible_observations_error() {
        assert_eq!(
            score_term(SlotClass::Collision, 0.4, 1.0),
            Err(EstimatorError::ImpossibleObservation)
        );
        assert_eq!(
            score_term(SlotClass::Singleton, 0.4, 0.0),
            Err(EstimatorError::ImpossibleObservation)
        );
    }

    #[test]
    fn total_score_empty_log_is_zero() {
        let log = ObservationLog::new();
        assert_eq!(total_score(&log, 42.0).unwrap(), 0.0);
    }

    #[test]
    fn total_score_single_idle_constant() {
        let mut log = ObservationLog::new();
        log.push(obs(SlotClass::Idle, 0.25, 0));
        for &n in &[1.0, 10.0, 500.0] {
            assert!((total_score(&log, n).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn total_score_sign_change_near_truth() {
        let log = synthetic_log(500, &[0.002, 0.005, 0.01], 120, 7);
        // grid scan for the sign change
        let mut crossing = None;
        let mut prev = total_score(&log, 50.0).unwrap();
        let mut n = 60.0;
        while n <= 4000.0 {
            let cur = total_score(&log, n).unwrap();
            if prev > 0.0 && cur <= 0.0 {
                crossing = Some(n);
                break;
            }
            prev = cur;
            n += 10.0;
        }
        let crossing = crossing.expect("no sign change found");
        assert!(
            (crossing - 500.0).abs() < 150.0,
            "score crosses zero at {crossing}, expected near 500"
        );
    }

    /// The grouped evaluator must agree with the definitional
    /// per-observation sum.
    #[test]
    fn grouped_score_matches_direct_sum() {
        let mut rng = RngStream::new(11);
        for trial in 0..50 {
            let mut log = ObservationLog::new();
            let mut rb = 0u32;
            for i in 0..200 {
                let p = 10f64.powf(-1.0 - 2.0 * rng.uniform());
                let class = match (rng.uniform() * 3.0) as u32 {
                    0 => SlotClass::Idle,
                    1 => SlotClass::Singleton,
                    _ => SlotClass::Collision,
                };
                if i % 17 == 0 {
                    rb += (rng.uniform() * 3.0) as u32;
                }
                log.push(obs(class, p, rb));
            }
            for &n in &[rb as f64 + 2.5, 100.0, 1500.0, 30000.0] {
                let direct = total_score(&log, n).unwrap();
                let grouped = log.score(n).unwrap();
                assert!(
                    (direct - grouped).abs() <= 1e-9 * direct.abs().max(1.0),
                    "trial {trial}: direct {direct} vs grouped {grouped} at n={n}"
                );
            }
        }
    }

    #[test]
    fn only_idle_saturates_low() {
        let mut log = ObservationLog::new();
        for _ in 0..20 {
            log.push(obs(SlotClass::Idle, 0.1, 0));
        }
        let bounds = EstimateBounds::new(1.0, 1000.0).unwrap();
        let est = mle_estimate(&log, &bounds).unwrap();
        assert_eq!(est.status, MleStatus::SaturatedLow);
        assert_eq!(est.value, 1.0);
        assert!(est.saturated());
    }

    #[test]
    fn only_collisions_saturate_high() {
        let mut log = ObservationLog::new();
        for _ in 0..20 {
            log.push(obs(SlotClass::Collision, 0.001, 0));
        }
        let bounds = EstimateBounds::new(2.0, 5000.0).unwrap();
        let est = mle_estimate(&log, &bounds).unwrap();
        assert_eq!(est.status, MleStatus::SaturatedHigh);
        assert_eq!(est.value, 5000.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        let log = ObservationLog::new();
        let bounds = EstimateBounds::new(1.0, 100.0).unwrap();
        assert_eq!(mle_estimate(&log, &bounds), Err(EstimatorError::EmptyLog));
    }

    #[test]
    fn single_singleton_argmax_matches_closed_form() {
        // One singleton at p = 0.1: the likelihood ln n + (n-1) ln 0.9 is
        // maximized at n = -1/ln(0.9) ~ 9.49, and n=9, n=10 tie exactly.
        let mut log = ObservationLog::new();
        log.push(obs(SlotClass::Singleton, 0.1, 0));
        let am = grid_argmax_oracle(&log, 1, 100);
        assert!(am == 9 || am == 10, "argmax {am}");
        let bounds = EstimateBounds::new(0.5, 100.0).unwrap();
        let est = mle_estimate(&log, &bounds).unwrap();
        assert_eq!(est.status, MleStatus::Root);
        assert!((est.value - 9.491).abs() < 0.01, "root {}", est.value);
    }

    #[test]
    fn empty_log_oracle_returns_lower_bound() {
        let log = ObservationLog::new();
        assert_eq!(grid_argmax_oracle(&log, 3, 50), 3);
    }

    #[test]
    fn estimate_within_one_of_grid_argmax() {
        for seed in 0..20u64 {
            let n_true = 50 + (seed * 97) % 1500;
            let log = synthetic_log(n_true as u32, &[0.3 / n_true as f64, 1.0 / n_true as f64, 3.0 / n_true as f64], 60, seed);
            let bounds = EstimateBounds::new(1.0, 40_000.0).unwrap();
            let est = mle_estimate(&log, &bounds).unwrap();
            let oracle = grid_argmax_oracle(&log, 1, 8000);
            assert!(
                (est.value.round() as i64 - oracle).abs() <= 1,
                "seed {seed}: mle {} vs oracle {oracle}",
                est.value
            );
        }
    }

    #[test]
    fn estimate_is_permutation_invariant() {
        let log = synthetic_log(300, &[0.003, 0.01], 80, 3);
        let mut shuffled: Vec<Observation> = log.entries().to_vec();
        // deterministic Fisher-Yates
        let mut rng = RngStream::new(123);
        for i in (1..shuffled.len()).rev() {
            let j = rng.below(i as u64 + 1) as usize;
            shuffled.swap(i, j);
        }
        let mut relog = ObservationLog::new();
        for o in shuffled {
            relog.push(o);
        }
        let bounds = EstimateBounds::new(1.0, 40_000.0).unwrap();
        let a = mle_estimate(&log, &bounds).unwrap();
        let b = mle_estimate(&relog, &bounds).unwrap();
        assert_eq!(a.status, b.status);
        assert!((a.value - b.value).abs() < 2.0 * MLE_DEFAULT_TOL);
    }

    #[test]
    fn brent_finds_simple_roots() {
        let f = |x: f64| Ok::<f64, EstimatorError>(x * x - 2.0);
        let root = brent_root(f, 0.0, 2.0, -2.0, 2.0, 1e-10).unwrap();
        assert!((root - std::f64::consts::SQRT_2).abs() < 1e-9);
        let g = |x: f64| Ok::<f64, EstimatorError>(x.cos() - x);
        let root = brent_root(g, 0.0, 1.5, 1.0, 1.5f64.cos() - 1.5, 1e-10).unwrap();
        assert!((root - 0.7390851332151607).abs() < 1e-9);
    }

    #[test]
    fn log_excludes_degenerate_access_probability() {
        let mut log = ObservationLog::new();
        log.push(obs(SlotClass::Collision, 1.0, 0));
        assert!(log.is_empty());
        log.push(obs(SlotClass::Collision, 0.5, 0));
        assert_eq!(log.len(), 1);
    }
}
