//! Tsallis-INF with α = 1/2 and importance-weighted loss estimates.
//!
//! Each round the sampling distribution is the mirror-descent step under the
//! 1/2-Tsallis entropy regularizer with learning rate `η_t = 2 / √t`:
//!
//! ```text
//! w_i = 4 · (η · (L̂_i − x))^{-2},   x < min_i L̂_i,   Σ_i w_i = 1
//! ```
//!
//! where `L̂` are the cumulative loss estimates. The normalizer `x` is found by
//! Newton's method inside a bracket, with bisection as the fallback.
//!
//! Arms are numbered `1..=K`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|Σ w − 1|` for a returned distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

const NEWTON_MAX_ITERS: usize = 100;
const BISECTION_MAX_ITERS: usize = 200;
const SOLVE_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("arm count must be at least 1")]
    NoArms,
    #[error("arm {arm} out of range 1..={k}")]
    ArmOutOfRange { arm: usize, k: usize },
    #[error("loss {0} outside [0, 1]")]
    LossOutOfRange(f64),
    #[error("no cached weights")]
    NoCachedWeights,
    #[error("arm {got} was not the arm just drawn ({expected})")]
    ArmMismatch { expected: usize, got: usize },
    #[error("normalizer not found")]
    NormalizerNotFound,
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// The learner's feedback for one round: the arm played and its loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmOutcome {
    pub arm: usize,
    pub loss: f64,
}

impl ArmOutcome {
    pub fn new(arm: usize, loss: f64) -> Result<Self, BanditError> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(BanditError::LossOutOfRange(loss));
        }
        Ok(Self { arm, loss })
    }

    /// Loss `1 − reward` for a reward in `[0, 1]`.
    pub fn from_reward(arm: usize, reward: f64) -> Result<Self, BanditError> {
        Self::new(arm, 1.0 - reward)
    }
}

/// Plain record of a learner, for checkpoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsallisInfRecord {
    pub k: usize,
    pub cum_loss_est: Vec<f64>,
    pub local_t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsallisInfState {
    cum_loss_est: Vec<f64>,
    local_t: u64,
    /// Distribution of the pending draw and the arm drawn from it.
    pending: Option<(Vec<f64>, usize)>,
}

impl TsallisInfState {
    pub fn new(k: usize) -> Result<Self, BanditError> {
        if k == 0 {
            return Err(BanditError::NoArms);
        }
        Ok(Self {
            cum_loss_est: vec![0.0; k],
            local_t: 0,
            pending: None,
        })
    }

    /// Restores a learner from explicit cumulative estimates (checkpoints, tests).
    pub fn from_parts(cum_loss_est: Vec<f64>, local_t: u64) -> Result<Self, BanditError> {
        if cum_loss_est.is_empty() {
            return Err(BanditError::NoArms);
        }
        if let Some(bad) = cum_loss_est.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(BanditError::InvalidState(format!(
                "cumulative loss estimate {bad} is not a finite nonnegative number"
            )));
        }
        Ok(Self {
            cum_loss_est,
            local_t,
            pending: None,
        })
    }

    pub fn k(&self) -> usize {
        self.cum_loss_est.len()
    }

    pub fn cum_loss_est(&self) -> &[f64] {
        &self.cum_loss_est
    }

    pub fn local_t(&self) -> u64 {
        self.local_t
    }

    /// Weights cached by the most recent `sample_arm`, until its `update`.
    pub fn last_weights(&self) -> Option<&[f64]> {
        self.pending.as_ref().map(|(w, _)| w.as_slice())
    }

    pub fn learning_rate(&self) -> f64 {
        2.0 / ((self.local_t + 1) as f64).sqrt()
    }

    /// Current sampling distribution over arms (index `i` is arm `i + 1`).
    pub fn arm_distribution(&self) -> Result<Vec<f64>, BanditError> {
        tsallis_weights(&self.cum_loss_est, self.learning_rate())
    }

    /// Draws an arm from the current distribution and caches the weights for
    /// the following `update`.
    pub fn sample_arm<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize, BanditError> {
        let weights = self.arm_distribution()?;
        let arm = draw_categorical(&weights, rng);
        self.pending = Some((weights, arm));
        Ok(arm)
    }

    /// Importance-weighted update: `L̂_arm += loss / w_arm`.
    pub fn update(&mut self, outcome: ArmOutcome) -> Result<(), BanditError> {
        if !(0.0..=1.0).contains(&outcome.loss) {
            return Err(BanditError::LossOutOfRange(outcome.loss));
        }
        let k = self.k();
        if outcome.arm == 0 || outcome.arm > k {
            return Err(BanditError::ArmOutOfRange { arm: outcome.arm, k });
        }
        let (weights, drawn) = self.pending.as_ref().ok_or(BanditError::NoCachedWeights)?;
        if *drawn != outcome.arm {
            return Err(BanditError::ArmMismatch {
                expected: *drawn,
                got: outcome.arm,
            });
        }
        self.cum_loss_est[outcome.arm - 1] += outcome.loss / weights[outcome.arm - 1];
        self.local_t += 1;
        self.pending = None;
        Ok(())
    }

    pub fn to_record(&self) -> TsallisInfRecord {
        TsallisInfRecord {
            k: self.k(),
            cum_loss_est: self.cum_loss_est.clone(),
            local_t: self.local_t,
        }
    }

    pub fn from_record(record: TsallisInfRecord) -> Result<Self, BanditError> {
        if record.k != record.cum_loss_est.len() {
            return Err(BanditError::InvalidState(format!(
                "k = {} but {} estimates",
                record.k,
                record.cum_loss_est.len()
            )));
        }
        Self::from_parts(record.cum_loss_est, record.local_t)
    }
}

/// Inverse-CDF draw; returns a 1-based arm.
fn draw_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i + 1;
        }
    }
    // u landed in the rounding slack above the final partial sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) + 1
}

fn weights_at(cum_loss: &[f64], eta: f64, x: f64) -> impl Iterator<Item = f64> + '_ {
    cum_loss.iter().map(move |&l| {
        let d = eta * (l - x);
        4.0 / (d * d)
    })
}

/// `(Σ w(x) − 1, d/dx Σ w(x))`.
fn excess_and_slope(cum_loss: &[f64], eta: f64, x: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut slope = 0.0;
    for &l in cum_loss {
        let gap = l - x;
        let d = eta * gap;
        let w = 4.0 / (d * d);
        sum += w;
        slope += 2.0 * w / gap;
    }
    (sum - 1.0, slope)
}

/// Solves for the Tsallis-INF distribution given cumulative loss estimates
/// and a learning rate.
pub fn tsallis_weights(cum_loss: &[f64], eta: f64) -> Result<Vec<f64>, BanditError> {
    if cum_loss.is_empty() {
        return Err(BanditError::NoArms);
    }
    let x = solve_normalizer(cum_loss, eta)?;
    let mut w: Vec<f64> = weights_at(cum_loss, eta, x).collect();
    let total: f64 = w.iter().sum();
    if !total.is_finite() || (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(BanditError::NormalizerNotFound);
    }
    for wi in &mut w {
        *wi /= total;
    }
    Ok(w)
}

/// Finds `x < min L̂` with `Σ w(x) = 1`. `Σ w` is increasing and convex on
/// that half-line, so Newton is run inside a shrinking sign bracket.
fn solve_normalizer(cum_loss: &[f64], eta: f64) -> Result<f64, BanditError> {
    let min = cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let k = cum_loss.len() as f64;

    // At min − 2√K/η the smallest-loss arm has weight exactly 1/K and every
    // other arm at most 1/K, so the sum is at most 1.
    let mut step = (4.0 * k).sqrt() / eta;
    let mut lo = min - step;
    let mut guard = 0;
    while excess_and_slope(cum_loss, eta, lo).0 > 0.0 {
        step *= 2.0;
        lo = min - step;
        guard += 1;
        if guard > 64 {
            return Err(BanditError::NormalizerNotFound);
        }
    }
    let mut hi = min;

    let mut x = lo;
    for _ in 0..NEWTON_MAX_ITERS {
        let (excess, slope) = excess_and_slope(cum_loss, eta, x);
        if excess.abs() <= SOLVE_TOLERANCE {
            return Ok(x);
        }
        if excess < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let candidate = x - excess / slope;
        x = if candidate > lo && candidate < hi && candidate.is_finite() {
            candidate
        } else {
            0.5 * (lo + hi)
        };
    }
    bisect_normalizer(cum_loss, eta, lo, hi)
}

fn bisect_normalizer(cum_loss: &[f64], eta: f64, mut lo: f64, mut hi: f64) -> Result<f64, BanditError> {
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let (excess, _) = excess_and_slope(cum_loss, eta, mid);
        if excess.abs() <= SOLVE_TOLERANCE || mid <= lo || mid >= hi {
            return if excess.abs() <= SUM_TOLERANCE {
                Ok(mid)
            } else {
                Err(BanditError::NormalizerNotFound)
            };
        }
        if excess < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(BanditError::NormalizerNotFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain bisection on the normalizer to ~1e-13, independent of the solver.
    fn oracle_weights(cum_loss: &[f64], eta: f64) -> Vec<f64> {
        let min = cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
        let sum = |x: f64| -> f64 {
            cum_loss
                .iter()
                .map(|&l| 4.0 / (eta * (l - x)).powi(2))
                .sum()
        };
        let mut lo = min - 1.0;
        while sum(lo) > 1.0 {
            lo = min - 2.0 * (min - lo);
        }
        let mut hi = min;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if sum(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        cum_loss
            .iter()
            .map(|&l| 4.0 / (eta * (l - x)).powi(2))
            .collect()
    }

    #[test]
    fn new_state() {
        let s = TsallisInfState::new(3).unwrap();
        assert_eq!(s.cum_loss_est(), &[0.0, 0.0, 0.0]);
        assert_eq!(s.local_t(), 0);
        assert!(TsallisInfState::new(1).is_ok());
        assert_eq!(TsallisInfState::new(0), Err(BanditError::NoArms));
    }

    #[test]
    fn fresh_state_is_uniform() {
        for k in 1..=16 {
            let w = TsallisInfState::new(k).unwrap().arm_distribution().unwrap();
            for wi in w {
                assert!((wi - 1.0 / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_losses_are_uniform() {
        let s = TsallisInfState::from_parts(vec![7.5; 5], 42).unwrap();
        for wi in s.arm_distribution().unwrap() {
            assert!((wi - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_arm_example_matches_bisection() {
        let s = TsallisInfState::from_parts(vec![0.0, 10.0], 0).unwrap();
        let w = s.arm_distribution().unwrap();
        let oracle = oracle_weights(&[0.0, 10.0], 2.0);
        assert!(w[0] > w[1] && w[1] > 0.0 && w[0] < 1.0);
        for (a, b) in w.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn translation_invariance() {
        let base = vec![3.0, 0.5, 12.0, 7.25];
        let shifted: Vec<f64> = base.iter().map(|v| v + 400.0).collect();
        let a = tsallis_weights(&base, 0.3).unwrap();
        let b = tsallis_weights(&shifted, 0.3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn monotone_in_own_loss() {
        let base = vec![3.0, 0.5, 12.0, 7.25];
        let w0 = tsallis_weights(&base, 0.5).unwrap();
        let mut bumped = base.clone();
        bumped[2] += 1.0;
        let w1 = tsallis_weights(&bumped, 0.5).unwrap();
        assert!(w1[2] < w0[2]);
        for i in [0, 1, 3] {
            assert!(w1[i] >= w0[i] - 1e-10);
        }
    }

    #[test]
    fn single_arm_always_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = TsallisInfState::new(1).unwrap();
        for _ in 0..100 {
            let a = s.sample_arm(&mut rng).unwrap();
            assert_eq!(a, 1);
            s.update(ArmOutcome::new(a, 0.7).unwrap()).unwrap();
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = TsallisInfState::new(4).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[s.sample_arm(&mut rng).unwrap() - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn dominant_arm_sampling() {
        let losses = vec![0.0, 100.0, 100.0, 100.0];
        let oracle = oracle_weights(&losses, 2.0);
        assert!(oracle[0] > 0.95);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = TsallisInfState::from_parts(losses, 0).unwrap();
        let draws = 20_000;
        let hits = (0..draws)
            .filter(|_| s.sample_arm(&mut rng).unwrap() == 1)
            .count();
        let freq = hits as f64 / draws as f64;
        assert!(freq > 0.95);
        assert!((freq - oracle[0]).abs() < 0.01);
    }

    #[test]
    fn update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = TsallisInfState::new(2).unwrap();
        let arm = s.sample_arm(&mut rng).unwrap();
        s.update(ArmOutcome::new(arm, 1.0).unwrap()).unwrap();
        let mut expected = [0.0, 0.0];
        expected[arm - 1] = 2.0;
        assert_eq!(s.cum_loss_est(), &expected);
        assert_eq!(s.local_t(), 1);

        let before = s.cum_loss_est().to_vec();
        let arm = s.sample_arm(&mut rng).unwrap();
        s.update(ArmOutcome::new(arm, 0.0).unwrap()).unwrap();
        assert_eq!(s.cum_loss_est(), before.as_slice());
        assert_eq!(s.local_t(), 2);
    }

    #[test]
    fn update_errors() {
        let mut s = TsallisInfState::new(2).unwrap();
        assert_eq!(
            s.update(ArmOutcome { arm: 1, loss: 0.5 }),
            Err(BanditError::NoCachedWeights)
        );
        assert_eq!(ArmOutcome::new(1, 1.5), Err(BanditError::LossOutOfRange(1.5)));
        assert_eq!(
            s.update(ArmOutcome { arm: 1, loss: -0.1 }),
            Err(BanditError::LossOutOfRange(-0.1))
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arm = s.sample_arm(&mut rng).unwrap();
        let other = 3 - arm;
        assert!(matches!(
            s.update(ArmOutcome { arm: other, loss: 0.5 }),
            Err(BanditError::ArmMismatch { .. })
        ));
        assert!(matches!(
            s.update(ArmOutcome { arm: 9, loss: 0.5 }),
            Err(BanditError::ArmOutOfRange { .. })
        ));
    }

    #[test]
    fn importance_weighted_estimates_are_unbiased() {
        let state = TsallisInfState::from_parts(vec![4.0, 1.0, 9.0], 5).unwrap();
        let loss = [0.3, 0.8, 0.55];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps = 100_000;
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        for _ in 0..reps {
            let mut s = state.clone();
            let arm = s.sample_arm(&mut rng).unwrap();
            s.update(ArmOutcome::new(arm, loss[arm - 1]).unwrap()).unwrap();
            for i in 0..3 {
                let est = s.cum_loss_est()[i] - state.cum_loss_est()[i];
                sum[i] += est;
                sum_sq[i] += est * est;
            }
        }
        for i in 0..3 {
            let mean = sum[i] / reps as f64;
            let var = sum_sq[i] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!((mean - loss[i]).abs() < 3.0 * se, "arm {i}: {mean} vs {}", loss[i]);
        }
    }

    #[test]
    fn record_round_trip() {
        let s = TsallisInfState::from_parts(vec![1.0, 2.5], 7).unwrap();
        let back = TsallisInfState::from_record(s.to_record()).unwrap();
        assert_eq!(back, s);
        let bad = TsallisInfRecord {
            k: 3,
            cum_loss_est: vec![0.0],
            local_t: 0,
        };
        assert!(TsallisInfState::from_record(bad).is_err());
    }
}
