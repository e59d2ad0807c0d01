//! Fixtures shared by the benchmarks.

use cutbandit::TsallisInfState;

/// A learner with spread-out cumulative loss estimates, as seen mid-run.
pub fn spread_state(k: usize, local_t: u64) -> TsallisInfState {
    let est = (0..k).map(|i| (i as f64 * 37.0) % 250.0).collect();
    TsallisInfState::from_parts(est, local_t).expect("valid fixture")
}
