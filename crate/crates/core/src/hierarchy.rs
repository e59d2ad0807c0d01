//! Divide-and-conquer scheduler of Tsallis-INF learners over a line of
//! context slots.
//!
//! With `2^L` slots, level `p ∈ 1..=L` holds `2^p` learners; learner `(p, j)`
//! is responsible for the slots `((j−1)·2^{L−p}, j·2^{L−p}]`. The two level-1
//! learners start active. A learner above the leaf level retires after it has
//! received `D` feedbacks and hands its range to its two children, which start
//! from scratch. Leaf learners never retire.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{ArmOutcome, BanditError, TsallisInfRecord, TsallisInfState};
use crate::graphs::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("need at least 2 contexts, got {0}")]
    TooFewContexts(usize),
    #[error("arm count must be at least 1")]
    NoArms,
    #[error("split threshold D must be at least 1")]
    ZeroThreshold,
    #[error("context slot {slot} out of range 1..={n_padded}")]
    SlotOutOfRange { slot: usize, n_padded: usize },
    #[error("serve called twice without feedback")]
    FeedbackPending,
    #[error("feedback without a matching serve")]
    NoPendingServe,
    #[error("feedback does not match the pending serve")]
    FeedbackMismatch,
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error(transparent)]
    Bandit(#[from] BanditError),
}

/// How `D` is derived from the horizon and the cutsize estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuningMode {
    /// Distribution-free tuning, regret of order `T^{2/3} K^{1/3} f^{1/3}`.
    General,
    /// Tuning for a constant minimum gap, regret of order `√(K T f)`.
    Easy,
}

impl std::str::FromStr for TuningMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "general" => Ok(Self::General),
            "easy" => Ok(Self::Easy),
            other => Err(format!("unknown mode '{other}' (expected general|easy)")),
        }
    }
}

/// Split threshold `D`.
///
/// General mode minimizes `D·f·log₂n + T·√(K/D)`, giving
/// `⌈(T√K / (2·f·log₂n))^{2/3}⌉`; easy mode uses `⌈√(T·K/f)⌉`. Both clamp to
/// `[1, T]`, with `f` floored at 1. A zero cutsize means one group, so the
/// learners never split (`D = T`).
pub fn choose_d(t: u64, k: usize, f: usize, n: usize, mode: TuningMode) -> u64 {
    let t = t.max(1);
    if f == 0 {
        return t;
    }
    let tf = t as f64;
    let kf = k.max(1) as f64;
    let ff = f as f64;
    let raw = match mode {
        TuningMode::General => {
            let log_n = (n.max(2) as f64).log2();
            (tf * kf.sqrt() / (2.0 * ff * log_n)).powf(2.0 / 3.0)
        }
        TuningMode::Easy => (tf * kf / ff).sqrt(),
    };
    (raw.ceil() as u64).clamp(1, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Inactive,
    Active,
    Retired,
}

/// Handle to a learner `B_p(j)` inside a scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    fn of(level: u32, j: usize) -> Self {
        NodeId((1usize << level) - 2 + (j - 1))
    }
}

#[derive(Debug, Clone)]
pub struct SubroutineNode {
    level: u32,
    index: usize,
    status: NodeStatus,
    handled: u64,
    learner: Option<TsallisInfState>,
}

impl SubroutineNode {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// `j`, 1-based within the level.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn status(&self) -> NodeStatus {
        self.status
    }

    pub fn handled(&self) -> u64 {
        self.handled
    }

    pub fn learner(&self) -> Option<&TsallisInfState> {
        self.learner.as_ref()
    }
}

/// The arm chosen for a context and the learner that chose it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Served {
    pub node: NodeId,
    pub arm: usize,
}

#[derive(Debug, Clone)]
pub struct HierarchyScheduler {
    n: usize,
    levels: u32,
    d: u64,
    k: usize,
    nodes: Vec<SubroutineNode>,
    pending: Option<Served>,
    activations: u64,
}

impl HierarchyScheduler {
    /// Pads `n` up to `2^L`, creates all `2^{L+1} − 2` learners and activates
    /// the two level-1 learners.
    pub fn build(n: usize, k: usize, d: u64) -> Result<Self, HierarchyError> {
        if n < 2 {
            return Err(HierarchyError::TooFewContexts(n));
        }
        if k == 0 {
            return Err(HierarchyError::NoArms);
        }
        if d == 0 {
            return Err(HierarchyError::ZeroThreshold);
        }
        let levels = n.next_power_of_two().trailing_zeros();
        let mut nodes = Vec::with_capacity((1 << (levels + 1)) - 2);
        for level in 1..=levels {
            for index in 1..=(1usize << level) {
                nodes.push(SubroutineNode {
                    level,
                    index,
                    status: NodeStatus::Inactive,
                    handled: 0,
                    learner: None,
                });
            }
        }
        let mut s = Self {
            n,
            levels,
            d,
            k,
            nodes,
            pending: None,
            activations: 0,
        };
        s.activate(NodeId::of(1, 1))?;
        s.activate(NodeId::of(1, 2))?;
        Ok(s)
    }

    /// Number of real contexts.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_padded(&self) -> usize {
        1 << self.levels
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn d(&self) -> u64 {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[SubroutineNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SubroutineNode {
        &self.nodes[id.0]
    }

    pub fn node_id(&self, level: u32, j: usize) -> Option<NodeId> {
        (level >= 1 && level <= self.levels && j >= 1 && j <= 1 << level)
            .then(|| NodeId::of(level, j))
    }

    /// Total learners ever activated, the two initial ones included.
    pub fn activations(&self) -> u64 {
        self.activations
    }

    /// Inclusive slot range `(first, last)` of a learner.
    pub fn range(&self, id: NodeId) -> (usize, usize) {
        let node = &self.nodes[id.0];
        let width = 1usize << (self.levels - node.level);
        ((node.index - 1) * width + 1, node.index * width)
    }

    fn activate(&mut self, id: NodeId) -> Result<(), HierarchyError> {
        let k = self.k;
        let node = &mut self.nodes[id.0];
        if node.status != NodeStatus::Inactive {
            return Err(HierarchyError::Invariant(format!(
                "activating B_{}({}) from {:?}",
                node.level, node.index, node.status
            )));
        }
        node.status = NodeStatus::Active;
        node.learner = Some(TsallisInfState::new(k)?);
        self.activations += 1;
        Ok(())
    }

    /// The unique active learner whose range contains `slot`.
    pub fn route(&self, slot: usize) -> Result<NodeId, HierarchyError> {
        if slot == 0 || slot > self.n_padded() {
            return Err(HierarchyError::SlotOutOfRange {
                slot,
                n_padded: self.n_padded(),
            });
        }
        for level in 1..=self.levels {
            let width = 1usize << (self.levels - level);
            let id = NodeId::of(level, (slot - 1) / width + 1);
            match self.nodes[id.0].status {
                NodeStatus::Active => return Ok(id),
                NodeStatus::Retired => continue,
                NodeStatus::Inactive => break,
            }
        }
        Err(HierarchyError::Invariant(format!(
            "no active learner covers slot {slot}"
        )))
    }

    /// Picks an arm for `slot`. Must be followed by exactly one `feedback`.
    pub fn serve<R: Rng + ?Sized>(&mut self, slot: usize, rng: &mut R) -> Result<Served, HierarchyError> {
        if self.pending.is_some() {
            return Err(HierarchyError::FeedbackPending);
        }
        let node = self.route(slot)?;
        let learner = self.nodes[node.0]
            .learner
            .as_mut()
            .ok_or_else(|| HierarchyError::Invariant("active learner without state".into()))?;
        let arm = learner.sample_arm(rng)?;
        let served = Served { node, arm };
        self.pending = Some(served);
        Ok(served)
    }

    /// Feeds the loss back to the learner that served, and splits it once it
    /// has handled `D` rounds (unless it is a leaf).
    pub fn feedback(&mut self, served: Served, loss: f64) -> Result<(), HierarchyError> {
        let outcome = ArmOutcome::new(served.arm, loss)?;
        match self.pending {
            None => return Err(HierarchyError::NoPendingServe),
            Some(p) if p != served => return Err(HierarchyError::FeedbackMismatch),
            Some(_) => {}
        }
        let levels = self.levels;
        let d = self.d;
        let node = &mut self.nodes[served.node.0];
        node.learner
            .as_mut()
            .ok_or_else(|| HierarchyError::Invariant("active learner without state".into()))?
            .update(outcome)?;
        node.handled += 1;
        self.pending = None;
        if node.level < levels && node.handled == d {
            node.status = NodeStatus::Retired;
            node.learner = None;
            let (level, j) = (node.level, node.index);
            self.activate(NodeId::of(level + 1, 2 * j - 1))?;
            self.activate(NodeId::of(level + 1, 2 * j))?;
        }
        Ok(())
    }

    /// Checks that every slot has exactly one active learner on its chain and
    /// that retirements happened exactly at `D`.
    pub fn check_invariants(&self) -> Result<(), HierarchyError> {
        for slot in 1..=self.n_padded() {
            let active = (1..=self.levels)
                .filter(|&level| {
                    let width = 1usize << (self.levels - level);
                    let id = NodeId::of(level, (slot - 1) / width + 1);
                    self.nodes[id.0].status == NodeStatus::Active
                })
                .count();
            if active != 1 {
                return Err(HierarchyError::Invariant(format!(
                    "slot {slot} has {active} active learners"
                )));
            }
        }
        for node in &self.nodes {
            let ok = match node.status {
                NodeStatus::Retired => node.handled == self.d && node.level < self.levels,
                NodeStatus::Active => node.level == self.levels || node.handled < self.d,
                NodeStatus::Inactive => node.handled == 0,
            };
            if !ok {
                return Err(HierarchyError::Invariant(format!(
                    "B_{}({}) is {:?} with handled = {}",
                    node.level, node.index, node.status, node.handled
                )));
            }
        }
        Ok(())
    }

    /// Rounds handled over all learners.
    pub fn total_handled(&self) -> u64 {
        self.nodes.iter().map(|n| n.handled).sum()
    }

    /// Learners whose range contains a cut edge under `slot_labels` (one label
    /// per padded slot, see [`pad_labels`]).
    pub fn count_bad(&self, slot_labels: &[Label]) -> usize {
        count_bad(self.levels, slot_labels)
    }

    pub fn to_checkpoint(&self) -> SchedulerCheckpoint {
        SchedulerCheckpoint {
            n: self.n,
            n_padded: self.n_padded(),
            levels: self.levels,
            d: self.d,
            k: self.k,
            activations: self.activations,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    level: n.level,
                    index: n.index,
                    status: n.status,
                    handled: n.handled,
                    learner: n.learner.as_ref().map(TsallisInfState::to_record),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(cp: SchedulerCheckpoint) -> Result<Self, HierarchyError> {
        let mut s = Self::build(cp.n, cp.k, cp.d)?;
        if s.n_padded() != cp.n_padded || s.levels != cp.levels || s.nodes.len() != cp.nodes.len() {
            return Err(HierarchyError::Invariant("checkpoint shape mismatch".into()));
        }
        for (node, rec) in s.nodes.iter_mut().zip(cp.nodes) {
            if node.level != rec.level || node.index != rec.index {
                return Err(HierarchyError::Invariant("checkpoint node order mismatch".into()));
            }
            if (rec.status == NodeStatus::Active) != rec.learner.is_some() {
                return Err(HierarchyError::Invariant(
                    "learner state present iff learner is active".into(),
                ));
            }
            node.status = rec.status;
            node.handled = rec.handled;
            node.learner = rec.learner.map(TsallisInfState::from_record).transpose()?;
        }
        s.activations = cp.activations;
        s.check_invariants()?;
        Ok(s)
    }
}

/// Serializable snapshot of a scheduler between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerCheckpoint {
    pub n: usize,
    pub n_padded: usize,
    pub levels: u32,
    pub d: u64,
    pub k: usize,
    pub activations: u64,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub level: u32,
    pub index: usize,
    pub status: NodeStatus,
    pub handled: u64,
    pub learner: Option<TsallisInfRecord>,
}

/// Extends per-slot labels to `n_padded` slots by repeating the last label,
/// so padding adds no cut edges.
pub fn pad_labels(labels: &[Label], n_padded: usize) -> Vec<Label> {
    let mut out = labels.to_vec();
    let last = labels.last().copied().unwrap_or(0);
    out.resize(n_padded.max(labels.len()), last);
    out
}

/// Number of learners, over all `levels`, whose range contains two adjacent
/// slots with different labels. `slot_labels.len()` must be `2^levels`.
pub fn count_bad(levels: u32, slot_labels: &[Label]) -> usize {
    debug_assert_eq!(slot_labels.len(), 1 << levels);
    // prefix[i] = cut edges among the first i + 1 slots
    let mut prefix = vec![0usize; slot_labels.len()];
    for i in 1..slot_labels.len() {
        prefix[i] = prefix[i - 1] + usize::from(slot_labels[i] != slot_labels[i - 1]);
    }
    let mut bad = 0;
    for level in 1..=levels {
        let width = 1usize << (levels - level);
        for j in 0..(1usize << level) {
            let (first, last) = (j * width, (j + 1) * width - 1);
            if prefix[last] > prefix[first] {
                bad += 1;
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &HierarchyScheduler, level: u32, j: usize) -> NodeId {
        s.node_id(level, j).unwrap()
    }

    #[test]
    fn build_shapes() {
        let s = HierarchyScheduler::build(8, 2, 5).unwrap();
        assert_eq!(s.levels(), 3);
        assert_eq!(s.nodes().len(), 14);
        for (level, count) in [(1, 2), (2, 4), (3, 8)] {
            assert_eq!(s.nodes().iter().filter(|n| n.level() == level).count(), count);
        }
        assert_eq!(s.activations(), 2);
        s.check_invariants().unwrap();

        let s = HierarchyScheduler::build(2, 2, 1).unwrap();
        assert_eq!(s.levels(), 1);
        assert_eq!(s.nodes().len(), 2);
        assert!(s.nodes().iter().all(|n| n.status() == NodeStatus::Active));

        let s = HierarchyScheduler::build(5, 2, 1).unwrap();
        assert_eq!(s.n_padded(), 8);
        assert_eq!(s.n(), 5);

        assert_eq!(
            HierarchyScheduler::build(1, 2, 1).unwrap_err(),
            HierarchyError::TooFewContexts(1)
        );
        assert!(HierarchyScheduler::build(4, 0, 1).is_err());
        assert!(HierarchyScheduler::build(4, 2, 0).is_err());
    }

    #[test]
    fn ranges_follow_figure_layout() {
        let s = HierarchyScheduler::build(8, 2, 5).unwrap();
        assert_eq!(s.range(id(&s, 1, 1)), (1, 4));
        assert_eq!(s.range(id(&s, 1, 2)), (5, 8));
        assert_eq!(s.range(id(&s, 2, 2)), (3, 4));
        assert_eq!(s.range(id(&s, 3, 8)), (8, 8));
    }

    #[test]
    fn route_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = HierarchyScheduler::build(8, 2, 1).unwrap();
        assert_eq!(s.route(3).unwrap(), id(&s, 1, 1));
        assert_eq!(s.route(5).unwrap(), id(&s, 1, 2));
        let served = s.serve(1, &mut rng).unwrap();
        s.feedback(served, 0.5).unwrap();
        assert_eq!(s.node(id(&s, 1, 1)).status(), NodeStatus::Retired);
        assert_eq!(s.route(3).unwrap(), id(&s, 2, 2));
        assert!(matches!(s.route(0), Err(HierarchyError::SlotOutOfRange { .. })));
        assert!(matches!(s.route(9), Err(HierarchyError::SlotOutOfRange { .. })));
    }

    #[test]
    fn split_after_d_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = HierarchyScheduler::build(4, 4, 1).unwrap();
        let served = s.serve(1, &mut rng).unwrap();
        assert!((1..=4).contains(&served.arm));
        assert_eq!(served.node, id(&s, 1, 1));
        s.feedback(served, 0.0).unwrap();
        assert_eq!(s.node(id(&s, 1, 1)).handled(), 1);
        assert_eq!(s.route(1).unwrap(), id(&s, 2, 1));
        s.check_invariants().unwrap();
    }

    #[test]
    fn threshold_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 3;
        let mut s = HierarchyScheduler::build(4, 2, d).unwrap();
        for round in 1..=d {
            let served = s.serve(2, &mut rng).unwrap();
            s.feedback(served, 1.0).unwrap();
            let expect = if round < d { NodeStatus::Active } else { NodeStatus::Retired };
            assert_eq!(s.node(id(&s, 1, 1)).status(), expect);
        }
        assert_eq!(s.node(id(&s, 2, 1)).status(), NodeStatus::Active);
        assert_eq!(s.node(id(&s, 2, 2)).status(), NodeStatus::Active);
        assert_eq!(s.node(id(&s, 2, 1)).learner().unwrap().local_t(), 0);

        // leaves keep going far past D
        for _ in 0..10 * d {
            let served = s.serve(2, &mut rng).unwrap();
            s.feedback(served, 0.2).unwrap();
        }
        let leaf = s.node(id(&s, 2, 2));
        assert_eq!(leaf.handled(), 10 * d);
        assert_eq!(leaf.status(), NodeStatus::Active);
        s.check_invariants().unwrap();
    }

    #[test]
    fn serve_feedback_alternation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = HierarchyScheduler::build(4, 2, 5).unwrap();
        let served = s.serve(1, &mut rng).unwrap();
        assert_eq!(s.serve(1, &mut rng).unwrap_err(), HierarchyError::FeedbackPending);
        assert!(matches!(
            s.feedback(served, 1.5),
            Err(HierarchyError::Bandit(BanditError::LossOutOfRange(_)))
        ));
        let wrong = Served {
            node: id(&s, 1, 2),
            arm: served.arm,
        };
        assert_eq!(s.feedback(wrong, 0.5).unwrap_err(), HierarchyError::FeedbackMismatch);
        s.feedback(served, 0.5).unwrap();
        assert_eq!(s.feedback(served, 0.5).unwrap_err(), HierarchyError::NoPendingServe);
    }

    #[test]
    fn choose_d_examples() {
        assert_eq!(choose_d(1000, 4, 0, 64, TuningMode::General), 1000);
        assert_eq!(choose_d(1000, 4, 0, 64, TuningMode::Easy), 1000);
        assert_eq!(choose_d(4096, 4, 2, 64, TuningMode::General), 49);
        assert_eq!(choose_d(4096, 4, 2, 64, TuningMode::Easy), 91);
        assert_eq!(choose_d(1, 4, 2, 64, TuningMode::Easy), 1);
        assert_eq!(choose_d(10, 64, 1, 2, TuningMode::General), 10);
    }

    #[test]
    fn count_bad_examples() {
        assert_eq!(count_bad(3, &[1; 8]), 0);
        assert_eq!(count_bad(3, &[1, 1, 1, 2, 2, 2, 3, 3]), 3);
        let s = HierarchyScheduler::build(5, 2, 1).unwrap();
        let padded = pad_labels(&[1, 1, 2, 2, 2], s.n_padded());
        assert_eq!(padded, vec![1, 1, 2, 2, 2, 2, 2, 2]);
        // cut (2,3) lies in B_1(1) only
        assert_eq!(s.count_bad(&padded), 1);
    }

    /// Enumerates every range and tests each cut edge for containment.
    fn bad_by_enumeration(levels: u32, labels: &[Label]) -> usize {
        let mut bad = 0;
        for level in 1..=levels {
            let width = 1usize << (levels - level);
            for j in 1..=(1usize << level) {
                let (a, b) = ((j - 1) * width + 1, j * width);
                if (a..b).any(|i| labels[i - 1] != labels[i]) {
                    bad += 1;
                }
            }
        }
        bad
    }

    #[test]
    fn single_cut_edge_is_bad_at_most_once_per_level() {
        for levels in 1..=8u32 {
            let n = 1usize << levels;
            for cut in 1..n {
                let labels: Vec<Label> = (1..=n).map(|i| u32::from(i > cut)).collect();
                let bad = count_bad(levels, &labels);
                assert_eq!(bad, bad_by_enumeration(levels, &labels));
                assert!(bad <= levels as usize);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = HierarchyScheduler::build(8, 3, 2).unwrap();
        for t in 0..20 {
            let served = s.serve(t % 8 + 1, &mut rng).unwrap();
            s.feedback(served, 0.25).unwrap();
        }
        let cp = s.to_checkpoint();
        let json = serde_json::to_string(&cp).unwrap();
        let back: SchedulerCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = HierarchyScheduler::from_checkpoint(back).unwrap();
        assert_eq!(restored.to_checkpoint(), cp);

        let mut a = rng.clone();
        let mut b = rng;
        let mut s2 = restored;
        for t in 0..30 {
            let x = s.serve(t % 8 + 1, &mut a).unwrap();
            let y = s2.serve(t % 8 + 1, &mut b).unwrap();
            assert_eq!(x, y);
            s.feedback(x, 0.5).unwrap();
            s2.feedback(y, 0.5).unwrap();
        }
    }
}
