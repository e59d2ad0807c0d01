//! Grouped Bernoulli bandit environment and context-sequence generators.
//!
//! Every context slot belongs to a group; all slots of a group share one
//! vector of arm means. Slots and arms are 1-based.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::graphs::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("arm {arm} out of range 1..={k}")]
    InvalidArm { arm: usize, k: usize },
    #[error("slot {slot} out of range 1..={n}")]
    InvalidSlot { slot: usize, n: usize },
    #[error("Δ_min undefined: group {0} has a tied best arm")]
    DeltaMinUndefined(usize),
    #[error("group {group} has {got} means, expected {k}")]
    MeanCount { group: usize, got: usize, k: usize },
    #[error("mean {0} outside [0, 1]")]
    MeanOutOfRange(f64),
    #[error("slot label {label} has no mean vector ({groups} groups)")]
    MissingGroup { label: Label, groups: usize },
    #[error("arm count must be at least 1")]
    NoArms,
    #[error("invalid generator: {0}")]
    Generator(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedEnvironment {
    k: usize,
    /// `labels[slot - 1]` is the group of `slot`.
    labels: Vec<Label>,
    group_means: Vec<Vec<f64>>,
    /// Cached best mean per group.
    best: Vec<f64>,
}

impl GroupedEnvironment {
    pub fn new(k: usize, labels: Vec<Label>, group_means: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        if k == 0 {
            return Err(EnvError::NoArms);
        }
        for (group, means) in group_means.iter().enumerate() {
            if means.len() != k {
                return Err(EnvError::MeanCount {
                    group,
                    got: means.len(),
                    k,
                });
            }
            if let Some(&m) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
                return Err(EnvError::MeanOutOfRange(m));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= group_means.len()) {
            return Err(EnvError::MissingGroup {
                label,
                groups: group_means.len(),
            });
        }
        let best = group_means
            .iter()
            .map(|m| m.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self {
            k,
            labels,
            group_means,
            best,
        })
    }

    /// One group per distinct label. Group `g`'s best arm is `g mod K + 1`
    /// with mean `0.5 + gap/2`; every other arm has mean `0.5 − gap/2`.
    pub fn with_uniform_gap(k: usize, labels: Vec<Label>, gap: f64) -> Result<Self, EnvError> {
        let groups = labels.iter().max().map_or(1, |&m| m as usize + 1);
        let means = (0..groups)
            .map(|g| {
                (0..k)
                    .map(|i| if i == g % k { 0.5 + gap / 2.0 } else { 0.5 - gap / 2.0 })
                    .collect()
            })
            .collect();
        Self::new(k, labels, means)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of context slots.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn group_means(&self) -> &[Vec<f64>] {
        &self.group_means
    }

    pub fn group_of(&self, slot: usize) -> Result<Label, EnvError> {
        if slot == 0 || slot > self.labels.len() {
            return Err(EnvError::InvalidSlot {
                slot,
                n: self.labels.len(),
            });
        }
        Ok(self.labels[slot - 1])
    }

    fn mean(&self, slot: usize, arm: usize) -> Result<(f64, f64), EnvError> {
        let g = self.group_of(slot)? as usize;
        if arm == 0 || arm > self.k {
            return Err(EnvError::InvalidArm { arm, k: self.k });
        }
        Ok((self.group_means[g][arm - 1], self.best[g]))
    }

    /// Bernoulli reward in `{0, 1}`; the learner's loss is `1 − reward`.
    pub fn pull<R: Rng + ?Sized>(&self, slot: usize, arm: usize, rng: &mut R) -> Result<f64, EnvError> {
        let (mu, _) = self.mean(slot, arm)?;
        Ok(if rng.gen::<f64>() < mu { 1.0 } else { 0.0 })
    }

    /// Gap between the group's best mean and `arm`'s mean.
    pub fn instant_pseudo_regret(&self, slot: usize, arm: usize) -> Result<f64, EnvError> {
        let (mu, best) = self.mean(slot, arm)?;
        Ok(best - mu)
    }

    /// Smallest positive gap over all groups. Every group must have a unique
    /// best arm.
    pub fn delta_min(&self) -> Result<f64, EnvError> {
        let mut delta = f64::INFINITY;
        for (g, means) in self.group_means.iter().enumerate() {
            let best = self.best[g];
            if means.iter().filter(|&&m| m == best).count() > 1 {
                return Err(EnvError::DeltaMinUndefined(g));
            }
            for &m in means {
                if m < best {
                    delta = delta.min(best - m);
                }
            }
        }
        Ok(delta)
    }

    /// Config text: `K`, `groups G`, `G` lines of `K` means, then one
    /// `slot group_id` line per slot.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.k).unwrap();
        writeln!(out, "groups {}", self.group_means.len()).unwrap();
        for means in &self.group_means {
            let row: Vec<String> = means.iter().map(f64::to_string).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(out, "{} {}", i + 1, l).unwrap();
        }
        out
    }
}

impl FromStr for GroupedEnvironment {
    type Err = EnvError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, msg: String| EnvError::Parse { line, msg };

        let (ln, first) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
        let k: usize = first
            .trim_start_matches('K')
            .trim()
            .parse()
            .map_err(|e| err(ln, format!("arm count: {e}")))?;

        let (ln, second) = lines.next().ok_or_else(|| err(0, "missing groups line".into()))?;
        let g: usize = second
            .strip_prefix("groups")
            .ok_or_else(|| err(ln, "expected 'groups G'".into()))?
            .trim()
            .parse()
            .map_err(|e| err(ln, format!("group count: {e}")))?;

        let mut group_means = Vec::with_capacity(g);
        for _ in 0..g {
            let (ln, row) = lines.next().ok_or_else(|| err(0, "missing mean row".into()))?;
            let means: Result<Vec<f64>, _> = row.split_whitespace().map(str::parse).collect();
            group_means.push(means.map_err(|e| err(ln, format!("mean: {e}")))?);
        }

        let mut pairs = Vec::new();
        for (ln, row) in lines {
            let parts: Result<Vec<usize>, _> = row.split_whitespace().map(str::parse).collect();
            let parts = parts.map_err(|e| err(ln, e.to_string()))?;
            if parts.len() != 2 {
                return Err(err(ln, "expected 'slot group_id'".into()));
            }
            pairs.push((ln, parts[0], parts[1] as Label));
        }
        let n = pairs.len();
        let mut labels = vec![None; n];
        for (ln, slot, label) in pairs {
            if slot == 0 || slot > n {
                return Err(err(ln, format!("slot {slot} out of range 1..={n}")));
            }
            if labels[slot - 1].replace(label).is_some() {
                return Err(err(ln, format!("slot {slot} listed twice")));
            }
        }
        let labels = labels.into_iter().map(Option::unwrap).collect();
        GroupedEnvironment::new(k, labels, group_means)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    IidUniform,
    RoundRobin,
    /// Stay on each slot for `dwell` rounds, then move to the next.
    Block { dwell: u64 },
    /// Alternate between `u` and `u + 1`, switching every `period` rounds.
    CutAdversary { u: usize, period: u64 },
}

impl FromStr for GeneratorKind {
    type Err = EnvError;

    /// `iid`, `rr`, `block:d`, `cutadv:u,q`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::Generator(format!("cannot parse '{s}'"));
        match s.split_once(':') {
            None if s == "iid" => Ok(Self::IidUniform),
            None if s == "rr" => Ok(Self::RoundRobin),
            Some(("block", d)) => Ok(Self::Block {
                dwell: d.parse().map_err(|_| bad())?,
            }),
            Some(("cutadv", rest)) => {
                let (u, q) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Self::CutAdversary {
                    u: u.parse().map_err(|_| bad())?,
                    period: q.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::IidUniform => write!(f, "iid"),
            Self::RoundRobin => write!(f, "rr"),
            Self::Block { dwell } => write!(f, "block:{dwell}"),
            Self::CutAdversary { u, period } => write!(f, "cutadv:{u},{period}"),
        }
    }
}

/// Emits context slots in `1..=n`.
#[derive(Debug, Clone)]
pub struct ContextGenerator {
    kind: GeneratorKind,
    n: usize,
    step: u64,
}

impl ContextGenerator {
    pub fn new(kind: GeneratorKind, n: usize) -> Result<Self, EnvError> {
        if n == 0 {
            return Err(EnvError::Generator("no slots".into()));
        }
        match kind {
            GeneratorKind::Block { dwell: 0 } => {
                return Err(EnvError::Generator("block dwell must be at least 1".into()))
            }
            GeneratorKind::CutAdversary { period: 0, .. } => {
                return Err(EnvError::Generator("cut-adversary period must be at least 1".into()))
            }
            GeneratorKind::CutAdversary { u, .. } if u == 0 || u >= n => {
                return Err(EnvError::Generator(format!(
                    "cut-adversary edge ({u}, {}) outside 1..={n}",
                    u + 1
                )))
            }
            _ => {}
        }
        Ok(Self { kind, n, step: 0 })
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn next_context<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let t = self.step;
        self.step += 1;
        let n = self.n as u64;
        match self.kind {
            GeneratorKind::IidUniform => rng.gen_range(1..=self.n),
            GeneratorKind::RoundRobin => (t % n) as usize + 1,
            GeneratorKind::Block { dwell } => ((t / dwell) % n) as usize + 1,
            GeneratorKind::CutAdversary { u, period } => {
                if (t / period) % 2 == 0 {
                    u
                } else {
                    u + 1
                }
            }
        }
    }
}
