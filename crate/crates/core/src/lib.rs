//! Stochastic bandits whose contexts are the vertices of a graph with an
//! unknown labeling: contexts with the same label share reward laws.
//!
//! The core learner is a divide-and-conquer [`hierarchy`] of Tsallis-INF
//! [`bandit`] instances over a line of contexts; trees and general graphs are
//! reduced to a line by the [`graphs`] module. [`environment`] supplies the
//! grouped Bernoulli world and [`harness`] runs seeded experiments.

pub mod bandit;
pub mod environment;
pub mod graphs;
pub mod harness;
pub mod hierarchy;

pub use bandit::{ArmOutcome, BanditError, TsallisInfState};
pub use environment::{ContextGenerator, EnvError, GeneratorKind, GroupedEnvironment};
pub use graphs::{GraphError, Label, LabeledGraph, PathInstance};
pub use harness::{
    Algorithm, Experiment, ExperimentConfig, HarnessError, RegretTrace, RunSummary, ScalingReport,
};
pub use hierarchy::{HierarchyError, HierarchyScheduler, TuningMode};
