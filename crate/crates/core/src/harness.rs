//! Experiment runner: builds the instance, reduces it to a line, plays the
//! hierarchy or a baseline for `T` rounds per seed, and writes CSV.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bandit::{ArmOutcome, BanditError, TsallisInfState};
use crate::environment::{ContextGenerator, EnvError, GeneratorKind, GroupedEnvironment};
use crate::graphs::{self, GraphError, Label, LabeledGraph, PathInstance};
use crate::hierarchy::{self, HierarchyError, HierarchyScheduler, TuningMode};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Hierarchy(HierarchyError),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<HierarchyError> for HarnessError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::Invariant(msg) => HarnessError::Invariant(msg),
            other => HarnessError::Hierarchy(other),
        }
    }
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for invariant
    /// violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invariant(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Labels of the independent random streams derived from one seed.
mod stream {
    pub const GENERATOR: u64 = 1;
    pub const ENVIRONMENT: u64 = 2;
    pub const LEARNER: u64 = 3;
    pub const SPANNING_TREE: u64 = 4;
    pub const GRAPH: u64 = 5;
}

fn stream_rng(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    File(PathBuf),
    Line(usize),
    /// Uniform random labeled tree.
    Tree(usize),
    /// Connected Erdős–Rényi graph.
    Gnp(usize, f64),
}

impl FromStr for GraphSource {
    type Err = HarnessError;

    /// `line:N`, `tree:N`, `gnp:N,P`, or a path to a graph file.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| HarnessError::Config(format!("graph '{s}': {msg}"));
        let count = |v: &str| v.parse::<usize>().map_err(|e| bad(&e.to_string()));
        match s.split_once(':') {
            Some(("line", v)) => Ok(Self::Line(count(v)?)),
            Some(("tree", v)) => Ok(Self::Tree(count(v)?)),
            Some(("gnp", v)) => {
                let (n, p) = v.split_once(',').ok_or_else(|| bad("expected gnp:N,P"))?;
                let p: f64 = p.parse().map_err(|_| bad("bad probability"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad("probability outside [0, 1]"));
                }
                Ok(Self::Gnp(count(n)?, p))
            }
            _ => Ok(Self::File(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    /// Lines `vertex label_id`.
    File(PathBuf),
    /// `f + 1` contiguous blocks of vertex ids.
    Blocks(usize),
}

impl FromStr for LabelSource {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("blocks:") {
            Some(f) => f
                .parse()
                .map(Self::Blocks)
                .map_err(|e| HarnessError::Config(format!("labels '{s}': {e}"))),
            None => Ok(Self::File(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeansSource {
    /// Environment config file; its slot groups are the true labels.
    File(PathBuf),
    /// See [`GroupedEnvironment::with_uniform_gap`].
    UniformGap(f64),
    /// One mean vector per label id.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Hierarchy,
    /// One learner for every context.
    Global,
    /// One learner per context.
    PerVertex,
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hier" => Ok(Self::Hierarchy),
            "global" => Ok(Self::Global),
            "pervertex" => Ok(Self::PerVertex),
            other => Err(HarnessError::Config(format!(
                "unknown algorithm '{other}' (expected hier|global|pervertex)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hierarchy => "hier",
            Self::Global => "global",
            Self::PerVertex => "pervertex",
        })
    }
}

/// Which spanning tree a general graph is reduced through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreePolicy {
    /// A fresh uniform spanning tree for every replication seed.
    #[default]
    PerSeed,
    /// One tree for the whole experiment, drawn from the instance seed.
    Fixed,
}

/// Parses `a..b` (inclusive), `a,b,c`, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("seeds '{s}': expected s0..s1, a list, or one seed"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    /// `None` uses the labels stored in the graph file.
    pub labels: Option<LabelSource>,
    pub means: MeansSource,
    pub k: usize,
    /// One or more horizons; every seed is run at every horizon.
    pub horizons: Vec<u64>,
    /// Cutsize estimate handed to the tuning rule. The algorithm never sees
    /// the true labels.
    pub f_est: usize,
    pub d_override: Option<u64>,
    pub mode: TuningMode,
    pub generator: GeneratorKind,
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    pub tree_policy: TreePolicy,
    /// Seed for synthetic graph generation and [`TreePolicy::Fixed`].
    pub instance_seed: u64,
}

impl ExperimentConfig {
    /// A line of `n` contexts in `f + 1` blocks with a uniform best-arm gap.
    pub fn line(n: usize, f: usize, k: usize, t: u64, gap: f64) -> Self {
        Self {
            graph: GraphSource::Line(n),
            labels: Some(LabelSource::Blocks(f)),
            means: MeansSource::UniformGap(gap),
            k,
            horizons: vec![t],
            f_est: f,
            d_override: None,
            mode: TuningMode::General,
            generator: GeneratorKind::IidUniform,
            seeds: vec![0],
            algorithm: Algorithm::Hierarchy,
            tree_policy: TreePolicy::PerSeed,
            instance_seed: 0,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.k == 0 {
            return Err(HarnessError::Config("K must be at least 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(HarnessError::Config("every T must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("no seeds".into()));
        }
        if self.d_override == Some(0) {
            return Err(HarnessError::Config("D must be at least 1".into()));
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_label_file(path: &Path, n: usize) -> Result<Vec<Label>, HarnessError> {
    let text = read_to_string(path)?;
    let mut labels = vec![None; n];
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || HarnessError::Config(format!("{}:{}: expected 'vertex label'", path.display(), i + 1));
        let (v, l) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
        let v: usize = v.trim().parse().map_err(|_| bad())?;
        let l: Label = l.trim().parse().map_err(|_| bad())?;
        if v == 0 || v > n {
            return Err(HarnessError::Config(format!("label for vertex {v} outside 1..={n}")));
        }
        labels[v - 1] = Some(l);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| HarnessError::Config(format!("vertex {} has no label", i + 1))))
        .collect()
}

fn is_line(g: &LabeledGraph) -> bool {
    g.edges().len() + 1 == g.n() && g.canonical_edges().iter().enumerate().all(|(i, &e)| e == (i + 1, i + 2))
}

/// A validated experiment: labeled graph, environment, and (for trees and
/// lines) the line the hierarchy plays on.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    graph: LabeledGraph,
    env: GroupedEnvironment,
    f_true: usize,
    fixed_line: Option<PathInstance>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut graph_rng = stream_rng(config.instance_seed, stream::GRAPH);
        let graph = match &config.graph {
            GraphSource::File(p) => read_to_string(p)?.parse::<LabeledGraph>()?,
            GraphSource::Line(n) => LabeledGraph::line(*n, None)?,
            GraphSource::Tree(n) => graphs::random_tree(*n, &mut graph_rng),
            GraphSource::Gnp(n, p) => graphs::random_connected_gnp(*n, *p, 1000, &mut graph_rng)?,
        };
        if graph.n() == 0 {
            return Err(HarnessError::Config("graph has no vertices".into()));
        }
        let n = graph.n();

        let labels = match &config.labels {
            Some(LabelSource::Blocks(f)) => Some(graphs::block_labels(n, *f)),
            Some(LabelSource::File(p)) => Some(read_label_file(p, n)?),
            None => graph.labels().map(<[Label]>::to_vec),
        };

        let env = match &config.means {
            MeansSource::UniformGap(gap) => {
                let labels = labels.clone().ok_or(GraphError::Unlabeled)?;
                GroupedEnvironment::with_uniform_gap(config.k, labels, *gap)?
            }
            MeansSource::Explicit(means) => {
                let labels = labels.clone().ok_or(GraphError::Unlabeled)?;
                GroupedEnvironment::new(config.k, labels, means.clone())?
            }
            MeansSource::File(p) => {
                let env: GroupedEnvironment = read_to_string(p)?.parse()?;
                if env.n() != n {
                    return Err(HarnessError::Config(format!(
                        "environment has {} slots, graph has {n} vertices",
                        env.n()
                    )));
                }
                if let Some(l) = &labels {
                    if l.as_slice() != env.labels() {
                        return Err(HarnessError::Config(
                            "environment groups disagree with graph labels".into(),
                        ));
                    }
                }
                env
            }
        };
        if env.k() != config.k {
            return Err(HarnessError::Config(format!(
                "K mismatch: config {} vs environment {}",
                config.k,
                env.k()
            )));
        }
        let graph = graph.with_labels(env.labels().to_vec())?;
        let f_true = graphs::cutsize(&graph)?;
        ContextGenerator::new(config.generator, n)?;

        let fixed_line = if is_line(&graph) {
            Some(PathInstance::identity(env.labels().to_vec()))
        } else if graph.is_tree() {
            Some(graphs::euler_spine(&graph)?)
        } else if !graph.is_connected() {
            return Err(GraphError::NotConnected.into());
        } else if config.tree_policy == TreePolicy::Fixed {
            let mut rng = stream_rng(config.instance_seed, stream::SPANNING_TREE);
            Some(graphs::euler_spine(&graphs::wilson_ust(&graph, &mut rng)?)?)
        } else {
            None
        };
        if config.algorithm == Algorithm::Hierarchy {
            let len = fixed_line.as_ref().map_or(2 * n - 1, PathInstance::length);
            if len < 2 {
                return Err(HarnessError::Config("the hierarchy needs at least 2 contexts".into()));
            }
        }

        Ok(Self {
            config,
            graph,
            env,
            f_true,
            fixed_line,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn graph(&self) -> &LabeledGraph {
        &self.graph
    }

    pub fn environment(&self) -> &GroupedEnvironment {
        &self.env
    }

    /// Cutsize of the original labeled graph.
    pub fn f_true(&self) -> usize {
        self.f_true
    }

    /// The line used for `seed`.
    pub fn line_for(&self, seed: u64) -> Result<PathInstance, HarnessError> {
        match &self.fixed_line {
            Some(line) => Ok(line.clone()),
            None => {
                let mut rng = stream_rng(seed, stream::SPANNING_TREE);
                let tree = graphs::wilson_ust(&self.graph, &mut rng)?;
                Ok(graphs::euler_spine(&tree)?)
            }
        }
    }

    /// `D` used at horizon `t` on a line of `line_len` positions.
    pub fn split_threshold(&self, t: u64, line_len: usize) -> u64 {
        self.config
            .d_override
            .unwrap_or_else(|| hierarchy::choose_d(t, self.config.k, self.config.f_est, line_len, self.config.mode))
    }

    /// Plays one replication.
    pub fn run_seed(&self, seed: u64, t: u64, record_rows: bool) -> Result<RegretTrace, HarnessError> {
        match self.config.algorithm {
            Algorithm::Hierarchy => self.run_hierarchy(seed, t, record_rows),
            Algorithm::Global => self.run_baseline_global(seed, t, record_rows),
            Algorithm::PerVertex => self.run_baseline_per_vertex(seed, t, record_rows),
        }
    }

    /// Every (horizon, seed) pair, in parallel, sorted by horizon then seed.
    pub fn run(&self, record_rows: bool) -> Result<Vec<RegretTrace>, HarnessError> {
        let jobs: Vec<(u64, u64)> = self
            .config
            .horizons
            .iter()
            .flat_map(|&t| self.config.seeds.iter().map(move |&s| (t, s)))
            .collect();
        let mut traces = jobs
            .par_iter()
            .map(|&(t, seed)| self.run_seed(seed, t, record_rows))
            .collect::<Result<Vec<_>, _>>()?;
        traces.sort_by_key(|tr| (tr.summary.horizon, tr.summary.seed));
        Ok(traces)
    }

    fn summary(&self, seed: u64, t: u64, algo: Algorithm) -> RunSummary {
        RunSummary {
            seed,
            horizon: t,
            k: self.config.k,
            f_true: self.f_true,
            f_est: self.config.f_est,
            d: None,
            algorithm: algo,
            final_regret: 0.0,
            nodes_activated: 0,
            bad_nodes: None,
            f_observable: None,
        }
    }

    fn observable_f(&self, line: &PathInstance, seen: &BTreeSet<usize>) -> Option<usize> {
        if self.graph.is_tree() {
            graphs::observable_cutsize(&self.graph, seen).ok()
        } else {
            let seen_positions = seen.iter().map(|&v| line.position_of(v)).collect();
            graphs::observable_cutsize(&line.to_line_graph(), &seen_positions).ok()
        }
    }


    fn play<P: Policy>(
        &self,
        seed: u64,
        t: u64,
        record_rows: bool,
        policy: &mut P,
    ) -> Result<Played, HarnessError> {
        let n = self.graph.n();
        let mut gen = ContextGenerator::new(self.config.generator, n)?;
        let mut gen_rng = stream_rng(seed, stream::GENERATOR);
        let mut env_rng = stream_rng(seed, stream::ENVIRONMENT);
        let mut learner_rng = stream_rng(seed, stream::LEARNER);

        let mut rows = Vec::with_capacity(if record_rows { t as usize } else { 0 });
        let mut seen = BTreeSet::new();
        let mut cum = 0.0;
        for round in 1..=t {
            let context = gen.next_context(&mut gen_rng);
            let arm = policy.choose(context, &mut learner_rng)?;
            let reward = self.env.pull(context, arm, &mut env_rng)?;
            policy.observe(arm, 1.0 - reward)?;
            let inst = self.env.instant_pseudo_regret(context, arm)?;
            cum += inst;
            seen.insert(context);
            if record_rows {
                rows.push(TraceRow {
                    t: round,
                    slot: context,
                    arm,
                    reward,
                    inst_regret: inst,
                    cum_regret: cum,
                });
            }
        }
        Ok(Played {
            rows,
            final_regret: cum,
            seen,
        })
    }

    fn run_hierarchy(&self, seed: u64, t: u64, record_rows: bool) -> Result<RegretTrace, HarnessError> {
        let line = self.line_for(seed)?;
        let d = self.split_threshold(t, line.length());
        let scheduler = HierarchyScheduler::build(line.length(), self.config.k, d)?;
        let mut policy = HierarchyPolicy {
            scheduler,
            line: &line,
            pending: None,
        };
        let played = self.play(seed, t, record_rows, &mut policy)?;
        let scheduler = policy.scheduler;

        scheduler.check_invariants()?;
        if scheduler.total_handled() != t {
            return Err(HarnessError::Invariant(format!(
                "learners handled {} rounds, expected {t}",
                scheduler.total_handled()
            )));
        }
        let activation_cap = 2 + 2 * t.div_ceil(d);
        if scheduler.activations() > activation_cap {
            return Err(HarnessError::Invariant(format!(
                "{} activations exceed 2 + 2⌈T/D⌉ = {activation_cap}",
                scheduler.activations()
            )));
        }
        let slot_labels = hierarchy::pad_labels(line.position_labels(), scheduler.n_padded());
        let bad = scheduler.count_bad(&slot_labels);
        let line_f = line.cutsize();
        if bad > line_f * scheduler.levels() as usize {
            return Err(HarnessError::Invariant(format!(
                "{bad} bad learners exceed f·L = {line_f}·{}",
                scheduler.levels()
            )));
        }

        let mut summary = self.summary(seed, t, Algorithm::Hierarchy);
        summary.d = Some(d);
        summary.final_regret = played.final_regret;
        summary.nodes_activated = scheduler.activations();
        summary.bad_nodes = Some(bad);
        summary.f_observable = self.observable_f(&line, &played.seen);
        Ok(RegretTrace {
            rows: played.rows,
            summary,
        })
    }

    /// One Tsallis-INF learner that ignores the context.
    pub fn run_baseline_global(&self, seed: u64, t: u64, record_rows: bool) -> Result<RegretTrace, HarnessError> {
        let mut policy = GlobalPolicy(TsallisInfState::new(self.config.k)?);
        let played = self.play(seed, t, record_rows, &mut policy)?;
        let mut summary = self.summary(seed, t, Algorithm::Global);
        summary.final_regret = played.final_regret;
        summary.nodes_activated = 1;
        Ok(RegretTrace {
            rows: played.rows,
            summary,
        })
    }

    /// An independent Tsallis-INF learner per context.
    pub fn run_baseline_per_vertex(&self, seed: u64, t: u64, record_rows: bool) -> Result<RegretTrace, HarnessError> {
        let n = self.graph.n();
        let learners = (0..n)
            .map(|_| TsallisInfState::new(self.config.k))
            .collect::<Result<Vec<_>, _>>()?;
        let mut policy = PerVertexPolicy {
            learners,
            current: 0,
        };
        let played = self.play(seed, t, record_rows, &mut policy)?;
        let mut summary = self.summary(seed, t, Algorithm::PerVertex);
        summary.final_regret = played.final_regret;
        summary.nodes_activated = n as u64;
        Ok(RegretTrace {
            rows: played.rows,
            summary,
        })
    }
}

struct Played {
    rows: Vec<TraceRow>,
    final_regret: f64,
    seen: BTreeSet<usize>,
}

/// A learner driven by the round loop: `choose` then exactly one `observe`.
trait Policy {
    fn choose(&mut self, context: usize, rng: &mut ChaCha8Rng) -> Result<usize, HarnessError>;
    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), HarnessError>;
}

struct HierarchyPolicy<'a> {
    scheduler: HierarchyScheduler,
    line: &'a PathInstance,
    pending: Option<hierarchy::Served>,
}

impl Policy for HierarchyPolicy<'_> {
    fn choose(&mut self, context: usize, rng: &mut ChaCha8Rng) -> Result<usize, HarnessError> {
        let served = self.scheduler.serve(self.line.position_of(context), rng)?;
        self.pending = Some(served);
        Ok(served.arm)
    }

    fn observe(&mut self, _arm: usize, loss: f64) -> Result<(), HarnessError> {
        let served = self
            .pending
            .take()
            .ok_or_else(|| HarnessError::Invariant("feedback without serve".into()))?;
        Ok(self.scheduler.feedback(served, loss)?)
    }
}

struct GlobalPolicy(TsallisInfState);

impl Policy for GlobalPolicy {
    fn choose(&mut self, _context: usize, rng: &mut ChaCha8Rng) -> Result<usize, HarnessError> {
        Ok(self.0.sample_arm(rng)?)
    }

    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), HarnessError> {
        Ok(self.0.update(ArmOutcome::new(arm, loss)?)?)
    }
}

struct PerVertexPolicy {
    learners: Vec<TsallisInfState>,
    current: usize,
}

impl Policy for PerVertexPolicy {
    fn choose(&mut self, context: usize, rng: &mut ChaCha8Rng) -> Result<usize, HarnessError> {
        self.current = context - 1;
        Ok(self.learners[self.current].sample_arm(rng)?)
    }

    fn observe(&mut self, arm: usize, loss: f64) -> Result<(), HarnessError> {
        Ok(self.learners[self.current].update(ArmOutcome::new(arm, loss)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    /// The context (original vertex) of the round.
    pub slot: usize,
    pub arm: usize,
    pub reward: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub horizon: u64,
    pub k: usize,
    pub f_true: usize,
    pub f_est: usize,
    /// Split threshold; hierarchy runs only.
    pub d: Option<u64>,
    pub algorithm: Algorithm,
    pub final_regret: f64,
    /// Learners ever activated (baselines: learners allocated).
    pub nodes_activated: u64,
    /// Learners whose range holds a cut edge of the line; hierarchy runs only.
    pub bad_nodes: Option<usize>,
    /// Minimum cutsize consistent with the contexts actually seen.
    pub f_observable: Option<usize>,
}

/// Per-round records (possibly omitted) and the run summary of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

pub const TRACE_HEADER: &str = "t,slot,arm,reward,inst_regret,cum_regret";
pub const SUMMARY_HEADER: &str = "seed,T,K,f_true,f_est,D,algo,final_regret,nodes_activated,bad_nodes";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t, r.slot, r.arm, r.reward, r.inst_regret, r.cum_regret
        )
        .unwrap();
    }
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per run, then one `mean` row per (algorithm, T) group.
pub fn summary_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.seed,
            s.horizon,
            s.k,
            s.f_true,
            s.f_est,
            opt(s.d),
            s.algorithm,
            s.final_regret,
            s.nodes_activated,
            opt(s.bad_nodes)
        )
        .unwrap();
    }
    let mut groups: Vec<(Algorithm, u64)> = summaries.iter().map(|s| (s.algorithm, s.horizon)).collect();
    groups.sort_unstable();
    groups.dedup();
    for (algo, t) in groups {
        let g: Vec<&RunSummary> = summaries
            .iter()
            .filter(|s| s.algorithm == algo && s.horizon == t)
            .collect();
        let count = g.len() as f64;
        let first = g[0];
        let same = |f: &dyn Fn(&RunSummary) -> String| -> String {
            let v = f(first);
            if g.iter().all(|s| f(s) == v) {
                v
            } else {
                String::new()
            }
        };
        let mean_regret = g.iter().map(|s| s.final_regret).sum::<f64>() / count;
        let mean_nodes = g.iter().map(|s| s.nodes_activated as f64).sum::<f64>() / count;
        let mean_bad = first
            .bad_nodes
            .map(|_| g.iter().map(|s| s.bad_nodes.unwrap_or(0) as f64).sum::<f64>() / count);
        writeln!(
            out,
            "mean,{t},{},{},{},{},{algo},{mean_regret},{mean_nodes},{}",
            same(&|s| s.k.to_string()),
            same(&|s| s.f_true.to_string()),
            same(&|s| s.f_est.to_string()),
            same(&|s| opt(s.d)),
            opt(mean_bad)
        )
        .unwrap();
    }
    out
}

pub fn emit_csv(rows: &[TraceRow], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, trace_csv(rows)).map_err(io_err(path))
}

pub fn emit_summary(summaries: &[RunSummary], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, summary_csv(summaries)).map_err(io_err(path))
}

/// Reads the per-run rows of a summary CSV, skipping aggregate rows.
pub fn parse_summary_csv(text: &str) -> Result<Vec<RunSummary>, HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(HarnessError::Config("not a summary file (bad header)".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() || line.starts_with("mean,") {
            continue;
        }
        let bad = |field: &str| HarnessError::Config(format!("summary row {}: bad {field}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad("field count"));
        }
        let opt_parse = |s: &str| -> Option<u64> { (!s.is_empty()).then(|| s.parse().ok()).flatten() };
        out.push(RunSummary {
            seed: f[0].parse().map_err(|_| bad("seed"))?,
            horizon: f[1].parse().map_err(|_| bad("T"))?,
            k: f[2].parse().map_err(|_| bad("K"))?,
            f_true: f[3].parse().map_err(|_| bad("f_true"))?,
            f_est: f[4].parse().map_err(|_| bad("f_est"))?,
            d: opt_parse(f[5]),
            algorithm: f[6].parse()?,
            final_regret: f[7].parse().map_err(|_| bad("final_regret"))?,
            nodes_activated: f[8].parse().map_err(|_| bad("nodes_activated"))?,
            bad_nodes: opt_parse(f[9]).map(|v| v as usize),
            f_observable: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub horizon: u64,
    pub seeds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
}

/// Final-regret statistics per horizon and the least-squares slope of
/// `ln(mean)` against `ln T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
}

pub const SCALING_HEADER: &str = "algo,T,seeds,mean,stderr,median,slope";

impl ScalingReport {
    pub fn to_csv(&self, algo: &str) -> String {
        let mut out = String::new();
        for r in &self.rows {
            writeln!(
                out,
                "{algo},{},{},{},{},{},{}",
                r.horizon, r.seeds, r.mean, r.stderr, r.median, self.slope
            )
            .unwrap();
        }
        out
    }
}

/// Builds the scaling table from `(T, final regret)` points.
///
/// Horizons whose mean regret is zero carry no slope information and are
/// left out of the fit; with fewer than two usable horizons the slope is 0.
pub fn scaling_report(points: &[(u64, f64)]) -> Result<ScalingReport, HarnessError> {
    let horizons: BTreeSet<u64> = points.iter().map(|p| p.0).collect();
    if horizons.len() < 2 {
        return Err(HarnessError::Config(format!(
            "scaling report needs at least 2 distinct T values, got {}",
            horizons.len()
        )));
    }
    let rows: Vec<ScalingRow> = horizons
        .into_iter()
        .map(|t| {
            let mut v: Vec<f64> = points.iter().filter(|p| p.0 == t).map(|p| p.1).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let mid = v.len() / 2;
            let median = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
            ScalingRow {
                horizon: t,
                seeds: v.len(),
                mean,
                stderr: (var / n).sqrt(),
                median,
            }
        })
        .collect();
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean > 0.0)
        .map(|r| ((r.horizon as f64).ln(), r.mean.ln()))
        .collect();
    Ok(ScalingReport {
        slope: least_squares_slope(&fit),
        rows,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Scaling table for every algorithm found in `summaries`.
pub fn report_csv(summaries: &[RunSummary]) -> Result<String, HarnessError> {
    let algos: BTreeSet<Algorithm> = summaries.iter().map(|s| s.algorithm).collect();
    if algos.is_empty() {
        return Err(HarnessError::Config("no summary rows".into()));
    }
    let mut out = String::from(SCALING_HEADER);
    out.push('\n');
    for algo in algos {
        let points: Vec<(u64, f64)> = summaries
            .iter()
            .filter(|s| s.algorithm == algo)
            .map(|s| (s.horizon, s.final_regret))
            .collect();
        out.push_str(&scaling_report(&points)?.to_csv(&algo.to_string()));
    }
    Ok(out)
}

/// gnuplot script plotting mean final regret against T on log-log axes from
/// a scaling CSV.
pub fn gnuplot_script(report_csv: &Path) -> String {
    format!(
        "set datafile separator ','\nset logscale xy\nset key left top\n\
         set xlabel 'T'\nset ylabel 'mean final pseudo-regret'\n\
         plot '{}' every ::1 using 2:4:5 with yerrorlines title 'mean ± stderr'\n",
        report_csv.display()
    )
}
