//! `cutbandit` command line: run seeded experiments and summarize scaling.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cutbandit::environment::GeneratorKind;
use cutbandit::harness::{
    self, Algorithm, Experiment, ExperimentConfig, GraphSource, HarnessError, LabelSource, MeansSource, RunSummary,
    TreePolicy,
};
use cutbandit::TuningMode;

#[derive(Parser, Debug)]
#[command(name = "cutbandit", version, about = "Hierarchical Tsallis-INF bandits over graph-structured contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replications and write trace and summary CSV files.
    Simulate(SimulateArgs),
    /// Fit log-log regret slopes from summary files.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    General,
    Easy,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TreeChoice {
    PerSeed,
    Fixed,
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    /// Graph file, or line:N, tree:N, gnp:N,P
    #[arg(long)]
    graph: String,
    /// Label file or blocks:f; defaults to the graph file's labels
    #[arg(long)]
    labels: Option<String>,
    #[arg(long = "K")]
    k: usize,
    /// Horizon, or a comma-separated list of horizons
    #[arg(long = "T", value_delimiter = ',', required = true)]
    t: Vec<u64>,
    /// Cutsize estimate used to tune D
    #[arg(long = "f")]
    f: usize,
    #[arg(long, value_enum, default_value = "general")]
    mode: Mode,
    /// Split threshold; overrides the tuning rule
    #[arg(long = "D")]
    d: Option<u64>,
    /// iid, rr, block:d, cutadv:u,q
    #[arg(long = "gen", default_value = "iid")]
    generator: String,
    /// hier, global, pervertex
    #[arg(long, default_value = "hier")]
    algo: String,
    /// s0..s1 (inclusive), a comma list, or one seed
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    /// Best-arm gap for synthetic group means
    #[arg(long, default_value_t = 0.3, conflicts_with = "env")]
    gap: f64,
    /// Environment file with explicit group means
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "per-seed")]
    tree_policy: TreeChoice,
    /// Seed for synthetic graphs and the fixed spanning tree
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    /// Only write the summary file
    #[arg(long)]
    no_traces: bool,
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    /// Directory holding summary*.csv files
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a gnuplot script for the report
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

fn config_from(args: &SimulateArgs) -> Result<ExperimentConfig, HarnessError> {
    let generator: GeneratorKind = args.generator.parse()?;
    Ok(ExperimentConfig {
        graph: args.graph.parse::<GraphSource>()?,
        labels: args.labels.as_deref().map(str::parse::<LabelSource>).transpose()?,
        means: match &args.env {
            Some(path) => MeansSource::File(path.clone()),
            None => MeansSource::UniformGap(args.gap),
        },
        k: args.k,
        horizons: args.t.clone(),
        f_est: args.f,
        d_override: args.d,
        mode: match args.mode {
            Mode::General => TuningMode::General,
            Mode::Easy => TuningMode::Easy,
        },
        generator,
        seeds: harness::parse_seeds(&args.seeds)?,
        algorithm: args.algo.parse::<Algorithm>()?,
        tree_policy: match args.tree_policy {
            TreeChoice::PerSeed => TreePolicy::PerSeed,
            TreeChoice::Fixed => TreePolicy::Fixed,
        },
        instance_seed: args.instance_seed,
    })
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn simulate(args: SimulateArgs) -> Result<(), HarnessError> {
    let experiment = Experiment::new(config_from(&args)?)?;
    let traces = experiment.run(!args.no_traces)?;
    create_dir(&args.out)?;
    if !args.no_traces {
        for tr in &traces {
            let name = format!("trace_T{}_seed{}.csv", tr.summary.horizon, tr.summary.seed);
            harness::emit_csv(&tr.rows, &args.out.join(name))?;
        }
    }
    let summaries: Vec<RunSummary> = traces.into_iter().map(|t| t.summary).collect();
    harness::emit_summary(&summaries, &args.out.join("summary.csv"))?;

    println!(
        "n = {}, f_true = {}, f_est = {}, algo = {}",
        experiment.graph().n(),
        experiment.f_true(),
        args.f,
        experiment.config().algorithm
    );
    for &t in &args.t {
        let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.horizon == t).collect();
        let mean = runs.iter().map(|s| s.final_regret).sum::<f64>() / runs.len() as f64;
        let d = runs[0].d.map_or_else(|| "-".to_string(), |d| d.to_string());
        let observable = runs.iter().filter_map(|s| s.f_observable).max();
        println!(
            "T = {t}: D = {d}, mean final regret = {mean:.2} over {} seeds, max observable cutsize = {}",
            runs.len(),
            observable.map_or_else(|| "-".to_string(), |f| f.to_string())
        );
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), HarnessError> {
    let entries = std::fs::read_dir(&args.input).map_err(|source| HarnessError::Io {
        path: args.input.clone(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("summary") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Config(format!(
            "no summary*.csv files in {}",
            args.input.display()
        )));
    }
    let mut summaries = Vec::new();
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        summaries.extend(harness::parse_summary_csv(&text)?);
    }
    let csv = harness::report_csv(&summaries)?;
    std::fs::write(&args.out, &csv).map_err(|source| HarnessError::Io {
        path: args.out.clone(),
        source,
    })?;
    if let Some(script) = &args.gnuplot {
        std::fs::write(script, harness::gnuplot_script(&args.out)).map_err(|source| HarnessError::Io {
            path: script.clone(),
            source,
        })?;
    }
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
