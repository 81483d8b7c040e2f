use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noc_placement::queueing::ServiceSpec;
use noc_placement::{CanonicalFamily, MeshGrid, Mode, TrafficSpec};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "nocplace",
    version,
    about = "Core, cache and memory-controller placement on mesh NoCs"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Serialize)]
pub struct Common {
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write the run manifest here.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Worker threads for sweeps and searches.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Number of distinct placements for the given counts.
    Count(CountArgs),
    /// Write a reference placement.
    Place(PlaceArgs),
    /// Evaluate a placement with the analytical models.
    Analyze(AnalyzeArgs),
    /// Search for the best placement.
    Optimize(OptimizeArgs),
    /// Simulate one placement.
    Simulate(SimulateArgs),
    /// Latency of the reference layouts over a range of injection rates.
    Sweep(SweepArgs),
    /// Simulated against modeled response time per channel.
    Compare(CompareArgs),
}

/// `WxH`, e.g. `8x8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridArg(pub MeshGrid);

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad grid side `{v}`"))
        };
        MeshGrid::new(parse(w)?, parse(h)?)
            .map(GridArg)
            .map_err(|e| e.to_string())
    }
}

impl Serialize for GridArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct CountsArgs {
    #[arg(long)]
    pub grid: GridArg,
    #[arg(long)]
    pub cores: usize,
    #[arg(long)]
    pub caches: usize,
    #[arg(long, default_value_t = 0)]
    pub mcs: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct CountArgs {
    #[command(flatten)]
    pub counts: CountsArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct PlaceArgs {
    #[arg(long, default_value = "central")]
    #[serde(serialize_with = "display")]
    pub family: CanonicalFamily,
    #[command(flatten)]
    pub counts: CountsArgs,
    /// Write the placement here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Workload flags shared by the analytical and simulation commands.
#[derive(Args, Debug, Clone, Serialize)]
pub struct TrafficArgs {
    /// Per-core request rate.
    #[arg(long, default_value_t = 0.01)]
    pub lambda_g: f64,
    #[arg(long, default_value_t = 1.0)]
    pub miss_l1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub miss_l2: f64,
    /// Private-cache latency added per core.
    #[arg(long, default_value_t = 0.0)]
    pub latency_l1: f64,
    /// Off-chip time added to every memory access.
    #[arg(long, default_value_t = 0.0)]
    pub mem_fixed: f64,
    /// Route replies back to the requester.
    #[arg(long)]
    pub replies: bool,
}

impl TrafficArgs {
    pub fn spec(&self) -> TrafficSpec {
        TrafficSpec {
            lambda_g: self.lambda_g,
            hit_l1: 1.0 - self.miss_l1,
            miss_l2: self.miss_l2,
            latency_l1: self.latency_l1,
            mem_fixed_latency: self.mem_fixed,
            model_replies: self.replies,
            ..TrafficSpec::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    /// Placement file, text grid or JSON.
    #[arg(long)]
    pub placement: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Low)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    /// Per-hop service rate; the mean service time is its inverse.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Write per-turn channel rates as CSV.
    #[arg(long)]
    pub loads: Option<PathBuf>,
    /// Write per-channel queueing results as CSV (high mode).
    #[arg(long)]
    pub routers: Option<PathBuf>,
    /// Write per-flow delays as CSV (high mode).
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AnalyzeArgs {
    pub fn spec(&self) -> TrafficSpec {
        TrafficSpec {
            svc: ServiceSpec::from_rate(self.mu),
            ..self.traffic.spec()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Low,
    High,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Low => Mode::LowTraffic,
            ModeArg::High => Mode::HighTraffic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Exhaustive,
    TwoPhase,
    Local,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub counts: CountsArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Low)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Exhaustive)]
    pub method: MethodArg,
    /// Candidate budget for exhaustive search, evaluation budget for local search.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Seed for local search.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate every high-traffic candidate with the queueing model.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Write the search result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Simulation flags shared by `simulate`, `sweep` and `compare`.
#[derive(Args, Debug, Clone, Serialize)]
pub struct SimArgs {
    /// Per-router service rate in message length units per unit time.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Core requests per run.
    #[arg(long, default_value_t = 100_000)]
    pub messages: u64,
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean of the exponential message length.
    #[arg(long, default_value_t = 10.0)]
    pub mean_size: f64,
    /// Stop at the last request instead of draining the network.
    #[arg(long)]
    pub no_drain: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub placement: PathBuf,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Write the statistics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-channel statistics as CSV.
    #[arg(long)]
    pub channels: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "central,concentric,striped,checkerboard,distributed"
    )]
    #[serde(serialize_with = "display_all")]
    pub families: Vec<CanonicalFamily>,
    #[arg(long, default_value = "8x8")]
    pub grid: GridArg,
    #[arg(long, default_value_t = 48)]
    pub cores: usize,
    #[arg(long, default_value_t = 16)]
    pub caches: usize,
    #[arg(long, default_value_t = 0)]
    pub mcs: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    /// Number of seeds per cell, counting up from `--seed`.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Per-run rows as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-cell summary as CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub placement: PathBuf,
    #[command(flatten)]
    pub traffic: TrafficArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Per-channel deltas as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn display<S: serde::Serializer, T: std::fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn display_all<S: serde::Serializer, T: std::fmt::Display>(
    v: &[T],
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

impl ModeArg {
    pub fn name(self) -> &'static str {
        match self {
            ModeArg::Low => "low",
            ModeArg::High => "high",
        }
    }
}
