//! `swapgraph`: generate, rewrite, simulate and compare computational graphs.
//!
//! Machine-readable output (graphs, reports, DOT) goes to stdout or `-o`;
//! summaries and logs go to stderr.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use swapgraph_core::graph::{from_json, to_dot, to_json};
use swapgraph_core::{
    generate, rewrite, simulate, CompGraph, CtrlStrategy, Error, RewriteConfig, SimConfig,
    SimReport, Topology,
};

#[derive(Parser)]
#[command(
    name = "swapgraph",
    version,
    about = "Swap-out/swap-in rewriting for computational graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a synthetic training graph as JSON.
    Generate(GenerateArgs),
    /// Insert swap-out/swap-in operations into a graph.
    Rewrite(RewriteArgs),
    /// Simulate one training step and emit the report as JSON.
    Simulate(SimulateArgs),
    /// Compare two simulation reports.
    Report(ReportArgs),
    /// Render a graph as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Copy, Clone, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TopologyName {
    Chain,
    Branchy,
    Unet,
    ResnetLike,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    topology: TopologyName,
    /// Layers of a chain.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    stages: usize,
    #[arg(long, default_value_t = 2)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    convs_per_level: usize,
    #[arg(long, default_value_t = 16)]
    blocks: usize,
    #[arg(long, default_value_t = 1 << 20)]
    tensor_bytes: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RewriteArgs {
    input: PathBuf,
    /// Rewritten graph; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Where to write the rewrite report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Distinct tensors to swap; -1 swaps all.
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    n_tensors: i64,
    #[arg(long, default_value_t = 1)]
    lb: i64,
    #[arg(long, default_value_t = 10000)]
    ub: i64,
    #[arg(long, default_value = "chain_rule", value_parser = parse_strategy)]
    ctrld_strategy: CtrlStrategy,
    #[arg(long)]
    fuse_swapins: bool,
    #[arg(long, default_value_t = 1)]
    swapin_fuse_distance: u32,
    #[arg(long)]
    swap_branches: bool,
    #[arg(long, default_value_t = 0)]
    branch_threshold: u32,
    #[arg(long, value_delimiter = ',')]
    excl_scopes: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    incl_scopes: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    excl_types: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    incl_types: Vec<String>,
    #[arg(long)]
    starting_scope: Option<String>,
    #[arg(long, value_delimiter = ',')]
    starting_op_names: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    optimizer_scopes: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    input: PathBuf,
    /// Report JSON; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write the event trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    capacity_bytes: Option<u64>,
    /// Host-to-device bytes per time unit.
    #[arg(long)]
    h2d_bandwidth: Option<f64>,
    /// Device-to-host bytes per time unit.
    #[arg(long)]
    d2h_bandwidth: Option<f64>,
    /// Run transfers on the compute engine instead of dedicated channels.
    #[arg(long)]
    no_overlap: bool,
    /// One engine, instantaneous transfers, strict `(order, id)` execution.
    #[arg(long, conflicts_with_all = ["h2d_bandwidth", "d2h_bandwidth", "no_overlap"])]
    serial: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Report of the unswapped graph.
    baseline: PathBuf,
    /// Report of the rewritten graph.
    candidate: PathBuf,
}

#[derive(Args)]
struct ExportDotArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> std::result::Result<CtrlStrategy, String> {
    s.parse()
}

fn set(v: Vec<String>) -> BTreeSet<String> {
    v.into_iter().filter(|s| !s.is_empty()).collect()
}

impl RewriteArgs {
    fn config(&self) -> RewriteConfig {
        RewriteConfig {
            optimizer_scopes: set(self.optimizer_scopes.clone()),
            starting_scope: self.starting_scope.clone(),
            starting_op_names: set(self.starting_op_names.clone()),
            excl_scopes: set(self.excl_scopes.clone()),
            incl_scopes: set(self.incl_scopes.clone()),
            excl_types: set(self.excl_types.clone()),
            incl_types: set(self.incl_types.clone()),
            n_tensors: self.n_tensors,
            lb: self.lb,
            ub: self.ub,
            ctrld_strategy: self.ctrld_strategy,
            fuse_swapins: self.fuse_swapins,
            swapin_fuse_distance: self.swapin_fuse_distance,
            swap_branches: self.swap_branches,
            branch_threshold: self.branch_threshold,
        }
    }
}

impl SimulateArgs {
    fn config(&self) -> SimConfig {
        let mut cfg = if self.serial {
            SimConfig::serial()
        } else {
            SimConfig::default()
        };
        if let Some(c) = self.capacity_bytes {
            cfg.device_capacity_bytes = c;
        }
        if let Some(b) = self.h2d_bandwidth {
            cfg.host_to_device_bandwidth = b;
        }
        if let Some(b) = self.d2h_bandwidth {
            cfg.device_to_host_bandwidth = b;
        }
        if self.no_overlap {
            cfg.overlap_transfers = false;
        }
        cfg
    }
}

fn read_graph(path: &Path) -> Result<CompGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let g = from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let v = g.validate();
    if !v.is_valid() {
        return Err(Error::Invalid(v)).with_context(|| format!("validating {}", path.display()));
    }
    Ok(g)
}

fn read_report(path: &Path) -> Result<SimReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `text` to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn with_newline(mut s: String) -> String {
    s.push('\n');
    s
}

fn run_generate(a: &GenerateArgs) -> Result<()> {
    let topology = match a.topology {
        TopologyName::Chain => Topology::Chain { n: a.n },
        TopologyName::Branchy => Topology::Branchy {
            stages: a.stages,
            width: a.width,
        },
        TopologyName::Unet => Topology::Unet {
            depth: a.depth,
            convs_per_level: a.convs_per_level,
        },
        TopologyName::ResnetLike => Topology::ResnetLike { blocks: a.blocks },
    };
    let g = generate(topology, a.tensor_bytes)?;
    log::info!(
        "generated {topology:?}: {} nodes, {} edges",
        g.nodes().len(),
        g.edges().len()
    );
    emit(a.output.as_deref(), &to_json(&g))
}

fn run_rewrite(a: &RewriteArgs) -> Result<()> {
    let g = read_graph(&a.input)?;
    let (r, report) = rewrite(&g, &a.config())?;
    for s in &report.skipped {
        log::debug!("skipped {} -> {}: {}", s.src, s.dst, s.reason);
    }
    emit(a.output.as_deref(), &to_json(&r))?;
    if let Some(p) = &a.report {
        emit(
            Some(p),
            &with_newline(serde_json::to_string_pretty(&report)?),
        )?;
    }
    eprintln!(
        "tensors_swapped: {}, swap_outs: {}, swap_ins: {}",
        report.tensors_swapped, report.swap_outs_added, report.swap_ins_added
    );
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let g = read_graph(&a.input)?;
    let order = g.topo_order()?;
    let report = simulate(&g, &order, &a.config())?;
    if let Some(p) = &a.trace {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        report.write_trace_csv(BufWriter::new(f))?;
    }
    // The trace can be large; the JSON report carries the summary only.
    let summary = SimReport {
        event_trace: Vec::new(),
        ..report
    };
    if summary.oom {
        log::warn!(
            "peak device memory {} exceeds capacity {}",
            summary.peak_device_bytes,
            a.config().device_capacity_bytes
        );
    }
    emit(
        a.output.as_deref(),
        &with_newline(serde_json::to_string_pretty(&summary)?),
    )
}

fn ratio(num: f64, den: f64) -> String {
    if den == 0.0 {
        "n/a".to_owned()
    } else {
        format!("{:.2}x", num / den)
    }
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let base = read_report(&a.baseline)?;
    let cand = read_report(&a.candidate)?;
    let text = format!(
        "device peak ratio: {}\nmakespan ratio: {}\npeak device bytes: {} -> {}\nmakespan: {} -> {}\ntransfer wait: {} -> {}\n",
        ratio(base.peak_device_bytes as f64, cand.peak_device_bytes as f64),
        ratio(cand.makespan, base.makespan),
        base.peak_device_bytes,
        cand.peak_device_bytes,
        base.makespan,
        cand.makespan,
        base.transfer_wait_time,
        cand.transfer_wait_time,
    );
    emit(None, &text)
}

fn run_export_dot(a: &ExportDotArgs) -> Result<()> {
    let g = read_graph(&a.input)?;
    emit(a.output.as_deref(), &to_dot(&g))
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("SWAPGRAPH_LOG").as_deref() {
        Err(_) | Ok("") => log::LevelFilter::Warn,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => bail!("SWAPGRAPH_LOG must be quiet, info or debug, got `{other}`"),
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_logging().and_then(|()| match &cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Rewrite(a) => run_rewrite(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Report(a) => run_report(a),
        Command::ExportDot(a) => run_export_dot(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
