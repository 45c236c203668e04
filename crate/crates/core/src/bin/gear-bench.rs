//! Desk-scale cluster benchmark.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gear::runtime::{
    bench_loop, hold_writes, ingest_offline, launch_cluster, mixed_workload, run_online_generator, run_plan,
    BenchPlan, ClusterConfig,
};
use gear::selection::{SelectionMode, Strategy};
use gear::{GearError, Shard};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "gear-bench", version, about = "Benchmark a desk-scale trajectory-replay cluster")]
struct Cli {
    /// TOML cluster configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "M")]
    nodes: Option<usize>,
    /// Clients per node.
    #[arg(long, value_name = "N")]
    clients: Option<usize>,
    /// Rows per shard.
    #[arg(long, value_name = "C")]
    capacity: Option<u64>,
    #[arg(long, value_name = "K")]
    batch_size: Option<usize>,
    #[arg(long, value_parser = ["uniform", "weighted", "fifo", "topk"])]
    strategy: Option<String>,
    #[arg(long, value_parser = ["centralized", "decentralized"])]
    mode: Option<String>,
    /// Use a single synthetic u8 column of B bytes.
    #[arg(long, value_name = "B")]
    block_bytes: Option<usize>,
    #[arg(long, value_name = "I")]
    iters: Option<usize>,
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    report: ReportFormat,
    /// Ingest an offline dataset before benchmarking.
    #[arg(long, value_name = "PATH")]
    ingest: Option<PathBuf>,
    /// Run the online generator at R trajectories/s before benchmarking.
    #[arg(long, value_name = "R")]
    online_rate: Option<f64>,
    /// Generator run time in seconds.
    #[arg(long, value_name = "SECS")]
    duration: Option<f64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Internal: client process entry points.
    #[command(hide = true, subcommand)]
    Worker(WorkerCommand),
}

#[derive(Debug, Subcommand)]
enum WorkerCommand {
    /// Join a bench as one client.
    Bench {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        rank: usize,
    },
    /// Mixed write/collect workload on one partition.
    Mixed {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        ops: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Leave rows in WRITING and wait to be killed.
    Hold {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        count: usize,
    },
}

#[derive(Debug, Args)]
struct Target {
    #[arg(long)]
    cluster: String,
    #[arg(long)]
    shard: u64,
    #[arg(long)]
    partition: usize,
}

impl Target {
    fn open(&self) -> gear::Result<Arc<Shard>> {
        Ok(Arc::new(Shard::open_by_id(&self.cluster, self.shard)?))
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<GearError> for Failure {
    fn from(e: GearError) -> Self {
        match e {
            GearError::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn build_config(cli: &Cli) -> Result<ClusterConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => ClusterConfig::from_file(path)?,
        None => ClusterConfig::default(),
    };
    if let Some(v) = cli.nodes {
        config.nodes = v;
    }
    if let Some(v) = cli.clients {
        config.clients_per_node = v;
    }
    if let Some(v) = cli.capacity {
        config.capacity = v;
    }
    if let Some(v) = cli.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = &cli.strategy {
        config.strategy = v.parse::<Strategy>()?;
    }
    if let Some(v) = &cli.mode {
        config.mode = v.parse::<SelectionMode>()?;
    }
    if let Some(v) = cli.block_bytes {
        config.block_bytes = v;
        config.columns.clear();
    }
    if let Some(v) = cli.iters {
        config.iterations = v;
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    if let Some(rate) = cli.online_rate {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Failure::Config(format!("--online-rate must be positive, got {rate}")));
        }
    }
    if let Some(d) = cli.duration {
        if cli.online_rate.is_none() {
            return Err(Failure::Config("--duration needs --online-rate".into()));
        }
        if !d.is_finite() || d <= 0.0 {
            return Err(Failure::Config(format!("--duration must be positive, got {d}")));
        }
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = build_config(&cli)?;
    let mut handle = launch_cluster(&config)?;
    let mut populated = false;
    if let Some(path) = &cli.ingest {
        let n = ingest_offline(&mut handle, path)?;
        eprintln!("ingested {n} trajectories from {}", path.display());
        populated = true;
    }
    if let Some(rate) = cli.online_rate {
        let duration = Duration::from_secs_f64(cli.duration.unwrap_or(1.0));
        let n = run_online_generator(&mut handle, rate, duration, config.priority, config.seed)?;
        eprintln!("generated {n} trajectories in {duration:?}");
        populated = true;
    }
    if !populated && config.prefill {
        let n = handle.prefill()?;
        eprintln!("prefilled {n} trajectories");
    }
    let report = bench_loop(&handle, handle.config.iterations)?;
    eprintln!(
        "{} clients, {} iterations, {} bytes, mean {:.3} GB/s",
        report.clients,
        report.iterations.len(),
        report.total_bytes,
        report.throughput_mean / 1e9
    );
    let text = match cli.report {
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Csv => report.to_csv()?,
    };
    emit(&text)
}

fn emit(text: &str) -> Result<(), Failure> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| Failure::Runtime(format!("cannot write report: {e}")))
}

fn run_worker(cmd: WorkerCommand) -> Result<(), Failure> {
    match cmd {
        WorkerCommand::Bench { plan, rank } => {
            let text = std::fs::read_to_string(&plan).map_err(|e| Failure::Runtime(e.to_string()))?;
            let plan: BenchPlan =
                serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("bad plan: {e}")))?;
            let report = run_plan(&plan, rank)?;
            emit(&(serde_json::to_string(&report).expect("report is serializable") + "\n"))?;
        }
        WorkerCommand::Mixed { target, ops, seed } => {
            let report = mixed_workload(target.open()?, target.partition, ops, seed)?;
            emit(&(serde_json::to_string(&report).expect("report is serializable") + "\n"))?;
        }
        WorkerCommand::Hold { target, count } => {
            let (_manager, _held) = hold_writes(target.open()?, target.partition, count)?;
            emit(&format!("holding {count}\n"))?;
            loop {
                std::thread::sleep(Duration::from_secs(3600));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let outcome = match cli.command.take() {
        Some(Command::Worker(cmd)) => run_worker(cmd),
        None => run(cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("gear-bench: configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("gear-bench: {m}");
            ExitCode::from(3)
        }
    }
}
