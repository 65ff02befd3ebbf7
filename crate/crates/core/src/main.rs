use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use xorcast::coding::Depth;
use xorcast::config::load_config;
use xorcast::metrics::{throughput, write_report, Level, RunRecord};
use xorcast::sim::{run, Algorithm, RunConfig};
use xorcast::sweep::{render_summary, run_sweep, summarize, AxisValues, Preset, SweepSpec};
use xorcast::traffic::{generate_stream, save_trace, StreamProfile};

#[derive(Parser)]
#[command(name = "xorcast", version, about = "Video-aware XOR network coding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its results CSV.
    Run(RunArgs),
    /// Run a parameter grid over several seeds.
    Sweep(SweepArgs),
    /// Write a synthetic packet trace.
    GenTrace(GenTraceArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scheduling policy: noNC, NCT, NCV, NCVD or NCV-MWIS.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Lookahead of NCVD: a positive integer or `unbounded`.
    #[arg(long)]
    ncvd_depth: Option<Depth>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(a) = self.algorithm {
            cfg.algorithm = a;
        }
        if let Some(d) = self.ncvd_depth {
            cfg.ncvd_depth = d;
        }
        cfg.validate()?;
        if cfg.utilization() >= 1.0 {
            eprintln!(
                "warning: offered load is {:.2} of link capacity; queues will grow",
                cfg.utilization()
            );
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Results CSV path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Named grid: model1, model2 or delay-sweep.
    #[arg(long, conflicts_with_all = ["axis", "values"])]
    preset: Option<Preset>,
    /// Swept parameter: loss, delay, algorithm or snr.
    #[arg(long, requires = "values")]
    axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, requires = "axis")]
    values: Option<String>,
    /// Replicates per cell.
    #[arg(long)]
    seeds: Option<usize>,
    /// Merged results CSV path; the summary goes next to it.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GenTraceArgs {
    /// TOML configuration providing the traffic profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace length in milliseconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Number of flows.
    #[arg(long)]
    flows: Option<usize>,
    /// Per-flow rate in bit/s.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    gop: Option<u32>,
    /// Delay budget in milliseconds.
    #[arg(long)]
    delay_budget: Option<f64>,
    /// Trace CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn print_record(rec: &RunRecord) -> anyhow::Result<()> {
    let m = &rec.metrics;
    println!("algorithm      {}", rec.algorithm);
    println!("seed           {}", rec.seed);
    println!("loss           {:.4}", rec.loss_param);
    println!("delay budget   {} ms", rec.delay_budget);
    println!("offered        {}", m.offered());
    for (flow, f) in &m.per_flow {
        println!(
            "flow {flow:<9} on_time {} late {} expired {} proxy {:.4}",
            f.delivered_on_time,
            f.delivered_late,
            f.expired,
            xorcast::metrics::psnr_proxy(m, *flow)?
        );
    }
    if m.duration > 0.0 {
        println!("psnr proxy     {:.4}", m.mean_psnr_proxy()?);
        println!("app tput       {:.2} pkt/s", throughput(m, Level::App, m.duration)?);
        println!("mac tput       {:.2} pkt/s", throughput(m, Level::Mac, m.duration)?);
    }
    println!("transmissions  {}", m.transmissions);
    println!("mean tx queue  {:.3}", m.mean_tx_queue);
    println!("mean vbuf      {:.3}", m.mean_virtual_buffer);
    Ok(())
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let cfg = args.common.load()?;
    let metrics = run(&cfg)?;
    let rec = RunRecord {
        run_id: 0,
        seed: cfg.seed,
        algorithm: cfg.algorithm.to_string(),
        loss_param: cfg.channel.loss_param(cfg.traffic.packet_size),
        delay_budget: cfg.delay_budget,
        metrics,
    };
    write_report(std::slice::from_ref(&rec), &args.out)?;
    print_record(&rec)?;
    println!("results        {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let base = args.common.load()?;
    let mut spec = match (&args.preset, &args.axis, &args.values) {
        (Some(p), _, _) => p.spec(base),
        (None, Some(axis), Some(values)) => SweepSpec::new(base, AxisValues::parse(axis, values)?, 1),
        _ => bail!("sweep needs --preset or both --axis and --values"),
    };
    if let Some(n) = args.seeds {
        spec.seeds = n;
    }
    if let Some(a) = args.common.algorithm {
        if !matches!(spec.values, AxisValues::Algorithm(_)) {
            spec.algorithms = vec![a];
        }
    }
    let records = run_sweep(&spec)?;
    write_report(&records, &args.out)?;
    let cells = summarize(&records)?;
    let summary = render_summary(&cells);
    let summary_out = summary_path(&args.out);
    std::fs::write(&summary_out, &summary).with_context(|| format!("writing {}", summary_out.display()))?;
    print!("{summary}");
    println!(
        "{} runs -> {} and {}",
        records.len(),
        args.out.display(),
        summary_out.display()
    );
    Ok(())
}

fn cmd_gen_trace(args: GenTraceArgs) -> anyhow::Result<()> {
    let base = match &args.config {
        Some(path) => load_config(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    let duration = args.duration.unwrap_or(base.duration);
    if !(duration > 0.0 && duration.is_finite()) {
        bail!("trace duration must be positive, got {duration}");
    }
    let flows = args.flows.unwrap_or(base.num_clients);
    if flows == 0 {
        bail!("at least one flow is required");
    }
    let mut profile = StreamProfile {
        delay_budget: base.delay_budget,
        ..base.traffic.clone()
    };
    if let Some(r) = args.rate {
        profile.rate = r;
    }
    if let Some(f) = args.fps {
        profile.fps = f;
    }
    if let Some(g) = args.gop {
        profile.gop = g;
    }
    if let Some(b) = args.delay_budget {
        profile.delay_budget = b;
    }
    let mut packets = Vec::new();
    for f in 0..flows {
        packets.extend(generate_stream(&profile, f as u32, duration)?);
    }
    save_trace(&args.out, &packets)?;
    println!("{} packets in {} flows -> {}", packets.len(), flows, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
