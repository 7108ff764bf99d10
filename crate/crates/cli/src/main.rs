//! `sinrsim`: generate topologies, inspect them and run experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sinr_core::analysis::{
    expected_out_of_proximity_interference, gamma_bound, prob_no_proximity_transmission, ProbabilityAssignment,
};
use sinr_core::broadcast::SlowStartConfig;
use sinr_core::harness::{
    default_params, generate_topology, report_summary, run_experiment, BroadcastKind, BroadcastOptions,
    ColoringOptions, ExperimentConfig, ExperimentReport, ProtocolChoice, TopologySource, TopologySpec, WakeMode,
};
use sinr_core::model::{Network, TopologyFile};

#[derive(Parser)]
#[command(name = "sinrsim", version, about = "SINR network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated topology file.
    Generate {
        /// e.g. random:n=64,side=12,pmin=1,pmax=8 or chain:n=5,ratio=2
        #[arg(long)]
        spec: TopologySpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exponent of the high-probability guarantees.
        #[arg(long, default_value_t = 2.0)]
        c_whp: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print structural quantities and interference certificates.
    Analyze {
        #[arg(long)]
        topology: PathBuf,
    },
    /// Run a local-broadcast protocol.
    RunBroadcast {
        #[arg(long, value_parser = ["fixed", "slowstart", "varpower"])]
        protocol: String,
        #[command(flatten)]
        common: Common,
        /// Network size estimate for slow-start (0 = true n).
        #[arg(long, default_value_t = 0)]
        n_estimate: usize,
        /// Constant of the slow-start global budget.
        #[arg(long, default_value_t = 64.0)]
        budget_constant: f64,
        /// Period of the two-level power schedule.
        #[arg(long, default_value_t = 16)]
        power_period: u64,
        /// Directory for per-seed JSON-lines slot traces.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Run the coloring protocol.
    RunColoring {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        coloring: ColoringArgs,
    },
    /// Run the maximal independent set protocol.
    RunMis {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        coloring: ColoringArgs,
    },
    /// Print the summary table of a saved run.
    Report {
        #[arg(long)]
        summary: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    topology: PathBuf,
    /// Number of seeds; runs seeds base..base+K.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Constant-scale factor in (0, 1]; defaults to the file's value.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value = "none")]
    async_wakeup: WakeMode,
    /// Per-node CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON summary output.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ColoringArgs {
    /// Colored nodes forced to resign once everyone is colored.
    #[arg(long, default_value_t = 0)]
    forced_resignations: usize,
    /// Skip replaying resets against the reception log.
    #[arg(long)]
    no_reset_check: bool,
}

fn config(common: &Common, protocol: ProtocolChoice) -> Result<ExperimentConfig> {
    if common.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let seeds = (common.seed_base..common.seed_base + common.seeds).collect();
    let mut cfg = ExperimentConfig::new(TopologySource::File(common.topology.clone()), protocol, seeds);
    cfg.scale = common.scale;
    cfg.csv_out = common.csv.clone();
    cfg.summary_out = common.summary.clone();
    Ok(cfg)
}

fn coloring_opts(mis: bool, common: &Common, args: &ColoringArgs) -> ColoringOptions {
    let mut o = ColoringOptions::new(mis);
    o.wake = common.async_wakeup;
    o.forced_resignations = args.forced_resignations;
    o.check_resets = !args.no_reset_check;
    o
}

fn run(cfg: ExperimentConfig) -> Result<ExitCode> {
    let report = run_experiment(&cfg)?;
    if cfg.csv_out.is_none() {
        print!("{}", report.rows.to_csv_string()?);
    }
    print!("{}", report_summary(&report));
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

#[derive(Serialize)]
struct NodeCertificate {
    id: u32,
    r_max: f64,
    r_bcast: f64,
    out_degree: usize,
    no_proximity_product: f64,
    interference_alpha_hi: f64,
    interference_alpha_true: f64,
    region_sum: f64,
}

#[derive(Serialize)]
struct Analysis {
    n: usize,
    gamma: f64,
    gamma_ratio: f64,
    delta: usize,
    ell: usize,
    p: f64,
    interference_limit: f64,
    nodes: Vec<NodeCertificate>,
}

fn analyze(net: &Network) -> Result<Analysis> {
    let params = net.params();
    let gamma = gamma_bound(params, net.gamma_ratio(), net.len());
    let p = gamma / net.delta_max().max(1) as f64;
    let probs = ProbabilityAssignment::uniform(net.len(), p)?;
    let mut nodes = Vec::with_capacity(net.len());
    for v in 0..net.len() {
        let region = probs.get(v) + net.out_neighbors(v).iter().map(|&u| probs.get(u)).sum::<f64>();
        nodes.push(NodeCertificate {
            id: net.node(v).id.0,
            r_max: net.r_max(v),
            r_bcast: net.r_bcast(v),
            out_degree: net.out_neighbors(v).len(),
            no_proximity_product: prob_no_proximity_transmission(net, &probs, v)?,
            interference_alpha_hi: expected_out_of_proximity_interference(net, &probs, v, params.alpha_hi)?,
            interference_alpha_true: expected_out_of_proximity_interference(net, &probs, v, params.alpha_true)?,
            region_sum: region,
        });
    }
    Ok(Analysis {
        n: net.len(),
        gamma,
        gamma_ratio: net.gamma_ratio(),
        delta: net.delta_max(),
        ell: net.ell(),
        p,
        interference_limit: (params.delta - 1.0) * params.noise_hi / 2.0,
        nodes,
    })
}

fn main() -> Result<ExitCode> {
    // status 2 is reserved for failed verdicts
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return Ok(ExitCode::from(1));
        }
        Err(e) => {
            let _ = e.print();
            return Ok(ExitCode::SUCCESS);
        }
    };
    match cli.command {
        Command::Generate {
            spec,
            seed,
            c_whp,
            scale,
            out,
        } => {
            let params = default_params(c_whp).with_scale(scale);
            let net = generate_topology(&spec, &params, seed)?;
            let text = net.to_topology().to_json()?;
            match out {
                Some(p) => std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { topology } => {
            let net = TopologyFile::read(&topology)?.build()?;
            println!("{}", serde_json::to_string_pretty(&analyze(&net)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::RunBroadcast {
            protocol,
            common,
            n_estimate,
            budget_constant,
            power_period,
            trace_dir,
        } => {
            let kind: BroadcastKind = protocol.parse()?;
            let mut opts = BroadcastOptions::new(kind);
            opts.slowstart = SlowStartConfig {
                n_estimate,
                budget_constant,
            };
            opts.power_period = power_period;
            opts.wake = common.async_wakeup;
            let mut cfg = config(&common, ProtocolChoice::Broadcast(opts))?;
            cfg.trace_dir = trace_dir;
            run(cfg)
        }
        Command::RunColoring { common, coloring } => {
            let opts = coloring_opts(false, &common, &coloring);
            run(config(&common, ProtocolChoice::Coloring(opts))?)
        }
        Command::RunMis { common, coloring } => {
            let opts = coloring_opts(true, &common, &coloring);
            run(config(&common, ProtocolChoice::Coloring(opts))?)
        }
        Command::Report { summary } => {
            let text = std::fs::read_to_string(&summary).with_context(|| format!("reading {}", summary.display()))?;
            let report = ExperimentReport::from_summary_json(&text)?;
            print!("{}", report_summary(&report));
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}
