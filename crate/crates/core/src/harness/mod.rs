//! Topology generation, experiment orchestration and reporting.
//!
//! CSV columns, one row per node and seed:
//! - broadcast: `seed,node_id,protocol,success,first_success_slot,budget`
//! - coloring: `seed,node_id,final_color,colored_at_slot,competes_visited,resigned_count`
//! - mis: `seed,node_id,mis,colored_at_slot,competes_visited,resigned_count`
//!
//! Empty cells mean "none" (never colored, no receivers).

mod topology;
mod trials;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use topology::{apply_wake, generate_topology, TopologySpec, WakeMode};
pub use trials::{
    fixed_region_cap, run_broadcast_trial, run_coloring_trial, two_level_schedule, BroadcastKind,
    BroadcastOptions, BroadcastRow, BroadcastTrial, Check, ColoringOptions, ColoringRow, ColoringTrial, MisRow,
};

use crate::analysis::{
    expected_out_of_proximity_interference, gamma_bound, prob_no_proximity_transmission, region_probability_sums,
    ProbabilityAssignment,
};
use crate::error::{Error, Result};
use crate::model::{Network, NetworkParams, TopologyFile};

/// Parameters used by the presets: `alpha = 3`, `beta = 1`, `N = 1`,
/// `delta = 2`, known exactly.
pub fn default_params(c_whp: f64) -> NetworkParams {
    NetworkParams::exact(3.0, 1.0, 1.0, 2.0, c_whp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TopologySource {
    File(PathBuf),
    /// Generated from the spec with its own seed and parameters.
    Generated {
        spec: TopologySpec,
        seed: u64,
        params: NetworkParams,
    },
}

impl TopologySource {
    pub fn load(&self) -> Result<Network> {
        match self {
            TopologySource::File(p) => TopologyFile::read(p)?.build(),
            TopologySource::Generated { spec, seed, params } => generate_topology(spec, params, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProtocolChoice {
    Broadcast(BroadcastOptions),
    Coloring(ColoringOptions),
}

impl ProtocolChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolChoice::Broadcast(o) => o.kind.as_str(),
            ProtocolChoice::Coloring(o) if o.mis => "mis",
            ProtocolChoice::Coloring(_) => "coloring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    pub protocol: ProtocolChoice,
    pub seeds: Vec<u64>,
    /// Overrides the topology's constant-scale factor when set.
    pub scale: Option<f64>,
    pub csv_out: Option<PathBuf>,
    pub summary_out: Option<PathBuf>,
    /// Directory receiving one JSON-lines slot trace per broadcast seed.
    pub trace_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(topology: TopologySource, protocol: ProtocolChoice, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            topology,
            protocol,
            seeds,
            scale: None,
            csv_out: None,
            summary_out: None,
            trace_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidArgument(format!("scale {s} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Analytic certificate values for the assignment `p = gamma / Delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub n: usize,
    pub gamma: f64,
    pub gamma_ratio: f64,
    pub delta: usize,
    pub ell: usize,
    pub p: f64,
    pub max_region_sum: f64,
    /// Worst expected interference from outside the proximity regions.
    pub max_interference: f64,
    /// `(delta - 1) N / 2`.
    pub interference_limit: f64,
    pub min_no_proximity: f64,
}

impl Certificates {
    pub fn compute(net: &Network) -> Result<Self> {
        let params = net.params();
        let gamma = gamma_bound(params, net.gamma_ratio(), net.len());
        let delta = net.delta_max().max(1);
        let p = gamma / delta as f64;
        let probs = ProbabilityAssignment::uniform(net.len(), p)?;
        let mut max_interference = 0.0f64;
        let mut min_no_proximity = 1.0f64;
        for v in 0..net.len() {
            max_interference =
                max_interference.max(expected_out_of_proximity_interference(net, &probs, v, params.alpha_hi)?);
            min_no_proximity = min_no_proximity.min(prob_no_proximity_transmission(net, &probs, v)?);
        }
        Ok(Certificates {
            n: net.len(),
            gamma,
            gamma_ratio: net.gamma_ratio(),
            delta: net.delta_max(),
            ell: net.ell(),
            p,
            max_region_sum: region_probability_sums(net, &probs)?,
            max_interference,
            interference_limit: (params.delta - 1.0) * params.noise_hi / 2.0,
            min_no_proximity,
        })
    }
}

/// Per-seed summary kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub passed: bool,
    pub slots_run: u64,
    pub checks: Vec<CheckSummary>,
    /// Mean completion slot relative to the node's start, broadcast only.
    pub mean_slots_to_success: Option<f64>,
    pub budget: u64,
    pub colors_used: Option<usize>,
    pub color_bound: Option<u64>,
    pub max_region_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub node: Option<u32>,
    pub slot: Option<u64>,
}

impl From<&Check> for CheckSummary {
    fn from(c: &Check) -> Self {
        CheckSummary {
            name: c.name.clone(),
            passed: c.passed,
            detail: c.detail.clone(),
            node: c.node.map(|n| n.0),
            slot: c.slot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rows {
    Broadcast(Vec<BroadcastRow>),
    Coloring(Vec<ColoringRow>),
    Mis(Vec<MisRow>),
}

impl Rows {
    pub fn empty() -> Self {
        Rows::Broadcast(Vec::new())
    }

    pub fn len(&self) -> usize {
        match self {
            Rows::Broadcast(r) => r.len(),
            Rows::Coloring(r) => r.len(),
            Rows::Mis(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write as CSV with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match self {
            Rows::Broadcast(r) => r.iter().try_for_each(|x| out.serialize(x))?,
            Rows::Coloring(r) => r.iter().try_for_each(|x| out.serialize(x))?,
            Rows::Mis(r) => r.iter().try_for_each(|x| out.serialize(x))?,
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub certificates: Certificates,
    pub trials: Vec<TrialSummary>,
    #[serde(skip, default = "Rows::empty")]
    pub rows: Rows,
    pub wall_clock_ms: u128,
}

impl ExperimentReport {
    pub fn all_passed(&self) -> bool {
        self.trials.iter().all(|t| t.passed)
    }

    pub fn success_rate(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| t.passed).count() as f64 / self.trials.len() as f64
    }

    /// Report without the per-node rows, as written to the summary file.
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Read a summary written by [`ExperimentReport::summary_json`]. Rows are
    /// not part of it and come back empty.
    pub fn from_summary_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary_json()? + "\n")?;
        Ok(())
    }
}

fn broadcast_summary(t: &BroadcastTrial) -> TrialSummary {
    let spans: Vec<f64> = t
        .rows
        .iter()
        .zip(&t.starts)
        .filter_map(|(r, &s)| r.first_success_slot.map(|f| (f - s) as f64))
        .collect();
    TrialSummary {
        seed: t.seed,
        passed: t.passed(),
        slots_run: t.slots_run,
        checks: t.checks.iter().map(CheckSummary::from).collect(),
        mean_slots_to_success: (!spans.is_empty()).then(|| spans.iter().sum::<f64>() / spans.len() as f64),
        budget: t.rows.first().map_or(0, |r| r.budget),
        colors_used: None,
        color_bound: None,
        max_region_sum: t.safety.max_region_sum,
    }
}

fn coloring_summary(t: &ColoringTrial) -> TrialSummary {
    TrialSummary {
        seed: t.seed,
        passed: t.passed(),
        slots_run: t.slots_run,
        checks: t.checks.iter().map(CheckSummary::from).collect(),
        mean_slots_to_success: None,
        budget: t.budget,
        colors_used: Some(t.distinct_colors),
        color_bound: (!t.mis).then_some(t.color_bound),
        max_region_sum: t.safety.max_region_sum,
    }
}

/// Run every seed of `config`, write the requested outputs and return the
/// merged report. Trials run in parallel; rows are merged in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let mut net = config.topology.load()?;
    if let Some(scale) = config.scale {
        net = Network::build(net.nodes().to_vec(), net.params().with_scale(scale))?;
    }
    let certificates = Certificates::compute(&net)?;
    let (trials, rows) = match &config.protocol {
        ProtocolChoice::Broadcast(opts) => {
            let mut opts = opts.clone();
            opts.keep_trace |= config.trace_dir.is_some();
            let runs = config
                .seeds
                .par_iter()
                .map(|&s| run_broadcast_trial(&net, &opts, s))
                .collect::<Result<Vec<_>>>()?;
            if let Some(dir) = &config.trace_dir {
                std::fs::create_dir_all(dir)?;
                for t in &runs {
                    if let Some(trace) = &t.trace {
                        let f = std::fs::File::create(dir.join(format!("trace-{}.jsonl", t.seed)))?;
                        trace.write_lines(std::io::BufWriter::new(f))?;
                    }
                }
            }
            let rows = runs.iter().flat_map(|t| t.rows.iter().cloned()).collect();
            (runs.iter().map(broadcast_summary).collect(), Rows::Broadcast(rows))
        }
        ProtocolChoice::Coloring(opts) => {
            let runs = config
                .seeds
                .par_iter()
                .map(|&s| run_coloring_trial(&net, opts, s))
                .collect::<Result<Vec<_>>>()?;
            let rows = if opts.mis {
                Rows::Mis(runs.iter().flat_map(|t| t.mis_rows()).collect())
            } else {
                Rows::Coloring(runs.iter().flat_map(|t| t.rows.iter().cloned()).collect())
            };
            (runs.iter().map(coloring_summary).collect(), rows)
        }
    };
    let report = ExperimentReport {
        protocol: config.protocol.name().into(),
        certificates,
        trials,
        rows,
        wall_clock_ms: started.elapsed().as_millis(),
    };
    if let Some(p) = &config.csv_out {
        report.rows.write_csv(std::fs::File::create(p)?)?;
    }
    if let Some(p) = &config.summary_out {
        report.write_summary(p)?;
    }
    Ok(report)
}

/// Human-readable table of a report.
pub fn report_summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let c = &report.certificates;
    let passed = report.trials.iter().filter(|t| t.passed).count();
    let _ = writeln!(
        s,
        "protocol {}  n={} Gamma={:.4} Delta={} ell={} gamma={:.6e}",
        report.protocol, c.n, c.gamma_ratio, c.delta, c.ell, c.gamma
    );
    let _ = writeln!(
        s,
        "success {:.0}%  ({passed}/{} trials)",
        100.0 * report.success_rate(),
        report.trials.len()
    );
    let means: Vec<f64> = report.trials.iter().filter_map(|t| t.mean_slots_to_success).collect();
    if !means.is_empty() {
        let budget = report.trials.first().map_or(0, |t| t.budget);
        let _ = writeln!(
            s,
            "mean slots to success {:.1} of budget {budget}",
            means.iter().sum::<f64>() / means.len() as f64
        );
    }
    let colors: Vec<usize> = report.trials.iter().filter_map(|t| t.colors_used).collect();
    if let Some(&most) = colors.iter().max() {
        match report.trials.first().and_then(|t| t.color_bound) {
            Some(bound) => {
                let _ = writeln!(s, "colors used at most {most} (bound {bound})");
            }
            None => {
                let _ = writeln!(s, "colors used at most {most}");
            }
        }
    }
    let _ = writeln!(
        s,
        "margins interference {:.6e} vs (delta-1)N/2 = {:.6e}; no-proximity {:.4} vs 0.25; region sum {:.6e} vs gamma {:.6e}",
        c.max_interference, c.interference_limit, c.min_no_proximity, c.max_region_sum, c.gamma
    );
    let peak = report.trials.iter().map(|t| t.max_region_sum).fold(0.0, f64::max);
    let _ = writeln!(s, "live region sum peak {peak:.6e}");
    for t in &report.trials {
        for ch in t.checks.iter().filter(|c| !c.passed) {
            let node = ch.node.map_or("-".to_string(), |n| n.to_string());
            let slot = ch.slot.map_or("-".to_string(), |n| n.to_string());
            let _ = writeln!(s, "FAIL seed {} {}: node {node} slot {slot}: {}", t.seed, ch.name, ch.detail);
        }
    }
    let _ = writeln!(s, "verdict {}", if report.all_passed() { "PASS" } else { "FAIL" });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique_source(n: usize) -> TopologySource {
        TopologySource::Generated {
            spec: TopologySpec::Clique { n, power: 8.0 },
            seed: 0,
            params: default_params(2.0),
        }
    }

    #[test]
    fn empty_seeds_rejected() {
        let cfg = ExperimentConfig::new(
            clique_source(3),
            ProtocolChoice::Broadcast(BroadcastOptions::new(BroadcastKind::Fixed)),
            vec![],
        );
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn two_seeds_two_trials() {
        let cfg = ExperimentConfig::new(
            clique_source(4),
            ProtocolChoice::Broadcast(BroadcastOptions::new(BroadcastKind::Fixed)),
            vec![1, 2],
        );
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.trials.len(), 2);
        assert_eq!(r.rows.len(), 8);
        let text = report_summary(&r);
        assert!(text.contains("success 100%"), "{text}");
        assert!(text.contains("verdict PASS"));
        let back = ExperimentReport::from_summary_json(&r.summary_json().unwrap()).unwrap();
        assert_eq!(back.trials, r.trials);
        assert_eq!(report_summary(&back), text);
    }

    #[test]
    fn failure_line_names_node_and_slot() {
        let cfg = ExperimentConfig::new(
            clique_source(4),
            ProtocolChoice::Broadcast(BroadcastOptions::new(BroadcastKind::Fixed)),
            vec![1],
        );
        let mut r = run_experiment(&cfg).unwrap();
        let t = &mut r.trials[0];
        t.passed = false;
        t.checks[0].passed = false;
        t.checks[0].node = Some(2);
        t.checks[0].slot = Some(77);
        let text = report_summary(&r);
        assert!(text.contains("FAIL seed 1 local_broadcast: node 2 slot 77"), "{text}");
        assert!(!r.all_passed());
    }

    #[test]
    fn bad_scale_rejected() {
        let mut cfg = ExperimentConfig::new(
            clique_source(3),
            ProtocolChoice::Coloring(ColoringOptions::new(false)),
            vec![1],
        );
        cfg.scale = Some(1.5);
        assert!(cfg.validate().is_err());
    }
}
