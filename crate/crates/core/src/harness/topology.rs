//! Topology presets and wake-up schedules.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{broadcast_range, Network, NetworkParams, Node};

/// A topology generator.
///
/// Textual form is `kind:key=value,...`, e.g. `random:n=64,side=12,pmin=1,pmax=8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologySpec {
    /// Uniform positions in a square, powers uniform in `[power_lo, power_hi]`.
    Random {
        n: usize,
        side: f64,
        power_lo: f64,
        power_hi: f64,
    },
    Grid {
        rows: usize,
        cols: usize,
        spacing: f64,
        power: f64,
    },
    /// Each node reaches its successor but not its predecessor. Powers fall
    /// by `ratio` along the chain, so `ell = n - 1`.
    Chain { n: usize, ratio: f64 },
    /// Random positions, one power for everyone.
    Uniform { n: usize, side: f64, power: f64 },
    /// Everyone within everyone's broadcasting range.
    Clique { n: usize, power: f64 },
}

impl TopologySpec {
    pub fn node_count(&self) -> usize {
        match *self {
            TopologySpec::Random { n, .. }
            | TopologySpec::Chain { n, .. }
            | TopologySpec::Uniform { n, .. }
            | TopologySpec::Clique { n, .. } => n,
            TopologySpec::Grid { rows, cols, .. } => rows * cols,
        }
    }
}

fn kv(body: &str) -> Result<Vec<(&str, f64)>> {
    body.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad number in `{part}`")))?;
            Ok((k.trim(), v))
        })
        .collect()
}

fn take(pairs: &[(&str, f64)], key: &str, default: Option<f64>) -> Result<f64> {
    pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|&(_, v)| v)
        .or(default)
        .ok_or_else(|| Error::InvalidArgument(format!("missing `{key}`")))
}

fn count(v: f64, key: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!("`{key}` must be a positive integer")))
    }
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s.split_once(':').unwrap_or((s, ""));
        let p = kv(body)?;
        let spec = match kind.trim() {
            "random" => TopologySpec::Random {
                n: count(take(&p, "n", None)?, "n")?,
                side: take(&p, "side", None)?,
                power_lo: take(&p, "pmin", None)?,
                power_hi: take(&p, "pmax", None)?,
            },
            "grid" => TopologySpec::Grid {
                rows: count(take(&p, "rows", None)?, "rows")?,
                cols: count(take(&p, "cols", None)?, "cols")?,
                spacing: take(&p, "spacing", None)?,
                power: take(&p, "power", None)?,
            },
            "chain" => TopologySpec::Chain {
                n: count(take(&p, "n", None)?, "n")?,
                ratio: take(&p, "ratio", Some(2.0))?,
            },
            "uniform" => TopologySpec::Uniform {
                n: count(take(&p, "n", None)?, "n")?,
                side: take(&p, "side", None)?,
                power: take(&p, "power", None)?,
            },
            "clique" => TopologySpec::Clique {
                n: count(take(&p, "n", None)?, "n")?,
                power: take(&p, "power", Some(8.0))?,
            },
            other => return Err(Error::InvalidArgument(format!("unknown topology kind `{other}`"))),
        };
        Ok(spec)
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TopologySpec::Random {
                n,
                side,
                power_lo,
                power_hi,
            } => write!(f, "random:n={n},side={side},pmin={power_lo},pmax={power_hi}"),
            TopologySpec::Grid {
                rows,
                cols,
                spacing,
                power,
            } => write!(f, "grid:rows={rows},cols={cols},spacing={spacing},power={power}"),
            TopologySpec::Chain { n, ratio } => write!(f, "chain:n={n},ratio={ratio}"),
            TopologySpec::Uniform { n, side, power } => write!(f, "uniform:n={n},side={side},power={power}"),
            TopologySpec::Clique { n, power } => write!(f, "clique:n={n},power={power}"),
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive")))
    }
}

fn scatter(
    n: usize,
    side: f64,
    mut power: impl FnMut(&mut ChaCha8Rng) -> f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Node>> {
    positive(side, "side")?;
    let min_gap = 1e-6 * side;
    let mut nodes: Vec<Node> = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while nodes.len() < n {
        attempts += 1;
        if attempts > 1000 * n as u64 + 1000 {
            return Err(Error::InvalidArgument("could not place nodes without collisions".into()));
        }
        let x = rng.random_range(0.0..side);
        let y = rng.random_range(0.0..side);
        if nodes
            .iter()
            .any(|o| (o.x - x).hypot(o.y - y) < min_gap)
        {
            continue;
        }
        let p = power(rng);
        nodes.push(Node::new(nodes.len() as u32, x, y, p));
    }
    Ok(nodes)
}

/// Build the network described by `spec`. Random presets draw from `seed`.
pub fn generate_topology(spec: &TopologySpec, params: &NetworkParams, seed: u64) -> Result<Network> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = match *spec {
        TopologySpec::Random {
            n,
            side,
            power_lo,
            power_hi,
        } => {
            positive(power_lo, "pmin")?;
            if power_hi < power_lo {
                return Err(Error::InvalidArgument("pmax below pmin".into()));
            }
            scatter(
                n,
                side,
                |r| {
                    if power_hi > power_lo {
                        r.random_range(power_lo..=power_hi)
                    } else {
                        power_lo
                    }
                },
                &mut rng,
            )?
        }
        TopologySpec::Uniform { n, side, power } => {
            positive(power, "power")?;
            scatter(n, side, |_| power, &mut rng)?
        }
        TopologySpec::Grid {
            rows,
            cols,
            spacing,
            power,
        } => {
            positive(spacing, "spacing")?;
            positive(power, "power")?;
            (0..rows * cols)
                .map(|k| {
                    let (r, c) = (k / cols, k % cols);
                    Node::new(k as u32, c as f64 * spacing, r as f64 * spacing, power)
                })
                .collect()
        }
        TopologySpec::Chain { n, ratio } => {
            if !(ratio > 1.0 && ratio.is_finite()) {
                return Err(Error::InvalidArgument("chain ratio must exceed 1".into()));
            }
            // the last node has broadcasting range 1
            let floor = params.delta * params.noise_hi * params.beta_hi;
            let powers: Vec<f64> = (0..n)
                .map(|i| floor * ratio.powi((n - 1 - i) as i32))
                .collect();
            let ranges = powers
                .iter()
                .map(|&p| broadcast_range(p, params))
                .collect::<Result<Vec<_>>>()?;
            let mut x = 0.0;
            let mut nodes = Vec::with_capacity(n);
            for i in 0..n {
                nodes.push(Node::new(i as u32, x, 0.0, powers[i]));
                if i + 1 < n {
                    x += (ranges[i] + ranges[i + 1]) / 2.0;
                }
            }
            nodes
        }
        TopologySpec::Clique { n, power } => {
            positive(power, "power")?;
            let r = broadcast_range(power, params)?;
            let radius = 0.45 * r;
            (0..n)
                .map(|i| {
                    let a = i as f64 * std::f64::consts::TAU / n as f64;
                    Node::new(i as u32, radius * a.cos(), radius * a.sin(), power)
                })
                .collect()
        }
    };
    Network::build(nodes, *params)
}

/// When nodes start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WakeMode {
    /// Everybody at slot 0.
    #[default]
    Static,
    /// Uniform wake slots in `[0, window)`.
    Random { window: u64 },
}

impl FromStr for WakeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "static" => Ok(WakeMode::Static),
            other => {
                let w = other
                    .strip_prefix("random:")
                    .and_then(|w| w.parse::<u64>().ok())
                    .filter(|&w| w > 0)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("wake mode `{other}`: expected none or random:WINDOW"))
                    })?;
                Ok(WakeMode::Random { window: w })
            }
        }
    }
}

impl fmt::Display for WakeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WakeMode::Static => f.write_str("none"),
            WakeMode::Random { window } => write!(f, "random:{window}"),
        }
    }
}

/// Copy of `net` with wake slots drawn per `mode`. Static leaves the file's
/// own wake slots alone.
pub fn apply_wake(net: &Network, mode: WakeMode, seed: u64) -> Result<Network> {
    match mode {
        WakeMode::Static => Ok(net.clone()),
        WakeMode::Random { window } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5745_4b45);
            let nodes = net
                .nodes()
                .iter()
                .map(|n| Node {
                    wake_slot: rng.random_range(0..window),
                    sleep_slot: None,
                    ..n.clone()
                })
                .collect();
            Network::build(nodes, *net.params())
        }
    }
}
