//! Run configuration: command-line flags layered over an optional flat
//! `key = value` file, then defaults matching the fixed-weight experiments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use otlab_core::checks::{DEFAULT_DEPTH, DEFAULT_GAMMA};
use otlab_core::problem::DEFAULT_LAMBDA;
use serde::Serialize;

use crate::Failure;

/// Flag values as parsed; `None` means "not given on the command line".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Number of points
    #[arg(long)]
    pub n: Option<usize>,
    /// Point dimension
    #[arg(long)]
    pub d: Option<usize>,
    /// Entropic regularization
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Stepsize scale
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Radius for the radius stepsize e^{-2r/λ}/(n+2); replaces --gamma
    #[arg(long)]
    pub r: Option<f64>,
    /// Number of layers / GD steps
    #[arg(long)]
    pub depth: Option<usize>,
    /// Seed for instance generation and property trials
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Layers to export, comma separated
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    /// Several point counts run with one weight set, comma separated
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Input list for `sort`, comma separated
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Sinkhorn marginal tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    /// Sinkhorn sweep limit
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Load transformer weights from a JSON file instead of constructing them
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Flat key=value configuration file; flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fully resolved configuration, echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// `None` lets `verify` sweep its own grid of sizes.
    pub n: Option<usize>,
    pub d: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub r: Option<f64>,
    pub depth: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub checkpoints: Option<Vec<usize>>,
    pub ns: Option<Vec<usize>>,
    pub x: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iters: usize,
    pub weights: Option<PathBuf>,
}

pub const DEFAULT_N: usize = 4;
pub const DEFAULT_OUT: &str = "otlab-out";

impl RunConfig {
    pub fn n(&self) -> usize {
        self.n.unwrap_or(DEFAULT_N)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Export layers: the given list, or `{1, 300, 600, depth}` clipped to
    /// the depth (just `{0}` at depth 0).
    pub fn export_layers(&self) -> Vec<usize> {
        let mut v = match &self.checkpoints {
            Some(c) => c.clone(),
            None if self.depth == 0 => vec![0],
            None => [1, 300, 600, self.depth]
                .into_iter()
                .filter(|&l| l <= self.depth)
                .collect(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let usage = |m: String| Err(Failure::Usage(m));
        if self.n == Some(0) {
            return usage("--n must be at least 1".into());
        }
        if let Some(ns) = &self.ns {
            if ns.is_empty() || ns.contains(&0) {
                return usage("--ns entries must be at least 1".into());
            }
        }
        if self.d == 0 {
            return usage("--d must be at least 1".into());
        }
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("tol", self.tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return usage(format!("--{name} must be positive and finite, got {v}"));
            }
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return usage(format!("--r must be positive and finite, got {r}"));
            }
        }
        if let Some(c) = &self.checkpoints {
            if let Some(bad) = c.iter().find(|&&l| l > self.depth) {
                return usage(format!("checkpoint {bad} exceeds depth {}", self.depth));
            }
        }
        if let Some(x) = &self.x {
            if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
                return usage("--x must be a nonempty list of finite numbers".into());
            }
        }
        Ok(())
    }
}

/// `key = value` lines; `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("config line {}: expected key=value", no + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn field<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, Failure> {
    kv.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Failure::Usage(format!("config key `{key}`: cannot parse `{v}`")))
        })
        .transpose()
}

fn list<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<Vec<T>>, Failure> {
    kv.get(key)
        .map(|v| {
            v.split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<Result<Vec<T>, _>>()
                .map_err(|_| Failure::Usage(format!("config key `{key}`: cannot parse `{v}`")))
        })
        .transpose()
}

const KNOWN_KEYS: &[&str] = &[
    "n",
    "d",
    "lambda",
    "gamma",
    "r",
    "depth",
    "seed",
    "out",
    "checkpoints",
    "ns",
    "x",
    "tol",
    "max_iters",
    "weights",
];

fn from_file(path: &Path) -> Result<Overrides, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let kv = parse_kv(&text)?;
    if let Some(bad) = kv.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Failure::Usage(format!("unknown config key `{bad}`")));
    }
    Ok(Overrides {
        n: field(&kv, "n")?,
        d: field(&kv, "d")?,
        lambda: field(&kv, "lambda")?,
        gamma: field(&kv, "gamma")?,
        r: field(&kv, "r")?,
        depth: field(&kv, "depth")?,
        seed: field(&kv, "seed")?,
        out: kv.get("out").map(PathBuf::from),
        checkpoints: list(&kv, "checkpoints")?,
        ns: list(&kv, "ns")?,
        x: list(&kv, "x")?,
        tol: field(&kv, "tol")?,
        max_iters: field(&kv, "max_iters")?,
        weights: kv.get("weights").map(PathBuf::from),
        config: None,
    })
}

/// Flags, then the config file, then defaults.
pub fn resolve(flags: &Overrides) -> Result<RunConfig, Failure> {
    let file = match &flags.config {
        Some(p) => from_file(p)?,
        None => Overrides::default(),
    };
    macro_rules! pick {
        ($f:ident) => {
            flags.$f.clone().or(file.$f.clone())
        };
    }
    let cfg = RunConfig {
        n: pick!(n),
        d: pick!(d).unwrap_or(1),
        lambda: pick!(lambda).unwrap_or(DEFAULT_LAMBDA),
        gamma: pick!(gamma).unwrap_or(DEFAULT_GAMMA),
        r: pick!(r),
        depth: pick!(depth).unwrap_or(DEFAULT_DEPTH),
        seed: pick!(seed).unwrap_or(0),
        out: pick!(out),
        checkpoints: pick!(checkpoints),
        ns: pick!(ns),
        x: pick!(x),
        tol: pick!(tol).unwrap_or(1e-12),
        max_iters: pick!(max_iters).unwrap_or(1_000_000),
        weights: pick!(weights),
    };
    cfg.validate()?;
    Ok(cfg)
}
