//! Experiment parameters: a JSON file of flat fields, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// 3 sigma one-sided.
pub const DEFAULT_ALPHA: f64 = 0.0013498980316301;
pub const OUT_DIR_ENV: &str = "POLYLAB_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "polylab-out";

/// Declares a parameter struct with defaults together with its flag mirror,
/// whose fields are all optional so that only flags given override the file.
macro_rules! params {
    ($params:ident, $flags:ident { $($(#[$attr:meta])* $field:ident : $ty:ty = $default:expr, $help:literal;)* }) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $params {
            $(pub $field: $ty,)*
        }

        impl Default for $params {
            fn default() -> Self {
                $params { $($field: $default,)* }
            }
        }

        #[derive(Debug, Clone, Default, Serialize, clap::Args)]
        pub struct $flags {
            $(
                #[doc = $help]
                #[arg(long)]
                $(#[$attr])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}

params!(PolymerParams, PolymerFlags {
    law: String = "gaussian".into(), "Disorder law: gaussian or bernoulli";
    n: usize = 10, "Polymer length";
    d: usize = 1, "Transverse dimension";
    beta: f64 = 1.0, "Inverse temperature";
    replicas: usize = 10_000, "Independent environments";
    alpha: f64 = DEFAULT_ALPHA, "One-sided level of each check";
    seed: u64 = 1, "Master seed";
});

params!(MtreeParams, MtreeFlags {
    law: String = "bernoulli".into(), "Disorder law: gaussian or bernoulli";
    beta: f64 = 1.0, "Inverse temperature";
    d: usize = 1, "Transverse dimension";
    #[arg(value_delimiter = ',')]
    m_list: Vec<usize> = vec![1, 2, 4], "Block lengths, comma separated";
    n: usize = 200, "Lattice polymer length for the free energy";
    replicas: usize = 1000, "Lattice replicas";
    pool_size: usize = 10_000, "Population-dynamics pool size";
    levels: usize = 20, "Tree levels";
    z_threshold: f64 = 3.0, "Standard errors a violation must exceed";
    seed: u64 = 1, "Master seed";
});

params!(OrderParams, OrderFlags {
    claim: String = "lt".into(), "Claimed order x <= y: lt, st or cx";
    x: String = "polymer".into(), "Left model: polymer or mtree";
    y: String = "mtree".into(), "Right model: polymer or mtree";
    law: String = "gaussian".into(), "Disorder law: gaussian or bernoulli";
    n: usize = 12, "Length";
    m: usize = 2, "Block length of the m-tree";
    d: usize = 1, "Transverse dimension";
    beta: f64 = 1.0, "Inverse temperature";
    normalized: bool = true, "Compare W = Z / E Z instead of Z";
    replicas: usize = 100_000, "Replicas per model";
    alpha: f64 = DEFAULT_ALPHA, "One-sided level";
    seed: u64 = 1, "Master seed";
});

params!(PeacockParams, PeacockFlags {
    law: String = "gaussian".into(), "Disorder law: gaussian or bernoulli";
    n: usize = 10, "Polymer length";
    d: usize = 1, "Transverse dimension";
    betas: String = "0:1:0.25".into(), "Beta grid lo:hi:step";
    replicas: usize = 100_000, "Environments";
    alpha: f64 = DEFAULT_ALPHA, "One-sided level";
    seed: u64 = 1, "Master seed";
});

params!(SpinParams, SpinFlags {
    model: String = "sk".into(), "sk, ea or rfim";
    n: usize = 10, "Spins of the SK model";
    d: usize = 2, "Torus dimension for ea and rfim";
    side: usize = 3, "Torus side for ea and rfim";
    j: f64 = 0.5, "Ferromagnetic coupling of rfim";
    betas: String = "0:1.5:0.5".into(), "Beta grid lo:hi:step";
    replicas: usize = 10_000, "Disorder replicas";
    alpha: f64 = DEFAULT_ALPHA, "One-sided level";
    seed: u64 = 1, "Master seed";
});

params!(GaussianParams, GaussianFlags {
    n: usize = 6, "Path length";
    m: usize = 2, "Block length";
    d: usize = 1, "Transverse dimension";
    replicas: usize = 0, "Monte Carlo replicas for the max, E log Z and st checks; 0 skips them";
    beta: f64 = 1.0, "Inverse temperature of the E log Z and st checks";
    alpha: f64 = DEFAULT_ALPHA, "One-sided level";
    seed: u64 = 1, "Master seed";
});

params!(ScalingParams, ScalingFlags {
    law: String = "bernoulli".into(), "Disorder law: gaussian or bernoulli";
    #[arg(value_delimiter = ',')]
    n_list: Vec<usize> = vec![64, 256, 1024], "Scales, comma separated";
    t: f64 = 1.0, "Time in (0, 1]";
    x: f64 = 0.0, "Diffusive endpoint";
    m: usize = 2, "Block length of the m-tree";
    replicas: usize = 100_000, "Replicas per model and scale";
    pool_size: usize = 10_000, "Pool size when the tree is too large to sample exactly";
    alpha: f64 = DEFAULT_ALPHA, "One-sided level";
    seed: u64 = 1, "Master seed";
});

params!(OracleParams, OracleFlags {
    law: String = "bernoulli".into(), "Finite-support law";
    n: usize = 4, "Length";
    m: usize = 2, "Block length";
    d: usize = 1, "Transverse dimension";
    beta: f64 = 0.7, "Inverse temperature";
    lambdas: String = "0.01:100:log21".into(), "lo:hi:logK or a comma-free list a;b;c";
    claim: String = "polymer-le-tree".into(), "polymer-le-tree or tree-le-polymer";
    corollary: bool = true, "Also check the concave and x log x functionals";
});

/// File values (or defaults) overridden by any flag that was given. The file
/// is validated on its own first so that diagnostics carry its line and column.
pub fn resolve<P: DeserializeOwned + Serialize, F: Serialize>(file: Option<&Path>, flags: &F) -> Result<P> {
    let mut base = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<P>(&text).with_context(|| format!("invalid config {}", path.display()))?;
            serde_json::from_str::<Value>(&text)?
        }
        None => Value::Object(Map::new()),
    };
    let overlay = serde_json::to_value(flags)?;
    if let (Some(b), Some(o)) = (base.as_object_mut(), overlay.as_object()) {
        for (k, v) in o {
            b.insert(k.clone(), v.clone());
        }
    }
    parse_params(base)
}

pub fn parse_params<P: DeserializeOwned>(value: Value) -> Result<P> {
    serde_json::from_value(value).context("invalid parameters")
}

pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// `lo:hi:step` into an inclusive grid.
pub fn parse_beta_grid(spec: &str) -> Result<Vec<f64>> {
    let parts = parse_floats(spec, ':')?;
    let [lo, hi, step] = parts[..] else {
        bail!("beta grid {spec:?} must read lo:hi:step");
    };
    Ok(polylab::peacock::beta_grid(lo, hi, step)?)
}

/// `lo:hi:logK` (K log-spaced points) or an explicit `a;b;c` list.
pub fn parse_lambdas(spec: &str) -> Result<Vec<f64>> {
    if let Some((range, count)) = spec.rsplit_once(":log") {
        let parts = parse_floats(range, ':')?;
        let [lo, hi] = parts[..] else {
            bail!("lambda grid {spec:?} must read lo:hi:logK");
        };
        let count: usize = count.parse().with_context(|| format!("bad point count in {spec:?}"))?;
        return Ok(polylab::orders::TestGrid::log_spaced(lo, hi, count)?.points().to_vec());
    }
    parse_floats(spec, ';')
}

fn parse_floats(spec: &str, sep: char) -> Result<Vec<f64>> {
    spec.split(sep)
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number {s:?} in {spec:?}")))
        .collect()
}
