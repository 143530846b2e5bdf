//! Point-to-point partition functions under intermediate disorder
//! `beta_n = n^{-1/4}`, renormalized by their exact means, for the lattice
//! polymer and the m-tree.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{check_tree_size, mtree_p2p_with, sample_mtree_p2p_pool, CascadeWeightLaw, Normalization, DEFAULT_NODE_CAP};
use crate::env::{DisorderLaw, WeightSampler};
use crate::error::{Error, Result};
use crate::math::ln_walk_probability_1d;
use crate::orders::{lt_compare, OrderVerdict, SampleBatch, TestGrid};
use crate::rng::{RngPolicy, StreamRng};
use crate::stats::{ks_two_sample, Estimate};

/// A space-time point `(t, x)` at scale `n` in dimension one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub t: f64,
    pub x: f64,
    pub beta: f64,
    /// Rounded horizon `tn`.
    pub horizon: usize,
    pub endpoint: i64,
}

impl ScalingPoint {
    /// Horizon `round(tn)`; endpoint the integer of matching parity next to
    /// `x sqrt(n)` (one of `floor`, `floor + 1`).
    pub fn new(n: usize, t: f64, x: f64) -> Result<Self> {
        if n == 0 || !(t > 0.0 && t <= 1.0) || !x.is_finite() {
            return Err(Error::InvalidParameter(format!("bad scaling point n={n}, t={t}, x={x}")));
        }
        let horizon = (t * n as f64).round() as usize;
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon rounds to zero".into()));
        }
        let base = (x * (n as f64).sqrt()).floor() as i64;
        let endpoint = if (base - horizon as i64).rem_euclid(2) == 0 { base } else { base + 1 };
        if endpoint.abs() > horizon as i64 {
            return Err(Error::UnreachableEndpoint { endpoint, horizon });
        }
        Ok(ScalingPoint { n, t, x, beta: (n as f64).powf(-0.25), horizon, endpoint })
    }

    /// Same point with `beta` overridden.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// `P(x_{tn} = endpoint)`.
    pub fn walk_probability(&self) -> f64 {
        ln_walk_probability_1d(self.horizon, self.endpoint).map_or(0.0, f64::exp)
    }
}

/// `sum` over nearest-neighbour paths from 0 to `y` in `tn` steps of the
/// product of `weight(i, x_i)`, visiting only the diamond of sites lying on
/// such paths, in time order and increasing `x`.
pub fn diamond_p2p(tn: usize, y: i64, mut weight: impl FnMut(usize, i64) -> f64) -> f64 {
    let tn_i = tn as i64;
    if y.abs() > tn_i || (y + tn_i).rem_euclid(2) != 0 {
        return 0.0;
    }
    // slot k + 1 holds the value at x = 2k - i; the slots just outside the
    // live window stay zero, so the update needs no bounds tests
    let mut prev = vec![0.0f64; tn + 3];
    let mut next = vec![0.0f64; tn + 3];
    prev[1] = 1.0;
    for i in 1..=tn_i {
        let rem = tn_i - i;
        let klo = (((-i).max(y - rem) + i) / 2) as usize;
        let khi = ((i.min(y + rem) + i) / 2) as usize;
        let src = &prev[klo..khi + 2];
        let dst = &mut next[klo + 1..khi + 2];
        let x0 = 2 * klo as i64 - i;
        for (j, (d, pair)) in dst.iter_mut().zip(src.windows(2)).enumerate() {
            *d = (pair[0] + pair[1]) * weight(i as usize, x0 + 2 * j as i64);
        }
        next[klo] = 0.0;
        next[khi + 2] = 0.0;
        std::mem::swap(&mut prev, &mut next);
    }
    prev[((y + tn_i) / 2) as usize + 1]
}

/// Site factors `e^{beta omega - lambda} / 2` in diamond order. Bernoulli
/// signs are read one bit at a time from 64-bit words.
fn renorm_with(law: &DisorderLaw, point: &ScalingPoint, rng: &mut StreamRng) -> Result<f64> {
    if point.beta == 0.0 {
        return Ok(1.0);
    }
    let beta = point.beta;
    let shift = -law.cumulant(beta)? - std::f64::consts::LN_2;
    let z = match law {
        DisorderLaw::SymmetricBernoulli => {
            let factors = [(shift - beta).exp(), (shift + beta).exp()];
            let (mut buf, mut left) = (0u64, 0u32);
            diamond_p2p(point.horizon, point.endpoint, |_, _| {
                if left == 0 {
                    buf = rng.next_u64();
                    left = 64;
                }
                let w = factors[(buf & 1) as usize];
                buf >>= 1;
                left -= 1;
                w
            })
        }
        _ => {
            let sampler = WeightSampler::new(law, beta, shift)?;
            diamond_p2p(point.horizon, point.endpoint, |_, _| sampler.sample(rng))
        }
    };
    Ok(z / point.walk_probability())
}

/// `Z_{tn}(endpoint) / E Z_{tn}(endpoint)` over a fresh field.
pub fn renorm_p2p(law: &DisorderLaw, point: &ScalingPoint, seed: u64) -> Result<f64> {
    let mut rng = RngPolicy::new(seed).stream("renorm-p2p", &[]);
    renorm_with(law, point, &mut rng)
}

pub fn renorm_p2p_batch(law: &DisorderLaw, point: &ScalingPoint, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    let policy = RngPolicy::new(seed);
    (0..replicas).into_par_iter().map(|r| renorm_p2p(law, point, policy.derive_seed("renorm", &[r as u64]))).collect()
}

fn tree_law(law: &DisorderLaw, point: &ScalingPoint, m: usize) -> Result<CascadeWeightLaw> {
    if m == 0 || point.horizon % m != 0 {
        return Err(Error::InvalidParameter(format!("m = {m} must divide the horizon {}", point.horizon)));
    }
    CascadeWeightLaw::new(law, m, 1, point.beta, Normalization::MeanOne)
}

/// Exact m-tree point-to-point value at the endpoint over its mean.
pub fn mtree_renorm_p2p(law: &DisorderLaw, point: &ScalingPoint, m: usize, seed: u64) -> Result<f64> {
    let wl = tree_law(law, point, m)?;
    let levels = point.horizon / m;
    check_tree_size(wl.alphabet().len(), levels, DEFAULT_NODE_CAP)?;
    if point.beta == 0.0 {
        return Ok(1.0);
    }
    let mut rng = RngPolicy::new(seed).stream("cascade", &[]);
    let v = mtree_p2p_with(&wl, levels, &mut rng);
    Ok(v.get(&[point.endpoint as i32]).unwrap_or(0.0) / point.walk_probability())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeMethod {
    Exact,
    Pool,
}

/// Tree batch: exact trees when within the node cap, population dynamics
/// with `pool_size` samples per displacement otherwise.
pub fn mtree_renorm_batch(
    law: &DisorderLaw,
    point: &ScalingPoint,
    m: usize,
    replicas: usize,
    pool_size: usize,
    seed: u64,
) -> Result<(Vec<f64>, TreeMethod)> {
    let wl = tree_law(law, point, m)?;
    let levels = point.horizon / m;
    let policy = RngPolicy::new(seed);
    if check_tree_size(wl.alphabet().len(), levels, DEFAULT_NODE_CAP).is_ok() {
        let v = (0..replicas)
            .into_par_iter()
            .map(|r| mtree_renorm_p2p(law, point, m, policy.derive_seed("tree", &[r as u64])))
            .collect::<Result<_>>()?;
        return Ok((v, TreeMethod::Exact));
    }
    if point.beta == 0.0 {
        return Ok((vec![1.0; replicas], TreeMethod::Pool));
    }
    let p = point.walk_probability();
    let raw = sample_mtree_p2p_pool(&wl, levels, &[point.endpoint as i32], pool_size, replicas, policy.derive_seed("tree-pool", &[]))?;
    Ok((raw.into_iter().map(|v| v / p).collect(), TreeMethod::Pool))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub point: ScalingPoint,
    pub m: usize,
    pub tree_method: TreeMethod,
    pub lattice_mean: Estimate,
    pub tree_mean: Estimate,
    pub verdict: OrderVerdict,
    /// `(lambda, E e^{-lambda Z_lattice})` on the verdict grid.
    pub lattice_laplace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Two-sample KS statistic between lattice batches at successive `n`.
    pub ks_trend: Vec<(usize, usize, f64)>,
    pub ks_nonincreasing: bool,
}

impl ScalingReport {
    pub fn all_consistent(&self) -> bool {
        self.rows.iter().all(|r| r.verdict.is_consistent())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub t: f64,
    pub x: f64,
    pub m: usize,
    pub replicas: usize,
    pub pool_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Laplace comparison `lattice <=_Lt m-tree` of the renormalized
/// point-to-point partition functions for each `n`.
pub fn lt_domination_scaling(law: &DisorderLaw, n_list: &[usize], cfg: &ScalingConfig) -> Result<ScalingReport> {
    let policy = RngPolicy::new(cfg.seed);
    let grid = TestGrid::default_lambda();
    let mut rows = Vec::new();
    let mut lattice_batches = Vec::new();
    for &n in n_list {
        let point = ScalingPoint::new(n, cfg.t, cfg.x)?;
        let lat = renorm_p2p_batch(law, &point, cfg.replicas, policy.derive_seed("lattice", &[n as u64]))?;
        let (tree, method) = mtree_renorm_batch(law, &point, cfg.m, cfg.replicas, cfg.pool_size, policy.derive_seed("tree", &[n as u64]))?;
        let x = SampleBatch::new(format!("lattice n={n}"), lat)?;
        let y = SampleBatch::new(format!("{}-tree n={n}", cfg.m), tree)?;
        let verdict = lt_compare(&x, &y, &grid, cfg.alpha)?;
        let lattice_laplace = verdict.points.iter().map(|p| (p.t, p.lhs)).collect();
        rows.push(ScalingRow {
            point,
            m: cfg.m,
            tree_method: method,
            lattice_mean: x.estimate(),
            tree_mean: y.estimate(),
            verdict,
            lattice_laplace,
        });
        lattice_batches.push((n, x));
    }
    let ks_trend: Vec<(usize, usize, f64)> = lattice_batches
        .windows(2)
        .map(|w| (w[0].0, w[1].0, ks_two_sample(w[0].1.values(), w[1].1.values()).statistic))
        .collect();
    let ks_nonincreasing = ks_trend.windows(2).all(|w| w[1].2 <= w[0].2);
    Ok(ScalingReport { rows, ks_trend, ks_nonincreasing })
}
