//! The normalized partition function as a process in `beta`: sampling on a
//! shared environment, convex-order monotonicity checks, and the Bernoulli
//! martingale built from interval-exit chains.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{DisorderField, DisorderLaw};
use crate::error::{Error, Result};
use crate::geometry::Cone;
use crate::lattice::{self, check_path_cap, DEFAULT_PATH_CAP};
use crate::orders::{cx_compare_with, CompareOptions, GridKind, OrderVerdict, SampleBatch, TestGrid};
use crate::rng::{RngPolicy, StreamRng};
use crate::stats::{mean_var, ols, ratio_z, upper_normal_quantile, Estimate, LinearFit};

/// `lo, lo + step, ..., hi` with the end point included when it lies on the
/// lattice up to rounding.
pub fn beta_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo >= 0.0) {
        return Err(Error::InvalidGrid(format!("bad beta grid {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::InvalidGrid("beta grid must be non-empty, finite and nonnegative".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::NonIncreasingBeta { current: w[0], next: w[1] });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaProcessSample {
    pub beta_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// `W_n(beta)` along the grid, all computed from one field.
pub fn beta_process_sample(law: &DisorderLaw, n: usize, d: usize, beta_grid: &[f64], seed: u64) -> Result<BetaProcessSample> {
    check_grid(beta_grid)?;
    let field = DisorderField::sample(law, n, d, &vec![0; d], seed)?;
    let values = beta_grid.iter().map(|&b| lattice::normalized_partition(&field, b)).collect::<Result<_>>()?;
    Ok(BetaProcessSample { beta_grid: beta_grid.to_vec(), values, seed })
}

/// Sample variance with a normal-theory standard error.
fn variance_estimate(xs: &[f64]) -> Estimate {
    let (m, v) = mean_var(xs);
    let n = xs.len() as f64;
    let m4 = xs.iter().map(|&x| (x - m).powi(4)).sum::<f64>() / n;
    Estimate { mean: v, stderr: ((m4 - v * v).max(0.0) / n).sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub verdict: OrderVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeacockReport {
    pub beta_grid: Vec<f64>,
    pub replicas: usize,
    pub alpha: f64,
    pub means: Vec<Estimate>,
    pub variances: Vec<Estimate>,
    pub pairs: Vec<PairVerdict>,
    /// Every per-beta mean within 4 standard errors of 1.
    pub means_ok: bool,
    /// No adjacent variance decrease beyond the critical z.
    pub variance_monotone: bool,
}

impl PeacockReport {
    pub fn all_consistent(&self) -> bool {
        self.pairs.iter().all(|p| p.verdict.is_consistent())
    }

    pub fn any_violated(&self) -> bool {
        self.pairs.iter().any(|p| p.verdict.is_violated())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Rows `section,beta_lo,beta_hi,kind,t,lhs,rhs,z`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,beta_lo,beta_hi,kind,t,lhs,rhs,z\n");
        for (b, (m, v)) in self.beta_grid.iter().zip(self.means.iter().zip(&self.variances)) {
            let _ = writeln!(s, "moments,{b},{b},mean,0,{:.17e},{:.17e},{:.17e}", m.mean, m.stderr, m.z_against(1.0));
            let _ = writeln!(s, "moments,{b},{b},variance,0,{:.17e},{:.17e},0", v.mean, v.stderr);
        }
        for p in &self.pairs {
            for row in p.verdict.to_csv().lines().skip(1) {
                // drop the order and direction columns
                let rest: Vec<&str> = row.splitn(3, ',').collect();
                let _ = writeln!(s, "cx,{},{},{}", p.beta_lo, p.beta_hi, rest[2]);
            }
        }
        s
    }
}

/// Adjacent-pair convex-order checks on samples that share their
/// randomness across the grid (`samples[k][r]` is replica `r` at grid
/// point `k`).
pub fn peacock_report(beta_grid: &[f64], samples: &[Vec<f64>], strikes: Option<&TestGrid>, alpha: f64) -> Result<PeacockReport> {
    check_grid(beta_grid)?;
    if samples.len() != beta_grid.len() {
        return Err(Error::SizeMismatch { expected: beta_grid.len(), got: samples.len() });
    }
    let replicas = samples.first().map_or(0, Vec::len);
    let means: Vec<Estimate> = samples.iter().map(|s| Estimate::from_samples(s)).collect();
    let variances: Vec<Estimate> = samples.iter().map(|s| variance_estimate(s)).collect();
    let opts = CompareOptions::new(alpha).paired();
    let mut pairs = Vec::new();
    for k in 1..beta_grid.len() {
        let x = SampleBatch::new(format!("W({})", beta_grid[k - 1]), samples[k - 1].clone())?;
        let y = SampleBatch::new(format!("W({})", beta_grid[k]), samples[k].clone())?;
        let grid = match strikes {
            Some(g) => g.clone(),
            None => TestGrid::pooled_quantiles(GridKind::Strike, &[&x, &y])?,
        };
        pairs.push(PairVerdict { beta_lo: beta_grid[k - 1], beta_hi: beta_grid[k], verdict: cx_compare_with(&x, &y, &grid, &opts)? });
    }
    let zc = upper_normal_quantile(alpha);
    let variance_monotone = variances.windows(2).all(|w| {
        let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        ratio_z(w[0].mean - w[1].mean, se) <= zc
    });
    let means_ok = means.iter().all(|m| m.z_against(1.0).abs() <= 4.0);
    Ok(PeacockReport { beta_grid: beta_grid.to_vec(), replicas, alpha, means, variances, pairs, means_ok, variance_monotone })
}

/// Polymer peacock check; replica `r` uses the field seeded by
/// `derive_seed("beta-process", r)`.
pub fn peacock_check_polymer(
    law: &DisorderLaw,
    n: usize,
    d: usize,
    beta_grid: &[f64],
    replicas: usize,
    strikes: Option<&TestGrid>,
    alpha: f64,
    seed: u64,
) -> Result<PeacockReport> {
    check_grid(beta_grid)?;
    for &b in beta_grid {
        law.check_beta(b)?;
    }
    let policy = RngPolicy::new(seed);
    let rows: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| beta_process_sample(law, n, d, beta_grid, policy.derive_seed("beta-process", &[r as u64])).map(|s| s.values))
        .collect::<Result<_>>()?;
    let samples: Vec<Vec<f64>> = (0..beta_grid.len()).map(|k| rows.iter().map(|row| row[k]).collect()).collect();
    peacock_report(beta_grid, &samples, strikes, alpha)
}

/// `(e^{beta omega} / cosh beta, 1 + omega tanh beta)`.
pub fn bernoulli_factor_identity(omega: f64, beta: f64) -> Result<(f64, f64)> {
    if omega != 1.0 && omega != -1.0 {
        return Err(Error::BadSpin(omega));
    }
    Ok(((beta * omega).exp() / beta.cosh(), 1.0 + omega * beta.tanh()))
}

/// Position of a Brownian motion at its exit time from `(-tanh b, tanh b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitChainState {
    pub level: usize,
    pub beta: f64,
    pub value: f64,
}

impl ExitChainState {
    /// Level 0 at `beta = 0`, where the motion sits at 0.
    pub fn start() -> Self {
        ExitChainState { level: 0, beta: 0.0, value: 0.0 }
    }
}

/// Exit of the wider interval `(-t, t)`, `t = tanh beta_next`, starting from
/// `v`: `+t` with probability `(v + t) / (2t)`.
pub fn exit_chain_step<R: Rng + ?Sized>(state: ExitChainState, beta_next: f64, rng: &mut R) -> Result<ExitChainState> {
    if !(beta_next > state.beta) {
        return Err(Error::NonIncreasingBeta { current: state.beta, next: beta_next });
    }
    let t = beta_next.tanh();
    let p_up = (state.value + t) / (2.0 * t);
    let value = if rng.random::<f64>() < p_up { t } else { -t };
    Ok(ExitChainState { level: state.level + 1, beta: beta_next, value })
}

fn martingale_values(n: usize, d: usize, beta_grid: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    let cone = Cone::shared(n, d);
    let mut states = vec![ExitChainState::start(); cone.total_points()];
    let kernel = 1.0 / (2 * d) as f64;
    let mut out = Vec::with_capacity(beta_grid.len());
    for &b in beta_grid {
        for s in states.iter_mut().skip(1) {
            *s = exit_chain_step(*s, b, rng)?;
        }
        let z = lattice::forward_linear(&cone, n, |g| (1.0 + states[g].value) * kernel);
        out.push(z.iter().sum());
    }
    Ok(out)
}

/// `M_n(beta) = (2d)^{-n} sum_paths prod_i (1 + B_{i,x_i}(T_beta))` along the
/// grid, one exit chain per site.
pub fn martingale_process_sample(n: usize, d: usize, beta_grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    check_path_cap(n, d, DEFAULT_PATH_CAP)?;
    check_grid(beta_grid)?;
    if beta_grid[0] <= 0.0 {
        return Err(Error::NonIncreasingBeta { current: 0.0, next: beta_grid[0] });
    }
    let mut rng = RngPolicy::new(seed).stream("martingale", &[]);
    martingale_values(n, d, beta_grid, &mut rng)
}

/// Replica `r` of the martingale process seeded by `derive_seed("martingale", r)`;
/// `out[k][r]` is replica `r` at grid point `k`.
pub fn martingale_batch(n: usize, d: usize, beta_grid: &[f64], replicas: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let policy = RngPolicy::new(seed);
    let rows: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| martingale_process_sample(n, d, beta_grid, policy.derive_seed("martingale", &[r as u64])))
        .collect::<Result<_>>()?;
    Ok((0..beta_grid.len()).map(|k| rows.iter().map(|row| row[k]).collect()).collect())
}

/// Regression of per-bin means of `y` on per-bin means of `x`, with
/// `bins` equal-count bins ordered by `x`. A martingale pair gives slope 1.
pub fn conditional_mean_slope(x: &[f64], y: &[f64], bins: usize) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if bins < 3 || x.len() < bins {
        return Err(Error::InvalidParameter("need at least 3 bins and one sample per bin".into()));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut bx = Vec::with_capacity(bins);
    let mut by = Vec::with_capacity(bins);
    for k in 0..bins {
        let idx = &order[k * x.len() / bins..(k + 1) * x.len() / bins];
        bx.push(idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64);
        by.push(idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64);
    }
    Ok(ols(&bx, &by))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_two_sample;

    #[test]
    fn grid_helper() {
        assert_eq!(beta_grid(0.0, 1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(beta_grid(0.0, 1.5, 0.5).unwrap().len(), 4);
        assert!(beta_grid(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn beta_process_basics() {
        let law = DisorderLaw::StandardGaussian;
        let s = beta_process_sample(&law, 6, 1, &[0.0, 0.5, 1.0], 3).unwrap();
        assert_eq!(s.values[0], 1.0);
        let f = DisorderField::sample(&law, 6, 1, &[0], 3).unwrap();
        let single = beta_process_sample(&law, 6, 1, &[0.5], 3).unwrap();
        assert_eq!(single.values[0], lattice::normalized_partition(&f, 0.5).unwrap());
        assert!(beta_process_sample(&law, 6, 1, &[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn polymer_peacock_small() {
        let law = DisorderLaw::StandardGaussian;
        let grid = [0.0, 0.5, 1.0];
        let r = peacock_check_polymer(&law, 6, 1, &grid, 20_000, None, 0.0013499, 5).unwrap();
        assert!(r.means_ok, "{:?}", r.means);
        assert!(r.variance_monotone);
        assert!(!r.any_violated());
        // pair (0, beta): the put at strike 1 is 0 on the left
        let first = &r.pairs[0];
        let g = TestGrid::new(GridKind::Strike, vec![1.0]).unwrap();
        let w0 = SampleBatch::new("", vec![1.0; 100]).unwrap();
        let s = beta_process_sample(&law, 6, 1, &[0.0, 0.5], 1).unwrap();
        let w1 = SampleBatch::new("", vec![s.values[1]; 100]).unwrap();
        let v = crate::orders::cx_compare(&w0, &w1, &g, 0.01).unwrap();
        assert_eq!(v.points[0].lhs, 0.0);
        assert!(first.verdict.points.iter().all(|p| p.z.is_finite()));
        assert!(r.to_csv().starts_with("section,beta_lo,beta_hi,kind,t,lhs,rhs,z\nmoments,0,0,mean,"));
    }

    #[test]
    fn factor_identity() {
        for beta in [0.0, 0.3, 1.0, 2.5] {
            for omega in [-1.0, 1.0] {
                let (a, b) = bernoulli_factor_identity(omega, beta).unwrap();
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert_eq!(bernoulli_factor_identity(0.5, 1.0), Err(Error::BadSpin(0.5)));
    }

    #[test]
    fn exit_chain_law() {
        let t = 0.5f64;
        let beta = t.atanh();
        let start = ExitChainState { level: 1, beta: 0.25f64.atanh(), value: 0.25 };
        let mut rng = RngPolicy::new(1).stream("exit", &[]);
        let mut ups = 0;
        let mut vals = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let s = exit_chain_step(start, beta, &mut rng).unwrap();
            assert!((s.value.abs() - t).abs() < 1e-15);
            ups += (s.value > 0.0) as usize;
            vals.push(s.value);
        }
        // P(+0.5) = 0.75
        let p = ups as f64 / 1e5;
        assert!((p - 0.75).abs() < 4.0 * (0.75f64 * 0.25 / 1e5).sqrt());
        assert!(Estimate::from_samples(&vals).z_against(0.25).abs() < 4.0);
        assert!(exit_chain_step(start, start.beta, &mut rng).is_err());
    }

    #[test]
    fn exit_chain_marginals_are_uniform() {
        let grid = [0.25, 0.5, 1.0];
        let mut rng = RngPolicy::new(2).stream("exit", &[]);
        let mut ups = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            let mut s = ExitChainState::start();
            for (k, &b) in grid.iter().enumerate() {
                s = exit_chain_step(s, b, &mut rng).unwrap();
                ups[k] += (s.value > 0.0) as usize;
            }
        }
        for u in ups {
            assert!((u as f64 - n as f64 / 2.0).abs() < 4.0 * (n as f64 / 4.0).sqrt());
        }
    }

    #[test]
    fn martingale_marginal_and_mean() {
        let grid = [0.5, 1.0];
        let m = martingale_batch(4, 1, &grid, 10_000, 3).unwrap();
        let law = DisorderLaw::SymmetricBernoulli;
        let policy = RngPolicy::new(4);
        let w: Vec<f64> = (0..10_000u64)
            .map(|r| {
                let f = DisorderField::sample(&law, 4, 1, &[0], policy.derive_seed("w", &[r])).unwrap();
                lattice::normalized_partition(&f, 1.0).unwrap()
            })
            .collect();
        assert!(!ks_two_sample(&m[1], &w).rejects(0.01));
        for col in &m {
            assert!(Estimate::from_samples(col).z_against(1.0).abs() < 4.0);
        }
        let fit = conditional_mean_slope(&m[0], &m[1], 20).unwrap();
        assert!(((fit.slope - 1.0) / fit.slope_stderr).abs() < 3.0, "{fit:?}");
    }

    #[test]
    fn martingale_forced_up() {
        // with every factor 1 + tanh beta the normalized path sum is (1 + tanh beta)^n
        let cone = Cone::shared(5, 1);
        let t = 0.7f64.tanh();
        let z: f64 = lattice::forward_linear(&cone, 5, |_| (1.0 + t) * 0.5).iter().sum();
        assert!((z - (1.0 + t).powi(5)).abs() < 1e-12);
        assert!(martingale_process_sample(21, 1, &[0.5], 1).is_err());
        assert!(martingale_process_sample(3, 1, &[0.0, 0.5], 1).is_err());
    }
}
