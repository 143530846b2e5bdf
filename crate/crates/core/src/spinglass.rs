//! Sherrington-Kirkpatrick, Edwards-Anderson and random-field Ising models
//! on small systems, with exact spin enumeration.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::peacock::{peacock_report, PeacockReport};
use crate::orders::TestGrid;
use crate::rng::RngPolicy;

/// Default cap on the number of spins for exact enumeration.
pub const DEFAULT_SPIN_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SpinModelKind {
    Sk { n: usize },
    Ea { d: usize, side: usize },
    /// Scalar ferromagnetic coupling `j` and i.i.d. standard Gaussian fields.
    Rfim { j: f64, d: usize, side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinModelSpec {
    pub kind: SpinModelKind,
    pub cap: usize,
    bonds: Vec<(usize, usize)>,
}

/// Nearest-neighbour bonds `(i, i + e_k mod L)` of the `d`-dimensional torus.
pub fn torus_bonds(d: usize, side: usize) -> Vec<(usize, usize)> {
    let n = side.pow(d as u32);
    let mut bonds = Vec::with_capacity(d * n);
    for i in 0..n {
        let mut stride = 1;
        for _ in 0..d {
            let coord = (i / stride) % side;
            let j = i - coord * stride + ((coord + 1) % side) * stride;
            bonds.push((i, j));
            stride *= side;
        }
    }
    bonds
}

impl SpinModelSpec {
    pub fn new(kind: SpinModelKind) -> Result<Self> {
        Self::with_cap(kind, DEFAULT_SPIN_CAP)
    }

    pub fn with_cap(kind: SpinModelKind, cap: usize) -> Result<Self> {
        let bonds = match kind {
            SpinModelKind::Sk { n } => {
                if n == 0 {
                    return Err(Error::InvalidParameter("SK needs at least one spin".into()));
                }
                (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
            }
            SpinModelKind::Ea { d, side } | SpinModelKind::Rfim { d, side, .. } => {
                if d == 0 || side < 2 {
                    return Err(Error::InvalidParameter("torus needs d >= 1 and side >= 2".into()));
                }
                if side.checked_pow(d as u32).is_none_or(|n| n > 63) {
                    return Err(Error::TooManySpins(usize::MAX));
                }
                torus_bonds(d, side)
            }
        };
        let spec = SpinModelSpec { kind, cap, bonds };
        if spec.spins() > cap.min(63) {
            return Err(Error::TooManySpins(spec.spins()));
        }
        Ok(spec)
    }

    pub fn spins(&self) -> usize {
        match self.kind {
            SpinModelKind::Sk { n } => n,
            SpinModelKind::Ea { d, side } | SpinModelKind::Rfim { d, side, .. } => side.pow(d as u32),
        }
    }

    /// Coupled pairs: all `i < j` for SK, torus bonds otherwise.
    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    /// `log E_J E_sigma e^{beta H}`.
    pub fn log_annealed(&self, beta: f64) -> f64 {
        let n = self.spins() as f64;
        match self.kind {
            SpinModelKind::Sk { .. } => beta * beta * self.bonds.len() as f64 / (2.0 * n),
            SpinModelKind::Ea { .. } => beta * beta * self.bonds.len() as f64 / 2.0,
            SpinModelKind::Rfim { j, .. } => {
                let terms: Vec<f64> = (0..1u64 << self.spins()).map(|c| beta * j * self.bond_sum(c)).collect();
                beta * beta * n / 2.0 + log_sum_exp(&terms) - n * std::f64::consts::LN_2
            }
        }
    }

    fn bond_sum(&self, config: u64) -> f64 {
        self.bonds.iter().map(|&(a, b)| spin(config, a) * spin(config, b)).sum()
    }
}

#[inline]
fn spin(config: u64, i: usize) -> f64 {
    if config >> i & 1 == 1 { 1.0 } else { -1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinDisorder {
    /// One coupling per bond (empty for RFIM).
    pub couplings: Vec<f64>,
    /// One field per spin (RFIM only).
    pub fields: Vec<f64>,
    pub seed: u64,
}

impl SpinDisorder {
    pub fn sample(spec: &SpinModelSpec, seed: u64) -> Self {
        let mut rng = RngPolicy::new(seed).stream("spin-disorder", &[]);
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };
        match spec.kind {
            SpinModelKind::Rfim { .. } => SpinDisorder { couplings: vec![], fields: draw(spec.spins()), seed },
            _ => SpinDisorder { couplings: draw(spec.bonds().len()), fields: vec![], seed },
        }
    }

    fn check(&self, spec: &SpinModelSpec) -> Result<()> {
        let (c, f) = match spec.kind {
            SpinModelKind::Rfim { .. } => (0, spec.spins()),
            _ => (spec.bonds().len(), 0),
        };
        if self.couplings.len() != c {
            return Err(Error::SizeMismatch { expected: c, got: self.couplings.len() });
        }
        if self.fields.len() != f {
            return Err(Error::SizeMismatch { expected: f, got: self.fields.len() });
        }
        Ok(())
    }
}

fn energy_of(spec: &SpinModelSpec, dis: &SpinDisorder, config: u64) -> f64 {
    match spec.kind {
        SpinModelKind::Sk { n } => {
            let s: f64 = spec.bonds.iter().zip(&dis.couplings).map(|(&(a, b), j)| j * spin(config, a) * spin(config, b)).sum();
            s / (n as f64).sqrt()
        }
        SpinModelKind::Ea { .. } => spec.bonds.iter().zip(&dis.couplings).map(|(&(a, b), j)| j * spin(config, a) * spin(config, b)).sum(),
        SpinModelKind::Rfim { j, .. } => {
            j * spec.bond_sum(config) + dis.fields.iter().enumerate().map(|(i, h)| h * spin(config, i)).sum::<f64>()
        }
    }
}

/// `H(sigma)` for `sigma` in `{-1, +1}^N`.
pub fn spin_hamiltonian(spec: &SpinModelSpec, dis: &SpinDisorder, sigma: &[f64]) -> Result<f64> {
    dis.check(spec)?;
    if sigma.len() != spec.spins() {
        return Err(Error::SizeMismatch { expected: spec.spins(), got: sigma.len() });
    }
    let mut config = 0u64;
    for (i, &s) in sigma.iter().enumerate() {
        if s == 1.0 {
            config |= 1 << i;
        } else if s != -1.0 {
            return Err(Error::BadSpin(s));
        }
    }
    Ok(energy_of(spec, dis, config))
}

/// Energies of all `2^N` configurations; bit `i` of the index is spin `i`
/// (set = `+1`).
pub fn all_energies(spec: &SpinModelSpec, dis: &SpinDisorder) -> Result<Vec<f64>> {
    dis.check(spec)?;
    if spec.spins() > spec.cap {
        return Err(Error::TooManySpins(spec.spins()));
    }
    Ok((0..1u64 << spec.spins()).map(|c| energy_of(spec, dis, c)).collect())
}

fn normalized_from_energies(spec: &SpinModelSpec, energies: &[f64], beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let terms: Vec<f64> = energies.iter().map(|e| beta * e).collect();
    let log_mean = log_sum_exp(&terms) - spec.spins() as f64 * std::f64::consts::LN_2;
    (log_mean - spec.log_annealed(beta)).exp()
}

/// `W_N(beta) = E_sigma e^{beta H} / E_J E_sigma e^{beta H}`.
pub fn exact_normalized_partition(spec: &SpinModelSpec, dis: &SpinDisorder, beta: f64) -> Result<f64> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::BetaOutOfRange { beta, beta_max: f64::INFINITY });
    }
    let energies = all_energies(spec, dis)?;
    Ok(normalized_from_energies(spec, &energies, beta))
}

/// Spin-glass peacock check: each replica draws one disorder and evaluates
/// `W_N` on the whole grid; adjacent grid points are compared in the convex
/// order on these paired samples.
pub fn peacock_check_spin(
    spec: &SpinModelSpec,
    beta_grid: &[f64],
    replicas: usize,
    strikes: Option<&TestGrid>,
    alpha: f64,
    seed: u64,
) -> Result<PeacockReport> {
    if let Some(&b) = beta_grid.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::BetaOutOfRange { beta: b, beta_max: f64::INFINITY });
    }
    let policy = RngPolicy::new(seed);
    // annealed normalizers are shared by every replica
    let logs: Vec<f64> = beta_grid.iter().map(|&b| spec.log_annealed(b)).collect();
    let n_ln2 = spec.spins() as f64 * std::f64::consts::LN_2;
    let rows: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let dis = SpinDisorder::sample(spec, policy.derive_seed("spin-replica", &[r as u64]));
            let energies = all_energies(spec, &dis)?;
            Ok(beta_grid
                .iter()
                .zip(&logs)
                .map(|(&b, &la)| {
                    if b == 0.0 {
                        return 1.0;
                    }
                    let terms: Vec<f64> = energies.iter().map(|e| b * e).collect();
                    (log_sum_exp(&terms) - n_ln2 - la).exp()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Vec<f64>> = (0..beta_grid.len()).map(|k| rows.iter().map(|row| row[k]).collect()).collect();
    peacock_report(beta_grid, &samples, strikes, alpha)
}
