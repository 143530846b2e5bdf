//! Directed-polymer partition functions on `Z^d`: log-domain transfer
//! sweeps, path enumeration and path energies.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::env::{DisorderField, DisorderLaw};
use crate::rng::RngPolicy;
use crate::error::{Error, Result};
use crate::geometry::Cone;
use crate::math::{log_sum_exp, CompensatedSum};

/// Default enumeration cap on `(2d)^n`.
pub const DEFAULT_PATH_CAP: u128 = 1 << 20;

/// Log-domain point-to-point partition values `log Z_{k,n}^{x0}(y)` over all
/// endpoints `y` reachable from `x0` in `n - k` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSlice {
    pub k: usize,
    pub n: usize,
    pub origin: Vec<i32>,
    pub beta: f64,
    pub endpoints: Vec<Vec<i32>>,
    pub log_z: Vec<f64>,
}

impl PartitionSlice {
    pub fn get(&self, y: &[i32]) -> Option<f64> {
        self.endpoints.iter().position(|p| p == y).map(|i| self.log_z[i])
    }

    /// `log sum_y Z(y)`.
    pub fn log_point_to_line(&self) -> f64 {
        log_sum_exp(&self.log_z)
    }

    /// CSV with header `k,n,y1..yd,logZ`.
    pub fn to_csv(&self) -> String {
        let d = self.origin.len();
        let mut out = String::from("k,n");
        for c in 1..=d {
            out.push_str(&format!(",y{c}"));
        }
        out.push_str(",logZ\n");
        for (p, lz) in self.endpoints.iter().zip(&self.log_z) {
            out.push_str(&format!("{},{}", self.k, self.n));
            for c in p {
                out.push_str(&format!(",{c}"));
            }
            out.push_str(&format!(",{lz:.17e}\n"));
        }
        out
    }
}

/// A nearest-neighbour path `x_1..x_n` started at the origin.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolymerPath {
    d: usize,
    coords: Vec<i32>,
}

impl PolymerPath {
    pub fn new(d: usize, steps: &[Vec<i32>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(steps.len() * d);
        let mut prev = vec![0i32; d];
        for (i, s) in steps.iter().enumerate() {
            if s.len() != d {
                return Err(Error::InvalidParameter(format!("step {i} has wrong dimension")));
            }
            let l1: i32 = s.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
            if l1 != 1 {
                return Err(Error::InvalidParameter(format!("step {} is not a unit step", i + 1)));
            }
            coords.extend_from_slice(s);
            prev.clone_from(s);
        }
        Ok(PolymerPath { d, coords })
    }

    /// One-dimensional path from its positions.
    pub fn from_1d(xs: &[i32]) -> Result<Self> {
        let steps: Vec<Vec<i32>> = xs.iter().map(|&x| vec![x]).collect();
        Self::new(1, &steps)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Position `x_{i+1}` (zero-based step index).
    pub fn step(&self, i: usize) -> &[i32] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[i32]> {
        self.coords.chunks_exact(self.d)
    }
}

/// `(2d)^n`, saturating.
pub fn path_count(n: usize, d: usize) -> u128 {
    (2 * d as u128).checked_pow(n as u32).unwrap_or(u128::MAX)
}

pub fn check_path_cap(n: usize, d: usize, cap: u128) -> Result<()> {
    let count = path_count(n, d);
    if count > cap {
        return Err(Error::TooManyPaths { count, cap });
    }
    Ok(())
}

/// Forward log-domain sweep over `steps` slices of `cone`. `log_weight`
/// receives the global cone index of a site; the walk kernel `1/(2d)` is
/// applied at every step. Returns log values on slice `steps`.
pub(crate) fn forward_log(cone: &Cone, steps: usize, mut log_weight: impl FnMut(usize) -> f64) -> Vec<f64> {
    let log_kernel = -((2 * cone.d()) as f64).ln();
    let mut prev = vec![0.0f64];
    let mut buf: Vec<f64> = Vec::with_capacity(2 * cone.d());
    for i in 1..=steps {
        let off = cone.slice_offset(i);
        let len = cone.slice_len(i);
        let mut next = Vec::with_capacity(len);
        for j in 0..len {
            buf.clear();
            buf.extend(cone.preds(i, j).iter().map(|&p| prev[p as usize]));
            next.push(log_sum_exp(&buf) + log_kernel + log_weight(off + j));
        }
        prev = next;
    }
    prev
}

/// Linear-domain forward sweep; `weight` already contains the `1/(2d)` kernel.
pub(crate) fn forward_linear(cone: &Cone, steps: usize, mut weight: impl FnMut(usize) -> f64) -> Vec<f64> {
    let mut prev = vec![1.0f64];
    for i in 1..=steps {
        let off = cone.slice_offset(i);
        let len = cone.slice_len(i);
        let mut next = Vec::with_capacity(len);
        for j in 0..len {
            let s: f64 = cone.preds(i, j).iter().map(|&p| prev[p as usize]).sum();
            next.push(s * weight(off + j));
        }
        prev = next;
    }
    prev
}

/// Max-plus sweep: largest path energy ending at each point of slice `steps`.
pub(crate) fn forward_max(cone: &Cone, steps: usize, mut energy: impl FnMut(usize) -> f64) -> Vec<f64> {
    let mut prev = vec![0.0f64];
    for i in 1..=steps {
        let off = cone.slice_offset(i);
        let len = cone.slice_len(i);
        let mut next = Vec::with_capacity(len);
        for j in 0..len {
            let best = cone.preds(i, j).iter().map(|&p| prev[p as usize]).fold(f64::NEG_INFINITY, f64::max);
            next.push(best + energy(off + j));
        }
        prev = next;
    }
    prev
}

/// Point-to-point partition function from `x0` at time `k` to every
/// endpoint at time `n`, summing over all `2d` signed unit steps with weight
/// `1/(2d)` each.
pub fn transfer_point_to_point(field: &DisorderField, beta: f64, x0: &[i32], k: usize, n: usize) -> Result<PartitionSlice> {
    field.law().check_beta(beta)?;
    if n > field.n() {
        return Err(Error::HorizonExceeded { requested: n, available: field.n() });
    }
    if k >= n {
        return Err(Error::InvalidParameter(format!("need k < n, got k = {k}, n = {n}")));
    }
    let d = field.d();
    if x0.len() != d {
        return Err(Error::PointOutsideField { time: k });
    }
    let rel0: Vec<i32> = x0.iter().zip(field.origin()).map(|(a, o)| a - o).collect();
    let cone = field.cone();
    if cone.index(k, &rel0).is_none() {
        return Err(Error::PointOutsideField { time: k });
    }
    let steps = n - k;
    let sub = Cone::shared(steps, d);
    let log_z = if k == 0 {
        // the sub-cone is a prefix of the field cone with identical ordering
        let vals = field.raw_values();
        forward_log(&sub, steps, |g| beta * vals[g])
    } else {
        let mut map = vec![0usize; sub.total_points()];
        let mut p = vec![0i32; d];
        for j in 1..=steps {
            for l in 0..sub.slice_len(j) {
                for (c, (a, b)) in p.iter_mut().zip(sub.point(j, l).iter().zip(&rel0)) {
                    *c = a + b;
                }
                let local = cone.index(k + j, &p).ok_or(Error::PointOutsideField { time: k + j })?;
                map[sub.slice_offset(j) + l] = cone.slice_offset(k + j) + local;
            }
        }
        {
            let vals = field.raw_values();
            forward_log(&sub, steps, |g| beta * vals[map[g]])
        }
    };
    let endpoints = sub.points(steps).map(|p| p.iter().zip(x0).map(|(a, b)| a + b).collect()).collect();
    Ok(PartitionSlice { k, n, origin: x0.to_vec(), beta, endpoints, log_z })
}

/// `log Z_n` for the point-to-line partition function from the field origin.
pub fn log_point_to_line(field: &DisorderField, beta: f64) -> Result<f64> {
    field.law().check_beta(beta)?;
    if beta == 0.0 {
        return Ok(0.0);
    }
    let vals = field.raw_values();
    let last = forward_log(field.cone(), field.n(), |g| beta * vals[g]);
    Ok(log_sum_exp(&last))
}

pub fn point_to_line(field: &DisorderField, beta: f64) -> Result<f64> {
    Ok(log_point_to_line(field, beta)?.exp())
}

/// `log W_n = log Z_n - n lambda(beta)`.
pub fn log_normalized_partition(field: &DisorderField, beta: f64) -> Result<f64> {
    let lambda = field.law().cumulant(beta)?;
    Ok(log_point_to_line(field, beta)? - field.n() as f64 * lambda)
}

/// `W_n(beta) = Z_n e^{-n lambda(beta)}`; exactly 1 at `beta = 0`.
pub fn normalized_partition(field: &DisorderField, beta: f64) -> Result<f64> {
    Ok(log_normalized_partition(field, beta)?.exp())
}

/// Maximal path energy `sup_x H_n(x)` by a max-plus sweep.
pub fn max_energy(field: &DisorderField) -> f64 {
    let vals = field.raw_values();
    forward_max(field.cone(), field.n(), |g| vals[g]).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// All `(2d)^n` nearest-neighbour paths from the origin, in lexicographic
/// order of step choices.
pub fn enumerate_paths(n: usize, d: usize, cap: u128) -> Result<Vec<PolymerPath>> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    check_path_cap(n, d, cap)?;
    let total = path_count(n, d) as usize;
    let mut out = Vec::with_capacity(total);
    let mut pos = vec![0i32; d];
    for code in 0..total {
        let mut c = code;
        let mut coords = Vec::with_capacity(n * d);
        pos.iter_mut().for_each(|p| *p = 0);
        for _ in 0..n {
            let choice = c % (2 * d);
            c /= 2 * d;
            let axis = choice / 2;
            pos[axis] += if choice % 2 == 0 { -1 } else { 1 };
            coords.extend_from_slice(&pos);
        }
        out.push(PolymerPath { d, coords });
    }
    Ok(out)
}

/// `H_n(x) = sum_i omega(i, x_i)` with the path taken relative to the field origin.
pub fn hamiltonian(path: &PolymerPath, field: &DisorderField) -> Result<f64> {
    if path.len() > field.n() || path.d() != field.d() {
        return Err(Error::PathOutsideField { step: field.n() + 1 });
    }
    let mut acc = CompensatedSum::new();
    let mut abs = vec![0i32; field.d()];
    for (i, s) in path.steps().enumerate() {
        for (a, (p, o)) in abs.iter_mut().zip(s.iter().zip(field.origin())) {
            *a = p + o;
        }
        acc.add(field.value(i + 1, &abs).ok_or(Error::PathOutsideField { step: i + 1 })?);
    }
    Ok(acc.value())
}

/// `log Z_n` over `replicas` fresh fields; replica `r` uses the field seed
/// `derive_seed("polymer", [r])`.
pub fn log_partition_batch(law: &DisorderLaw, n: usize, d: usize, beta: f64, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    law.check_beta(beta)?;
    let policy = RngPolicy::new(seed);
    let origin = vec![0; d];
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let field = DisorderField::sample(law, n, d, &origin, policy.derive_seed("polymer", &[r as u64]))?;
            log_point_to_line(&field, beta)
        })
        .collect()
}

/// `W_n(beta)` over `replicas` fresh fields, seeded as in [`log_partition_batch`].
pub fn normalized_batch(law: &DisorderLaw, n: usize, d: usize, beta: f64, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    let shift = n as f64 * law.cumulant(beta)?;
    Ok(log_partition_batch(law, n, d, beta, replicas, seed)?.into_iter().map(|l| (l - shift).exp()).collect())
}
