//! Multiplicative cascades and the m-tree model: correlated block weights,
//! exact tree sampling, population-dynamics pools and free-energy estimates.

use std::cell::RefCell;
use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{DisorderLaw, WeightSampler};
use crate::error::{Error, Result};
use crate::geometry::Cone;
use crate::lattice;
use crate::rng::{RngPolicy, StreamRng};
use crate::stats::{mean, ols, ratio_z, Estimate};

/// Default cap on internal nodes for exact tree evaluation.
pub const DEFAULT_NODE_CAP: u128 = 1_000_000;
const POOL_CHUNK: usize = 1024;

/// `L_m`: points reachable by the walk in exactly `m` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alphabet {
    pub m: usize,
    pub d: usize,
    pub points: Vec<Vec<i32>>,
}

impl Alphabet {
    pub fn new(m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidParameter("alphabet needs m >= 1 and d >= 1".into()));
        }
        let cone = Cone::shared(m, d);
        Ok(Alphabet { m, d, points: cone.points(m).map(<[i32]>::to_vec).collect() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `A_x = Z_m(x)`.
    Raw,
    /// `A_x = Z_m(x) e^{-m lambda(beta)}`, so that `sum_x E A_x = 1`.
    MeanOne,
}

/// Source of i.i.d. family vectors `(A_{u1}, ..., A_{uN})` for a cascade.
pub trait FamilySampler: Sync {
    fn branching(&self) -> usize;
    fn draw(&self, rng: &mut StreamRng, out: &mut Vec<f64>);
}

/// A deterministic family; every node carries the same weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedFamily(pub Vec<f64>);

impl FamilySampler for FixedFamily {
    fn branching(&self) -> usize {
        self.0.len()
    }

    fn draw(&self, _rng: &mut StreamRng, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.0);
    }
}

/// Joint law of the `m`-step point-to-point partition functions
/// `(Z_m(x))_{x in L_m}`, the family law of the m-tree.
#[derive(Debug, Clone)]
pub struct CascadeWeightLaw {
    alphabet: Alphabet,
    beta: f64,
    law: DisorderLaw,
    mode: Normalization,
    lambda: f64,
    sampler: WeightSampler,
    cone: Arc<Cone>,
    plan: Arc<SweepPlan>,
    table: Option<Arc<BernoulliTable>>,
}

thread_local! {
    static BLOCK_SCRATCH: RefCell<[Vec<f64>; 2]> = const { RefCell::new([Vec::new(), Vec::new()]) };
}

impl CascadeWeightLaw {
    pub fn new(law: &DisorderLaw, m: usize, d: usize, beta: f64, mode: Normalization) -> Result<Self> {
        let alphabet = Alphabet::new(m, d)?;
        let lambda = law.cumulant(beta)?;
        let shift = match mode {
            Normalization::Raw => 0.0,
            Normalization::MeanOne => -lambda,
        };
        let sampler = WeightSampler::new(law, beta, shift)?;
        let cone = Cone::shared(m, d);
        let plan = Arc::new(SweepPlan::new(&cone));
        let table = match sampler {
            WeightSampler::Bernoulli { minus, plus, .. } => BernoulliTable::new(&plan, minus, plus).map(Arc::new),
            _ => None,
        };
        Ok(CascadeWeightLaw { alphabet, beta, law: law.clone(), mode, lambda, sampler, cone, plan, table })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn m(&self) -> usize {
        self.alphabet.m
    }

    pub fn d(&self) -> usize {
        self.alphabet.d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn law(&self) -> &DisorderLaw {
        &self.law
    }

    pub fn mode(&self) -> Normalization {
        self.mode
    }

    /// `lambda(beta)` of the site law.
    pub fn cumulant(&self) -> f64 {
        self.lambda
    }

    /// One draw from a stream derived from `seed`.
    pub fn block_weights(&self, seed: u64) -> Vec<f64> {
        let mut rng = RngPolicy::new(seed).stream("block", &[]);
        self.sample(&mut rng)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.alphabet.len());
        self.draw(rng, &mut out);
        out
    }

    /// Exact `E[A_x]`: the walk probability, times `e^{m lambda}` in raw mode.
    pub fn mean_weights(&self) -> Vec<f64> {
        let scale = match self.mode {
            Normalization::Raw => self.m() as f64 * self.lambda,
            Normalization::MeanOne => 0.0,
        };
        // walk law by a beta = 0 sweep
        lattice::forward_linear(&self.cone, self.m(), |_| 1.0 / (2 * self.d()) as f64)
            .into_iter()
            .map(|p| p * scale.exp())
            .collect()
    }
}

impl FamilySampler for CascadeWeightLaw {
    fn branching(&self) -> usize {
        self.alphabet.len()
    }

    /// Samples a fresh `m`-step field in cone order (the same stream usage as
    /// [`crate::env::DisorderField::sample_with`]) and sweeps it. Small
    /// Bernoulli blocks instead pick a row of the precomputed table with one
    /// 32-bit word.
    fn draw(&self, rng: &mut StreamRng, out: &mut Vec<f64>) {
        if let Some(table) = &self.table {
            let row = (rng.next_u32() & table.mask) as usize * table.width;
            out.clear();
            out.extend_from_slice(&table.rows[row..row + table.width]);
            return;
        }
        BLOCK_SCRATCH.with(|cell| {
            let mut guard = cell.borrow_mut();
            let [logw, vals] = &mut *guard;
            let plan = &self.plan;
            logw.clear();
            logw.resize(plan.total, 0.0);
            vals.clear();
            vals.resize(plan.total, 0.0);
            vals[0] = 1.0;
            let kernel = plan.kernel;
            for g in 1..plan.total {
                let (l, w) = self.sampler.sample_log(rng);
                logw[g] = l;
                let s: f64 = plan.preds[plan.offsets[g] as usize..plan.offsets[g + 1] as usize].iter().map(|&q| vals[q as usize]).sum();
                vals[g] = s * w * kernel;
            }
            let last = &vals[plan.last..];
            out.clear();
            if last.iter().all(|v| v.is_finite() && *v > 0.0) {
                out.extend_from_slice(last);
            } else {
                let lw = &*logw;
                out.extend(lattice::forward_log(&self.cone, self.m(), |g| lw[g]).into_iter().map(f64::exp));
            }
        });
    }
}

/// Every family vector of a symmetric Bernoulli block, indexed by the sign
/// bits of its sites in cone order.
#[derive(Debug, Clone)]
struct BernoulliTable {
    mask: u32,
    width: usize,
    rows: Vec<f64>,
}

const TABLE_MAX_SITES: usize = 16;

impl BernoulliTable {
    fn new(plan: &SweepPlan, minus: f64, plus: f64) -> Option<Self> {
        let sites = plan.total - 1;
        if sites > TABLE_MAX_SITES {
            return None;
        }
        let width = plan.total - plan.last;
        let mut rows = Vec::with_capacity(width << sites);
        let mut vals = vec![0.0; plan.total];
        vals[0] = 1.0;
        for bits in 0u32..1 << sites {
            for g in 1..plan.total {
                let w = if bits >> (g - 1) & 1 == 1 { plus } else { minus };
                let s: f64 = plan.preds[plan.offsets[g] as usize..plan.offsets[g + 1] as usize].iter().map(|&q| vals[q as usize]).sum();
                vals[g] = s * w * plan.kernel;
            }
            let last = &vals[plan.last..];
            if !last.iter().all(|v| v.is_finite() && *v > 0.0) {
                return None;
            }
            rows.extend_from_slice(last);
        }
        Some(BernoulliTable { mask: (1u32 << sites).wrapping_sub(1), width, rows })
    }
}

/// The block cone flattened for sweeping: predecessors as global site indices.
#[derive(Debug, Clone)]
struct SweepPlan {
    total: usize,
    last: usize,
    kernel: f64,
    offsets: Vec<u32>,
    preds: Vec<u32>,
}

impl SweepPlan {
    fn new(cone: &Cone) -> Self {
        let (m, d) = (cone.n(), cone.d());
        let mut offsets = vec![0u32, 0];
        let mut preds = Vec::new();
        for i in 1..=m {
            let base = cone.slice_offset(i - 1) as u32;
            for j in 0..cone.slice_len(i) {
                preds.extend(cone.preds(i, j).iter().map(|&q| base + q));
                offsets.push(preds.len() as u32);
            }
        }
        SweepPlan { total: cone.total_points(), last: cone.slice_offset(m), kernel: 1.0 / (2 * d) as f64, offsets, preds }
    }
}

/// Internal nodes `sum_{k < levels} b^k` of a full `b`-ary tree.
pub fn tree_nodes(branching: usize, levels: usize) -> u128 {
    let b = branching as u128;
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..levels {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(b);
    }
    total
}

pub fn check_tree_size(branching: usize, levels: usize, cap: u128) -> Result<()> {
    let nodes = tree_nodes(branching, levels);
    if nodes > cap {
        return Err(Error::TreeTooLarge { nodes, cap });
    }
    Ok(())
}

/// `W_n = sum_{u_1..u_n} A_{u1} A_{u1u2} ... A_{u1..un}` evaluated exactly,
/// one family draw per internal node in depth-first order.
pub fn sample_cascade<F: FamilySampler>(family: &F, n_levels: usize, seed: u64) -> Result<f64> {
    check_tree_size(family.branching(), n_levels, DEFAULT_NODE_CAP)?;
    let mut rng = RngPolicy::new(seed).stream("cascade", &[]);
    Ok(cascade_with(family, n_levels, &mut rng))
}

pub fn cascade_with<F: FamilySampler>(family: &F, levels: usize, rng: &mut StreamRng) -> f64 {
    if levels == 0 {
        return 1.0;
    }
    let mut a = Vec::with_capacity(family.branching());
    family.draw(rng, &mut a);
    let mut total = 0.0;
    for &ax in &a {
        total += ax * cascade_with(family, levels - 1, rng);
    }
    total
}

/// Independent exact cascade samples, replica `i` on stream `("cascade", i)`.
pub fn sample_cascade_batch<F: FamilySampler>(family: &F, n_levels: usize, replicas: usize, seed: u64) -> Result<Vec<f64>> {
    check_tree_size(family.branching(), n_levels, DEFAULT_NODE_CAP)?;
    let policy = RngPolicy::new(seed);
    Ok((0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = policy.stream("cascade", &[i as u64]);
            cascade_with(family, n_levels, &mut rng)
        })
        .collect())
}

/// The m-tree over `n` steps: `n / m` complete blocks, followed by one
/// shorter block of length `n mod m` when `m` does not divide `n`.
#[derive(Debug, Clone)]
pub struct MTree {
    n: usize,
    block: CascadeWeightLaw,
    tail: Option<CascadeWeightLaw>,
}

impl MTree {
    pub fn new(law: &DisorderLaw, n: usize, m: usize, d: usize, beta: f64, mode: Normalization) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter("m-tree needs n >= 1 and m >= 1".into()));
        }
        let block = CascadeWeightLaw::new(law, m, d, beta, mode)?;
        let tail = match n % m {
            0 => None,
            r => Some(CascadeWeightLaw::new(law, r, d, beta, mode)?),
        };
        let tree = MTree { n, block, tail };
        check_tree_size(tree.block.branching(), tree.levels() + tree.tail.is_some() as usize, DEFAULT_NODE_CAP)?;
        Ok(tree)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.block.m()
    }

    /// Complete blocks.
    pub fn levels(&self) -> usize {
        self.n / self.m()
    }

    pub fn block(&self) -> &CascadeWeightLaw {
        &self.block
    }

    pub fn sample_partition(&self, rng: &mut StreamRng) -> f64 {
        self.rec(0, rng)
    }

    fn rec(&self, level: usize, rng: &mut StreamRng) -> f64 {
        if level == self.levels() {
            return match &self.tail {
                Some(t) => t.sample(rng).iter().sum(),
                None => 1.0,
            };
        }
        let a = self.block.sample(rng);
        let mut total = 0.0;
        for &ax in &a {
            total += ax * self.rec(level + 1, rng);
        }
        total
    }

    /// Replica `i` drawn from stream `(tag, i)`.
    pub fn sample_batch(&self, replicas: usize, seed: u64, tag: &str) -> Vec<f64> {
        let policy = RngPolicy::new(seed);
        (0..replicas)
            .into_par_iter()
            .map(|i| self.sample_partition(&mut policy.stream(tag, &[i as u64])))
            .collect()
    }
}

/// Point-to-point m-tree values over `L_{m l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeP2p {
    pub endpoints: Vec<Vec<i32>>,
    pub values: Vec<f64>,
}

impl TreeP2p {
    pub fn get(&self, y: &[i32]) -> Option<f64> {
        self.endpoints.iter().position(|p| p == y).map(|i| self.values[i])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Index tables mapping (letter x, child endpoint z) to endpoint x + z.
struct P2pTables {
    combine: Vec<Vec<usize>>,
    len: Vec<usize>,
}

impl P2pTables {
    fn new(m: usize, d: usize, levels: usize) -> Self {
        let cone = Cone::shared(m * levels, d);
        let mut combine = vec![Vec::new()];
        let mut len = vec![1];
        let mut y = vec![0i32; d];
        for l in 1..=levels {
            let child = cone.slice_len(m * (l - 1));
            len.push(cone.slice_len(m * l));
            let mut tab = Vec::with_capacity(cone.slice_len(m) * child);
            for x in cone.points(m) {
                for z in cone.points(m * (l - 1)) {
                    for (c, (a, b)) in y.iter_mut().zip(x.iter().zip(z)) {
                        *c = a + b;
                    }
                    tab.push(cone.index(m * l, &y).expect("sum of reachable displacements is reachable"));
                }
            }
            combine.push(tab);
        }
        P2pTables { combine, len }
    }
}

fn p2p_rec(wl: &CascadeWeightLaw, level: usize, rng: &mut StreamRng, tables: &P2pTables) -> Vec<f64> {
    if level == 0 {
        return vec![1.0];
    }
    let a = wl.sample(rng);
    let mut out = vec![0.0; tables.len[level]];
    let tab = &tables.combine[level];
    for (xi, &ax) in a.iter().enumerate() {
        let child = p2p_rec(wl, level - 1, rng, tables);
        let base = xi * child.len();
        for (zi, cz) in child.iter().enumerate() {
            out[tab[base + zi]] += ax * cz;
        }
    }
    out
}

/// Exact point-to-point m-tree vector with an independent subtree below
/// every prefix. Consumes the stream in the same order as [`sample_cascade`],
/// so the vector sums to the point-to-line value drawn with the same seed.
pub fn sample_mtree_p2p(wl: &CascadeWeightLaw, n_levels: usize, seed: u64) -> Result<TreeP2p> {
    check_tree_size(wl.branching(), n_levels, DEFAULT_NODE_CAP)?;
    let mut rng = RngPolicy::new(seed).stream("cascade", &[]);
    Ok(mtree_p2p_with(wl, n_levels, &mut rng))
}

pub fn mtree_p2p_with(wl: &CascadeWeightLaw, n_levels: usize, rng: &mut StreamRng) -> TreeP2p {
    let tables = P2pTables::new(wl.m(), wl.d(), n_levels);
    let values = p2p_rec(wl, n_levels, rng, &tables);
    let cone = Cone::shared(wl.m() * n_levels, wl.d());
    TreeP2p { endpoints: cone.points(wl.m() * n_levels).map(<[i32]>::to_vec).collect(), values }
}

/// Population-dynamics approximation of the law of `Z^{m-tree}_{ml}(y)` for
/// trees too large to evaluate exactly.
///
/// Level `j` keeps a pool of `pool_size` values per needed displacement `p`,
/// each built as `sum_x A_x S_{j-1}(p - x)` from a fresh family and
/// independent picks from the level `j-1` pools. Only displacements from
/// which `endpoint` stays reachable are kept. Intermediate pools are rescaled
/// to their exact means so finite-pool noise does not compound over levels.
/// The last level draws `replicas` values at the endpoint.
pub fn sample_mtree_p2p_pool(
    wl: &CascadeWeightLaw,
    n_levels: usize,
    endpoint: &[i32],
    pool_size: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (m, d) = (wl.m(), wl.d());
    if n_levels == 0 || pool_size == 0 || endpoint.len() != d {
        return Err(Error::InvalidParameter("need n_levels >= 1, pool_size >= 1 and a d-dimensional endpoint".into()));
    }
    let horizon = m * n_levels;
    let cone = Cone::shared(horizon, d);
    if cone.index(horizon, endpoint).is_none() {
        return Err(Error::UnreachableEndpoint { endpoint: endpoint[0] as i64, horizon });
    }
    // needed[j]: local indices in slice j*m from which the endpoint is reachable
    let mut needed: Vec<Vec<usize>> = Vec::with_capacity(n_levels + 1);
    let mut rest = vec![0i32; d];
    for j in 0..=n_levels {
        let keep = (0..cone.slice_len(j * m))
            .filter(|&l| {
                for (r, (e, p)) in rest.iter_mut().zip(endpoint.iter().zip(cone.point(j * m, l))) {
                    *r = e - p;
                }
                cone.index((n_levels - j) * m, &rest).is_some()
            })
            .collect();
        needed.push(keep);
    }
    let policy = RngPolicy::new(seed);
    let mean_weights = wl.mean_weights();
    let mut pools: Vec<Vec<f64>> = vec![vec![1.0; 1]];
    let mut means = vec![1.0];
    let mut child = vec![0i32; d];
    for j in 1..=n_levels {
        let prev_needed = &needed[j - 1];
        let size = if j == n_levels { replicas } else { pool_size };
        // for each needed p: (letter index, position in prev pools) pairs
        let links: Vec<Vec<(usize, usize)>> = needed[j]
            .iter()
            .map(|&p| {
                let pt = cone.point(j * m, p);
                wl.alphabet()
                    .points
                    .iter()
                    .enumerate()
                    .filter_map(|(xi, x)| {
                        for (c, (a, b)) in child.iter_mut().zip(pt.iter().zip(x)) {
                            *c = a - b;
                        }
                        let local = cone.index((j - 1) * m, &child)?;
                        prev_needed.binary_search(&local).ok().map(|k| (xi, k))
                    })
                    .collect()
            })
            .collect();
        let prev_pools = &pools;
        let jobs: Vec<(usize, usize)> =
            (0..links.len()).flat_map(|k| (0..size.div_ceil(POOL_CHUNK)).map(move |c| (k, c))).collect();
        let chunks: Vec<Vec<f64>> = jobs
            .par_iter()
            .map(|&(k, c)| {
                let mut rng = policy.stream("p2p-pool", &[j as u64, needed[j][k] as u64, c as u64]);
                let lo = c * POOL_CHUNK;
                let hi = (lo + POOL_CHUNK).min(size);
                let mut a = Vec::with_capacity(wl.branching());
                let mut out = Vec::with_capacity(hi - lo);
                let picks: Vec<(usize, &[f64], Uniform<usize>)> = links[k]
                    .iter()
                    .map(|&(xi, pk)| {
                        let pool = &prev_pools[pk][..];
                        (xi, pool, Uniform::new(0, pool.len()).expect("pools are non-empty"))
                    })
                    .collect();
                for _ in lo..hi {
                    wl.draw(&mut rng, &mut a);
                    let mut s = 0.0;
                    for (xi, pool, pick) in &picks {
                        s += a[*xi] * pool[pick.sample(&mut rng)];
                    }
                    out.push(s);
                }
                out
            })
            .collect();
        let per = size.div_ceil(POOL_CHUNK);
        pools = chunks.chunks(per.max(1)).map(|cs| cs.concat()).collect();
        means = links.iter().map(|l| l.iter().map(|&(xi, pk)| mean_weights[xi] * means[pk]).sum()).collect();
        if j < n_levels {
            for (pool, &target) in pools.iter_mut().zip(&means) {
                let got = pool.iter().sum::<f64>() / pool.len() as f64;
                if got > 0.0 && target > 0.0 {
                    let f = target / got;
                    pool.iter_mut().for_each(|v| *v *= f);
                }
            }
        }
    }
    Ok(pools.pop().unwrap_or_default())
}

/// One generation of the point-to-line population dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPool {
    pub level: usize,
    pub samples: Vec<f64>,
}

impl PopulationPool {
    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    pub fn mean_log(&self) -> f64 {
        self.samples.iter().map(|v| v.ln()).sum::<f64>() / self.samples.len() as f64
    }

    /// CSV rows `level,index,value` (header included).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,index,value\n");
        for (i, v) in self.samples.iter().enumerate() {
            s.push_str(&format!("{},{},{:.17e}\n", self.level, i, v));
        }
        s
    }
}

/// Level-synchronous pool evolution `W' = sum_x A_x W^{(x)}` with
/// with-replacement picks from the previous generation.
pub struct PoolEvolver<'a, F: FamilySampler> {
    family: &'a F,
    policy: RngPolicy,
    pool: PopulationPool,
}

impl<'a, F: FamilySampler> PoolEvolver<'a, F> {
    pub fn new(family: &'a F, pool_size: usize, seed: u64) -> Result<Self> {
        if pool_size == 0 {
            return Err(Error::InvalidParameter("pool_size must be positive".into()));
        }
        Ok(PoolEvolver { family, policy: RngPolicy::new(seed), pool: PopulationPool { level: 0, samples: vec![1.0; pool_size] } })
    }

    pub fn pool(&self) -> &PopulationPool {
        &self.pool
    }

    pub fn into_pool(self) -> PopulationPool {
        self.pool
    }

    pub fn step(&mut self) {
        let old = &self.pool.samples;
        let size = old.len();
        let level = self.pool.level + 1;
        let family = self.family;
        let policy = self.policy;
        let chunks: Vec<Vec<f64>> = (0..size.div_ceil(POOL_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = policy.stream("pool", &[level as u64, c as u64]);
                let lo = c * POOL_CHUNK;
                let hi = (lo + POOL_CHUNK).min(size);
                let mut a = Vec::with_capacity(family.branching());
                let mut out = Vec::with_capacity(hi - lo);
                for _ in lo..hi {
                    family.draw(&mut rng, &mut a);
                    let mut s = 0.0;
                    for &ax in &a {
                        s += ax * old[rng.random_range(0..size)];
                    }
                    out.push(s);
                }
                out
            })
            .collect();
        self.pool = PopulationPool { level, samples: chunks.concat() };
    }
}

/// Pool at level `n_levels`; requires `pool_size >= 1000`.
pub fn sample_mtree_pool<F: FamilySampler>(family: &F, n_levels: usize, pool_size: usize, seed: u64) -> Result<PopulationPool> {
    if pool_size < 1000 {
        return Err(Error::InvalidParameter(format!("pool_size {pool_size} < 1000")));
    }
    let mut ev = PoolEvolver::new(family, pool_size, seed)?;
    for _ in 0..n_levels {
        ev.step();
    }
    Ok(ev.into_pool())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "kebab-case")]
pub enum EnergyScale {
    /// Per m-tree block (`p^{m-tree}`).
    PerBlock { m: usize },
    /// Per lattice step (`p`).
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub scale: EnergyScale,
    pub levels: usize,
    pub replicas: usize,
    pub non_convergent: bool,
}

impl FreeEnergyEstimate {
    /// Value and stderr per lattice step.
    pub fn per_step(&self) -> (f64, f64) {
        match self.scale {
            EnergyScale::PerStep => (self.value, self.stderr),
            EnergyScale::PerBlock { m } => (self.value / m as f64, self.stderr / m as f64),
        }
    }
}

/// Per-block m-tree free energy: the mean level-to-level increment of the
/// pool average of `log W_l` over the last half of the levels, shifted by `m lambda(beta)`
/// in mean-one mode so the value refers to the raw partition function.
pub fn estimate_free_energy_tree(wl: &CascadeWeightLaw, n_levels: usize, pool_size: usize, seed: u64) -> Result<FreeEnergyEstimate> {
    if n_levels < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 levels, got {n_levels}")));
    }
    let mut ev = PoolEvolver::new(wl, pool_size, seed)?;
    let mut means = vec![0.0];
    for _ in 0..n_levels {
        ev.step();
        means.push(ev.pool().mean_log());
    }
    let half = n_levels / 2;
    let incs: Vec<f64> = means[half..].windows(2).map(|w| w[1] - w[0]).collect();
    let shift = match wl.mode() {
        Normalization::MeanOne => wl.m() as f64 * wl.cumulant(),
        Normalization::Raw => 0.0,
    };
    let est = Estimate::from_samples(&incs);
    let inc_x: Vec<f64> = (half + 1..=n_levels).map(|l| l as f64).collect();
    let trend = ols(&inc_x, &incs);
    let trend_se = if trend.slope_stderr.is_finite() { trend.slope_stderr } else { 0.0 };
    let non_convergent = ratio_z(trend.slope, trend_se).abs() > 3.0 && trend.slope.abs() > 1e-12;
    Ok(FreeEnergyEstimate {
        value: est.mean + shift,
        stderr: est.stderr,
        scale: EnergyScale::PerBlock { m: wl.m() },
        levels: n_levels,
        replicas: pool_size,
        non_convergent,
    })
}

/// `(1/n) E log Z_n` over independent fields with its CLT stderr. The
/// finite-`n` value sits below the limit for the point-to-line polymer
/// (superadditivity of `E log Z_n`).
pub fn estimate_free_energy_lattice(law: &DisorderLaw, beta: f64, n: usize, d: usize, replicas: usize, seed: u64) -> Result<FreeEnergyEstimate> {
    if n < 50 {
        return Err(Error::InvalidParameter(format!("lattice free energy needs n >= 50, got {n}")));
    }
    law.check_beta(beta)?;
    let policy = RngPolicy::new(seed);
    let origin = vec![0; d];
    let logs: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = policy.stream("lattice-free-energy", &[i as u64]);
            let f = crate::env::DisorderField::sample_with(law, n, d, &origin, seed, &mut rng)?;
            Ok(lattice::log_point_to_line(&f, beta)? / n as f64)
        })
        .collect::<Result<_>>()?;
    let est = Estimate::from_samples(&logs);
    Ok(FreeEnergyEstimate {
        value: est.mean,
        stderr: est.stderr,
        scale: EnergyScale::PerStep,
        levels: n,
        replicas,
        non_convergent: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundConfig {
    pub law: DisorderLaw,
    pub beta: f64,
    pub d: usize,
    pub m_list: Vec<usize>,
    pub n: usize,
    pub replicas: usize,
    pub pool_size: usize,
    pub levels: usize,
    pub z_threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundRow {
    pub m: usize,
    pub tree: FreeEnergyEstimate,
    /// `p^{m-tree} / m`.
    pub bound: f64,
    pub bound_stderr: f64,
    /// `bound - p_hat`.
    pub margin: f64,
    /// Violation z-score `(p_hat - bound) / se`.
    pub z: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub lattice: FreeEnergyEstimate,
    pub rows: Vec<UpperBoundRow>,
    pub min_bound: f64,
    pub violated: bool,
}

/// Checks `p_hat(beta) <= min_m p^{m-tree}(beta) / m`; a violation needs
/// the gap to exceed `z_threshold` combined standard errors.
pub fn upper_bound_check(cfg: &UpperBoundConfig) -> Result<UpperBoundReport> {
    let policy = RngPolicy::new(cfg.seed);
    let lattice = estimate_free_energy_lattice(&cfg.law, cfg.beta, cfg.n, cfg.d, cfg.replicas, policy.derive_seed("lattice", &[]))?;
    let mut rows = Vec::new();
    for &m in &cfg.m_list {
        let wl = CascadeWeightLaw::new(&cfg.law, m, cfg.d, cfg.beta, Normalization::MeanOne)?;
        let tree = estimate_free_energy_tree(&wl, cfg.levels, cfg.pool_size, policy.derive_seed("tree", &[m as u64]))?;
        let (bound, bound_stderr) = tree.per_step();
        let se = (lattice.stderr.powi(2) + bound_stderr.powi(2)).sqrt();
        let z = ratio_z(lattice.value - bound, se);
        rows.push(UpperBoundRow { m, tree, bound, bound_stderr, margin: bound - lattice.value, z, violated: z > cfg.z_threshold });
    }
    let min_bound = rows.iter().map(|r| r.bound).fold(f64::INFINITY, f64::min);
    let violated = rows.iter().any(|r| r.violated);
    Ok(UpperBoundReport { lattice, rows, min_bound, violated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DisorderField;
    use crate::stats::{ks_two_sample, Estimate};

    fn gauss() -> DisorderLaw {
        DisorderLaw::StandardGaussian
    }

    #[test]
    fn alphabet_size_and_parity() {
        for m in 1..8 {
            let a = Alphabet::new(m, 1).unwrap();
            assert_eq!(a.len(), m + 1);
            assert!(a.points.iter().all(|p| (p[0] - m as i32).rem_euclid(2) == 0));
        }
        assert_eq!(Alphabet::new(2, 2).unwrap().len(), 9);
    }

    #[test]
    fn block_equals_transfer_on_same_stream() {
        let wl = CascadeWeightLaw::new(&gauss(), 3, 1, 0.8, Normalization::Raw).unwrap();
        let mut r1 = RngPolicy::new(5).stream("t", &[]);
        let mut r2 = RngPolicy::new(5).stream("t", &[]);
        let a = wl.sample(&mut r1);
        let f = DisorderField::sample_with(&gauss(), 3, 1, &[0], 5, &mut r2).unwrap();
        let s = lattice::transfer_point_to_point(&f, 0.8, &[0], 0, 3).unwrap();
        for (x, lz) in s.log_z.iter().enumerate() {
            assert!((a[x] / lz.exp() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_zero_block_is_walk_law() {
        let wl = CascadeWeightLaw::new(&gauss(), 4, 1, 0.0, Normalization::MeanOne).unwrap();
        let a = wl.block_weights(3);
        let expected = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (x, e) in a.iter().zip(expected) {
            assert!((x - e).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_step_block_is_independent_pair() {
        let law = DisorderLaw::SymmetricBernoulli;
        let wl = CascadeWeightLaw::new(&law, 1, 1, 1.0, Normalization::Raw).unwrap();
        let mut rng = RngPolicy::new(1).stream("pair", &[]);
        let hi = 0.5 * 1f64.exp();
        let lo = 0.5 * (-1f64).exp();
        let mut counts = [[0usize; 2]; 2];
        for _ in 0..40_000 {
            let a = wl.sample(&mut rng);
            assert!(a.iter().all(|v| (v - hi).abs() < 1e-15 || (v - lo).abs() < 1e-15));
            counts[(a[0] > 1.0) as usize][(a[1] > 1.0) as usize] += 1;
        }
        for row in counts {
            for c in row {
                // each cell has probability 1/4, sd ~ 87
                assert!((c as f64 - 10_000.0).abs() < 4.0 * 86.6);
            }
        }
    }

    #[test]
    fn mean_one_normalization() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 0.9, Normalization::MeanOne).unwrap();
        let mut rng = RngPolicy::new(2).stream("norm", &[]);
        let sums: Vec<f64> = (0..100_000).map(|_| wl.sample(&mut rng).iter().sum()).collect();
        assert!(Estimate::from_samples(&sums).z_against(1.0).abs() < 4.0);
        let mw = wl.mean_weights();
        assert!((mw.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cascade_single_level_and_degenerate() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 0.5, Normalization::Raw).unwrap();
        let w = sample_cascade(&wl, 1, 9).unwrap();
        let mut rng = RngPolicy::new(9).stream("cascade", &[]);
        let a = wl.sample(&mut rng);
        assert!((w - a.iter().sum::<f64>()).abs() < 1e-14);
        let uniform = FixedFamily(vec![1.0 / 3.0; 3]);
        for l in 0..6 {
            assert!((sample_cascade(&uniform, l, 1).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cascade_is_mean_one_martingale() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 0.8, Normalization::MeanOne).unwrap();
        for l in 1..=3 {
            let xs = sample_cascade_batch(&wl, l, 10_000, 40 + l as u64).unwrap();
            assert!(Estimate::from_samples(&xs).z_against(1.0).abs() < 4.0, "level {l}");
        }
    }

    #[test]
    fn mtree_with_tail() {
        let law = gauss();
        let t = MTree::new(&law, 5, 2, 1, 0.7, Normalization::MeanOne).unwrap();
        assert_eq!(t.levels(), 2);
        let xs = t.sample_batch(20_000, 3, "mt");
        assert!(Estimate::from_samples(&xs).z_against(1.0).abs() < 4.0);
        // one block longer than n is the lattice polymer itself
        let whole = MTree::new(&law, 3, 5, 1, 0.7, Normalization::Raw).unwrap();
        let mut r1 = RngPolicy::new(4).stream("x", &[]);
        let mut r2 = RngPolicy::new(4).stream("x", &[]);
        let f = DisorderField::sample_with(&law, 3, 1, &[0], 4, &mut r2).unwrap();
        let z = lattice::point_to_line(&f, 0.7).unwrap();
        assert!((whole.sample_partition(&mut r1) / z - 1.0).abs() < 1e-12);
        let zero = MTree::new(&law, 8, 2, 1, 0.0, Normalization::Raw).unwrap();
        assert_eq!(zero.sample_partition(&mut r1), 1.0);
    }

    #[test]
    fn tree_size_cap() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 0.5, Normalization::Raw).unwrap();
        assert!(matches!(sample_cascade(&wl, 14, 1), Err(Error::TreeTooLarge { .. })));
        assert_eq!(tree_nodes(3, 3), 13);
    }

    #[test]
    fn p2p_sums_to_point_to_line() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 1.0, Normalization::Raw).unwrap();
        for seed in 0..5 {
            let v = sample_mtree_p2p(&wl, 3, seed).unwrap();
            let w = sample_cascade(&wl, 3, seed).unwrap();
            assert_eq!(v.values.len(), 7);
            assert!((v.total() / w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn p2p_beta_zero_is_walk_law() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 0.0, Normalization::MeanOne).unwrap();
        let v = sample_mtree_p2p(&wl, 2, 4).unwrap();
        let expected = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (a, e) in v.values.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(v.endpoints[0], vec![-4]);
    }

    #[test]
    fn single_level_p2p_matches_lattice_in_law() {
        let m = 4;
        let wl = CascadeWeightLaw::new(&gauss(), m, 1, 1.0, Normalization::Raw).unwrap();
        let n = 10_000;
        let tree: Vec<f64> = (0..n).map(|i| sample_mtree_p2p(&wl, 1, 1000 + i).unwrap().get(&[0]).unwrap()).collect();
        let lat: Vec<f64> = (0..n)
            .map(|i| {
                let f = DisorderField::sample(&gauss(), m, 1, &[0], 50_000 + i).unwrap();
                lattice::transfer_point_to_point(&f, 1.0, &[0], 0, m).unwrap().get(&[0]).unwrap().exp()
            })
            .collect();
        assert!(!ks_two_sample(&tree, &lat).rejects(0.01));
    }

    #[test]
    fn pool_matches_exact_sampler() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 1.0, Normalization::MeanOne).unwrap();
        for level in 1..=3 {
            let pool = sample_mtree_pool(&wl, level, 10_000, 77).unwrap();
            assert_eq!(pool.level, level);
            assert!(Estimate::from_samples(&pool.samples).z_against(1.0).abs() < 4.0);
            let exact = sample_cascade_batch(&wl, level, 10_000, 78).unwrap();
            let ks = ks_two_sample(&pool.samples, &exact);
            assert!(!ks.rejects(0.01), "level {level}: {ks:?}");
        }
    }

    #[test]
    fn pool_degenerate_and_size_guard() {
        let uniform = FixedFamily(vec![0.5, 0.5]);
        let pool = sample_mtree_pool(&uniform, 4, 1000, 1).unwrap();
        assert!(pool.samples.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(sample_mtree_pool(&uniform, 4, 999, 1).is_err());
        assert!(pool.to_csv().starts_with("level,index,value\n4,0,"));
    }

    #[test]
    fn p2p_pool_matches_exact_tree() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 1.0, Normalization::MeanOne).unwrap();
        let pooled = sample_mtree_p2p_pool(&wl, 3, &[0], 10_000, 10_000, 5).unwrap();
        assert_eq!(pooled.len(), 10_000);
        let exact: Vec<f64> = (0..10_000u64).map(|i| sample_mtree_p2p(&wl, 3, 900 + i).unwrap().get(&[0]).unwrap()).collect();
        let ks = ks_two_sample(&pooled, &exact);
        assert!(!ks.rejects(0.01), "{ks:?}");
        // mean of S_3(0) is P(x_6 = 0) = 20/64
        assert!(Estimate::from_samples(&pooled).z_against(20.0 / 64.0).abs() < 4.0);
    }

    #[test]
    fn deep_p2p_pool_keeps_exact_mean() {
        // small pools over many levels: the mean must not drift
        let wl = CascadeWeightLaw::new(&DisorderLaw::SymmetricBernoulli, 2, 1, 0.5, Normalization::MeanOne).unwrap();
        let v = sample_mtree_p2p_pool(&wl, 200, &[0], 200, 20_000, 8).unwrap();
        let log_p = (1..=200).map(|k| ((200 + k) as f64 / k as f64).ln()).sum::<f64>() - 400.0 * std::f64::consts::LN_2;
        let w: Vec<f64> = v.iter().map(|x| x / log_p.exp()).collect();
        assert!(Estimate::from_samples(&w).z_against(1.0).abs() < 4.0);
    }

    #[test]
    fn p2p_pool_rejects_unreachable() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 1.0, Normalization::MeanOne).unwrap();
        assert!(matches!(sample_mtree_p2p_pool(&wl, 2, &[1], 100, 100, 1), Err(Error::UnreachableEndpoint { .. })));
    }

    #[test]
    fn free_energy_beta_zero() {
        let wl = CascadeWeightLaw::new(&gauss(), 2, 1, 0.0, Normalization::MeanOne).unwrap();
        let fe = estimate_free_energy_tree(&wl, 10, 1000, 1).unwrap();
        assert_eq!(fe.value, 0.0);
        assert!(!fe.non_convergent);
        let lat = estimate_free_energy_lattice(&gauss(), 0.0, 50, 1, 20, 1).unwrap();
        assert_eq!(lat.value, 0.0);
        assert!(estimate_free_energy_lattice(&gauss(), 0.5, 49, 1, 20, 1).is_err());
        assert!(estimate_free_energy_tree(&wl, 9, 1000, 1).is_err());
    }

    #[test]
    fn free_energies_respect_annealed_bound() {
        let law = DisorderLaw::SymmetricBernoulli;
        let beta = 1.0;
        let lambda = law.cumulant(beta).unwrap();
        let lat = estimate_free_energy_lattice(&law, beta, 60, 1, 200, 3).unwrap();
        assert!(lat.value <= lambda + 3.0 * lat.stderr);
        let wl = CascadeWeightLaw::new(&law, 2, 1, beta, Normalization::MeanOne).unwrap();
        let tree = estimate_free_energy_tree(&wl, 12, 2000, 3).unwrap();
        let (v, se) = tree.per_step();
        assert!(v <= lambda + 3.0 * se);
    }

    #[test]
    fn lattice_free_energy_is_stable_in_n() {
        let law = gauss();
        let a = estimate_free_energy_lattice(&law, 1.0, 100, 1, 200, 21).unwrap();
        let b = estimate_free_energy_lattice(&law, 1.0, 200, 1, 200, 22).unwrap();
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 4.0 * se, "{a:?} {b:?}");
    }

    #[test]
    fn upper_bound_degenerate_environment() {
        let zero = DisorderLaw::finite(vec![0.0], vec![1.0]).unwrap();
        let cfg = UpperBoundConfig {
            law: zero,
            beta: 1.0,
            d: 1,
            m_list: vec![1, 2],
            n: 50,
            replicas: 10,
            pool_size: 1000,
            levels: 10,
            z_threshold: 3.0,
            seed: 1,
        };
        let r = upper_bound_check(&cfg).unwrap();
        assert!(r.lattice.value.abs() < 1e-12);
        assert!(r.rows.iter().all(|row| row.bound.abs() < 1e-12 && !row.violated));
        assert!(!r.violated);
    }
}
