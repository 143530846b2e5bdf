//! One-sided statistical checks of the usual (st), convex (cx) and
//! Laplace-transform (lt) orders between two sample batches, plus the
//! association inequality for random vectors.
//!
//! Every grid point carries a z-score oriented so that positive values are
//! evidence against the claimed direction `X <= Y`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngPolicy, StreamRng};
use crate::stats::{mean_var, quantile_sorted, ratio_z, sorted_copy, upper_normal_quantile, upper_normal_tail, Estimate};

/// Percent levels of the default strike and CDF grids.
pub const QUANTILE_LEVELS: [f64; 21] =
    [1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 99.0];

/// One-sided level whose normal quantile is `k`.
pub fn alpha_for_sigma(k: f64) -> f64 {
    upper_normal_tail(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub label: String,
    pub seed: u64,
    pub lineage: String,
    values: Vec<f64>,
}

impl SampleBatch {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(SampleBatch { label: label.into(), seed: 0, lineage: String::new(), values })
    }

    pub fn with_lineage(mut self, seed: u64, lineage: impl Into<String>) -> Self {
        self.seed = seed;
        self.lineage = lineage.into();
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::from_samples(&self.values)
    }

    fn require_nonnegative(&self) -> Result<()> {
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeValues);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Lambda,
    Strike,
    Cdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestGrid {
    pub kind: GridKind,
    points: Vec<f64>,
}

impl TestGrid {
    pub fn new(kind: GridKind, points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("grid must be non-empty and finite".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
        }
        if kind == GridKind::Lambda && points[0] <= 0.0 {
            return Err(Error::InvalidGrid("lambda grid must be strictly positive".into()));
        }
        Ok(TestGrid { kind, points })
    }

    /// `count` log-spaced points from `lo` to `hi`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && count >= 2) {
            return Err(Error::InvalidGrid(format!("bad log grid {lo}..{hi} x{count}")));
        }
        let (a, b) = (lo.log10(), hi.log10());
        let pts = (0..count).map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)).collect();
        TestGrid::new(GridKind::Lambda, pts)
    }

    /// 21 log-spaced points from `1e-2` to `1e2`.
    pub fn default_lambda() -> Self {
        TestGrid::log_spaced(1e-2, 1e2, 21).expect("default grid is valid")
    }

    /// Pooled empirical quantiles at [`QUANTILE_LEVELS`], ties merged.
    pub fn pooled_quantiles(kind: GridKind, batches: &[&SampleBatch]) -> Result<Self> {
        let pooled: Vec<f64> = batches.iter().flat_map(|b| b.values().iter().copied()).collect();
        if pooled.is_empty() {
            return Err(Error::InvalidGrid("no samples to build a quantile grid".into()));
        }
        let sorted = sorted_copy(&pooled);
        let mut pts: Vec<f64> = QUANTILE_LEVELS.iter().map(|q| quantile_sorted(&sorted, q / 100.0)).collect();
        pts.dedup();
        TestGrid::new(kind, pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderKind {
    St,
    Cx,
    Lt,
    Association,
}

impl OrderKind {
    pub fn symbol(self) -> &'static str {
        match self {
            OrderKind::St => "<=_st",
            OrderKind::Cx => "<=_cx",
            OrderKind::Lt => "<=_Lt",
            OrderKind::Association => "assoc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointKind {
    Laplace,
    Cdf,
    Put,
    Call,
    Mean,
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictPoint {
    pub kind: PointKind,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Consistent,
    Violated { t: f64, z: f64 },
    Inconclusive,
}

/// Two grid points pulling in opposite directions, both beyond the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub violating_t: f64,
    pub violating_z: f64,
    pub supporting_t: f64,
    pub supporting_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub order: OrderKind,
    pub direction: String,
    pub alpha: f64,
    pub z_crit: f64,
    pub points: Vec<VerdictPoint>,
    pub outcome: Outcome,
    pub crossing: Option<Crossing>,
}

impl OrderVerdict {
    fn build(order: OrderKind, direction: String, alpha: f64, points: Vec<VerdictPoint>) -> Self {
        let z_crit = upper_normal_quantile(alpha);
        // the mean row of cx is two-sided
        let score = |p: &VerdictPoint| if p.kind == PointKind::Mean { p.z.abs() } else { p.z };
        let worst = points
            .iter()
            .filter(|p| score(p) > z_crit)
            .max_by(|a, b| score(a).total_cmp(&score(b)));
        let max_abs = points.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
        let outcome = match worst {
            Some(p) => Outcome::Violated { t: p.t, z: score(p) },
            None if max_abs < 1.0 => Outcome::Inconclusive,
            None => Outcome::Consistent,
        };
        let up = points.iter().filter(|p| p.kind != PointKind::Mean).max_by(|a, b| a.z.total_cmp(&b.z));
        let down = points.iter().filter(|p| p.kind != PointKind::Mean).min_by(|a, b| a.z.total_cmp(&b.z));
        let crossing = match (up, down) {
            (Some(u), Some(d)) if u.z > z_crit && -d.z > z_crit => {
                Some(Crossing { violating_t: u.t, violating_z: u.z, supporting_t: d.t, supporting_z: d.z })
            }
            _ => None,
        };
        OrderVerdict { order, direction, alpha, z_crit, points, outcome, crossing }
    }

    pub fn is_violated(&self) -> bool {
        matches!(self.outcome, Outcome::Violated { .. })
    }

    pub fn is_consistent(&self) -> bool {
        self.outcome == Outcome::Consistent
    }

    pub fn max_z(&self) -> f64 {
        self.points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn outcome_label(&self) -> &'static str {
        match self.outcome {
            Outcome::Consistent => "CONSISTENT",
            Outcome::Violated { .. } => "VIOLATED",
            Outcome::Inconclusive => "INCONCLUSIVE",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialize")
    }

    /// Per-point rows `order,direction,kind,t,lhs,rhs,z`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("order,direction,kind,t,lhs,rhs,z\n");
        let order = serde_json::to_value(self.order).expect("enum serializes");
        for p in &self.points {
            let kind = serde_json::to_value(p.kind).expect("enum serializes");
            let _ = writeln!(
                s,
                "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                order.as_str().unwrap_or_default(),
                self.direction,
                kind.as_str().unwrap_or_default(),
                p.t,
                p.lhs,
                p.rhs,
                p.z
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    Independent,
    /// Same-index samples share randomness; standard errors come from differences.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum CiMethod {
    Normal,
    Bootstrap { resamples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub alpha: f64,
    pub pairing: Pairing,
    pub ci: CiMethod,
}

impl CompareOptions {
    pub fn new(alpha: f64) -> Self {
        CompareOptions { alpha, pairing: Pairing::Independent, ci: CiMethod::Normal }
    }

    pub fn paired(mut self) -> Self {
        self.pairing = Pairing::Paired;
        self
    }

    pub fn bootstrap(mut self, resamples: usize, seed: u64) -> Self {
        self.ci = CiMethod::Bootstrap { resamples, seed };
        self
    }
}

fn direction(order: OrderKind, x: &SampleBatch, y: &SampleBatch) -> String {
    let name = |b: &SampleBatch, d: &str| if b.label.is_empty() { d.to_string() } else { b.label.clone() };
    format!("{} {} {}", name(x, "X"), order.symbol(), name(y, "Y"))
}

/// Means of `g` on both batches and the standard error of their difference.
fn functional_pair<G>(x: &[f64], y: &[f64], opts: &CompareOptions, salt: u64, g: G) -> Result<(f64, f64, f64)>
where
    G: Fn(f64) -> f64,
{
    let gx: Vec<f64> = x.iter().map(|&v| g(v)).collect();
    let gy: Vec<f64> = y.iter().map(|&v| g(v)).collect();
    let (mx, vx) = mean_var(&gx);
    let (my, vy) = mean_var(&gy);
    if opts.pairing == Pairing::Paired && x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let se = match opts.ci {
        CiMethod::Normal => match opts.pairing {
            Pairing::Independent => (vx / gx.len() as f64 + vy / gy.len() as f64).sqrt(),
            Pairing::Paired => {
                let diff: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
                Estimate::from_samples(&diff).stderr
            }
        },
        CiMethod::Bootstrap { resamples, seed } => {
            let mut rng = RngPolicy::new(seed).stream("bootstrap", &[salt]);
            let mut diffs = Vec::with_capacity(resamples);
            for _ in 0..resamples {
                let (sx, sy) = match opts.pairing {
                    Pairing::Paired => {
                        let (mut a, mut b) = (0.0, 0.0);
                        for _ in 0..gx.len() {
                            let i = rng.random_range(0..gx.len());
                            a += gx[i];
                            b += gy[i];
                        }
                        (a, b)
                    }
                    Pairing::Independent => {
                        let a: f64 = (0..gx.len()).map(|_| gx[rng.random_range(0..gx.len())]).sum();
                        let b: f64 = (0..gy.len()).map(|_| gy[rng.random_range(0..gy.len())]).sum();
                        (a, b)
                    }
                };
                diffs.push(sx / gx.len() as f64 - sy / gy.len() as f64);
            }
            mean_var(&diffs).1.sqrt()
        }
    };
    Ok((mx, my, se))
}

fn check_sizes(x: &SampleBatch, y: &SampleBatch) -> Result<()> {
    if x.count() < 2 || y.count() < 2 {
        return Err(Error::InvalidParameter("batches need at least two samples".into()));
    }
    Ok(())
}

/// Claims `E e^{-lambda X} >= E e^{-lambda Y}` at every grid point.
pub fn lt_compare(x: &SampleBatch, y: &SampleBatch, grid: &TestGrid, alpha: f64) -> Result<OrderVerdict> {
    lt_compare_with(x, y, grid, &CompareOptions::new(alpha))
}

pub fn lt_compare_with(x: &SampleBatch, y: &SampleBatch, grid: &TestGrid, opts: &CompareOptions) -> Result<OrderVerdict> {
    x.require_nonnegative()?;
    y.require_nonnegative()?;
    check_sizes(x, y)?;
    if grid.kind != GridKind::Lambda {
        return Err(Error::InvalidGrid("Laplace comparison needs a lambda grid".into()));
    }
    let points = grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let (lx, ly, se) = functional_pair(x.values(), y.values(), opts, i as u64, |v| (-lambda * v).exp())?;
            Ok(VerdictPoint { kind: PointKind::Laplace, t: lambda, lhs: lx, rhs: ly, z: ratio_z(ly - lx, se) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrderVerdict::build(OrderKind::Lt, direction(OrderKind::Lt, x, y), opts.alpha, points))
}

/// `X <=_Lt Y` iff `X / e <=_st Y / e'` for independent unit exponentials.
pub fn lt_compare_randomized(x: &SampleBatch, y: &SampleBatch, alpha: f64, seed: u64) -> Result<OrderVerdict> {
    x.require_nonnegative()?;
    y.require_nonnegative()?;
    check_sizes(x, y)?;
    let policy = RngPolicy::new(seed);
    let divide = |b: &SampleBatch, tag: &str| {
        let mut rng = policy.stream(tag, &[]);
        let vals = b
            .values()
            .iter()
            .map(|&v| {
                let e: f64 = Exp1.sample(&mut rng);
                v / e
            })
            .collect();
        SampleBatch { label: b.label.clone(), seed, lineage: format!("{}/exp-randomized", b.lineage), values: vals }
    };
    let rx = divide(x, "randomize-x");
    let ry = divide(y, "randomize-y");
    let grid = TestGrid::pooled_quantiles(GridKind::Cdf, &[&rx, &ry])?;
    let mut v = st_compare(&rx, &ry, &grid, alpha)?;
    v.order = OrderKind::Lt;
    v.direction = direction(OrderKind::Lt, x, y);
    Ok(v)
}

/// Claims `F_X(t) >= F_Y(t)` at every grid point.
pub fn st_compare(x: &SampleBatch, y: &SampleBatch, grid: &TestGrid, alpha: f64) -> Result<OrderVerdict> {
    st_compare_with(x, y, grid, &CompareOptions::new(alpha))
}

pub fn st_compare_with(x: &SampleBatch, y: &SampleBatch, grid: &TestGrid, opts: &CompareOptions) -> Result<OrderVerdict> {
    check_sizes(x, y)?;
    let points = grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let (fx, fy, se) = functional_pair(x.values(), y.values(), opts, i as u64, |v| if v <= t { 1.0 } else { 0.0 })?;
            Ok(VerdictPoint { kind: PointKind::Cdf, t, lhs: fx, rhs: fy, z: ratio_z(fy - fx, se) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrderVerdict::build(OrderKind::St, direction(OrderKind::St, x, y), opts.alpha, points))
}

/// Claims `E (d - X)_+ <= E (d - Y)_+` and `E (X - d)_+ <= E (Y - d)_+` at
/// every strike, plus equal means (two-sided).
pub fn cx_compare(x: &SampleBatch, y: &SampleBatch, strikes: &TestGrid, alpha: f64) -> Result<OrderVerdict> {
    cx_compare_with(x, y, strikes, &CompareOptions::new(alpha))
}

pub fn cx_compare_with(x: &SampleBatch, y: &SampleBatch, strikes: &TestGrid, opts: &CompareOptions) -> Result<OrderVerdict> {
    check_sizes(x, y)?;
    let n = strikes.points().len();
    let mut points = (0..2 * n)
        .into_par_iter()
        .map(|j| {
            let d = strikes.points()[j % n];
            let (kind, g): (PointKind, Box<dyn Fn(f64) -> f64 + Sync>) = if j < n {
                (PointKind::Put, Box::new(move |v| (d - v).max(0.0)))
            } else {
                (PointKind::Call, Box::new(move |v| (v - d).max(0.0)))
            };
            let (px, py, se) = functional_pair(x.values(), y.values(), opts, j as u64, g)?;
            Ok(VerdictPoint { kind, t: d, lhs: px, rhs: py, z: ratio_z(px - py, se) })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mx, my, se) = functional_pair(x.values(), y.values(), opts, 2 * n as u64, |v| v)?;
    points.push(VerdictPoint { kind: PointKind::Mean, t: 0.0, lhs: mx, rhs: my, z: ratio_z(mx - my, se) });
    Ok(OrderVerdict::build(OrderKind::Cx, direction(OrderKind::Cx, x, y), opts.alpha, points))
}

/// Log, power and `x log x` moments of a positive batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalTable {
    pub log: Estimate,
    pub powers: Vec<(f64, Estimate)>,
    pub xlogx: Estimate,
}

pub fn derived_functionals(x: &SampleBatch, alphas: &[f64]) -> Result<FunctionalTable> {
    if x.values().iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositiveValues);
    }
    if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(Error::InvalidParameter("power exponents must lie in (0, 1)".into()));
    }
    let over = |f: &dyn Fn(f64) -> f64| Estimate::from_samples(&x.values().iter().map(|&v| f(v)).collect::<Vec<_>>());
    Ok(FunctionalTable {
        log: over(&|v| v.ln()),
        powers: alphas.iter().map(|&a| (a, over(&|v: f64| v.powf(a)))).collect(),
        xlogx: over(&|v| v * v.ln()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRow {
    pub functional: String,
    /// Claimed relation `lhs <= rhs` or `lhs >= rhs`.
    pub relation: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Violation z-score.
    pub z: f64,
    pub violated: bool,
}

/// Compares two functional tables: `E log` and `E X^a` ordered `x <= y`,
/// `E X log X` ordered `x >= y`.
pub fn functional_comparison(x: &FunctionalTable, y: &FunctionalTable, alpha: f64) -> Vec<FunctionalRow> {
    let zc = upper_normal_quantile(alpha);
    let row = |name: String, a: Estimate, b: Estimate, le: bool| {
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        let diff = if le { a.mean - b.mean } else { b.mean - a.mean };
        let z = ratio_z(diff, se);
        FunctionalRow { functional: name, relation: if le { "<=" } else { ">=" }.into(), lhs: a, rhs: b, z, violated: z > zc }
    };
    let mut rows = vec![row("E log X".into(), x.log, y.log, true)];
    for ((a, ex), (_, ey)) in x.powers.iter().zip(&y.powers) {
        rows.push(row(format!("E X^{a}"), *ex, *ey, true));
    }
    rows.push(row("E X log X".into(), x.xlogx, y.xlogx, false));
    rows
}

/// Nonnegative test functions for the association inequality.
#[derive(Clone)]
pub enum TestFunction {
    /// `e^{-lambda x}`, non-increasing.
    Exponential { lambda: f64 },
    /// `max(x, 0)`, non-decreasing.
    PositivePart,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestFunction::Exponential { lambda } => write!(f, "Exponential({lambda})"),
            TestFunction::PositivePart => write!(f, "PositivePart"),
            TestFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Exponential { lambda } => (-lambda * x).exp(),
            TestFunction::PositivePart => x.max(0.0),
            TestFunction::Custom(f) => f(x),
        }
    }
}

/// Functions applied coordinatewise at one grid point `t`; a single
/// function is used for every coordinate.
#[derive(Debug, Clone)]
pub struct FunctionSet {
    pub t: f64,
    pub functions: Vec<TestFunction>,
}

impl FunctionSet {
    fn get(&self, i: usize) -> &TestFunction {
        if self.functions.len() == 1 { &self.functions[0] } else { &self.functions[i] }
    }
}

/// `f_i(x) = e^{-lambda x}` on every coordinate, one set per `lambda`.
pub fn exponential_sets(lambdas: &[f64]) -> Vec<FunctionSet> {
    lambdas.iter().map(|&l| FunctionSet { t: l, functions: vec![TestFunction::Exponential { lambda: l }] }).collect()
}

const ASSOC_CHUNK: usize = 4096;

/// Monte Carlo check of `E prod f_i(X_i) >= prod E f_i(X_i)` with a
/// delta-method standard error. Vectors come from `sampler`, chunk `c`
/// drawing from stream `("assoc", c)`.
pub fn association_check<S>(sampler: S, sets: &[FunctionSet], replicas: usize, alpha: f64, seed: u64) -> Result<OrderVerdict>
where
    S: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    if replicas < 2 || sets.is_empty() {
        return Err(Error::InvalidParameter("need replicas >= 2 and at least one function set".into()));
    }
    let policy = RngPolicy::new(seed);
    let chunks: Vec<Vec<Vec<f64>>> = (0..replicas.div_ceil(ASSOC_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = policy.stream("assoc", &[c as u64]);
            let hi = ((c + 1) * ASSOC_CHUNK).min(replicas);
            (c * ASSOC_CHUNK..hi).map(|_| sampler(&mut rng)).collect()
        })
        .collect();
    let samples: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
    let k = samples[0].len();
    if samples.iter().any(|s| s.len() != k) {
        return Err(Error::InvalidParameter("sampler returned vectors of varying length".into()));
    }
    for set in sets {
        if set.functions.len() != 1 && set.functions.len() != k {
            return Err(Error::SizeMismatch { expected: k, got: set.functions.len() });
        }
    }
    let points = sets
        .par_iter()
        .map(|set| {
            let mut vals = vec![0.0; samples.len() * k];
            for (r, s) in samples.iter().enumerate() {
                for (i, &xi) in s.iter().enumerate() {
                    let v = set.get(i).eval(xi);
                    if v < 0.0 || !v.is_finite() {
                        return Err(Error::NegativeTestFunction);
                    }
                    vals[r * k + i] = v;
                }
            }
            let n = samples.len() as f64;
            let means: Vec<f64> = (0..k).map(|i| (0..samples.len()).map(|r| vals[r * k + i]).sum::<f64>() / n).collect();
            let prods: Vec<f64> = (0..samples.len()).map(|r| vals[r * k..(r + 1) * k].iter().product()).collect();
            let lhs = prods.iter().sum::<f64>() / n;
            let rhs: f64 = means.iter().product();
            let partial: Vec<f64> = (0..k).map(|i| (0..k).filter(|&j| j != i).map(|j| means[j]).product()).collect();
            let psi: Vec<f64> = (0..samples.len())
                .map(|r| prods[r] - lhs - (0..k).map(|i| partial[i] * (vals[r * k + i] - means[i])).sum::<f64>())
                .collect();
            let se = Estimate::from_samples(&psi).stderr;
            Ok(VerdictPoint { kind: PointKind::Product, t: set.t, lhs, rhs, z: ratio_z(rhs - lhs, se) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrderVerdict::build(OrderKind::Association, "E prod f(X) >= prod E f(X)".into(), alpha, points))
}
