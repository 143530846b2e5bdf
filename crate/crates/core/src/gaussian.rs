//! Gaussian environments: overlap covariances of lattice and m-tree
//! energies, the entrywise comparison behind Slepian's lemma, and Monte
//! Carlo comparisons of ground-state energies and `E log Z`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{MTree, Normalization};
use crate::env::{DisorderField, DisorderLaw};
use crate::error::{Error, Result};
use crate::geometry::Cone;
use crate::lattice::{self, check_path_cap, enumerate_paths, PolymerPath, DEFAULT_PATH_CAP};
use crate::orders::{st_compare, GridKind, OrderVerdict, SampleBatch, TestGrid};
use crate::rng::{RngPolicy, StreamRng};
use crate::stats::{ratio_z, upper_normal_quantile, Estimate};

/// Dense square integer matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    pub size: usize,
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn get(&self, a: usize, b: usize) -> i64 {
        self.data[a * self.size + b]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|a| (0..a).all(|b| self.get(a, b) == self.get(b, a)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..self.size {
            let row: Vec<String> = (0..self.size).map(|b| self.get(a, b).to_string()).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

fn pairwise(paths: &[PolymerPath], entry: impl Fn(&PolymerPath, &PolymerPath) -> i64 + Sync) -> Result<IntMatrix> {
    if let Some(first) = paths.first() {
        for p in paths {
            if p.len() != first.len() || p.d() != first.d() {
                return Err(Error::LengthMismatch(first.len(), p.len()));
            }
        }
    }
    let size = paths.len();
    let rows: Vec<Vec<i64>> = (0..size)
        .into_par_iter()
        .map(|a| (0..size).map(|b| entry(&paths[a], &paths[b])).collect())
        .collect();
    Ok(IntMatrix { size, data: rows.concat() })
}

/// `sum_i 1{x_i = x'_i}`.
pub fn lattice_overlap(p: &PolymerPath, q: &PolymerPath) -> i64 {
    p.steps().zip(q.steps()).filter(|(a, b)| a == b).count() as i64
}

/// `sum_i 1{x_i = x'_i} prod_{k=1}^{floor(i/m)} 1{x_{km} = x'_{km}}`.
pub fn tree_overlap(p: &PolymerPath, q: &PolymerPath, m: usize) -> i64 {
    let mut total = 0;
    // blocks completed so far all agree at their endpoints
    let mut alive = true;
    for i in 1..=p.len() {
        let same = p.step(i - 1) == q.step(i - 1);
        if i % m == 0 && !same {
            alive = false;
        }
        if alive && same {
            total += 1;
        }
    }
    total
}

pub fn lattice_covariance(paths: &[PolymerPath]) -> Result<IntMatrix> {
    pairwise(paths, lattice_overlap)
}

pub fn tree_covariance(paths: &[PolymerPath], m: usize) -> Result<IntMatrix> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    pairwise(paths, |p, q| tree_overlap(p, q, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariancePair {
    pub paths: Vec<Vec<Vec<i32>>>,
    pub lattice_cov: IntMatrix,
    pub tree_cov: IntMatrix,
    pub m: usize,
}

impl CovariancePair {
    pub fn new(paths: &[PolymerPath], m: usize) -> Result<Self> {
        Ok(CovariancePair {
            paths: paths.iter().map(|p| p.steps().map(<[i32]>::to_vec).collect()).collect(),
            lattice_cov: lattice_covariance(paths)?,
            tree_cov: tree_covariance(paths, m)?,
            m,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub a: usize,
    pub b: usize,
    pub lattice: i64,
    pub tree: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlepianReport {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub paths: usize,
    pub diagonal_ok: bool,
    pub dominance_ok: bool,
    pub counterexamples: usize,
    pub first_counterexample: Option<Counterexample>,
}

impl SlepianReport {
    pub fn holds(&self) -> bool {
        self.diagonal_ok && self.dominance_ok
    }
}

/// Enumerates all `(2d)^n` paths and checks equal variances `n` and
/// `tree <= lattice` for every pair.
pub fn slepian_precondition(n: usize, m: usize, d: usize) -> Result<SlepianReport> {
    let paths = enumerate_paths(n, d, DEFAULT_PATH_CAP)?;
    let cov = CovariancePair::new(&paths, m)?;
    let size = paths.len();
    let diagonal_ok = (0..size).all(|a| cov.lattice_cov.get(a, a) == n as i64 && cov.tree_cov.get(a, a) == n as i64);
    let mut counterexamples = 0;
    let mut first = None;
    for a in 0..size {
        for b in 0..size {
            let (l, t) = (cov.lattice_cov.get(a, b), cov.tree_cov.get(a, b));
            if t > l {
                counterexamples += 1;
                first.get_or_insert(Counterexample { a, b, lattice: l, tree: t });
            }
        }
    }
    Ok(SlepianReport { n, m, d, paths: size, diagonal_ok, dominance_ok: counterexamples == 0, counterexamples, first_counterexample: first })
}

fn tree_max_rec(n_left: usize, m: usize, d: usize, rng: &mut StreamRng) -> f64 {
    if n_left == 0 {
        return 0.0;
    }
    let len = m.min(n_left);
    let cone = Cone::shared(len, d);
    let law = DisorderLaw::StandardGaussian;
    let omega: Vec<f64> = std::iter::once(0.0).chain((1..cone.total_points()).map(|_| law.sample(rng))).collect();
    let best = lattice::forward_max(&cone, len, |g| omega[g]);
    let mut out = f64::NEG_INFINITY;
    for b in best {
        out = out.max(b + tree_max_rec(n_left - len, m, d, rng));
    }
    out
}

/// `sup_x H^{m-tree}_n(x)` with an independent Gaussian block field for
/// every cascade prefix.
pub fn tree_max_energy(n: usize, m: usize, d: usize, rng: &mut StreamRng) -> f64 {
    tree_max_rec(n, m, d, rng)
}

fn gaussian_checks(n: usize, m: usize, d: usize, replicas: usize) -> Result<()> {
    check_path_cap(n, d, DEFAULT_PATH_CAP)?;
    if n == 0 || m == 0 || d == 0 || replicas < 2 {
        return Err(Error::InvalidParameter("need n, m, d >= 1 and replicas >= 2".into()));
    }
    Ok(())
}

fn lattice_batch(n: usize, d: usize, replicas: usize, policy: RngPolicy, tag: &str, f: impl Fn(&DisorderField) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    let origin = vec![0; d];
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = policy.stream(tag, &[i as u64]);
            let field = DisorderField::sample_with(&DisorderLaw::StandardGaussian, n, d, &origin, 0, &mut rng)?;
            f(&field)
        })
        .collect()
}

/// Two batches compared on a scalar with a one-sided mean test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanComparison {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Violation z-score of the claim `lhs <= rhs`.
    pub z: f64,
    pub alpha: f64,
    pub violated: bool,
}

impl MeanComparison {
    fn new(lhs: &[f64], rhs: &[f64], alpha: f64) -> Self {
        let (a, b) = (Estimate::from_samples(lhs), Estimate::from_samples(rhs));
        let z = ratio_z(a.mean - b.mean, (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
        MeanComparison { lhs: a, rhs: b, z, alpha, violated: z > upper_normal_quantile(alpha) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxReport {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub replicas: usize,
    pub verdict: OrderVerdict,
    pub means: MeanComparison,
}

/// `sup H_n <=_st sup H^{m-tree}_n` for standard Gaussian fields.
pub fn max_compare(n: usize, m: usize, d: usize, replicas: usize, alpha: f64, seed: u64) -> Result<MaxReport> {
    gaussian_checks(n, m, d, replicas)?;
    let policy = RngPolicy::new(seed);
    let lat = lattice_batch(n, d, replicas, policy, "max-lattice", |f| Ok(lattice::max_energy(f)))?;
    let tree: Vec<f64> =
        (0..replicas).into_par_iter().map(|i| tree_max_energy(n, m, d, &mut policy.stream("max-tree", &[i as u64]))).collect();
    let x = SampleBatch::new("sup H lattice", lat)?.with_lineage(seed, "max-lattice");
    let y = SampleBatch::new("sup H tree", tree)?.with_lineage(seed, "max-tree");
    let grid = TestGrid::pooled_quantiles(GridKind::Cdf, &[&x, &y])?;
    let verdict = st_compare(&x, &y, &grid, alpha)?;
    let means = MeanComparison::new(x.values(), y.values(), alpha);
    Ok(MaxReport { n, m, d, replicas, verdict, means })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElogzReport {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub beta: f64,
    pub replicas: usize,
    pub comparison: MeanComparison,
}

/// `E log Z^pol_n <= E log Z^{m-tree}_n` for Gaussian environments.
pub fn elogz_compare(n: usize, m: usize, d: usize, replicas: usize, beta: f64, alpha: f64, seed: u64) -> Result<ElogzReport> {
    gaussian_checks(n, m, d, replicas)?;
    let policy = RngPolicy::new(seed);
    let law = DisorderLaw::StandardGaussian;
    let lat = lattice_batch(n, d, replicas, policy, "elogz-lattice", |f| lattice::log_point_to_line(f, beta))?;
    let tree = MTree::new(&law, n, m, d, beta, Normalization::Raw)?;
    let logs: Vec<f64> = tree.sample_batch(replicas, policy.derive_seed("elogz-tree", &[]), "elogz-tree").into_iter().map(f64::ln).collect();
    Ok(ElogzReport { n, m, d, beta, replicas, comparison: MeanComparison::new(&lat, &logs, alpha) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StFailureReport {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub beta: f64,
    pub replicas: usize,
    pub verdict: OrderVerdict,
    pub crossing_found: bool,
    pub mean_polymer: Estimate,
    pub mean_tree: Estimate,
    /// Two-sided z-score of the mean difference.
    pub mean_z: f64,
    /// Common exact mean `e^{n lambda(beta)}`.
    pub exact_mean: f64,
}

/// Compares unnormalized `Z^pol_n` and `Z^{m-tree}_n` in the usual order:
/// equal means force any st relation to be an equality in law, so a
/// detected CDF crossing shows that neither dominates.
pub fn st_failure_experiment(n: usize, m: usize, d: usize, beta: f64, replicas: usize, alpha: f64, seed: u64) -> Result<StFailureReport> {
    gaussian_checks(n, m, d, replicas)?;
    let policy = RngPolicy::new(seed);
    let law = DisorderLaw::StandardGaussian;
    let pol = lattice_batch(n, d, replicas, policy, "st-lattice", |f| lattice::point_to_line(f, beta))?;
    let tree = MTree::new(&law, n, m, d, beta, Normalization::Raw)?;
    let tre = tree.sample_batch(replicas, policy.derive_seed("st-tree", &[]), "st-tree");
    let x = SampleBatch::new("Z polymer", pol)?.with_lineage(seed, "st-lattice");
    let y = SampleBatch::new("Z tree", tre)?.with_lineage(seed, "st-tree");
    let grid = TestGrid::pooled_quantiles(GridKind::Cdf, &[&x, &y])?;
    let verdict = st_compare(&x, &y, &grid, alpha)?;
    let (a, b) = (x.estimate(), y.estimate());
    let mean_z = ratio_z(a.mean - b.mean, (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
    Ok(StFailureReport {
        n,
        m,
        d,
        beta,
        replicas,
        crossing_found: verdict.crossing.is_some(),
        verdict,
        mean_polymer: a,
        mean_tree: b,
        mean_z,
        exact_mean: (n as f64 * law.cumulant(beta)?).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn p(xs: &[i32]) -> PolymerPath {
        PolymerPath::from_1d(xs).unwrap()
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(lattice_overlap(&p(&[1, 2]), &p(&[1, 2])), 2);
        assert_eq!(lattice_overlap(&p(&[1, 2]), &p(&[-1, -2])), 0);
        assert_eq!(lattice_overlap(&p(&[1, 2, 1, 2]), &p(&[1, 2, 3, 2])), 3);
        let (a, b) = (p(&[1, 0, 1, 0]), p(&[1, 2, 1, 0]));
        assert_eq!(lattice_overlap(&a, &b), 3);
        assert_eq!(tree_overlap(&a, &b, 2), 1);
        assert_eq!(tree_overlap(&a, &a, 2), 4);
    }

    #[test]
    fn tree_equals_lattice_without_complete_block() {
        let paths = enumerate_paths(4, 1, DEFAULT_PATH_CAP).unwrap();
        assert_eq!(tree_covariance(&paths, 5).unwrap(), lattice_covariance(&paths).unwrap());
    }

    #[test]
    fn m_one_is_common_prefix_length() {
        let paths = enumerate_paths(5, 1, DEFAULT_PATH_CAP).unwrap();
        for a in &paths {
            for b in &paths {
                let prefix = a.steps().zip(b.steps()).take_while(|(x, y)| x == y).count() as i64;
                assert_eq!(tree_overlap(a, b, 1), prefix);
            }
        }
    }

    #[test]
    fn mismatched_lengths() {
        let err = lattice_covariance(&[p(&[1]), p(&[1, 2])]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch(..)));
    }

    #[test]
    fn slepian_examples() {
        for (n, m) in [(2, 2), (8, 2), (6, 6), (5, 1)] {
            let r = slepian_precondition(n, m, 1).unwrap();
            assert!(r.holds(), "{r:?}");
            assert_eq!(r.paths, 1 << n);
        }
        assert!(slepian_precondition(3, 2, 2).unwrap().holds());
        assert!(matches!(slepian_precondition(21, 2, 1), Err(Error::TooManyPaths { .. })));
    }

    #[test]
    fn covariances_are_psd() {
        let paths = enumerate_paths(6, 1, DEFAULT_PATH_CAP).unwrap();
        for m in [1, 2, 3, 6] {
            let c = CovariancePair::new(&paths, m).unwrap();
            for mat in [&c.lattice_cov, &c.tree_cov] {
                assert!(mat.is_symmetric());
                let dm = DMatrix::from_fn(mat.size, mat.size, |a, b| mat.get(a, b) as f64);
                let min = dm.symmetric_eigenvalues().min();
                assert!(min >= -1e-9, "m={m}: {min}");
            }
        }
    }

    #[test]
    fn tree_max_single_block_is_lattice_max() {
        let mut r1 = RngPolicy::new(1).stream("x", &[]);
        let mut r2 = RngPolicy::new(1).stream("x", &[]);
        let t = tree_max_energy(5, 5, 1, &mut r1);
        let f = DisorderField::sample_with(&DisorderLaw::StandardGaussian, 5, 1, &[0], 0, &mut r2).unwrap();
        assert_eq!(t, lattice::max_energy(&f));
    }

    #[test]
    fn tree_max_matches_brute_force_on_small_tree() {
        // n = 2, m = 1: two levels, each node has a fresh pair of Gaussians
        let mut r1 = RngPolicy::new(2).stream("x", &[]);
        let mut r2 = RngPolicy::new(2).stream("x", &[]);
        let t = tree_max_energy(2, 1, 1, &mut r1);
        let law = DisorderLaw::StandardGaussian;
        let root: Vec<f64> = (0..2).map(|_| law.sample(&mut r2)).collect();
        let mut best = f64::NEG_INFINITY;
        for &r in &root {
            let kids: Vec<f64> = (0..2).map(|_| law.sample(&mut r2)).collect();
            best = best.max(r + kids[0].max(kids[1]));
        }
        assert_eq!(t, best);
    }

    #[test]
    fn max_compare_trivial_and_small() {
        let same = max_compare(4, 4, 1, 2000, 0.0013499, 1).unwrap();
        assert!(!same.verdict.is_violated());
        let r = max_compare(6, 2, 1, 20_000, 0.0013499, 2).unwrap();
        assert!(!r.verdict.is_violated(), "{:?}", r.verdict.outcome);
        assert!(!r.means.violated);
    }

    #[test]
    fn elogz_beta_zero_and_equal_law() {
        let r = elogz_compare(6, 2, 1, 100, 0.0, 0.0013499, 3).unwrap();
        assert_eq!(r.comparison.lhs.mean, 0.0);
        assert_eq!(r.comparison.rhs.mean, 0.0);
        let r = elogz_compare(6, 6, 1, 20_000, 1.0, 0.0013499, 4).unwrap();
        assert!(r.comparison.z.abs() < 4.0);
        let r = elogz_compare(6, 2, 1, 20_000, 1.0, 0.0013499, 5).unwrap();
        assert!(!r.comparison.violated);
    }

    #[test]
    fn st_failure_beta_zero_degenerate() {
        let r = st_failure_experiment(4, 2, 1, 0.0, 100, 0.0013499, 6).unwrap();
        assert!(!r.crossing_found);
        assert_eq!(r.mean_polymer.mean, 1.0);
        assert!((r.mean_tree.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_csv() {
        let c = lattice_covariance(&[p(&[1, 2]), p(&[1, 0])]).unwrap();
        assert_eq!(c.to_csv(), "2,1\n1,2\n");
    }
}
