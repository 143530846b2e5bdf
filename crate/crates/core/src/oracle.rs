//! Exact expectations over finite-support environments at tiny sizes.
//!
//! A partition function is stored as its energy polynomial: the number of
//! paths with each count vector `c` (how many sites carry each support value),
//! so that `Z = (2d)^{-n} sum_c N_c exp(beta c.v)`. Equal polynomials are
//! merged exactly, which keeps the m-tree law small enough to build by
//! convolution level by level.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::DisorderLaw;
use crate::error::{Error, Result};
use crate::geometry::Cone;
use crate::math::CompensatedSum;

/// Default cap on enumerated terms.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 24;
const CHUNK: u128 = 1 << 12;
/// Bound on distinct intermediate atoms held in memory.
const MAX_ATOMS: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "param")]
pub enum Functional {
    Laplace(f64),
    Log,
    Power(f64),
    XLogX,
    Raw,
}

impl Functional {
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Functional::Laplace(l) => (-l * z).exp(),
            Functional::Log => z.ln(),
            Functional::Power(a) => z.powf(a),
            Functional::XLogX => z * z.ln(),
            Functional::Raw => z,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Functional::Laplace(l) => format!("laplace({l})"),
            Functional::Log => "log".into(),
            Functional::Power(a) => format!("power({a})"),
            Functional::XLogX => "xlogx".into(),
            Functional::Raw => "raw".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationSpec {
    pub law: DisorderLaw,
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub functional: Functional,
    pub cap: u128,
}

impl EnumerationSpec {
    pub fn new(law: DisorderLaw, n: usize, d: usize, beta: f64, functional: Functional) -> Self {
        EnumerationSpec { law, n, d, beta, functional, cap: DEFAULT_ENUMERATION_CAP }
    }
}

/// Count-vector bookkeeping: the first `r - 1` counts packed in radix
/// `n + 1`; the last count is implied by the polynomial's degree.
#[derive(Debug, Clone)]
struct Encoding {
    values: Vec<f64>,
    probs: Vec<f64>,
    radix: usize,
    len: usize,
    strides: Vec<usize>,
}

type Poly = Vec<u64>;

impl Encoding {
    fn new(law: &DisorderLaw, n: usize) -> Result<Self> {
        let (values, probs) = law
            .support()
            .ok_or_else(|| Error::InvalidLaw(format!("{} has no finite support", law.name())))?;
        let r = values.len();
        let radix = n + 1;
        let strides: Vec<usize> = (0..r).map(|i| if i + 1 < r { radix.pow(i as u32) } else { 0 }).collect();
        let len = radix.pow((r - 1) as u32);
        if len > 1 << 20 {
            return Err(Error::EnumerationTooLarge { count: len as u128, cap: 1 << 20 });
        }
        Ok(Encoding { values, probs, radix, len, strides })
    }

    fn support_size(&self) -> usize {
        self.values.len()
    }

    fn unit(&self) -> Poly {
        let mut p = vec![0; self.len];
        p[0] = 1;
        p
    }

    /// Multiplies by one site carrying value `v`.
    fn shift(&self, p: &[u64], v: usize, out: &mut Poly) {
        out.clear();
        out.resize(self.len, 0);
        let s = self.strides[v];
        for (i, &c) in p.iter().enumerate() {
            if c != 0 {
                out[i + s] += c;
            }
        }
    }

    fn mul(&self, a: &[u64], b: &[u64]) -> Poly {
        let mut out = vec![0; self.len];
        for (i, &ca) in a.iter().enumerate().filter(|(_, c)| **c != 0) {
            for (j, &cb) in b.iter().enumerate().filter(|(_, c)| **c != 0) {
                out[i + j] += ca * cb;
            }
        }
        out
    }

    /// `(2d)^{-degree} sum_c N_c exp(beta c.v)`.
    fn evaluate(&self, p: &[u64], degree: usize, d: usize, beta: f64) -> f64 {
        let r = self.support_size();
        // an integer power, so beta = 0 gives exactly 1
        let scale = ((2 * d) as f64).powi(degree as i32);
        let mut sum = CompensatedSum::new();
        for (idx, &c) in p.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let mut rest = idx;
            let mut used = 0;
            let mut energy = 0.0;
            for k in 0..r - 1 {
                let ck = rest % self.radix;
                rest /= self.radix;
                used += ck;
                energy += ck as f64 * self.values[k];
            }
            energy += (degree - used) as f64 * self.values[r - 1];
            sum.add(c as f64 * (beta * energy).exp());
        }
        sum.value() / scale
    }
}

/// Exact law of a partition function as atoms `(Z, probability)` sorted by `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactLaw {
    pub atoms: Vec<(f64, f64)>,
    /// Terms enumerated or convolved to build the law.
    pub work: u128,
}

impl ExactLaw {
    pub fn expectation(&self, f: &Functional) -> f64 {
        self.atoms.iter().map(|&(z, p)| p * f.apply(z)).collect::<CompensatedSum>().value()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).collect::<CompensatedSum>().value()
    }
}

type PolyLaw = BTreeMap<Poly, CompensatedSum>;

fn merge_into(into: &mut PolyLaw, key: Poly, p: f64) {
    into.entry(key).or_default().add(p);
}

fn finish(enc: &Encoding, law: PolyLaw, degree: usize, d: usize, beta: f64, work: u128) -> ExactLaw {
    let mut raw: Vec<(f64, f64)> = law.iter().map(|(k, p)| (enc.evaluate(k, degree, d, beta), p.value())).collect();
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge atoms whose values agree in floating point
    let mut atoms: Vec<(f64, CompensatedSum)> = Vec::new();
    for (z, p) in raw {
        match atoms.last_mut() {
            Some((last, acc)) if *last == z => acc.add(p),
            _ => {
                let mut acc = CompensatedSum::new();
                acc.add(p);
                atoms.push((z, acc));
            }
        }
    }
    ExactLaw { atoms: atoms.into_iter().map(|(z, p)| (z, p.value())).collect(), work }
}

/// Enumerates every assignment of the `steps`-step cone, lexicographically
/// over sites in cone order, and returns the merged law of the endpoint
/// polynomials `(P_y)_{y in L_steps}`.
fn enumerate_cone(enc: &Encoding, steps: usize, d: usize, cap: u128) -> Result<BTreeMap<Vec<Poly>, CompensatedSum>> {
    let cone = Cone::shared(steps, d);
    let sites = cone.site_count();
    let r = enc.support_size() as u128;
    let count = (0..sites).try_fold(1u128, |acc, _| acc.checked_mul(r).filter(|c| *c <= cap));
    let count = count.ok_or(Error::EnumerationTooLarge {
        count: (r as f64).powi(sites as i32) as u128,
        cap,
    })?;
    let chunks = count.div_ceil(CHUNK);
    let partial: Vec<BTreeMap<Vec<Poly>, CompensatedSum>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut local = BTreeMap::new();
            let mut digits = vec![0usize; sites];
            let mut slices: Vec<Vec<Poly>> = Vec::with_capacity(steps + 1);
            for a in c * CHUNK..((c + 1) * CHUNK).min(count) {
                // most significant digit is the first site
                let mut rest = a;
                for s in (0..sites).rev() {
                    digits[s] = (rest % r) as usize;
                    rest /= r;
                }
                // a plain product keeps dyadic probabilities exact
                let prob: f64 = digits.iter().map(|&v| enc.probs[v]).product();
                slices.clear();
                slices.push(vec![enc.unit()]);
                let mut site = 0;
                for i in 1..=steps {
                    let mut row = Vec::with_capacity(cone.slice_len(i));
                    for j in 0..cone.slice_len(i) {
                        let mut acc = vec![0u64; enc.len];
                        for &q in cone.preds(i, j) {
                            for (x, y) in acc.iter_mut().zip(&slices[i - 1][q as usize]) {
                                *x += y;
                            }
                        }
                        let mut out = Vec::new();
                        enc.shift(&acc, digits[site], &mut out);
                        site += 1;
                        row.push(out);
                    }
                    slices.push(row);
                }
                let last = slices.pop().expect("at least one slice");
                local.entry(last).or_insert_with(CompensatedSum::new).add(prob);
            }
            local
        })
        .collect();
    let mut merged = BTreeMap::new();
    for part in partial {
        for (k, p) in part {
            merged.entry(k).or_insert_with(CompensatedSum::new).add(p.value());
        }
    }
    Ok(merged)
}

fn sum_polys(enc: &Encoding, ps: &[Poly]) -> Poly {
    let mut out = vec![0; enc.len];
    for p in ps {
        for (x, y) in out.iter_mut().zip(p) {
            *x += y;
        }
    }
    out
}

/// Exact law of the point-to-line polymer partition function.
pub fn polymer_law(law: &DisorderLaw, n: usize, d: usize, beta: f64, cap: u128) -> Result<ExactLaw> {
    check_dims(n, d)?;
    law.check_beta(beta)?;
    let enc = Encoding::new(law, n)?;
    let ends = enumerate_cone(&enc, n, d, cap)?;
    let work = (enc.support_size() as u128).pow(Cone::shared(n, d).site_count() as u32);
    let mut out = PolyLaw::new();
    for (ps, p) in ends {
        merge_into(&mut out, sum_polys(&enc, &ps), p.value());
    }
    Ok(finish(&enc, out, n, d, beta, work))
}

/// Exact law of the m-tree partition function: `n / m` full blocks above a
/// tail block of length `n mod m`, with an independent block environment for
/// every prefix. Built bottom-up by convolving iid subtree laws.
pub fn mtree_law(law: &DisorderLaw, n: usize, m: usize, d: usize, beta: f64, cap: u128) -> Result<ExactLaw> {
    check_dims(n, d)?;
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    law.check_beta(beta)?;
    let enc = Encoding::new(law, n)?;
    let mut work: u128 = 0;
    let charge = |work: &mut u128, amount: u128| -> Result<()> {
        *work += amount;
        if *work > cap {
            Err(Error::EnumerationTooLarge { count: *work, cap })
        } else {
            Ok(())
        }
    };
    let tail = n % m;
    let mut level: PolyLaw = PolyLaw::new();
    if tail == 0 {
        merge_into(&mut level, enc.unit(), 1.0);
    } else {
        let ends = enumerate_cone(&enc, tail, d, cap)?;
        charge(&mut work, (enc.support_size() as u128).pow(Cone::shared(tail, d).site_count() as u32))?;
        for (ps, p) in ends {
            merge_into(&mut level, sum_polys(&enc, &ps), p.value());
        }
    }
    if n < m {
        // no full block: the tail alone is the polymer
        return Ok(finish(&enc, level, n, d, beta, work));
    }
    let families = enumerate_cone(&enc, m, d, cap)?;
    charge(&mut work, (enc.support_size() as u128).pow(Cone::shared(m, d).site_count() as u32))?;
    for _ in 0..n / m {
        let below: Vec<(Poly, f64)> = level.iter().map(|(k, p)| (k.clone(), p.value())).collect();
        let mut next = PolyLaw::new();
        for (family, pf) in &families {
            let pf = pf.value();
            let mut acc: Vec<(Poly, f64)> = vec![(vec![0; enc.len], 1.0)];
            for h in family {
                charge(&mut work, (acc.len() * below.len()) as u128)?;
                let lifted: Vec<Poly> = below.iter().map(|(k, _)| enc.mul(h, k)).collect();
                let mut step = PolyLaw::new();
                for (a, pa) in &acc {
                    for ((_, pb), hb) in below.iter().zip(&lifted) {
                        let key: Poly = a.iter().zip(hb).map(|(x, y)| x + y).collect();
                        merge_into(&mut step, key, pa * pb);
                    }
                }
                if step.len() > MAX_ATOMS {
                    return Err(Error::EnumerationTooLarge { count: step.len() as u128, cap: MAX_ATOMS as u128 });
                }
                acc = step.into_iter().map(|(k, p)| (k, p.value())).collect();
            }
            for (k, p) in acc {
                merge_into(&mut next, k, pf * p);
            }
        }
        level = next;
    }
    Ok(finish(&enc, level, n, d, beta, work))
}

fn check_dims(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("need n >= 1 and d >= 1".into()));
    }
    Ok(())
}

/// `E functional(Z_n)` for the lattice polymer.
pub fn exact_expectation(spec: &EnumerationSpec) -> Result<f64> {
    Ok(polymer_law(&spec.law, spec.n, spec.d, spec.beta, spec.cap)?.expectation(&spec.functional))
}

/// `E functional(Z_n^{m-tree})`.
pub fn exact_expectation_mtree(spec: &EnumerationSpec, m: usize) -> Result<f64> {
    Ok(mtree_law(&spec.law, spec.n, m, spec.d, spec.beta, spec.cap)?.expectation(&spec.functional))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub lambda: f64,
    pub polymer: f64,
    pub tree: f64,
    /// `E e^{-lambda Z_pol} - E e^{-lambda Z_tree}`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtCertificate {
    pub law: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub beta: f64,
    pub rows: Vec<MarginRow>,
    /// Every margin is nonnegative.
    pub holds: bool,
}

impl LtCertificate {
    pub fn min_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }

    /// Every margin at `lambda >= lambda_min` exceeds `threshold`.
    pub fn strict_above(&self, lambda_min: f64, threshold: f64) -> bool {
        self.rows.iter().filter(|r| r.lambda >= lambda_min).all(|r| r.margin > threshold)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,polymer,tree,margin\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e},{:e}\n", r.lambda, r.polymer, r.tree, r.margin));
        }
        s
    }
}

/// Exact Laplace margins between the polymer and its m-tree on `lambdas`.
pub fn exact_lt_certificate(law: &DisorderLaw, n: usize, m: usize, d: usize, beta: f64, lambdas: &[f64]) -> Result<LtCertificate> {
    let pol = polymer_law(law, n, d, beta, DEFAULT_ENUMERATION_CAP)?;
    let tree = mtree_law(law, n, m, d, beta, DEFAULT_ENUMERATION_CAP)?;
    let rows: Vec<MarginRow> = lambdas
        .iter()
        .map(|&lambda| {
            let f = Functional::Laplace(lambda);
            let (a, b) = (pol.expectation(&f), tree.expectation(&f));
            MarginRow { lambda, polymer: a, tree: b, margin: a - b }
        })
        .collect();
    let holds = rows.iter().all(|r| r.margin >= 0.0);
    Ok(LtCertificate { law: law.name().into(), n, m, d, beta, rows, holds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Polymer value at most the tree value.
    PolymerBelow,
    PolymerAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryRow {
    pub functional: Functional,
    pub direction: Direction,
    pub polymer: f64,
    pub tree: f64,
    pub holds: bool,
}

/// Concave functionals ordered polymer below tree, `x log x` above.
pub fn corollary_checks(law: &DisorderLaw, n: usize, m: usize, d: usize, beta: f64) -> Result<Vec<CorollaryRow>> {
    let pol = polymer_law(law, n, d, beta, DEFAULT_ENUMERATION_CAP)?;
    let tree = mtree_law(law, n, m, d, beta, DEFAULT_ENUMERATION_CAP)?;
    let checks = [
        (Functional::Log, Direction::PolymerBelow),
        (Functional::Power(0.25), Direction::PolymerBelow),
        (Functional::Power(0.5), Direction::PolymerBelow),
        (Functional::Power(0.75), Direction::PolymerBelow),
        (Functional::XLogX, Direction::PolymerAbove),
    ];
    Ok(checks
        .into_iter()
        .map(|(functional, direction)| {
            let (a, b) = (pol.expectation(&functional), tree.expectation(&functional));
            let holds = match direction {
                Direction::PolymerBelow => a <= b,
                Direction::PolymerAbove => a >= b,
            };
            CorollaryRow { functional, direction, polymer: a, tree: b, holds }
        })
        .collect())
}
