//! Disorder laws, their cumulant generating functions, and reproducible
//! environment fields on the reachable cone.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cone;
use crate::math::log_sum_exp;
use crate::rng::{RngPolicy, StreamRng};

/// Law of a single environment variable `omega(i, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawRepr", into = "LawRepr")]
pub enum DisorderLaw {
    StandardGaussian,
    SymmetricBernoulli,
    FiniteSupport { values: Vec<f64>, probs: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct LawRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    probs: Vec<f64>,
}

impl TryFrom<LawRepr> for DisorderLaw {
    type Error = Error;

    fn try_from(r: LawRepr) -> Result<Self> {
        match r.kind.as_str() {
            "standard-gaussian" | "gaussian" => Ok(DisorderLaw::StandardGaussian),
            "symmetric-bernoulli" | "bernoulli" => Ok(DisorderLaw::SymmetricBernoulli),
            "finite-support" => DisorderLaw::finite(r.values, r.probs),
            other => Err(Error::InvalidLaw(format!("unknown kind {other:?}"))),
        }
    }
}

impl From<DisorderLaw> for LawRepr {
    fn from(l: DisorderLaw) -> Self {
        match l {
            DisorderLaw::StandardGaussian => LawRepr { kind: "standard-gaussian".into(), values: vec![], probs: vec![] },
            DisorderLaw::SymmetricBernoulli => LawRepr { kind: "symmetric-bernoulli".into(), values: vec![], probs: vec![] },
            DisorderLaw::FiniteSupport { values, probs } => LawRepr { kind: "finite-support".into(), values, probs },
        }
    }
}

impl DisorderLaw {
    /// Validated finite-support law.
    pub fn finite(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::InvalidLaw("values and probs must be non-empty and of equal length".into()));
        }
        if values.iter().chain(&probs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidLaw("non-finite entry".into()));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidLaw("negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}")));
        }
        Ok(DisorderLaw::FiniteSupport { values, probs })
    }

    /// Parse the short CLI names `gaussian` and `bernoulli`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" | "standard-gaussian" => Ok(DisorderLaw::StandardGaussian),
            "bernoulli" | "symmetric-bernoulli" => Ok(DisorderLaw::SymmetricBernoulli),
            other => Err(Error::InvalidLaw(format!("unknown law {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DisorderLaw::StandardGaussian => "standard-gaussian",
            DisorderLaw::SymmetricBernoulli => "symmetric-bernoulli",
            DisorderLaw::FiniteSupport { .. } => "finite-support",
        }
    }

    /// Largest `|beta|` with a finite exponential moment. Every built-in law
    /// has all exponential moments.
    pub fn beta_max(&self) -> f64 {
        f64::INFINITY
    }

    pub fn check_beta(&self, beta: f64) -> Result<()> {
        if !beta.is_finite() || beta.abs() > self.beta_max() {
            return Err(Error::BetaOutOfRange { beta, beta_max: self.beta_max() });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            DisorderLaw::StandardGaussian | DisorderLaw::SymmetricBernoulli => 0.0,
            DisorderLaw::FiniteSupport { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    /// Atoms `(values, probs)` for laws with finite support.
    pub fn support(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            DisorderLaw::StandardGaussian => None,
            DisorderLaw::SymmetricBernoulli => Some((vec![-1.0, 1.0], vec![0.5, 0.5])),
            DisorderLaw::FiniteSupport { values, probs } => Some((values.clone(), probs.clone())),
        }
    }

    /// `log E[exp(beta * omega)]`.
    pub fn cumulant(&self, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        Ok(match self {
            DisorderLaw::StandardGaussian => 0.5 * beta * beta,
            DisorderLaw::SymmetricBernoulli => {
                let a = beta.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            DisorderLaw::FiniteSupport { values, probs } => {
                let terms: Vec<f64> = values
                    .iter()
                    .zip(probs)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(&v, &p)| beta * v + p.ln())
                    .collect();
                log_sum_exp(&terms)
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DisorderLaw::StandardGaussian => rng.sample(StandardNormal),
            DisorderLaw::SymmetricBernoulli => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            DisorderLaw::FiniteSupport { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated non-empty")
            }
        }
    }
}

/// Draws site factors `scale * exp(beta * omega)` directly, avoiding an
/// `exp` call for finite-support laws.
#[derive(Debug, Clone)]
pub enum WeightSampler {
    Gaussian { beta: f64, log_scale: f64 },
    Bernoulli { minus: f64, plus: f64, log_minus: f64, log_plus: f64 },
    Table { weights: Vec<f64>, log_weights: Vec<f64>, cdf: Vec<f64> },
}

impl WeightSampler {
    pub fn new(law: &DisorderLaw, beta: f64, log_scale: f64) -> Result<Self> {
        law.check_beta(beta)?;
        Ok(match law {
            DisorderLaw::StandardGaussian => WeightSampler::Gaussian { beta, log_scale },
            DisorderLaw::SymmetricBernoulli => WeightSampler::Bernoulli {
                minus: (log_scale - beta).exp(),
                plus: (log_scale + beta).exp(),
                log_minus: log_scale - beta,
                log_plus: log_scale + beta,
            },
            DisorderLaw::FiniteSupport { values, probs } => {
                let log_weights: Vec<f64> = values.iter().map(|v| log_scale + beta * v).collect();
                let weights = log_weights.iter().map(|l| l.exp()).collect();
                let mut acc = 0.0;
                let cdf = probs
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                WeightSampler::Table { weights, log_weights, cdf }
            }
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WeightSampler::Gaussian { beta, log_scale } => {
                let z: f64 = rng.sample(StandardNormal);
                (beta * z + log_scale).exp()
            }
            WeightSampler::Bernoulli { minus, plus, .. } => {
                if rng.random::<bool>() {
                    *plus
                } else {
                    *minus
                }
            }
            WeightSampler::Table { weights, cdf, .. } => {
                let u: f64 = rng.random();
                let k = cdf.iter().position(|&c| u < c).unwrap_or(weights.len() - 1);
                weights[k]
            }
        }
    }

    /// `(log w, w)` for one site; consumes the stream exactly like [`DisorderLaw::sample`].
    #[inline]
    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            WeightSampler::Gaussian { beta, log_scale } => {
                let z: f64 = rng.sample(StandardNormal);
                let lw = beta * z + log_scale;
                (lw, lw.exp())
            }
            WeightSampler::Bernoulli { minus, plus, log_minus, log_plus } => {
                if rng.random::<bool>() {
                    (*log_plus, *plus)
                } else {
                    (*log_minus, *minus)
                }
            }
            WeightSampler::Table { weights, log_weights, cdf } => {
                let u: f64 = rng.random();
                let k = cdf.iter().position(|&c| u < c).unwrap_or(weights.len() - 1);
                (log_weights[k], weights[k])
            }
        }
    }
}

/// A realized environment on the cone of sites reachable from `origin`
/// within `n` steps. Values are stored densely slice by slice.
#[derive(Debug, Clone)]
pub struct DisorderField {
    law: DisorderLaw,
    seed: u64,
    origin: Vec<i32>,
    cone: Arc<Cone>,
    values: Vec<f64>,
}

impl DisorderField {
    /// I.i.d. draws on the reachable cone; a pure function of `(law, n, d, seed)`.
    pub fn sample(law: &DisorderLaw, n: usize, d: usize, origin: &[i32], seed: u64) -> Result<Self> {
        let mut rng = RngPolicy::new(seed).stream("field", &[]);
        Self::sample_with(law, n, d, origin, seed, &mut rng)
    }

    /// Draws from a caller-supplied stream; `seed` is recorded as lineage only.
    pub fn sample_with(
        law: &DisorderLaw,
        n: usize,
        d: usize,
        origin: &[i32],
        seed: u64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        Self::validate_shape(n, d, origin)?;
        let cone = Cone::shared(n, d);
        let mut values = vec![0.0; cone.total_points()];
        for v in values.iter_mut().skip(1) {
            *v = law.sample(rng);
        }
        Ok(DisorderField { law: law.clone(), seed, origin: origin.to_vec(), cone, values })
    }

    /// Field with values given by `f(time, absolute point)`; used for
    /// hand-built environments.
    pub fn from_fn(
        law: &DisorderLaw,
        n: usize,
        d: usize,
        origin: &[i32],
        mut f: impl FnMut(usize, &[i32]) -> f64,
    ) -> Result<Self> {
        Self::validate_shape(n, d, origin)?;
        let cone = Cone::shared(n, d);
        let mut values = vec![0.0; cone.total_points()];
        let mut abs = vec![0i32; d];
        for i in 1..=n {
            let off = cone.slice_offset(i);
            for j in 0..cone.slice_len(i) {
                for (a, (p, o)) in abs.iter_mut().zip(cone.point(i, j).iter().zip(origin)) {
                    *a = p + o;
                }
                values[off + j] = f(i, &abs);
            }
        }
        Ok(DisorderField { law: law.clone(), seed: 0, origin: origin.to_vec(), cone, values })
    }

    fn validate_shape(n: usize, d: usize, origin: &[i32]) -> Result<()> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter("field needs n >= 1 and d >= 1".into()));
        }
        if origin.len() != d {
            return Err(Error::InvalidParameter(format!("origin has {} coordinates, d = {d}", origin.len())));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.cone.n()
    }

    pub fn d(&self) -> usize {
        self.cone.d()
    }

    pub fn origin(&self) -> &[i32] {
        &self.origin
    }

    pub fn law(&self) -> &DisorderLaw {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cone(&self) -> &Arc<Cone> {
        &self.cone
    }

    /// Number of sites carrying disorder.
    pub fn site_count(&self) -> usize {
        self.cone.site_count()
    }

    /// Values of time slice `i` in cone order.
    pub fn slice(&self, i: usize) -> &[f64] {
        let off = self.cone.slice_offset(i);
        &self.values[off..off + self.cone.slice_len(i)]
    }

    /// Values indexed by global cone index (slice 0 holds a placeholder).
    pub(crate) fn raw_values(&self) -> &[f64] {
        &self.values
    }

    /// `omega(i, x)` at an absolute lattice point, `None` outside the cone.
    pub fn value(&self, i: usize, x: &[i32]) -> Option<f64> {
        if i == 0 || i > self.n() || x.len() != self.d() {
            return None;
        }
        let rel: Vec<i32> = x.iter().zip(&self.origin).map(|(a, o)| a - o).collect();
        self.cone.index(i, &rel).map(|j| self.slice(i)[j])
    }

    /// All `(time, absolute point, value)` triples in storage order.
    pub fn sites(&self) -> impl Iterator<Item = (usize, Vec<i32>, f64)> + '_ {
        (1..=self.n()).flat_map(move |i| {
            (0..self.cone.slice_len(i)).map(move |j| {
                let p: Vec<i32> = self.cone.point(i, j).iter().zip(&self.origin).map(|(a, o)| a + o).collect();
                (i, p, self.slice(i)[j])
            })
        })
    }
}
