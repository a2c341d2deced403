//! Monte Carlo engine for generalized chi-square laws of the form
//!
//! ```text
//! Q = Σ q_A[i]² + Σ q_B[j]² − 2 q_Aᵀ Ξ q_B,   q_A[i] ~ N(0, a_i), q_B[j] ~ N(0, b_j)
//! ```
//!
//! i.e. `qᵀ [[I, −Ξ], [−Ξᵀ, I]] q` with `q ~ N(0, diag(a, b))`. The form is
//! positive semidefinite whenever `‖Ξ‖₂ <= 1`. An empty `b` gives the plain
//! weighted chi-square `Σ a_i Z_i²`.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Draws per independent RNG stream; fixes the partition of the draw range.
const CHUNK: usize = 4096;
/// Minimum number of draws accepted by [`sample_quadform`].
pub const MIN_DRAWS: usize = 1000;
pub const DEFAULT_DRAWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadFormSpec {
    pub weights_a: Vec<f64>,
    pub weights_b: Vec<f64>,
    /// Row-major `len(a) × len(b)` coupling matrix.
    pub coupling: Vec<Vec<f64>>,
}

impl QuadFormSpec {
    pub fn new(weights_a: Vec<f64>, weights_b: Vec<f64>, coupling: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            weights_a,
            weights_b,
            coupling,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `Σ w_i Z_i²` encoded with no second block.
    pub fn weighted_chi_square(weights: Vec<f64>) -> Result<Self> {
        let rows = weights.len();
        Self::new(weights, Vec::new(), vec![Vec::new(); rows])
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights_a.is_empty() {
            return Err(Error::InvalidSpec("no weights".into()));
        }
        if let Some(w) = self
            .weights_a
            .iter()
            .chain(&self.weights_b)
            .find(|w| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidSpec(format!("weight {w} is not positive")));
        }
        let (m, n) = (self.weights_a.len(), self.weights_b.len());
        if self.coupling.len() != m || self.coupling.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpec(format!("coupling must be {m} x {n}")));
        }
        if self.coupling.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite coupling entry".into()));
        }
        let norm = self.coupling_norm();
        if norm > 1.0 + 1e-8 {
            return Err(Error::InvalidSpec(format!(
                "coupling operator norm {norm} exceeds 1"
            )));
        }
        Ok(())
    }

    /// Largest singular value of the coupling matrix.
    pub fn coupling_norm(&self) -> f64 {
        let (m, n) = (self.weights_a.len(), self.weights_b.len());
        if m == 0 || n == 0 {
            return 0.0;
        }
        let xi = Mat::from_fn(m, n, |i, j| self.coupling[i][j]);
        xi.singular_values()
            .ok()
            .and_then(|s| s.into_iter().reduce(f64::max))
            .unwrap_or(f64::INFINITY)
    }

    /// `E Q = Σ a + Σ b` (the cross term has mean zero).
    pub fn mean(&self) -> f64 {
        self.weights_a.iter().chain(&self.weights_b).sum()
    }

    fn fill<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let sa: Vec<f64> = self.weights_a.iter().map(|w| w.sqrt()).collect();
        let sb: Vec<f64> = self.weights_b.iter().map(|w| w.sqrt()).collect();
        let mut qa = vec![0.0; sa.len()];
        let mut qb = vec![0.0; sb.len()];
        for slot in out.iter_mut() {
            for (q, s) in qa.iter_mut().zip(&sa) {
                *q = s * rng.sample::<f64, _>(StandardNormal);
            }
            for (q, s) in qb.iter_mut().zip(&sb) {
                *q = s * rng.sample::<f64, _>(StandardNormal);
            }
            let mut value: f64 = qa.iter().chain(&qb).map(|x| x * x).sum();
            if !qb.is_empty() {
                let cross: f64 = qa
                    .iter()
                    .zip(&self.coupling)
                    .map(|(a, row)| a * row.iter().zip(&qb).map(|(x, b)| x * b).sum::<f64>())
                    .sum();
                value -= 2.0 * cross;
            }
            *slot = value;
        }
    }

    /// Raw draws without the minimum-size check; chunked into fixed RNG
    /// streams so the output does not depend on the worker count.
    pub(crate) fn draw(&self, draws: usize, seed: u64) -> Vec<f64> {
        let mut values = vec![0.0; draws];
        values
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(chunk, out)| {
                let mut rng = stream_rng(seed, chunk as u64);
                self.fill(&mut rng, out);
            });
        let scale = self.mean();
        for v in values.iter_mut() {
            if *v < 0.0 && *v >= -1e-10 * scale {
                *v = 0.0;
            }
        }
        values
    }
}

/// Monte Carlo sample of a [`QuadFormSpec`] with a sorted copy for quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormSample {
    values: Vec<f64>,
    sorted: Vec<f64>,
    spec: QuadFormSpec,
    seed: u64,
}

impl QuadFormSample {
    fn from_values(values: Vec<f64>, spec: QuadFormSpec, seed: u64) -> Self {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            values,
            sorted,
            spec,
            seed,
        }
    }

    /// Draws in generation order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn spec(&self) -> &QuadFormSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        quantile(self, p)
    }

    pub fn pvalue(&self, observed: f64) -> f64 {
        pvalue(self, observed)
    }
}

pub fn sample_quadform(spec: &QuadFormSpec, draws: usize, seed: u64) -> Result<QuadFormSample> {
    spec.validate()?;
    if draws < MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "{draws} draws requested, at least {MIN_DRAWS} required"
        )));
    }
    Ok(QuadFormSample::from_values(spec.draw(draws, seed), spec.clone(), seed))
}

/// Type-7 quantile: linear interpolation between order statistics at
/// position `(B − 1) p`.
pub fn quantile(sample: &QuadFormSample, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidLevel(p));
    }
    type7_quantile(&sample.sorted, p)
        .ok_or_else(|| Error::InvalidInput("empty sample".into()))
}

pub(crate) fn type7_quantile(sorted: &[f64], p: f64) -> Option<f64> {
    let b = sorted.len();
    if b == 0 {
        return None;
    }
    let h = (b - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(b - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Right-tail Monte Carlo p-value `(#{draws >= observed} + 1) / (B + 1)`.
pub fn pvalue(sample: &QuadFormSample, observed: f64) -> f64 {
    let b = sample.sorted.len();
    let below = sample.sorted.partition_point(|&x| x < observed);
    ((b - below) as f64 + 1.0) / (b as f64 + 1.0)
}

/// Encodes `Σ c_j Z_j²` as the coupled form with `Ξ = I` and the weights
/// split evenly, using `(q_A[j] − q_B[j])² ~ (a_j + b_j) χ²₁` when `a_j = b_j`.
///
/// [`QuadFormSpec::weighted_chi_square`] samples the same law directly.
pub fn corollary_diagonal_law(weights: &[f64]) -> Result<QuadFormSpec> {
    if weights.is_empty() {
        return Err(Error::InvalidSpec("no weights".into()));
    }
    let half: Vec<f64> = weights.iter().map(|w| w / 2.0).collect();
    let m = weights.len();
    let identity = (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    QuadFormSpec::new(half.clone(), half, identity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: &[f64], b: &[f64], xi: &[&[f64]]) -> QuadFormSpec {
        QuadFormSpec::new(
            a.to_vec(),
            b.to_vec(),
            xi.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    fn sample_of(values: Vec<f64>) -> QuadFormSample {
        QuadFormSample::from_values(values, QuadFormSpec::weighted_chi_square(vec![1.0]).unwrap(), 0)
    }

    #[test]
    fn chi_square_two_quantile() {
        let s = sample_quadform(&spec(&[1.0], &[1.0], &[&[0.0]]), 100_000, 11).unwrap();
        let q = s.quantile(0.95).unwrap();
        assert!((q - 5.991).abs() < 0.15, "{q}");
    }

    #[test]
    fn perfectly_coupled_pair_is_two_chi_square_one() {
        let s = sample_quadform(&spec(&[1.0], &[1.0], &[&[1.0]]), 100_000, 12).unwrap();
        let q = s.quantile(0.95).unwrap();
        assert!((q - 7.683).abs() < 0.2, "{q}");
        assert!(s.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn one_sided_quantile_scales_linearly() {
        let base = sample_quadform(&QuadFormSpec::weighted_chi_square(vec![1.0]).unwrap(), 20_000, 5).unwrap();
        let scaled = sample_quadform(&QuadFormSpec::weighted_chi_square(vec![4.0]).unwrap(), 20_000, 5).unwrap();
        let (q1, q4) = (base.quantile(0.9).unwrap(), scaled.quantile(0.9).unwrap());
        assert_eq!(q4, 4.0 * q1);
    }

    #[test]
    fn quantile_definition() {
        let s = sample_of((1..=100).map(f64::from).collect());
        assert_eq!(s.quantile(0.5).unwrap(), 50.5);
        let c = sample_of(vec![2.5; 10]);
        assert_eq!(c.quantile(0.01).unwrap(), 2.5);
        assert_eq!(c.quantile(0.99).unwrap(), 2.5);
        assert!(matches!(s.quantile(1.0), Err(Error::InvalidLevel(_))));
        assert!(matches!(s.quantile(0.0), Err(Error::InvalidLevel(_))));
    }

    #[test]
    fn pvalue_edges() {
        let s = sample_of((1..=100).map(f64::from).collect());
        assert_eq!(s.pvalue(-1.0), 1.0);
        assert_eq!(s.pvalue(1000.0), 1.0 / 101.0);
        assert_eq!(s.pvalue(100.0), 2.0 / 101.0);
    }

    #[test]
    fn pvalue_at_empirical_quantile() {
        let s = sample_quadform(&spec(&[1.0, 0.5], &[1.0, 0.3], &[&[0.2, 0.1], &[0.0, 0.4]]), 50_000, 3)
            .unwrap();
        let q = s.quantile(0.95).unwrap();
        let p = s.pvalue(q);
        assert!((p - 0.05).abs() < 2.0 / (50_000f64).sqrt(), "{p}");
    }

    #[test]
    fn corollary_examples() {
        let single = corollary_diagonal_law(&[3.0]).unwrap();
        let s = sample_quadform(&single, 100_000, 1).unwrap();
        let q = s.quantile(0.95).unwrap();
        assert!((q - 3.0 * 3.8415).abs() < 0.3, "{q}");

        let pair = corollary_diagonal_law(&[2.0, 2.0]).unwrap();
        let s = sample_quadform(&pair, 100_000, 2).unwrap();
        let q = s.quantile(0.95).unwrap();
        assert!((q - 11.98).abs() < 0.3, "{q}");

        assert!(matches!(corollary_diagonal_law(&[]), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            QuadFormSpec::new(vec![1.0, 0.0], vec![1.0, 1.0], vec![vec![0.0; 2]; 2]),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            QuadFormSpec::new(vec![1.0], vec![1.0], vec![vec![1.5]]),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            QuadFormSpec::new(vec![1.0], vec![1.0, 1.0], vec![vec![0.0]]),
            Err(Error::InvalidSpec(_))
        ));
        let ok = spec(&[1.0], &[1.0], &[&[0.0]]);
        assert!(sample_quadform(&ok, 999, 0).is_err());
    }

    #[test]
    fn seed_determinism() {
        let sp = spec(&[1.0, 2.0], &[0.5, 0.7], &[&[0.3, -0.2], &[0.1, 0.6]]);
        let a = sample_quadform(&sp, 10_000, 42).unwrap();
        let b = sample_quadform(&sp, 10_000, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c = sample_quadform(&sp, 10_000, 43).unwrap();
        assert_ne!(a.values(), c.values());
    }
}
