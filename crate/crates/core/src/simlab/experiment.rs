use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{build_population, draw_panel, DesignName, Innovation, Population, SimDesign};
use crate::error::{Error, Result};
use crate::gchi2::{sample_quadform, QuadFormSpec};
use crate::one_sample::{eigenvector_concentration_stat, omega_hat};
use crate::seed::derive_seed;
use crate::spectral::{summarize_panel, FactorCount};
use crate::stats::{ks_one_sample, ks_two_sample, mean_sd, normal_cdf, two_sided_critical};
use crate::two_sample::{
    eigenvector_null_spec, eigenvector_statistic, test_eigenvalue, test_ratio, FactorChoice,
    Sample, TestKind, TwoSampleInput,
};

/// The four pairings used for the size and power tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `Σ₁` vs `Σ₃`: same spectrum, different frames.
    SizeLambda,
    /// `Σ₁` vs `Σ₂`: same frame, different spectra.
    SizeVector,
    /// `Σ₁` vs `Σ₂` for the eigenvalue and ratio tests.
    PowerLambda,
    /// `Σ₄` vs `Σ₅(θ)`.
    PowerVector,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::SizeLambda,
        Preset::SizeVector,
        Preset::PowerLambda,
        Preset::PowerVector,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::SizeLambda => "size-lambda",
            Preset::SizeVector => "size-vector",
            Preset::PowerLambda => "power-lambda",
            Preset::PowerVector => "power-vector",
        }
    }

    pub fn tests(&self) -> Vec<TestKind> {
        match self {
            Preset::SizeLambda | Preset::PowerLambda => vec![TestKind::Eigenvalue, TestKind::Ratio],
            Preset::SizeVector | Preset::PowerVector => vec![TestKind::Eigenvector],
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown design '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub design1: SimDesign,
    pub design2: SimDesign,
    pub n: usize,
    pub t1: usize,
    pub t2: usize,
    pub replications: usize,
    pub level: f64,
    pub r_values: Vec<usize>,
    pub tests: Vec<TestKind>,
    pub k_values: Vec<usize>,
    pub mc_draws: usize,
    pub master_seed: u64,
}

impl ExperimentSpec {
    /// Table defaults: `T₁ = N`, `T₂ = 3N/2`, t(8) innovations, level 5%,
    /// `r̂ ∈ {2, 3, 4}`, `k ∈ {1, 2, 3}`, 20 000 Monte Carlo draws.
    /// `theta` is used only by [`Preset::PowerVector`].
    pub fn preset(preset: Preset, n: usize, theta: f64, replications: usize, master_seed: u64) -> Self {
        let design_seed = derive_seed(master_seed, &[0xDE51]);
        let mk = |name| SimDesign::new(name, n, Innovation::StudentT8, design_seed);
        let (design1, design2) = match preset {
            Preset::SizeLambda => (mk(DesignName::Sigma1), mk(DesignName::Sigma3)),
            Preset::SizeVector | Preset::PowerLambda => (mk(DesignName::Sigma1), mk(DesignName::Sigma2)),
            Preset::PowerVector => (mk(DesignName::Sigma4), mk(DesignName::Sigma5).with_theta(theta)),
        };
        Self {
            design1,
            design2,
            n,
            t1: n,
            t2: 3 * n / 2,
            replications,
            level: 0.05,
            r_values: vec![2, 3, 4],
            tests: preset.tests(),
            k_values: vec![1, 2, 3],
            mc_draws: 20_000,
            master_seed,
        }
    }

    /// Largest number of components any cell needs.
    pub fn r_max(&self) -> usize {
        self.r_values
            .iter()
            .chain(&self.k_values)
            .copied()
            .max()
            .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.level) {
            return Err(Error::InvalidLevel(self.level));
        }
        if self.design1.n != self.n || self.design2.n != self.n {
            return bad(format!(
                "design dimensions ({}, {}) differ from N = {}",
                self.design1.n, self.design2.n, self.n
            ));
        }
        self.design1.validate()?;
        self.design2.validate()?;
        if self.tests.is_empty() || self.k_values.is_empty() {
            return bad("no tests or component indices requested".into());
        }
        if self.r_values.is_empty() && self.tests.iter().any(|t| *t != TestKind::Eigenvalue) {
            return bad("ratio and eigenvector tests need at least one r value".into());
        }
        if self.r_values.iter().chain(&self.k_values).any(|&v| v == 0) {
            return bad("r and k values must be positive".into());
        }
        let limit = self.n.min(self.t1).min(self.t2);
        if self.r_max() >= limit {
            return bad(format!(
                "r and k values must stay below min(N, T1, T2) = {limit}"
            ));
        }
        if self.tests.contains(&TestKind::Eigenvector) && self.mc_draws < crate::gchi2::MIN_DRAWS {
            return bad(format!(
                "mc_draws must be at least {}",
                crate::gchi2::MIN_DRAWS
            ));
        }
        Ok(())
    }

    /// `(test, k, r̂)` for every table cell; eigenvalue cells do not depend
    /// on `r̂` and carry `None`.
    pub fn cells(&self) -> Vec<(TestKind, usize, Option<usize>)> {
        let mut cells = Vec::new();
        for &test in &self.tests {
            for &k in &self.k_values {
                if test == TestKind::Eigenvalue {
                    cells.push((test, k, None));
                } else {
                    cells.extend(self.r_values.iter().map(|&r| (test, k, Some(r))));
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub test: TestKind,
    pub k: usize,
    pub r_hat: Option<usize>,
    /// `None` marks a cell that is not applicable (`k > r̂`) or where every
    /// replication failed.
    pub rate: Option<f64>,
    pub rejections: usize,
    pub valid: usize,
    pub failures: usize,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerTable {
    pub spec: ExperimentSpec,
    pub cells: Vec<RateCell>,
}

impl SizePowerTable {
    pub fn cell(&self, test: TestKind, k: usize, r_hat: Option<usize>) -> Option<&RateCell> {
        self.cells
            .iter()
            .find(|c| c.test == test && c.k == k && c.r_hat == r_hat)
    }

    pub fn rate(&self, test: TestKind, k: usize, r_hat: Option<usize>) -> Option<f64> {
        self.cell(test, k, r_hat).and_then(|c| c.rate)
    }
}

#[derive(Debug, Clone)]
enum Outcome {
    NotApplicable,
    Decided(bool),
    Failed(String),
}

fn populations(spec: &ExperimentSpec) -> Result<(Population, Population)> {
    Ok((build_population(&spec.design1)?, build_population(&spec.design2)?))
}

fn replication_seed(spec: &ExperimentSpec, rep: usize) -> u64 {
    derive_seed(spec.master_seed, &[rep as u64])
}

fn simulate_pair(
    spec: &ExperimentSpec,
    pops: &(Population, Population),
    rep_seed: u64,
) -> Result<TwoSampleInput> {
    let p1 = draw_panel(&pops.0, spec.t1, spec.design1.innovation, derive_seed(rep_seed, &[1]))?;
    let p2 = draw_panel(&pops.1, spec.t2, spec.design2.innovation, derive_seed(rep_seed, &[2]))?;
    let choice = FactorChoice::Fixed(spec.r_max());
    TwoSampleInput::new(
        Sample::from_panel(&p1, choice, false)?,
        Sample::from_panel(&p2, choice, false)?,
    )
}

fn decide(
    input: &TwoSampleInput,
    test: TestKind,
    k: usize,
    level: f64,
    mc_draws: usize,
    mc_seed: u64,
) -> Result<bool> {
    match test {
        TestKind::Eigenvalue | TestKind::Ratio => {
            let result = if test == TestKind::Eigenvalue {
                test_eigenvalue(input, k, &[])?
            } else {
                test_ratio(input, k, &[])?
            };
            Ok(result.statistic.abs() > two_sided_critical(level))
        }
        TestKind::Eigenvector => {
            let statistic = eigenvector_statistic(input, k)?;
            let (law, _) = eigenvector_null_spec(input, k)?;
            if level == 0.0 {
                return Ok(false);
            }
            let null = sample_quadform(&law, mc_draws, mc_seed)?;
            Ok(statistic > null.quantile(1.0 - level)?)
        }
    }
}

fn run_replication(spec: &ExperimentSpec, pops: &(Population, Population), rep: usize) -> Vec<Outcome> {
    let cells = spec.cells();
    let rep_seed = replication_seed(spec, rep);
    let full = match simulate_pair(spec, pops, rep_seed) {
        Ok(input) => input,
        Err(e) => {
            let msg = e.to_string();
            return cells
                .iter()
                .map(|(_, k, r)| match r {
                    Some(r) if k > r => Outcome::NotApplicable,
                    _ => Outcome::Failed(msg.clone()),
                })
                .collect();
        }
    };
    let mut truncated: Vec<(usize, TwoSampleInput)> = Vec::new();
    cells
        .iter()
        .map(|&(test, k, r_hat)| {
            let input = match r_hat {
                None => &full,
                Some(r) if k > r => return Outcome::NotApplicable,
                Some(r) => {
                    if !truncated.iter().any(|(rr, _)| *rr == r) {
                        match full.with_r(r) {
                            Ok(inp) => truncated.push((r, inp)),
                            Err(e) => return Outcome::Failed(e.to_string()),
                        }
                    }
                    &truncated.iter().find(|(rr, _)| *rr == r).unwrap().1
                }
            };
            let mc_seed = derive_seed(rep_seed, &[3, r_hat.unwrap_or(0) as u64, k as u64]);
            match decide(input, test, k, spec.level, spec.mc_draws, mc_seed) {
                Ok(reject) => Outcome::Decided(reject),
                Err(e) => Outcome::Failed(e.to_string()),
            }
        })
        .collect()
}

/// Rejection rates for every `(test, k, r̂)` cell of `spec`.
///
/// Replications run in parallel; replication `b` draws from seeds derived
/// from `(master_seed, b)`, so the table does not depend on the thread count.
pub fn run_size_power(spec: &ExperimentSpec) -> Result<SizePowerTable> {
    spec.validate()?;
    let pops = populations(spec)?;
    let outcomes: Vec<Vec<Outcome>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| run_replication(spec, &pops, rep))
        .collect();

    let cells = spec
        .cells()
        .into_iter()
        .enumerate()
        .map(|(idx, (test, k, r_hat))| {
            let mut cell = RateCell {
                test,
                k,
                r_hat,
                rate: None,
                rejections: 0,
                valid: 0,
                failures: 0,
                first_error: None,
            };
            for rep in &outcomes {
                match &rep[idx] {
                    Outcome::NotApplicable => {}
                    Outcome::Decided(reject) => {
                        cell.valid += 1;
                        cell.rejections += usize::from(*reject);
                    }
                    Outcome::Failed(msg) => {
                        cell.failures += 1;
                        cell.first_error.get_or_insert_with(|| msg.clone());
                    }
                }
            }
            if cell.valid > 0 {
                cell.rate = Some(cell.rejections as f64 / cell.valid as f64);
            }
            cell
        })
        .collect();
    Ok(SizePowerTable {
        spec: spec.clone(),
        cells,
    })
}

/// Raw statistic draws with a comparison against the reference null law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub test: TestKind,
    pub k: usize,
    pub r_hat: Option<usize>,
    pub statistics: Vec<f64>,
    /// Monte Carlo draws of the estimated limit law (empty for normal limits).
    pub reference: Vec<f64>,
    pub failures: usize,
    pub mean: f64,
    pub sd: f64,
    /// Kolmogorov-Smirnov distance to `N(0, 1)`, or the two-sample distance
    /// to `reference` when that is nonempty.
    pub ks: f64,
}

impl NullDistribution {
    fn from_draws(
        test: TestKind,
        k: usize,
        r_hat: Option<usize>,
        statistics: Vec<f64>,
        reference: Vec<f64>,
        failures: usize,
    ) -> Self {
        let (mean, sd) = mean_sd(&statistics);
        let ks = if reference.is_empty() {
            ks_one_sample(&statistics, normal_cdf)
        } else {
            ks_two_sample(&statistics, &reference)
        };
        Self {
            test,
            k,
            r_hat,
            statistics,
            reference,
            failures,
            mean,
            sd,
            ks,
        }
    }
}

/// Draws of one statistic under the pairing in `spec`, using the first entry
/// of `r_values` as `r̂`.
///
/// For the eigenvector test each replication contributes
/// `max(1, mc_draws / replications)` draws from its own estimated null law;
/// the pooled draws form the reference sample.
pub fn run_null_distribution(spec: &ExperimentSpec, test: TestKind, k: usize) -> Result<NullDistribution> {
    spec.validate()?;
    let r_hat = match test {
        TestKind::Eigenvalue => None,
        _ => spec.r_values.first().copied(),
    };
    if let Some(r) = r_hat {
        if k > r {
            return Err(Error::InvalidIndex { k, r });
        }
    }
    let pops = populations(spec)?;
    let per_rep = (spec.mc_draws / spec.replications).max(1);
    let draws: Vec<Result<(f64, Vec<f64>)>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = replication_seed(spec, rep);
            let full = simulate_pair(spec, &pops, rep_seed)?;
            let input = match r_hat {
                Some(r) => full.with_r(r)?,
                None => full,
            };
            match test {
                TestKind::Eigenvalue => Ok((test_eigenvalue(&input, k, &[])?.statistic, Vec::new())),
                TestKind::Ratio => Ok((test_ratio(&input, k, &[])?.statistic, Vec::new())),
                TestKind::Eigenvector => {
                    let (law, _) = eigenvector_null_spec(&input, k)?;
                    let reference = law.draw(per_rep, derive_seed(rep_seed, &[4]));
                    Ok((eigenvector_statistic(&input, k)?, reference))
                }
            }
        })
        .collect();

    let mut statistics = Vec::with_capacity(draws.len());
    let mut reference = Vec::new();
    let mut failures = 0;
    for d in draws {
        match d {
            Ok((s, r)) => {
                statistics.push(s);
                reference.extend(r);
            }
            Err(_) => failures += 1,
        }
    }
    if statistics.is_empty() {
        return Err(Error::NumericalFailure("every replication failed".into()));
    }
    Ok(NullDistribution::from_draws(test, k, r_hat, statistics, reference, failures))
}

/// Setup for checking the one-sample eigenvector concentration statistic
/// against its weighted chi-square limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSpec {
    pub design: SimDesign,
    pub t: usize,
    pub r: usize,
    pub k: usize,
    pub replications: usize,
    pub mc_draws: usize,
    pub master_seed: u64,
}

/// Limit law `Σ_{i ≤ r, i ≠ k} ω_ki Z_i²` with population eigenvalues.
pub fn concentration_limit(population: &Population, r: usize, k: usize) -> Result<QuadFormSpec> {
    let l = population.eigenvalues();
    let weights = (1..=r)
        .filter(|&i| i != k)
        .map(|i| omega_hat(l[k - 1], l[i - 1]))
        .collect();
    QuadFormSpec::weighted_chi_square(weights)
}

pub fn run_concentration(spec: &ConcentrationSpec) -> Result<NullDistribution> {
    if spec.replications == 0 {
        return Err(Error::InvalidSpec("replications must be at least 1".into()));
    }
    if spec.k == 0 || spec.k > spec.r || spec.r < 2 {
        return Err(Error::InvalidSpec(format!(
            "need 1 <= k <= r and r >= 2, got k = {}, r = {}",
            spec.k, spec.r
        )));
    }
    let pop = build_population(&spec.design)?;
    let truth = pop.vector(spec.k);
    let draws: Vec<Result<f64>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(spec.master_seed, &[rep as u64]);
            let panel = draw_panel(&pop, spec.t, spec.design.innovation, seed)?;
            let summary = summarize_panel(&panel, FactorCount::user(spec.r), false)?;
            eigenvector_concentration_stat(&truth, &summary, spec.k)
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_err()).count();
    let statistics: Vec<f64> = draws.into_iter().filter_map(Result::ok).collect();
    if statistics.is_empty() {
        return Err(Error::NumericalFailure("every replication failed".into()));
    }
    let limit = concentration_limit(&pop, spec.r, spec.k)?;
    let reference = sample_quadform(&limit, spec.mc_draws, derive_seed(spec.master_seed, &[u64::MAX]))?
        .values()
        .to_vec();
    Ok(NullDistribution::from_draws(
        TestKind::Eigenvector,
        spec.k,
        Some(spec.r),
        statistics,
        reference,
        failures,
    ))
}
