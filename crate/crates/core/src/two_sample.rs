//! Two-sample tests for equality of principal eigenvalues, eigenvalue ratios
//! and principal eigenvectors.
//!
//! All three statistics are built from per-sample [`SpectralSummary`] values
//! and the fourth-moment estimates `σ̂²_{λ_j}`:
//!
//! * `T_λk = √(T₁T₂ / (T₁σ̂²⁽²⁾ + T₂σ̂²⁽¹⁾)) · (λ̂_k⁽¹⁾/λ̂_k⁽²⁾ − 1)`, null `N(0, 1)`;
//! * `T_ek = √N (ϱ̃⁽¹⁾ − ϱ̃⁽²⁾) / √(N/T₁ σ̂²_{−k}⁽¹⁾ + N/T₂ σ̂²_{−k}⁽²⁾)` with
//!   `ϱ̃ = λ̂_k / (tr − λ̂_k)`, null `N(0, 1)`;
//! * `T_vk = 2N(1 − |⟨v̂_k⁽¹⁾, v̂_k⁽²⁾⟩|) − Σ_i N² Σ_{j>r} λ̂_j⁽ⁱ⁾ / (T_i (N − r) λ̂_k⁽ⁱ⁾)`,
//!   null a coupled generalized chi-square evaluated by Monte Carlo.

use std::collections::BTreeMap;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gchi2::{sample_quadform, QuadFormSample, QuadFormSpec};
use crate::one_sample::{omega_weights, sigma2_all, sigma2_minus_k, EigenvalueVarianceEstimate};
use crate::spectral::{
    estimate_factor_count, sample_covariance, spectral_summary, FactorCount, PanelData,
    SpectralSummary,
};
use crate::stats::{two_sided_critical, two_sided_normal_p};

pub const DEFAULT_K_MAX: usize = 8;
pub const DEFAULT_MC_DRAWS: usize = crate::gchi2::DEFAULT_DRAWS;

/// How many principal components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorChoice {
    Fixed(usize),
    /// Eigenvalue-ratio estimate per sample; the pair uses the smaller one.
    Auto { k_max: usize },
}

impl std::str::FromStr for FactorChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(FactorChoice::Auto {
                k_max: DEFAULT_K_MAX,
            });
        }
        s.parse::<usize>()
            .map(FactorChoice::Fixed)
            .map_err(|_| format!("expected 'auto' or a positive integer, got '{s}'"))
    }
}

/// One sample: the data, its spectrum and `σ̂²_{λ_j}` for the retained `j`.
#[derive(Debug, Clone)]
pub struct Sample {
    panel: PanelData,
    summary: SpectralSummary,
    sigma2: Vec<EigenvalueVarianceEstimate>,
}

impl Sample {
    /// `panel` must be exactly the data behind `summary`.
    pub fn new(panel: PanelData, summary: SpectralSummary) -> Result<Self> {
        let sigma2 = sigma2_all(&panel, &summary)?;
        Ok(Self {
            panel,
            summary,
            sigma2,
        })
    }

    pub fn from_panel(panel: &PanelData, choice: FactorChoice, demean: bool) -> Result<Self> {
        let panel = if demean { panel.demean() } else { panel.clone() };
        let cov = sample_covariance(&panel, false)?;
        let summary = match choice {
            FactorChoice::Fixed(r) => spectral_summary(&cov, FactorCount::user(r))?,
            FactorChoice::Auto { k_max } => {
                let full = spectral_summary(&cov, FactorCount::user(k_max))?;
                let r = estimate_factor_count(full.eigenvalues(), k_max)?;
                full.truncated(r.r)?
            }
        };
        Self::new(panel, summary)
    }

    pub fn panel(&self) -> &PanelData {
        &self.panel
    }

    pub fn summary(&self) -> &SpectralSummary {
        &self.summary
    }

    pub fn sigma2(&self) -> &[EigenvalueVarianceEstimate] {
        &self.sigma2
    }

    pub fn truncated(&self, r: usize) -> Result<Self> {
        Ok(Self {
            panel: self.panel.clone(),
            summary: self.summary.truncated(r)?,
            sigma2: self.sigma2[..r].to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TwoSampleInput {
    sample1: Sample,
    sample2: Sample,
    r: FactorCount,
    warnings: Vec<String>,
}

impl TwoSampleInput {
    /// Pairs two samples of the same dimension; if their retained counts
    /// differ the smaller one is used and a warning is attached.
    pub fn new(sample1: Sample, sample2: Sample) -> Result<Self> {
        let (n1, n2) = (sample1.summary.n_dim(), sample2.summary.n_dim());
        if n1 != n2 {
            return Err(Error::InvalidInput(format!(
                "samples have different dimensions ({n1} vs {n2})"
            )));
        }
        let (r1, r2) = (sample1.summary.r_used(), sample2.summary.r_used());
        let mut warnings = Vec::new();
        let r = r1.min(r2);
        let (sample1, sample2) = if r1 != r2 {
            warnings.push(format!(
                "samples retain different factor counts ({r1} vs {r2}); using r = {r}"
            ));
            (sample1.truncated(r)?, sample2.truncated(r)?)
        } else {
            (sample1, sample2)
        };
        Ok(Self {
            sample1,
            sample2,
            r: FactorCount::user(r),
            warnings,
        })
    }

    pub fn from_panels(
        panel1: &PanelData,
        panel2: &PanelData,
        choice: FactorChoice,
        demean: bool,
    ) -> Result<Self> {
        if panel1.n_dim() != panel2.n_dim() {
            return Err(Error::InvalidInput(format!(
                "panels have different dimensions ({} vs {})",
                panel1.n_dim(),
                panel2.n_dim()
            )));
        }
        let s1 = Sample::from_panel(panel1, choice, demean)?;
        let s2 = Sample::from_panel(panel2, choice, demean)?;
        let mut input = Self::new(s1, s2)?;
        if let FactorChoice::Auto { .. } = choice {
            input.r.source = crate::spectral::FactorSource::EigenvalueRatio;
        }
        Ok(input)
    }

    /// Same data with only the first `r` components retained.
    pub fn with_r(&self, r: usize) -> Result<Self> {
        Ok(Self {
            sample1: self.sample1.truncated(r)?,
            sample2: self.sample2.truncated(r)?,
            r: FactorCount { r, ..self.r },
            warnings: self.warnings.clone(),
        })
    }

    /// The pair with the roles of the two samples exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            sample1: self.sample2.clone(),
            sample2: self.sample1.clone(),
            r: self.r,
            warnings: self.warnings.clone(),
        }
    }

    pub fn sample1(&self) -> &Sample {
        &self.sample1
    }

    pub fn sample2(&self) -> &Sample {
        &self.sample2
    }

    pub fn r(&self) -> FactorCount {
        self.r
    }

    pub fn n_dim(&self) -> usize {
        self.sample1.summary.n_dim()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.r.r {
            return Err(Error::InvalidIndex { k, r: self.r.r });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Eigenvalue,
    Ratio,
    Eigenvector,
}

impl TestKind {
    pub const ALL: [TestKind; 3] = [TestKind::Eigenvalue, TestKind::Ratio, TestKind::Eigenvector];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Eigenvalue => "eigenvalue",
            TestKind::Ratio => "ratio",
            TestKind::Eigenvector => "eigenvector",
        }
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "eigenvalue" => Ok(TestKind::Eigenvalue),
            "ratio" => Ok(TestKind::Ratio),
            "eigenvector" => Ok(TestKind::Eigenvector),
            other => Err(format!("unknown test '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NullLaw {
    StandardNormal,
    QuadForm { spec: QuadFormSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDecision {
    pub level: f64,
    pub critical_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub k: usize,
    pub statistic: f64,
    pub null_law: NullLaw,
    pub p_value: f64,
    pub decisions: Vec<LevelDecision>,
    /// Smallest supplied level at which the null is rejected.
    pub reject_at: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl TestResult {
    fn new(test: TestKind, k: usize, statistic: f64, null_law: NullLaw, p_value: f64) -> Self {
        Self {
            test,
            k,
            statistic,
            null_law,
            p_value: p_value.clamp(0.0, 1.0),
            decisions: Vec::new(),
            reject_at: None,
            diagnostics: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn with_decisions(mut self, decisions: Vec<LevelDecision>) -> Self {
        self.reject_at = decisions
            .iter()
            .filter(|d| d.reject)
            .map(|d| d.level)
            .reduce(f64::min);
        self.decisions = decisions;
        self
    }

    fn normal_decisions(self, levels: &[f64]) -> Self {
        let stat = self.statistic;
        let decisions = levels
            .iter()
            .map(|&level| {
                let critical_value = two_sided_critical(level);
                LevelDecision {
                    level,
                    critical_value,
                    reject: stat.abs() > critical_value,
                }
            })
            .collect();
        self.with_decisions(decisions)
    }

    pub fn decision(&self, level: f64) -> Option<&LevelDecision> {
        self.decisions.iter().find(|d| d.level == level)
    }
}

pub(crate) fn validate_levels(levels: &[f64]) -> Result<()> {
    match levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        Some(&bad) => Err(Error::InvalidLevel(bad)),
        None => Ok(()),
    }
}

fn positive_variance(value: f64, what: &str) -> Result<f64> {
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::DegenerateVariance(format!("{what} = {value}")))
    }
}

/// Test of `λ_k⁽¹⁾ = λ_k⁽²⁾`; two-sided normal p-value.
pub fn test_eigenvalue(input: &TwoSampleInput, k: usize, levels: &[f64]) -> Result<TestResult> {
    input.check_index(k)?;
    validate_levels(levels)?;
    let (a, b) = (&input.sample1, &input.sample2);
    let s1 = positive_variance(a.sigma2[k - 1].sigma2_hat, "σ̂²_λ in sample 1")?;
    let s2 = positive_variance(b.sigma2[k - 1].sigma2_hat, "σ̂²_λ in sample 2")?;
    let (t1, t2) = (a.summary.n_obs() as f64, b.summary.n_obs() as f64);
    let (l1, l2) = (a.summary.eigenvalue(k), b.summary.eigenvalue(k));
    let statistic = (t1 * t2 / (t1 * s2 + t2 * s1)).sqrt() * (l1 / l2 - 1.0);

    let mut result = TestResult::new(
        TestKind::Eigenvalue,
        k,
        statistic,
        NullLaw::StandardNormal,
        two_sided_normal_p(statistic),
    )
    .normal_decisions(levels);
    let d = &mut result.diagnostics;
    d.insert("lambda_1".into(), l1);
    d.insert("lambda_2".into(), l2);
    d.insert("sigma2_lambda_1".into(), s1);
    d.insert("sigma2_lambda_2".into(), s2);
    Ok(result)
}

/// Test of `λ_k⁽¹⁾/tr Σ⁽¹⁾ = λ_k⁽²⁾/tr Σ⁽²⁾`; two-sided normal p-value.
pub fn test_ratio(input: &TwoSampleInput, k: usize, levels: &[f64]) -> Result<TestResult> {
    input.check_index(k)?;
    validate_levels(levels)?;
    let (a, b) = (&input.sample1, &input.sample2);
    let v1 = positive_variance(sigma2_minus_k(&a.summary, &a.sigma2, k)?, "σ̂²_(−k) in sample 1")?;
    let v2 = positive_variance(sigma2_minus_k(&b.summary, &b.sigma2, k)?, "σ̂²_(−k) in sample 2")?;
    let ratio = |s: &SpectralSummary| {
        let l = s.eigenvalue(k);
        l / (s.trace() - l)
    };
    let (q1, q2) = (ratio(&a.summary), ratio(&b.summary));
    let n = input.n_dim() as f64;
    let (t1, t2) = (a.summary.n_obs() as f64, b.summary.n_obs() as f64);
    let statistic = n.sqrt() * (q1 - q2) / (n / t1 * v1 + n / t2 * v2).sqrt();

    let mut result = TestResult::new(
        TestKind::Ratio,
        k,
        statistic,
        NullLaw::StandardNormal,
        two_sided_normal_p(statistic),
    )
    .normal_decisions(levels);
    let d = &mut result.diagnostics;
    d.insert("ratio_1".into(), q1);
    d.insert("ratio_2".into(), q2);
    d.insert("sigma2_minus_k_1".into(), v1);
    d.insert("sigma2_minus_k_2".into(), v2);
    Ok(result)
}

/// `Ξ̂ = (⟨v̂_s⁽¹⁾, v̂_t⁽²⁾⟩)_{s,t <= r}`.
pub fn xi_matrix(summary1: &SpectralSummary, summary2: &SpectralSummary, r: usize) -> Result<Mat<f64>> {
    if summary1.n_dim() != summary2.n_dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch ({} vs {})",
            summary1.n_dim(),
            summary2.n_dim()
        )));
    }
    if r == 0 || r > summary1.r_used() || r > summary2.r_used() {
        return Err(Error::InvalidFactorCount(format!(
            "r = {r} exceeds the retained components ({}, {})",
            summary1.r_used(),
            summary2.r_used()
        )));
    }
    Ok(Mat::from_fn(r, r, |s, t| {
        dot(summary1.vector(s + 1), summary2.vector(t + 1)).clamp(-1.0, 1.0)
    }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clamps the singular values of `xi` to at most one. Returns the largest
/// singular value before clamping.
fn clamp_coupling(xi: &mut Mat<f64>) -> Result<f64> {
    if xi.nrows() == 0 {
        return Ok(0.0);
    }
    let svd = xi
        .svd()
        .map_err(|e| Error::NumericalFailure(format!("SVD of the coupling failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let top = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    if top > 1.0 {
        let (u, v) = (svd.U(), svd.V());
        let m = xi.nrows();
        *xi = Mat::from_fn(m, m, |i, j| {
            (0..m).map(|l| u[(i, l)] * s[l].min(1.0) * v[(j, l)]).sum()
        });
    }
    Ok(top)
}

/// The estimated null law of `T_vk`: weights `(N/T_i) ω̂_kj⁽ⁱ⁾` for `j ≠ k`
/// and the coupling `Ξ̂` with row and column `k` removed.
pub fn eigenvector_null_spec(input: &TwoSampleInput, k: usize) -> Result<(QuadFormSpec, f64)> {
    input.check_index(k)?;
    let r = input.r.r;
    if r < 2 {
        return Err(Error::UnsupportedFactorCount(
            "the eigenvector test needs r >= 2; its null law is undefined for r = 1".into(),
        ));
    }
    let n = input.n_dim() as f64;
    let weights = |s: &Sample| -> Result<Vec<f64>> {
        let rho = n / s.summary.n_obs() as f64;
        Ok(omega_weights(&s.summary, k)?
            .weights
            .values()
            .map(|w| rho * w)
            .collect())
    };
    let wa = weights(&input.sample1)?;
    let wb = weights(&input.sample2)?;
    let full = xi_matrix(&input.sample1.summary, &input.sample2.summary, r)?;
    let keep: Vec<usize> = (0..r).filter(|&i| i != k - 1).collect();
    let mut xi = Mat::from_fn(r - 1, r - 1, |i, j| full[(keep[i], keep[j])]);
    let top = clamp_coupling(&mut xi)?;
    let coupling = (0..r - 1)
        .map(|i| (0..r - 1).map(|j| xi[(i, j)]).collect())
        .collect();
    Ok((QuadFormSpec::new(wa, wb, coupling)?, top))
}

/// Test of `|⟨v_k⁽¹⁾, v_k⁽²⁾⟩| = 1` against a Monte Carlo sample of the
/// estimated null law; right-tailed.
pub fn test_eigenvector(
    input: &TwoSampleInput,
    k: usize,
    mc_draws: usize,
    seed: u64,
    levels: &[f64],
) -> Result<TestResult> {
    eigenvector_test_with_null(input, k, mc_draws, seed, levels).map(|(result, _)| result)
}

/// [`test_eigenvector`] also returning the Monte Carlo null sample.
pub fn eigenvector_test_with_null(
    input: &TwoSampleInput,
    k: usize,
    mc_draws: usize,
    seed: u64,
    levels: &[f64],
) -> Result<(TestResult, QuadFormSample)> {
    validate_levels(levels)?;
    let (spec, coupling_norm) = eigenvector_null_spec(input, k)?;
    let statistic = eigenvector_statistic(input, k)?;
    let null = sample_quadform(&spec, mc_draws, seed)?;

    let mut decisions = Vec::with_capacity(levels.len());
    for &level in levels {
        let critical_value = null.quantile(1.0 - level)?;
        decisions.push(LevelDecision {
            level,
            critical_value,
            reject: statistic > critical_value,
        });
    }
    let mut result = TestResult::new(
        TestKind::Eigenvector,
        k,
        statistic,
        NullLaw::QuadForm { spec },
        null.pvalue(statistic),
    )
    .with_decisions(decisions);

    let (a, b) = (&input.sample1.summary, &input.sample2.summary);
    let d = &mut result.diagnostics;
    d.insert("inner_product".into(), dot(a.vector(k), b.vector(k)).abs().min(1.0));
    d.insert("correction_1".into(), eigenvector_correction(a, k, input.r.r));
    d.insert("correction_2".into(), eigenvector_correction(b, k, input.r.r));
    d.insert("coupling_norm".into(), coupling_norm);
    if coupling_norm > 1.0 {
        d.insert("coupling_clamped".into(), 1.0);
        result
            .warnings
            .push(format!("coupling singular values clamped to 1 (max was {coupling_norm})"));
    }
    Ok((result, null))
}

fn eigenvector_correction(s: &SpectralSummary, k: usize, r: usize) -> f64 {
    let n = s.n_dim() as f64;
    let t = s.n_obs() as f64;
    n * n / (t * (n - r as f64) * s.eigenvalue(k)) * s.tail_sum()
}

/// The statistic `T_vk` alone.
pub fn eigenvector_statistic(input: &TwoSampleInput, k: usize) -> Result<f64> {
    input.check_index(k)?;
    let (a, b) = (&input.sample1.summary, &input.sample2.summary);
    let n = input.n_dim() as f64;
    let inner = dot(a.vector(k), b.vector(k)).abs().min(1.0);
    let r = input.r.r;
    Ok(2.0 * n * (1.0 - inner) - (eigenvector_correction(a, k, r) + eigenvector_correction(b, k, r)))
}

/// One cell of a test battery; exactly one of `result` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub test: TestKind,
    pub k: usize,
    pub result: Option<TestResult>,
    pub error: Option<String>,
}

/// All three tests for `k = 1..=r`. Failures are recorded per entry.
///
/// Every eigenvector test uses `seed` for its Monte Carlo null.
pub fn run_battery(
    input: &TwoSampleInput,
    levels: &[f64],
    mc_draws: usize,
    seed: u64,
) -> Result<Vec<BatteryEntry>> {
    validate_levels(levels)?;
    let mut entries = Vec::with_capacity(3 * input.r.r);
    for test in TestKind::ALL {
        for k in 1..=input.r.r {
            let outcome = match test {
                TestKind::Eigenvalue => test_eigenvalue(input, k, levels),
                TestKind::Ratio => test_ratio(input, k, levels),
                TestKind::Eigenvector => test_eigenvector(input, k, mc_draws, seed, levels),
            };
            let (result, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            entries.push(BatteryEntry {
                test,
                k,
                result,
                error,
            });
        }
    }
    Ok(entries)
}
