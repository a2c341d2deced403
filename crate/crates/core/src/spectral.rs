//! Sample covariance, symmetric eigendecomposition and spectral summaries.
//!
//! Every downstream statistic consumes a [`SpectralSummary`]: the full
//! descending spectrum of `(1/T) Σ y_t y_tᵀ`, its trace, and the leading `r`
//! eigenvectors under a deterministic sign rule.

use chrono::NaiveDate;
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative size below which a negative eigenvalue is treated as roundoff.
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// A `T × N` panel: rows are time points, columns are subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    values: Mat<f64>,
    labels: Vec<String>,
    index: Option<Vec<NaiveDate>>,
    demeaned: bool,
}

impl PanelData {
    pub fn new(values: Mat<f64>, labels: Vec<String>) -> Result<Self> {
        let (t, n) = (values.nrows(), values.ncols());
        if t < 2 || n < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 rows and 2 columns, got {t} x {n}"
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidPanel(format!(
                "{} labels for {n} columns",
                labels.len()
            )));
        }
        for j in 0..n {
            if let Some(i) = values.col_as_slice(j).iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidPanel(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
        }
        Ok(Self {
            values,
            labels,
            index: None,
            demeaned: false,
        })
    }

    /// Builds a panel from row vectors, labelling columns `x1..xN`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidPanel("ragged rows".into()));
        }
        let values = Mat::from_fn(t, n, |i, j| rows[i][j]);
        Self::new(values, default_labels(n))
    }

    pub fn with_index(mut self, index: Vec<NaiveDate>) -> Result<Self> {
        if index.len() != self.n_obs() {
            return Err(Error::InvalidPanel(format!(
                "time index has {} entries for {} rows",
                index.len(),
                self.n_obs()
            )));
        }
        self.index = Some(index);
        Ok(self)
    }

    pub fn values(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        self.values.col_as_slice(j)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index(&self) -> Option<&[NaiveDate]> {
        self.index.as_deref()
    }

    /// Number of observations `T`.
    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    /// Dimension `N`.
    pub fn n_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_demeaned(&self) -> bool {
        self.demeaned
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_dim()).map(|j| self.values[(i, j)]).collect()
    }

    /// Column-demeaned copy (idempotent).
    pub fn demean(&self) -> Self {
        if self.demeaned {
            return self.clone();
        }
        let mut values = self.values.clone();
        let t = values.nrows() as f64;
        for j in 0..values.ncols() {
            let col = values.col_as_slice_mut(j);
            let mean = col.iter().sum::<f64>() / t;
            col.iter_mut().for_each(|x| *x -= mean);
        }
        Self {
            values,
            labels: self.labels.clone(),
            index: self.index.clone(),
            demeaned: true,
        }
    }

    /// Multiplies every observation by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for j in 0..out.values.ncols() {
            out.values.col_as_slice_mut(j).iter_mut().for_each(|x| *x *= c);
        }
        out
    }

    /// The panel `Y Q`, i.e. every observation mapped to `Qᵀ y_t`.
    pub fn right_multiplied(&self, q: MatRef<'_, f64>) -> Result<Self> {
        if q.nrows() != self.n_dim() {
            return Err(Error::InvalidInput(format!(
                "cannot multiply a {}-column panel by a {} x {} matrix",
                self.n_dim(),
                q.nrows(),
                q.ncols()
            )));
        }
        let mut values = Mat::zeros(self.n_obs(), q.ncols());
        matmul(&mut values, Accum::Replace, &self.values, q, 1.0, Par::Seq);
        Ok(Self {
            values,
            labels: default_labels(q.ncols()),
            index: self.index.clone(),
            demeaned: self.demeaned,
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = Mat::from_fn(rows.len(), self.n_dim(), |i, j| self.values[(rows[i], j)]);
        let mut out = Self::new(values, self.labels.clone())?;
        if let Some(idx) = &self.index {
            out.index = Some(rows.iter().map(|&i| idx[i]).collect());
        }
        Ok(out)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let values = Mat::from_fn(self.n_obs(), cols.len(), |i, j| self.values[(i, cols[j])]);
        let labels = cols.iter().map(|&j| self.labels[j].clone()).collect();
        let mut out = Self::new(values, labels)?;
        out.index = self.index.clone();
        Ok(out)
    }
}

pub(crate) fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("x{j}")).collect()
}

/// `(1/T) Σ y_t y_tᵀ` together with the `T` it was formed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    matrix: Mat<f64>,
    n_obs: usize,
}

impl SampleCovariance {
    /// Wraps an existing symmetric matrix, e.g. a population covariance.
    pub fn from_matrix(matrix: Mat<f64>, n_obs: usize) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidInput("covariance matrix must be square".into()));
        }
        Ok(Self { matrix, n_obs })
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }
}

/// Sample covariance with divisor `T`.
///
/// With `demean`, column means are removed first; the divisor stays `T`.
pub fn sample_covariance(panel: &PanelData, demean: bool) -> Result<SampleCovariance> {
    let t = panel.n_obs();
    if t < 2 {
        return Err(Error::InvalidPanel(format!("T = {t} < 2")));
    }
    let centered;
    let data = if demean && !panel.is_demeaned() {
        centered = panel.demean();
        &centered
    } else {
        panel
    };
    let n = data.n_dim();
    let mut matrix = Mat::zeros(n, n);
    matmul(
        &mut matrix,
        Accum::Replace,
        data.values.transpose(),
        &data.values,
        1.0 / t as f64,
        Par::Seq,
    );
    for j in 0..n {
        for i in 0..j {
            matrix[(i, j)] = matrix[(j, i)];
        }
    }
    Ok(SampleCovariance { matrix, n_obs: t })
}

/// Where a factor count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSource {
    UserSupplied,
    EigenvalueRatio,
}

/// Number of retained principal components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorCount {
    pub r: usize,
    pub source: FactorSource,
}

impl FactorCount {
    pub fn user(r: usize) -> Self {
        Self {
            r,
            source: FactorSource::UserSupplied,
        }
    }

    /// Checks `1 <= r < min(N, T)`.
    pub fn validate(&self, n_dim: usize, n_obs: usize) -> Result<()> {
        let bound = n_dim.min(n_obs);
        if self.r == 0 || self.r >= bound {
            return Err(Error::InvalidFactorCount(format!(
                "r = {} must satisfy 1 <= r < min(N, T) = {bound}",
                self.r
            )));
        }
        Ok(())
    }
}

/// Descending spectrum, trace, and leading eigenvectors of a sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    eigenvalues: Vec<f64>,
    top_vectors: Mat<f64>,
    trace: f64,
    n_obs: usize,
}

impl SpectralSummary {
    /// Assembles a summary from parts, checking the ordering, trace and
    /// orthonormality invariants.
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        top_vectors: Mat<f64>,
        trace: f64,
        n_obs: usize,
    ) -> Result<Self> {
        let n = eigenvalues.len();
        if top_vectors.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "eigenvectors have {} rows for {n} eigenvalues",
                top_vectors.nrows()
            )));
        }
        FactorCount::user(top_vectors.ncols()).validate(n, n_obs)?;
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("eigenvalues must be nonincreasing".into()));
        }
        let sum: f64 = eigenvalues.iter().sum();
        if (sum - trace).abs() > 1e-8 * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInput(format!(
                "eigenvalues sum to {sum} but trace is {trace}"
            )));
        }
        let gram_err = gram_deviation(top_vectors.as_ref());
        if gram_err > 1e-8 {
            return Err(Error::InvalidInput(format!(
                "eigenvectors are not orthonormal (max Gram deviation {gram_err:.3e})"
            )));
        }
        Ok(Self {
            eigenvalues,
            top_vectors,
            trace,
            n_obs,
        })
    }

    /// All `N` eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ̂_k` for 1-based `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    /// Unit eigenvector for 1-based `k <= r_used`.
    pub fn vector(&self, k: usize) -> &[f64] {
        self.top_vectors.col_as_slice(k - 1)
    }

    pub fn top_vectors(&self) -> MatRef<'_, f64> {
        self.top_vectors.as_ref()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn n_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn r_used(&self) -> usize {
        self.top_vectors.ncols()
    }

    /// `Σ_{j>r} λ̂_j`, computed as trace minus the top-`r` sum.
    pub fn tail_sum(&self) -> f64 {
        let top: f64 = self.eigenvalues[..self.r_used()].iter().sum();
        (self.trace - top).max(0.0)
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.r_used() {
            return Err(Error::InvalidIndex {
                k,
                r: self.r_used(),
            });
        }
        Ok(())
    }

    /// The same spectrum keeping only the first `r` eigenvectors.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.r_used() {
            return Err(Error::InvalidFactorCount(format!(
                "cannot truncate {} retained components to {r}",
                self.r_used()
            )));
        }
        Ok(Self {
            eigenvalues: self.eigenvalues.clone(),
            top_vectors: self.top_vectors.subcols(0, r).to_owned(),
            trace: self.trace,
            n_obs: self.n_obs,
        })
    }
}

fn gram_deviation(v: MatRef<'_, f64>) -> f64 {
    let r = v.ncols();
    let mut worst: f64 = 0.0;
    for a in 0..r {
        for b in 0..=a {
            let dot: f64 = (0..v.nrows()).map(|i| v[(i, a)] * v[(i, b)]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// Full eigendecomposition of `cov`, keeping eigenvectors for the top `r`.
pub fn spectral_summary(cov: &SampleCovariance, r: FactorCount) -> Result<SpectralSummary> {
    let n = cov.dim();
    r.validate(n, cov.n_obs())?;
    let m = cov.matrix();
    let scale = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| m[(i, j)].abs())
        .fold(1.0, f64::max);
    for j in 0..n {
        for i in 0..j {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NumericalFailure(format!("eigensolver did not converge: {e:?}")))?;
    let ascending = evd.S().column_vector();
    let mut eigenvalues: Vec<f64> = (0..n).rev().map(|i| ascending[i]).collect();
    if eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
    }
    let floor = NEGATIVE_EIGEN_TOL * eigenvalues[0].max(0.0);
    for (j, lam) in eigenvalues.iter_mut().enumerate() {
        if *lam < 0.0 {
            if *lam < -floor {
                return Err(Error::NumericalFailure(format!(
                    "eigenvalue {} = {lam:.3e} is materially negative",
                    j + 1
                )));
            }
            *lam = 0.0;
        }
    }

    let u = evd.U();
    let mut top_vectors = Mat::zeros(n, r.r);
    for k in 0..r.r {
        let src = u.col(n - 1 - k);
        let dst = top_vectors.col_as_slice_mut(k);
        for i in 0..n {
            dst[i] = src[i];
        }
        align_sign_in_place(dst);
    }

    Ok(SpectralSummary {
        eigenvalues,
        top_vectors,
        trace: cov.trace(),
        n_obs: cov.n_obs(),
    })
}

/// Convenience: covariance plus summary straight from a panel.
pub fn summarize_panel(panel: &PanelData, r: FactorCount, demean: bool) -> Result<SpectralSummary> {
    spectral_summary(&sample_covariance(panel, demean)?, r)
}

/// Eigenvalue-ratio rule: `argmax_{1<=k<=k_max} λ̂_k / λ̂_{k+1}`.
///
/// Ties resolve to the smallest `k`.
pub fn estimate_factor_count(eigenvalues: &[f64], k_max: usize) -> Result<FactorCount> {
    if k_max == 0 || k_max + 1 > eigenvalues.len() {
        return Err(Error::InvalidFactorCount(format!(
            "k_max = {k_max} needs 1 <= k_max < {} eigenvalues",
            eigenvalues.len()
        )));
    }
    if let Some(j) = eigenvalues[..=k_max].iter().position(|&x| !(x > 0.0)) {
        return Err(Error::DegenerateSpectrum(format!(
            "eigenvalue {} is not positive",
            j + 1
        )));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=k_max {
        let ratio = eigenvalues[k - 1] / eigenvalues[k];
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    Ok(FactorCount {
        r: best.0,
        source: FactorSource::EigenvalueRatio,
    })
}

fn sign_anchor(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn align_sign_in_place(v: &mut [f64]) {
    if v[sign_anchor(v)] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Returns `v` or `-v` so that its largest-magnitude entry (lowest index on
/// ties) is nonnegative.
pub fn align_sign(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.is_empty() || norm == 0.0 {
        return Err(Error::InvalidVector("zero vector".into()));
    }
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidVector(format!("norm {norm} is not 1")));
    }
    let mut out = v.to_vec();
    align_sign_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
        let mut d: f64 = 0.0;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                d = d.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        d
    }

    #[test]
    fn repeated_row_gives_rank_one() {
        let c = [1.5, -2.0, 0.5];
        let panel = PanelData::from_rows(&vec![c.to_vec(); 5]).unwrap();
        let cov = sample_covariance(&panel, false).unwrap();
        let expected = Mat::from_fn(3, 3, |i, j| c[i] * c[j]);
        assert!(max_abs_diff(cov.matrix(), expected.as_ref()) < 1e-12);
    }

    #[test]
    fn unit_rows_covariance() {
        let panel = PanelData::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cov = sample_covariance(&panel, false).unwrap();
        assert_eq!(cov.matrix()[(0, 0)], 0.5);
        assert_eq!(cov.matrix()[(1, 1)], 0.5);
        assert_eq!(cov.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn demeaning_keeps_divisor_t() {
        let panel = PanelData::from_rows(&[vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 2.0]]).unwrap();
        let cov = sample_covariance(&panel, true).unwrap();
        // deviations (-2, 0, 2): sum of squares 8, divisor 3
        assert!((cov.matrix()[(0, 0)] - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(cov.matrix()[(1, 1)], 0.0);
    }

    #[test]
    fn panel_validation() {
        assert!(matches!(
            PanelData::from_rows(&[vec![1.0, 2.0]]),
            Err(Error::InvalidPanel(_))
        ));
        assert!(matches!(
            PanelData::from_rows(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]),
            Err(Error::InvalidPanel(_))
        ));
        assert!(matches!(
            PanelData::from_rows(&[vec![1.0, 2.0], vec![1.0]]),
            Err(Error::InvalidPanel(_))
        ));
    }

    #[test]
    fn identity_spectrum() {
        let cov = SampleCovariance::from_matrix(Mat::identity(4, 4), 10).unwrap();
        let s = spectral_summary(&cov, FactorCount::user(2)).unwrap();
        assert!(s.eigenvalues().iter().all(|&x| (x - 1.0).abs() < 1e-14));
        assert_eq!(s.trace(), 4.0);
        assert_eq!(s.r_used(), 2);
    }

    #[test]
    fn diagonal_spectrum_and_sign() {
        let mut m = Mat::zeros(3, 3);
        m[(0, 0)] = 3.0;
        m[(1, 1)] = 2.0;
        m[(2, 2)] = 1.0;
        let cov = SampleCovariance::from_matrix(m, 10).unwrap();
        let s = spectral_summary(&cov, FactorCount::user(1)).unwrap();
        assert_eq!(s.eigenvalues().len(), 3);
        for (a, b) in s.eigenvalues().iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let v = s.vector(1);
        assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14 && v[2].abs() < 1e-14);
    }

    #[test]
    fn factor_count_bounds() {
        let cov = SampleCovariance::from_matrix(Mat::identity(4, 4), 3).unwrap();
        assert!(matches!(
            spectral_summary(&cov, FactorCount::user(3)),
            Err(Error::InvalidFactorCount(_))
        ));
        assert!(matches!(
            spectral_summary(&cov, FactorCount::user(0)),
            Err(Error::InvalidFactorCount(_))
        ));
    }

    #[test]
    fn asymmetric_rejected() {
        let mut m = Mat::<f64>::identity(3, 3);
        m[(0, 1)] = 0.5;
        let cov = SampleCovariance::from_matrix(m, 10).unwrap();
        assert!(matches!(
            spectral_summary(&cov, FactorCount::user(1)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn materially_negative_eigenvalue_fails() {
        let mut m = Mat::<f64>::identity(3, 3);
        m[(2, 2)] = -0.5;
        let cov = SampleCovariance::from_matrix(m, 10).unwrap();
        assert!(matches!(
            spectral_summary(&cov, FactorCount::user(1)),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn ratio_rule_examples() {
        let r = estimate_factor_count(&[100.0, 50.0, 1.0, 0.9, 0.8], 3).unwrap();
        assert_eq!(r.r, 2);
        assert_eq!(r.source, FactorSource::EigenvalueRatio);
        assert_eq!(estimate_factor_count(&[10.0, 1.0, 1.0, 1.0], 2).unwrap().r, 1);
        assert!(matches!(
            estimate_factor_count(&[10.0, 0.0, 0.0], 2),
            Err(Error::DegenerateSpectrum(_))
        ));
        assert!(estimate_factor_count(&[3.0, 2.0], 2).is_err());
    }

    #[test]
    fn align_sign_examples() {
        assert_eq!(align_sign(&[-0.8, 0.6]).unwrap(), vec![0.8, -0.6]);
        assert_eq!(align_sign(&[0.6, -0.8]).unwrap(), vec![-0.6, 0.8]);
        let tie = [0.5, -0.5, 0.5, 0.5];
        assert_eq!(align_sign(&tie).unwrap(), tie.to_vec());
        assert!(matches!(align_sign(&[0.0, 0.0]), Err(Error::InvalidVector(_))));
        assert!(matches!(align_sign(&[1.0, 1.0]), Err(Error::InvalidVector(_))));
    }

    #[test]
    fn truncation_keeps_spectrum() {
        let panel = PanelData::from_rows(&[
            vec![1.0, 0.2, 0.1],
            vec![0.3, 2.0, -0.4],
            vec![-1.0, 0.5, 0.9],
            vec![0.4, -0.7, 0.2],
        ])
        .unwrap();
        let s = summarize_panel(&panel, FactorCount::user(2), false).unwrap();
        let t = s.truncated(1).unwrap();
        assert_eq!(t.eigenvalues(), s.eigenvalues());
        assert_eq!(t.vector(1), s.vector(1));
        assert!(s.truncated(3).is_err());
    }
}
