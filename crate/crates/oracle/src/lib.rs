//! Deliberately naive reference implementations.
//!
//! Everything here works on `Vec<Vec<f64>>` with textbook loops and a cyclic
//! Jacobi eigensolver, so it shares no numerical code with `pcbreak-core`.
//! Panels are row-major: `rows[t][i]` is observation `t` of variable `i`.

#![allow(clippy::needless_range_loop)]

pub type Matrix = Vec<Vec<f64>>;

/// `(1/T) Σ_t y_t y_tᵀ`.
pub fn covariance(rows: &[Vec<f64>]) -> Matrix {
    let t = rows.len() as f64;
    let n = rows[0].len();
    let mut c = vec![vec![0.0; n]; n];
    for y in rows {
        for i in 0..n {
            for j in 0..n {
                c[i][j] += y[i] * y[j];
            }
        }
    }
    for row in &mut c {
        for x in row.iter_mut() {
            *x /= t;
        }
    }
    c
}

/// Column means removed.
pub fn demean(rows: &[Vec<f64>]) -> Matrix {
    let t = rows.len() as f64;
    let n = rows[0].len();
    let means: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / t).collect();
    rows.iter()
        .map(|r| r.iter().zip(&means).map(|(x, m)| x - m).collect())
        .collect()
}

/// Eigenvalues in decreasing order and the matching unit eigenvectors
/// (`vectors[k]` belongs to `values[k]`), by cyclic Jacobi rotations.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.clone();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| orient((0..n).map(|k| v[k][i]).collect()))
        .collect();
    (values, vectors)
}

/// Leading eigenpair by power iteration from a fixed start.
pub fn power_iteration(a: &Matrix, iters: usize) -> (f64, Vec<f64>) {
    let n = a.len();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = mat_vec(a, &x);
        let norm = dot(&y, &y).sqrt();
        x = y.iter().map(|v| v / norm).collect();
        lambda = dot(&x, &mat_vec(a, &x));
    }
    (lambda, orient(x))
}

/// Sign convention: the largest-magnitude entry (first on ties) is positive.
pub fn orient(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// Everything the two-sample statistics need from one sample.
#[derive(Debug, Clone)]
pub struct NaiveSample {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub trace: f64,
    /// `σ̂²_{λ_j}` for `j < r`.
    pub sigma2: Vec<f64>,
}

impl NaiveSample {
    pub fn new(rows: &[Vec<f64>], r: usize) -> Self {
        let c = covariance(rows);
        let (values, vectors) = jacobi_eigen(&c);
        let trace = (0..c.len()).map(|i| c[i][i]).sum();
        let sigma2 = (0..r)
            .map(|j| {
                let s4: f64 = rows.iter().map(|y| dot(&vectors[j], y).powi(4)).sum();
                s4 / (rows.len() as f64 * values[j] * values[j]) - 1.0
            })
            .collect();
        Self {
            n: c.len(),
            t: rows.len(),
            r,
            values,
            vectors,
            trace,
            sigma2,
        }
    }

    /// `σ̂²_{−k}` for the ratio `λ_k / (tr − λ_k)`; `k` is 1-based.
    pub fn sigma2_minus_k(&self, k: usize) -> f64 {
        let lk = self.values[k - 1];
        let rest = self.trace - lk;
        let mut inner = self.sigma2[k - 1];
        for j in 0..self.r {
            if j != k - 1 {
                inner += self.values[j].powi(2) * self.sigma2[j] / rest.powi(2);
            }
        }
        lk * lk / (rest * rest) * inner
    }

    pub fn tail(&self) -> f64 {
        self.values[self.r..].iter().sum()
    }

    pub fn omega(&self, k: usize, i: usize) -> f64 {
        let (a, b) = (self.values[k - 1], self.values[i - 1]);
        a * b / ((a - b) * (a - b))
    }
}

pub fn eigenvalue_stat(a: &NaiveSample, b: &NaiveSample, k: usize) -> f64 {
    let (t1, t2) = (a.t as f64, b.t as f64);
    let denom = t1 * b.sigma2[k - 1] + t2 * a.sigma2[k - 1];
    (t1 * t2 / denom).sqrt() * (a.values[k - 1] / b.values[k - 1] - 1.0)
}

pub fn ratio_stat(a: &NaiveSample, b: &NaiveSample, k: usize) -> f64 {
    let n = a.n as f64;
    let share = |s: &NaiveSample| s.values[k - 1] / (s.trace - s.values[k - 1]);
    let var = n / a.t as f64 * a.sigma2_minus_k(k) + n / b.t as f64 * b.sigma2_minus_k(k);
    n.sqrt() * (share(a) - share(b)) / var.sqrt()
}

pub fn eigenvector_stat(a: &NaiveSample, b: &NaiveSample, k: usize) -> f64 {
    let n = a.n as f64;
    let inner = dot(&a.vectors[k - 1], &b.vectors[k - 1]).abs();
    let correction = |s: &NaiveSample| {
        n * n * s.tail() / (s.t as f64 * (n - s.r as f64) * s.values[k - 1])
    };
    2.0 * n * (1.0 - inner) - correction(a) - correction(b)
}
