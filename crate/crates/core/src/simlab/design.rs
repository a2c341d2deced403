use std::f64::consts::FRAC_PI_2;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::spectral::{default_labels, PanelData};

/// The five population covariance designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignName {
    /// `V₁ Λ₁ V₁ᵀ`
    Sigma1,
    /// `V₁ Λ₂ V₁ᵀ`
    Sigma2,
    /// `V₂ Λ₁ V₂ᵀ`
    Sigma3,
    /// `Λ₁`
    Sigma4,
    /// `V₅(θ) Λ₁ V₅(θ)ᵀ`, a rotation of the first two coordinates.
    Sigma5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Innovation {
    #[serde(rename = "gaussian")]
    Gaussian,
    /// Student t with 8 degrees of freedom scaled to unit variance.
    #[serde(rename = "student-t8-standardized")]
    StudentT8,
}

impl Innovation {
    /// `E z⁴` of one standardized entry.
    pub fn fourth_moment(&self) -> f64 {
        match self {
            Innovation::Gaussian => 3.0,
            Innovation::StudentT8 => 4.5,
        }
    }
}

/// `Var t(8) = 8/6`.
const T8_SCALE: f64 = 1.154_700_538_379_251_5; // √(4/3)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub name: DesignName,
    pub n: usize,
    /// Rotation angle in `[0, π/2]`; present exactly for `Sigma5`.
    pub theta: Option<f64>,
    pub innovation: Innovation,
    pub seed_v1: u64,
    pub seed_v2: u64,
    pub seed_bulk: u64,
}

impl SimDesign {
    /// A design with seeds taken from `seed` (`seed`, `seed + 1`, `seed + 2`).
    pub fn new(name: DesignName, n: usize, innovation: Innovation, seed: u64) -> Self {
        Self {
            name,
            n,
            theta: None,
            innovation,
            seed_v1: seed,
            seed_v2: seed.wrapping_add(1),
            seed_bulk: seed.wrapping_add(2),
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidDesign(format!("N = {} < 4", self.n)));
        }
        match (self.name, self.theta) {
            (DesignName::Sigma5, None) => Err(Error::InvalidDesign(
                "sigma5 requires a rotation angle".into(),
            )),
            (DesignName::Sigma5, Some(t)) if !(0.0..=FRAC_PI_2).contains(&t) => Err(
                Error::InvalidDesign(format!("theta = {t} outside [0, π/2]")),
            ),
            (DesignName::Sigma5, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidDesign(
                "theta is only meaningful for sigma5".into(),
            )),
            (_, None) => Ok(()),
        }
    }
}

/// Orthogonal eigenvector frame of a population covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Identity,
    /// Rotation by `θ` in the plane of the first two coordinates.
    Givens { cos: f64, sin: f64 },
    Dense(Mat<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    frame: Frame,
    eigenvalues: Vec<f64>,
}

impl Population {
    pub fn new(frame: Frame, eigenvalues: Vec<f64>) -> Result<Self> {
        if let Some(bad) = eigenvalues.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidDesign(format!("eigenvalue {bad} is not a finite nonnegative number")));
        }
        if eigenvalues.len() < 2 {
            return Err(Error::InvalidDesign("need at least two eigenvalues".into()));
        }
        if let Frame::Dense(v) = &frame {
            if v.nrows() != eigenvalues.len() || v.ncols() != eigenvalues.len() {
                return Err(Error::InvalidDesign(format!(
                    "frame is {} x {} for {} eigenvalues",
                    v.nrows(),
                    v.ncols(),
                    eigenvalues.len()
                )));
            }
        }
        Ok(Self { frame, eigenvalues })
    }

    pub fn n_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Population eigenvalues in design order (spikes first).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn frame_matrix(&self) -> Mat<f64> {
        let n = self.n_dim();
        match &self.frame {
            Frame::Identity => Mat::identity(n, n),
            Frame::Givens { cos, sin } => {
                let mut v = Mat::identity(n, n);
                v[(0, 0)] = *cos;
                v[(1, 0)] = *sin;
                v[(0, 1)] = -*sin;
                v[(1, 1)] = *cos;
                v
            }
            Frame::Dense(v) => v.clone(),
        }
    }

    /// Eigenvector `k` (1-based), the `k`-th column of the frame.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        let v = self.frame_matrix();
        (0..self.n_dim()).map(|i| v[(i, k - 1)]).collect()
    }

    /// `V Λ Vᵀ`.
    pub fn covariance(&self) -> Mat<f64> {
        let v = self.frame_matrix();
        let scaled = Mat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * self.eigenvalues[j]);
        let mut out = Mat::zeros(v.nrows(), v.nrows());
        matmul(&mut out, Accum::Replace, scaled.as_ref(), v.transpose(), 1.0, Par::Seq);
        out
    }
}

/// Haar-distributed `n × n` orthogonal matrix: QR of a Gaussian matrix with
/// the signs of `diag(R)` moved into `Q`.
pub fn haar_orthogonal(n: usize, seed: u64) -> Mat<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut g = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            g[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let qr = g.qr();
    let r = qr.R();
    let mut q = qr.compute_Q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for x in q.col_as_slice_mut(j) {
                *x = -*x;
            }
        }
    }
    q
}

fn spiked_spectrum(n: usize, spikes: [f64; 3], bulk: (f64, f64), seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let nf = n as f64;
    let mut values: Vec<f64> = spikes.iter().map(|s| s * nf).collect();
    values.extend((3..n).map(|_| rng.random_range(bulk.0..bulk.1)));
    values
}

/// `Λ₁ = diag(5N/2, N, N/2, Unif(1,3), …)`.
pub fn lambda1(n: usize, seed_bulk: u64) -> Vec<f64> {
    spiked_spectrum(n, [2.5, 1.0, 0.5], (1.0, 3.0), seed_bulk, 1)
}

/// `Λ₂ = diag(7N/2, 2N, N, Unif(2,5), …)`.
pub fn lambda2(n: usize, seed_bulk: u64) -> Vec<f64> {
    spiked_spectrum(n, [3.5, 2.0, 1.0], (2.0, 5.0), seed_bulk, 2)
}

pub fn build_population(design: &SimDesign) -> Result<Population> {
    design.validate()?;
    let n = design.n;
    let (frame, values) = match design.name {
        DesignName::Sigma1 => (Frame::Dense(haar_orthogonal(n, design.seed_v1)), lambda1(n, design.seed_bulk)),
        DesignName::Sigma2 => (Frame::Dense(haar_orthogonal(n, design.seed_v1)), lambda2(n, design.seed_bulk)),
        DesignName::Sigma3 => (Frame::Dense(haar_orthogonal(n, design.seed_v2)), lambda1(n, design.seed_bulk)),
        DesignName::Sigma4 => (Frame::Identity, lambda1(n, design.seed_bulk)),
        DesignName::Sigma5 => {
            let theta = design.theta.unwrap_or_default();
            let frame = Frame::Givens {
                cos: theta.cos(),
                sin: theta.sin(),
            };
            (frame, lambda1(n, design.seed_bulk))
        }
    };
    Population::new(frame, values)
}

/// Fills a `t × n` matrix row by row with iid standardized innovations.
pub fn draw_innovations(t: usize, n: usize, innovation: Innovation, seed: u64) -> Mat<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut z = Mat::<f64>::zeros(t, n);
    match innovation {
        Innovation::Gaussian => {
            for i in 0..t {
                for j in 0..n {
                    z[(i, j)] = rng.sample(StandardNormal);
                }
            }
        }
        Innovation::StudentT8 => {
            let dist = StudentT::new(8.0).expect("valid degrees of freedom");
            for i in 0..t {
                for j in 0..n {
                    z[(i, j)] = rng.sample(dist) / T8_SCALE;
                }
            }
        }
    }
    z
}

/// A `t × N` panel with rows `y = V Λ^{1/2} z`.
pub fn draw_panel(population: &Population, t: usize, innovation: Innovation, seed: u64) -> Result<PanelData> {
    let n = population.n_dim();
    let mut w = draw_innovations(t, n, innovation, seed);
    for (j, &l) in population.eigenvalues.iter().enumerate() {
        let s = l.sqrt();
        for x in w.col_as_slice_mut(j) {
            *x *= s;
        }
    }
    let y = apply_frame(&population.frame, w.as_ref());
    PanelData::new(y, default_labels(n))
}

/// `W Vᵀ`, i.e. each row `w` mapped to `V w`.
fn apply_frame(frame: &Frame, w: MatRef<'_, f64>) -> Mat<f64> {
    match frame {
        Frame::Identity => w.to_owned(),
        Frame::Givens { cos, sin } => {
            let mut y = w.to_owned();
            for i in 0..w.nrows() {
                let (a, b) = (w[(i, 0)], w[(i, 1)]);
                y[(i, 0)] = cos * a - sin * b;
                y[(i, 1)] = sin * a + cos * b;
            }
            y
        }
        Frame::Dense(v) => {
            let mut y = Mat::zeros(w.nrows(), v.nrows());
            matmul(&mut y, Accum::Replace, w, v.transpose(), 1.0, Par::Seq);
            y
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_orth_error(q: &Mat<f64>) -> f64 {
        let n = q.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d: f64 = (0..n).map(|l| q[(l, i)] * q[(l, j)]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }

    #[test]
    fn haar_is_orthogonal() {
        assert_eq!(haar_orthogonal(1, 3)[(0, 0)].abs(), 1.0);
        for n in [2, 7, 40] {
            assert!(max_orth_error(&haar_orthogonal(n, n as u64)) <= 1e-10);
        }
    }

    #[test]
    fn haar_first_entry_moment() {
        let reps = 10_000;
        let mean = (0..reps)
            .map(|s| haar_orthogonal(2, s)[(0, 0)].abs())
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 2.0 / PI).abs() < 0.02, "mean |q11| = {mean}");
    }

    #[test]
    fn sigma1_spikes() {
        let pop = build_population(&SimDesign::new(DesignName::Sigma1, 100, Innovation::Gaussian, 1)).unwrap();
        assert_eq!(&pop.eigenvalues()[..3], &[250.0, 100.0, 50.0]);
        assert!(pop.eigenvalues()[3..].iter().all(|l| (1.0..3.0).contains(l)));
    }

    #[test]
    fn sigma4_is_diagonal_lambda1() {
        let d = SimDesign::new(DesignName::Sigma4, 10, Innovation::Gaussian, 5);
        let pop = build_population(&d).unwrap();
        let c = pop.covariance();
        let l = lambda1(10, d.seed_bulk);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(c[(i, j)], if i == j { l[i] } else { 0.0 });
            }
        }
    }

    #[test]
    fn sigma5_at_zero_equals_sigma4() {
        let base = SimDesign::new(DesignName::Sigma4, 8, Innovation::Gaussian, 2);
        let rotated = SimDesign {
            name: DesignName::Sigma5,
            ..base.clone()
        }
        .with_theta(0.0);
        let a = build_population(&base).unwrap().covariance();
        let b = build_population(&rotated).unwrap().covariance();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma5_rotates_leading_vectors() {
        let d = SimDesign::new(DesignName::Sigma5, 6, Innovation::Gaussian, 2).with_theta(PI / 6.0);
        let pop = build_population(&d).unwrap();
        let v1 = pop.vector(1);
        assert!((v1[0] - (PI / 6.0).cos()).abs() < 1e-15 && (v1[1] - 0.5).abs() < 1e-15);
        let v2 = pop.vector(2);
        assert!((v2[0] + 0.5).abs() < 1e-15);
        assert_eq!(pop.vector(3), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_structure_across_designs() {
        let mk = |name| build_population(&SimDesign::new(name, 30, Innovation::Gaussian, 11)).unwrap();
        let (s1, s2, s3) = (mk(DesignName::Sigma1), mk(DesignName::Sigma2), mk(DesignName::Sigma3));
        let sorted = |p: &Population| {
            let mut v = p.eigenvalues().to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sorted(&s1), sorted(&s3));
        assert_eq!(s1.frame(), s2.frame());
        assert_ne!(s1.frame(), s3.frame());
    }

    #[test]
    fn design_validation() {
        let d = SimDesign::new(DesignName::Sigma1, 3, Innovation::Gaussian, 0);
        assert!(matches!(build_population(&d), Err(Error::InvalidDesign(_))));
        let d = SimDesign::new(DesignName::Sigma5, 10, Innovation::Gaussian, 0);
        assert!(d.validate().is_err());
        assert!(d.clone().with_theta(2.0).validate().is_err());
        let d = SimDesign::new(DesignName::Sigma1, 10, Innovation::Gaussian, 0).with_theta(0.1);
        assert!(d.validate().is_err());
        assert!(Population::new(Frame::Identity, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn innovation_moments() {
        for innovation in [Innovation::Gaussian, Innovation::StudentT8] {
            let z = draw_innovations(1000, 1000, innovation, 17);
            let mut m2 = 0.0;
            let mut m4 = 0.0;
            for j in 0..1000 {
                for x in z.col_as_slice(j) {
                    m2 += x * x;
                    m4 += x * x * x * x;
                }
            }
            m2 /= 1e6;
            m4 /= 1e6;
            assert!((m2 - 1.0).abs() < 0.01, "{innovation:?}: var {m2}");
            assert!((m4 - innovation.fourth_moment()).abs() < 0.1, "{innovation:?}: m4 {m4}");
        }
    }

    #[test]
    fn panel_covariance_converges() {
        let v = haar_orthogonal(5, 9);
        let pop = Population::new(Frame::Dense(v), vec![5.0, 3.0, 2.0, 1.0, 0.5]).unwrap();
        let t = 100_000;
        let panel = draw_panel(&pop, t, Innovation::Gaussian, 4).unwrap();
        let sigma = pop.covariance();
        let cov = crate::spectral::sample_covariance(&panel, false).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / t as f64).sqrt();
                assert!((cov.matrix()[(i, j)] - sigma[(i, j)]).abs() < 5.0 * se);
            }
        }
    }
}
