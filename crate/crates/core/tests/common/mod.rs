#![allow(dead_code)]

use pcbreak::faer::Mat;
use pcbreak::simlab::haar_orthogonal;
use pcbreak::two_sample::{eigenvector_statistic, test_eigenvalue, test_ratio};
use pcbreak::{
    sample_covariance, sample_quadform, spectral_summary, stream_rng, FactorChoice, FactorCount,
    PanelData, QuadFormSpec, TwoSampleInput,
};
use pcbreak_oracle::{eigenvalue_stat, eigenvector_stat, ratio_stat, NaiveSample};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Check = Result<(), String>;

/// Spiked Gaussian rows: leading coordinates get larger standard deviations.
pub fn spiked_rows(n: usize, t: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 7);
    let scales: Vec<f64> = (0..n)
        .map(|j| match j {
            0 => 6.0,
            1 => 3.5,
            2 => 2.0,
            _ => 1.0 + 0.1 * j as f64,
        })
        .collect();
    (0..t)
        .map(|_| {
            scales
                .iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

pub fn panel(n: usize, t: usize, seed: u64) -> PanelData {
    PanelData::from_rows(&spiked_rows(n, t, seed)).unwrap()
}

pub fn input(p1: &PanelData, p2: &PanelData, r: usize) -> TwoSampleInput {
    TwoSampleInput::from_panels(p1, p2, FactorChoice::Fixed(r), false).unwrap()
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    if (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0) {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b}"))
    }
}

fn rel_close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    let scale = a.abs().max(b.abs());
    if (a - b).abs() <= tol * scale || scale == 0.0 {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b} (rel {:.2e})", (a - b).abs() / scale))
    }
}

/// `(T_λk, T_ek, T_vk)` for every `k <= r`.
pub fn all_stats(input: &TwoSampleInput) -> Vec<(f64, f64, f64)> {
    (1..=input.r().r)
        .map(|k| {
            (
                test_eigenvalue(input, k, &[]).unwrap().statistic,
                test_ratio(input, k, &[]).unwrap().statistic,
                eigenvector_statistic(input, k).unwrap(),
            )
        })
        .collect()
}

/// Main path against the naive oracle; returns the largest relative error.
pub fn oracle_max_rel_error(seed: u64, n: usize, t: usize, r: usize) -> Result<f64, String> {
    let rows1 = spiked_rows(n, t, seed);
    let rows2 = spiked_rows(n, t, seed ^ 0xABCD);
    let inp = input(
        &PanelData::from_rows(&rows1).unwrap(),
        &PanelData::from_rows(&rows2).unwrap(),
        r,
    );
    let (a, b) = (NaiveSample::new(&rows1, r), NaiveSample::new(&rows2, r));
    let mut worst: f64 = 0.0;
    let mut track = |x: f64, y: f64| {
        let scale = x.abs().max(y.abs());
        if scale > 0.0 {
            worst = worst.max((x - y).abs() / scale);
        }
    };
    for (k, (te, tr, tv)) in all_stats(&inp).into_iter().enumerate() {
        let k = k + 1;
        track(te, eigenvalue_stat(&a, &b, k));
        track(tr, ratio_stat(&a, &b, k));
        track(tv, eigenvector_stat(&a, &b, k));
        track(inp.sample1().sigma2()[k - 1].sigma2_hat, a.sigma2[k - 1]);
        track(inp.sample1().summary().eigenvalue(k), a.values[k - 1]);
    }
    Ok(worst)
}

pub fn check_ratio_antisymmetry(seed: u64, n: usize, t1: usize, t2: usize) -> Check {
    let inp = input(&panel(n, t1, seed), &panel(n, t2, seed + 1), 2);
    let swapped = inp.swapped();
    for k in 1..=2 {
        let a = test_ratio(&inp, k, &[]).unwrap().statistic;
        let b = test_ratio(&swapped, k, &[]).unwrap().statistic;
        if a != -b {
            return Err(format!("T_e{k}: {a} vs swapped {b}"));
        }
    }
    Ok(())
}

pub fn check_vector_swap_symmetry(seed: u64, n: usize, t1: usize, t2: usize) -> Check {
    let inp = input(&panel(n, t1, seed), &panel(n, t2, seed + 1), 2);
    let swapped = inp.swapped();
    for k in 1..=2 {
        let a = eigenvector_statistic(&inp, k).unwrap();
        let b = eigenvector_statistic(&swapped, k).unwrap();
        if a != b {
            return Err(format!("T_v{k}: {a} vs swapped {b}"));
        }
    }
    Ok(())
}

pub fn check_scale_invariance(seed: u64, n: usize, t: usize, c: f64) -> Check {
    let (p1, p2) = (panel(n, t, seed), panel(n, t + 3, seed + 1));
    let base = input(&p1, &p2, 2);
    let scaled = input(&p1.scaled(c), &p2, 2);
    for k in 1..=2 {
        close(
            test_ratio(&base, k, &[]).unwrap().statistic,
            test_ratio(&scaled, k, &[]).unwrap().statistic,
            1e-8,
            "T_e under scaling",
        )?;
        close(
            eigenvector_statistic(&base, k).unwrap(),
            eigenvector_statistic(&scaled, k).unwrap(),
            1e-8,
            "T_v under scaling",
        )?;
    }
    Ok(())
}

pub fn check_rotation_invariance(seed: u64, n: usize, t: usize) -> Check {
    let (p1, p2) = (panel(n, t, seed), panel(n, t + 2, seed + 1));
    let q = haar_orthogonal(n, seed.wrapping_mul(31));
    let base = input(&p1, &p2, 2);
    let rotated = input(
        &p1.right_multiplied(q.as_ref()).unwrap(),
        &p2.right_multiplied(q.as_ref()).unwrap(),
        2,
    );
    for ((a1, a2, a3), (b1, b2, b3)) in all_stats(&base).into_iter().zip(all_stats(&rotated)) {
        close(a1, b1, 1e-8, "T_λ under rotation")?;
        close(a2, b2, 1e-8, "T_e under rotation")?;
        close(a3, b3, 1e-8, "T_v under rotation")?;
    }
    Ok(())
}

pub fn check_spectral_invariants(seed: u64, n: usize, t: usize, r: usize) -> Check {
    let p = panel(n, t, seed);
    let cov = sample_covariance(&p, false).unwrap();
    let s = spectral_summary(&cov, FactorCount::user(r)).unwrap();
    let ev = s.eigenvalues();
    if ev.windows(2).any(|w| w[0] < w[1]) {
        return Err("eigenvalues not descending".into());
    }
    rel_close(ev.iter().sum(), cov.trace(), 1e-10, "trace")?;
    let c = cov.matrix();
    for i in 1..=r {
        for j in 1..=r {
            let d: f64 = s.vector(i).iter().zip(s.vector(j)).map(|(x, y)| x * y).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            if (d - target).abs() > 1e-10 {
                return Err(format!("gram ({i}, {j}) = {d}"));
            }
        }
        let v = s.vector(i);
        let residual = (0..n)
            .map(|a| {
                let cv: f64 = (0..n).map(|b| c[(a, b)] * v[b]).sum();
                (cv - ev[i - 1] * v[a]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        if residual > 1e-8 * ev[0] {
            return Err(format!("residual {residual} for component {i}"));
        }
    }
    Ok(())
}

pub fn random_quadform_spec(seed: u64, m: usize, p: usize) -> QuadFormSpec {
    let mut rng = stream_rng(seed, 3);
    let wa = (0..m).map(|_| rng.random_range(0.05..5.0)).collect();
    let wb = (0..p).map(|_| rng.random_range(0.05..5.0)).collect();
    let raw = Mat::<f64>::from_fn(m, p, |_, _| rng.sample(StandardNormal));
    let norm = raw
        .singular_values()
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max);
    let shrink: f64 = rng.random_range(0.0..=1.0);
    let coupling = (0..m)
        .map(|i| (0..p).map(|j| raw[(i, j)] * shrink / norm.max(1e-12)).collect())
        .collect();
    QuadFormSpec::new(wa, wb, coupling).unwrap()
}

pub fn check_quadform_nonnegative(seed: u64, m: usize, p: usize) -> Check {
    let spec = random_quadform_spec(seed, m, p);
    let sample = sample_quadform(&spec, 2000, seed).map_err(|e| e.to_string())?;
    match sample.values().iter().find(|v| **v < 0.0) {
        Some(v) => Err(format!("negative draw {v}")),
        None => Ok(()),
    }
}

pub fn check_quadform_determinism(seed: u64, m: usize, p: usize) -> Check {
    let spec = random_quadform_spec(seed, m, p);
    let a = sample_quadform(&spec, 5000, seed).unwrap();
    let b = sample_quadform(&spec, 5000, seed).unwrap();
    if a.values() == b.values() {
        Ok(())
    } else {
        Err("same seed produced different draws".into())
    }
}

pub fn check_simlab_determinism(seed: u64) -> Check {
    use pcbreak::simlab::{run_size_power, ExperimentSpec, Preset};
    let mut spec = ExperimentSpec::preset(Preset::SizeVector, 12, 0.0, 4, seed);
    spec.mc_draws = 1000;
    spec.tests = vec![pcbreak::TestKind::Eigenvalue, pcbreak::TestKind::Eigenvector];
    let a = serde_json::to_string(&run_size_power(&spec).unwrap()).unwrap();
    let b = serde_json::to_string(&run_size_power(&spec).unwrap()).unwrap();
    if a == b {
        Ok(())
    } else {
        Err("tables differ".into())
    }
}
