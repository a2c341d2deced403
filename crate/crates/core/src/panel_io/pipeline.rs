use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{PeriodSplit, SplitOptions};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::spectral::FactorSource;
use crate::two_sample::{
    run_battery, validate_levels, FactorChoice, NullLaw, TestKind, TestResult, TwoSampleInput,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub factors: FactorChoice,
    pub levels: Vec<f64>,
    pub mc_draws: usize,
    pub demean: bool,
    /// How the periods were formed, when they came from [`super::split_by_label`].
    pub split: Option<SplitOptions>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            factors: FactorChoice::Auto {
                k_max: crate::two_sample::DEFAULT_K_MAX,
            },
            levels: vec![0.05],
            mc_draws: crate::two_sample::DEFAULT_MC_DRAWS,
            demean: true,
            split: None,
        }
    }
}

/// Level keys are the shortest decimal form of the level, e.g. `"0.05"`.
pub fn level_key(level: f64) -> String {
    level.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub test: TestKind,
    pub k: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub null_law: NullLaw,
    pub critical_values: BTreeMap<String, f64>,
    pub reject: BTreeMap<String, bool>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl From<TestResult> for ResultRecord {
    fn from(r: TestResult) -> Self {
        Self {
            test: r.test,
            k: r.k,
            statistic: r.statistic,
            p_value: r.p_value,
            critical_values: r
                .decisions
                .iter()
                .map(|d| (level_key(d.level), d.critical_value))
                .collect(),
            reject: r.decisions.iter().map(|d| (level_key(d.level), d.reject)).collect(),
            null_law: r.null_law,
            diagnostics: r.diagnostics,
            warnings: r.warnings,
        }
    }
}

/// A test (or a whole pair, when `test` is `None`) that could not be run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub test: Option<TestKind>,
    pub k: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub label1: String,
    pub label2: String,
    pub n_dim: usize,
    pub t1: usize,
    pub t2: usize,
    pub r: Option<usize>,
    pub r_source: Option<FactorSource>,
    pub seed: u64,
    pub results: Vec<ResultRecord>,
    pub failures: Vec<FailureRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub seed: u64,
    pub pairs: Vec<PairReport>,
    pub notes: Vec<String>,
}

impl PipelineReport {
    pub fn empty(config: PipelineConfig, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config,
            seed,
            pairs: Vec::new(),
            notes: Vec::new(),
        }
    }
}

fn run_pair(
    label1: &str,
    label2: &str,
    p1: &crate::spectral::PanelData,
    p2: &crate::spectral::PanelData,
    config: &PipelineConfig,
    seed: u64,
) -> PairReport {
    let mut pair = PairReport {
        label1: label1.to_string(),
        label2: label2.to_string(),
        n_dim: p1.n_dim(),
        t1: p1.n_obs(),
        t2: p2.n_obs(),
        r: None,
        r_source: None,
        seed,
        results: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
    };
    let outcome = TwoSampleInput::from_panels(p1, p2, config.factors, config.demean)
        .and_then(|input| Ok((run_battery(&input, &config.levels, config.mc_draws, seed)?, input)));
    match outcome {
        Ok((entries, input)) => {
            pair.r = Some(input.r().r);
            pair.r_source = Some(input.r().source);
            pair.warnings = input.warnings().to_vec();
            for e in entries {
                match (e.result, e.error) {
                    (Some(r), _) => pair.results.push(r.into()),
                    (None, error) => pair.failures.push(FailureRecord {
                        test: Some(e.test),
                        k: Some(e.k),
                        error: error.unwrap_or_default(),
                    }),
                }
            }
        }
        Err(e) => pair.failures.push(FailureRecord {
            test: None,
            k: None,
            error: e.to_string(),
        }),
    }
    pair
}

/// Runs the full test battery on every pair of adjacent periods.
///
/// Pair `i` uses the seed derived from `(seed, i)`. A failing pair is
/// recorded in its [`PairReport`] and the sweep continues.
pub fn run_pipeline(split: &PeriodSplit, config: &PipelineConfig, seed: u64) -> Result<PipelineReport> {
    if split.periods.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 periods, have {}",
            split.periods.len()
        )));
    }
    validate_levels(&config.levels)?;
    if config.mc_draws < crate::gchi2::MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "mc_draws must be at least {}",
            crate::gchi2::MIN_DRAWS
        )));
    }
    let pairs = split
        .periods
        .par_windows(2)
        .enumerate()
        .map(|(i, w)| {
            run_pair(
                &w[0].label,
                &w[1].label,
                &w[0].panel,
                &w[1].panel,
                config,
                derive_seed(seed, &[i as u64]),
            )
        })
        .collect();
    Ok(PipelineReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        seed,
        pairs,
        notes: split.warnings.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format '{other}' (expected json or csv)")),
        }
    }
}

/// Serializes `report` to `out`. CSV has one row per successful
/// `(pair, test, k)`.
pub fn render_report(report: &PipelineReport, format: ReportFormat, out: &mut dyn Write) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, report)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let mut header: Vec<String> = [
                "schema_version",
                "label1",
                "label2",
                "test",
                "k",
                "r",
                "statistic",
                "p_value",
                "null_law",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            for &level in &report.config.levels {
                header.push(format!("critical_value_{}", level_key(level)));
                header.push(format!("reject_{}", level_key(level)));
            }
            w.write_record(&header)?;
            for pair in &report.pairs {
                for res in &pair.results {
                    let law = match res.null_law {
                        NullLaw::StandardNormal => "standard-normal",
                        NullLaw::QuadForm { .. } => "quad-form",
                    };
                    let mut row = vec![
                        report.schema_version.to_string(),
                        pair.label1.clone(),
                        pair.label2.clone(),
                        res.test.to_string(),
                        res.k.to_string(),
                        pair.r.map(|r| r.to_string()).unwrap_or_default(),
                        res.statistic.to_string(),
                        res.p_value.to_string(),
                        law.to_string(),
                    ];
                    for &level in &report.config.levels {
                        let key = level_key(level);
                        row.push(res.critical_values.get(&key).map(f64::to_string).unwrap_or_default());
                        row.push(res.reject.get(&key).map(bool::to_string).unwrap_or_default());
                    }
                    w.write_record(&row)?;
                }
            }
            w.flush().map_err(|e| Error::io("<output>", e))?;
        }
    }
    Ok(())
}

pub fn write_report(report: &PipelineReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    render_report(report, format, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON report written by [`write_report`].
pub fn read_report(path: impl AsRef<Path>) -> Result<PipelineReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel_io::split::Period;
    use crate::spectral::PanelData;

    fn period(label: &str, seed: u64, t: usize) -> Period {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(seed, 0);
        let scales = [5.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0];
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| scales.iter().map(|s| s * (rng.random::<f64>() - 0.5)).collect())
            .collect();
        Period {
            label: label.into(),
            panel: PanelData::from_rows(&rows).unwrap(),
            dropped_rows: 0,
        }
    }

    fn split(periods: Vec<Period>) -> PeriodSplit {
        PeriodSplit {
            periods,
            dropped_subjects: vec![],
            warnings: vec![],
        }
    }

    fn config() -> PipelineConfig {
        PipelineConfig {
            factors: FactorChoice::Fixed(2),
            levels: vec![0.05, 0.1],
            mc_draws: 2000,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn identical_periods() {
        let p = period("2019", 1, 60);
        let mut q = p.clone();
        q.label = "2020".into();
        let report = run_pipeline(&split(vec![p, q]), &config(), 3).unwrap();
        let pair = &report.pairs[0];
        assert!(pair.failures.is_empty());
        for r in &pair.results {
            match r.test {
                TestKind::Eigenvector => assert_eq!(r.p_value, 1.0),
                _ => assert_eq!(r.statistic, 0.0),
            }
        }
    }

    #[test]
    fn needs_two_periods() {
        assert!(run_pipeline(&split(vec![period("a", 1, 40)]), &config(), 0).is_err());
    }

    #[test]
    fn csv_row_count_and_json_round_trip() {
        let s = split(vec![period("a", 1, 60), period("b", 2, 60), period("c", 3, 60)]);
        let mut cfg = config();
        cfg.factors = FactorChoice::Fixed(1);
        let report = run_pipeline(&s, &cfg, 7).unwrap();
        let failures: usize = report.pairs.iter().map(|p| p.failures.len()).sum();
        assert_eq!(failures, 2);

        let mut buf = Vec::new();
        render_report(&report, ReportFormat::Csv, &mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap().lines().count();
        assert_eq!(lines - 1, 2 * 3 - failures);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_report(&report, &path, ReportFormat::Json).unwrap();
        assert_eq!(read_report(&path).unwrap(), report);
    }

    #[test]
    fn empty_report_has_header_only() {
        let report = PipelineReport::empty(config(), 0);
        let mut buf = Vec::new();
        render_report(&report, ReportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("schema_version,label1,label2,test,k"));
        let mut buf = Vec::new();
        render_report(&report, ReportFormat::Json, &mut buf).unwrap();
        let back: PipelineReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn deterministic_bytes() {
        let s = split(vec![period("a", 4, 60), period("b", 5, 60)]);
        let render = || {
            let report = run_pipeline(&s, &config(), 11).unwrap();
            let mut buf = Vec::new();
            render_report(&report, ReportFormat::Json, &mut buf).unwrap();
            buf
        };
        assert_eq!(render(), render());
    }
}
