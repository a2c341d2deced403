use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::csv_io::RawPanel;
use crate::error::{Error, Result};
use crate::spectral::PanelData;

pub const DEFAULT_MIN_T: usize = 30;
pub const DEFAULT_MIN_COVERAGE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    CalendarYear,
    FixedLength(usize),
}

impl std::str::FromStr for SplitRule {
    type Err = String;

    /// `calendar-year` or `fixed:<rows>`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "calendar-year" {
            return Ok(SplitRule::CalendarYear);
        }
        s.strip_prefix("fixed:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .map(SplitRule::FixedLength)
            .ok_or_else(|| format!("expected 'calendar-year' or 'fixed:<rows>', got '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub rule: SplitRule,
    /// Periods with fewer usable rows are excluded.
    pub min_t: usize,
    /// A subject is kept only if its share of non-missing values reaches
    /// this level in every period.
    pub min_coverage: f64,
    pub demean: bool,
}

impl SplitOptions {
    pub fn new(rule: SplitRule) -> Self {
        Self {
            rule,
            min_t: DEFAULT_MIN_T,
            min_coverage: DEFAULT_MIN_COVERAGE,
            demean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Period {
    pub label: String,
    pub panel: PanelData,
    /// Rows lost to missing values among the retained subjects.
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSplit {
    pub periods: Vec<Period>,
    pub dropped_subjects: Vec<String>,
    pub warnings: Vec<String>,
}

struct RawPeriod {
    label: String,
    rows: Vec<usize>,
}

fn partition(raw: &RawPanel, rule: SplitRule) -> Result<Vec<RawPeriod>> {
    let mut periods: Vec<RawPeriod> = Vec::new();
    match rule {
        SplitRule::CalendarYear => {
            let dates = raw.dates.as_ref().ok_or_else(|| {
                Error::InvalidInput("calendar-year splitting needs a 'date' column".into())
            })?;
            if let Some(i) = dates.windows(2).position(|w| w[1] < w[0]) {
                return Err(Error::InvalidInput(format!(
                    "dates are not in increasing order at data row {}",
                    i + 2
                )));
            }
            for (i, d) in dates.iter().enumerate() {
                let label = d.year().to_string();
                match periods.last_mut() {
                    Some(p) if p.label == label => p.rows.push(i),
                    _ => periods.push(RawPeriod {
                        label,
                        rows: vec![i],
                    }),
                }
            }
        }
        SplitRule::FixedLength(len) => {
            if len == 0 {
                return Err(Error::InvalidInput("period length must be positive".into()));
            }
            let n = raw.n_rows();
            for start in (0..n).step_by(len) {
                let end = (start + len).min(n);
                periods.push(RawPeriod {
                    label: format!("rows {}-{}", start + 1, end),
                    rows: (start..end).collect(),
                });
            }
        }
    }
    Ok(periods)
}

/// Splits `raw` into contiguous periods restricted to the subjects observed
/// in all of them.
///
/// Short periods are excluded with a warning rather than failing the split.
pub fn split_by_label(raw: &RawPanel, options: &SplitOptions) -> Result<PeriodSplit> {
    let mut warnings = Vec::new();
    let mut candidates = Vec::new();
    for p in partition(raw, options.rule)? {
        if p.rows.len() < options.min_t {
            warnings.push(short_warning(&p.label, p.rows.len(), options.min_t));
        } else {
            candidates.push(p);
        }
    }

    let coverage_ok = |j: usize| {
        candidates.iter().all(|p| {
            let present = p.rows.iter().filter(|&&i| raw.rows[i][j].is_finite()).count();
            present as f64 >= options.min_coverage * p.rows.len() as f64
        })
    };
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..raw.labels.len()).partition(|&j| coverage_ok(j));
    let dropped_subjects: Vec<String> = dropped.iter().map(|&j| raw.labels[j].clone()).collect();
    if !dropped_subjects.is_empty() {
        warnings.push(format!(
            "{} subject(s) dropped for incomplete coverage: {}",
            dropped_subjects.len(),
            dropped_subjects.join(", ")
        ));
    }
    if kept.len() < 2 {
        return Err(Error::InvalidPanel(format!(
            "only {} subject(s) are observed in every period",
            kept.len()
        )));
    }

    let mut periods = Vec::new();
    for p in candidates {
        let complete = p
            .rows
            .iter()
            .filter(|&&i| kept.iter().all(|&j| raw.rows[i][j].is_finite()))
            .count();
        if complete < options.min_t {
            warnings.push(short_warning(&p.label, complete, options.min_t));
            continue;
        }
        let loaded = raw.complete_subset(&p.rows, &kept, options.demean)?;
        periods.push(Period {
            label: p.label,
            panel: loaded.panel,
            dropped_rows: loaded.dropped_rows,
        });
    }
    Ok(PeriodSplit {
        periods,
        dropped_subjects,
        warnings,
    })
}

fn short_warning(label: &str, rows: usize, min: usize) -> String {
    Error::ShortPeriod {
        label: label.to_string(),
        rows,
        min,
    }
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn raw(n_rows: usize, with_dates: bool) -> RawPanel {
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        RawPanel {
            labels: vec!["a".into(), "b".into(), "c".into()],
            dates: with_dates.then(|| (0..n_rows).map(|i| start + chrono::Days::new(i as u64 * 2)).collect()),
            rows: (0..n_rows)
                .map(|i| vec![i as f64, (i * i % 7) as f64, ((i * 3) % 5) as f64])
                .collect(),
        }
    }

    #[test]
    fn two_years_give_two_periods() {
        let r = raw(300, true);
        let split = split_by_label(&r, &SplitOptions::new(SplitRule::CalendarYear)).unwrap();
        let labels: Vec<&str> = split.periods.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(labels, ["2019", "2020"]);
        let total: usize = split.periods.iter().map(|p| p.panel.n_obs()).sum();
        assert_eq!(total, 300);
    }

    #[test]
    fn fixed_length_arithmetic() {
        let r = raw(250, false);
        let split = split_by_label(&r, &SplitOptions::new(SplitRule::FixedLength(100))).unwrap();
        let sizes: Vec<usize> = split.periods.iter().map(|p| p.panel.n_obs()).collect();
        assert_eq!(sizes, [100, 100, 50]);

        let r = raw(220, false);
        let split = split_by_label(&r, &SplitOptions::new(SplitRule::FixedLength(100))).unwrap();
        assert_eq!(split.periods.len(), 2);
        assert_eq!(split.warnings.len(), 1);
        assert!(split.warnings[0].contains("rows 201-220"));
    }

    #[test]
    fn subject_missing_later_is_dropped_everywhere() {
        let mut r = raw(200, false);
        for row in r.rows.iter_mut().skip(100) {
            row[1] = f64::NAN;
        }
        let split = split_by_label(&r, &SplitOptions::new(SplitRule::FixedLength(100))).unwrap();
        assert_eq!(split.dropped_subjects, ["b"]);
        for p in &split.periods {
            assert_eq!(p.panel.labels(), &["a".to_string(), "c".to_string()]);
        }
    }

    #[test]
    fn sparse_missing_rows_are_dropped() {
        let mut r = raw(200, false);
        r.rows[5][0] = f64::NAN;
        r.rows[150][2] = f64::NAN;
        let split = split_by_label(&r, &SplitOptions::new(SplitRule::FixedLength(100))).unwrap();
        assert!(split.dropped_subjects.is_empty());
        assert_eq!(split.periods[0].dropped_rows, 1);
        assert_eq!(split.periods[1].panel.n_obs(), 99);
    }

    #[test]
    fn calendar_rule_needs_dates() {
        let r = raw(100, false);
        assert!(matches!(
            split_by_label(&r, &SplitOptions::new(SplitRule::CalendarYear)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("calendar-year".parse::<SplitRule>().unwrap(), SplitRule::CalendarYear);
        assert_eq!("fixed:50".parse::<SplitRule>().unwrap(), SplitRule::FixedLength(50));
        assert!("fixed:0".parse::<SplitRule>().is_err());
    }
}
