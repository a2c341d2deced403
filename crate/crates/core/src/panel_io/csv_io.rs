use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use faer::Mat;

use crate::error::{Error, Result};
use crate::spectral::PanelData;

/// A parsed CSV panel before any row or column is discarded. Missing or
/// non-numeric cells are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub labels: Vec<String>,
    pub dates: Option<Vec<NaiveDate>>,
    pub rows: Vec<Vec<f64>>,
}

impl RawPanel {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Keeps rows without missing values.
    pub fn complete(&self, demean: bool) -> Result<LoadedPanel> {
        let columns: Vec<usize> = (0..self.labels.len()).collect();
        let rows: Vec<usize> = (0..self.rows.len()).collect();
        self.complete_subset(&rows, &columns, demean)
    }

    /// Keeps `columns`, and among `rows` those complete on `columns`.
    pub(crate) fn complete_subset(&self, rows: &[usize], columns: &[usize], demean: bool) -> Result<LoadedPanel> {
        let kept: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| columns.iter().all(|&j| self.rows[i][j].is_finite()))
            .collect();
        let values = Mat::from_fn(kept.len(), columns.len(), |i, j| self.rows[kept[i]][columns[j]]);
        let labels = columns.iter().map(|&j| self.labels[j].clone()).collect();
        let mut panel = PanelData::new(values, labels)?;
        if let Some(dates) = &self.dates {
            panel = panel.with_index(kept.iter().map(|&i| dates[i]).collect())?;
        }
        if demean {
            panel = panel.demean();
        }
        Ok(LoadedPanel {
            panel,
            dropped_rows: rows.len() - kept.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub panel: PanelData,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    /// Subtract column means after dropping incomplete rows.
    pub demean: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { demean: true }
    }
}

fn parse_cell(cell: &str) -> f64 {
    let cell = cell.trim();
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        _ => f64::NAN,
    }
}

/// Reads a header-first CSV whose optional first column is `date`
/// (ISO-8601 `YYYY-MM-DD`).
pub fn read_raw_csv(path: impl AsRef<Path>) -> Result<RawPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let header = reader.headers()?.clone();
    let has_date = header
        .get(0)
        .is_some_and(|h| h.trim().eq_ignore_ascii_case("date"));
    let offset = usize::from(has_date);
    let labels: Vec<String> = header.iter().skip(offset).map(|h| h.trim().to_string()).collect();
    let width = header.len();

    let mut rows = Vec::new();
    let mut dates = has_date.then(Vec::new);
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        if let Some(dates) = dates.as_mut() {
            let raw = record[0].trim();
            let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| Error::Parse {
                line,
                message: format!("bad date '{raw}': {e}"),
            })?;
            dates.push(date);
        }
        rows.push(record.iter().skip(offset).map(parse_cell).collect());
    }
    Ok(RawPanel { labels, dates, rows })
}

/// Reads a CSV panel, dropping rows that contain any missing or
/// non-numeric value.
pub fn read_panel_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<LoadedPanel> {
    let raw = read_raw_csv(path)?;
    if raw.labels.len() < 2 {
        return Err(Error::InvalidPanel(format!(
            "need at least 2 data columns, found {}",
            raw.labels.len()
        )));
    }
    raw.complete(options.demean)
}

/// Writes `panel` with a header row; values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_panel_csv(panel: &PanelData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        let mut header: Vec<&str> = Vec::new();
        if panel.index().is_some() {
            header.push("date");
        }
        header.extend(panel.labels().iter().map(String::as_str));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..panel.n_obs() {
            let mut cells: Vec<String> = Vec::with_capacity(panel.n_dim() + 1);
            if let Some(index) = panel.index() {
                cells.push(index[i].format("%Y-%m-%d").to_string());
            }
            cells.extend(panel.row(i).iter().map(|v| v.to_string()));
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_well_formed_panel() {
        let f = csv_file("a,b\n1,2\n3,4\n5,6\n");
        let loaded = read_panel_csv(f.path(), &CsvOptions { demean: false }).unwrap();
        assert_eq!(loaded.panel.n_obs(), 3);
        assert_eq!(loaded.panel.n_dim(), 2);
        assert_eq!(loaded.panel.labels(), &["a".to_string(), "b".to_string()]);
        assert_eq!(loaded.panel.row(2), vec![5.0, 6.0]);
        assert_eq!(loaded.dropped_rows, 0);
    }

    #[test]
    fn drops_rows_with_missing_values() {
        let f = csv_file("date,a,b\n2020-01-01,1,2\n2020-01-02,NA,4\n2020-01-03,5,6\n2020-01-06,7,x\n2020-01-07,1,1\n");
        let loaded = read_panel_csv(f.path(), &CsvOptions { demean: false }).unwrap();
        assert_eq!(loaded.dropped_rows, 2);
        assert_eq!(loaded.panel.n_obs(), 3);
        let idx = loaded.panel.index().unwrap();
        assert_eq!(idx[1], NaiveDate::from_ymd_opt(2020, 1, 3).unwrap());
    }

    #[test]
    fn demeans_by_default() {
        let f = csv_file("a,b\n1,2\n3,4\n");
        let loaded = read_panel_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(loaded.panel.row(0), vec![-1.0, -1.0]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let f = csv_file("a,b\n1,2\n3\n");
        match read_panel_csv(f.path(), &CsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_columns_or_rows() {
        let f = csv_file("a\n1\n2\n");
        assert!(matches!(read_panel_csv(f.path(), &CsvOptions::default()), Err(Error::InvalidPanel(_))));
        let f = csv_file("a,b\n1,2\n");
        assert!(matches!(read_panel_csv(f.path(), &CsvOptions::default()), Err(Error::InvalidPanel(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_panel_csv("/nonexistent/panel.csv", &CsvOptions::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/panel.csv"));
        assert!(err.is_usage());
    }

    #[test]
    fn write_then_read_round_trips() {
        let rows = vec![
            vec![0.1, 1.0 / 3.0, -2.5e-17],
            vec![std::f64::consts::PI, 1e300, -0.0],
        ];
        let panel = PanelData::from_rows(&rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_panel_csv(&panel, &path).unwrap();
        let back = read_panel_csv(&path, &CsvOptions { demean: false }).unwrap().panel;
        for i in 0..2 {
            assert_eq!(back.row(i), panel.row(i));
        }
    }
}
