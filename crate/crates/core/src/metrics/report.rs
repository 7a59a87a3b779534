//! Per-slice records, aggregates and their CSV form.

use std::io::{BufRead, Write};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub case: String,
    pub slice: String,
    pub dice: f64,
    /// `None` when the truth mask is empty.
    pub sensitivity: Option<f64>,
    /// `None` when either mask is empty.
    pub apd_mm: Option<f64>,
    pub empty_pred: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<SliceRecord>,
    pub dice_mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single record.
    pub dice_std: f64,
    pub sensitivity_mean: Option<f64>,
    pub apd_mean: Option<f64>,
    /// Slices without an APD value (empty prediction or empty truth).
    pub apd_excluded: usize,
    pub empty_predictions: usize,
    /// Free-form `key=value` labels carried through the CSV.
    pub labels: Vec<(String, String)>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(records: Vec<SliceRecord>) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Empty("metrics records"));
    }
    let dice: Vec<f64> = records.iter().map(|r| r.dice).collect();
    let dice_mean = mean(&dice).unwrap();
    let dice_std = if dice.len() > 1 {
        (dice.iter().map(|d| (d - dice_mean).powi(2)).sum::<f64>() / (dice.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let sens: Vec<f64> = records.iter().filter_map(|r| r.sensitivity).collect();
    let apd: Vec<f64> = records.iter().filter_map(|r| r.apd_mm).collect();
    Ok(MetricsReport {
        dice_mean,
        dice_std,
        sensitivity_mean: mean(&sens),
        apd_mean: mean(&apd),
        apd_excluded: records.len() - apd.len(),
        empty_predictions: records.iter().filter(|r| r.empty_pred).count(),
        records,
        labels: Vec::new(),
    })
}

pub const CSV_HEADER: [&str; 6] = ["case", "slice", "dice", "sensitivity", "apd_mm", "empty_pred"];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn with_label(mut self, key: &str, value: &str) -> Self {
        self.labels.push((key.into(), value.into()));
        self
    }

    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// One row per slice, then `#`-prefixed aggregate and label lines.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.case.clone(),
                r.slice.clone(),
                r.dice.to_string(),
                opt(r.sensitivity),
                opt(r.apd_mm),
                r.empty_pred.to_string(),
            ])?;
        }
        let mut out = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        writeln!(out, "# dice_mean={}", self.dice_mean)?;
        writeln!(out, "# dice_std={}", self.dice_std)?;
        writeln!(out, "# sensitivity_mean={}", opt(self.sensitivity_mean))?;
        writeln!(out, "# apd_mean={}", opt(self.apd_mean))?;
        writeln!(out, "# apd_excluded={}", self.apd_excluded)?;
        writeln!(out, "# empty_predictions={}", self.empty_predictions)?;
        for (k, v) in &self.labels {
            writeln!(out, "# label.{k}={v}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Parse a report written by [`MetricsReport::write_csv`]. Aggregates are
    /// recomputed from the rows; labels are restored from the comments.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let text = std::io::read_to_string(input)?;
        let mut labels = Vec::new();
        for line in text.lines() {
            if let Some(label) = line.strip_prefix("# label.") {
                if let Some((k, v)) = label.split_once('=') {
                    labels.push((k.to_string(), v.to_string()));
                }
            }
        }
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::InvalidConfig(format!("unexpected report header: {header:?}")));
        }
        let num = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::InvalidConfig(format!("bad {what} value {s:?}")))
        };
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            records.push(SliceRecord {
                case: row[0].to_string(),
                slice: row[1].to_string(),
                dice: num(&row[2], "dice")?.ok_or_else(|| Error::InvalidConfig("missing dice".into()))?,
                sensitivity: num(&row[3], "sensitivity")?,
                apd_mm: num(&row[4], "apd_mm")?,
                empty_pred: row[5].parse().map_err(|_| Error::InvalidConfig(format!("bad empty_pred {:?}", &row[5])))?,
            });
        }
        let mut report = aggregate(records)?;
        report.labels = labels;
        Ok(report)
    }
}
