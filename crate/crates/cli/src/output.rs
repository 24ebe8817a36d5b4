//! Report, history and dataset files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use aploss_core::dataset::Dataset;
use aploss_core::models::FeatureSet;
use aploss_core::ranking::Label;
use aploss_core::trainer::StepRecord;

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    /// What is being checked, in plain words.
    pub claim: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
    pub assertions: Vec<Assertion>,
    pub wall_clock_seconds: f64,
    /// `(file suffix, rows)`; the first entry is written to `history.csv`.
    #[serde(skip)]
    pub histories: Vec<(String, Vec<StepRecord>)>,
    #[serde(skip)]
    pub dataset: Option<Dataset>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            config: BTreeMap::new(),
            summary: BTreeMap::new(),
            assertions: Vec::new(),
            wall_clock_seconds: 0.0,
            histories: Vec::new(),
            dataset: None,
        }
    }

    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn check(&mut self, name: &str, claim: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            claim: claim.to_string(),
            passed,
            detail,
        });
    }

    pub fn history(&mut self, suffix: &str, rows: Vec<StepRecord>) {
        self.histories.push((suffix.to_string(), rows));
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Writes `summary.json`, `config.txt`, the history CSVs and, if present, `data.csv`.
    pub fn write(&self, out: &Path, config_echo: &str) -> Result<()> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(out.join("summary.json"), json + "\n")?;
        fs::write(out.join("config.txt"), config_echo)?;
        if self.histories.is_empty() {
            write_history(fs::File::create(out.join("history.csv"))?, &[])?;
        }
        for (k, (suffix, rows)) in self.histories.iter().enumerate() {
            let name = if k == 0 {
                "history.csv".to_string()
            } else {
                format!("history_{suffix}.csv")
            };
            write_history(fs::File::create(out.join(name))?, rows)?;
        }
        if let Some(data) = &self.dataset {
            write_dataset(fs::File::create(out.join("data.csv"))?, data)?;
        }
        Ok(())
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Columns `step, loss_value, exact_ap, interp_ap, grad_norm`; empty cells where a minibatch had no positives.
pub fn write_history<W: Write>(writer: W, rows: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "loss_value", "exact_ap", "interp_ap", "grad_norm"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.objective.to_string(),
            cell(r.exact_ap),
            cell(r.interp_ap),
            r.grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Header `image_id,label,f_1,...,f_D`, one row per sample; labels are `-1`, `0` or `1`.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["image_id".to_string(), "label".to_string()];
    header.extend((1..=data.dim()).map(|d| format!("f_{d}")));
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row = vec![
            data.image_ids[i].to_string(),
            data.labels[i].as_ternary().to_string(),
        ];
        row.extend(data.features.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "image_id" || &header[1] != "label" {
        bail!("dataset header must start with `image_id,label`");
    }
    for (d, name) in header.iter().skip(2).enumerate() {
        if name != format!("f_{}", d + 1) {
            bail!(
                "dataset column {} should be `f_{}`, found `{name}`",
                d + 3,
                d + 1
            );
        }
    }
    let dim = header.len() - 2;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (n, record) in r.records().enumerate() {
        let record = record?;
        let line = n + 2;
        if record.len() != header.len() {
            bail!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            );
        }
        images.push(
            record[0]
                .parse::<u32>()
                .with_context(|| format!("line {line}: image_id"))?,
        );
        let t: i64 = record[1]
            .parse()
            .with_context(|| format!("line {line}: label"))?;
        labels.push(Label::from_ternary(t)?);
        for field in record.iter().skip(2) {
            let v: f64 = field
                .parse()
                .with_context(|| format!("line {line}: feature `{field}`"))?;
            if !v.is_finite() {
                bail!("line {line}: non-finite feature");
            }
            values.push(v);
        }
    }
    let features = FeatureSet::new(labels.len(), dim, values)?;
    Ok(Dataset::new(features, labels, images)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aploss_core::synth::{generate, SynthKind, SynthSpec};

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let data = generate(&SynthSpec {
            kind: SynthKind::Inseparable,
            noise: 0.3,
            n_images: 2,
            ..SynthSpec::default()
        })
        .unwrap()
        .data;
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_errors() {
        assert!(read_dataset("id,label\n".as_bytes()).is_err());
        assert!(read_dataset("image_id,label,f_1\n0,2,1.0\n".as_bytes()).is_err());
        assert!(read_dataset("image_id,label,f_2\n0,1,1.0\n".as_bytes()).is_err());
        assert!(read_dataset("image_id,label,f_1\n0,1\n".as_bytes()).is_err());
        let ok = read_dataset("image_id,label,f_1\n0,1,1.5\n0,-1,2\n".as_bytes()).unwrap();
        assert_eq!(ok.labels, vec![Label::Positive, Label::Ignored]);
    }

    #[test]
    fn history_columns() {
        let rows = [StepRecord {
            step: 0,
            ap_loss: None,
            exact_ap: None,
            interp_ap: None,
            objective: 0.0,
            grad_norm: 0.5,
            update_norm: 0.0,
        }];
        let mut buf = Vec::new();
        write_history(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,loss_value,exact_ap,interp_ap,grad_norm\n0,0,,,0.5\n"
        );
    }
}
