use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::config::within;
use super::manifest::{verify, RunManifest};
use crate::bench::{CurvePoint, TimingSample};
use crate::codec::write_file;
use crate::error::{Error, Result};
use crate::eval::{reports_from_csv, EvalReport, SubsetComparison};

/// Separates a probe label from its seed index in per-seed rows.
pub const SEED_MARK: &str = "#seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Usage(format!("report format must be csv or json, got {s:?}"))),
        }
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Pipeline(format!("csv: {e}"))
}

/// Median of `values`; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Collapses per-seed rows into one row per (probe, task, train, test),
/// keeping first-appearance order.
pub(crate) fn seed_medians(rows: &[EvalReport]) -> Vec<EvalReport> {
    let base = |r: &EvalReport| r.probe.split(SEED_MARK).next().unwrap_or_default().to_owned();
    let key = |r: &EvalReport| (base(r), r.task.clone(), r.train_step, r.test_step);
    let mut keys = Vec::new();
    for r in rows {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&EvalReport> = rows.iter().filter(|r| key(r) == k).collect();
            let aurocs: Vec<f64> = group.iter().filter_map(|r| r.auroc).collect();
            let mses: Vec<f64> = group.iter().map(|r| r.mse).collect();
            EvalReport {
                probe: k.0,
                auroc: median(&aurocs),
                mse: median(&mses).expect("nonempty group"),
                ..group[0].clone()
            }
        })
        .collect()
}

/// Appends an `avg` row after each probe's task rows.
pub(crate) fn with_averages(rows: Vec<EvalReport>) -> Vec<EvalReport> {
    let mut probes: Vec<String> = Vec::new();
    for r in &rows {
        if !probes.contains(&r.probe) {
            probes.push(r.probe.clone());
        }
    }
    let mut out = Vec::new();
    for p in probes {
        let group: Vec<EvalReport> = rows.iter().filter(|r| r.probe == p).cloned().collect();
        let k = group.len() as f64;
        let n: usize = group.iter().map(|r| r.n).sum();
        let auroc = group
            .iter()
            .map(|r| r.auroc)
            .collect::<Option<Vec<f64>>>()
            .map(|a| a.iter().sum::<f64>() / k);
        let avg = EvalReport {
            probe: p,
            task: "avg".into(),
            auroc,
            mse: group.iter().map(|r| r.mse).sum::<f64>() / k,
            n,
            pos_frac: group.iter().map(|r| r.pos_frac * r.n as f64).sum::<f64>() / n.max(1) as f64,
            ..group[0].clone()
        };
        out.extend(group);
        out.push(avg);
    }
    out
}

fn to_json<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s.into_bytes()
}

fn csv_rows<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}

fn curve_rows(text: &str) -> Result<Vec<CurvePoint>> {
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Pipeline(format!("crossover row {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(CurvePoint {
                n: f[0].parse().map_err(|_| bad())?,
                cumulative_gen_hours: f[1].parse().map_err(|_| bad())?,
                cumulative_probe_hours: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Renders every available result table under `reports/` in `format`.
/// Returns the written paths; empty when no experiment phase has run.
pub fn emit_report(out: &Path, manifest: &RunManifest, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for rec in &manifest.phases {
        if !verify(out, rec)? {
            return Err(Error::Pipeline(format!(
                "artifacts of {} are missing; rerun it before reporting",
                rec.phase
            )));
        }
        for a in &rec.artifacts {
            let Some(name) = a
                .path
                .strip_prefix("results/")
                .and_then(|n| n.strip_suffix(".csv"))
            else {
                continue;
            };
            let bytes = std::fs::read(within(out, &a.path)?).map_err(|e| Error::io(&a.path, e))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| Error::Pipeline(format!("{} is not UTF-8", a.path)))?;
            let (ext, body) = match format {
                ReportFormat::Csv => ("csv", bytes),
                ReportFormat::Json => {
                    let json = match name {
                        "subset" => to_json(&csv_rows::<SubsetComparison>(&text.into_bytes())?),
                        "bench" => to_json(&csv_rows::<TimingSample>(&text.into_bytes())?),
                        "crossover" => to_json(&curve_rows(&text)?),
                        _ => to_json(&reports_from_csv(&text)?),
                    };
                    ("json", json)
                }
            };
            let rel = format!("reports/{name}.{ext}");
            let path = within(out, &rel)?;
            write_file(&path, &body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(probe: &str, task: &str, auroc: Option<f64>, mse: f64, n: usize) -> EvalReport {
        EvalReport {
            probe: probe.into(),
            train_step: 5,
            test_step: 5,
            task: task.into(),
            auroc,
            mse,
            n,
            pos_frac: 0.5,
        }
    }

    #[test]
    fn medians_and_averages() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let rows = vec![
            row("s#seed0", "a", Some(0.6), 0.3, 10),
            row("s#seed1", "a", Some(0.9), 0.1, 10),
            row("s#seed2", "a", Some(0.7), 0.2, 10),
            row("s#seed0", "b", Some(0.5), 0.4, 30),
        ];
        let med = seed_medians(&rows);
        assert_eq!(med.len(), 2);
        assert_eq!(med[0].probe, "s");
        assert_eq!(med[0].auroc, Some(0.7));
        assert_eq!(med[0].mse, 0.2);
        let avg = with_averages(med);
        assert_eq!(avg.len(), 3);
        assert_eq!(avg[2].task, "avg");
        assert!((avg[2].auroc.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(avg[2].n, 40);
    }
}
