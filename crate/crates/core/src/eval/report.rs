use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "probe,train_step,test_step,task,auroc,mse,n,pos_frac";

/// One fidelity cell; `auroc` is `None` when the test labels hold a single class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub probe: String,
    pub train_step: u64,
    pub test_step: u64,
    pub task: String,
    pub auroc: Option<f64>,
    pub mse: f64,
    pub n: usize,
    pub pos_frac: f64,
}

/// Upper-triangular grid of reports, rows by train step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub steps: Vec<u64>,
    pub cells: Vec<EvalReport>,
}

impl TransferMatrix {
    pub fn cell(&self, train_step: u64, test_step: u64) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|c| c.train_step == train_step && c.test_step == test_step)
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let auroc = r.auroc.map_or_else(|| "undefined".to_owned(), |a| a.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.probe, r.train_step, r.test_step, r.task, auroc, r.mse, r.n, r.pos_frac
        ));
    }
    out
}

pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.split_terminator('\n');
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Input("report CSV header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Input(format!("report CSV line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            Ok(EvalReport {
                probe: f[0].to_owned(),
                train_step: f[1].parse().map_err(|_| bad())?,
                test_step: f[2].parse().map_err(|_| bad())?,
                task: f[3].to_owned(),
                auroc: match f[4] {
                    "undefined" => None,
                    s => Some(s.parse().map_err(|_| bad())?),
                },
                mse: f[5].parse().map_err(|_| bad())?,
                n: f[6].parse().map_err(|_| bad())?,
                pos_frac: f[7].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
