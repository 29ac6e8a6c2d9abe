//! Evaluation reports and their CSV / JSON forms.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str = "mechanism,rpm,ctr,psi,psi_skipped,runtime_ms,seed,config_hash";
pub const SLOT_CSV_HEADER: &str = "mechanism,slot,ctr";

/// One evaluated mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismReport {
    pub mechanism: String,
    pub rpm: f64,
    pub ctr: f64,
    pub psi: f64,
    /// Winners left out of Ψ because their truthful utility is ~0.
    pub psi_skipped: usize,
    /// Mean decision time per auction; 0 when not recorded.
    pub runtime_ms: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Closed-form companions of `rpm` and `ctr`.
    pub expected_rpm: f64,
    pub expected_ctr: f64,
    /// Mean true CTR per slot.
    pub slot_ctr: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<MechanismReport>,
}

impl Report {
    pub fn row(&self, mechanism: &str) -> Option<&MechanismReport> {
        self.rows.iter().find(|r| r.mechanism == mechanism)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.mechanism, r.rpm, r.ctr, r.psi, r.psi_skipped, r.runtime_ms, r.seed, r.config_hash
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Per-slot mean CTR, `k` rows per mechanism.
    pub fn slot_csv(&self) -> String {
        let mut out = String::from(SLOT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            for (s, c) in r.slot_ctr.iter().enumerate() {
                writeln!(out, "{},{},{}", r.mechanism, s, c).expect("writing to a String");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write(path, &self.to_csv())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write(path, &self.to_json())
    }

    pub fn write_slot_csv(&self, path: &Path) -> Result<()> {
        write(path, &self.slot_csv())
    }
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str) -> MechanismReport {
        MechanismReport {
            mechanism: name.into(),
            rpm: 123.456789,
            ctr: 0.1 + 0.2,
            psi: 0.0125,
            psi_skipped: 2,
            runtime_ms: 0.0,
            seed: 7,
            config_hash: "ab12".into(),
            expected_rpm: 120.0,
            expected_ctr: 0.3,
            slot_ctr: vec![0.4, 0.3, 0.2],
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(Report::default().to_csv(), format!("{CSV_HEADER}\n"));
        assert_eq!(Report::default().slot_csv(), format!("{SLOT_CSV_HEADER}\n"));
    }

    #[test]
    fn csv_and_json_carry_the_same_values() {
        let report = Report { rows: vec![row("gsp"), row("cga")] };
        let json: Report = serde_json::from_str(&report.to_json()).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        for (line, r) in lines.zip(&json.rows) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[0], r.mechanism);
            assert_eq!(f[1].parse::<f64>().unwrap(), r.rpm);
            assert_eq!(f[2].parse::<f64>().unwrap(), r.ctr);
            assert_eq!(f[3].parse::<f64>().unwrap(), r.psi);
            assert_eq!(f[4].parse::<usize>().unwrap(), r.psi_skipped);
            assert_eq!(f[5].parse::<f64>().unwrap(), r.runtime_ms);
            assert_eq!(f[6].parse::<u64>().unwrap(), r.seed);
            assert_eq!(f[7], r.config_hash);
        }
        assert_eq!(json, report);
    }

    #[test]
    fn slot_csv_has_k_rows_per_mechanism() {
        let report = Report { rows: vec![row("gsp"), row("vcg")] };
        let csv = report.slot_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.contains("vcg,2,0.2\n"));
    }
}
