use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::io::write_text;

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report<T: Serialize>(dir: &Path, report: &T, csv: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("serialisable report");
    write_text(&dir.join("report.json"), &(json + "\n"))?;
    write_text(&dir.join("report.csv"), csv)
}

/// `epoch,arm,loss` rows, epochs starting at 1.
pub fn curves_csv(arms: &[(&str, &[f64])]) -> String {
    let mut out = String::from("epoch,arm,loss\n");
    for (arm, curve) in arms {
        for (e, l) in curve.iter().enumerate() {
            out.push_str(&format!("{},{arm},{l}\n", e + 1));
        }
    }
    out
}

pub fn write_curves(path: &Path, arms: &[(&str, &[f64])]) -> Result<()> {
    write_text(path, &curves_csv(arms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_rows() {
        let csv = curves_csv(&[("model", &[1.5, 1.0]), ("naive", &[2.0])]);
        assert_eq!(csv, "epoch,arm,loss\n1,model,1.5\n2,model,1\n1,naive,2\n");
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r");
        write_report(&out, &serde_json::json!({"a": 1}), "a\n1\n").unwrap();
        assert!(out.join("report.json").exists());
        assert_eq!(std::fs::read_to_string(out.join("report.csv")).unwrap(), "a\n1\n");
    }
}
