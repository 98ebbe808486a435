//! Unit CSV files and their JSON sidecar manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scenario, SimRecord};
use crate::error::{Error, Result};

pub const UNIT_COLUMNS: [&str; 7] = ["t_s", "v_quarter", "v_third", "v_mid", "q", "T_ambient", "D_true"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitManifest {
    pub unit_id: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub start_day: f64,
    /// `train`, `id-test` or `ood-test`, when assigned.
    pub split: Option<String>,
    pub records: usize,
    pub final_damage: f64,
    pub file: String,
}

/// Writes records with shortest round-trip float formatting, so output
/// bytes depend only on the values.
pub fn write_unit_csv(path: &Path, records: &[SimRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(UNIT_COLUMNS)?;
    for r in records {
        w.write_record(
            [r.t_s, r.v_quarter, r.v_third, r.v_mid, r.q, r.t_ambient, r.d_true].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_unit_csv(path: &Path) -> Result<Vec<SimRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != UNIT_COLUMNS {
        return Err(Error::Invalid(format!(
            "{}: expected columns {UNIT_COLUMNS:?}, got {header:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let mut v = [0.0; 7];
        for (slot, field) in v.iter_mut().zip(row.iter()) {
            *slot = field
                .parse()
                .map_err(|_| Error::Invalid(format!("{}: bad number {field:?}", path.display())))?;
        }
        out.push(SimRecord {
            t_s: v[0],
            v_quarter: v[1],
            v_third: v[2],
            v_mid: v[3],
            q: v[4],
            t_ambient: v[5],
            d_true: v[6],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let recs: Vec<SimRecord> = (0..5)
            .map(|i| SimRecord {
                t_s: 600.0 * i as f64,
                v_quarter: 1.0 / 3.0 + i as f64,
                v_third: -2.5e-3,
                v_mid: std::f64::consts::PI,
                q: 36.0,
                t_ambient: 12.3,
                d_true: 1e-17 * i as f64,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        write_unit_csv(&p, &recs).unwrap();
        assert_eq!(read_unit_csv(&p).unwrap(), recs);
    }
}
