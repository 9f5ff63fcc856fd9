//! Cross-seed comparison of two result directories.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

#[derive(Debug, serde::Deserialize)]
struct Row {
    config_hash: String,
    experiment: String,
    metric: String,
    time: Option<f64>,
    value: f64,
    stderr: Option<f64>,
    #[allow(dead_code)]
    ess: Option<u64>,
}

fn read_rows(dir: &Path) -> Result<Vec<Row>, CliError> {
    let path = dir.join("results.csv");
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<Row>, _>>()
        .map_err(|e| CliError::Runtime(format!("cannot parse {}: {e}", path.display())))
}

/// Per-metric z-scores between two runs of the same configuration under
/// different seeds. Rows are matched on (experiment, metric, time); rows
/// without standard errors are deterministic and must agree exactly.
/// Returns the report; any |z| > 4 is flagged inline.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<String, CliError> {
    let a = read_rows(dir_a)?;
    let b = read_rows(dir_b)?;
    if a.is_empty() || b.is_empty() {
        return Err(CliError::Runtime("a results file is empty".into()));
    }
    let hash_of = |rows: &[Row], which: &str| -> Result<String, CliError> {
        let h = rows[0].config_hash.clone();
        if rows.iter().any(|r| r.config_hash != h) {
            return Err(CliError::Runtime(format!(
                "results in {which} mix several config hashes"
            )));
        }
        Ok(h)
    };
    let ha = hash_of(&a, "the first directory")?;
    let hb = hash_of(&b, "the second directory")?;
    if ha != hb {
        return Err(CliError::Config(format!(
            "incompatible configs: hash {ha} vs {hb} (runs must differ only in seed)"
        )));
    }

    let key = |r: &Row| {
        (
            r.experiment.clone(),
            r.metric.clone(),
            r.time.map(|t| format!("{t}")).unwrap_or_default(),
        )
    };
    let index: BTreeMap<_, &Row> = b.iter().map(|r| (key(r), r)).collect();
    let mut report = String::new();
    report.push_str(&format!("config hash: {ha}\n"));
    report.push_str("experiment,metric,time,value_a,value_b,z,flag\n");
    let mut flagged = 0usize;
    for row in &a {
        let Some(other) = index.get(&key(row)) else {
            return Err(CliError::Runtime(format!(
                "metric {} at time {:?} is missing from the second run",
                row.metric, row.time
            )));
        };
        let spread = (row.stderr.unwrap_or(0.0).powi(2) + other.stderr.unwrap_or(0.0).powi(2)).sqrt();
        let diff = row.value - other.value;
        let z = if spread > 0.0 {
            diff / spread
        } else if diff == 0.0 {
            0.0
        } else {
            // Deterministic rows that disagree: report an unbounded score.
            f64::INFINITY * diff.signum()
        };
        let flag = if z.abs() > 4.0 { "FLAG" } else { "" };
        flagged += usize::from(!flag.is_empty());
        report.push_str(&format!(
            "{},{},{},{},{},{:.3},{}\n",
            row.experiment,
            row.metric,
            row.time.map(|t| t.to_string()).unwrap_or_default(),
            row.value,
            other.value,
            z,
            flag
        ));
    }
    report.push_str(&format!("{} of {} metrics flagged (|z| > 4)\n", flagged, a.len()));
    Ok(report)
}
