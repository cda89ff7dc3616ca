//! CSV and JSON files. Rows are written by a single writer in the sorted
//! order produced by the harness; numbers use `.` and lines end in `\n`.

use std::fs;
use std::io::Write;
use std::path::Path;

use brier_align::eval::RunRecord;
use brier_align::regression::RegressionRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::HarnessError;
use crate::harness::{CellFailure, SelfPlayRecord};

pub const RUNS_FILE: &str = "runs.csv";
pub const REGRESSION_FILE: &str = "regression.csv";
pub const SELFPLAY_FILE: &str = "selfplay.csv";
pub const FAILURES_FILE: &str = "failures.json";

pub const RUNS_HEADER: [&str; 16] = [
    "setting", "algorithm", "epsilon", "alpha", "n", "m", "t", "seed", "beta", "chosen", "sg", "dg", "err_stat",
    "err2_gen", "c_star", "wall_ms",
];
pub const REGRESSION_HEADER: [&str; 6] = ["n", "seed", "setting", "epsilon", "alpha", "err2"];
pub const SELFPLAY_HEADER: [&str; 13] = [
    "n", "m", "t", "seed", "setting", "epsilon", "alpha", "chosen_model", "dg", "max_abs_f", "clip_active", "best_c", "bound",
];

fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

pub fn runs_csv(records: &[RunRecord]) -> Result<Vec<u8>, HarnessError> {
    to_csv(&RUNS_HEADER, records)
}

pub fn regression_csv(records: &[RegressionRecord]) -> Result<Vec<u8>, HarnessError> {
    to_csv(&REGRESSION_HEADER, records)
}

pub fn selfplay_csv(records: &[SelfPlayRecord]) -> Result<Vec<u8>, HarnessError> {
    to_csv(&SELFPLAY_HEADER, records)
}

fn from_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(HarnessError::Schema {
            file: path.display().to_string(),
            reason: format!("header {found:?}, expected {header:?}"),
        });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| HarnessError::Schema { file: path.display().to_string(), reason: format!("row {}: {e}", i + 1) })
        })
        .collect()
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    from_csv(path, &RUNS_HEADER)
}

pub fn read_regression(path: &Path) -> Result<Vec<RegressionRecord>, HarnessError> {
    from_csv(path, &REGRESSION_HEADER)
}

pub fn read_selfplay(path: &Path) -> Result<Vec<SelfPlayRecord>, HarnessError> {
    from_csv(path, &SELFPLAY_HEADER)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_failures(path: &Path, failures: &[CellFailure]) -> Result<(), HarnessError> {
    write_json(path, &failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use brier_align::mechanisms::Epsilon;

    fn record(eps: Epsilon, sg: Option<f64>) -> RunRecord {
        RunRecord {
            setting: "ldp_only".into(),
            algorithm: "square_chipo".into(),
            epsilon: eps,
            alpha: 0.0,
            n: 128,
            m: None,
            t: None,
            seed: 3,
            beta: Some(0.5),
            chosen: Some(2),
            sg,
            dg: None,
            err_stat: Some(1e-3),
            err2_gen: None,
            c_star: Some(1.25),
            wall_ms: None,
        }
    }

    #[test]
    fn runs_round_trip() {
        let rows = vec![record(Epsilon::Finite(0.5), Some(0.0125)), record(Epsilon::Infinite, None)];
        let bytes = runs_csv(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("setting,algorithm,epsilon,alpha,n,m,t,seed,beta,chosen,sg,dg,err_stat,err2_gen,c_star,wall_ms\n"));
        assert!(!text.contains('\r'));
        assert!(text.contains(",inf,"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(RUNS_FILE);
        write_bytes(&p, &bytes).unwrap();
        assert_eq!(read_runs(&p).unwrap(), rows);
    }

    #[test]
    fn wrong_header_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_bytes(&p, b"n,seed,value\n1,2,3\n").unwrap();
        assert!(matches!(read_runs(&p), Err(HarnessError::Schema { .. })));
    }

    #[test]
    fn regression_header_matches_the_documented_schema() {
        let rows = vec![RegressionRecord {
            n: 64,
            seed: 0,
            setting: "clean".into(),
            epsilon: Epsilon::Infinite,
            alpha: 0.0,
            err2: 0.01,
        }];
        let text = String::from_utf8(regression_csv(&rows).unwrap()).unwrap();
        assert_eq!(text, "n,seed,setting,epsilon,alpha,err2\n64,0,clean,inf,0.0,0.01\n");
    }
}
