//! CSV artifacts: every file written here has a header row and reads back
//! through [`read_csv`].

use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evalrouge::{Evaluation, RougeTriple};

pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Row-at-a-time CSV writer that flushes after every row.
pub struct CsvLog {
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(CsvLog {
            writer: csv::Writer::from_path(path)?,
        })
    }

    /// Appends to an existing log, writing the header only if the file is empty or missing.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(CsvLog { writer })
    }

    pub fn write<R: Serialize>(&mut self, row: &R) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Label of the aggregate row in evaluation reports.
pub const AGGREGATE: &str = "aggregate";

/// One example's scores, or the corpus mean when `id` is [`AGGREGATE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub r1_precision: f64,
    pub r1_recall: f64,
    pub r1_f1: f64,
    pub r2_precision: f64,
    pub r2_recall: f64,
    pub r2_f1: f64,
    pub rl_precision: f64,
    pub rl_recall: f64,
    pub rl_f1: f64,
}

impl EvalRow {
    pub fn new(id: impl Into<String>, t: &RougeTriple) -> Self {
        EvalRow {
            id: id.into(),
            r1_precision: t.r1.precision,
            r1_recall: t.r1.recall,
            r1_f1: t.r1.f1,
            r2_precision: t.r2.precision,
            r2_recall: t.r2.recall,
            r2_f1: t.r2.f1,
            rl_precision: t.rl.precision,
            rl_recall: t.rl.recall,
            rl_f1: t.rl.f1,
        }
    }
}

/// Per-example rows labelled by `ids`, followed by the aggregate row.
pub fn evaluation_rows(eval: &Evaluation, ids: &[String]) -> Vec<EvalRow> {
    let mut rows: Vec<EvalRow> = ids
        .iter()
        .zip(&eval.scores)
        .map(|(id, s)| EvalRow::new(id.clone(), s))
        .collect();
    rows.push(EvalRow::new(AGGREGATE, &eval.mean));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metatrain::{LossRecord, StepRecord};

    #[test]
    fn step_records_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let rows = vec![
            StepRecord {
                step: 1,
                inner_loss: 2.5,
                outer_loss: 2.0,
                grad_norm: 0.5,
                seconds: 0.1,
                val_loss: None,
            },
            StepRecord {
                step: 2,
                inner_loss: 2.25,
                outer_loss: 1.5,
                grad_norm: 0.25,
                seconds: 0.2,
                val_loss: Some(1.75),
            },
        ];
        write_csv(&path, &rows).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("step,inner_loss,outer_loss,grad_norm,seconds,val_loss\n"));
        let back: Vec<StepRecord> = read_csv(&path).unwrap();
        assert_eq!(back, rows);

        let losses = vec![LossRecord {
            step: 0,
            loss: 3.0,
            seconds: 0.0,
        }];
        write_csv(&path, &losses).unwrap();
        assert_eq!(read_csv::<LossRecord>(&path).unwrap(), losses);
    }

    #[test]
    fn appended_log_has_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let rows: Vec<LossRecord> = (0..4)
            .map(|i| LossRecord {
                step: i,
                loss: 1.0 / (i + 1) as f64,
                seconds: 0.5,
            })
            .collect();
        let mut log = CsvLog::append(&path).unwrap();
        log.write(&rows[0]).unwrap();
        log.write(&rows[1]).unwrap();
        drop(log);
        let mut log = CsvLog::append(&path).unwrap();
        log.write(&rows[2]).unwrap();
        log.write(&rows[3]).unwrap();
        drop(log);
        assert_eq!(read_csv::<LossRecord>(&path).unwrap(), rows);
        let mut log = CsvLog::create(&path).unwrap();
        log.write(&rows[0]).unwrap();
        drop(log);
        assert_eq!(read_csv::<LossRecord>(&path).unwrap(), rows[..1]);
    }

    #[test]
    fn evaluation_report_has_aggregate_last() {
        let a = RougeTriple::score(&[1, 2, 3], &[1, 2, 3]);
        let b = RougeTriple::score(&[1, 2], &[3, 4]);
        let eval = Evaluation {
            hypotheses: vec![vec![1, 2, 3], vec![1, 2]],
            scores: vec![a, b],
            mean: RougeTriple::mean(&[a, b]),
        };
        let rows = evaluation_rows(&eval, &["0".into(), "1".into()]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].id, AGGREGATE);
        assert_eq!(rows[2].r1_f1, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<EvalRow>(&path).unwrap(), rows);
    }
}
