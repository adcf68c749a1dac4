//! Metric files and summary statistics.
//!
//! All files are UTF-8 CSV with LF line endings and a header row. Floats are
//! written in shortest round-trip form so every file re-parses to the exact
//! values that produced it.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "episode,total_reward,loss,epsilon,wall_ms";

/// One training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub total_reward: f64,
    /// Empty when no train step ran during the episode.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub wall_ms: f64,
}

/// Bucketed means of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// First episode of the bucket.
    pub episode_bucket: usize,
    pub mean_reward: f64,
    pub mean_loss: Option<f64>,
}

/// Mean greedy expected reward over the fixed evaluation users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Training episodes completed before this evaluation.
    pub episode: usize,
    pub mean_expected_reward: f64,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        reason: e.to_string(),
    }
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], header: &str, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header.split(','))
        .map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned, R: Read>(input: R, header: &str) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if found.join(",") != header {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header `{header}`, found `{}`", found.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    write_csv(rows, METRICS_HEADER, out)
}

/// Parses a metrics file; episode indices must run contiguously from 0.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let rows: Vec<MetricsRow> = read_csv(input, METRICS_HEADER)?;
    for (i, row) in rows.iter().enumerate() {
        if row.episode != i {
            return Err(Error::Parse {
                line: i as u64 + 2,
                reason: format!("expected episode {i}, found {}", row.episode),
            });
        }
    }
    Ok(rows)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_metrics_csv(std::fs::File::open(path)?)
}

pub const CURVES_HEADER: &str = "episode_bucket,mean_reward,mean_loss";

/// Means over consecutive buckets of `bucket` episodes; the last bucket may
/// be shorter. Loss means skip episodes without a loss.
pub fn export_curves(rows: &[MetricsRow], bucket: usize) -> Result<Vec<CurveRow>> {
    if bucket == 0 {
        return Err(Error::config("bucket", "must be positive"));
    }
    Ok(rows
        .chunks(bucket)
        .map(|chunk| {
            let losses: Vec<f64> = chunk.iter().filter_map(|r| r.loss).collect();
            CurveRow {
                episode_bucket: chunk[0].episode,
                mean_reward: chunk.iter().map(|r| r.total_reward).sum::<f64>() / chunk.len() as f64,
                mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            }
        })
        .collect())
}

pub fn write_curves_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    write_csv(rows, CURVES_HEADER, out)
}

pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<CurveRow>> {
    read_csv(input, CURVES_HEADER)
}

pub const EVAL_CURVE_HEADER: &str = "episode,mean_expected_reward";

pub fn write_eval_curve_csv<W: Write>(rows: &[EvalPoint], out: W) -> Result<()> {
    write_csv(rows, EVAL_CURVE_HEADER, out)
}

pub fn read_eval_curve_csv<R: Read>(input: R) -> Result<Vec<EvalPoint>> {
    read_csv(input, EVAL_CURVE_HEADER)
}

/// Mann-Whitney AUC: the probability that a positive outscores a negative,
/// ties counting one half.
pub fn compute_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc("labels contain a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of midranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(episode: usize, reward: f64, loss: Option<f64>) -> MetricsRow {
        MetricsRow {
            episode,
            total_reward: reward,
            loss,
            epsilon: 0.5,
            wall_ms: 1.25,
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(compute_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.4; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(compute_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(matches!(compute_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc(_))));
    }

    #[test]
    fn metrics_csv_format_and_roundtrip() {
        let rows = vec![row(0, -0.1, None), row(1, 1.0, Some(0.123456789))];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,-0.1,,0.5,1.25");
        assert!(!text.contains('\r'));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);

        let empty: Vec<MetricsRow> = Vec::new();
        let mut buf = Vec::new();
        write_metrics_csv(&empty, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), format!("{METRICS_HEADER}\n"));
        assert!(read_metrics_csv(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = format!("{METRICS_HEADER}\n0,1,,0.5,1\n1,oops,,0.5,1\n");
        match read_metrics_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let gap = format!("{METRICS_HEADER}\n0,1,,0.5,1\n2,1,,0.5,1\n");
        assert!(matches!(read_metrics_csv(gap.as_bytes()), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read_metrics_csv("a,b\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn curve_buckets() {
        let rows: Vec<_> = (0..1000).map(|i| row(i, 1.0, (i >= 50).then_some(2.0))).collect();
        let curves = export_curves(&rows, 100).unwrap();
        assert_eq!(curves.len(), 10);
        assert!(curves.iter().all(|c| c.mean_reward == 1.0 && c.mean_loss == Some(2.0)));
        assert_eq!(curves[3].episode_bucket, 300);
        let short = export_curves(&rows[..250], 100).unwrap();
        assert_eq!(short.len(), 3);
        assert!(export_curves(&rows, 0).is_err());

        let mut buf = Vec::new();
        write_curves_csv(&curves, &mut buf).unwrap();
        assert_eq!(read_curves_csv(buf.as_slice()).unwrap(), curves);
    }
}
