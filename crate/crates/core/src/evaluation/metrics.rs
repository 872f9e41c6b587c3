use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance, in time points, for matching detections to labels.
pub const DEFAULT_K: u64 = 7;

/// A labeled anomaly covering time points `start ..= end`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAnomaly {
    pub start: u64,
    pub end: u64,
    pub variables: Vec<String>,
}

impl GroundTruthAnomaly {
    pub fn point_count(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_collective(&self) -> bool {
        self.end > self.start
    }

    /// Detections inside this inclusive range count as hits: `[Z-K, Z+K]` for
    /// a point anomaly and `[I-K, J]` for a collective one.
    pub fn detection_window(&self, k: u64) -> (u64, u64) {
        let lo = self.start.saturating_sub(k);
        if self.is_collective() {
            (lo, self.end)
        } else {
            (lo, self.start + k)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// `None` when the denominator is zero.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
}

impl MetricsResult {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_score,
        }
    }
}

impl fmt::Display for MetricsResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
        write!(
            f,
            "TP={} FP={} FN={} precision={} recall={} f_score={}",
            self.tp,
            self.fp,
            self.fn_,
            show(self.precision),
            show(self.recall),
            show(self.f_score)
        )
    }
}

fn validated(truth: &[GroundTruthAnomaly]) -> Result<Vec<&GroundTruthAnomaly>> {
    let mut sorted: Vec<&GroundTruthAnomaly> = truth.iter().collect();
    for a in &sorted {
        if a.end < a.start {
            return Err(Error::InvalidConfig(format!(
                "ground-truth interval [{}, {}] ends before it starts",
                a.start, a.end
            )));
        }
    }
    sorted.sort_by_key(|a| (a.start, a.end));
    for pair in sorted.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(Error::OverlappingTruth {
                first: (pair[0].start, pair[0].end),
                second: (pair[1].start, pair[1].end),
            });
        }
    }
    Ok(sorted)
}

/// Scores detected time points against labels.
///
/// TP and FN count labeled points of detected and missed anomalies; FP counts
/// detected time points that fall in no anomaly's detection window. Repeated
/// time points are counted once.
pub fn match_detections(
    detections: &[u64],
    truth: &[GroundTruthAnomaly],
    k: u64,
) -> Result<MetricsResult> {
    let truth = validated(truth)?;
    let mut times = detections.to_vec();
    times.sort_unstable();
    times.dedup();

    let windows: Vec<(u64, u64)> = truth.iter().map(|a| a.detection_window(k)).collect();
    let hit = |&(lo, hi): &(u64, u64)| {
        let i = times.partition_point(|&t| t < lo);
        i < times.len() && times[i] <= hi
    };
    let (mut tp, mut fn_) = (0, 0);
    for (a, w) in truth.iter().zip(&windows) {
        if hit(w) {
            tp += a.point_count();
        } else {
            fn_ += a.point_count();
        }
    }
    let fp = times
        .iter()
        .filter(|&&t| !windows.iter().any(|&(lo, hi)| lo <= t && t <= hi))
        .count() as u64;
    Ok(MetricsResult::from_counts(tp, fp, fn_))
}

/// What a false positive is counted over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpUnit {
    /// One per reported time point outside every detection window.
    #[default]
    TimePoint,
    /// One per (time point, involved variable) outside every detection window.
    VariablePoint,
}

/// A reported time point and the variables it names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub t: u64,
    pub variables: Vec<String>,
}

/// [`match_detections`] over full reports, with a choice of FP unit. TP and
/// FN do not depend on the unit.
pub fn match_reports(
    detections: &[Detection],
    truth: &[GroundTruthAnomaly],
    k: u64,
    unit: FpUnit,
) -> Result<MetricsResult> {
    let times: Vec<u64> = detections.iter().map(|d| d.t).collect();
    let by_time = match_detections(&times, truth, k)?;
    if unit == FpUnit::TimePoint {
        return Ok(by_time);
    }
    let windows: Vec<(u64, u64)> = truth.iter().map(|a| a.detection_window(k)).collect();
    let stray: std::collections::BTreeSet<(u64, &str)> = detections
        .iter()
        .filter(|d| !windows.iter().any(|&(lo, hi)| lo <= d.t && d.t <= hi))
        .flat_map(|d| d.variables.iter().map(move |v| (d.t, v.as_str())))
        .collect();
    Ok(MetricsResult::from_counts(by_time.tp, stray.len() as u64, by_time.fn_))
}

/// False positives of joint reports and of the union of standalone verdicts.
pub fn compare_fp(
    joint: &[u64],
    individual: &[u64],
    truth: &[GroundTruthAnomaly],
    k: u64,
) -> Result<(u64, u64)> {
    Ok((
        match_detections(joint, truth, k)?.fp,
        match_detections(individual, truth, k)?.fp,
    ))
}

/// Writes labels as `start,end,variables` with variables joined by `;`.
pub fn write_labels<W: Write>(mut out: W, truth: &[GroundTruthAnomaly]) -> Result<()> {
    writeln!(out, "start,end,variables")?;
    for a in truth {
        writeln!(out, "{},{},{}", a.start, a.end, a.variables.join(";"))?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(input: R) -> Result<Vec<GroundTruthAnomaly>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (line_no == 1 && line.starts_with("start")) {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut fields = line.splitn(3, ',');
        let mut index = |name: &str| -> Result<u64> {
            let field = fields
                .next()
                .ok_or_else(|| err(format!("missing {name}")))?
                .trim();
            field
                .parse()
                .map_err(|_| err(format!("{name} {field:?} is not a non-negative integer")))
        };
        let start = index("start")?;
        let end = index("end")?;
        if end < start {
            return Err(err(format!("end {end} precedes start {start}")));
        }
        let variables = fields
            .next()
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        out.push(GroundTruthAnomaly {
            start,
            end,
            variables,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anomaly(start: u64, end: u64) -> GroundTruthAnomaly {
        GroundTruthAnomaly {
            start,
            end,
            variables: vec!["a".into()],
        }
    }

    #[test]
    fn metric_arithmetic() {
        let m = MetricsResult::from_counts(186, 66, 0);
        assert!((m.precision.unwrap() - 0.738).abs() < 1e-3);
        assert_eq!(m.recall, Some(1.0));
        assert!((m.f_score.unwrap() - 0.849).abs() < 1e-3);
    }

    #[test]
    fn variable_points_count_each_named_variable() {
        let truth = [anomaly(100, 110)];
        let d = |t, vars: &[&str]| Detection {
            t,
            variables: vars.iter().map(|v| v.to_string()).collect(),
        };
        let reports = [d(50, &["a", "b", "c"]), d(50, &["a"]), d(60, &["b", "c"]), d(105, &["a", "b"])];
        let by_time = match_reports(&reports, &truth, 7, FpUnit::TimePoint).unwrap();
        let by_var = match_reports(&reports, &truth, 7, FpUnit::VariablePoint).unwrap();
        assert_eq!((by_time.tp, by_time.fp, by_time.fn_), (11, 2, 0));
        assert_eq!((by_var.tp, by_var.fp, by_var.fn_), (11, 5, 0));
    }

    #[test]
    fn undefined_metrics() {
        let m = MetricsResult::from_counts(0, 0, 5);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f_score, None);
        let m = MetricsResult::from_counts(0, 3, 0);
        assert_eq!(m.precision, Some(0.0));
        assert_eq!(m.recall, None);
        assert!(m.to_string().contains("recall=undefined"));
    }

    #[test]
    fn point_anomaly_window() {
        let truth = [anomaly(100, 100)];
        assert_eq!(match_detections(&[93], &truth, 7).unwrap().tp, 1);
        let miss = match_detections(&[92], &truth, 7).unwrap();
        assert_eq!((miss.tp, miss.fn_, miss.fp), (0, 1, 1));
        assert_eq!(match_detections(&[107], &truth, 7).unwrap().tp, 1);
        assert_eq!(match_detections(&[108], &truth, 7).unwrap().tp, 0);
    }

    #[test]
    fn collective_anomaly_window() {
        let truth = [anomaly(50, 60)];
        let m = match_detections(&[43], &truth, 7).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (11, 0, 0));
        let m = match_detections(&[61], &truth, 7).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 11));
        let m = match_detections(&[42], &truth, 7).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 11));
    }

    #[test]
    fn duplicate_times_count_once() {
        let m = match_detections(&[5, 5, 9, 9, 9], &[anomaly(50, 60)], 7).unwrap();
        assert_eq!(m.fp, 2);
    }

    #[test]
    fn overlapping_truth_is_rejected() {
        let err = match_detections(&[], &[anomaly(10, 20), anomaly(20, 30)], 7).unwrap_err();
        assert!(matches!(err, Error::OverlappingTruth { .. }));
        assert!(match_detections(&[], &[anomaly(10, 20), anomaly(21, 30)], 7).is_ok());
    }

    #[test]
    fn exact_labels_score_perfectly() {
        let truth = [anomaly(10, 20), anomaly(40, 40)];
        let detections: Vec<u64> = (10..=20).chain([40]).collect();
        let m = match_detections(&detections, &truth, 7).unwrap();
        assert_eq!((m.precision, m.recall), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn compare_fp_without_detections() {
        assert_eq!(compare_fp(&[], &[], &[anomaly(5, 9)], 7).unwrap(), (0, 0));
    }

    #[test]
    fn labels_io() {
        let truth = vec![
            GroundTruthAnomaly {
                start: 3,
                end: 9,
                variables: vec!["x".into(), "y".into()],
            },
            anomaly(20, 20),
        ];
        let mut buf = Vec::new();
        write_labels(&mut buf, &truth).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "start,end,variables\n3,9,x;y\n20,20,a\n");
        assert_eq!(read_labels(&buf[..]).unwrap(), truth);

        let bad = "start,end,variables\n3,9,x\n5,a,y\n";
        match read_labels(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_labels("9,3,x\n".as_bytes()).is_err());
    }
}
