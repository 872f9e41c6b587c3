//! Per-step output sinks.
//!
//! Reports are JSON lines, one per time point with a joint anomaly:
//!
//! ```text
//! {"t":742,"timestamp":"...","variables":["V1","V2"],"values":[13.1,9.4],"seeds":["V1","V2"]}
//! ```
//!
//! With verbose output each line also carries the per-seed poll results
//! under `details`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::coordinator::{AnomalyReport, SeedReport, StepOutcome};
use crate::error::{Error, Result};
use crate::evaluation::Detection;

/// Receives every processed time point.
pub trait StepSink {
    fn on_step(&mut self, outcome: &StepOutcome) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: String,
    pub agree: usize,
    pub disagree: usize,
    pub variables: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub t: u64,
    pub timestamp: String,
    pub variables: Vec<String>,
    pub values: Vec<f64>,
    pub seeds: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Vec<SeedRecord>>,
}

impl ReportRecord {
    pub fn new(report: &AnomalyReport, names: &[String], verbose: bool) -> Self {
        let name = |v: &usize| names[*v].clone();
        let seed = |r: &SeedReport| SeedRecord {
            seed: names[r.seed].clone(),
            agree: r.agree,
            disagree: r.disagree,
            variables: r.variables.iter().map(name).collect(),
            values: r.data.clone(),
        };
        Self {
            t: report.t,
            timestamp: report.timestamp.clone(),
            variables: report.variables.iter().map(name).collect(),
            values: report.values.clone(),
            seeds: report.seeds.iter().map(name).collect(),
            details: verbose.then(|| report.details.iter().map(seed).collect()),
        }
    }
}

/// Writes and flushes each report as soon as its time point is processed.
pub struct ReportWriter<W: Write> {
    out: W,
    names: Vec<String>,
    verbose: bool,
    written: u64,
}

impl<W: Write> ReportWriter<W> {
    pub fn new(out: W, names: Vec<String>, verbose: bool) -> Self {
        Self {
            out,
            names,
            verbose,
            written: 0,
        }
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> StepSink for ReportWriter<W> {
    fn on_step(&mut self, outcome: &StepOutcome) -> Result<()> {
        for report in &outcome.reports {
            let record = ReportRecord::new(report, &self.names, self.verbose);
            serde_json::to_writer(&mut self.out, &record)?;
            self.out.write_all(b"\n")?;
            self.out.flush()?;
            self.written += 1;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per variable per step with the detector internals.
pub struct TraceWriter<W: Write> {
    out: W,
    names: Vec<String>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, names: Vec<String>) -> Result<Self> {
        writeln!(out, "t,variable,value,prediction,error,aare,threshold,status,retrained")?;
        Ok(Self { out, names })
    }
}

impl<W: Write> StepSink for TraceWriter<W> {
    fn on_step(&mut self, outcome: &StepOutcome) -> Result<()> {
        for v in &outcome.verdicts {
            writeln!(
                self.out,
                "{},{},{},{},{},{},{},{},{}",
                v.time_point,
                self.names[v.variable_id],
                v.value,
                opt(v.prediction),
                opt(v.error),
                opt(v.aare),
                opt(v.threshold),
                v.status.as_str(),
                v.retrained
            )?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

/// Plot-ready CSV: standalone status and joint involvement per variable per step.
pub struct PlotWriter<W: Write> {
    out: W,
    names: Vec<String>,
}

impl<W: Write> PlotWriter<W> {
    pub fn new(mut out: W, names: Vec<String>) -> Result<Self> {
        writeln!(out, "t,variable,value,status,joint")?;
        Ok(Self { out, names })
    }
}

impl<W: Write> StepSink for PlotWriter<W> {
    fn on_step(&mut self, outcome: &StepOutcome) -> Result<()> {
        for v in &outcome.verdicts {
            let joint = outcome
                .reports
                .iter()
                .any(|r| r.variables.contains(&v.variable_id));
            writeln!(
                self.out,
                "{},{},{},{},{}",
                v.time_point,
                self.names[v.variable_id],
                v.value,
                v.status.as_str(),
                u8::from(joint)
            )?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

/// Collects detection time points for scoring.
#[derive(Clone, Debug, Default)]
pub struct DetectionLog {
    /// Time points with a joint report.
    pub report_times: Vec<u64>,
    /// Time points where any standalone verdict was anomalous.
    pub individual_times: Vec<u64>,
    pub reports: Vec<AnomalyReport>,
}

impl StepSink for DetectionLog {
    fn on_step(&mut self, outcome: &StepOutcome) -> Result<()> {
        if !outcome.reports.is_empty() {
            self.report_times.push(outcome.t);
            self.reports.extend(outcome.reports.iter().cloned());
        }
        if outcome.verdicts.iter().any(|v| v.status.is_anomalous()) {
            self.individual_times.push(outcome.t);
        }
        Ok(())
    }
}

/// Reads the `t` field of every line of a reports file.
pub fn read_report_times<R: BufRead>(input: R) -> Result<Vec<u64>> {
    Ok(read_report_detections(input)?.into_iter().map(|d| d.t).collect())
}

/// Reads `t` and `variables` of every line of a reports file. A missing
/// `variables` field reads as empty.
pub fn read_report_detections<R: BufRead>(input: R) -> Result<Vec<Detection>> {
    #[derive(Deserialize)]
    struct Partial {
        t: u64,
        #[serde(default)]
        variables: Vec<String>,
    }
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Partial = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(Detection {
            t: rec.t,
            variables: rec.variables,
        });
    }
    Ok(out)
}
