//! End-to-end runs: source -> coordinator -> sinks, with per-sample latency.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coordinator::{Coordinator, MultivariateSample};
use crate::correlation;
use crate::detector::{DetectorConfig, VariableDetector};
use crate::error::{Error, Result};
use crate::ingestion::{self, SourceConfig};
use crate::output::{PlotWriter, ReportWriter, StepSink, TraceWriter};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Reports file; stdout when absent.
    pub reports: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Include per-seed poll results in each report.
    pub verbose: bool,
}

/// Full configuration of a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub source: SourceConfig,
    /// Correlation window `p`.
    pub correlation_window: usize,
    pub thd_pos: f64,
    pub detector: DetectorConfig,
    pub output: OutputConfig,
    /// Samples buffered between the source thread and the coordinator.
    pub channel_bound: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::default(),
            correlation_window: correlation::DEFAULT_WINDOW,
            thd_pos: correlation::DEFAULT_THD_POS,
            detector: DetectorConfig::default(),
            output: OutputConfig::default(),
            channel_bound: 64,
        }
    }
}

impl RunConfig {
    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if !(self.thd_pos > 0.0 && self.thd_pos <= 1.0) {
            problems.push(format!("thd_pos must be in (0, 1], got {}", self.thd_pos));
        }
        if self.correlation_window < 2 {
            problems.push(format!(
                "correlation_window (p) must be at least 2, got {}",
                self.correlation_window
            ));
        }
        problems.extend(self.detector.validate());
        if self.source.location.is_empty() {
            problems.push("source location is empty".into());
        }
        if self.channel_bound == 0 {
            problems.push("channel_bound must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

/// Running mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_seconds: f64,
    #[serde(skip)]
    m2: f64,
    pub max_seconds: f64,
}

impl LatencyStats {
    pub fn record(&mut self, seconds: f64) {
        self.count += 1;
        let delta = seconds - self.mean_seconds;
        self.mean_seconds += delta / self.count as f64;
        self.m2 += delta * (seconds - self.mean_seconds);
        self.max_seconds = self.max_seconds.max(seconds);
    }

    pub fn std_seconds(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: u64,
    pub reports: u64,
    pub anomalous_verdicts: u64,
    pub retrains: u64,
    pub latency: LatencyStats,
    pub latency_std_seconds: f64,
    pub elapsed_seconds: f64,
    /// True when the run ended on a stop request rather than end of input.
    pub interrupted: bool,
}

/// Drives `coordinator` over `samples`, handing each step to every sink
/// before the next sample is pulled.
pub fn run_stream<D, I>(
    coordinator: &mut Coordinator<D>,
    samples: I,
    sinks: &mut [&mut dyn StepSink],
    stop: Option<&AtomicBool>,
) -> Result<RunSummary>
where
    D: VariableDetector,
    I: IntoIterator<Item = Result<MultivariateSample>>,
{
    let started = Instant::now();
    let mut summary = RunSummary::default();
    let mut samples = samples.into_iter();
    loop {
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            summary.interrupted = true;
            break;
        }
        let Some(sample) = samples.next() else { break };
        let received = Instant::now();
        let sample = sample?;
        let outcome = coordinator.process_timestep(&sample)?;
        for sink in sinks.iter_mut() {
            sink.on_step(&outcome)?;
        }
        summary.latency.record(received.elapsed().as_secs_f64());
        summary.samples += 1;
        summary.reports += outcome.reports.len() as u64;
        for v in &outcome.verdicts {
            summary.anomalous_verdicts += u64::from(v.status.is_anomalous());
            summary.retrains += u64::from(v.retrained);
        }
    }
    for sink in sinks.iter_mut() {
        sink.finish()?;
    }
    summary.latency_std_seconds = summary.latency.std_seconds();
    summary.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(summary)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Opens the configured source and outputs and runs to end of input (or
/// until `stop` is set). `extra` sinks see every step after the file sinks.
pub fn run(
    config: &RunConfig,
    extra: &mut [&mut dyn StepSink],
    stop: Option<&AtomicBool>,
) -> Result<RunSummary> {
    config
        .validate()
        .map_err(|problems| Error::InvalidConfig(problems.join("; ")))?;

    let source = ingestion::open(&config.source)?;
    let names = source.variable_names().to_vec();
    let mut coordinator = Coordinator::with_defaults(
        names.len(),
        &config.detector,
        config.correlation_window,
        config.thd_pos,
    )?;

    let out = &config.output;
    let report_out: Box<dyn std::io::Write> = match &out.reports {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout()),
    };
    let mut reports = ReportWriter::new(report_out, names.clone(), out.verbose);
    let mut trace = out
        .trace
        .as_ref()
        .map(|p| TraceWriter::new(create(p)?, names.clone()))
        .transpose()?;
    let mut plot = out
        .plot
        .as_ref()
        .map(|p| PlotWriter::new(create(p)?, names.clone()))
        .transpose()?;

    let mut sinks: Vec<&mut dyn StepSink> = vec![&mut reports];
    if let Some(t) = trace.as_mut() {
        sinks.push(t);
    }
    if let Some(p) = plot.as_mut() {
        sinks.push(p);
    }
    for s in extra.iter_mut() {
        sinks.push(&mut **s);
    }

    let (rx, handle) = ingestion::spawn_source(source, config.channel_bound);
    let summary = run_stream(&mut coordinator, rx.iter(), &mut sinks, stop)?;
    if !summary.interrupted {
        handle
            .join()
            .map_err(|_| Error::Stream(std::io::Error::other("source thread panicked")))?;
    }

    if let Some(path) = &out.summary {
        let mut f = create(path)?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        std::io::Write::write_all(&mut f, b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(summary)
}
