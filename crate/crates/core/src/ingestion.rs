//! Sample sources.
//!
//! Input is UTF-8 comma-separated text: a header line whose first column is
//! the timestamp and whose remaining columns name the variables, followed by
//! one record per line. The same grammar is used for file replay and for
//! live line streams (stdin or TCP).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::path::Path;
use std::sync::mpsc::{self, Receiver};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::coordinator::MultivariateSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// A finite file replayed from start to end.
    CsvReplay,
    /// An open-ended stream: `-` for stdin or `tcp://host:port`.
    LineStream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub location: String,
    /// Minimum gap between consecutive samples; zero replays as fast as possible.
    #[serde(with = "duration_secs")]
    pub interval: Duration,
    pub header_required: bool,
    /// Abort on the first malformed record instead of skipping it.
    pub strict: bool,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::CsvReplay,
            location: String::new(),
            interval: Duration::ZERO,
            header_required: true,
            strict: true,
        }
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Variable names from a header line; the first column is the timestamp.
pub fn parse_header(line: &str) -> Result<Vec<String>> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() {
        return Err(Error::Header("empty header".into()));
    }
    let names: Vec<String> = line.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    if names.is_empty() {
        return Err(Error::Header("no variable columns after the timestamp".into()));
    }
    let mut seen = HashSet::new();
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(Error::Header(format!("column {} has an empty name", i + 2)));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Header(format!("duplicate variable name {name:?}")));
        }
    }
    Ok(names)
}

/// One parsed data line.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub timestamp: String,
    pub values: Vec<f64>,
}

/// Parses a record with exactly `n` finite values after the timestamp.
pub fn parse_record(line: &str, n: usize) -> std::result::Result<RawRecord, String> {
    let line = line.trim_end_matches(['\r', '\n']);
    let mut fields = line.split(',');
    let timestamp = fields.next().unwrap_or_default().trim().to_string();
    let rest: Vec<&str> = fields.collect();
    if rest.len() != n {
        return Err(format!("expected {n} values, found {}", rest.len()));
    }
    let mut values = Vec::with_capacity(n);
    for (i, field) in rest.iter().enumerate() {
        let field = field.trim();
        let v: f64 = field
            .parse()
            .map_err(|_| format!("column {}: cannot parse {field:?} as a number", i + 2))?;
        if !v.is_finite() {
            return Err(format!("column {}: non-finite value {field:?}", i + 2));
        }
        values.push(v);
    }
    Ok(RawRecord { timestamp, values })
}

/// A pull-based, strictly ordered sample stream.
pub trait SampleSource: Send {
    fn variable_names(&self) -> &[String];
    fn next_sample(&mut self) -> Result<Option<MultivariateSample>>;
}

/// Reads records line by line from any buffered reader.
pub struct LineSource<R> {
    reader: R,
    names: Vec<String>,
    /// First record when the stream has no header.
    pending: Option<RawRecord>,
    line_no: usize,
    next_t: u64,
    interval: Duration,
    last_emit: Option<Instant>,
    strict: bool,
    skipped: usize,
}

impl<R: BufRead + Send> LineSource<R> {
    pub fn new(mut reader: R, header_required: bool, strict: bool, interval: Duration) -> Result<Self> {
        let mut line_no = 0;
        let mut line = String::new();
        let (names, pending) = loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                if header_required {
                    return Err(Error::Header("input is empty".into()));
                }
                break (Vec::new(), None);
            }
            line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            if header_required {
                break (parse_header(&line)?, None);
            }
            let n = line.trim_end().split(',').count() - 1;
            let record = parse_record(&line, n).map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?;
            let names = (1..=record.values.len()).map(|i| format!("V{i}")).collect();
            break (names, Some(record));
        };
        Ok(Self {
            reader,
            names,
            pending,
            line_no,
            next_t: 0,
            interval,
            last_emit: None,
            strict,
            skipped: 0,
        })
    }

    /// Records skipped in permissive mode.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn pace(&mut self) {
        if self.interval.is_zero() {
            return;
        }
        if let Some(last) = self.last_emit {
            let due = last + self.interval;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.last_emit = Some(Instant::now());
    }

    fn emit(&mut self, record: RawRecord) -> MultivariateSample {
        self.pace();
        let sample = MultivariateSample {
            t: self.next_t,
            timestamp: record.timestamp,
            values: record.values,
        };
        self.next_t += 1;
        sample
    }
}

impl<R: BufRead + Send> SampleSource for LineSource<R> {
    fn variable_names(&self) -> &[String] {
        &self.names
    }

    fn next_sample(&mut self) -> Result<Option<MultivariateSample>> {
        if let Some(record) = self.pending.take() {
            return Ok(Some(self.emit(record)));
        }
        let mut line = String::new();
        loop {
            line.clear();
            let read = self.reader.read_line(&mut line).map_err(|e| Error::Parse {
                line: self.line_no + 1,
                message: format!("read failed: {e}"),
            })?;
            if read == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(&line, self.names.len()) {
                Ok(record) => return Ok(Some(self.emit(record))),
                Err(message) if self.strict => {
                    return Err(Error::Parse {
                        line: self.line_no,
                        message,
                    })
                }
                Err(message) => {
                    self.skipped += 1;
                    log::warn!(
                        "line {}: skipped ({message}); gap before T={}",
                        self.line_no,
                        self.next_t
                    );
                }
            }
        }
    }
}

/// Opens the source described by `config`.
pub fn open(config: &SourceConfig) -> Result<Box<dyn SampleSource>> {
    let (header, strict, interval) = (config.header_required, config.strict, config.interval);
    let loc = config.location.as_str();
    match config.kind {
        SourceKind::LineStream if loc == "-" => {
            let reader = BufReader::new(std::io::stdin());
            Ok(Box::new(LineSource::new(reader, header, strict, interval)?))
        }
        SourceKind::LineStream if loc.starts_with("tcp://") => {
            let addr = &loc["tcp://".len()..];
            let stream = TcpStream::connect(addr).map_err(|e| Error::io(addr, e))?;
            Ok(Box::new(LineSource::new(BufReader::new(stream), header, strict, interval)?))
        }
        SourceKind::CsvReplay | SourceKind::LineStream => {
            let path = Path::new(loc);
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            Ok(Box::new(LineSource::new(BufReader::new(file), header, strict, interval)?))
        }
    }
}

/// Runs `source` on its own thread, handing samples over a bounded channel.
/// The source blocks when `bound` samples are waiting. The stream ends after
/// the last sample or the first error.
pub fn spawn_source(
    mut source: Box<dyn SampleSource>,
    bound: usize,
) -> (Receiver<Result<MultivariateSample>>, JoinHandle<()>) {
    let (tx, rx) = mpsc::sync_channel(bound);
    let handle = thread::spawn(move || loop {
        match source.next_sample() {
            Ok(Some(sample)) => {
                if tx.send(Ok(sample)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    });
    (rx, handle)
}
