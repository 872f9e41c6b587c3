//! Per-variable online detector.
//!
//! Each point is predicted from the three points before it. The absolute
//! relative error feeds an average (AARE), and a dynamic threshold
//! `mean + 3 * std` is taken over recent AARE values. When the AARE exceeds
//! the threshold the model is retrained on the latest fully observed pair and
//! the point is re-scored; it is flagged only if the retrained model still
//! exceeds the threshold.
//!
//! Bootstrap: points `0..LOOKBACK` are buffered, the first model is trained on
//! the single pair `(0, 1, 2) -> 3` when point 3 arrives, and prediction starts
//! at point 4. Until the threshold is defined (two AARE values) verdicts are
//! [`Status::Pending`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lstm::{self, LstmParameters, TrainingConfig, TrainingPair, DEFAULT_HIDDEN, LOOKBACK};

/// Default length of the AARE and threshold windows.
pub const DEFAULT_WINDOW: usize = 1440;
/// Floor on the relative-error denominator.
pub const RELATIVE_ERROR_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Capacity of the error and AARE histories, and the threshold window.
    pub window: usize,
    /// Number of recent errors averaged into one AARE value.
    pub aare_window: usize,
    pub hidden_size: usize,
    pub training: TrainingConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            aare_window: LOOKBACK,
            hidden_size: DEFAULT_HIDDEN,
            training: TrainingConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = self.training.validate();
        if self.window < 2 {
            problems.push(format!("window must be at least 2, got {}", self.window));
        }
        if self.aare_window == 0 || self.aare_window > self.window {
            problems.push(format!(
                "aare_window must be in 1..={}, got {}",
                self.window, self.aare_window
            ));
        }
        if self.hidden_size == 0 {
            problems.push("hidden_size must be at least 1".into());
        }
        problems
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Normal,
    Anomalous,
}

impl Status {
    pub fn is_anomalous(self) -> bool {
        self == Status::Anomalous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Normal => "normal",
            Status::Anomalous => "anomalous",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    WarmUp,
    Active,
}

/// Outcome of one detector step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub time_point: u64,
    pub variable_id: usize,
    pub value: f64,
    pub status: Status,
    pub prediction: Option<f64>,
    pub error: Option<f64>,
    pub aare: Option<f64>,
    pub threshold: Option<f64>,
    pub retrained: bool,
}

/// Mean of the most recent `min(len, window)` errors.
pub fn compute_aare(errors: &VecDeque<f64>, window: usize) -> Result<f64> {
    if errors.is_empty() || window == 0 {
        return Err(Error::EmptyHistory);
    }
    let n = errors.len().min(window);
    let sum: f64 = errors.iter().skip(errors.len() - n).sum();
    Ok(sum / n as f64)
}

/// `mean + 3 * std` (population) over the most recent `min(len, window)` AARE
/// values; `None` with fewer than two values.
pub fn compute_threshold(aares: &VecDeque<f64>, window: usize) -> Option<f64> {
    let n = aares.len().min(window);
    if n < 2 {
        return None;
    }
    let recent = || aares.iter().skip(aares.len() - n);
    let mean = recent().sum::<f64>() / n as f64;
    let var = recent().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    Some(mean + 3.0 * var.sqrt())
}

fn relative_error(actual: f64, predicted: f64) -> f64 {
    (actual - predicted).abs() / actual.abs().max(RELATIVE_ERROR_EPSILON)
}

fn push_bounded(buf: &mut VecDeque<f64>, value: f64, capacity: usize) {
    if buf.len() == capacity {
        buf.pop_front();
    }
    buf.push_back(value);
}

/// Anything that turns a variable's stream into per-point verdicts.
pub trait VariableDetector: Send {
    fn step(&mut self, value: f64, t: u64) -> Result<Verdict>;
}

/// State of one variable's detector.
#[derive(Clone, Debug)]
pub struct DetectorState {
    variable_id: usize,
    config: DetectorConfig,
    model: LstmParameters,
    /// Last `LOOKBACK + 1` points, oldest first.
    recent: VecDeque<f64>,
    errors: VecDeque<f64>,
    aares: VecDeque<f64>,
    seen: u64,
    retrain_count: u64,
    last_verdict: Option<Verdict>,
}

impl DetectorState {
    pub fn new(variable_id: usize, config: DetectorConfig) -> Result<Self> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems.join("; ")));
        }
        let model = LstmParameters::init(config.training.rng_seed, config.hidden_size);
        Ok(Self {
            variable_id,
            model,
            recent: VecDeque::with_capacity(LOOKBACK + 1),
            errors: VecDeque::with_capacity(config.window),
            aares: VecDeque::with_capacity(config.window),
            seen: 0,
            retrain_count: 0,
            last_verdict: None,
            config,
        })
    }

    pub fn variable_id(&self) -> usize {
        self.variable_id
    }

    pub fn model(&self) -> &LstmParameters {
        &self.model
    }

    pub fn phase(&self) -> Phase {
        if self.seen < (LOOKBACK + 1) as u64 {
            Phase::WarmUp
        } else {
            Phase::Active
        }
    }

    pub fn error_history(&self) -> &VecDeque<f64> {
        &self.errors
    }

    pub fn aare_history(&self) -> &VecDeque<f64> {
        &self.aares
    }

    pub fn points_seen(&self) -> u64 {
        self.seen
    }

    pub fn retrain_count(&self) -> u64 {
        self.retrain_count
    }

    pub fn last_verdict(&self) -> Option<&Verdict> {
        self.last_verdict.as_ref()
    }

    fn window_before_current(&self) -> [f64; LOOKBACK] {
        let skip = self.recent.len() - LOOKBACK;
        let mut w = [0.0; LOOKBACK];
        for (slot, &v) in w.iter_mut().zip(self.recent.iter().skip(skip)) {
            *slot = v;
        }
        w
    }

    fn retrain(&mut self, pair: TrainingPair) -> Result<()> {
        let report = lstm::train(&self.model, &[pair], &self.config.training)?;
        self.model = report.params;
        self.retrain_count += 1;
        Ok(())
    }

    /// Scores `value` observed at time point `t`.
    pub fn step(&mut self, value: f64, t: u64) -> Result<Verdict> {
        if t != self.seen {
            return Err(Error::OutOfOrder {
                variable: self.variable_id,
                expected: self.seen,
                actual: t,
            });
        }
        ensure_finite(value, || format!("variable {} at T={t}", self.variable_id))?;
        let verdict = self.score(value, t)?;
        push_bounded(&mut self.recent, value, LOOKBACK + 1);
        self.seen += 1;
        self.last_verdict = Some(verdict.clone());
        Ok(verdict)
    }

    fn score(&mut self, value: f64, t: u64) -> Result<Verdict> {
        let mut verdict = Verdict {
            time_point: t,
            variable_id: self.variable_id,
            value,
            status: Status::Pending,
            prediction: None,
            error: None,
            aare: None,
            threshold: None,
            retrained: false,
        };

        let lookback = LOOKBACK as u64;
        if t < lookback {
            return Ok(verdict);
        }
        if t == lookback {
            let window = self.window_before_current();
            self.retrain(TrainingPair::new(window, value))?;
            verdict.retrained = true;
            return Ok(verdict);
        }

        let window = self.window_before_current();
        let cap = self.config.window;
        let prediction = lstm::forward(&self.model, &window)?;
        let error = relative_error(value, prediction);
        push_bounded(&mut self.errors, error, cap);
        let aare = compute_aare(&self.errors, self.config.aare_window)?;
        push_bounded(&mut self.aares, aare, cap);
        let threshold = compute_threshold(&self.aares, cap);
        verdict.prediction = Some(prediction);
        verdict.error = Some(error);
        verdict.aare = Some(aare);
        verdict.threshold = threshold;

        let Some(threshold) = threshold else {
            return Ok(verdict);
        };
        if aare <= threshold {
            verdict.status = Status::Normal;
            return Ok(verdict);
        }

        // Latest fully observed pair: (T-4, T-3, T-2) -> T-1.
        let r = &self.recent;
        let pair = TrainingPair::new([r[0], r[1], r[2]], r[3]);
        self.retrain(pair)?;
        verdict.retrained = true;

        let prediction = lstm::forward(&self.model, &window)?;
        let error = relative_error(value, prediction);
        *self.errors.back_mut().expect("error pushed above") = error;
        let aare = compute_aare(&self.errors, self.config.aare_window)?;
        *self.aares.back_mut().expect("aare pushed above") = aare;
        let threshold = compute_threshold(&self.aares, cap).expect("at least two AARE values");

        verdict.prediction = Some(prediction);
        verdict.error = Some(error);
        verdict.aare = Some(aare);
        verdict.threshold = Some(threshold);
        verdict.status = if aare > threshold {
            Status::Anomalous
        } else {
            Status::Normal
        };
        Ok(verdict)
    }
}

impl VariableDetector for DetectorState {
    fn step(&mut self, value: f64, t: u64) -> Result<Verdict> {
        DetectorState::step(self, value, t)
    }
}
