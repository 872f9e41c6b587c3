//! Single-layer LSTM regressor with a scalar input and scalar output.
//!
//! All parameters live in one flat vector. The order is fixed and is also
//! the order used by the binary snapshot format:
//!
//! | block          | shape                | index of `(gate, unit, k)`          |
//! |----------------|----------------------|-------------------------------------|
//! | input weights  | 4 x hidden x 1       | `gate * hidden + unit`              |
//! | recurrent      | 4 x hidden x hidden  | `(gate * hidden + unit) * hidden + k` |
//! | gate biases    | 4 x hidden           | `gate * hidden + unit`              |
//! | output weights | hidden               | `unit`                              |
//! | output bias    | 1                    |                                     |
//!
//! Gates are ordered input, forget, candidate, output. Gates use the logistic
//! sigmoid; the candidate and the cell output use tanh.
//!
//! A snapshot is `hidden_size` as a little-endian `u32` followed by every
//! parameter as a little-endian `f64`, in the order above.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Number of past points the predictor reads.
pub const LOOKBACK: usize = 3;
/// Default number of hidden units.
pub const DEFAULT_HIDDEN: usize = 10;
/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.08;

const GATES: usize = 4;
const INPUT: usize = 0;
const FORGET: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

/// Layout of the flat parameter vector for a given hidden size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    hidden: usize,
}

impl Layout {
    fn w_input(self) -> usize {
        0
    }
    fn w_recurrent(self) -> usize {
        GATES * self.hidden
    }
    fn bias(self) -> usize {
        self.w_recurrent() + GATES * self.hidden * self.hidden
    }
    fn w_out(self) -> usize {
        self.bias() + GATES * self.hidden
    }
    fn b_out(self) -> usize {
        self.w_out() + self.hidden
    }
    fn len(self) -> usize {
        self.b_out() + 1
    }
}

/// Parameters of the predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParameters {
    hidden: usize,
    data: Vec<f64>,
}

/// A gradient with the same shape and ordering as [`LstmParameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    hidden: usize,
    data: Vec<f64>,
}

impl Gradient {
    fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            data: vec![0.0; Layout { hidden }.len()],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&g| g == 0.0)
    }
}

/// Number of scalar parameters for `hidden` hidden units.
pub fn parameter_count(hidden: usize) -> usize {
    Layout { hidden }.len()
}

impl LstmParameters {
    pub fn zeros(hidden: usize) -> Self {
        assert!(hidden >= 1, "hidden size must be at least 1");
        Self {
            hidden,
            data: vec![0.0; parameter_count(hidden)],
        }
    }

    /// Draws every parameter uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(seed: u64, hidden: usize) -> Self {
        let mut model = Self::zeros(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut model.data {
            *w = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        model
    }

    /// Builds parameters from a flat vector in the documented order.
    pub fn from_flat(hidden: usize, data: Vec<f64>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Snapshot("hidden size must be at least 1".into()));
        }
        let expected = parameter_count(hidden);
        if data.len() != expected {
            return Err(Error::Snapshot(format!(
                "expected {expected} parameters for hidden size {hidden}, got {}",
                data.len()
            )));
        }
        Ok(Self { hidden, data })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|w| w.is_finite())
    }

    fn layout(&self) -> Layout {
        Layout {
            hidden: self.hidden,
        }
    }

    /// Applies `self -= step * grad`.
    pub fn descend(&mut self, grad: &Gradient, step: f64) {
        debug_assert_eq!(self.hidden, grad.hidden);
        for (w, g) in self.data.iter_mut().zip(&grad.data) {
            *w -= step * g;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.data.len());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for w in &self.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (head, rest) = bytes
            .split_first_chunk::<4>()
            .ok_or_else(|| Error::Snapshot("missing hidden size".into()))?;
        let hidden = u32::from_le_bytes(*head) as usize;
        if rest.len() % 8 != 0 {
            return Err(Error::Snapshot(format!(
                "parameter block of {} bytes is not a multiple of 8",
                rest.len()
            )));
        }
        let data = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_flat(hidden, data)
    }
}

/// One supervised example: `LOOKBACK` consecutive points and the point after them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub window: [f64; LOOKBACK],
    pub target: f64,
}

impl TrainingPair {
    pub fn new(window: [f64; LOOKBACK], target: f64) -> Self {
        Self { window, target }
    }
}

/// Hyperparameters for online training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub rng_seed: u64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            max_epochs: 50,
            rng_seed: 140,
            early_stop_patience: 3,
            early_stop_min_delta: 1e-6,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be at least 1".into());
        }
        if self.early_stop_patience == 0 {
            problems.push("early_stop_patience must be at least 1".into());
        }
        if self.early_stop_min_delta.is_nan() || self.early_stop_min_delta < 0.0 {
            problems.push(format!(
                "early_stop_min_delta must be non-negative, got {}",
                self.early_stop_min_delta
            ));
        }
        problems
    }
}

/// Activations recorded for one time step, needed by the backward pass.
struct StepCache {
    x: f64,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `GATES * hidden`, same gate order as the parameters.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct Trace {
    steps: Vec<StepCache>,
    h_last: Vec<f64>,
    output: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_window(window: &[f64]) -> Result<()> {
    if window.len() != LOOKBACK {
        return Err(Error::WindowLength {
            expected: LOOKBACK,
            actual: window.len(),
        });
    }
    for (i, &x) in window.iter().enumerate() {
        ensure_finite(x, || format!("window[{i}]"))?;
    }
    Ok(())
}

fn run(model: &LstmParameters, window: &[f64]) -> Trace {
    let hd = model.hidden;
    let lay = model.layout();
    let p = &model.data;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::with_capacity(window.len());

    for &x in window {
        let mut gates = vec![0.0; GATES * hd];
        for gate in 0..GATES {
            for j in 0..hd {
                let row = gate * hd + j;
                let rec = &p[lay.w_recurrent() + row * hd..lay.w_recurrent() + (row + 1) * hd];
                let mut z = p[lay.w_input() + row] * x + p[lay.bias() + row];
                for (w, hk) in rec.iter().zip(&h) {
                    z += w * hk;
                }
                gates[row] = if gate == CANDIDATE { z.tanh() } else { sigmoid(z) };
            }
        }
        let mut c_next = vec![0.0; hd];
        let mut h_next = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for j in 0..hd {
            let i = gates[INPUT * hd + j];
            let f = gates[FORGET * hd + j];
            let g = gates[CANDIDATE * hd + j];
            let o = gates[OUTPUT * hd + j];
            c_next[j] = f * c[j] + i * g;
            tanh_c[j] = c_next[j].tanh();
            h_next[j] = o * tanh_c[j];
        }
        steps.push(StepCache {
            x,
            h_prev: std::mem::replace(&mut h, h_next),
            c_prev: std::mem::replace(&mut c, c_next),
            gates,
            tanh_c,
        });
    }

    let w_out = &p[lay.w_out()..lay.w_out() + hd];
    let output = w_out.iter().zip(&h).map(|(w, hj)| w * hj).sum::<f64>() + p[lay.b_out()];
    Trace {
        steps,
        h_last: h,
        output,
    }
}

/// Predicts the point that follows `window`.
pub fn forward(model: &LstmParameters, window: &[f64]) -> Result<f64> {
    check_window(window)?;
    Ok(run(model, window).output)
}

/// Backpropagates `d_output` (the derivative of some loss with respect to
/// the prediction) through time and returns the parameter gradient.
pub fn backprop(model: &LstmParameters, window: &[f64], d_output: f64) -> Result<Gradient> {
    check_window(window)?;
    let trace = run(model, window);
    Ok(backward(model, &trace, d_output))
}

fn backward(model: &LstmParameters, trace: &Trace, d_output: f64) -> Gradient {
    let hd = model.hidden;
    let lay = model.layout();
    let p = &model.data;
    let mut grad = Gradient::zeros(hd);
    let g = &mut grad.data;

    let mut dh = vec![0.0; hd];
    for j in 0..hd {
        g[lay.w_out() + j] = d_output * trace.h_last[j];
        dh[j] = d_output * p[lay.w_out() + j];
    }
    g[lay.b_out()] = d_output;

    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; GATES * hd];
    for step in trace.steps.iter().rev() {
        for j in 0..hd {
            let i = step.gates[INPUT * hd + j];
            let f = step.gates[FORGET * hd + j];
            let cand = step.gates[CANDIDATE * hd + j];
            let o = step.gates[OUTPUT * hd + j];
            let tc = step.tanh_c[j];

            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            let d_i = dc[j] * cand;
            let d_cand = dc[j] * i;
            let d_f = dc[j] * step.c_prev[j];

            dz[INPUT * hd + j] = d_i * i * (1.0 - i);
            dz[FORGET * hd + j] = d_f * f * (1.0 - f);
            dz[CANDIDATE * hd + j] = d_cand * (1.0 - cand * cand);
            dz[OUTPUT * hd + j] = d_o * o * (1.0 - o);

            dc[j] *= f;
        }

        dh.iter_mut().for_each(|v| *v = 0.0);
        for row in 0..GATES * hd {
            let d = dz[row];
            g[lay.w_input() + row] += d * step.x;
            g[lay.bias() + row] += d;
            let base = lay.w_recurrent() + row * hd;
            for k in 0..hd {
                g[base + k] += d * step.h_prev[k];
                dh[k] += p[base + k] * d;
            }
        }
    }
    grad
}

/// Squared error of one pair.
pub fn pair_loss(model: &LstmParameters, pair: &TrainingPair) -> Result<f64> {
    ensure_finite(pair.target, || "training target".into())?;
    let err = forward(model, &pair.window)? - pair.target;
    Ok(err * err)
}

/// Gradient of the squared error `(prediction - target)^2` for one pair.
pub fn gradient(model: &LstmParameters, pair: &TrainingPair) -> Result<Gradient> {
    ensure_finite(pair.target, || "training target".into())?;
    check_window(&pair.window)?;
    let trace = run(model, &pair.window);
    Ok(backward(model, &trace, 2.0 * (trace.output - pair.target)))
}

/// Mean squared error over `pairs`.
pub fn mse(model: &LstmParameters, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut total = 0.0;
    for pair in pairs {
        total += pair_loss(model, pair)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Parameters with the lowest loss seen, including the starting point.
    pub params: LstmParameters,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Loss after each completed epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.loss_trace.len()
    }
}

/// Full-batch gradient descent on mean squared error with early stopping.
pub fn train(
    model: &LstmParameters,
    pairs: &[TrainingPair],
    cfg: &TrainingConfig,
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems.join("; ")));
    }
    for pair in pairs {
        check_window(&pair.window)?;
        ensure_finite(pair.target, || "training target".into())?;
    }

    let scale = 1.0 / pairs.len() as f64;
    let initial_loss = mse(model, pairs)?;
    if !initial_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            loss: initial_loss,
        });
    }

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_loss = initial_loss;
    let mut reference = initial_loss;
    let mut stale = 0;
    let mut loss_trace = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut batch = Gradient::zeros(model.hidden);
        for pair in pairs {
            let trace = run(&current, &pair.window);
            let g = backward(&current, &trace, 2.0 * (trace.output - pair.target) * scale);
            for (acc, v) in batch.data.iter_mut().zip(&g.data) {
                *acc += v;
            }
        }
        current.descend(&batch, cfg.learning_rate);

        let loss = mse(&current, pairs)?;
        if !loss.is_finite() || !current.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        loss_trace.push(loss);

        if loss < best_loss {
            best_loss = loss;
            best.clone_from(&current);
        }
        if loss < reference - cfg.early_stop_min_delta {
            reference = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok(TrainReport {
        params: best,
        initial_loss,
        best_loss,
        loss_trace,
    })
}
