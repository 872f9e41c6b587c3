//! Reference implementations used as test oracles. None of this shares code
//! with the library.

#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use mvad_core::detector::{Status, Verdict, VariableDetector};
use mvad_core::Result;
use nalgebra::{DMatrix, DVector};

/// LSTM forward pass written with dense matrices.
///
/// `params` follows the flat layout: input weights (4H), recurrent weights
/// (4H x H, row-major), gate biases (4H), output weights (H), output bias.
pub fn lstm_forward(params: &[f64], hidden: usize, window: &[f64]) -> f64 {
    let h4 = 4 * hidden;
    let w_x = DVector::from_column_slice(&params[..h4]);
    let w_h = DMatrix::from_row_slice(h4, hidden, &params[h4..h4 + h4 * hidden]);
    let off = h4 + h4 * hidden;
    let bias = DVector::from_column_slice(&params[off..off + h4]);
    let w_y = DVector::from_column_slice(&params[off + h4..off + h4 + hidden]);
    let b_y = params[off + h4 + hidden];

    let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut h = DVector::zeros(hidden);
    let mut c = DVector::zeros(hidden);
    for &x in window {
        let z = &w_x * x + &w_h * &h + &bias;
        let i = z.rows(0, hidden).map(sigma);
        let f = z.rows(hidden, hidden).map(sigma);
        let g = z.rows(2 * hidden, hidden).map(f64::tanh);
        let o = z.rows(3 * hidden, hidden).map(sigma);
        c = f.component_mul(&c) + i.component_mul(&g);
        h = o.component_mul(&c.map(f64::tanh));
    }
    w_y.dot(&h) + b_y
}

/// Squared error of the oracle forward pass.
pub fn lstm_loss(params: &[f64], hidden: usize, window: &[f64], target: f64) -> f64 {
    let e = lstm_forward(params, hidden, window) - target;
    e * e
}

/// Central finite-difference gradient of [`lstm_loss`].
pub fn numeric_gradient(params: &[f64], hidden: usize, window: &[f64], target: f64, h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = lstm_loss(&p, hidden, window, target);
            p[k] = orig - h;
            let down = lstm_loss(&p, hidden, window, target);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Two-pass Pearson correlation over full slices; `None` for fewer than two
/// points or a constant series.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// The correlation window at time `t`: the last `min(t, p)` points before `t`.
pub fn window(series: &[f64], t: usize, p: usize) -> &[f64] {
    &series[t.saturating_sub(p)..t]
}

/// Output of one successful poll: `(seed, L_var, L_data)`.
pub type PollOutput = (usize, Vec<usize>, Vec<f64>);

/// Line-by-line transcription of the polling procedure for one
/// time point. `anomalous[x]` is the detector result of variable x, `e[a][b]`
/// the correlation coefficient (`None` when undefined).
pub fn polling_interpreter(
    anomalous: &[bool],
    values: &[f64],
    e: &[Vec<Option<f64>>],
    thd_pos: f64,
) -> Vec<PollOutput> {
    let n = anomalous.len();
    let thd_neg = -thd_pos;
    let mut output = Vec::new();
    // lines 1-2
    let mut a_list: Vec<usize> = Vec::new();
    let mut l_var: Vec<usize>;
    let mut l_data: Vec<f64>;
    let mut c_agree: usize;
    let mut c_disagree: usize;
    // lines 7-10
    for x in 0..n {
        if anomalous[x] {
            a_list.push(x);
        }
    }
    // line 11
    if !a_list.is_empty() {
        // line 12
        for y in 0..a_list.len() {
            // line 13
            c_agree = 1;
            c_disagree = 0;
            l_var = Vec::new();
            l_data = Vec::new();
            // lines 14-15
            let a = a_list[y];
            l_var.push(a);
            l_data.push(values[a]);
            // lines 16-18
            for z in 0..n {
                if z != a {
                    let b = z;
                    // lines 19-21
                    let e_ab = e[a][b];
                    let high = match e_ab {
                        Some(v) => v >= thd_pos || v <= thd_neg,
                        None => false,
                    };
                    if high {
                        // lines 22-26
                        if anomalous[b] {
                            c_agree += 1;
                            l_data.push(values[b]);
                            l_var.push(b);
                        } else {
                            c_disagree += 1;
                        }
                    }
                }
            }
            // lines 27-29
            if c_agree > c_disagree && c_agree + c_disagree > 1 {
                output.push((a, l_var.clone(), l_data.clone()));
            }
        }
    }
    // line 31
    a_list.clear();
    output
}

/// Detector whose verdict is whatever status the test last stored.
#[derive(Clone)]
pub struct Puppet {
    pub id: usize,
    pub status: Arc<Mutex<Status>>,
}

impl Puppet {
    pub fn set(&self, status: Status) {
        *self.status.lock().unwrap() = status;
    }
}

impl VariableDetector for Puppet {
    fn step(&mut self, value: f64, t: u64) -> Result<Verdict> {
        let status = *self.status.lock().unwrap();
        Ok(Verdict {
            time_point: t,
            variable_id: self.id,
            value,
            status,
            prediction: None,
            error: None,
            aare: None,
            threshold: None,
            retrained: status == Status::Anomalous,
        })
    }
}

pub fn puppets(n: usize) -> Vec<Puppet> {
    (0..n)
        .map(|id| Puppet {
            id,
            status: Arc::new(Mutex::new(Status::Normal)),
        })
        .collect()
}

/// Resident set size of this process in bytes, from `/proc/self/statm`.
pub fn resident_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = text.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}
