//! Labeled synthetic multivariate streams.
//!
//! Variables in a correlated group share one smooth latent signal (a sum of
//! low-frequency sinusoids), each with its own offset, scale and sign, plus
//! independent Gaussian noise. Ungrouped variables get latents of their own.
//! Injected anomalies shift the latent of the chosen variables by
//! `magnitude * amplitude` over `[start, start + length)`, so co-shifted group
//! members stay exactly linearly related.

use std::fmt::Write as _;

use chrono::{Duration as ChronoDuration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::metrics::GroundTruthAnomaly;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedAnomaly {
    pub start: u64,
    pub length: u64,
    /// Zero-based variable indices.
    pub variables: Vec<usize>,
    /// Shift in units of the latent amplitude.
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub variables: usize,
    pub length: usize,
    pub groups: Vec<Vec<usize>>,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub base_level: f64,
    pub components: usize,
    pub min_period: f64,
    pub max_period: f64,
    pub anomalies: Vec<InjectedAnomaly>,
    /// Unlabeled single-point spikes on random variables.
    pub spikes: usize,
    pub spike_magnitude: f64,
    /// Window over which clean group correlation is verified.
    pub correlation_window: usize,
    pub min_correlation: f64,
    /// Seconds between rows in the timestamp column.
    pub step_seconds: i64,
}

impl Default for SyntheticSpec {
    /// Nine variables, 4316 points, one group of four, and four collective
    /// anomalies of 13, 25, 71 and 77 points.
    fn default() -> Self {
        let group = vec![0, 1, 2, 3];
        let with_extra = |extra: &[usize]| -> Vec<usize> {
            group.iter().chain(extra).copied().collect()
        };
        let anomaly = |start, length, variables| InjectedAnomaly {
            start,
            length,
            variables,
            magnitude: 15.0,
        };
        Self {
            variables: 9,
            length: 4316,
            groups: vec![group.clone()],
            amplitude: 1.0,
            noise_sigma: 0.01,
            base_level: 10.0,
            components: 3,
            min_period: 240.0,
            max_period: 1440.0,
            anomalies: vec![
                anomaly(605, 13, with_extra(&[8])),
                anomaly(735, 25, (0..9).collect()),
                anomaly(3488, 71, with_extra(&[8])),
                anomaly(4213, 77, with_extra(&[8])),
            ],
            spikes: 0,
            spike_magnitude: 5.0,
            correlation_window: 2880,
            min_correlation: 0.95,
            step_seconds: 60,
        }
    }
}

/// A generated data set.
#[derive(Clone, Debug)]
pub struct SyntheticSeries {
    pub names: Vec<String>,
    pub timestamps: Vec<String>,
    /// `values[t][v]`.
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<GroundTruthAnomaly>,
    /// Lowest clean-window pairwise correlation per group, by absolute value.
    pub group_correlation: Vec<f64>,
}

impl SyntheticSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (ts, row) in self.timestamps.iter().zip(&self.values) {
            out.push_str(ts);
            for v in row {
                write!(out, ",{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn labels_csv(&self) -> String {
        let mut buf = Vec::new();
        super::metrics::write_labels(&mut buf, &self.labels).expect("write to memory");
        String::from_utf8(buf).expect("labels are UTF-8")
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.variables < 2 {
            return bad(format!("need at least 2 variables, got {}", self.variables));
        }
        if self.length < 10 {
            return bad(format!("length must be at least 10, got {}", self.length));
        }
        if self.groups.is_empty() {
            return bad("at least one correlated group is required".into());
        }
        let mut owner = vec![false; self.variables];
        for g in &self.groups {
            if g.len() < 2 {
                return bad(format!("group {g:?} needs at least two variables"));
            }
            for &v in g {
                if v >= self.variables {
                    return bad(format!("group variable {v} out of range"));
                }
                if std::mem::replace(&mut owner[v], true) {
                    return bad(format!("variable {v} appears in more than one group"));
                }
            }
        }
        if self.components == 0 || !(self.min_period > 0.0 && self.max_period >= self.min_period) {
            return bad("need at least one component and 0 < min_period <= max_period".into());
        }
        if !(self.noise_sigma >= 0.0 && self.amplitude > 0.0) {
            return bad("noise_sigma must be >= 0 and amplitude > 0".into());
        }
        if self.correlation_window < 2 || !(self.min_correlation > 0.0 && self.min_correlation <= 1.0) {
            return bad("correlation_window must be >= 2 and min_correlation in (0, 1]".into());
        }
        let mut spans: Vec<(u64, u64)> = Vec::new();
        for a in &self.anomalies {
            if a.length == 0 || a.start + a.length > self.length as u64 {
                return bad(format!("anomaly at {} of length {} does not fit", a.start, a.length));
            }
            if a.variables.is_empty() || a.variables.iter().any(|&v| v >= self.variables) {
                return bad(format!("anomaly at {} has invalid variables", a.start));
            }
            spans.push((a.start, a.start + a.length - 1));
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 <= w[0].1) {
            return bad("injected anomalies overlap".into());
        }
        Ok(())
    }

    /// Generates the series, failing if any group's clean correlation falls
    /// below `min_correlation`.
    pub fn generate(&self, seed: u64) -> Result<SyntheticSeries> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.variables;
        let len = self.length;

        let mut group_of = vec![None; n];
        for (g, members) in self.groups.iter().enumerate() {
            for &v in members {
                group_of[v] = Some(g);
            }
        }
        let latent_count = self.groups.len() + group_of.iter().filter(|g| g.is_none()).count();
        let latents: Vec<Vec<f64>> = (0..latent_count).map(|_| self.latent(&mut rng)).collect();
        let mut next_own = self.groups.len();
        let latent_of: Vec<usize> = group_of
            .iter()
            .map(|g| {
                g.unwrap_or_else(|| {
                    next_own += 1;
                    next_own - 1
                })
            })
            .collect();

        // Per-variable offset and signed scale; the last member of each group
        // of three or more is inverted.
        let mut offset = vec![0.0; n];
        let mut scale = vec![0.0; n];
        for v in 0..n {
            offset[v] = self.base_level * rng.random_range(1.0..2.0);
            scale[v] = rng.random_range(0.5..1.5);
        }
        for g in &self.groups {
            if g.len() >= 3 {
                let last = *g.last().expect("non-empty group");
                scale[last] = -scale[last];
            }
        }

        let noise = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut values: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                (0..n)
                    .map(|v| {
                        let eps = if self.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        offset[v] + scale[v] * latents[latent_of[v]][t] + eps
                    })
                    .collect()
            })
            .collect();

        let group_correlation = self.verify_groups(&values)?;

        for a in &self.anomalies {
            for t in a.start..a.start + a.length {
                for &v in &a.variables {
                    values[t as usize][v] += scale[v] * a.magnitude * self.amplitude;
                }
            }
        }
        for _ in 0..self.spikes {
            let t = rng.random_range(0..len);
            let v = rng.random_range(0..n);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            values[t][v] += sign * self.spike_magnitude * self.amplitude;
        }

        let names = (1..=n).map(|i| format!("V{i}")).collect::<Vec<_>>();
        let labels = self
            .anomalies
            .iter()
            .map(|a| {
                let mut vars = a.variables.clone();
                vars.sort_unstable();
                vars.dedup();
                GroundTruthAnomaly {
                    start: a.start,
                    end: a.start + a.length - 1,
                    variables: vars.iter().map(|&v| names[v].clone()).collect(),
                }
            })
            .collect();
        let origin = NaiveDate::from_ymd_opt(2021, 10, 28)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid origin");
        let timestamps = (0..len)
            .map(|t| timestamp(origin, t as i64 * self.step_seconds))
            .collect();

        Ok(SyntheticSeries {
            names,
            timestamps,
            values,
            labels,
            group_correlation,
        })
    }

    fn latent(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut weights: Vec<f64> = (0..self.components).map(|_| rng.random_range(0.5..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let waves: Vec<(f64, f64, f64)> = weights
            .into_iter()
            .map(|w| {
                let period = rng.random_range(self.min_period..=self.max_period);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (w, period, phase)
            })
            .collect();
        (0..self.length)
            .map(|t| {
                self.amplitude
                    * waves
                        .iter()
                        .map(|&(w, period, phase)| w * (std::f64::consts::TAU * t as f64 / period + phase).sin())
                        .sum::<f64>()
            })
            .collect()
    }

    /// Minimum |r| over all group pairs and all consecutive windows of
    /// `correlation_window` clean points.
    fn verify_groups(&self, values: &[Vec<f64>]) -> Result<Vec<f64>> {
        let window = self.correlation_window.min(values.len());
        let mut result = Vec::with_capacity(self.groups.len());
        for (gi, g) in self.groups.iter().enumerate() {
            let mut worst = f64::INFINITY;
            for chunk in values.chunks(window).filter(|c| c.len() >= 2) {
                for (i, &a) in g.iter().enumerate() {
                    for &b in &g[i + 1..] {
                        let xa: Vec<f64> = chunk.iter().map(|row| row[a]).collect();
                        let xb: Vec<f64> = chunk.iter().map(|row| row[b]).collect();
                        let r = two_pass_pearson(&xa, &xb).map_or(0.0, f64::abs);
                        worst = worst.min(r);
                    }
                }
            }
            if worst < self.min_correlation {
                return Err(Error::Infeasible(format!(
                    "group {gi} reaches |r| = {worst:.4} < {} with noise_sigma = {}",
                    self.min_correlation, self.noise_sigma
                )));
            }
            result.push(worst);
        }
        Ok(result)
    }
}

fn two_pass_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa.sqrt() * sbb.sqrt()))
}

fn timestamp(origin: NaiveDateTime, seconds: i64) -> String {
    (origin + ChronoDuration::seconds(seconds))
        .format("%Y-%m-%dT%H:%M:%S")
        .to_string()
}
