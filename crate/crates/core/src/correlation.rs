//! Windowed Pearson correlation over the most recent `p` points of each variable.
//!
//! At time point `T` the window is every point before `T` when `T < p`, and
//! the `p` points `T-p ..= T-1` otherwise. Callers query the coefficient for
//! `T` before pushing the point observed at `T`, so the window never contains
//! the current point.
//!
//! Sums are maintained incrementally as deviations from a per-variable pivot
//! (an actual data value) with Neumaier-compensated accumulation. Every `p`
//! pushes the pivot moves to the newest value and all sums are rebuilt from
//! the buffers, which bounds drift on open-ended streams at O(1) amortized
//! cost per point.

use std::collections::VecDeque;

use crate::error::{ensure_finite, Error, Result};

/// Default correlation window length.
pub const DEFAULT_WINDOW: usize = 2880;
/// Default high-correlation threshold; the negative threshold is its negation.
pub const DEFAULT_THD_POS: f64 = 0.95;

/// A window whose centered second moment is below this fraction of its raw
/// second moment about the pivot is treated as constant.
const ZERO_VARIANCE_RTOL: f64 = 1e-10;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// The most recent `capacity` points of one variable.
#[derive(Clone, Debug)]
pub struct VariableHistory {
    variable_id: usize,
    capacity: usize,
    buffer: VecDeque<f64>,
    count_seen: u64,
    pivot: f64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl VariableHistory {
    pub fn new(variable_id: usize, capacity: usize) -> Self {
        assert!(capacity >= 1, "history capacity must be at least 1");
        Self {
            variable_id,
            capacity,
            buffer: VecDeque::with_capacity(capacity),
            count_seen: 0,
            pivot: 0.0,
            sum: CompensatedSum::default(),
            sum_sq: CompensatedSum::default(),
        }
    }

    pub fn variable_id(&self) -> usize {
        self.variable_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count_seen(&self) -> u64 {
        self.count_seen
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Buffered values, oldest first.
    pub fn values(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.buffer.iter().copied().collect()
    }

    /// Appends `value`, evicting the oldest point once the buffer is full.
    pub fn push(&mut self, value: f64) -> Result<()> {
        ensure_finite(value, || format!("variable {}", self.variable_id))?;
        self.push_unchecked(value);
        if self.rebase_due() {
            self.rebase();
        }
        Ok(())
    }

    /// Pushes without validation or rebasing; returns the evicted value.
    fn push_unchecked(&mut self, value: f64) -> Option<f64> {
        if self.count_seen == 0 {
            self.pivot = value;
        }
        let evicted = if self.buffer.len() == self.capacity {
            self.buffer.pop_front()
        } else {
            None
        };
        if let Some(old) = evicted {
            let d = old - self.pivot;
            self.sum.add(-d);
            self.sum_sq.add(-d * d);
        }
        let d = value - self.pivot;
        self.sum.add(d);
        self.sum_sq.add(d * d);
        self.buffer.push_back(value);
        self.count_seen += 1;
        evicted
    }

    fn rebase_due(&self) -> bool {
        self.count_seen.is_multiple_of(self.capacity as u64)
    }

    fn rebase(&mut self) {
        self.pivot = *self.buffer.back().expect("rebase on non-empty buffer");
        self.sum = CompensatedSum::default();
        self.sum_sq = CompensatedSum::default();
        for &x in &self.buffer {
            let d = x - self.pivot;
            self.sum.add(d);
            self.sum_sq.add(d * d);
        }
    }

    fn deviation(&self, x: f64) -> f64 {
        x - self.pivot
    }
}

/// Coefficient from deviation sums over `n` points.
fn coefficient(n: usize, sa: f64, saa: f64, sb: f64, sbb: f64, sab: f64) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let n = n as f64;
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va <= ZERO_VARIANCE_RTOL * n * saa || vb <= ZERO_VARIANCE_RTOL * n * sbb {
        return None;
    }
    let r = (n * sab - sa * sb) / (va.sqrt() * vb.sqrt());
    Some(r.clamp(-1.0, 1.0))
}

fn check_window(a: &VariableHistory, b: &VariableHistory, t: u64, p: usize) -> Result<()> {
    if a.count_seen != b.count_seen {
        return Err(Error::HistoryMismatch(format!(
            "variable {} has {} points, variable {} has {}",
            a.variable_id, a.count_seen, b.variable_id, b.count_seen
        )));
    }
    if a.count_seen != t {
        return Err(Error::HistoryMismatch(format!(
            "queried T={t} but histories hold points up to T={}",
            a.count_seen
        )));
    }
    if a.capacity != p || b.capacity != p {
        return Err(Error::HistoryMismatch(format!(
            "window p={p} does not match history capacities {} and {}",
            a.capacity, b.capacity
        )));
    }
    Ok(())
}

/// Pearson coefficient between `a` and `b` at time point `t` over window `p`.
///
/// `t` must equal the number of points each history has ingested. Returns
/// `None` when the window has fewer than two points or either series is
/// constant over it.
pub fn pearson(a: &VariableHistory, b: &VariableHistory, t: u64, p: usize) -> Result<Option<f64>> {
    check_window(a, b, t, p)?;
    let mut sab = CompensatedSum::default();
    for (x, y) in a.buffer.iter().zip(&b.buffer) {
        sab.add(a.deviation(*x) * b.deviation(*y));
    }
    Ok(coefficient(
        a.len(),
        a.sum.value(),
        a.sum_sq.value(),
        b.sum.value(),
        b.sum_sq.value(),
        sab.value(),
    ))
}

/// True iff `e` is defined and `e >= thd_pos` or `e <= -thd_pos`.
pub fn is_highly_correlated(e: Option<f64>, thd_pos: f64) -> bool {
    match e {
        Some(e) => e >= thd_pos || e <= -thd_pos,
        None => false,
    }
}

/// Correlation between a pair of variables at one time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationVerdict {
    pub pair: (usize, usize),
    pub coefficient: Option<f64>,
    pub highly_correlated: bool,
}

impl CorrelationVerdict {
    pub fn new(pair: (usize, usize), coefficient: Option<f64>, thd_pos: f64) -> Self {
        Self {
            pair,
            coefficient,
            highly_correlated: is_highly_correlated(coefficient, thd_pos),
        }
    }
}

/// Histories for all variables plus incrementally maintained cross sums for
/// every unordered pair, so each coefficient costs O(1).
#[derive(Clone, Debug)]
pub struct CorrelationTracker {
    window: usize,
    histories: Vec<VariableHistory>,
    cross: Vec<CompensatedSum>,
}

fn pair_index(n: usize, a: usize, b: usize) -> usize {
    let (i, j) = if a < b { (a, b) } else { (b, a) };
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl CorrelationTracker {
    pub fn new(variables: usize, window: usize) -> Self {
        assert!(window >= 1, "correlation window must be at least 1");
        let pairs = variables * variables.saturating_sub(1) / 2;
        Self {
            window,
            histories: (0..variables)
                .map(|v| VariableHistory::new(v, window))
                .collect(),
            cross: vec![CompensatedSum::default(); pairs],
        }
    }

    pub fn variables(&self) -> usize {
        self.histories.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of samples pushed so far, i.e. the current time point.
    pub fn count_seen(&self) -> u64 {
        self.histories.first().map_or(0, |h| h.count_seen)
    }

    pub fn history(&self, variable: usize) -> &VariableHistory {
        &self.histories[variable]
    }

    pub fn histories(&self) -> &[VariableHistory] {
        &self.histories
    }

    /// Appends one value per variable. Nothing is modified on error.
    pub fn push_sample(&mut self, values: &[f64]) -> Result<()> {
        let n = self.histories.len();
        if values.len() != n {
            return Err(Error::Arity {
                expected: n,
                actual: values.len(),
            });
        }
        for (v, &x) in values.iter().enumerate() {
            ensure_finite(x, || format!("variable {v}"))?;
        }

        let evicted: Vec<Option<f64>> = self
            .histories
            .iter_mut()
            .zip(values)
            .map(|(h, &x)| h.push_unchecked(x))
            .collect();

        for i in 0..n {
            for j in i + 1..n {
                let (hi, hj) = (&self.histories[i], &self.histories[j]);
                let acc = &mut self.cross[pair_index(n, i, j)];
                if let (Some(oi), Some(oj)) = (evicted[i], evicted[j]) {
                    acc.add(-(hi.deviation(oi) * hj.deviation(oj)));
                }
                acc.add(hi.deviation(values[i]) * hj.deviation(values[j]));
            }
        }

        if n > 0 && self.histories[0].rebase_due() {
            self.rebase();
        }
        Ok(())
    }

    fn rebase(&mut self) {
        for h in &mut self.histories {
            h.rebase();
        }
        let n = self.histories.len();
        for i in 0..n {
            for j in i + 1..n {
                let (hi, hj) = (&self.histories[i], &self.histories[j]);
                let mut acc = CompensatedSum::default();
                for (x, y) in hi.buffer.iter().zip(&hj.buffer) {
                    acc.add(hi.deviation(*x) * hj.deviation(*y));
                }
                self.cross[pair_index(n, i, j)] = acc;
            }
        }
    }

    /// Coefficient between variables `a` and `b` at time point `t`.
    pub fn pearson(&self, a: usize, b: usize, t: u64) -> Result<Option<f64>> {
        let n = self.histories.len();
        if a >= n || b >= n || a == b {
            return Err(Error::HistoryMismatch(format!(
                "invalid variable pair ({a}, {b}) for {n} variables"
            )));
        }
        let (ha, hb) = (&self.histories[a], &self.histories[b]);
        check_window(ha, hb, t, self.window)?;
        Ok(coefficient(
            ha.len(),
            ha.sum.value(),
            ha.sum_sq.value(),
            hb.sum.value(),
            hb.sum_sq.value(),
            self.cross[pair_index(n, a, b)].value(),
        ))
    }

    pub fn verdict(&self, a: usize, b: usize, t: u64, thd_pos: f64) -> Result<CorrelationVerdict> {
        Ok(CorrelationVerdict::new(
            (a, b),
            self.pearson(a, b, t)?,
            thd_pos,
        ))
    }
}
