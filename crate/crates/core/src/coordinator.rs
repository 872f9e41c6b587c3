//! Joint detection: fan a sample out to per-variable detectors, wait for
//! every verdict, then poll the highly correlated peers of each anomalous
//! variable and report when the agreeing side holds a strict majority.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{is_highly_correlated, CorrelationTracker};
use crate::detector::{DetectorConfig, DetectorState, Status, VariableDetector, Verdict};
use crate::error::{Error, Result};

/// One N-dimensional observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultivariateSample {
    pub t: u64,
    pub timestamp: String,
    pub values: Vec<f64>,
}

/// Result of polling one anomalous seed variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: usize,
    pub agree: usize,
    pub disagree: usize,
    /// Seed first, then agreeing peers in index order.
    pub variables: Vec<usize>,
    /// Values matching `variables`.
    pub data: Vec<f64>,
}

/// A joint anomaly at one time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub t: u64,
    pub timestamp: String,
    /// Seeds whose poll succeeded, ascending.
    pub seeds: Vec<usize>,
    /// Union of the involved variables, ascending.
    pub variables: Vec<usize>,
    pub values: Vec<f64>,
    /// Per-seed results, kept for verbose output.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub details: Vec<SeedReport>,
}

/// Polls the peers of `seed`.
///
/// `correlation(a, b)` supplies the coefficient between two variables. Peers
/// whose coefficient is at or beyond `±thd_pos` vote: an anomalous verdict
/// agrees, anything else (normal or pending) disagrees. The seed counts as
/// one agreeing vote. A result is returned only when agreement is a strict
/// majority and at least one peer voted.
pub fn poll<F>(
    seed: usize,
    statuses: &[Status],
    values: &[f64],
    thd_pos: f64,
    correlation: &mut F,
) -> Result<Option<SeedReport>>
where
    F: FnMut(usize, usize) -> Result<Option<f64>>,
{
    let mut agree = 1;
    let mut disagree = 0;
    let mut variables = vec![seed];
    let mut data = vec![values[seed]];
    for peer in 0..statuses.len() {
        if peer == seed {
            continue;
        }
        let e = correlation(seed, peer)?;
        if !is_highly_correlated(e, thd_pos) {
            continue;
        }
        if statuses[peer].is_anomalous() {
            agree += 1;
            variables.push(peer);
            data.push(values[peer]);
        } else {
            disagree += 1;
        }
    }
    Ok((agree > disagree && agree + disagree > 1).then_some(SeedReport {
        seed,
        agree,
        disagree,
        variables,
        data,
    }))
}

/// Runs [`poll`] for every anomalous variable, in index order.
pub fn poll_all<F>(
    statuses: &[Status],
    values: &[f64],
    thd_pos: f64,
    mut correlation: F,
) -> Result<Vec<SeedReport>>
where
    F: FnMut(usize, usize) -> Result<Option<f64>>,
{
    let mut out = Vec::new();
    for seed in (0..statuses.len()).filter(|&x| statuses[x].is_anomalous()) {
        if let Some(r) = poll(seed, statuses, values, thd_pos, &mut correlation)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Merges the per-seed results of one time point into at most one report
/// whose variables are the union over seeds.
pub fn dedupe_reports(t: u64, timestamp: &str, per_seed: Vec<SeedReport>) -> Vec<AnomalyReport> {
    if per_seed.is_empty() {
        return Vec::new();
    }
    let mut involved = BTreeSet::new();
    let mut value_of = std::collections::BTreeMap::new();
    for r in &per_seed {
        for (&v, &x) in r.variables.iter().zip(&r.data) {
            involved.insert(v);
            value_of.insert(v, x);
        }
    }
    let variables: Vec<usize> = involved.into_iter().collect();
    let values = variables.iter().map(|v| value_of[v]).collect();
    let seeds = per_seed.iter().map(|r| r.seed).collect();
    vec![AnomalyReport {
        t,
        timestamp: timestamp.to_string(),
        seeds,
        variables,
        values,
        details: per_seed,
    }]
}

/// Everything produced for one time point.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub t: u64,
    pub verdicts: Vec<Verdict>,
    pub per_seed: Vec<SeedReport>,
    pub reports: Vec<AnomalyReport>,
}

/// Per-step memo of pair coefficients.
struct PairCache {
    n: usize,
    slots: Vec<Option<Option<f64>>>,
}

impl PairCache {
    fn new(n: usize) -> Self {
        Self {
            n,
            slots: vec![None; n * n],
        }
    }

    fn get_or_compute(
        &mut self,
        a: usize,
        b: usize,
        compute: impl FnOnce() -> Result<Option<f64>>,
    ) -> Result<Option<f64>> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let slot = &mut self.slots[i * self.n + j];
        if let Some(e) = *slot {
            return Ok(e);
        }
        let e = compute()?;
        *slot = Some(e);
        Ok(e)
    }
}

/// Owns the detectors and correlation histories for a run.
pub struct Coordinator<D = DetectorState> {
    detectors: Vec<D>,
    tracker: CorrelationTracker,
    thd_pos: f64,
    next_t: u64,
    correlation_evaluations: u64,
}

impl Coordinator<DetectorState> {
    /// One [`DetectorState`] per variable, all sharing `config`.
    pub fn with_defaults(
        variables: usize,
        config: &DetectorConfig,
        window: usize,
        thd_pos: f64,
    ) -> Result<Self> {
        let detectors = (0..variables)
            .map(|v| DetectorState::new(v, config.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(detectors, window, thd_pos)
    }
}

impl<D: VariableDetector> Coordinator<D> {
    pub fn new(detectors: Vec<D>, window: usize, thd_pos: f64) -> Result<Self> {
        if detectors.is_empty() {
            return Err(Error::InvalidConfig("at least one variable is required".into()));
        }
        if !(thd_pos > 0.0 && thd_pos <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "thd_pos must be in (0, 1], got {thd_pos}"
            )));
        }
        if window < 2 {
            return Err(Error::InvalidConfig(format!(
                "correlation window must be at least 2, got {window}"
            )));
        }
        let n = detectors.len();
        Ok(Self {
            detectors,
            tracker: CorrelationTracker::new(n, window),
            thd_pos,
            next_t: 0,
            correlation_evaluations: 0,
        })
    }

    pub fn variables(&self) -> usize {
        self.detectors.len()
    }

    pub fn detectors(&self) -> &[D] {
        &self.detectors
    }

    pub fn tracker(&self) -> &CorrelationTracker {
        &self.tracker
    }

    pub fn next_t(&self) -> u64 {
        self.next_t
    }

    /// Number of distinct pair coefficients evaluated so far.
    pub fn correlation_evaluations(&self) -> u64 {
        self.correlation_evaluations
    }

    /// Processes one sample end to end.
    ///
    /// All detectors step in parallel and polling starts only once every
    /// verdict is in. Histories are updated after polling, so coefficients at
    /// `T` cover points up to `T-1`.
    pub fn process_timestep(&mut self, sample: &MultivariateSample) -> Result<StepOutcome> {
        let n = self.detectors.len();
        if sample.values.len() != n {
            return Err(Error::Arity {
                expected: n,
                actual: sample.values.len(),
            });
        }
        if sample.t != self.next_t {
            return Err(Error::OutOfOrder {
                variable: 0,
                expected: self.next_t,
                actual: sample.t,
            });
        }
        let t = sample.t;

        let verdicts = self
            .detectors
            .par_iter_mut()
            .zip(sample.values.par_iter())
            .enumerate()
            .map(|(v, (d, &x))| {
                d.step(x, t).map_err(|e| Error::Detector {
                    variable: v,
                    t,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<Verdict>>>()?;

        let statuses: Vec<Status> = verdicts.iter().map(|v| v.status).collect();
        let mut cache = PairCache::new(n);
        let tracker = &self.tracker;
        let evaluations = &mut self.correlation_evaluations;
        let per_seed = poll_all(&statuses, &sample.values, self.thd_pos, |a, b| {
            cache.get_or_compute(a, b, || {
                *evaluations += 1;
                tracker.pearson(a, b, t)
            })
        })?;

        self.tracker.push_sample(&sample.values)?;
        self.next_t += 1;

        let reports = dedupe_reports(t, &sample.timestamp, per_seed.clone());
        Ok(StepOutcome {
            t,
            verdicts,
            per_seed,
            reports,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use Status::{Anomalous as A, Normal as N, Pending as P};

    fn matrix(n: usize, entries: &[(usize, usize, f64)]) -> impl FnMut(usize, usize) -> Result<Option<f64>> {
        let mut m = vec![None; n * n];
        for &(a, b, e) in entries {
            m[a * n + b] = Some(e);
            m[b * n + a] = Some(e);
        }
        move |a, b| Ok(m[a * n + b])
    }

    #[test]
    fn all_normal_yields_nothing() {
        let r = poll_all(&[N, N, N], &[1.0, 2.0, 3.0], 0.95, matrix(3, &[(0, 1, 1.0)])).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn lone_anomaly_without_correlated_peers_is_suppressed() {
        let r = poll_all(&[A, N, N], &[1.0, 2.0, 3.0], 0.95, matrix(3, &[(0, 1, 0.5)])).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn five_variable_walkthrough() {
        // V3 anomalous; V4 and V5 highly correlated with it; only V4 anomalous.
        let statuses = [N, N, A, A, N];
        let values = [10.0, 20.0, 30.0, 40.0, 50.0];
        let corr = matrix(5, &[(2, 3, 0.97), (2, 4, -0.96), (2, 0, 0.2), (2, 1, 0.9)]);
        let mut corr = corr;
        let r = poll(2, &statuses, &values, 0.95, &mut corr).unwrap().unwrap();
        assert_eq!((r.agree, r.disagree), (2, 1));
        assert_eq!(r.variables, vec![2, 3]);
        assert_eq!(r.data, vec![30.0, 40.0]);
    }

    #[test]
    fn majority_fails_when_peers_are_normal() {
        let mut corr = matrix(4, &[(0, 1, 0.99), (0, 2, 0.99), (0, 3, 0.99)]);
        let r = poll(0, &[A, N, N, P], &[1.0; 4], 0.95, &mut corr).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn unanimous_peers_report_all() {
        let mut corr = matrix(3, &[(0, 1, 0.99), (0, 2, -0.99)]);
        let r = poll(0, &[A, A, A], &[1.0, 2.0, 3.0], 0.95, &mut corr).unwrap().unwrap();
        assert_eq!((r.agree, r.disagree), (3, 0));
        assert_eq!(r.variables, vec![0, 1, 2]);
    }

    #[test]
    fn tie_is_not_a_majority() {
        let mut corr = matrix(3, &[(0, 1, 0.99), (0, 2, 0.99)]);
        let r = poll(0, &[A, N, N], &[1.0; 3], 0.95, &mut corr).unwrap();
        assert!(r.is_none());
        let mut corr = matrix(2, &[(0, 1, 0.99)]);
        assert!(poll(0, &[A, N], &[1.0; 2], 0.95, &mut corr).unwrap().is_none());
    }

    fn seed(seed: usize, variables: &[usize]) -> SeedReport {
        SeedReport {
            seed,
            agree: variables.len(),
            disagree: 0,
            variables: variables.to_vec(),
            data: variables.iter().map(|&v| v as f64 * 10.0).collect(),
        }
    }

    #[test]
    fn dedupe_examples() {
        let r = dedupe_reports(7, "ts", vec![seed(3, &[3, 4]), seed(4, &[4, 3])]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].variables, vec![3, 4]);
        assert_eq!(r[0].seeds, vec![3, 4]);
        assert_eq!(r[0].values, vec![30.0, 40.0]);

        assert!(dedupe_reports(7, "ts", Vec::new()).is_empty());

        let r = dedupe_reports(7, "ts", vec![seed(1, &[1, 2]), seed(2, &[2, 5])]);
        assert_eq!(r[0].variables, vec![1, 2, 5]);
    }

    struct Scripted(Vec<Status>);

    impl VariableDetector for Scripted {
        fn step(&mut self, value: f64, t: u64) -> Result<Verdict> {
            Ok(Verdict {
                time_point: t,
                variable_id: 0,
                value,
                status: self.0[t as usize],
                prediction: None,
                error: None,
                aare: None,
                threshold: None,
                retrained: false,
            })
        }
    }

    #[test]
    fn process_timestep_checks_arity_and_order() {
        let mut c = Coordinator::new(vec![Scripted(vec![N; 4]), Scripted(vec![N; 4])], 8, 0.95).unwrap();
        let bad = MultivariateSample {
            t: 0,
            timestamp: String::new(),
            values: vec![1.0],
        };
        assert!(matches!(c.process_timestep(&bad), Err(Error::Arity { .. })));
        let skipped = MultivariateSample {
            t: 1,
            timestamp: String::new(),
            values: vec![1.0, 2.0],
        };
        assert!(matches!(c.process_timestep(&skipped), Err(Error::OutOfOrder { .. })));
    }

    #[test]
    fn correlated_pair_reports_once_and_memoizes() {
        // two perfectly correlated ramps, both anomalous at T=3
        let script = vec![N, N, N, A];
        let mut c = Coordinator::new(
            vec![Scripted(script.clone()), Scripted(script.clone()), Scripted(vec![N; 4])],
            8,
            0.95,
        )
        .unwrap();
        let third = [5.0, 1.0, 4.0, 2.0];
        let mut reports = Vec::new();
        for t in 0..4u64 {
            let s = MultivariateSample {
                t,
                timestamp: format!("t{t}"),
                values: vec![t as f64, 2.0 * t as f64 + 1.0, third[t as usize]],
            };
            reports.extend(c.process_timestep(&s).unwrap().reports);
        }
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].t, 3);
        assert_eq!(reports[0].timestamp, "t3");
        assert_eq!(reports[0].variables, vec![0, 1]);
        assert_eq!(reports[0].seeds, vec![0, 1]);
        // pairs (0,1), (0,2), (1,2) each computed once
        assert_eq!(c.correlation_evaluations(), 3);
    }

    #[test]
    fn rejects_bad_thresholds() {
        assert!(Coordinator::new(vec![Scripted(vec![])], 8, 1.5).is_err());
        assert!(Coordinator::new(vec![Scripted(vec![])], 8, 0.0).is_err());
        assert!(Coordinator::new(vec![Scripted(vec![])], 1, 0.9).is_err());
        assert!(Coordinator::<Scripted>::new(vec![], 8, 0.9).is_err());
    }
}
