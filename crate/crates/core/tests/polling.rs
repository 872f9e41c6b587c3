mod common;

use mvad_core::coordinator::{poll_all, Coordinator, MultivariateSample};
use mvad_core::detector::Status;
use proptest::prelude::*;

fn status_of(anomalous: bool) -> Status {
    if anomalous {
        Status::Anomalous
    } else {
        Status::Normal
    }
}

/// Coefficients clustered around the thresholds, including exact boundary
/// values and undefined entries.
fn coefficient() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        Just(None),
        Just(Some(0.95)),
        Just(Some(-0.95)),
        (0.9f64..1.0).prop_map(Some),
        (-1.0f64..-0.9).prop_map(Some),
        (-1.0f64..1.0).prop_map(Some),
    ]
}

fn symmetric(n: usize) -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    prop::collection::vec(coefficient(), n * n).prop_map(move |flat| {
        let mut e = vec![vec![None; n]; n];
        for a in 0..n {
            for b in a + 1..n {
                e[a][b] = flat[a * n + b];
                e[b][a] = flat[a * n + b];
            }
        }
        e
    })
}

fn case() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, Vec<Vec<Option<f64>>>)> {
    (2usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(-10.0f64..10.0, n),
            symmetric(n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn poll_all_matches_the_interpreter((anomalous, values, e) in case()) {
        let statuses: Vec<Status> = anomalous.iter().map(|&a| status_of(a)).collect();
        let got = poll_all(&statuses, &values, 0.95, |a, b| Ok(e[a][b])).unwrap();
        let want = common::polling_interpreter(&anomalous, &values, &e, 0.95);
        let got: Vec<common::PollOutput> = got.into_iter().map(|r| (r.seed, r.variables, r.data)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn pending_never_agrees((anomalous, values, e) in case(), pending in prop::collection::vec(any::<bool>(), 8)) {
        // Pending behaves exactly like Normal.
        let statuses: Vec<Status> = anomalous
            .iter()
            .zip(&pending)
            .map(|(&a, &p)| if a { Status::Anomalous } else if p { Status::Pending } else { Status::Normal })
            .collect();
        let got = poll_all(&statuses, &values, 0.95, |a, b| Ok(e[a][b])).unwrap();
        let want = common::polling_interpreter(&anomalous, &values, &e, 0.95);
        prop_assert_eq!(got.len(), want.len());
        for (r, (seed, vars, _)) in got.iter().zip(&want) {
            prop_assert_eq!(r.seed, *seed);
            prop_assert_eq!(&r.variables, vars);
        }
    }

    #[test]
    fn reports_only_name_flagged_variables((anomalous, values, e) in case()) {
        let statuses: Vec<Status> = anomalous.iter().map(|&a| status_of(a)).collect();
        for r in poll_all(&statuses, &values, 0.95, |a, b| Ok(e[a][b])).unwrap() {
            prop_assert!(r.variables.len() >= 2);
            prop_assert!(r.agree >= 1);
            prop_assert_eq!(r.variables.len(), r.data.len());
            prop_assert_eq!(r.variables[0], r.seed);
            for &v in &r.variables {
                prop_assert!(anomalous[v]);
            }
        }
    }
}

#[test]
fn worked_example_from_five_variables() {
    // V3 flagged; V4 and V5 correlated with it; only V4 also flagged.
    let mut e = vec![vec![Some(0.1); 5]; 5];
    for (a, b) in [(2, 3), (2, 4), (3, 4)] {
        e[a][b] = Some(0.97);
        e[b][a] = Some(0.97);
    }
    let statuses = [
        Status::Normal,
        Status::Normal,
        Status::Anomalous,
        Status::Anomalous,
        Status::Normal,
    ];
    let values = [1.0, 2.0, 3.0, 4.0, 5.0];
    let reports = poll_all(&statuses, &values, 0.95, |a, b| Ok(e[a][b])).unwrap();
    let seed3 = reports.iter().find(|r| r.seed == 2).unwrap();
    assert_eq!((seed3.agree, seed3.disagree), (2, 1));
    assert_eq!(seed3.variables, [2, 3]);
    assert_eq!(seed3.data, [3.0, 4.0]);
}

/// Deterministic stream with clusters of strongly related variables.
fn clustered_stream(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cluster: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let sign: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { -1.0 } else { 1.0 }).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.6)).collect();
    (0..len)
        .map(|_| {
            let latent: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            (0..n)
                .map(|v| sign[v] * latent[cluster[v]] + noise[v] * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect()
}

#[test]
fn process_timestep_matches_the_interpreter() {
    let mut reported = 0;
    for n in 2..=6 {
        for trial in 0..4u64 {
            let p = 20;
            let stream = clustered_stream(n, 12 + (1 << n), trial * 31 + n as u64);
            let puppets = common::puppets(n);
            let mut c = Coordinator::new(puppets.clone(), p, 0.95).unwrap();
            let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
            for (t, row) in stream.iter().enumerate() {
                // Warm-up steps are all normal, then every verdict pattern once.
                let pattern = t.saturating_sub(12);
                let anomalous: Vec<bool> = (0..n).map(|v| t >= 12 && pattern >> v & 1 == 1).collect();
                for (pp, &a) in puppets.iter().zip(&anomalous) {
                    pp.set(status_of(a));
                }
                let e: Vec<Vec<Option<f64>>> = (0..n)
                    .map(|a| {
                        (0..n)
                            .map(|b| common::pearson(common::window(&columns[a], t, p), common::window(&columns[b], t, p)))
                            .collect()
                    })
                    .collect();
                let want = common::polling_interpreter(&anomalous, row, &e, 0.95);
                let sample = MultivariateSample {
                    t: t as u64,
                    timestamp: format!("s{t}"),
                    values: row.clone(),
                };
                let out = c.process_timestep(&sample).unwrap();
                let got: Vec<common::PollOutput> = out
                    .per_seed
                    .iter()
                    .map(|r| (r.seed, r.variables.clone(), r.data.clone()))
                    .collect();
                assert_eq!(got, want, "n={n} trial={trial} t={t}");

                let mut union: Vec<usize> = want.iter().flat_map(|(_, v, _)| v.iter().copied()).collect();
                union.sort_unstable();
                union.dedup();
                match out.reports.as_slice() {
                    [] => assert!(want.is_empty()),
                    [r] => {
                        reported += 1;
                        assert_eq!(r.variables, union);
                        assert_eq!(r.t, t as u64);
                    }
                    more => panic!("{} reports for one time point", more.len()),
                }
                for (col, &x) in columns.iter_mut().zip(row) {
                    col.push(x);
                }
            }
        }
    }
    assert!(reported > 20, "only {reported} reports exercised");
}
