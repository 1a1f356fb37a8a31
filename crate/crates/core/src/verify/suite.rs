//! Named check suites. `Fast` runs in a few minutes on one core; `Full` runs
//! every check at the scale of the acceptance criteria.

use super::limits::{
    check_iid_limit, check_limit_process_void, check_slepian_monotonicity, check_spine_identity, check_yule_geometric,
    SpineFunctional,
};
use super::moments::{
    check_many_to_one, check_many_to_two, extremal_sample, first_moment_report, max_law_trend_report, max_limit_report,
    second_moment_gap_report, FIRST_MOMENT_ALLOWANCE, MAX_LAW_ALLOWANCE,
};
use super::{CheckReport, TestFunction};
use crate::error::Result;
use crate::measure::CenteringScheme;
use crate::rng::StreamRng;
use crate::sampling::Extended;
use crate::spine::SpineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Fast,
    Full,
}

struct Scale {
    moments: u64,
    one_point_cases: &'static [(f64, f64)],
    spine: u64,
    extremes: u64,
    t_late: f64,
    t_early: f64,
    gap: u64,
    gap_t: f64,
    slepian: u64,
    slepian_t: f64,
    iid: u64,
    yule: u64,
    limit: u64,
}

const FAST: Scale = Scale {
    moments: 20_000,
    one_point_cases: &[(1.0, 3.0)],
    spine: 100_000,
    extremes: 3_000,
    t_late: 12.0,
    t_early: 8.0,
    gap: 20_000,
    gap_t: 8.0,
    slepian: 2_000,
    slepian_t: 6.0,
    iid: 20_000,
    yule: 2_000,
    limit: 20_000,
};

const FULL: Scale = Scale {
    moments: 100_000,
    one_point_cases: &[(0.0, 3.0), (1.0, 3.0), (1.0, 6.0)],
    spine: 1_000_000,
    extremes: 10_000,
    t_late: 12.0,
    t_early: 8.0,
    gap: 100_000,
    gap_t: 10.0,
    slepian: 10_000,
    slepian_t: 8.0,
    iid: 100_000,
    yule: 10_000,
    limit: 100_000,
};

/// Labelled test functions for the many-to-one and many-to-two checks.
pub fn moment_battery() -> [(&'static str, TestFunction); 3] {
    [
        ("one", TestFunction::Indicator { a: f64::NEG_INFINITY }),
        (
            "exp",
            TestFunction::ExponentialWindow {
                beta: 0.5,
                a: f64::NEG_INFINITY,
            },
        ),
        ("indicator", TestFunction::Indicator { a: 1.0 }),
    ]
}

/// Functionals for the spine identity.
pub fn spine_battery() -> Vec<SpineFunctional> {
    vec![
        SpineFunctional::One,
        SpineFunctional::VoidInterval { lo: -1.0, hi: 0.0 },
        SpineFunctional::Laplace {
            phi: TestFunction::smooth_step(-2.0, 1.0),
        },
        SpineFunctional::Laplace {
            phi: TestFunction::ExponentialWindow { beta: 1.0, a: -2.0 },
        },
    ]
}

/// Test functions for the i.i.d. limit, one of each kind plus a tall plateau.
pub fn iid_battery() -> Vec<TestFunction> {
    vec![
        TestFunction::SmoothStep {
            y: 0.0,
            eps: 1.0,
            height: 0.0,
        },
        TestFunction::SmoothStep {
            y: 0.0,
            eps: 1.0,
            height: 20.0,
        },
        TestFunction::Indicator { a: 1.0 },
        TestFunction::ExponentialWindow { beta: 1.0, a: 0.0 },
    ]
}

type Runner = Box<dyn Fn(&StreamRng, &SpineConfig) -> Result<Vec<CheckReport>>>;

struct Job {
    names: Vec<String>,
    run: Runner,
}

fn jobs(suite: Suite) -> Vec<Job> {
    let s = match suite {
        Suite::Fast => &FAST,
        Suite::Full => &FULL,
    };
    let mut out = Vec::new();

    for &(mu, t) in s.one_point_cases {
        let n = s.moments;
        out.push(Job {
            names: moment_battery()
                .iter()
                .map(|(l, _)| format!("many_to_one/mu={mu}/t={t}/{l}"))
                .collect(),
            run: Box::new(move |rng, _| {
                moment_battery()
                    .iter()
                    .enumerate()
                    .map(|(i, (_, f))| check_many_to_one(mu, t, f, n, &rng.split(i as u64)))
                    .collect()
            }),
        });
    }

    let n = s.moments;
    out.push(Job {
        names: moment_battery()
            .iter()
            .map(|(l, _)| format!("many_to_two/mu=1/t=1.5/{l}"))
            .collect(),
        run: Box::new(move |rng, _| {
            moment_battery()
                .iter()
                .enumerate()
                .map(|(i, (_, f))| check_many_to_two(1.0, 1.5, f, n, &rng.split(i as u64)))
                .collect()
        }),
    });

    for (rho, t) in [(1.0, 1.0), (1.5, 1.5)] {
        let n = s.spine;
        out.push(Job {
            names: vec![format!("spine_identity/rho={rho}/t={t}")],
            run: Box::new(move |rng, cfg| Ok(vec![check_spine_identity(rho, t, &spine_battery(), n, rng, cfg)?])),
        });
    }

    let (n, t_late, t_early) = (s.extremes, s.t_late, s.t_early);
    out.push(Job {
        names: vec![
            format!("max_limit_law/mu=1/t={t_late}"),
            format!("max_limit_trend/mu=1/t={t_early}->{t_late}"),
            format!("first_moment/mu=1/t={t_late}"),
        ],
        run: Box::new(move |rng, _| {
            let grid = [-1.0, 0.0, 1.0, 2.0];
            let late = extremal_sample(1.0, t_late, n, &grid, CenteringScheme::BouTilde, &rng.split(0))?;
            let early = extremal_sample(1.0, t_early, n, &[], CenteringScheme::BouTilde, &rng.split(1))?;
            Ok(vec![
                max_limit_report(&late, MAX_LAW_ALLOWANCE),
                max_law_trend_report(&early, &late),
                first_moment_report(&late, FIRST_MOMENT_ALLOWANCE),
            ])
        }),
    });

    let (n, t) = (s.gap, s.gap_t);
    out.push(Job {
        names: vec![format!("second_moment_gap/mu=1/t={t}")],
        run: Box::new(move |rng, _| {
            let grid = [0.5, 1.0, 1.5, 2.0, 2.5];
            let sample = extremal_sample(1.0, t, n, &grid, CenteringScheme::BouTilde, rng)?;
            Ok(vec![second_moment_gap_report(&sample)])
        }),
    });

    let (n, t) = (s.slepian, s.slepian_t);
    out.push(Job {
        names: vec![format!("slepian/t={t}")],
        run: Box::new(move |rng, _| {
            let mus = [
                Extended::Finite(0.1),
                Extended::Finite(1.0),
                Extended::Finite(10.0),
                Extended::Infinite,
            ];
            Ok(vec![check_slepian_monotonicity(
                &mus,
                &TestFunction::smooth_step(0.0, 1.0),
                t,
                n,
                rng,
            )?])
        }),
    });

    let n = s.iid;
    out.push(Job {
        names: vec!["iid_limit/t=14".into()],
        run: Box::new(move |rng, _| Ok(vec![check_iid_limit(14.0, n, &iid_battery(), rng)?])),
    });

    let n = s.yule;
    out.push(Job {
        names: vec!["yule_geometric/t=6".into()],
        run: Box::new(move |rng, _| Ok(vec![check_yule_geometric(6.0, n, rng)?])),
    });

    let n = s.limit;
    out.push(Job {
        names: vec!["limit_process_void/gamma=inf".into()],
        run: Box::new(move |rng, _| Ok(vec![check_limit_process_void(&[-1.0, 0.0, 1.0], n, rng)?])),
    });

    out
}

/// Names of the reports [`run_suite`] produces, in order.
pub fn suite_names(suite: Suite) -> Vec<String> {
    jobs(suite).into_iter().flat_map(|j| j.names).collect()
}

/// Runs every check of the suite. Job `i` draws from `StreamRng::new(seed, i)`.
/// `cfg` is passed to the spine-based checks.
pub fn run_suite(suite: Suite, seed: u64, cfg: &SpineConfig) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (i, job) in jobs(suite).into_iter().enumerate() {
        let rng = StreamRng::new(seed, i as u64);
        let out = (job.run)(&rng, cfg)?;
        debug_assert_eq!(out.len(), job.names.len());
        for (mut r, name) in out.into_iter().zip(job.names) {
            r.details["check"] = serde_json::Value::String(r.name.clone());
            r.name = name;
            reports.push(r);
        }
    }
    Ok(reports)
}
