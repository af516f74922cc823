use proptest::prelude::*;

use dcsim_core::analytics::{
    empirical_cdf, gpu_demand_breakdown, recorded_intervals, status_breakdown, top_users_share,
    user_stats, utilization_timeline, StatusGrouping,
};
use dcsim_core::trace::{synth_trace, SynthParams};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_monotone_and_ends_at_one(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let cdf = empirical_cdf(&values).unwrap();
        let last = cdf.points.last().unwrap();
        prop_assert_eq!(last.1, 1.0);
        prop_assert!(cdf.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn shares_sum_to_one(seed in 0u64..1000) {
        let jobs = synth_trace(&SynthParams { job_count: 300, seed, ..Default::default() }).unwrap();
        let shares = gpu_demand_breakdown(&jobs);
        let js: f64 = shares.iter().map(|s| s.job_share).sum();
        let gs: f64 = shares.iter().map(|s| s.gpu_time_share).sum();
        prop_assert!((js - 1.0).abs() < 1e-9 && (gs - 1.0).abs() < 1e-9);

        let users = user_stats(&jobs, None);
        let gpu_time: i64 = jobs.iter().map(|j| j.gpu_time()).sum();
        prop_assert_eq!(users.iter().map(|u| u.gpu_time).sum::<i64>(), gpu_time);
        let top = top_users_share(&users, 1.0, |u| u.gpu_time);
        prop_assert!((top - 1.0).abs() < 1e-9);

        for g in [StatusGrouping::JobKind, StatusGrouping::GpuDemand] {
            for row in status_breakdown(&jobs, g) {
                prop_assert!((row.completed + row.canceled + row.failed - 1.0).abs() < 1e-9 || row.jobs == 0);
            }
        }
    }
}

#[test]
fn utilization_integrates_gpu_time() {
    let mut jobs = synth_trace(&SynthParams {
        job_count: 200,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    for j in &mut jobs {
        j.start_time = Some(j.submit_time);
        j.end_time = Some(j.submit_time + j.duration);
    }
    let intervals = recorded_intervals(&jobs);
    let start = jobs.iter().map(|j| j.submit_time).min().unwrap() / 60 * 60;
    let end = jobs
        .iter()
        .map(|j| j.submit_time + j.duration)
        .max()
        .unwrap()
        + 60;
    let total = 1000;
    let tl = utilization_timeline(&intervals, total, start, end, 60).unwrap();
    let busy: f64 = tl.values.iter().sum::<f64>() * 60.0 * total as f64;
    let gpu_time: i64 = jobs
        .iter()
        .filter(|j| j.duration > 0)
        .map(|j| j.gpu_time())
        .sum();
    assert!((busy - gpu_time as f64).abs() < 1e-6 * gpu_time as f64);
}
