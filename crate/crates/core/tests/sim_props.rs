use std::collections::BTreeMap;

use proptest::prelude::*;

use dcsim_core::sched::{Policy, PolicyKind};
use dcsim_core::sim::{compute_metrics, run_simulation, SimOptions};
use dcsim_core::trace::{ClusterSpec, JobRecord, JobStatus};

fn arb_jobs() -> impl Strategy<Value = Vec<JobRecord>> {
    let job = (
        0i64..500,
        1i64..300,
        prop::sample::select(vec![1u32, 2, 4, 8, 16]),
        0usize..2,
    );
    prop::collection::vec(job, 1..25).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (submit, duration, gpu_num, vc))| JobRecord {
                job_id: format!("j{i:03}"),
                user: "u".into(),
                vc: ["a", "b"][vc].into(),
                job_name: "n".into(),
                gpu_num,
                cpu_num: 1,
                status: JobStatus::Completed,
                submit_time: submit,
                start_time: None,
                end_time: None,
                duration,
            })
            .collect()
    })
}

fn cluster() -> ClusterSpec {
    ClusterSpec::with_vcs("p", 8, &[("a", 2), ("b", 3)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fifo_never_inverts_submit_order(jobs in arb_jobs()) {
        let r = run_simulation(&jobs, &cluster(), &mut Policy::Fifo, &SimOptions::default()).unwrap();
        let mut by_vc: BTreeMap<&str, Vec<(i64, &str, i64)>> = BTreeMap::new();
        for o in &r.jobs {
            by_vc.entry(o.vc.as_str()).or_default().push((o.submit, o.job_id.as_str(), o.start));
        }
        for mut v in by_vc.into_values() {
            v.sort();
            prop_assert!(v.windows(2).all(|w| w[0].2 <= w[1].2));
        }
    }

    #[test]
    fn every_job_finishes_and_totals_add_up(jobs in arb_jobs(), k in 0usize..4) {
        let kind = PolicyKind::ALL[k];
        let r = run_simulation(&jobs, &cluster(), &mut Policy::oracle(kind), &SimOptions::default()).unwrap();
        prop_assert_eq!(r.jobs.len() + r.unschedulable.len(), jobs.len());
        let m = compute_metrics(&r, 0);
        let c = &m.cluster;
        prop_assert_eq!(c.total_jct, c.total_queuing + c.total_suspended + c.total_duration);
        if kind != PolicyKind::Srtf {
            prop_assert_eq!(c.total_suspended, 0);
        }
        let per_vc: usize = m.per_vc.values().map(|g| g.jobs).sum();
        prop_assert_eq!(per_vc, c.jobs);
    }

    #[test]
    fn unlimited_capacity_means_no_queuing(jobs in arb_jobs(), k in 0usize..4) {
        let big = ClusterSpec::with_vcs("big", 8, &[("a", 100), ("b", 100)]);
        let r = run_simulation(&jobs, &big, &mut Policy::oracle(PolicyKind::ALL[k]), &SimOptions::default()).unwrap();
        prop_assert!(r.jobs.iter().all(|o| o.start == o.submit && o.end == o.submit + o.duration));
    }
}
