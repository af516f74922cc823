//! End-to-end workflows: time-based train/evaluation splits, duration model
//! training with validation, and side-by-side policy replays.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::predictor::{
    validate_model, DurationModel, DurationModelConfig, HistoryStore, LearnedEstimator,
    RollingConfig, ValidationReport,
};
use crate::sched::{NoisyOracleEstimator, PerfectEstimator, Policy, PolicyConfig, PolicyKind};
use crate::sim::{
    compute_metrics, duration_groups, run_simulation, DurationGroups, MetricsSummary, SimOptions,
    SimResult,
};
use crate::trace::{ClusterSpec, JobRecord};

fn finished_at(job: &JobRecord) -> i64 {
    job.end_time.unwrap_or(job.submit_time + job.duration)
}

/// Jobs that finished by `cutoff`, and jobs submitted at or after it.
pub fn split_at(jobs: &[JobRecord], cutoff: i64) -> (Vec<JobRecord>, Vec<JobRecord>) {
    let train = jobs
        .iter()
        .filter(|j| finished_at(j) <= cutoff)
        .cloned()
        .collect();
    let eval = jobs
        .iter()
        .filter(|j| j.submit_time >= cutoff)
        .cloned()
        .collect();
    (train, eval)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub cutoff: i64,
    pub report: Option<ValidationReport>,
}

/// Trains on jobs finished by `cutoff` and validates on those submitted after
/// it, when there are any.
pub fn train_with_cutoff(
    jobs: &[JobRecord],
    cutoff: i64,
    config: &DurationModelConfig,
) -> Result<(DurationModel, TrainOutcome)> {
    let (train, eval) = split_at(jobs, cutoff);
    if train.is_empty() {
        return Err(Error::EmptyInput(
            "training set (no job finished before the cutoff)",
        ));
    }
    let model = DurationModel::train(&train, config)?;
    let report = if eval.is_empty() {
        None
    } else {
        let history = HistoryStore::from_jobs(&train, RollingConfig::default());
        Some(validate_model(&model, &history, train.len(), &eval)?)
    };
    Ok((model, TrainOutcome { cutoff, report }))
}

/// Where QSSF gets its duration estimates.
#[derive(Debug, Clone)]
// Built once per replay, so the size gap does not matter.
#[allow(clippy::large_enum_variant)]
pub enum EstimatorSource {
    Perfect,
    Noisy(NoisyOracleEstimator),
    /// A trained model plus the finished jobs that seed the rolling history.
    Learned {
        model: DurationModel,
        history: Vec<JobRecord>,
        rolling: RollingConfig,
    },
}

pub fn build_policy(config: &PolicyConfig, source: &EstimatorSource) -> Result<Policy> {
    config.validate()?;
    Ok(match config.kind {
        PolicyKind::Fifo => Policy::Fifo,
        PolicyKind::Sjf => Policy::Sjf,
        PolicyKind::Srtf => Policy::Srtf,
        PolicyKind::Qssf => match source {
            EstimatorSource::Perfect => Policy::qssf(config.lambda, PerfectEstimator),
            EstimatorSource::Noisy(n) => Policy::qssf(config.lambda, *n),
            EstimatorSource::Learned {
                model,
                history,
                rolling,
            } => Policy::qssf(
                config.lambda,
                LearnedEstimator::new(HistoryStore::from_jobs(history, *rolling), model.clone()),
            ),
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyRun {
    pub metrics: MetricsSummary,
    pub groups: DurationGroups,
    #[serde(skip)]
    pub result: SimResult,
}

/// Replays `jobs` once per policy, in parallel. Results keep the input order.
pub fn run_policies(
    jobs: &[JobRecord],
    cluster: &ClusterSpec,
    policies: Vec<Policy>,
    options: &SimOptions,
    queue_threshold: i64,
) -> Result<Vec<PolicyRun>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = policies
            .into_iter()
            .map(|mut p| {
                s.spawn(move || -> Result<PolicyRun> {
                    let result = run_simulation(jobs, cluster, &mut p, options)?;
                    Ok(PolicyRun {
                        metrics: compute_metrics(&result, queue_threshold),
                        groups: duration_groups(&result, queue_threshold),
                        result,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synth_trace, SynthParams};

    #[test]
    fn split_respects_cutoff() {
        let jobs = synth_trace(&SynthParams {
            job_count: 200,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let cutoff = jobs[100].submit_time;
        let (train, eval) = split_at(&jobs, cutoff);
        assert!(train.iter().all(|j| j.submit_time + j.duration <= cutoff));
        assert!(eval.iter().all(|j| j.submit_time >= cutoff));
        assert!(matches!(
            train_with_cutoff(
                &jobs,
                jobs[0].submit_time - 1,
                &DurationModelConfig::default()
            ),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let jobs = synth_trace(&SynthParams {
            job_count: 300,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let cluster = ClusterSpec::with_vcs("t", 8, &[("vc1", 4), ("vc2", 3), ("vc3", 2)]);
        let opts = SimOptions::default();
        let policies = PolicyKind::ALL.iter().map(|&k| Policy::oracle(k)).collect();
        let runs = run_policies(&jobs, &cluster, policies, &opts, 0).unwrap();
        for (run, &k) in runs.iter().zip(PolicyKind::ALL.iter()) {
            let mut p = Policy::oracle(k);
            let seq = run_simulation(&jobs, &cluster, &mut p, &opts).unwrap();
            assert_eq!(run.result, seq);
        }
    }
}
