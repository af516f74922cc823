use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::names::NameClusterIndex;
use crate::trace::JobRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    /// Weight ratio between consecutive matched jobs, most recent first.
    pub decay: f64,
    /// Normalized edit distance under which two names are similar.
    pub name_threshold: f64,
    /// Estimate used when there is no history at all.
    pub prior: f64,
    /// Matched jobs considered by the decayed mean.
    pub max_matches: usize,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            decay: 0.8,
            name_threshold: 0.3,
            prior: 600.0,
            max_matches: 64,
        }
    }
}

/// Durations with their end times, kept sorted by end time with prefix sums.
#[derive(Debug, Clone, Default)]
struct Series {
    ends: Vec<i64>,
    durations: Vec<f64>,
    prefix: Vec<f64>,
}

impl Series {
    fn push(&mut self, end: i64, duration: f64) {
        let at = self.ends.partition_point(|&e| e <= end);
        self.ends.insert(at, end);
        self.durations.insert(at, duration);
        self.prefix.truncate(at);
        let mut acc = self.prefix.last().copied().unwrap_or(0.0);
        for d in &self.durations[at..] {
            acc += d;
            self.prefix.push(acc);
        }
    }

    fn visible(&self, now: i64) -> usize {
        self.ends.partition_point(|&e| e <= now)
    }

    fn mean_until(&self, now: i64) -> Option<f64> {
        let n = self.visible(now);
        (n > 0).then(|| self.prefix[n - 1] / n as f64)
    }

    /// Durations that ended by `now`, most recent first.
    fn recent(&self, now: i64) -> impl Iterator<Item = f64> + '_ {
        self.durations[..self.visible(now)].iter().rev().copied()
    }
}

/// Which branch of the rolling estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollingCase {
    EmptyHistory,
    NewUser,
    NewJobName,
    MatchedName,
}

/// Finished jobs indexed for the rolling estimator. Queries at time `t` only
/// see jobs that ended at or before `t`.
#[derive(Debug, Clone)]
pub struct HistoryStore {
    config: RollingConfig,
    names: NameClusterIndex,
    all: Series,
    by_gpu: HashMap<u32, Series>,
    by_user: HashMap<String, Series>,
    by_user_gpu: HashMap<(String, u32), Series>,
    by_user_name: HashMap<(String, u32), Series>,
}

impl HistoryStore {
    pub fn new(config: RollingConfig) -> Self {
        Self {
            config,
            names: NameClusterIndex::new(config.name_threshold),
            all: Series::default(),
            by_gpu: HashMap::new(),
            by_user: HashMap::new(),
            by_user_gpu: HashMap::new(),
            by_user_name: HashMap::new(),
        }
    }

    /// Builds a store from jobs with recorded end times, in end-time order.
    pub fn from_jobs<'a>(
        jobs: impl IntoIterator<Item = &'a JobRecord>,
        config: RollingConfig,
    ) -> Self {
        let mut finished: Vec<&JobRecord> =
            jobs.into_iter().filter(|j| j.end_time.is_some()).collect();
        finished.sort_by_key(|j| (j.end_time, j.submit_time));
        let mut store = Self::new(config);
        for j in finished {
            store.append(j, j.end_time.unwrap_or(j.submit_time));
        }
        store
    }

    pub fn config(&self) -> &RollingConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.all.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.ends.is_empty()
    }

    pub fn append(&mut self, job: &JobRecord, end_time: i64) {
        let d = job.duration as f64;
        let cluster = self.names.insert(&job.job_name);
        self.all.push(end_time, d);
        self.by_gpu
            .entry(job.gpu_num)
            .or_default()
            .push(end_time, d);
        self.by_user
            .entry(job.user.clone())
            .or_default()
            .push(end_time, d);
        self.by_user_gpu
            .entry((job.user.clone(), job.gpu_num))
            .or_default()
            .push(end_time, d);
        self.by_user_name
            .entry((job.user.clone(), cluster))
            .or_default()
            .push(end_time, d);
    }

    /// Rolling duration estimate for `job` using jobs finished by `now`.
    pub fn estimate(&self, job: &JobRecord, now: i64) -> (f64, RollingCase) {
        let Some(global) = self.all.mean_until(now) else {
            return (self.config.prior, RollingCase::EmptyHistory);
        };
        let user_known = self
            .by_user
            .get(&job.user)
            .is_some_and(|s| s.visible(now) > 0);
        if !user_known {
            let v = self
                .by_gpu
                .get(&job.gpu_num)
                .and_then(|s| s.mean_until(now))
                .unwrap_or(global);
            return (v, RollingCase::NewUser);
        }
        let matched = self
            .names
            .lookup(&job.job_name)
            .and_then(|c| self.by_user_name.get(&(job.user.clone(), c)))
            .filter(|s| s.visible(now) > 0);
        let Some(matched) = matched else {
            let v = self
                .by_user_gpu
                .get(&(job.user.clone(), job.gpu_num))
                .and_then(|s| s.mean_until(now))
                .or_else(|| self.by_user.get(&job.user).and_then(|s| s.mean_until(now)))
                .unwrap_or(global);
            return (v, RollingCase::NewJobName);
        };
        let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
        for d in matched.recent(now).take(self.config.max_matches) {
            num += w * d;
            den += w;
            w *= self.config.decay;
        }
        (num / den, RollingCase::MatchedName)
    }
}

/// Rolling duration estimate (seconds) of `job` from `history` as of `now`.
pub fn rolling_estimate(job: &JobRecord, history: &HistoryStore, now: i64) -> f64 {
    history.estimate(job, now).0
}
