//! Trace characterization: utilization over time, duration CDFs, GPU demand,
//! job outcomes and per-user consumption.

mod report;
pub mod svg;

use std::collections::BTreeMap;

use serde::Serialize;

pub use report::{write_report, ReportFiles, ReportOptions};

use crate::error::{Error, Result};
use crate::sim::SimResult;
use crate::trace::{JobRecord, JobStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Gpu,
    Cpu,
}

impl JobKind {
    pub fn matches(self, job: &JobRecord) -> bool {
        (self == Self::Gpu) == job.is_gpu_job()
    }
}

/// Empirical CDF as (value, fraction of jobs at or below value).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfSeries {
    pub points: Vec<(f64, f64)>,
}

pub fn empirical_cdf(values: &[f64]) -> Result<CdfSeries> {
    if values.is_empty() {
        return Err(Error::EmptyInput("cdf input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => points.push((*x, frac)),
        }
    }
    Ok(CdfSeries { points })
}

pub fn duration_cdf(jobs: &[JobRecord], kind: JobKind) -> Result<CdfSeries> {
    let d: Vec<f64> = jobs
        .iter()
        .filter(|j| kind.matches(j))
        .map(|j| j.duration as f64)
        .collect();
    empirical_cdf(&d)
}

/// Mean and median of a sample; the median of an even sample averages the two middle values.
pub fn mean_median(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    Some((v.iter().sum::<f64>() / n as f64, median))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceSummary {
    pub jobs: usize,
    pub gpu_jobs: usize,
    pub cpu_jobs: usize,
    pub gpu_mean_duration: f64,
    pub gpu_median_duration: f64,
    pub cpu_mean_duration: f64,
    pub cpu_median_duration: f64,
    pub avg_gpus: f64,
    pub gpu_time: i64,
    pub cpu_time: i64,
    /// Share of GPU jobs that were canceled or failed.
    pub gpu_unsuccessful: f64,
    pub cpu_unsuccessful: f64,
}

pub fn trace_summary(jobs: &[JobRecord]) -> TraceSummary {
    let durations = |k: JobKind| -> Vec<f64> {
        jobs.iter()
            .filter(|j| k.matches(j))
            .map(|j| j.duration as f64)
            .collect()
    };
    let unsuccessful = |k: JobKind| {
        let (mut n, mut bad) = (0usize, 0usize);
        for j in jobs.iter().filter(|j| k.matches(j)) {
            n += 1;
            bad += usize::from(j.status != JobStatus::Completed);
        }
        if n == 0 {
            0.0
        } else {
            bad as f64 / n as f64
        }
    };
    let gpu = durations(JobKind::Gpu);
    let cpu = durations(JobKind::Cpu);
    let (gm, gmed) = mean_median(&gpu).unwrap_or_default();
    let (cm, cmed) = mean_median(&cpu).unwrap_or_default();
    let gpu_counts: u64 = jobs
        .iter()
        .filter(|j| j.is_gpu_job())
        .map(|j| u64::from(j.gpu_num))
        .sum();
    TraceSummary {
        jobs: jobs.len(),
        gpu_jobs: gpu.len(),
        cpu_jobs: cpu.len(),
        gpu_mean_duration: gm,
        gpu_median_duration: gmed,
        cpu_mean_duration: cm,
        cpu_median_duration: cmed,
        avg_gpus: if gpu.is_empty() {
            0.0
        } else {
            gpu_counts as f64 / gpu.len() as f64
        },
        gpu_time: jobs.iter().map(JobRecord::gpu_time).sum(),
        cpu_time: jobs.iter().map(JobRecord::cpu_time).sum(),
        gpu_unsuccessful: unsuccessful(JobKind::Gpu),
        cpu_unsuccessful: unsuccessful(JobKind::Cpu),
    }
}

/// A stretch of time during which `gpus` GPUs were busy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusyInterval {
    pub start: i64,
    pub end: i64,
    pub gpus: u32,
}

/// Intervals from the start and end times recorded in a trace. Jobs without
/// both are skipped.
pub fn recorded_intervals<'a>(jobs: impl IntoIterator<Item = &'a JobRecord>) -> Vec<BusyInterval> {
    jobs.into_iter()
        .filter_map(|j| match (j.start_time, j.end_time) {
            (Some(start), Some(end)) if j.gpu_num > 0 && end > start => Some(BusyInterval {
                start,
                end,
                gpus: j.gpu_num,
            }),
            _ => None,
        })
        .collect()
}

pub fn replayed_intervals(result: &SimResult) -> Vec<BusyInterval> {
    result
        .segments
        .iter()
        .filter(|s| s.end > s.start)
        .map(|s| BusyInterval {
            start: s.start,
            end: s.end,
            gpus: s.placement.iter().map(|p| p.1).sum(),
        })
        .collect()
}

/// Busy-GPU fraction per `resolution`-second bucket, averaged over each bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationTimeline {
    pub start: i64,
    pub resolution: i64,
    pub total_gpus: u64,
    pub values: Vec<f64>,
}

impl UtilizationTimeline {
    /// Means over consecutive groups of `period / resolution` buckets, keyed by group start.
    pub fn aggregate(&self, period: i64) -> Vec<(i64, f64)> {
        let per = (period / self.resolution).max(1) as usize;
        let base = self.start - self.start.rem_euclid(period.max(1));
        let mut groups: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
        for (i, v) in self.values.iter().enumerate() {
            let t = self.start + i as i64 * self.resolution;
            let g =
                base + ((t - base) / (per as i64 * self.resolution)) * per as i64 * self.resolution;
            let e = groups.entry(g).or_default();
            e.0 += v;
            e.1 += 1;
        }
        groups
            .into_iter()
            .map(|(t, (s, n))| (t, s / n as f64))
            .collect()
    }

    /// Mean busy fraction by hour of day (0-23), with timestamps shifted by `tz_offset`.
    pub fn hour_of_day(&self, tz_offset: i64) -> [f64; 24] {
        let mut sums = [(0.0, 0usize); 24];
        for (i, v) in self.values.iter().enumerate() {
            let t = self.start + i as i64 * self.resolution + tz_offset;
            let h = (t.rem_euclid(86_400) / 3600) as usize;
            sums[h].0 += v;
            sums[h].1 += 1;
        }
        sums.map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
    }
}

pub fn utilization_timeline(
    intervals: &[BusyInterval],
    total_gpus: u64,
    start: i64,
    end: i64,
    resolution: i64,
) -> Result<UtilizationTimeline> {
    if resolution <= 0 {
        return Err(Error::InvalidConfig(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let buckets = if end > start {
        ((end - start + resolution - 1) / resolution) as usize
    } else {
        0
    };
    // GPU-seconds per bucket.
    let mut busy = vec![0.0f64; buckets];
    for iv in intervals {
        let (a, b) = (iv.start.max(start), iv.end.min(end));
        if a >= b {
            continue;
        }
        let g = f64::from(iv.gpus);
        let (first, last) = (
            ((a - start) / resolution) as usize,
            ((b - 1 - start) / resolution) as usize,
        );
        for (k, slot) in busy.iter_mut().enumerate().take(last + 1).skip(first) {
            let lo = start + k as i64 * resolution;
            let overlap = b.min(lo + resolution) - a.max(lo);
            *slot += g * overlap as f64;
        }
    }
    let cap = total_gpus as f64 * resolution as f64;
    let values = busy
        .into_iter()
        .map(|s| if cap > 0.0 { (s / cap).min(1.0) } else { 0.0 })
        .collect();
    Ok(UtilizationTimeline {
        start,
        resolution,
        total_gpus,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandShare {
    pub gpu_num: u32,
    pub jobs: usize,
    pub job_share: f64,
    pub gpu_time: i64,
    pub gpu_time_share: f64,
}

/// GPU jobs grouped by GPU count, with their shares of jobs and of GPU time.
pub fn gpu_demand_breakdown(jobs: &[JobRecord]) -> Vec<DemandShare> {
    let mut by: BTreeMap<u32, (usize, i64)> = BTreeMap::new();
    for j in jobs.iter().filter(|j| j.is_gpu_job()) {
        let e = by.entry(j.gpu_num).or_default();
        e.0 += 1;
        e.1 += j.gpu_time();
    }
    let n: usize = by.values().map(|v| v.0).sum();
    let t: i64 = by.values().map(|v| v.1).sum();
    by.into_iter()
        .map(|(gpu_num, (c, g))| DemandShare {
            gpu_num,
            jobs: c,
            job_share: c as f64 / n as f64,
            gpu_time: g,
            gpu_time_share: if t == 0 { 0.0 } else { g as f64 / t as f64 },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusGrouping {
    /// GPU jobs and CPU jobs.
    JobKind,
    /// GPU jobs by GPU count rounded up to a power of two.
    GpuDemand,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusRow {
    pub group: String,
    pub jobs: usize,
    pub completed: f64,
    pub canceled: f64,
    pub failed: f64,
}

pub fn status_breakdown(jobs: &[JobRecord], grouping: StatusGrouping) -> Vec<StatusRow> {
    let mut by: BTreeMap<(u32, String), [usize; 3]> = BTreeMap::new();
    for j in jobs {
        let key = match grouping {
            StatusGrouping::JobKind => {
                if j.is_gpu_job() {
                    (0, "gpu".to_string())
                } else {
                    (1, "cpu".to_string())
                }
            }
            StatusGrouping::GpuDemand => {
                if !j.is_gpu_job() {
                    continue;
                }
                let b = j.gpu_num.next_power_of_two();
                (b, b.to_string())
            }
        };
        let e = by.entry(key).or_default();
        match j.status {
            JobStatus::Completed => e[0] += 1,
            JobStatus::Canceled => e[1] += 1,
            JobStatus::Failed => e[2] += 1,
        }
    }
    by.into_iter()
        .map(|((_, group), c)| {
            let n = c.iter().sum::<usize>();
            let f = |x: usize| x as f64 / n as f64;
            StatusRow {
                group,
                jobs: n,
                completed: f(c[0]),
                canceled: f(c[1]),
                failed: f(c[2]),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserStat {
    pub user: String,
    pub jobs: usize,
    pub gpu_jobs: usize,
    pub gpu_time: i64,
    pub cpu_time: i64,
    pub queuing: i64,
    pub gpu_time_share: f64,
    pub cpu_time_share: f64,
    pub completed_ratio: f64,
}

/// Per-user totals ranked by GPU time, largest first. `queuing` maps job ids
/// to waiting times from a replay; without it recorded start times are used.
pub fn user_stats(
    jobs: &[JobRecord],
    queuing: Option<&std::collections::HashMap<String, i64>>,
) -> Vec<UserStat> {
    #[derive(Default)]
    struct Acc {
        jobs: usize,
        gpu_jobs: usize,
        gpu: i64,
        cpu: i64,
        queuing: i64,
        completed: usize,
    }
    let mut by: BTreeMap<&str, Acc> = BTreeMap::new();
    for j in jobs {
        let a = by.entry(j.user.as_str()).or_default();
        a.jobs += 1;
        a.gpu_jobs += usize::from(j.is_gpu_job());
        a.gpu += j.gpu_time();
        a.cpu += j.cpu_time();
        a.queuing += match queuing {
            Some(q) => q.get(&j.job_id).copied().unwrap_or(0),
            None => j.queuing_delay().unwrap_or(0),
        };
        a.completed += usize::from(j.status == JobStatus::Completed);
    }
    let gpu_total: i64 = by.values().map(|a| a.gpu).sum();
    let cpu_total: i64 = by.values().map(|a| a.cpu).sum();
    let share = |x: i64, t: i64| if t == 0 { 0.0 } else { x as f64 / t as f64 };
    let mut out: Vec<UserStat> = by
        .into_iter()
        .map(|(user, a)| UserStat {
            user: user.to_string(),
            jobs: a.jobs,
            gpu_jobs: a.gpu_jobs,
            gpu_time: a.gpu,
            cpu_time: a.cpu,
            queuing: a.queuing,
            gpu_time_share: share(a.gpu, gpu_total),
            cpu_time_share: share(a.cpu, cpu_total),
            completed_ratio: a.completed as f64 / a.jobs as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        b.gpu_time
            .cmp(&a.gpu_time)
            .then_with(|| a.user.cmp(&b.user))
    });
    out
}

/// Share of the metric held by the top `fraction` of users (at least one user).
pub fn top_users_share(
    stats: &[UserStat],
    fraction: f64,
    metric: impl Fn(&UserStat) -> i64,
) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    let mut v: Vec<i64> = stats.iter().map(&metric).collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    let k = ((stats.len() as f64 * fraction).ceil() as usize).clamp(1, stats.len());
    let total: i64 = v.iter().sum();
    if total == 0 {
        0.0
    } else {
        v[..k].iter().sum::<i64>() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(user: &str, gpus: u32, duration: i64, status: JobStatus) -> JobRecord {
        JobRecord {
            job_id: format!("{user}{gpus}{duration}"),
            user: user.into(),
            vc: "v".into(),
            job_name: "n".into(),
            gpu_num: gpus,
            cpu_num: 4,
            status,
            submit_time: 0,
            start_time: Some(0),
            end_time: Some(duration),
            duration,
        }
    }

    #[test]
    fn cdf_steps() {
        let c = empirical_cdf(&[5.0]).unwrap();
        assert_eq!(c.points, vec![(5.0, 1.0)]);
        let c = empirical_cdf(&[3.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(c.points, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 1.0)]);
        assert!(duration_cdf(&[], JobKind::Gpu).is_err());
    }

    #[test]
    fn demand_shares() {
        let jobs = [
            job("a", 1, 100, JobStatus::Completed),
            job("b", 8, 100, JobStatus::Completed),
        ];
        let d = gpu_demand_breakdown(&jobs);
        assert_eq!((d[0].job_share, d[1].job_share), (0.5, 0.5));
        assert!((d[0].gpu_time_share - 1.0 / 9.0).abs() < 1e-12);
        assert!((d[1].gpu_time_share - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn half_busy_hour() {
        let iv = [BusyInterval {
            start: 0,
            end: 3600,
            gpus: 8,
        }];
        let u = utilization_timeline(&iv, 16, 0, 7200, 60).unwrap();
        assert_eq!(u.aggregate(3600), vec![(0, 0.5), (3600, 0.0)]);
        let none = utilization_timeline(&[], 16, 0, 600, 60).unwrap();
        assert!(none.values.iter().all(|&v| v == 0.0));
        // Partial bucket overlap.
        let u = utilization_timeline(
            &[BusyInterval {
                start: 30,
                end: 90,
                gpus: 2,
            }],
            2,
            0,
            120,
            60,
        )
        .unwrap();
        assert_eq!(u.values, vec![0.5, 0.5]);
    }

    #[test]
    fn statuses_and_summary() {
        let jobs = [
            job("a", 1, 100, JobStatus::Completed),
            job("a", 2, 300, JobStatus::Failed),
            job("b", 64, 10, JobStatus::Canceled),
            job("b", 0, 50, JobStatus::Completed),
        ];
        let rows = status_breakdown(&jobs, StatusGrouping::GpuDemand);
        assert_eq!(
            rows.iter().map(|r| r.group.as_str()).collect::<Vec<_>>(),
            ["1", "2", "64"]
        );
        assert_eq!(rows[2].canceled, 1.0);
        let kinds = status_breakdown(&jobs, StatusGrouping::JobKind);
        assert!((kinds[0].completed - 1.0 / 3.0).abs() < 1e-12);
        let s = trace_summary(&jobs);
        assert_eq!((s.gpu_jobs, s.cpu_jobs), (3, 1));
        assert_eq!(
            (s.gpu_mean_duration, s.gpu_median_duration),
            (410.0 / 3.0, 100.0)
        );
        assert!((s.avg_gpus - 67.0 / 3.0).abs() < 1e-12);
        assert!((s.gpu_unsuccessful - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_owns_everything() {
        let jobs = [
            job("a", 1, 100, JobStatus::Completed),
            job("a", 4, 10, JobStatus::Completed),
        ];
        let u = user_stats(&jobs, None);
        assert_eq!(u.len(), 1);
        assert_eq!(
            (
                u[0].gpu_time_share,
                u[0].cpu_time_share,
                u[0].completed_ratio
            ),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(top_users_share(&u, 0.05, |s| s.gpu_time), 1.0);
    }
}
