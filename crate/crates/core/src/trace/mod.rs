//! Job traces and cluster configuration in the canonical CSV/JSON schema.
//!
//! The job log is a UTF-8 CSV with the header in [`JOB_LOG_HEADER`]. Rows that
//! parse but break a record invariant are collected as [`RowReject`]s rather
//! than dropped, so callers can report how much of a trace was usable.

mod adapters;
mod synth;

pub use adapters::{
    load_helios_cluster, parse_helios_job_log, parse_helios_vc_config, parse_philly_gpu_util,
    parse_philly_job_log, PhillyJobMode,
};
pub use synth::{synth_trace, DurationDist, SynthParams};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const JOB_LOG_HEADER: &str =
    "job_id,user,vc,job_name,gpu_num,cpu_num,status,submit_time,start_time,end_time,duration";
pub const VC_CONFIG_HEADER: &str = "effective_from,vc,node_count";

/// Final state of a job. Timeouts and node failures are folded into `Failed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JobStatus {
    Completed,
    Canceled,
    Failed,
}

impl JobStatus {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "COMPLETED" | "PASS" => Some(Self::Completed),
            "CANCELED" | "CANCELLED" | "KILLED" => Some(Self::Canceled),
            "FAILED" | "TIMEOUT" | "NODE_FAIL" => Some(Self::Failed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "COMPLETED",
            Self::Canceled => "CANCELED",
            Self::Failed => "FAILED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub user: String,
    pub vc: String,
    pub job_name: String,
    pub gpu_num: u32,
    pub cpu_num: u32,
    pub status: JobStatus,
    pub submit_time: i64,
    pub start_time: Option<i64>,
    pub end_time: Option<i64>,
    pub duration: i64,
}

impl JobRecord {
    pub fn is_gpu_job(&self) -> bool {
        self.gpu_num > 0
    }

    /// Duration multiplied by the GPU count.
    pub fn gpu_time(&self) -> i64 {
        self.duration * i64::from(self.gpu_num)
    }

    pub fn cpu_time(&self) -> i64 {
        self.duration * i64::from(self.cpu_num)
    }

    pub fn queuing_delay(&self) -> Option<i64> {
        self.start_time.map(|s| s - self.submit_time)
    }

    /// Returns the first violated invariant, if any.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.job_id.is_empty() {
            return Err("empty job_id".into());
        }
        if self.duration < 0 {
            return Err("negative duration".into());
        }
        if let Some(start) = self.start_time {
            if start < self.submit_time {
                return Err("start before submit".into());
            }
        }
        if let (Some(start), Some(end)) = (self.start_time, self.end_time) {
            if end < start {
                return Err("negative duration".into());
            }
            if end - start != self.duration {
                return Err(format!(
                    "duration mismatch: end - start = {}, duration = {}",
                    end - start,
                    self.duration
                ));
            }
        }
        if let (None, Some(end)) = (self.start_time, self.end_time) {
            if end < self.submit_time {
                return Err("end before submit".into());
            }
        }
        Ok(())
    }
}

/// A data row that could not be turned into a valid [`JobRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowReject {
    /// 1-based line number in the source, header is line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTrace {
    pub jobs: Vec<JobRecord>,
    pub rejects: Vec<RowReject>,
}

fn check_header(found: &csv::StringRecord, expected: &str) -> Result<()> {
    let joined = found.iter().collect::<Vec<_>>().join(",");
    let joined = joined.trim_start_matches('\u{feff}');
    if joined != expected {
        return Err(Error::MalformedHeader {
            expected: expected.to_string(),
            found: joined.to_string(),
        });
    }
    Ok(())
}

fn opt_time(field: &str) -> std::result::Result<Option<i64>, String> {
    let field = field.trim();
    if field.is_empty() {
        Ok(None)
    } else {
        field
            .parse()
            .map(Some)
            .map_err(|_| format!("unparsable time `{field}`"))
    }
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<JobRecord, String> {
    if row.len() != 11 {
        return Err(format!("expected 11 fields, found {}", row.len()));
    }
    let int = |i: usize, name: &str| -> std::result::Result<i64, String> {
        row[i]
            .trim()
            .parse::<i64>()
            .map_err(|_| format!("unparsable {name} `{}`", &row[i]))
    };
    let count = |i: usize, name: &str| -> std::result::Result<u32, String> {
        row[i]
            .trim()
            .parse::<u32>()
            .map_err(|_| format!("unparsable {name} `{}`", &row[i]))
    };
    let status =
        JobStatus::parse(&row[6]).ok_or_else(|| format!("unknown status `{}`", &row[6]))?;
    let job = JobRecord {
        job_id: row[0].to_string(),
        user: row[1].to_string(),
        vc: row[2].to_string(),
        job_name: row[3].to_string(),
        gpu_num: count(4, "gpu_num")?,
        cpu_num: count(5, "cpu_num")?,
        status,
        submit_time: int(7, "submit_time")?,
        start_time: opt_time(&row[8])?,
        end_time: opt_time(&row[9])?,
        duration: int(10, "duration")?,
    };
    job.check()?;
    Ok(job)
}

/// Parses a canonical job log. A bad header is fatal; bad rows become rejects.
pub fn parse_job_log<R: Read>(input: R) -> Result<ParsedTrace> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(reader.headers()?, JOB_LOG_HEADER)?;
    let mut parsed = ParsedTrace::default();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2;
        match row {
            Ok(row) => match parse_row(&row) {
                Ok(job) => parsed.jobs.push(job),
                Err(reason) => parsed.rejects.push(RowReject { line, reason }),
            },
            Err(e) => parsed.rejects.push(RowReject {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(parsed)
}

pub fn write_job_log<W: Write>(jobs: &[JobRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(JOB_LOG_HEADER.split(','))?;
    let opt = |t: Option<i64>| t.map(|v| v.to_string()).unwrap_or_default();
    for j in jobs {
        w.write_record([
            j.job_id.as_str(),
            j.user.as_str(),
            j.vc.as_str(),
            j.job_name.as_str(),
            &j.gpu_num.to_string(),
            &j.cpu_num.to_string(),
            j.status.as_str(),
            &j.submit_time.to_string(),
            &opt(j.start_time),
            &opt(j.end_time),
            &j.duration.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcConfig {
    pub vc: String,
    pub node_count: u32,
    pub effective_from: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VcSegment {
    pub from: i64,
    /// Exclusive end; `None` for the last segment.
    pub until: Option<i64>,
    pub node_count: u32,
}

/// Piecewise-constant node count of one VC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VcTimeline {
    pub vc: String,
    pub segments: Vec<VcSegment>,
}

impl VcTimeline {
    /// Node count in effect at `t`. Before the first segment, the first
    /// segment's count applies.
    pub fn node_count_at(&self, t: i64) -> u32 {
        self.segments
            .iter()
            .rev()
            .find(|s| s.from <= t)
            .or(self.segments.first())
            .map_or(0, |s| s.node_count)
    }
}

/// Groups configurations into per-VC timelines, ordered by VC name.
pub fn build_vc_timelines(configs: &[VcConfig]) -> Result<Vec<VcTimeline>> {
    let mut by_vc: BTreeMap<&str, Vec<&VcConfig>> = BTreeMap::new();
    for c in configs {
        by_vc.entry(c.vc.as_str()).or_default().push(c);
    }
    let mut out = Vec::with_capacity(by_vc.len());
    for (vc, mut rows) in by_vc {
        rows.sort_by_key(|c| c.effective_from);
        for pair in rows.windows(2) {
            if pair[0].effective_from == pair[1].effective_from {
                return Err(Error::OverlappingVcConfig {
                    vc: vc.to_string(),
                    at: pair[0].effective_from,
                });
            }
        }
        let segments = rows
            .iter()
            .enumerate()
            .map(|(i, c)| VcSegment {
                from: c.effective_from,
                until: rows.get(i + 1).map(|n| n.effective_from),
                node_count: c.node_count,
            })
            .collect();
        out.push(VcTimeline {
            vc: vc.to_string(),
            segments,
        });
    }
    Ok(out)
}

pub fn parse_vc_config_rows<R: Read>(input: R) -> Result<Vec<VcConfig>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(input);
    check_header(reader.headers()?, VC_CONFIG_HEADER)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::InvalidConfig(format!("line {}: unparsable {what}", i + 2));
        out.push(VcConfig {
            effective_from: row[0].trim().parse().map_err(|_| bad("effective_from"))?,
            vc: row[1].to_string(),
            node_count: row[2].trim().parse().map_err(|_| bad("node_count"))?,
        });
    }
    Ok(out)
}

/// Parses a VC configuration CSV into per-VC timelines.
pub fn parse_vc_config<R: Read>(input: R) -> Result<Vec<VcTimeline>> {
    build_vc_timelines(&parse_vc_config_rows(input)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub name: String,
    pub nodes: u32,
    pub gpus_per_node: u32,
    #[serde(default)]
    pub vcs: Vec<VcConfig>,
}

impl ClusterSpec {
    /// A cluster whose VCs hold fixed node counts from the epoch on.
    pub fn with_vcs(name: &str, gpus_per_node: u32, vcs: &[(&str, u32)]) -> Self {
        Self {
            name: name.to_string(),
            nodes: vcs.iter().map(|v| v.1).sum(),
            gpus_per_node,
            vcs: vcs
                .iter()
                .map(|&(vc, node_count)| VcConfig {
                    vc: vc.to_string(),
                    node_count,
                    effective_from: 0,
                })
                .collect(),
        }
    }

    /// A cluster just large enough for the VCs at their largest combined size.
    pub fn from_vc_configs(name: &str, gpus_per_node: u32, vcs: Vec<VcConfig>) -> Result<Self> {
        let timelines = build_vc_timelines(&vcs)?;
        let nodes = vcs
            .iter()
            .map(|c| {
                timelines
                    .iter()
                    .map(|tl| tl.node_count_at(c.effective_from))
                    .sum::<u32>()
            })
            .max()
            .unwrap_or(0);
        let spec = Self {
            name: name.to_string(),
            nodes,
            gpus_per_node,
            vcs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn total_gpus(&self) -> u64 {
        u64::from(self.nodes) * u64::from(self.gpus_per_node)
    }

    pub fn timelines(&self) -> Result<Vec<VcTimeline>> {
        build_vc_timelines(&self.vcs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gpus_per_node == 0 {
            return Err(Error::InvalidCluster(
                "gpus_per_node must be positive".into(),
            ));
        }
        let timelines = self.timelines()?;
        let mut checkpoints: Vec<i64> = self.vcs.iter().map(|c| c.effective_from).collect();
        checkpoints.sort_unstable();
        checkpoints.dedup();
        for t in checkpoints {
            let used: u64 = timelines
                .iter()
                .map(|tl| u64::from(tl.node_count_at(t)))
                .sum();
            if used > u64::from(self.nodes) {
                return Err(Error::InvalidCluster(format!(
                    "VCs hold {used} nodes at {t}, cluster has {}",
                    self.nodes
                )));
            }
        }
        Ok(())
    }

    /// VC node counts in effect at `t`, ordered by VC name.
    pub fn snapshot(&self, t: i64) -> Result<Vec<(String, u32)>> {
        Ok(self
            .timelines()?
            .into_iter()
            .map(|tl| {
                let n = tl.node_count_at(t);
                (tl.vc, n)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub total: usize,
    pub gpu_jobs: usize,
    pub cpu_jobs: usize,
    pub completed: usize,
    pub canceled: usize,
    pub failed: usize,
    /// Jobs asking for more GPUs than the whole cluster holds.
    pub exceeds_cluster: Vec<String>,
    /// Jobs whose VC is absent from the cluster spec.
    pub unknown_vc: Vec<String>,
}

impl ValidationReport {
    pub fn flags(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .exceeds_cluster
            .iter()
            .map(|id| format!("{id}: demand exceeds cluster"))
            .collect();
        out.extend(self.unknown_vc.iter().map(|id| format!("{id}: unknown vc")));
        out
    }
}

pub fn validate_trace(jobs: &[JobRecord], cluster: &ClusterSpec) -> ValidationReport {
    let mut report = ValidationReport {
        total: jobs.len(),
        ..Default::default()
    };
    let capacity = cluster.total_gpus();
    let known: std::collections::HashSet<&str> =
        cluster.vcs.iter().map(|c| c.vc.as_str()).collect();
    for j in jobs {
        if j.is_gpu_job() {
            report.gpu_jobs += 1;
        } else {
            report.cpu_jobs += 1;
        }
        match j.status {
            JobStatus::Completed => report.completed += 1,
            JobStatus::Canceled => report.canceled += 1,
            JobStatus::Failed => report.failed += 1,
        }
        if u64::from(j.gpu_num) > capacity {
            report.exceeds_cluster.push(j.job_id.clone());
        }
        if !known.is_empty() && !known.contains(j.vc.as_str()) {
            report.unknown_vc.push(j.job_id.clone());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(rows: &[&str]) -> String {
        let mut s = String::from(JOB_LOG_HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_canonical_row() {
        let parsed =
            parse_job_log(log(&["j1,u1,vcA,train_resnet,8,64,COMPLETED,0,10,110,100"]).as_bytes())
                .unwrap();
        assert!(parsed.rejects.is_empty());
        let j = &parsed.jobs[0];
        assert_eq!(j.gpu_num, 8);
        assert_eq!(j.cpu_num, 64);
        assert_eq!(j.duration, 100);
        assert_eq!(j.status, JobStatus::Completed);
        assert_eq!(j.start_time, Some(10));
        assert_eq!(j.end_time, Some(110));
    }

    #[test]
    fn rejects_negative_duration() {
        let parsed =
            parse_job_log(log(&["j1,u1,vcA,x,1,1,COMPLETED,0,50,40,0"]).as_bytes()).unwrap();
        assert!(parsed.jobs.is_empty());
        assert_eq!(parsed.rejects[0].reason, "negative duration");
        assert_eq!(parsed.rejects[0].line, 2);
    }

    #[test]
    fn unparsable_fields_are_row_level() {
        let parsed = parse_job_log(
            log(&[
                "j1,u1,vcA,x,one,1,COMPLETED,0,,,5",
                "j2,u1,vcA,x,1,1,COMPLETED,0,,,5",
                "j3,u1,vcA,x,1,1,WEIRD,0,,,5",
            ])
            .as_bytes(),
        )
        .unwrap();
        assert_eq!(parsed.jobs.len(), 1);
        assert_eq!(parsed.rejects.len(), 2);
        assert!(parsed.rejects[0].reason.contains("gpu_num"));
        assert!(parsed.rejects[1].reason.contains("status"));
    }

    #[test]
    fn bad_header_is_fatal() {
        let err = parse_job_log("a,b,c\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));
    }

    #[test]
    fn timeout_and_node_fail_collapse_to_failed() {
        assert_eq!(JobStatus::parse("TIMEOUT"), Some(JobStatus::Failed));
        assert_eq!(JobStatus::parse("NODE_FAIL"), Some(JobStatus::Failed));
        assert_eq!(JobStatus::parse("cancelled"), Some(JobStatus::Canceled));
    }

    #[test]
    fn missing_schedule_times_are_kept() {
        let parsed = parse_job_log(log(&["j1,u1,vcA,,2,4,FAILED,7,,,30"]).as_bytes()).unwrap();
        assert_eq!(parsed.jobs[0].start_time, None);
        assert_eq!(parsed.jobs[0].job_name, "");
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let text = log(&[
            "j1,u1,vcA,train_resnet,8,64,COMPLETED,0,10,110,100",
            "j2,u2,vcB,\"name, with comma\",0,4,CANCELED,5,,,12",
            "j3,u2,vcB,eval,1,2,FAILED,5,6,9,3",
        ]);
        let parsed = parse_job_log(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_job_log(&parsed.jobs, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn vc_config_single_segment() {
        let tl = parse_vc_config("effective_from,vc,node_count\n0,vcA,4\n".as_bytes()).unwrap();
        assert_eq!(tl.len(), 1);
        assert_eq!(
            tl[0].segments,
            vec![VcSegment {
                from: 0,
                until: None,
                node_count: 4
            }]
        );
    }

    #[test]
    fn vc_config_two_days() {
        let tl = parse_vc_config("effective_from,vc,node_count\n86400,vcA,6\n0,vcA,4\n".as_bytes())
            .unwrap();
        let segs = &tl[0].segments;
        assert_eq!(segs.len(), 2);
        assert_eq!(
            segs[0],
            VcSegment {
                from: 0,
                until: Some(86400),
                node_count: 4
            }
        );
        assert_eq!(segs[1].from, 86400);
        assert_eq!(tl[0].node_count_at(86399), 4);
        assert_eq!(tl[0].node_count_at(86400), 6);
    }

    #[test]
    fn vc_config_overlap_is_fatal() {
        let err = parse_vc_config("effective_from,vc,node_count\n0,vcA,4\n0,vcA,5\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, Error::OverlappingVcConfig { .. }));
    }

    #[test]
    fn cluster_spec_checks_partition() {
        let ok = r#"{"name":"c","nodes":4,"gpus_per_node":8,"vcs":[{"vc":"a","node_count":2,"effective_from":0},{"vc":"b","node_count":2,"effective_from":0}]}"#;
        assert_eq!(ClusterSpec::from_json(ok).unwrap().total_gpus(), 32);
        let over = ok.replace("\"nodes\":4", "\"nodes\":3");
        assert!(ClusterSpec::from_json(&over).is_err());
        let zero = ok.replace("\"gpus_per_node\":8", "\"gpus_per_node\":0");
        assert!(ClusterSpec::from_json(&zero).is_err());
    }

    fn job(id: &str, gpus: u32) -> JobRecord {
        JobRecord {
            job_id: id.into(),
            user: "u".into(),
            vc: "a".into(),
            job_name: String::new(),
            gpu_num: gpus,
            cpu_num: 1,
            status: JobStatus::Completed,
            submit_time: 0,
            start_time: None,
            end_time: None,
            duration: 1,
        }
    }

    #[test]
    fn validation_report() {
        let cluster = ClusterSpec {
            name: "c".into(),
            nodes: 133,
            gpus_per_node: 8,
            vcs: vec![VcConfig {
                vc: "a".into(),
                node_count: 133,
                effective_from: 0,
            }],
        };
        assert_eq!(validate_trace(&[], &cluster), ValidationReport::default());

        let jobs = vec![
            job("g1", 1),
            job("g2", 2),
            job("g3", 8),
            job("c1", 0),
            job("c2", 0),
        ];
        let r = validate_trace(&jobs, &cluster);
        assert_eq!((r.gpu_jobs, r.cpu_jobs), (3, 2));

        let r = validate_trace(&[job("big", 2048)], &cluster);
        assert_eq!(r.exceeds_cluster, vec!["big".to_string()]);
        assert_eq!(r.flags(), vec!["big: demand exceeds cluster".to_string()]);
    }
}
