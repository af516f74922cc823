//! Row mappers from the released Helios and Philly layouts to the canonical
//! schema. Wall-clock timestamps are read as naive local time and stored as if
//! they were UTC, so hour-of-day statistics stay in the trace's own timezone.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::NaiveDateTime;
use serde_json::Value;

use super::{JobRecord, JobStatus, ParsedTrace, RowReject, VcConfig};
use crate::error::{Error, Result};

pub(crate) fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("none") || s == "NA"
    {
        return None;
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v.round() as i64);
    }
    let head = s.get(..19)?;
    NaiveDateTime::parse_from_str(head, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|t| t.and_utc().timestamp())
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Result<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
        .ok_or_else(|| Error::MalformedHeader {
            expected: format!("a column named {}", names.join("|")),
            found: headers.iter().collect::<Vec<_>>().join(","),
        })
}

/// Maps a Helios `cluster_log.csv` (columns looked up by name).
pub fn parse_helios_job_log<R: Read>(input: R) -> Result<ParsedTrace> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let h = reader.headers()?.clone();
    let c_id = column(&h, &["job_id", "jobid"])?;
    let c_user = column(&h, &["user"])?;
    let c_vc = column(&h, &["vc"])?;
    let c_name = column(&h, &["jobname", "job_name"]).ok();
    let c_gpu = column(&h, &["gpu_num"])?;
    let c_cpu = column(&h, &["cpu_num"])?;
    let c_state = column(&h, &["state", "status"])?;
    let c_submit = column(&h, &["submit_time"])?;
    let c_start = column(&h, &["start_time"])?;
    let c_end = column(&h, &["end_time"])?;
    let c_dur = column(&h, &["duration"]).ok();

    let mut parsed = ParsedTrace::default();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                parsed.rejects.push(RowReject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let get = |c: usize| row.get(c).unwrap_or("");
        let count = |c: usize| {
            get(c)
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0)
                .map(|v| v as u32)
        };
        let result = (|| -> std::result::Result<JobRecord, String> {
            let submit = parse_timestamp(get(c_submit)).ok_or("unparsable submit_time")?;
            let start = parse_timestamp(get(c_start));
            let end = parse_timestamp(get(c_end));
            let duration = match (start, end) {
                (Some(s), Some(e)) => e - s,
                _ => c_dur
                    .and_then(|c| parse_timestamp(get(c)))
                    .ok_or("missing duration")?,
            };
            let job = JobRecord {
                job_id: get(c_id).to_string(),
                user: get(c_user).to_string(),
                vc: get(c_vc).to_string(),
                job_name: c_name.map(|c| get(c).to_string()).unwrap_or_default(),
                gpu_num: count(c_gpu).ok_or("unparsable gpu_num")?,
                cpu_num: count(c_cpu).ok_or("unparsable cpu_num")?,
                status: JobStatus::parse(get(c_state))
                    .ok_or_else(|| format!("unknown status `{}`", get(c_state)))?,
                submit_time: submit,
                start_time: start,
                end_time: end,
                duration,
            };
            job.check()?;
            Ok(job)
        })();
        match result {
            Ok(job) => parsed.jobs.push(job),
            Err(reason) => parsed.rejects.push(RowReject { line, reason }),
        }
    }
    Ok(parsed)
}

/// Maps a Helios VC table: columns `vc` and a node count (`num`, `node_num` or
/// `node_count`), optionally a `date`/`effective_from` column. Without a date
/// column the configuration is static from epoch 0.
pub fn parse_helios_vc_config<R: Read>(input: R) -> Result<Vec<VcConfig>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(input);
    let h = reader.headers()?.clone();
    let c_vc = column(&h, &["vc"])?;
    let c_num = column(&h, &["num", "node_num", "node_count"])?;
    let c_date = column(&h, &["date", "effective_from"]).ok();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::InvalidConfig(format!("line {}: unparsable {what}", i + 2));
        let effective_from = match c_date {
            Some(c) => {
                let raw = row.get(c).unwrap_or("").trim();
                parse_timestamp(raw)
                    .or_else(|| {
                        chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                            .ok()
                            .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
                    })
                    .ok_or_else(|| bad("date"))?
            }
            None => 0,
        };
        let node_count = row
            .get(c_num)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| *v >= 0.0)
            .ok_or_else(|| bad("node count"))? as u32;
        out.push(VcConfig {
            vc: row.get(c_vc).unwrap_or("").to_string(),
            node_count,
            effective_from,
        });
    }
    Ok(out)
}

/// Loads `<dir>/<cluster>/cluster_log.csv` and `<dir>/<cluster>/vc_config.csv`.
/// The cluster holds as many 8-GPU nodes as the VCs ever claim together.
pub fn load_helios_cluster(
    dir: &std::path::Path,
    cluster: &str,
) -> Result<(ParsedTrace, super::ClusterSpec)> {
    let base = dir.join(cluster);
    let log = std::fs::File::open(base.join("cluster_log.csv"))?;
    let trace = parse_helios_job_log(std::io::BufReader::new(log))?;
    let vcs = parse_helios_vc_config(std::fs::File::open(base.join("vc_config.csv"))?)?;
    let spec = super::ClusterSpec::from_vc_configs(cluster, 8, vcs)?;
    Ok((trace, spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhillyJobMode {
    /// One record per job, spanning first attempt start to last attempt end.
    Logical,
    /// One record per attempt; all but the last attempt count as failed.
    Attempts,
}

fn philly_status(s: &str) -> JobStatus {
    match s {
        "Pass" => JobStatus::Completed,
        "Killed" => JobStatus::Canceled,
        _ => JobStatus::Failed,
    }
}

fn attempt_gpus(attempt: &Value) -> u32 {
    attempt["detail"]
        .as_array()
        .map(|d| {
            d.iter()
                .map(|m| m["gpus"].as_array().map_or(0, |g| g.len() as u32))
                .sum()
        })
        .unwrap_or(0)
}

/// Maps the Philly `cluster_job_log` JSON array.
pub fn parse_philly_job_log<R: Read>(input: R, mode: PhillyJobMode) -> Result<ParsedTrace> {
    let entries: Vec<Value> = serde_json::from_reader(input)?;
    let mut parsed = ParsedTrace::default();
    let ts = |v: &Value| v.as_str().and_then(parse_timestamp);
    for (i, e) in entries.iter().enumerate() {
        let line = i as u64 + 1;
        let id = e["jobid"].as_str().unwrap_or_default().to_string();
        let user = e["user"].as_str().unwrap_or_default().to_string();
        let vc = e["vc"].as_str().unwrap_or_default().to_string();
        let status = philly_status(e["status"].as_str().unwrap_or_default());
        let Some(submit) = ts(&e["submitted_time"]) else {
            parsed.rejects.push(RowReject {
                line,
                reason: "unparsable submitted_time".into(),
            });
            continue;
        };
        let attempts = e["attempts"].as_array().cloned().unwrap_or_default();
        let mut records = Vec::new();
        match mode {
            PhillyJobMode::Logical => {
                let start = attempts.first().and_then(|a| ts(&a["start_time"]));
                let end = attempts.last().and_then(|a| ts(&a["end_time"]));
                let gpus = attempts.first().map_or(0, attempt_gpus);
                records.push((id.clone(), gpus, status, start, end));
            }
            PhillyJobMode::Attempts => {
                for (k, a) in attempts.iter().enumerate() {
                    let st = if k + 1 == attempts.len() {
                        status
                    } else {
                        JobStatus::Failed
                    };
                    records.push((
                        format!("{id}#{k}"),
                        attempt_gpus(a),
                        st,
                        ts(&a["start_time"]),
                        ts(&a["end_time"]),
                    ));
                }
            }
        }
        for (job_id, gpu_num, status, start, end) in records {
            let (Some(s), Some(en)) = (start, end) else {
                parsed.rejects.push(RowReject {
                    line,
                    reason: "attempt without start/end".into(),
                });
                continue;
            };
            let job = JobRecord {
                job_id,
                user: user.clone(),
                vc: vc.clone(),
                job_name: String::new(),
                gpu_num,
                cpu_num: 0,
                status,
                submit_time: submit.min(s),
                start_time: Some(s),
                end_time: Some(en),
                duration: en - s,
            };
            match job.check() {
                Ok(()) => parsed.jobs.push(job),
                Err(reason) => parsed.rejects.push(RowReject { line, reason }),
            }
        }
    }
    Ok(parsed)
}

/// Reduces the Philly per-minute GPU utilization export (`time, machine,
/// gpu0_util, ...`) to `(minute, total nodes, running nodes)` rows. A machine
/// is running in a minute when any of its GPUs reports non-zero utilization.
pub fn parse_philly_gpu_util<R: Read>(input: R) -> Result<Vec<(i64, u32, u32)>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let mut per_minute: BTreeMap<i64, HashMap<String, bool>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let Some(t) = row.get(0).and_then(parse_timestamp) else {
            continue;
        };
        let machine = row.get(1).unwrap_or("").to_string();
        let busy = row
            .iter()
            .skip(2)
            .filter_map(|v| v.trim().parse::<f64>().ok())
            .any(|u| u > 0.0);
        let minute = t - t.rem_euclid(60);
        let slot = per_minute
            .entry(minute)
            .or_default()
            .entry(machine)
            .or_insert(false);
        *slot |= busy;
    }
    Ok(per_minute
        .into_iter()
        .map(|(m, machines)| {
            (
                m,
                machines.len() as u32,
                machines.values().filter(|b| **b).count() as u32,
            )
        })
        .collect())
}
