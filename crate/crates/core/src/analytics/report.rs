use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::svg::Chart;
use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    /// Utilization window.
    pub start: i64,
    pub end: i64,
    pub total_gpus: u64,
    /// Shift applied before hour-of-day bucketing.
    pub tz_offset: i64,
    pub svg: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub paths: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    trace: &'a TraceSummary,
    utilization_mean: f64,
    hour_of_day_utilization: [f64; 24],
    top5_gpu_time_share: f64,
    top5_cpu_time_share: f64,
}

fn csv_file(
    dir: &Path,
    name: &str,
    files: &mut ReportFiles,
) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    files.paths.push(path);
    Ok(w)
}

/// Writes the characterization report for `jobs` into `dir`. Utilization is
/// computed from `intervals` at minute resolution.
pub fn write_report(
    dir: &Path,
    jobs: &[JobRecord],
    intervals: &[BusyInterval],
    opts: &ReportOptions,
) -> Result<ReportFiles> {
    let ReportOptions {
        start,
        end,
        total_gpus,
        tz_offset,
        svg,
    } = *opts;
    std::fs::create_dir_all(dir)?;
    let mut files = ReportFiles::default();

    let util = utilization_timeline(intervals, total_gpus, start, end, 60)?;
    let mut w = csv_file(dir, "utilization.csv", &mut files)?;
    w.write_record(["minute", "utilization"])?;
    for (i, v) in util.values.iter().enumerate() {
        w.serialize((util.start + i as i64 * 60, v))?;
    }
    w.flush()?;

    let mut cdfs = Vec::new();
    for (kind, name) in [(JobKind::Gpu, "gpu"), (JobKind::Cpu, "cpu")] {
        let mut w = csv_file(dir, &format!("cdf_duration_{name}.csv"), &mut files)?;
        w.write_record(["duration", "fraction"])?;
        if let Ok(cdf) = duration_cdf(jobs, kind) {
            for (d, f) in &cdf.points {
                w.serialize((d, f))?;
            }
            cdfs.push((name, cdf.points));
        }
        w.flush()?;
    }

    let mut w = csv_file(dir, "demand_breakdown.csv", &mut files)?;
    for row in gpu_demand_breakdown(jobs) {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut w = csv_file(dir, "status.csv", &mut files)?;
    w.write_record([
        "grouping",
        "group",
        "jobs",
        "completed",
        "canceled",
        "failed",
    ])?;
    for (grouping, name) in [
        (StatusGrouping::JobKind, "kind"),
        (StatusGrouping::GpuDemand, "gpu_demand"),
    ] {
        for r in status_breakdown(jobs, grouping) {
            w.serialize((name, &r.group, r.jobs, r.completed, r.canceled, r.failed))?;
        }
    }
    w.flush()?;

    let users = user_stats(jobs, None);
    let mut w = csv_file(dir, "users.csv", &mut files)?;
    for u in &users {
        w.serialize(u)?;
    }
    w.flush()?;

    let summary = trace_summary(jobs);
    let mean_util = if util.values.is_empty() {
        0.0
    } else {
        util.values.iter().sum::<f64>() / util.values.len() as f64
    };
    let path = dir.join("summary.json");
    let body = Summary {
        trace: &summary,
        utilization_mean: mean_util,
        hour_of_day_utilization: util.hour_of_day(tz_offset),
        top5_gpu_time_share: top_users_share(&users, 0.05, |u| u.gpu_time),
        top5_cpu_time_share: top_users_share(&users, 0.05, |u| u.cpu_time),
    };
    std::fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")?;
    files.paths.push(path);

    if svg {
        let chart = Chart {
            title: "Job duration CDF",
            x_label: "duration (s, log scale)",
            y_label: "fraction of jobs",
            log_x: true,
            series: cdfs.iter().map(|(n, p)| (*n, p.clone())).collect(),
        };
        let path = dir.join("cdf_duration.svg");
        std::fs::write(&path, chart.render())?;
        files.paths.push(path);

        let hourly: Vec<(f64, f64)> = util
            .aggregate(3600)
            .into_iter()
            .map(|(t, v)| ((t - start) as f64 / 3600.0, v))
            .collect();
        let chart = Chart {
            title: "Hourly GPU utilization",
            x_label: "hours since start",
            y_label: "busy GPU fraction",
            log_x: false,
            series: vec![("utilization", hourly)],
        };
        let path = dir.join("utilization.svg");
        std::fs::write(&path, chart.render())?;
        files.paths.push(path);
    }
    Ok(files)
}
