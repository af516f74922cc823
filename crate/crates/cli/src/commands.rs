use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, NaiveDateTime};
use clap::Args;
use log::{info, warn};
use serde::Serialize;

use dcsim_core::analytics::{
    recorded_intervals, replayed_intervals, trace_summary, write_report, ReportOptions,
};
use dcsim_core::ces::{
    downsample, forecast_running_nodes, node_series_from_sim, rolling_forecast, run_ces_simulation,
    smape, train_forecaster, CesConfig, CesMode, EnergyModel, Forecaster, ForecasterConfig,
    HolidayCalendar, NodeForecast, NodeSeries, PerfectForecast, StepSeries,
};
use dcsim_core::pipeline::{build_policy, run_policies, train_with_cutoff, EstimatorSource};
use dcsim_core::predictor::{DurationModel, DurationModelConfig, RollingConfig};
use dcsim_core::sched::{NoisyOracleEstimator, Policy, PolicyConfig, PolicyKind};
use dcsim_core::sim::{
    run_simulation, write_jobs_csv, write_utilization_csv, GroupMetrics, SimOptions,
};
use dcsim_core::trace::{
    parse_helios_job_log, parse_helios_vc_config, parse_job_log, synth_trace, write_job_log,
    ClusterSpec, JobRecord, SynthParams, VcConfig, JOB_LOG_HEADER,
};

use crate::manifest::ExperimentManifest;
use crate::Common;

/// Unix seconds, `YYYY-MM-DD` or `YYYY-MM-DD HH:MM:SS`, read as UTC.
pub fn parse_time(s: &str) -> std::result::Result<i64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| {
            d.and_hms_opt(0, 0, 0)
                .unwrap_or_default()
                .and_utc()
                .timestamp()
        })
        .map_err(|_| format!("`{s}` is not unix seconds or YYYY-MM-DD[ HH:MM:SS]"))
}

fn finished_at(j: &JobRecord) -> i64 {
    j.end_time.unwrap_or(j.submit_time + j.duration)
}

/// Reads a canonical job log, or a Helios `cluster_log.csv` when the header
/// is not the canonical one.
fn load_trace(path: &Path) -> Result<Vec<JobRecord>> {
    let open = || -> Result<BufReader<File>> {
        Ok(BufReader::new(File::open(path).with_context(|| {
            format!("opening trace {}", path.display())
        })?))
    };
    let mut first = String::new();
    open()?.read_line(&mut first)?;
    let canonical = first.trim().trim_start_matches('\u{feff}') == JOB_LOG_HEADER;
    let parsed = if canonical {
        parse_job_log(open()?)?
    } else {
        parse_helios_job_log(open()?)?
    };
    if !parsed.rejects.is_empty() {
        warn!(
            "{}: skipped {} malformed rows (first at line {}: {})",
            path.display(),
            parsed.rejects.len(),
            parsed.rejects[0].line,
            parsed.rejects[0].reason
        );
    }
    info!("{}: {} jobs", path.display(), parsed.jobs.len());
    Ok(parsed.jobs)
}

/// A JSON cluster spec, or a VC table (`effective_from,vc,node_count` or the
/// Helios `vc_config.csv` layout).
fn load_cluster(path: &Path, gpus_per_node: u32) -> Result<ClusterSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("opening cluster {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(ClusterSpec::from_json(&text)?);
    }
    let vcs: Vec<VcConfig> = parse_helios_vc_config(text.as_bytes())?;
    let name = path
        .file_stem()
        .map_or("cluster".into(), |s| s.to_string_lossy().into_owned());
    Ok(ClusterSpec::from_vc_configs(&name, gpus_per_node, vcs)?)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn settings(args: &impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(args)?)
}

// ------------------------------------------------------------------- synth

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Number of jobs.
    #[arg(long, default_value_t = 1000)]
    pub jobs: usize,
    /// Days over which submissions spread.
    #[arg(long, default_value_t = 7)]
    pub days: u32,
    /// First possible submission time.
    #[arg(long, value_parser = parse_time, default_value = "2020-09-01")]
    pub start: i64,
    /// VC sizes for the cluster spec, as `name=nodes` pairs.
    #[arg(long, value_delimiter = ',', default_value = "vc1=6,vc2=4,vc3=3")]
    pub nodes: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub gpus_per_node: u32,
}

pub fn synth(a: &SynthArgs) -> Result<PathBuf> {
    let mut vcs = Vec::new();
    for pair in &a.nodes {
        let Some((name, n)) = pair.split_once('=') else {
            bail!("--nodes entry `{pair}` is not name=count");
        };
        vcs.push((name.trim().to_string(), n.trim().parse::<u32>()?));
    }
    let total: u32 = vcs.iter().map(|v| v.1).sum();
    if total == 0 {
        bail!("--nodes gives the cluster no nodes");
    }
    let params = SynthParams {
        job_count: a.jobs,
        start_time: a.start,
        span_days: a.days,
        vcs: vcs
            .iter()
            .map(|(n, c)| (n.clone(), f64::from(*c) / f64::from(total)))
            .collect(),
        seed: a.common.seed,
        ..Default::default()
    };
    let jobs = synth_trace(&params)?;
    let named: Vec<(&str, u32)> = vcs.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    let cluster = ClusterSpec::with_vcs("synth", a.gpus_per_node, &named);

    let out = &a.common.out;
    create_out(out)?;
    let trace = out.join("trace.csv");
    let mut w = writer(&trace)?;
    write_job_log(&jobs, &mut w)?;
    w.flush()?;
    let spec = out.join("cluster.json");
    write_json(&spec, &cluster)?;
    let mut settings = settings(a)?;
    settings["params"] = serde_json::to_value(&params)?;
    ExperimentManifest::new("synth", settings, a.common.seed).write(&[], &[trace, spec], out)
}

// ----------------------------------------------------------------- analyze

#[derive(Args, Debug, Clone, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trace: PathBuf,
    /// Cluster spec; sets the GPU total for utilization and enables a FIFO
    /// replay when the trace has no start times.
    #[arg(long)]
    pub cluster: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub gpus_per_node: u32,
    /// Utilization window; defaults to the span of the trace.
    #[arg(long, value_parser = parse_time)]
    pub from: Option<i64>,
    #[arg(long, value_parser = parse_time)]
    pub to: Option<i64>,
    /// Seconds added to timestamps before hour-of-day bucketing.
    #[arg(long, default_value_t = 0)]
    pub tz_offset: i64,
    /// Also render SVG charts.
    #[arg(long)]
    pub svg: bool,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<PathBuf> {
    let jobs = load_trace(&a.trace)?;
    if jobs.is_empty() {
        bail!("{} holds no jobs", a.trace.display());
    }
    let cluster = a
        .cluster
        .as_deref()
        .map(|p| load_cluster(p, a.gpus_per_node))
        .transpose()?;
    let mut intervals = recorded_intervals(&jobs);
    if intervals.is_empty() {
        if let Some(c) = &cluster {
            info!("trace has no start times; utilization comes from a FIFO replay");
            let r = run_simulation(&jobs, c, &mut Policy::Fifo, &SimOptions::default())?;
            intervals = replayed_intervals(&r);
        }
    }
    let start = a
        .from
        .unwrap_or_else(|| jobs.iter().map(|j| j.submit_time).min().unwrap_or(0));
    let end = a.to.unwrap_or_else(|| {
        intervals
            .iter()
            .map(|i| i.end)
            .chain(jobs.iter().map(finished_at))
            .max()
            .unwrap_or(start)
            + 1
    });
    let total_gpus = match &cluster {
        Some(c) => c.total_gpus(),
        None => {
            let peak = peak_busy(&intervals);
            warn!("no cluster given; utilization is relative to the peak of {peak} busy GPUs");
            peak.max(1)
        }
    };
    create_out(&a.common.out)?;
    let files = write_report(
        &a.common.out,
        &jobs,
        &intervals,
        &ReportOptions {
            start,
            end,
            total_gpus,
            tz_offset: a.tz_offset,
            svg: a.svg,
        },
    )?;
    let mut inputs = vec![a.trace.clone()];
    inputs.extend(a.cluster.clone());
    let mut s = settings(a)?;
    s["gpu_jobs"] = trace_summary(&jobs).gpu_jobs.into();
    ExperimentManifest::new("analyze", s, a.common.seed).write(&inputs, &files.paths, &a.common.out)
}

fn peak_busy(intervals: &[dcsim_core::analytics::BusyInterval]) -> u64 {
    let mut ev: Vec<(i64, i64)> = intervals
        .iter()
        .flat_map(|i| [(i.start, i64::from(i.gpus)), (i.end, -i64::from(i.gpus))])
        .collect();
    ev.sort_unstable();
    let (mut cur, mut peak) = (0i64, 0i64);
    for (_, d) in ev {
        cur += d;
        peak = peak.max(cur);
    }
    peak as u64
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub cluster: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub gpus_per_node: u32,
    /// Single policy: fifo, sjf, srtf or qssf. Ignored when --policies is given.
    #[arg(long, default_value = "fifo")]
    pub policy: String,
    /// Several policies, replayed in parallel.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
    /// QSSF weight of the rolling estimate against the model estimate.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Where QSSF gets durations: learned (needs --model), perfect or noisy.
    #[arg(long, default_value = "learned")]
    pub estimator: String,
    /// Duration model from `dcsim train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Log-space standard deviation of the noisy estimator.
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    /// Replay jobs submitted in [from, to). Jobs that finished by `from`
    /// seed the rolling history.
    #[arg(long, value_parser = parse_time)]
    pub from: Option<i64>,
    #[arg(long, value_parser = parse_time)]
    pub to: Option<i64>,
    /// Jobs waiting longer than this many seconds count as queued.
    #[arg(long, default_value_t = 0)]
    pub queue_threshold: i64,
    /// Replay CPU-only jobs as well.
    #[arg(long)]
    pub include_cpu: bool,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    policy: &'a str,
    scope: &'a str,
    jobs: usize,
    avg_jct: f64,
    avg_queuing: f64,
    avg_suspended: f64,
    queued_jobs: usize,
}

fn summary_row<'a>(policy: &'a str, scope: &'a str, m: &GroupMetrics) -> SummaryRow<'a> {
    SummaryRow {
        policy,
        scope,
        jobs: m.jobs,
        avg_jct: m.avg_jct,
        avg_queuing: m.avg_queuing,
        avg_suspended: m.avg_suspended,
        queued_jobs: m.queued_job_count,
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<PathBuf> {
    let names: Vec<String> = if a.policies.is_empty() {
        vec![a.policy.clone()]
    } else {
        a.policies.clone()
    };
    let kinds: Vec<PolicyKind> = names
        .iter()
        .map(|n| n.trim().parse::<PolicyKind>())
        .collect::<std::result::Result<_, _>>()?;
    let all = load_trace(&a.trace)?;
    let cluster = load_cluster(&a.cluster, a.gpus_per_node)?;
    let from = a.from.unwrap_or(i64::MIN);
    let to = a.to.unwrap_or(i64::MAX);
    let jobs: Vec<JobRecord> = all
        .iter()
        .filter(|j| (from..to).contains(&j.submit_time))
        .cloned()
        .collect();
    if jobs.is_empty() {
        bail!("no jobs submitted in the replay window");
    }

    let mut inputs = vec![a.trace.clone(), a.cluster.clone()];
    let source = if kinds.contains(&PolicyKind::Qssf) {
        match a.estimator.as_str() {
            "perfect" => EstimatorSource::Perfect,
            "noisy" => EstimatorSource::Noisy(NoisyOracleEstimator {
                log_mean: 0.0,
                log_sd: a.noise_sd,
                seed: a.common.seed,
            }),
            "learned" => {
                let Some(path) = &a.model else {
                    bail!("qssf with the learned estimator needs --model (see `dcsim train`)");
                };
                inputs.push(path.clone());
                let model = DurationModel::from_json(&std::fs::read_to_string(path)?)?;
                let history = all
                    .iter()
                    .filter(|j| a.from.is_some() && finished_at(j) <= from)
                    .cloned()
                    .collect();
                EstimatorSource::Learned {
                    model,
                    history,
                    rolling: RollingConfig::default(),
                }
            }
            other => bail!("unknown estimator `{other}`"),
        }
    } else {
        EstimatorSource::Perfect
    };
    let policies = kinds
        .iter()
        .map(|&kind| {
            let cfg = PolicyConfig {
                lambda: a.lambda,
                ..PolicyConfig::new(kind)
            };
            build_policy(&cfg, &source)
        })
        .collect::<dcsim_core::Result<Vec<Policy>>>()?;
    let opts = SimOptions {
        include_cpu_jobs: a.include_cpu,
        ..Default::default()
    };
    let runs = run_policies(&jobs, &cluster, policies, &opts, a.queue_threshold)?;

    let out = &a.common.out;
    create_out(out)?;
    let mut outputs = Vec::new();
    let summary_path = out.join("summary.csv");
    let mut summary = csv::Writer::from_writer(writer(&summary_path)?);
    let groups_path = out.join("duration_groups.csv");
    let mut groups = csv::Writer::from_writer(writer(&groups_path)?);
    for (run, kind) in runs.iter().zip(&kinds) {
        let name = kind.as_str();
        let dir = out.join(name);
        create_out(&dir)?;
        let jobs_csv = dir.join("jobs.csv");
        let mut w = writer(&jobs_csv)?;
        write_jobs_csv(&run.result, &mut w)?;
        w.flush()?;
        let util_csv = dir.join("utilization.csv");
        let mut w = writer(&util_csv)?;
        write_utilization_csv(&run.metrics.utilization, &mut w)?;
        w.flush()?;
        let metrics = dir.join("metrics.json");
        write_json(&metrics, run)?;
        outputs.extend([jobs_csv, util_csv, metrics]);

        summary.serialize(summary_row(name, "cluster", &run.metrics.cluster))?;
        for (vc, m) in &run.metrics.per_vc {
            summary.serialize(summary_row(name, vc, m))?;
        }
        for (g, m) in [
            ("short", &run.groups.short),
            ("middle", &run.groups.middle),
            ("long", &run.groups.long),
        ] {
            groups.serialize(summary_row(name, g, m))?;
        }
        if !run.result.unschedulable.is_empty() {
            warn!(
                "{name}: {} jobs exceed their VC and were skipped",
                run.result.unschedulable.len()
            );
        }
        info!(
            "{name}: avg JCT {:.0} s, avg queuing {:.0} s",
            run.metrics.avg_jct(),
            run.metrics.avg_queuing()
        );
    }
    summary.flush()?;
    groups.flush()?;
    outputs.extend([summary_path, groups_path]);
    ExperimentManifest::new("simulate", settings(a)?, a.common.seed).write(&inputs, &outputs, out)
}

// ------------------------------------------------------------------- train

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trace: PathBuf,
    /// Train on jobs that finished by this time; validate on later submissions.
    #[arg(long, value_parser = parse_time)]
    pub cutoff: i64,
    /// Model file; defaults to `<out>/model.json`.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 20)]
    pub min_leaf: usize,
    /// Normalized edit distance under which two job names share a cluster.
    #[arg(long, default_value_t = 0.3)]
    pub name_threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub tz_offset: i64,
}

pub fn train(a: &TrainArgs) -> Result<PathBuf> {
    let jobs = load_trace(&a.trace)?;
    let mut cfg = DurationModelConfig::default();
    cfg.gbdt.rounds = a.rounds;
    cfg.gbdt.learning_rate = a.learning_rate;
    cfg.gbdt.max_depth = a.max_depth;
    cfg.gbdt.min_samples_leaf = a.min_leaf;
    cfg.name_threshold = a.name_threshold;
    cfg.tz_offset = a.tz_offset;
    let (model, outcome) = train_with_cutoff(&jobs, a.cutoff, &cfg)?;

    let out = &a.common.out;
    create_out(out)?;
    let model_path = a
        .model_out
        .clone()
        .unwrap_or_else(|| out.join("model.json"));
    std::fs::write(&model_path, model.to_json()?)?;
    let report = out.join("validation.json");
    write_json(&report, &outcome)?;
    match &outcome.report {
        Some(r) => info!(
            "validation on {} jobs: RMSE {:.1} s, SMAPE {:.1}%",
            r.eval_jobs, r.rmse, r.smape
        ),
        None => warn!("no jobs submitted after the cutoff; validation skipped"),
    }
    ExperimentManifest::new("train", settings(a)?, a.common.seed).write(
        std::slice::from_ref(&a.trace),
        &[model_path, report],
        out,
    )
}

// ------------------------------------------------------------ node series

/// Where node usage comes from for `forecast` and `ces`.
#[derive(Args, Debug, Clone, Serialize)]
pub struct SeriesArgs {
    /// Per-minute node series CSV (`minute,total,running[,arrivals]`).
    #[arg(long, conflicts_with = "trace")]
    pub series: Option<PathBuf>,
    /// Job trace to replay under FIFO to derive the node series.
    #[arg(long, requires = "cluster")]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub cluster: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub gpus_per_node: u32,
}

impl SeriesArgs {
    /// The series plus the files it was read from. A derived series is also
    /// written to `<out>/node_series.csv`.
    fn load(&self, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<(NodeSeries, Vec<PathBuf>)> {
        if let Some(p) = &self.series {
            let s = NodeSeries::read_csv(BufReader::new(File::open(p)?))?;
            return Ok((s, vec![p.clone()]));
        }
        let (Some(trace), Some(cluster)) = (&self.trace, &self.cluster) else {
            bail!("give --series, or --trace with --cluster");
        };
        let jobs = load_trace(trace)?;
        let spec = load_cluster(cluster, self.gpus_per_node)?;
        let r = run_simulation(&jobs, &spec, &mut Policy::Fifo, &SimOptions::default())?;
        let start = jobs.iter().map(|j| j.submit_time).min().unwrap_or(0);
        let end = r.jobs.iter().map(|j| j.end).max().unwrap_or(start) + 1;
        let s = node_series_from_sim(&r, start, end)?;
        let path = out.join("node_series.csv");
        let mut w = writer(&path)?;
        s.write_csv(&mut w)?;
        w.flush()?;
        outputs.push(path);
        Ok((s, vec![trace.clone(), cluster.clone()]))
    }
}

fn load_calendar(path: Option<&Path>, tz: i64) -> Result<HolidayCalendar> {
    match path {
        Some(p) => Ok(HolidayCalendar::parse(File::open(p)?, tz)?),
        None => Ok(HolidayCalendar::new(tz, [])),
    }
}

// ---------------------------------------------------------------- forecast

#[derive(Args, Debug, Clone, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: SeriesArgs,
    /// Train on steps that end by this time; forecast from it.
    #[arg(long, value_parser = parse_time)]
    pub cutoff: i64,
    /// Steps to forecast.
    #[arg(long, default_value_t = 18)]
    pub horizon: usize,
    /// Forecast resolution in seconds.
    #[arg(long, default_value_t = 600)]
    pub step: i64,
    /// End of the holdout scored with rolling forecasts; defaults to the end of the series.
    #[arg(long, value_parser = parse_time)]
    pub eval_end: Option<i64>,
    /// Holiday dates, one YYYY-MM-DD per line.
    #[arg(long)]
    pub holidays: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub tz_offset: i64,
    #[arg(long, default_value_t = 200)]
    pub rounds: usize,
}

#[derive(Serialize)]
struct Holdout {
    eval_start: i64,
    eval_end: i64,
    points: usize,
    smape: f64,
}

pub fn forecast(a: &ForecastArgs) -> Result<PathBuf> {
    let out = &a.common.out;
    create_out(out)?;
    let mut outputs = Vec::new();
    let (series, mut inputs) = a.input.load(out, &mut outputs)?;
    inputs.extend(a.holidays.clone());
    let calendar = load_calendar(a.holidays.as_deref(), a.tz_offset)?;
    let mut cfg = ForecasterConfig {
        step: a.step,
        ..Default::default()
    };
    cfg.gbdt.rounds = a.rounds;
    let f = train_forecaster(&series, a.cutoff, &calendar, &cfg)?;
    let model = out.join("forecaster.json");
    std::fs::write(&model, f.to_json()?)?;
    outputs.push(model);

    let steps = downsample(&series, f.step);
    let seen = StepSeries {
        values: steps.values[..steps.complete_before(a.cutoff)].to_vec(),
        ..steps.clone()
    };
    let first = seen.time_of(seen.values.len());
    let predicted = forecast_running_nodes(&f, &seen, a.horizon)?;
    let path = out.join("forecast.csv");
    let mut w = csv::Writer::from_writer(writer(&path)?);
    w.write_record(["time", "running"])?;
    for (k, v) in predicted.iter().enumerate() {
        w.serialize((first + k as i64 * f.step, v))?;
    }
    w.flush()?;
    outputs.push(path);

    let series_end = series.minutes.last().map_or(a.cutoff, |m| m + 60);
    let eval_end = a.eval_end.unwrap_or(series_end);
    if eval_end > a.cutoff + f.step {
        let (actual, pred) = rolling_forecast(&f, &series, a.cutoff, eval_end, a.horizon)?;
        let h = Holdout {
            eval_start: a.cutoff,
            eval_end,
            points: actual.len(),
            smape: smape(&actual, &pred)?,
        };
        info!("holdout SMAPE {:.2}% over {} steps", h.smape, h.points);
        let path = out.join("holdout.json");
        write_json(&path, &h)?;
        outputs.push(path);
    }
    ExperimentManifest::new("forecast", settings(a)?, a.common.seed).write(&inputs, &outputs, out)
}

// --------------------------------------------------------------------- ces

#[derive(Args, Debug, Clone, Serialize)]
pub struct CesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: SeriesArgs,
    /// ces, vanilla or disabled.
    #[arg(long, default_value = "ces")]
    pub mode: String,
    /// Replay window; earlier data is history.
    #[arg(long, value_parser = parse_time)]
    pub start: i64,
    #[arg(long, value_parser = parse_time)]
    pub end: Option<i64>,
    /// Forecaster from `dcsim forecast`. Without it one is trained on the data before --start.
    #[arg(long, conflicts_with = "perfect_forecast")]
    pub forecaster: Option<PathBuf>,
    /// Read forecasts from the future of the series itself.
    #[arg(long)]
    pub perfect_forecast: bool,
    #[arg(long)]
    pub holidays: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub tz_offset: i64,
    /// Idle nodes kept awake above demand.
    #[arg(long, default_value_t = 3)]
    pub sigma: u32,
    #[arg(long, default_value_t = 2.0)]
    pub xi_history: f64,
    #[arg(long, default_value_t = 2.0)]
    pub xi_prediction: f64,
    /// Seconds between sleep decisions.
    #[arg(long, default_value_t = 600)]
    pub check_period: i64,
    #[arg(long, default_value_t = 3600)]
    pub history_window: i64,
    #[arg(long, default_value_t = 10_800)]
    pub forecast_horizon: i64,
    #[arg(long, default_value_t = 300)]
    pub boot_delay: i64,
    #[arg(long, default_value_t = 800.0)]
    pub node_watts: f64,
    /// Cooling energy as a multiple of server energy.
    #[arg(long, default_value_t = 2.0)]
    pub cooling: f64,
}

pub fn ces(a: &CesArgs) -> Result<PathBuf> {
    let mode: CesMode = a.mode.parse()?;
    let out = &a.common.out;
    create_out(out)?;
    let mut outputs = Vec::new();
    let (series, mut inputs) = a.input.load(out, &mut outputs)?;
    let end = a
        .end
        .unwrap_or_else(|| series.minutes.last().map_or(a.start, |m| m + 60));
    let cfg = CesConfig {
        sigma: a.sigma,
        xi_history: a.xi_history,
        xi_prediction: a.xi_prediction,
        check_period: a.check_period,
        history_window: a.history_window,
        forecast_horizon: a.forecast_horizon,
        boot_delay: a.boot_delay,
    };
    let energy = EnergyModel {
        idle_node_watts: a.node_watts,
        cooling_multiplier: a.cooling,
    };
    let perfect = PerfectForecast { step: 600 };
    let learned: Option<Forecaster> = if a.perfect_forecast || mode != CesMode::Ces {
        None
    } else if let Some(p) = &a.forecaster {
        inputs.push(p.clone());
        Some(Forecaster::from_json(&std::fs::read_to_string(p)?)?)
    } else {
        inputs.extend(a.holidays.clone());
        let cal = load_calendar(a.holidays.as_deref(), a.tz_offset)?;
        info!("training a forecaster on data before {}", a.start);
        Some(train_forecaster(
            &series,
            a.start,
            &cal,
            &ForecasterConfig::default(),
        )?)
    };
    let forecaster: &dyn NodeForecast = match &learned {
        Some(f) => f,
        None => &perfect,
    };
    let report = run_ces_simulation(&series, a.start, end, &cfg, mode, forecaster, &energy)?;
    info!(
        "utilization {:.1}% -> {:.1}%, {:.2} wake-ups/day, {:.0} kWh saved",
        100.0 * report.utilization_before,
        100.0 * report.utilization_after,
        report.daily_wakeups,
        report.energy_saved_kwh
    );
    let report_path = out.join("ces_report.json");
    write_json(&report_path, &report)?;
    let timeline = out.join("timeline.csv");
    let mut w = writer(&timeline)?;
    report.write_timeline_csv(&mut w)?;
    w.flush()?;
    outputs.extend([report_path, timeline]);
    ExperimentManifest::new("ces", settings(a)?, a.common.seed).write(&inputs, &outputs, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_formats() {
        assert_eq!(parse_time("1598918400"), Ok(1_598_918_400));
        assert_eq!(parse_time("2020-09-01"), Ok(1_598_918_400));
        assert_eq!(parse_time("2020-09-01 01:00:00"), Ok(1_598_922_000));
        assert!(parse_time("Sept 1").is_err());
    }
}
