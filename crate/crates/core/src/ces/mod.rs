//! Cluster energy saving: forecast-driven sleeping of idle nodes.
//!
//! The controller replays a per-minute node-usage series. Whenever the nodes
//! in use would exceed the active ones it wakes sleeping nodes (keeping a
//! buffer of `sigma`), and every `check_period` it puts idle nodes to sleep
//! if usage has been falling over the last hour and is forecast to keep
//! falling.

mod forecast;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use forecast::{
    downsample, forecast_features, forecast_running_nodes, rolling_forecast, train_forecaster,
    Forecaster, ForecasterConfig, HolidayCalendar, StepSeries, FORECAST_FEATURE_NAMES,
    FORECAST_WIDTH,
};

use crate::error::{Error, Result};
use crate::sim::SimResult;

pub const NODE_SERIES_HEADER: &str = "minute,total,running";
pub const TIMELINE_HEADER: &str = "minute,active,running,sleeping";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    ActiveBusy,
    ActiveIdle,
    Sleeping,
    Waking { ready_at: i64 },
}

impl NodeState {
    pub fn is_ready(self) -> bool {
        matches!(self, Self::ActiveBusy | Self::ActiveIdle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CesConfig {
    /// Buffer nodes kept above demand.
    pub sigma: u32,
    /// Minimum drop in running nodes over the history window.
    pub xi_history: f64,
    /// Minimum forecast drop over the horizon.
    pub xi_prediction: f64,
    pub check_period: i64,
    pub history_window: i64,
    pub forecast_horizon: i64,
    pub boot_delay: i64,
}

impl Default for CesConfig {
    fn default() -> Self {
        Self {
            sigma: 3,
            xi_history: 2.0,
            xi_prediction: 2.0,
            check_period: 600,
            history_window: 3600,
            forecast_horizon: 10_800,
            boot_delay: 300,
        }
    }
}

impl CesConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("check_period", self.check_period),
            ("history_window", self.history_window),
            ("forecast_horizon", self.forecast_horizon),
            ("boot_delay", self.boot_delay),
        ];
        for (name, v) in positive {
            if v <= 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.xi_history >= 0.0 && self.xi_prediction >= 0.0) {
            return Err(Error::InvalidConfig(
                "trend thresholds must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub idle_node_watts: f64,
    /// Cooling energy as a multiple of server energy.
    pub cooling_multiplier: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            idle_node_watts: 800.0,
            cooling_multiplier: 2.0,
        }
    }
}

/// kWh saved by keeping `avg_sleeping_nodes` asleep for `hours`.
pub fn energy_savings(avg_sleeping_nodes: f64, hours: f64, model: &EnergyModel) -> f64 {
    avg_sleeping_nodes * model.idle_node_watts / 1000.0 * (1.0 + model.cooling_multiplier) * hours
}

/// Symmetric mean absolute percentage error, skipping points where both are zero.
pub fn smape(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    if actual.is_empty() || forecast.is_empty() {
        return Err(Error::EmptyInput("smape input"));
    }
    if actual.len() != forecast.len() {
        return Err(Error::InvalidConfig(format!(
            "smape length mismatch: {} actual, {} forecast",
            actual.len(),
            forecast.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (&a, &f) in actual.iter().zip(forecast) {
        let den = (a.abs() + f.abs()) / 2.0;
        if den == 0.0 {
            continue;
        }
        sum += (f - a).abs() / den;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { 100.0 * sum / n as f64 })
}

/// Nodes to wake when `request` nodes are needed and `active` are up or booting.
pub fn job_arrival_check(active: u32, request: u32, sigma: u32) -> u32 {
    if active < request {
        request - active + sigma
    } else {
        0
    }
}

/// Active-node target if both the recent and the forecast trend are falling
/// fast enough. `running_before` is the running count one history window ago.
/// A forecast shorter than `horizon` steps is ignored.
pub fn periodic_check(
    running_before: u32,
    running: u32,
    forecast: &[f64],
    horizon: usize,
    config: &CesConfig,
) -> Option<u32> {
    if forecast.is_empty() || forecast.len() < horizon {
        log::warn!(
            "forecast has {} of {} steps; skipping sleep check",
            forecast.len(),
            horizon
        );
        return None;
    }
    let t_h = f64::from(running_before) - f64::from(running);
    let lowest = forecast.iter().copied().fold(f64::INFINITY, f64::min);
    let t_p = forecast[0] - lowest;
    (t_h >= config.xi_history && t_p >= config.xi_prediction).then_some(running + config.sigma)
}

/// Per-minute node counts. `minutes` holds epoch seconds of minute starts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeSeries {
    pub minutes: Vec<i64>,
    pub total: Vec<u32>,
    pub running: Vec<u32>,
    /// Jobs submitted in each minute, when known.
    pub arrivals: Option<Vec<u32>>,
}

impl NodeSeries {
    /// Contiguous series starting at `start`.
    pub fn new(
        start: i64,
        total: Vec<u32>,
        running: Vec<u32>,
        arrivals: Option<Vec<u32>>,
    ) -> Result<Self> {
        let minutes = (0..running.len() as i64).map(|i| start + 60 * i).collect();
        Self::from_parts(minutes, total, running, arrivals)
    }

    pub fn from_parts(
        minutes: Vec<i64>,
        total: Vec<u32>,
        running: Vec<u32>,
        arrivals: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = minutes.len();
        if total.len() != n || running.len() != n || arrivals.as_ref().is_some_and(|a| a.len() != n)
        {
            return Err(Error::InvalidConfig(
                "node series columns differ in length".into(),
            ));
        }
        if minutes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "node series minutes must be increasing".into(),
            ));
        }
        if let Some(i) = (0..n).find(|&i| running[i] > total[i]) {
            return Err(Error::InvalidConfig(format!(
                "minute {}: running {} exceeds total {}",
                minutes[i], running[i], total[i]
            )));
        }
        Ok(Self {
            minutes,
            total,
            running,
            arrivals,
        })
    }

    pub fn from_rows(rows: &[(i64, u32, u32)]) -> Result<Self> {
        Self::from_parts(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            None,
        )
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn max_total(&self) -> u32 {
        self.total.iter().copied().max().unwrap_or(0)
    }

    /// Index of the last minute at or before `t`.
    pub fn index_at(&self, t: i64) -> Option<usize> {
        self.minutes.partition_point(|&m| m <= t).checked_sub(1)
    }

    /// Reads `minute,total,running[,arrivals]`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let with_arrivals = header.len() == 4 && header[3] == "arrivals";
        if header[..header.len().min(3)].join(",") != NODE_SERIES_HEADER
            || !(header.len() == 3 || with_arrivals)
        {
            return Err(Error::MalformedHeader {
                expected: NODE_SERIES_HEADER.into(),
                found: header.join(","),
            });
        }
        let (mut minutes, mut total, mut running, mut arrivals) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for row in reader.records() {
            let row = row?;
            let field = |i: usize| -> Result<i64> {
                let v = row.get(i).unwrap_or("").trim();
                v.parse().map_err(|_| {
                    Error::InvalidConfig(format!("node series: bad value {v:?} in {:?}", row))
                })
            };
            let count = |i: usize| -> Result<u32> {
                u32::try_from(field(i)?).map_err(|_| {
                    Error::InvalidConfig(format!("node series: negative count in {row:?}"))
                })
            };
            minutes.push(field(0)?);
            total.push(count(1)?);
            running.push(count(2)?);
            if with_arrivals {
                arrivals.push(count(3)?);
            }
        }
        Self::from_parts(minutes, total, running, with_arrivals.then_some(arrivals))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match &self.arrivals {
            Some(a) => {
                w.write_record(["minute", "total", "running", "arrivals"])?;
                for (i, a) in a.iter().enumerate() {
                    w.serialize((self.minutes[i], self.total[i], self.running[i], a))?;
                }
            }
            None => {
                w.write_record(NODE_SERIES_HEADER.split(','))?;
                for i in 0..self.len() {
                    w.serialize((self.minutes[i], self.total[i], self.running[i]))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-minute node usage of a replay over `[start, end)`: a node is running in
/// a minute if any job holds any of its GPUs during it.
pub fn node_series_from_sim(result: &SimResult, start: i64, end: i64) -> Result<NodeSeries> {
    let first = start.div_euclid(60);
    let last = (end + 59).div_euclid(60);
    if last <= first {
        return Err(Error::EmptyInput("node series window"));
    }
    let len = (last - first) as usize;
    let total: u32 = result.vc_nodes.iter().map(|(_, n)| n.len() as u32).sum();
    let mut per_node: std::collections::BTreeMap<u32, Vec<(i64, i64)>> = Default::default();
    for seg in &result.segments {
        let (a, b) = (seg.start.div_euclid(60), (seg.end + 59).div_euclid(60));
        for &(node, _) in &seg.placement {
            per_node.entry(node).or_default().push((a, b));
        }
    }
    let mut diff = vec![0i64; len + 1];
    for intervals in per_node.values_mut() {
        intervals.sort_unstable();
        let mut merged: Vec<(i64, i64)> = Vec::new();
        for &(a, b) in intervals.iter() {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        for (a, b) in merged {
            let (a, b) = (a.max(first), b.min(last));
            if a < b {
                diff[(a - first) as usize] += 1;
                diff[(b - first) as usize] -= 1;
            }
        }
    }
    let mut running = Vec::with_capacity(len);
    let mut acc = 0i64;
    for d in &diff[..len] {
        acc += d;
        running.push(acc as u32);
    }
    let mut arrivals = vec![0u32; len];
    for j in &result.jobs {
        let m = j.submit.div_euclid(60);
        if (first..last).contains(&m) {
            arrivals[(m - first) as usize] += 1;
        }
    }
    NodeSeries::new(first * 60, vec![total; len], running, Some(arrivals))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CesMode {
    /// Trend- and forecast-gated sleeping.
    Ces,
    /// Sleep every idle node at each check, ignoring trends.
    Vanilla,
    /// Never sleep.
    Disabled,
}

impl std::str::FromStr for CesMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ces" => Ok(Self::Ces),
            "vanilla" | "drs" => Ok(Self::Vanilla),
            "disabled" | "off" | "none" => Ok(Self::Disabled),
            _ => Err(Error::InvalidConfig(format!("unknown ces mode {s:?}"))),
        }
    }
}

/// Source of running-node forecasts for the controller.
pub trait NodeForecast {
    /// Forecast resolution in seconds.
    fn step(&self) -> i64;
    fn check_cutoff(&self, eval_start: i64) -> Result<()>;
    /// `horizon` steps starting with the one containing `t`, seeing only
    /// steps of `history` complete by `t`.
    fn forecast_at(&self, history: &StepSeries, t: i64, horizon: usize) -> Result<Vec<f64>>;
}

impl NodeForecast for Forecaster {
    fn step(&self) -> i64 {
        self.step
    }

    fn check_cutoff(&self, eval_start: i64) -> Result<()> {
        Forecaster::check_cutoff(self, eval_start)
    }

    fn forecast_at(&self, history: &StepSeries, t: i64, horizon: usize) -> Result<Vec<f64>> {
        Forecaster::forecast_at(self, history, t, horizon)
    }
}

/// Reads the future straight from the replayed series.
#[derive(Debug, Clone, Copy)]
pub struct PerfectForecast {
    pub step: i64,
}

impl NodeForecast for PerfectForecast {
    fn step(&self) -> i64 {
        self.step
    }

    fn check_cutoff(&self, _: i64) -> Result<()> {
        Ok(())
    }

    fn forecast_at(&self, history: &StepSeries, t: i64, horizon: usize) -> Result<Vec<f64>> {
        let i = history.complete_before(t);
        let end = (i + horizon).min(history.values.len());
        Ok(history.values[i..end].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimelinePoint {
    pub minute: i64,
    pub active: u32,
    pub running: u32,
    pub sleeping: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesReport {
    pub mode: CesMode,
    pub start: i64,
    pub end: i64,
    pub minutes: usize,
    pub hours: f64,
    pub total_nodes: u32,
    pub avg_sleeping_nodes: f64,
    pub avg_active_nodes: f64,
    pub wakeup_calls: usize,
    pub daily_wakeups: f64,
    pub avg_nodes_per_wakeup: f64,
    pub utilization_before: f64,
    pub utilization_after: f64,
    pub shortage_minutes: usize,
    pub affected_jobs: u64,
    pub replayed_jobs: u64,
    pub energy_saved_kwh: f64,
    #[serde(skip)]
    pub timeline: Vec<TimelinePoint>,
}

impl CesReport {
    pub fn write_timeline_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TIMELINE_HEADER.split(','))?;
        for p in &self.timeline {
            w.serialize((p.minute, p.active, p.running, p.sleeping))?;
        }
        w.flush()?;
        Ok(())
    }
}

struct NodePool {
    states: Vec<NodeState>,
    /// Sleeping nodes, most recently slept last.
    asleep: Vec<usize>,
}

impl NodePool {
    fn count(&self, f: impl Fn(NodeState) -> bool) -> u32 {
        self.states.iter().filter(|&&s| f(s)).count() as u32
    }

    fn finish_boots(&mut self, t: i64) {
        for s in &mut self.states {
            if let NodeState::Waking { ready_at } = *s {
                if ready_at <= t {
                    *s = NodeState::ActiveIdle;
                }
            }
        }
    }

    fn wake(&mut self, n: u32, ready_at: i64) -> u32 {
        let mut woken = 0;
        while woken < n {
            let Some(i) = self.asleep.pop() else { break };
            self.states[i] = NodeState::Waking { ready_at };
            woken += 1;
        }
        woken
    }

    /// Marks the first `running` ready nodes busy and the rest idle.
    fn assign(&mut self, running: u32) {
        let mut left = running;
        for s in &mut self.states {
            if s.is_ready() {
                *s = if left > 0 {
                    left -= 1;
                    NodeState::ActiveBusy
                } else {
                    NodeState::ActiveIdle
                };
            }
        }
    }

    fn sleep_idle(&mut self, n: u32) {
        let mut left = n;
        for i in (0..self.states.len()).rev() {
            if left == 0 {
                break;
            }
            if self.states[i] == NodeState::ActiveIdle {
                self.states[i] = NodeState::Sleeping;
                self.asleep.push(i);
                left -= 1;
            }
        }
    }
}

/// Replays the minutes of `series` within `[start, end)` under `mode`. Data
/// before `start` serves as history for trends and forecasts.
pub fn run_ces_simulation(
    series: &NodeSeries,
    start: i64,
    end: i64,
    config: &CesConfig,
    mode: CesMode,
    forecaster: &dyn NodeForecast,
    energy: &EnergyModel,
) -> Result<CesReport> {
    config.validate()?;
    if mode == CesMode::Ces {
        forecaster.check_cutoff(start)?;
    }
    let lo = series.minutes.partition_point(|&m| m < start);
    let hi = series.minutes.partition_point(|&m| m < end);
    if lo >= hi {
        return Err(Error::EmptyInput("ces evaluation window"));
    }
    let steps = downsample(series, forecaster.step());
    let horizon = ((config.forecast_horizon + steps.step - 1) / steps.step) as usize;
    let total_nodes = series.max_total();
    let mut pool = NodePool {
        states: vec![NodeState::ActiveIdle; total_nodes as usize],
        asleep: Vec::new(),
    };

    let (mut calls, mut woken_total) = (0usize, 0u64);
    let (mut sum_sleeping, mut sum_active, mut sum_running, mut sum_total) =
        (0u64, 0u64, 0u64, 0u64);
    let (mut shortage_minutes, mut affected, mut replayed) = (0usize, 0u64, 0u64);
    let mut timeline = Vec::with_capacity(hi - lo);

    for i in lo..hi {
        let t = series.minutes[i];
        let demand = series.running[i];
        let arrivals = series.arrivals.as_ref().map_or(0, |a| u64::from(a[i]));
        replayed += arrivals;

        pool.finish_boots(t);
        let up = pool.count(|s| s.is_ready() || matches!(s, NodeState::Waking { .. }));
        let wake = job_arrival_check(up, demand, config.sigma);
        if wake > 0 {
            let n = pool.wake(wake, t + config.boot_delay);
            if n > 0 {
                calls += 1;
                woken_total += u64::from(n);
            }
        }
        let ready = pool.count(NodeState::is_ready);
        if ready < demand {
            shortage_minutes += 1;
            affected += arrivals;
        }
        pool.assign(demand.min(ready));

        if mode != CesMode::Disabled && (t - start).rem_euclid(config.check_period) == 0 {
            let target = match mode {
                CesMode::Vanilla => Some(demand),
                _ => series.index_at(t - config.history_window).and_then(|h| {
                    let forecast = match forecaster.forecast_at(&steps, t, horizon) {
                        Ok(f) => f,
                        Err(e) => {
                            log::warn!("forecast at {t} failed: {e}");
                            return None;
                        }
                    };
                    periodic_check(series.running[h], demand, &forecast, horizon, config)
                }),
            };
            if let Some(target) = target {
                let up = pool.count(|s| s != NodeState::Sleeping);
                pool.sleep_idle(up.saturating_sub(target));
            }
        }

        let sleeping = pool.count(|s| s == NodeState::Sleeping);
        let active = total_nodes - sleeping;
        sum_sleeping += u64::from(sleeping);
        sum_active += u64::from(active);
        sum_running += u64::from(series.running[i]);
        sum_total += u64::from(series.total[i]);
        timeline.push(TimelinePoint {
            minute: t,
            active,
            running: series.running[i],
            sleeping,
        });
    }

    let minutes = hi - lo;
    let hours = minutes as f64 / 60.0;
    let avg_sleeping = sum_sleeping as f64 / minutes as f64;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CesReport {
        mode,
        start,
        end,
        minutes,
        hours,
        total_nodes,
        avg_sleeping_nodes: avg_sleeping,
        avg_active_nodes: sum_active as f64 / minutes as f64,
        wakeup_calls: calls,
        daily_wakeups: calls as f64 / (hours / 24.0),
        avg_nodes_per_wakeup: ratio(woken_total, calls as u64),
        utilization_before: ratio(sum_running, sum_total),
        utilization_after: ratio(sum_running, sum_active),
        shortage_minutes,
        affected_jobs: affected,
        replayed_jobs: replayed,
        energy_saved_kwh: energy_savings(avg_sleeping, hours, energy),
        timeline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wake_counts() {
        assert_eq!(job_arrival_check(10, 12, 2), 4);
        assert_eq!(job_arrival_check(10, 8, 2), 0);
        assert_eq!(job_arrival_check(0, 5, 1), 6);
    }

    #[test]
    fn sleep_rule() {
        let cfg = CesConfig::default();
        let falling = [54.0, 52.0, 50.0];
        assert_eq!(
            periodic_check(
                50,
                50,
                &falling,
                3,
                &CesConfig {
                    xi_history: 2.0,
                    ..cfg
                }
            ),
            None
        );
        // T_H = 5, T_P = 4.
        assert_eq!(periodic_check(55, 50, &falling, 3, &cfg), Some(53));
        // T_P = 1.
        assert_eq!(periodic_check(55, 50, &[51.0, 50.0, 50.5], 3, &cfg), None);
        // Short forecast.
        assert_eq!(periodic_check(55, 50, &falling[..2], 3, &cfg), None);
    }

    #[test]
    fn smape_values() {
        assert_eq!(smape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((smape(&[100.0], &[110.0]).unwrap() - 100.0 * 10.0 / 105.0).abs() < 1e-12);
        assert_eq!(
            smape(&[0.0, 100.0], &[0.0, 110.0]).unwrap(),
            smape(&[100.0], &[110.0]).unwrap()
        );
        assert!(smape(&[], &[]).is_err());
        assert!(smape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn energy_arithmetic() {
        let m = EnergyModel::default();
        assert!((energy_savings(1.0, 1.0, &m) - 2.4).abs() < 1e-12);
        assert_eq!(energy_savings(0.0, 100.0, &m), 0.0);
        let annual = energy_savings(79.5, 8760.0, &m);
        assert!((annual - 1_671_408.0).abs() < 1e-6, "{annual}");
    }

    fn falling_day(start: i64) -> NodeSeries {
        // 40 nodes; usage 30 until noon, easing to 8 by 15:00, back to 30 at midnight.
        let minutes = 3 * 1440;
        let running: Vec<u32> = (0..minutes)
            .map(|m| match m % 1440 {
                m if m < 720 => 30,
                m if m < 900 => 30 - (22 * (m - 720) / 180) as u32,
                _ => 8,
            })
            .collect();
        let arrivals = Some((0..minutes).map(|m| u32::from(m % 5 == 0)).collect());
        NodeSeries::new(start, vec![40; minutes], running, arrivals).unwrap()
    }

    #[test]
    fn disabled_mode_is_identity() {
        let s = falling_day(0);
        let r = run_ces_simulation(
            &s,
            86_400,
            3 * 86_400,
            &CesConfig::default(),
            CesMode::Disabled,
            &PerfectForecast { step: 600 },
            &EnergyModel::default(),
        )
        .unwrap();
        assert_eq!(r.utilization_before, r.utilization_after);
        assert_eq!(r.energy_saved_kwh, 0.0);
        assert_eq!(r.wakeup_calls, 0);
        assert!(r.timeline.iter().all(|p| p.active == 40 && p.sleeping == 0));
    }

    #[test]
    fn ces_sleeps_after_the_drop_and_wakes_before_work() {
        let s = falling_day(0);
        let cfg = CesConfig::default();
        let r = run_ces_simulation(
            &s,
            86_400,
            3 * 86_400,
            &cfg,
            CesMode::Ces,
            &PerfectForecast { step: 600 },
            &EnergyModel::default(),
        )
        .unwrap();
        assert!(r.avg_sleeping_nodes > 0.0);
        assert!(r.utilization_after > r.utilization_before);
        // Never fewer active nodes than running ones outside boot waits.
        for p in &r.timeline {
            assert!(p.active + p.sleeping == 40);
        }
        // Nodes start awake, so only the second morning needs a wake-up.
        assert_eq!(r.wakeup_calls, 1);
        assert!(r.shortage_minutes <= 5);
        let vanilla = run_ces_simulation(
            &s,
            86_400,
            3 * 86_400,
            &cfg,
            CesMode::Vanilla,
            &PerfectForecast { step: 600 },
            &EnergyModel::default(),
        )
        .unwrap();
        assert!(vanilla.wakeup_calls >= r.wakeup_calls);
    }

    #[test]
    fn waking_nodes_become_ready_after_boot_delay() {
        let mut pool = NodePool {
            states: vec![NodeState::ActiveIdle; 3],
            asleep: Vec::new(),
        };
        pool.sleep_idle(2);
        assert_eq!(pool.asleep, vec![2, 1]);
        assert_eq!(pool.wake(1, 300), 1);
        assert_eq!(pool.states[1], NodeState::Waking { ready_at: 300 });
        pool.finish_boots(299);
        assert!(!pool.states[1].is_ready());
        pool.finish_boots(300);
        assert_eq!(pool.states[1], NodeState::ActiveIdle);
    }

    #[test]
    fn leakage_is_fatal() {
        let s = falling_day(0);
        struct Late;
        impl NodeForecast for Late {
            fn step(&self) -> i64 {
                600
            }
            fn check_cutoff(&self, eval_start: i64) -> Result<()> {
                Err(Error::Leakage {
                    trained_until: eval_start + 1,
                    eval_start,
                })
            }
            fn forecast_at(&self, _: &StepSeries, _: i64, _: usize) -> Result<Vec<f64>> {
                Ok(Vec::new())
            }
        }
        let r = run_ces_simulation(
            &s,
            0,
            86_400,
            &CesConfig::default(),
            CesMode::Ces,
            &Late,
            &EnergyModel::default(),
        );
        assert!(matches!(r, Err(Error::Leakage { .. })));
    }

    #[test]
    fn series_csv_round_trip() {
        let s = NodeSeries::new(120, vec![4, 4, 4], vec![1, 2, 3], None).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "minute,total,running\n120,4,1\n180,4,2\n240,4,3\n"
        );
        assert_eq!(NodeSeries::read_csv(buf.as_slice()).unwrap(), s);
        assert!(NodeSeries::new(0, vec![1], vec![2], None).is_err());
        assert!(NodeSeries::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
