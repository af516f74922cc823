use std::collections::BTreeSet;
use std::io::Read;

use chrono::{DateTime, Datelike, NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use super::NodeSeries;
use crate::error::{Error, Result};
use crate::predictor::{train_gbdt, Dataset, GbdtConfig, GbdtModel, TargetTransform};

pub const FORECAST_FEATURE_NAMES: [&str; 13] = [
    "hour",
    "day_of_week",
    "day_of_month",
    "holiday",
    "mean_1h",
    "std_1h",
    "mean_6h",
    "std_6h",
    "mean_24h",
    "std_24h",
    "lag_1h",
    "lag_24h",
    "lag_168h",
];
pub const FORECAST_WIDTH: usize = FORECAST_FEATURE_NAMES.len();

/// Dates flagged as holidays, in the trace's local time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayCalendar {
    pub tz_offset: i64,
    days: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(tz_offset: i64, days: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            tz_offset,
            days: days.into_iter().collect(),
        }
    }

    /// One `YYYY-MM-DD` per line; blank lines and `#` comments are skipped.
    pub fn parse<R: Read>(mut input: R, tz_offset: i64) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut days = BTreeSet::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let d = NaiveDate::parse_from_str(line, "%Y-%m-%d")
                .map_err(|e| Error::InvalidConfig(format!("holiday {line:?}: {e}")))?;
            days.insert(d);
        }
        Ok(Self { tz_offset, days })
    }

    pub fn is_holiday(&self, t: i64) -> bool {
        self.local(t)
            .is_some_and(|dt| self.days.contains(&dt.date_naive()))
    }

    fn local(&self, t: i64) -> Option<DateTime<chrono::Utc>> {
        DateTime::from_timestamp(t + self.tz_offset, 0)
    }
}

/// Running-node counts averaged over fixed steps aligned to multiples of `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSeries {
    pub start: i64,
    pub step: i64,
    pub values: Vec<f64>,
}

impl StepSeries {
    pub fn time_of(&self, i: usize) -> i64 {
        self.start + i as i64 * self.step
    }

    /// Number of steps that finish by `t`.
    pub fn complete_before(&self, t: i64) -> usize {
        if t <= self.start {
            0
        } else {
            (((t - self.start) / self.step) as usize).min(self.values.len())
        }
    }
}

/// Averages the per-minute running counts over `step`-second buckets. A
/// bucket only partly covered by the series averages the minutes it has.
pub fn downsample(series: &NodeSeries, step: i64) -> StepSeries {
    let step = step.max(60);
    let Some(&first) = series.minutes.first() else {
        return StepSeries {
            start: 0,
            step,
            values: Vec::new(),
        };
    };
    let start = first - first.rem_euclid(step);
    let mut sums: Vec<(f64, u32)> = Vec::new();
    for (&m, &r) in series.minutes.iter().zip(&series.running) {
        let i = ((m - start) / step) as usize;
        if sums.len() <= i {
            sums.resize(i + 1, (0.0, 0));
        }
        sums[i].0 += f64::from(r);
        sums[i].1 += 1;
    }
    let mut values = Vec::with_capacity(sums.len());
    for (i, &(s, n)) in sums.iter().enumerate() {
        // Gaps carry the previous value forward.
        let v = if n > 0 {
            s / f64::from(n)
        } else if i > 0 {
            values[i - 1]
        } else {
            0.0
        };
        values.push(v);
    }
    StepSeries {
        start,
        step,
        values,
    }
}

fn mean_std(w: &[f64]) -> (f64, f64) {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

fn steps_in(seconds: i64, step: i64) -> usize {
    ((seconds + step - 1) / step).max(1) as usize
}

/// Feature row for the value at index `i` of `values`, using only earlier
/// values. `None` when the history is too short for the longest lag.
pub fn forecast_features(
    values: &[f64],
    start: i64,
    step: i64,
    i: usize,
    calendar: &HolidayCalendar,
) -> Option<[f64; FORECAST_WIDTH]> {
    let h1 = steps_in(3600, step);
    let h6 = steps_in(6 * 3600, step);
    let h24 = steps_in(24 * 3600, step);
    let h168 = steps_in(168 * 3600, step);
    if i < h168 || i > values.len() {
        return None;
    }
    let t = start + i as i64 * step;
    let dt = calendar.local(t)?;
    let (m1, s1) = mean_std(&values[i - h1..i]);
    let (m6, s6) = mean_std(&values[i - h6..i]);
    let (m24, s24) = mean_std(&values[i - h24..i]);
    Some([
        f64::from(dt.hour()),
        f64::from(dt.weekday().num_days_from_monday()),
        f64::from(dt.day()),
        f64::from(u8::from(calendar.is_holiday(t))),
        m1,
        s1,
        m6,
        s6,
        m24,
        s24,
        values[i - h1],
        values[i - h24],
        values[i - h168],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    /// Resolution of the forecast in seconds.
    pub step: i64,
    pub gbdt: GbdtConfig,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            step: 600,
            gbdt: GbdtConfig {
                target: TargetTransform::Identity,
                ..GbdtConfig::default()
            },
        }
    }
}

/// Running-node forecaster: boosted trees over calendar, rolling and lag
/// features of the downsampled series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forecaster {
    pub step: i64,
    pub total_nodes: f64,
    /// Start of the last training step; everything used in training ended
    /// by `trained_until + step`.
    pub trained_until: i64,
    pub calendar: HolidayCalendar,
    pub model: GbdtModel,
}

/// Trains on the steps of `series` that end at or before `cutoff`.
pub fn train_forecaster(
    series: &NodeSeries,
    cutoff: i64,
    calendar: &HolidayCalendar,
    config: &ForecasterConfig,
) -> Result<Forecaster> {
    if config.step <= 0 || config.step % 60 != 0 {
        return Err(Error::InvalidConfig(format!(
            "forecast step {} is not a whole number of minutes",
            config.step
        )));
    }
    let s = downsample(series, config.step);
    let usable = s.complete_before(cutoff);
    let mut data = Dataset::new(FORECAST_WIDTH);
    let mut last = None;
    for i in 0..usable {
        if let Some(row) = forecast_features(&s.values[..usable], s.start, s.step, i, calendar) {
            data.push(&row, s.values[i])?;
            last = Some(s.time_of(i));
        }
    }
    let Some(trained_until) = last else {
        return Err(Error::EmptyInput(
            "forecaster training window (needs more than one week of history)",
        ));
    };
    let model = train_gbdt(&data, &config.gbdt)?;
    Ok(Forecaster {
        step: s.step,
        total_nodes: f64::from(series.max_total()),
        trained_until,
        calendar: calendar.clone(),
        model,
    })
}

/// Predicts the next `horizon` steps after `history`, feeding each prediction
/// back as history for the following ones.
pub fn forecast_running_nodes(
    forecaster: &Forecaster,
    history: &StepSeries,
    horizon: usize,
) -> Result<Vec<f64>> {
    let mut values = history.values.clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let i = values.len();
        let row = forecast_features(
            &values,
            history.start,
            history.step,
            i,
            &forecaster.calendar,
        )
        .ok_or(Error::EmptyInput("forecast history (needs one week)"))?;
        let v = forecaster
            .model
            .predict(&row)?
            .clamp(0.0, forecaster.total_nodes);
        values.push(v);
        out.push(v);
    }
    Ok(out)
}

impl Forecaster {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        if f.model.width != FORECAST_WIDTH {
            return Err(Error::FeatureWidth {
                expected: FORECAST_WIDTH,
                found: f.model.width,
            });
        }
        Ok(f)
    }

    /// Fails unless training ended before `eval_start`.
    pub fn check_cutoff(&self, eval_start: i64) -> Result<()> {
        if self.trained_until + self.step > eval_start {
            return Err(Error::Leakage {
                trained_until: self.trained_until + self.step,
                eval_start,
            });
        }
        Ok(())
    }

    /// Forecast issued at time `t`, seeing only steps of `history` complete by `t`.
    /// The first value covers the step containing `t`.
    pub fn forecast_at(&self, history: &StepSeries, t: i64, horizon: usize) -> Result<Vec<f64>> {
        let seen = StepSeries {
            start: history.start,
            step: history.step,
            values: history.values[..history.complete_before(t)].to_vec(),
        };
        forecast_running_nodes(self, &seen, horizon)
    }
}

/// Rolling-origin evaluation over `[eval_start, eval_end)`: a forecast of
/// `horizon` steps is issued at the start of every horizon-long block using
/// actual history up to that point. Returns (actual, forecast) pairs.
pub fn rolling_forecast(
    forecaster: &Forecaster,
    series: &NodeSeries,
    eval_start: i64,
    eval_end: i64,
    horizon: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    forecaster.check_cutoff(eval_start)?;
    let s = downsample(series, forecaster.step);
    let horizon = horizon.max(1);
    let first = s.complete_before(eval_start + s.step - 1);
    let last = s.complete_before(eval_end);
    let (mut actual, mut predicted) = (Vec::new(), Vec::new());
    let mut i = first;
    while i < last {
        let n = horizon.min(last - i);
        let seen = StepSeries {
            start: s.start,
            step: s.step,
            values: s.values[..i].to_vec(),
        };
        let f = forecast_running_nodes(forecaster, &seen, n)?;
        actual.extend_from_slice(&s.values[i..i + n]);
        predicted.extend(f);
        i += n;
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("forecast evaluation window"));
    }
    Ok((actual, predicted))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_from(values: impl IntoIterator<Item = u32>, start: i64, total: u32) -> NodeSeries {
        let running: Vec<u32> = values.into_iter().collect();
        NodeSeries::new(start, vec![total; running.len()], running, None).unwrap()
    }

    // 2020-09-07 00:00 UTC, a Monday.
    const MONDAY: i64 = 18_512 * 86_400;

    #[test]
    fn calendar_fields_of_monday_midnight() {
        let values = vec![5.0; 2000];
        let step = 600;
        let i = 1008;
        let start = MONDAY - i as i64 * step;
        let row = forecast_features(&values, start, step, i, &HolidayCalendar::default()).unwrap();
        assert_eq!((row[0], row[1], row[2]), (0.0, 0.0, 7.0));
        assert_eq!(row[3], 0.0);
        let cal = HolidayCalendar::new(0, [NaiveDate::from_ymd_opt(2020, 9, 7).unwrap()]);
        assert_eq!(
            forecast_features(&values, start, step, i, &cal).unwrap()[3],
            1.0
        );
    }

    #[test]
    fn constant_series_features() {
        let values = vec![7.0; 1500];
        let row =
            forecast_features(&values, MONDAY, 600, 1200, &HolidayCalendar::default()).unwrap();
        assert_eq!(&row[4..], &[7.0, 0.0, 7.0, 0.0, 7.0, 0.0, 7.0, 7.0, 7.0]);
        assert!(
            forecast_features(&values, MONDAY, 600, 1007, &HolidayCalendar::default()).is_none()
        );
    }

    #[test]
    fn holiday_file() {
        let cal = HolidayCalendar::parse(
            "# national\n2020-10-01\n\n2020-10-02\n".as_bytes(),
            8 * 3600,
        )
        .unwrap();
        // 2020-09-30 16:00 UTC is 2020-10-01 00:00 at UTC+8.
        let t = NaiveDate::from_ymd_opt(2020, 9, 30)
            .unwrap()
            .and_hms_opt(16, 0, 0)
            .unwrap()
            .and_utc()
            .timestamp();
        assert!(cal.is_holiday(t));
        assert!(!cal.is_holiday(t - 1));
        assert!(HolidayCalendar::parse("2020-13-01".as_bytes(), 0).is_err());
    }

    #[test]
    fn downsample_means() {
        let s = series_from([1, 3, 5, 7], 600, 10);
        let d = downsample(&s, 120);
        assert_eq!((d.start, d.values.clone()), (600, vec![2.0, 6.0]));
        assert_eq!(d.complete_before(720), 1);
        assert_eq!(d.complete_before(0), 0);
    }

    #[test]
    fn constant_series_forecast() {
        let s = series_from(std::iter::repeat_n(12, 60 * 24 * 9), MONDAY, 40);
        let cfg = ForecasterConfig {
            gbdt: GbdtConfig {
                rounds: 20,
                ..ForecasterConfig::default().gbdt
            },
            ..Default::default()
        };
        let cutoff = MONDAY + 8 * 86_400;
        let f = train_forecaster(&s, cutoff, &HolidayCalendar::default(), &cfg).unwrap();
        assert!(f.check_cutoff(cutoff).is_ok());
        assert!(matches!(
            f.check_cutoff(cutoff - 600),
            Err(Error::Leakage { .. })
        ));
        let hist = downsample(&s, 600);
        for v in f.forecast_at(&hist, cutoff, 18).unwrap() {
            assert!((v - 12.0).abs() <= 1.0, "{v}");
        }
    }

    #[test]
    fn short_history_is_an_error() {
        let s = series_from(std::iter::repeat_n(1, 600), MONDAY, 4);
        assert!(matches!(
            train_forecaster(
                &s,
                MONDAY + 36_000,
                &HolidayCalendar::default(),
                &ForecasterConfig::default()
            ),
            Err(Error::EmptyInput(_))
        ));
    }
}
