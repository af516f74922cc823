//! Job duration estimation for QSSF.
//!
//! Two estimators feed the scheduler: a rolling estimate from similar finished
//! jobs ([`HistoryStore`]) and a boosted-tree model over encoded job attributes
//! ([`DurationModel`]). [`ModelUpdateEngine`] keeps the model current by
//! boosting extra rounds on a sliding window of recently finished jobs.

mod features;
mod gbdt;
mod history;
mod names;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use features::{
    calendar, encode_features, CategoryEncoder, FeatureEncoders, FeatureVector, FEATURE_NAMES,
    FEATURE_WIDTH, UNKNOWN,
};
pub use gbdt::{
    predict_gbdt, train_gbdt, Dataset, GbdtConfig, GbdtModel, RegressionTree, TargetTransform,
    TreeNode, MODEL_VERSION,
};
pub use history::{rolling_estimate, HistoryStore, RollingCase, RollingConfig};
pub use names::{cluster_names, levenshtein, normalized_distance, NameClusterIndex};

use crate::error::{Error, Result};
use crate::sched::DurationEstimator;
use crate::trace::JobRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationModelConfig {
    pub gbdt: GbdtConfig,
    pub name_threshold: f64,
    pub tz_offset: i64,
}

impl Default for DurationModelConfig {
    fn default() -> Self {
        Self {
            gbdt: GbdtConfig {
                target: TargetTransform::Log1p,
                ..GbdtConfig::default()
            },
            name_threshold: 0.3,
            tz_offset: 0,
        }
    }
}

/// Boosted trees over encoded job attributes, with the encoders they were fit with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DurationModel {
    pub version: u32,
    pub encoders: FeatureEncoders,
    pub gbdt: GbdtModel,
}

fn dataset<'a>(
    jobs: impl IntoIterator<Item = &'a JobRecord>,
    enc: &FeatureEncoders,
) -> Result<Dataset> {
    let mut d = Dataset::new(FEATURE_WIDTH);
    for j in jobs {
        d.push(&encode_features(j, enc), j.duration as f64)?;
    }
    Ok(d)
}

impl DurationModel {
    pub fn train(jobs: &[JobRecord], config: &DurationModelConfig) -> Result<Self> {
        if jobs.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let encoders = FeatureEncoders::fit(jobs, config.name_threshold, config.tz_offset);
        let gbdt = train_gbdt(&dataset(jobs, &encoders)?, &config.gbdt)?;
        Ok(Self {
            version: MODEL_VERSION,
            encoders,
            gbdt,
        })
    }

    /// Predicted duration in seconds, at least one.
    pub fn predict(&self, job: &JobRecord) -> f64 {
        predict_gbdt(&self.gbdt, &encode_features(job, &self.encoders)).unwrap_or(1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION || m.gbdt.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {}",
                m.version
            )));
        }
        if m.gbdt.width != FEATURE_WIDTH {
            return Err(Error::FeatureWidth {
                expected: FEATURE_WIDTH,
                found: m.gbdt.width,
            });
        }
        Ok(m)
    }
}

/// Adds boosting rounds as jobs finish, fit on the jobs that ended within
/// `window` seconds of the latest one.
#[derive(Debug, Clone)]
pub struct ModelUpdateEngine {
    pub model: DurationModel,
    pub window: i64,
    pub rounds_per_update: usize,
    recent: VecDeque<JobRecord>,
}

impl ModelUpdateEngine {
    pub fn new(model: DurationModel, window: i64, rounds_per_update: usize) -> Self {
        Self {
            model,
            window,
            rounds_per_update,
            recent: VecDeque::new(),
        }
    }

    pub fn window_len(&self) -> usize {
        self.recent.len()
    }

    pub fn update(&mut self, batch: &[JobRecord]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut batch: Vec<&JobRecord> = batch.iter().collect();
        batch.sort_by_key(|j| j.end_time.unwrap_or(j.submit_time + j.duration));
        self.recent.extend(batch.into_iter().cloned());
        let end = |j: &JobRecord| j.end_time.unwrap_or(j.submit_time + j.duration);
        let latest = self.recent.iter().map(end).max().unwrap_or(0);
        while self
            .recent
            .front()
            .is_some_and(|j| end(j) < latest - self.window)
        {
            self.recent.pop_front();
        }
        let data = dataset(self.recent.iter(), &self.model.encoders)?;
        self.model.gbdt.boost(&data, self.rounds_per_update)
    }
}

/// Appends boosting rounds to `model` fit on `window_jobs` plus `batch`.
pub fn update_model(
    model: &DurationModel,
    batch: &[JobRecord],
    window: i64,
    rounds_per_update: usize,
) -> Result<DurationModel> {
    let mut engine = ModelUpdateEngine::new(model.clone(), window, rounds_per_update);
    engine.update(batch)?;
    Ok(engine.model)
}

/// QSSF estimator backed by a history store and a trained model. Finished
/// jobs are added to the history as the simulation reports them.
#[derive(Debug, Clone)]
pub struct LearnedEstimator {
    pub history: HistoryStore,
    pub model: DurationModel,
}

impl LearnedEstimator {
    pub fn new(history: HistoryStore, model: DurationModel) -> Self {
        Self { history, model }
    }
}

impl DurationEstimator for LearnedEstimator {
    fn rolling_estimate(&self, job: &JobRecord, now: i64) -> f64 {
        rolling_estimate(job, &self.history, now)
    }

    fn model_estimate(&self, job: &JobRecord) -> f64 {
        self.model.predict(job)
    }

    fn observe(&mut self, job: &JobRecord, end_time: i64) {
        self.history.append(job, end_time);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub train_jobs: usize,
    pub eval_jobs: usize,
    pub rmse: f64,
    pub smape: f64,
    pub rolling_rmse: f64,
    pub rolling_smape: f64,
}

fn rmse(pairs: &[(f64, f64)]) -> f64 {
    (pairs.iter().map(|(a, f)| (a - f).powi(2)).sum::<f64>() / pairs.len().max(1) as f64).sqrt()
}

/// Scores the model and the rolling estimator on `eval` jobs. The rolling
/// estimator sees each job's history as of its submission.
pub fn validate_model(
    model: &DurationModel,
    history: &HistoryStore,
    train_jobs: usize,
    eval: &[JobRecord],
) -> Result<ValidationReport> {
    if eval.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let model_pairs: Vec<(f64, f64)> = eval
        .iter()
        .map(|j| (j.duration as f64, model.predict(j)))
        .collect();
    let rolling_pairs: Vec<(f64, f64)> = eval
        .iter()
        .map(|j| {
            (
                j.duration as f64,
                rolling_estimate(j, history, j.submit_time),
            )
        })
        .collect();
    let split = |p: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { p.iter().copied().unzip() };
    let (a, f) = split(&model_pairs);
    let (ra, rf) = split(&rolling_pairs);
    Ok(ValidationReport {
        train_jobs,
        eval_jobs: eval.len(),
        rmse: rmse(&model_pairs),
        smape: crate::ces::smape(&a, &f)?,
        rolling_rmse: rmse(&rolling_pairs),
        rolling_smape: crate::ces::smape(&ra, &rf)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synth_trace, SynthParams};

    fn with_end(mut jobs: Vec<JobRecord>) -> Vec<JobRecord> {
        for j in &mut jobs {
            j.start_time = Some(j.submit_time);
            j.end_time = Some(j.submit_time + j.duration);
        }
        jobs
    }

    fn small_config() -> DurationModelConfig {
        DurationModelConfig {
            gbdt: GbdtConfig {
                rounds: 30,
                min_samples_leaf: 5,
                ..DurationModelConfig::default().gbdt
            },
            ..Default::default()
        }
    }

    #[test]
    fn model_round_trips_through_json() {
        let jobs = with_end(
            synth_trace(&SynthParams {
                job_count: 300,
                seed: 1,
                ..Default::default()
            })
            .unwrap(),
        );
        let m = DurationModel::train(&jobs, &small_config()).unwrap();
        let back = DurationModel::from_json(&m.to_json().unwrap()).unwrap();
        for j in jobs.iter().take(50) {
            assert_eq!(m.predict(j), back.predict(j));
            assert!(m.predict(j) >= 1.0);
        }
    }

    #[test]
    fn update_engine_bookkeeping() {
        let jobs = with_end(
            synth_trace(&SynthParams {
                job_count: 200,
                seed: 2,
                ..Default::default()
            })
            .unwrap(),
        );
        let m = DurationModel::train(&jobs, &small_config()).unwrap();
        let mut engine = ModelUpdateEngine::new(m.clone(), 30 * 86_400, 5);
        engine.update(&[]).unwrap();
        assert_eq!(engine.model.gbdt.rounds(), 30);
        assert_eq!(engine.model.gbdt, m.gbdt);
        engine.update(&jobs[..50]).unwrap();
        engine.update(&jobs[..50]).unwrap();
        assert_eq!(engine.model.gbdt.rounds(), 40);
    }

    #[test]
    fn learned_estimator_observes_finished_jobs() {
        let jobs = with_end(
            synth_trace(&SynthParams {
                job_count: 100,
                seed: 3,
                ..Default::default()
            })
            .unwrap(),
        );
        let model = DurationModel::train(&jobs, &small_config()).unwrap();
        let mut est = LearnedEstimator::new(HistoryStore::new(RollingConfig::default()), model);
        assert_eq!(est.rolling_estimate(&jobs[0], 0), 600.0);
        est.observe(&jobs[0], 10);
        assert_eq!(est.rolling_estimate(&jobs[1], 10), jobs[0].duration as f64);
    }
}
