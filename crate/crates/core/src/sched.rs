//! Queue-ordering policies: FIFO, the SJF/SRTF duration oracles, and QSSF.
//!
//! Lower priority values are scheduled first. QSSF ranks jobs by expected GPU
//! time: the GPU count times a blend of a rolling estimate drawn from similar
//! past jobs and a learned estimate.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::JobRecord;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Priority(f64);

impl Priority {
    /// Non-finite values are mapped to `f64::MAX` so they sort last.
    pub fn new(value: f64) -> Self {
        if value.is_finite() {
            Self(value.max(0.0))
        } else {
            Self(f64::MAX)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Priority {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Priority {}
impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Fifo,
    Sjf,
    Srtf,
    Qssf,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::Fifo, Self::Sjf, Self::Srtf, Self::Qssf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fifo => "fifo",
            Self::Sjf => "sjf",
            Self::Srtf => "srtf",
            Self::Qssf => "qssf",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fifo" => Ok(Self::Fifo),
            "sjf" => Ok(Self::Sjf),
            "srtf" => Ok(Self::Srtf),
            "qssf" => Ok(Self::Qssf),
            other => Err(Error::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Weight of the rolling estimate in QSSF; the learned estimate gets `1 - lambda`.
    pub lambda: f64,
    /// SJF/SRTF read true durations from the trace.
    pub oracle: bool,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            lambda: 0.5,
            oracle: matches!(kind, PolicyKind::Sjf | PolicyKind::Srtf),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

pub fn fifo_priority(job: &JobRecord) -> Priority {
    Priority::new(job.submit_time as f64)
}

pub fn sjf_priority(job: &JobRecord) -> Priority {
    Priority::new(job.duration as f64)
}

/// Remaining service time of a job that has already run for `service` seconds.
pub fn srtf_remaining(duration: i64, service: i64) -> Priority {
    Priority::new((duration - service) as f64)
}

/// Expected GPU time from the two duration estimates.
pub fn qssf_priority(gpu_num: u32, rolling: f64, model: f64, lambda: f64) -> Priority {
    Priority::new(f64::from(gpu_num) * (lambda * rolling + (1.0 - lambda) * model))
}

/// Source of the two duration estimates QSSF blends.
pub trait DurationEstimator: Send {
    /// Estimate from similar historical jobs that finished by `now`.
    fn rolling_estimate(&self, job: &JobRecord, now: i64) -> f64;
    /// Estimate from the learned model.
    fn model_estimate(&self, job: &JobRecord) -> f64;
    /// Called when a job finishes in the simulation.
    fn observe(&mut self, _job: &JobRecord, _end_time: i64) {}
}

/// Both estimates equal the true duration.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectEstimator;

impl DurationEstimator for PerfectEstimator {
    fn rolling_estimate(&self, job: &JobRecord, _now: i64) -> f64 {
        job.duration as f64
    }
    fn model_estimate(&self, job: &JobRecord) -> f64 {
        job.duration as f64
    }
}

/// True duration scaled by a log-normal factor, for traces without the
/// attributes the learned estimators need. The factor for a job depends only
/// on the seed and the job id.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracleEstimator {
    pub log_mean: f64,
    pub log_sd: f64,
    pub seed: u64,
}

impl NoisyOracleEstimator {
    fn factor(&self, job: &JobRecord) -> f64 {
        // FNV-1a keeps the per-job stream stable across platforms.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in job.job_id.bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ self.seed);
        match Normal::new(self.log_mean, self.log_sd) {
            Ok(n) => n.sample(&mut rng).exp(),
            Err(_) => 1.0,
        }
    }
}

impl DurationEstimator for NoisyOracleEstimator {
    fn rolling_estimate(&self, job: &JobRecord, _now: i64) -> f64 {
        job.duration.max(1) as f64 * self.factor(job)
    }
    fn model_estimate(&self, job: &JobRecord) -> f64 {
        self.rolling_estimate(job, 0)
    }
}

/// Fits the log-normal error of `predicted / actual` pairs, returning
/// `(mean, standard deviation)` of the log ratio.
pub fn fit_lognormal_noise(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    let logs: Vec<f64> = pairs
        .iter()
        .filter(|(p, a)| *p > 0.0 && *a > 0.0)
        .map(|(p, a)| (p / a).ln())
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Priority of `job` at submission under QSSF. Falls back to the rolling
/// estimate when the model output is not finite.
pub fn qssf_job_priority(
    job: &JobRecord,
    estimator: &dyn DurationEstimator,
    now: i64,
    lambda: f64,
) -> Priority {
    let rolling = estimator.rolling_estimate(job, now);
    let mut model = estimator.model_estimate(job);
    if !model.is_finite() {
        log::warn!(
            "model estimate for {} is not finite; using the rolling estimate",
            job.job_id
        );
        model = rolling;
    }
    qssf_priority(job.gpu_num, rolling, model, lambda)
}

/// A configured policy, owning any estimator state.
pub enum Policy {
    Fifo,
    Sjf,
    Srtf,
    Qssf {
        lambda: f64,
        estimator: Box<dyn DurationEstimator>,
    },
}

impl Policy {
    pub fn qssf(lambda: f64, estimator: impl DurationEstimator + 'static) -> Self {
        Self::Qssf {
            lambda,
            estimator: Box::new(estimator),
        }
    }

    /// The policy for `kind`; QSSF gets a perfect estimator.
    pub fn oracle(kind: PolicyKind) -> Self {
        match kind {
            PolicyKind::Fifo => Self::Fifo,
            PolicyKind::Sjf => Self::Sjf,
            PolicyKind::Srtf => Self::Srtf,
            PolicyKind::Qssf => Self::qssf(0.5, PerfectEstimator),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Self::Fifo => PolicyKind::Fifo,
            Self::Sjf => PolicyKind::Sjf,
            Self::Srtf => PolicyKind::Srtf,
            Self::Qssf { .. } => PolicyKind::Qssf,
        }
    }

    pub fn is_preemptive(&self) -> bool {
        matches!(self, Self::Srtf)
    }

    /// Priority frozen at submission.
    pub fn submit_priority(&self, job: &JobRecord, now: i64) -> Priority {
        match self {
            Self::Fifo => fifo_priority(job),
            Self::Sjf => sjf_priority(job),
            Self::Srtf => srtf_remaining(job.duration, 0),
            Self::Qssf { lambda, estimator } => {
                qssf_job_priority(job, estimator.as_ref(), now, *lambda)
            }
        }
    }

    pub fn on_job_end(&mut self, job: &JobRecord, end_time: i64) {
        if let Self::Qssf { estimator, .. } = self {
            estimator.observe(job, end_time);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::JobStatus;

    fn job(id: &str, submit: i64, duration: i64, gpus: u32) -> JobRecord {
        JobRecord {
            job_id: id.into(),
            user: "u".into(),
            vc: "v".into(),
            job_name: "n".into(),
            gpu_num: gpus,
            cpu_num: 1,
            status: JobStatus::Completed,
            submit_time: submit,
            start_time: None,
            end_time: None,
            duration,
        }
    }

    #[test]
    fn fifo_and_sjf() {
        assert_eq!(fifo_priority(&job("a", 100, 5, 1)).value(), 100.0);
        assert!(fifo_priority(&job("a", 5, 0, 1)) < fifo_priority(&job("b", 9, 0, 1)));
        assert!(sjf_priority(&job("a", 0, 10, 1)) < sjf_priority(&job("b", 0, 100, 1)));
    }

    #[test]
    fn srtf_remaining_time() {
        assert_eq!(srtf_remaining(100, 30).value(), 70.0);
        assert_eq!(srtf_remaining(50, 50).value(), 0.0);
    }

    #[test]
    fn qssf_arithmetic() {
        assert_eq!(qssf_priority(4, 100.0, 200.0, 0.5).value(), 600.0);
        assert_eq!(qssf_priority(3, 70.0, 1e9, 1.0).value(), 210.0);
        assert_eq!(qssf_priority(2, 1e9, 70.0, 0.0).value(), 140.0);
        let one = qssf_priority(1, 100.0, 200.0, 0.5).value();
        let eight = qssf_priority(8, 100.0, 200.0, 0.5).value();
        assert_eq!(eight, 8.0 * one);
    }

    struct BrokenModel;
    impl DurationEstimator for BrokenModel {
        fn rolling_estimate(&self, _: &JobRecord, _: i64) -> f64 {
            40.0
        }
        fn model_estimate(&self, _: &JobRecord) -> f64 {
            f64::NAN
        }
    }

    #[test]
    fn non_finite_model_falls_back_to_rolling() {
        let p = qssf_job_priority(&job("a", 0, 1, 2), &BrokenModel, 0, 0.5);
        assert_eq!(p.value(), 80.0);
    }

    #[test]
    fn policy_names() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!(matches!(
            "lifo".parse::<PolicyKind>(),
            Err(Error::UnknownPolicy(_))
        ));
    }

    #[test]
    fn lambda_range() {
        assert!(PolicyConfig {
            lambda: 1.5,
            ..PolicyConfig::new(PolicyKind::Qssf)
        }
        .validate()
        .is_err());
        assert!(PolicyConfig::new(PolicyKind::Qssf).validate().is_ok());
    }

    #[test]
    fn noisy_oracle_is_stable_per_job() {
        let est = NoisyOracleEstimator {
            log_mean: 0.0,
            log_sd: 0.5,
            seed: 9,
        };
        let j = job("abc", 0, 100, 1);
        assert_eq!(est.model_estimate(&j), est.model_estimate(&j));
        assert_ne!(
            est.model_estimate(&j),
            est.model_estimate(&job("abd", 0, 100, 1))
        );
        let zero = NoisyOracleEstimator { log_sd: 0.0, ..est };
        assert_eq!(zero.model_estimate(&j), 100.0);
    }

    #[test]
    fn lognormal_fit() {
        let pairs = [(200.0, 100.0), (50.0, 100.0), (100.0, 100.0)];
        let (m, s) = fit_lognormal_noise(&pairs).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((s - 2f64.ln()).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn qssf_monotone(n in 1u32..64, r in 0.0f64..1e6, m in 0.0f64..1e6, d in 0.0f64..1e4, lambda in 0.0f64..=1.0) {
            let base = qssf_priority(n, r, m, lambda);
            proptest::prop_assert!(qssf_priority(n, r + d, m, lambda) >= base);
            proptest::prop_assert!(qssf_priority(n, r, m + d, lambda) >= base);
            proptest::prop_assert!(qssf_priority(n + 1, r, m, lambda) >= base);
        }
    }
}
