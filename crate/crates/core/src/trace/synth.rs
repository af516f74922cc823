use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{JobRecord, JobStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DurationDist {
    /// Every job runs exactly this many seconds.
    Point(i64),
    /// Log-normal in seconds; `template_sigma` adds a per-name-template
    /// offset to `mu` so that names carry signal about duration.
    LogNormal {
        mu: f64,
        sigma: f64,
        template_sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub job_count: usize,
    pub start_time: i64,
    pub span_days: u32,
    /// Relative arrival weight for each hour of the day; sums to 1.
    pub hourly_weights: Vec<f64>,
    /// (GPU count, probability); counts are 0 or powers of two.
    pub gpu_dist: Vec<(u32, f64)>,
    pub duration: DurationDist,
    pub users: Vec<String>,
    pub name_templates: Vec<String>,
    /// (VC, probability).
    pub vcs: Vec<(String, f64)>,
    /// Probabilities of completed, canceled, failed.
    pub status_mix: [f64; 3],
    pub cpus_per_gpu: u32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        // Daytime-heavy arrivals.
        let raw: Vec<f64> = (0..24)
            .map(|h| if (9..23).contains(&h) { 3.0 } else { 1.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        Self {
            job_count: 1000,
            start_time: 1_598_918_400, // 2020-09-01 00:00:00 UTC
            span_days: 7,
            hourly_weights: raw.into_iter().map(|w| w / total).collect(),
            gpu_dist: vec![(1, 0.55), (2, 0.15), (4, 0.12), (8, 0.13), (16, 0.05)],
            duration: DurationDist::LogNormal {
                mu: 6.0,
                sigma: 1.5,
                template_sigma: 1.0,
            },
            users: (0..20).map(|i| format!("user{i:02}")).collect(),
            name_templates: [
                "train_resnet",
                "eval_bert",
                "debug_gan",
                "pretrain_vit",
                "finetune_gpt",
                "det_yolo",
                "seg_unet",
                "rl_ppo",
                "nas_search",
                "speech_asr",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            vcs: vec![
                ("vc1".into(), 0.5),
                ("vc2".into(), 0.3),
                ("vc3".into(), 0.2),
            ],
            status_mix: [0.7, 0.2, 0.1],
            cpus_per_gpu: 4,
            seed: 0,
        }
    }
}

fn check_probs(name: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    let mut n = 0;
    for p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidSynthParams(format!(
                "{name}: invalid probability {p}"
            )));
        }
        sum += p;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidSynthParams(format!(
            "{name}: empty distribution"
        )));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidSynthParams(format!(
            "{name}: probabilities sum to {sum}"
        )));
    }
    Ok(())
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.hourly_weights.len() != 24 {
            return Err(Error::InvalidSynthParams(
                "hourly_weights must have 24 entries".into(),
            ));
        }
        check_probs("hourly_weights", self.hourly_weights.iter().copied())?;
        check_probs("gpu_dist", self.gpu_dist.iter().map(|g| g.1))?;
        check_probs("vcs", self.vcs.iter().map(|v| v.1))?;
        check_probs("status_mix", self.status_mix.iter().copied())?;
        if let Some((g, _)) = self
            .gpu_dist
            .iter()
            .find(|(g, _)| *g != 0 && !g.is_power_of_two())
        {
            return Err(Error::InvalidSynthParams(format!(
                "gpu count {g} is not a power of two"
            )));
        }
        if self.users.is_empty() || self.name_templates.is_empty() {
            return Err(Error::InvalidSynthParams(
                "user and name pools must be non-empty".into(),
            ));
        }
        if self.span_days == 0 {
            return Err(Error::InvalidSynthParams(
                "span_days must be positive".into(),
            ));
        }
        match self.duration {
            DurationDist::Point(v) if v < 0 => Err(Error::InvalidSynthParams(
                "point duration must be non-negative".into(),
            )),
            DurationDist::LogNormal {
                mu,
                sigma,
                template_sigma,
            } if !mu.is_finite()
                || !(sigma.is_finite() && sigma >= 0.0)
                || !(template_sigma.is_finite() && template_sigma >= 0.0) =>
            {
                Err(Error::InvalidSynthParams(
                    "log-normal parameters must be finite, sigmas ≥ 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Generates a trace from `params`. Output depends only on `params`.
///
/// Jobs carry no start/end times; the simulator assigns them. Job ids follow
/// submit order.
pub fn synth_trace(params: &SynthParams) -> Result<Vec<JobRecord>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights =
        |w: Vec<f64>| WeightedIndex::new(w).map_err(|e| Error::InvalidSynthParams(e.to_string()));
    let hour_dist = weights(params.hourly_weights.clone())?;
    let gpu_dist = weights(params.gpu_dist.iter().map(|g| g.1).collect())?;
    let vc_dist = weights(params.vcs.iter().map(|v| v.1).collect())?;
    let status_dist = weights(params.status_mix.to_vec())?;

    let template_offsets: Vec<f64> = match params.duration {
        DurationDist::LogNormal { template_sigma, .. } if template_sigma > 0.0 => {
            let n = Normal::new(0.0, template_sigma)
                .map_err(|e| Error::InvalidSynthParams(e.to_string()))?;
            params
                .name_templates
                .iter()
                .map(|_| n.sample(&mut rng))
                .collect()
        }
        _ => vec![0.0; params.name_templates.len()],
    };
    let templates_per_user = params.name_templates.len().min(3);

    let mut jobs = Vec::with_capacity(params.job_count);
    for _ in 0..params.job_count {
        let day = rng.random_range(0..i64::from(params.span_days));
        let hour = hour_dist.sample(&mut rng) as i64;
        let second = rng.random_range(0..3600);
        let submit = params.start_time + day * 86_400 + hour * 3600 + second;

        let u = rng.random_range(0..params.users.len());
        // Each user works on a small, fixed set of templates.
        let t = (u * 7 + rng.random_range(0..templates_per_user)) % params.name_templates.len();
        let run = rng.random_range(0..40);
        let gpu_num = params.gpu_dist[gpu_dist.sample(&mut rng)].0;
        let duration = match params.duration {
            DurationDist::Point(v) => v,
            DurationDist::LogNormal { mu, sigma, .. } => {
                let d = LogNormal::new(mu + template_offsets[t], sigma)
                    .map_err(|e| Error::InvalidSynthParams(e.to_string()))?;
                (d.sample(&mut rng).round() as i64).clamp(1, 60 * 86_400)
            }
        };
        let status = [JobStatus::Completed, JobStatus::Canceled, JobStatus::Failed]
            [status_dist.sample(&mut rng)];
        jobs.push(JobRecord {
            job_id: String::new(),
            user: params.users[u].clone(),
            vc: params.vcs[vc_dist.sample(&mut rng)].0.clone(),
            job_name: format!("{}_{run:02}", params.name_templates[t]),
            gpu_num,
            cpu_num: gpu_num.max(1) * params.cpus_per_gpu,
            status,
            submit_time: submit,
            start_time: None,
            end_time: None,
            duration,
        });
    }
    jobs.sort_by_key(|j| j.submit_time);
    let width = params.job_count.max(1).to_string().len();
    for (i, j) in jobs.iter_mut().enumerate() {
        j.job_id = format!("job{i:0width$}");
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::write_job_log;

    #[test]
    fn deterministic_for_seed() {
        let p = SynthParams {
            job_count: 100,
            seed: 42,
            ..Default::default()
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_job_log(&synth_trace(&p).unwrap(), &mut a).unwrap();
        write_job_log(&synth_trace(&p).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let other = SynthParams { seed: 43, ..p };
        let mut c = Vec::new();
        write_job_log(&synth_trace(&other).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn point_mass_duration() {
        let p = SynthParams {
            job_count: 200,
            duration: DurationDist::Point(60),
            ..Default::default()
        };
        assert!(synth_trace(&p).unwrap().iter().all(|j| j.duration == 60));
    }

    #[test]
    fn gpu_share_matches_distribution() {
        // Binomial(10_000, 0.9): sd = sqrt(10_000 * 0.9 * 0.1) = 30 jobs, so
        // [8900, 9100] is a ±3.3 sd band.
        let p = SynthParams {
            job_count: 10_000,
            gpu_dist: vec![(1, 0.9), (8, 0.1)],
            seed: 7,
            ..Default::default()
        };
        let jobs = synth_trace(&p).unwrap();
        let single = jobs.iter().filter(|j| j.gpu_num == 1).count() as f64 / jobs.len() as f64;
        assert!((0.89..=0.91).contains(&single), "single-GPU share {single}");
        assert!(jobs.iter().all(|j| j.gpu_num == 1 || j.gpu_num == 8));
    }

    #[test]
    fn degenerate_params_are_rejected() {
        let bad_sum = SynthParams {
            gpu_dist: vec![(1, 0.5)],
            ..Default::default()
        };
        assert!(synth_trace(&bad_sum).is_err());
        let not_pow2 = SynthParams {
            gpu_dist: vec![(3, 1.0)],
            ..Default::default()
        };
        assert!(synth_trace(&not_pow2).is_err());
        let no_users = SynthParams {
            users: vec![],
            ..Default::default()
        };
        assert!(synth_trace(&no_users).is_err());
        let zero_hours = SynthParams {
            hourly_weights: vec![0.0; 24],
            ..Default::default()
        };
        assert!(synth_trace(&zero_hours).is_err());
    }

    #[test]
    fn records_satisfy_invariants() {
        let jobs = synth_trace(&SynthParams {
            job_count: 500,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        assert!(jobs.iter().all(|j| j.check().is_ok()));
        assert!(jobs
            .windows(2)
            .all(|w| w[0].submit_time <= w[1].submit_time && w[0].job_id < w[1].job_id));
    }
}
