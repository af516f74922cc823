use std::collections::HashMap;

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::names::NameClusterIndex;
use crate::trace::JobRecord;

/// Feature value of a category not seen while fitting.
pub const UNKNOWN: f64 = -1.0;

pub const FEATURE_NAMES: [&str; 9] = [
    "user",
    "vc",
    "name_cluster",
    "gpu_num",
    "cpu_num",
    "month",
    "day_of_week",
    "hour",
    "minute",
];
pub const FEATURE_WIDTH: usize = FEATURE_NAMES.len();

pub type FeatureVector = [f64; FEATURE_WIDTH];

/// Integer codes in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryEncoder {
    values: Vec<String>,
    codes: HashMap<String, u32>,
}

impl Serialize for CategoryEncoder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CategoryEncoder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<String>::deserialize(d)?;
        let mut e = CategoryEncoder::default();
        for v in &values {
            e.fit_one(v);
        }
        Ok(e)
    }
}

impl CategoryEncoder {
    pub fn fit_one(&mut self, value: &str) -> u32 {
        if let Some(&c) = self.codes.get(value) {
            return c;
        }
        let c = self.values.len() as u32;
        self.values.push(value.to_string());
        self.codes.insert(value.to_string(), c);
        c
    }

    pub fn code(&self, value: &str) -> Option<u32> {
        self.codes.get(value).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Calendar fields of an epoch timestamp shifted by `tz_offset` seconds:
/// (month 1-12, day of week with Monday = 0, hour, minute).
pub fn calendar(t: i64, tz_offset: i64) -> (u32, u32, u32, u32) {
    let dt = DateTime::from_timestamp(t + tz_offset, 0).unwrap_or_default();
    (
        dt.month(),
        dt.weekday().num_days_from_monday(),
        dt.hour(),
        dt.minute(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureEncoders {
    pub users: CategoryEncoder,
    pub vcs: CategoryEncoder,
    pub names: NameClusterIndex,
    /// Added to timestamps before extracting calendar fields.
    pub tz_offset: i64,
}

impl FeatureEncoders {
    pub fn fit<'a>(
        jobs: impl IntoIterator<Item = &'a JobRecord>,
        name_threshold: f64,
        tz_offset: i64,
    ) -> Self {
        let mut e = Self {
            users: CategoryEncoder::default(),
            vcs: CategoryEncoder::default(),
            names: NameClusterIndex::new(name_threshold),
            tz_offset,
        };
        for j in jobs {
            e.users.fit_one(&j.user);
            e.vcs.fit_one(&j.vc);
            e.names.insert(&j.job_name);
        }
        e
    }
}

pub fn encode_features(job: &JobRecord, enc: &FeatureEncoders) -> FeatureVector {
    let code = |c: Option<u32>| c.map_or(UNKNOWN, f64::from);
    let (month, dow, hour, minute) = calendar(job.submit_time, enc.tz_offset);
    [
        code(enc.users.code(&job.user)),
        code(enc.vcs.code(&job.vc)),
        code(enc.names.lookup(&job.job_name)),
        f64::from(job.gpu_num),
        f64::from(job.cpu_num),
        f64::from(month),
        f64::from(dow),
        f64::from(hour),
        f64::from(minute),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::JobStatus;

    fn job(user: &str, vc: &str, submit: i64) -> JobRecord {
        JobRecord {
            job_id: "j".into(),
            user: user.into(),
            vc: vc.into(),
            job_name: "train".into(),
            gpu_num: 2,
            cpu_num: 8,
            status: JobStatus::Completed,
            submit_time: submit,
            start_time: None,
            end_time: None,
            duration: 10,
        }
    }

    #[test]
    fn categories_and_unknowns() {
        let train = [job("alice", "vcA", 0), job("bob", "vcB", 0)];
        let enc = FeatureEncoders::fit(&train, 0.3, 0);
        let f = encode_features(&job("bob", "vcZ", 0), &enc);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], UNKNOWN);
        assert_eq!(f[2], 0.0);
        assert_eq!((f[3], f[4]), (2.0, 8.0));
    }

    #[test]
    fn calendar_fields() {
        // 2020-09-07 09:30:00 UTC was a Monday: 18512 days after the epoch
        // (1970-01-01 was a Thursday; 18512 % 7 = 4, Thursday + 4 = Monday).
        let t = 18_512 * 86_400 + 9 * 3600 + 30 * 60;
        assert_eq!(calendar(t, 0), (9, 0, 9, 30));
        let enc = FeatureEncoders::fit(std::iter::empty(), 0.3, 0);
        let f = encode_features(&job("x", "y", t), &enc);
        assert_eq!(&f[5..], &[9.0, 0.0, 9.0, 30.0]);
        // Same instant seen from UTC+8.
        assert_eq!(calendar(t, 8 * 3600), (9, 0, 17, 30));
    }

    #[test]
    fn encoders_persist() {
        let train = [job("alice", "vcA", 0), job("bob", "vcB", 0)];
        let enc = FeatureEncoders::fit(&train, 0.3, 3600);
        let back: FeatureEncoders =
            serde_json::from_str(&serde_json::to_string(&enc).unwrap()).unwrap();
        for j in &train {
            assert_eq!(encode_features(j, &enc), encode_features(j, &back));
        }
    }
}
