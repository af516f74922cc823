use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Minimum number of single-character insertions, deletions and substitutions
/// turning `a` into `b`, counted over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance if it is at most `limit`, computed on a diagonal band.
pub(crate) fn levenshtein_within(a: &[char], b: &[char], limit: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > limit {
        return None;
    }
    const FAR: usize = usize::MAX / 2;
    let n = b.len();
    let mut prev: Vec<usize> = (0..=n).map(|j| if j <= limit { j } else { FAR }).collect();
    let mut cur = vec![FAR; n + 1];
    for i in 1..=a.len() {
        let lo = i.saturating_sub(limit).max(1);
        let hi = (i + limit).min(n);
        cur.fill(FAR);
        cur[0] = if i <= limit { i } else { FAR };
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > limit {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[n] <= limit).then_some(prev[n])
}

/// `levenshtein / max(len)`, zero for two empty strings.
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

/// Greedy leader clustering of job names.
///
/// Names are scanned in first-seen order. A name joins the lowest-numbered
/// cluster whose leader lies within normalized distance `threshold`, or
/// founds a new cluster and becomes its leader.
#[derive(Debug, Clone, Default)]
pub struct NameClusterIndex {
    threshold: f64,
    leaders: Vec<Vec<char>>,
    by_name: HashMap<String, u32>,
    by_len: BTreeMap<usize, Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct StoredIndex {
    threshold: f64,
    leaders: Vec<String>,
}

impl Serialize for NameClusterIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StoredIndex {
            threshold: self.threshold,
            leaders: self.leaders(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NameClusterIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let stored = StoredIndex::deserialize(d)?;
        let mut index = NameClusterIndex::new(stored.threshold);
        for leader in stored.leaders {
            index.found(&leader);
        }
        Ok(index)
    }
}

impl NameClusterIndex {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold: threshold.clamp(0.0, 1.0),
            ..Default::default()
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.leaders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaders.is_empty()
    }

    pub fn leaders(&self) -> Vec<String> {
        self.leaders.iter().map(|l| l.iter().collect()).collect()
    }

    fn found(&mut self, name: &str) -> u32 {
        let id = self.leaders.len() as u32;
        let chars: Vec<char> = name.chars().collect();
        self.by_len.entry(chars.len()).or_default().push(id);
        self.leaders.push(chars);
        self.by_name.insert(name.to_string(), id);
        id
    }

    fn nearest_leader(&self, name: &str) -> Option<u32> {
        let chars: Vec<char> = name.chars().collect();
        let len = chars.len();
        // A leader of length m can only match if |len - m| <= t * max(len, m).
        let t = self.threshold;
        let lo = ((len as f64) * (1.0 - t)).floor() as usize;
        let hi = if t >= 1.0 {
            usize::MAX
        } else {
            ((len as f64) / (1.0 - t)).ceil() as usize
        };
        let mut candidates: Vec<u32> = self
            .by_len
            .range(lo..=hi)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        candidates.sort_unstable();
        candidates.into_iter().find(|&id| {
            let leader = &self.leaders[id as usize];
            let longest = len.max(leader.len());
            if longest == 0 {
                return true;
            }
            let limit = (t * longest as f64 + 1e-9).floor() as usize;
            levenshtein_within(&chars, leader, limit).is_some()
        })
    }

    /// Cluster of `name` without modifying the index.
    pub fn lookup(&self, name: &str) -> Option<u32> {
        self.by_name
            .get(name)
            .copied()
            .or_else(|| self.nearest_leader(name))
    }

    /// Cluster of `name`, founding a new one if nothing is close enough.
    pub fn insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        match self.nearest_leader(name) {
            Some(id) => {
                self.by_name.insert(name.to_string(), id);
                id
            }
            None => self.found(name),
        }
    }
}

pub fn cluster_names<S: AsRef<str>>(names: &[S], threshold: f64) -> NameClusterIndex {
    let mut index = NameClusterIndex::new(threshold);
    for n in names {
        index.insert(n.as_ref());
    }
    index
}
