//! Discrete-event replay of a job trace against a VC-partitioned GPU cluster.
//!
//! Each VC owns a fixed set of nodes and a priority queue. Jobs are gang
//! scheduled with consolidated placement and the queue is walked head-first
//! with no backfill: the first job that cannot be placed blocks the rest.
//! Events sharing a timestamp are applied together, ends before submissions,
//! and the affected VCs are scheduled once afterwards.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::sched::{srtf_remaining, Policy, PolicyKind, Priority};
use crate::trace::{ClusterSpec, JobRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimNode {
    pub node_id: u32,
    pub vc: String,
    pub total_gpus: u32,
    pub free_gpus: u32,
}

impl SimNode {
    pub fn new(node_id: u32, vc: &str, total_gpus: u32) -> Self {
        Self {
            node_id,
            vc: vc.to_string(),
            total_gpus,
            free_gpus: total_gpus,
        }
    }
}

/// GPUs taken from each node, as (index into the VC's node slice, count).
pub type Placement = Vec<(usize, u32)>;

/// Places `gpu_num` GPUs on as few nodes as possible.
///
/// A job that fits on one node goes to the node with the fewest sufficient free
/// GPUs. Larger jobs take `gpu_num / per_node` completely free nodes plus,
/// for any remainder, one more node chosen the same best-fit way. Ties go to
/// the lowest index.
pub fn consolidate_allocate(gpu_num: u32, nodes: &[SimNode]) -> Option<Placement> {
    if gpu_num == 0 {
        return Some(Vec::new());
    }
    let per_node = nodes.first()?.total_gpus;
    if per_node == 0 {
        return None;
    }
    let best_fit = |need: u32, exclude: &[usize]| {
        nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| n.free_gpus >= need && !exclude.contains(i))
            .min_by_key(|(i, n)| (n.free_gpus, *i))
            .map(|(i, _)| i)
    };
    if gpu_num <= per_node {
        return best_fit(gpu_num, &[]).map(|i| vec![(i, gpu_num)]);
    }
    let full = (gpu_num / per_node) as usize;
    let rem = gpu_num % per_node;
    let rem_node = if rem > 0 {
        Some(best_fit(rem, &[])?)
    } else {
        None
    };
    let mut placement: Placement = nodes
        .iter()
        .enumerate()
        .filter(|(i, n)| n.free_gpus == n.total_gpus && Some(*i) != rem_node)
        .take(full)
        .map(|(i, n)| (i, n.total_gpus))
        .collect();
    if placement.len() < full {
        return None;
    }
    if let Some(i) = rem_node {
        placement.push((i, rem));
        placement.sort_unstable();
    }
    Some(placement)
}

fn apply(nodes: &mut [SimNode], placement: &Placement) {
    for &(i, g) in placement {
        let n = &mut nodes[i];
        assert!(n.free_gpus >= g, "node {} over-allocated", n.node_id);
        n.free_gpus -= g;
    }
}

fn release(nodes: &mut [SimNode], placement: &Placement) {
    for &(i, g) in placement {
        let n = &mut nodes[i];
        assert!(
            n.free_gpus + g <= n.total_gpus,
            "node {} over-released",
            n.node_id
        );
        n.free_gpus += g;
    }
}

/// Queue order: priority, then submit time, then job id rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QueueKey {
    pub priority: Priority,
    pub submit_time: i64,
    pub tiebreak: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedJob {
    pub job: usize,
    pub gpu_num: u32,
}

#[derive(Debug, Clone, Default)]
pub struct VcQueue {
    pub vc: String,
    pending: BTreeMap<QueueKey, QueuedJob>,
}

impl VcQueue {
    pub fn new(vc: &str) -> Self {
        Self {
            vc: vc.to_string(),
            pending: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, key: QueueKey, job: QueuedJob) {
        self.pending.insert(key, job);
    }

    pub fn first(&self) -> Option<(QueueKey, QueuedJob)> {
        self.pending.first_key_value().map(|(k, v)| (*k, *v))
    }

    pub fn remove(&mut self, key: &QueueKey) -> Option<QueuedJob> {
        self.pending.remove(key)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QueueKey, &QueuedJob)> {
        self.pending.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Started {
    pub job: usize,
    pub key: QueueKey,
    pub placement: Placement,
}

/// Starts jobs from the head of the queue until one cannot be placed.
pub fn schedule_vc(queue: &mut VcQueue, nodes: &mut [SimNode]) -> Vec<Started> {
    let mut started = Vec::new();
    while let Some((key, q)) = queue.first() {
        let Some(placement) = consolidate_allocate(q.gpu_num, nodes) else {
            break;
        };
        apply(nodes, &placement);
        queue.remove(&key);
        started.push(Started {
            job: q.job,
            key,
            placement,
        });
    }
    started
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    JobEnd,
    JobSubmit,
    PeriodicTick,
}

/// Events are totally ordered by time, kind, then job id rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SimEvent {
    pub time: i64,
    pub kind: EventKind,
    pub rank: usize,
    generation: u32,
    job: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimOptions {
    /// Replay jobs with zero GPUs too; they start on submission.
    pub include_cpu_jobs: bool,
    /// Emit periodic samples of cluster state.
    pub tick_period: Option<i64>,
    /// Time at which the VC partition is read from the cluster spec; defaults
    /// to the first replayed submission.
    pub partition_time: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobOutcome {
    pub job_id: String,
    pub vc: String,
    pub gpu_num: u32,
    pub submit: i64,
    /// First time the job started running.
    pub start: i64,
    pub end: i64,
    pub duration: i64,
    pub preemptions: u32,
    /// Node ids of the final placement.
    pub nodes: Vec<u32>,
}

impl JobOutcome {
    pub fn jct(&self) -> i64 {
        self.end - self.submit
    }

    /// Wait before the first start.
    pub fn queuing(&self) -> i64 {
        self.start - self.submit
    }

    /// Time spent preempted between the first start and the end. Zero for
    /// non-preemptive policies.
    pub fn suspended(&self) -> i64 {
        self.end - self.start - self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSegment {
    /// Index into [`SimResult::jobs`].
    pub job: usize,
    pub start: i64,
    pub end: i64,
    /// (node id, GPUs).
    pub placement: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TickSample {
    pub t: i64,
    pub busy_gpus: u64,
    pub running_jobs: usize,
    pub pending_jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimResult {
    pub policy: PolicyKind,
    pub cluster: String,
    pub gpus_per_node: u32,
    /// GPUs across all VC-assigned nodes.
    pub total_gpus: u64,
    pub vc_nodes: Vec<(String, Vec<u32>)>,
    pub jobs: Vec<JobOutcome>,
    pub segments: Vec<RunSegment>,
    /// Jobs whose demand exceeds their VC's capacity.
    pub unschedulable: Vec<String>,
    pub ticks: Vec<TickSample>,
}

struct JobState {
    record: usize,
    vc: usize,
    rank: usize,
    remaining: i64,
    service: i64,
    seg_start: i64,
    generation: u32,
    placement: Placement,
    first_start: Option<i64>,
    end: Option<i64>,
    running: bool,
    preemptions: u32,
    last_nodes: Vec<u32>,
}

struct Engine<'a> {
    jobs: &'a [JobRecord],
    policy: &'a mut Policy,
    states: Vec<JobState>,
    nodes: Vec<Vec<SimNode>>,
    queues: Vec<VcQueue>,
    running: Vec<BTreeSet<(usize, usize)>>,
    heap: BinaryHeap<Reverse<SimEvent>>,
    segments: Vec<RunSegment>,
}

impl Engine<'_> {
    fn start(&mut self, s: usize, placement: Placement, t: i64) {
        let vc = self.states[s].vc;
        let st = &mut self.states[s];
        st.placement = placement;
        st.running = true;
        st.seg_start = t;
        st.first_start.get_or_insert(t);
        self.running[vc].insert((st.rank, s));
        self.heap.push(Reverse(SimEvent {
            time: t + st.remaining,
            kind: EventKind::JobEnd,
            rank: st.rank,
            generation: st.generation,
            job: s,
        }));
    }

    fn close_segment(&mut self, s: usize, t: i64) {
        let st = &mut self.states[s];
        let ids: Vec<(u32, u32)> = st
            .placement
            .iter()
            .map(|&(i, g)| (self.nodes[st.vc][i].node_id, g))
            .collect();
        st.last_nodes = ids.iter().map(|p| p.0).collect();
        if t > st.seg_start {
            self.segments.push(RunSegment {
                job: s,
                start: st.seg_start,
                end: t,
                placement: ids,
            });
        }
    }

    fn finish(&mut self, s: usize, t: i64) {
        self.close_segment(s, t);
        let st = &mut self.states[s];
        release(&mut self.nodes[st.vc], &st.placement);
        self.running[st.vc].remove(&(st.rank, s));
        st.running = false;
        st.service += t - st.seg_start;
        st.remaining = 0;
        st.end = Some(t);
        let record = st.record;
        self.policy.on_job_end(&self.jobs[record], t);
    }

    fn preempt(&mut self, s: usize, t: i64) {
        self.close_segment(s, t);
        let st = &mut self.states[s];
        release(&mut self.nodes[st.vc], &st.placement);
        self.running[st.vc].remove(&(st.rank, s));
        st.running = false;
        st.service += t - st.seg_start;
        st.remaining = self.jobs[st.record].duration - st.service;
        st.generation += 1;
        st.preemptions += 1;
        st.placement.clear();
        let job = &self.jobs[st.record];
        let key = QueueKey {
            priority: srtf_remaining(job.duration, st.service),
            submit_time: job.submit_time,
            tiebreak: st.rank,
        };
        self.queues[st.vc].push(
            key,
            QueuedJob {
                job: s,
                gpu_num: job.gpu_num,
            },
        );
    }

    /// Preempts running jobs with strictly more remaining time than the queue
    /// head, largest first, until the head fits. Returns whether the head started.
    fn try_preempt(&mut self, vc: usize, t: i64) -> bool {
        let Some((key, head)) = self.queues[vc].first() else {
            return false;
        };
        let head_remaining = self.states[head.job].remaining;
        let mut victims: Vec<(i64, usize, usize)> = self.running[vc]
            .iter()
            .map(|&(rank, s)| {
                let st = &self.states[s];
                (st.remaining - (t - st.seg_start), rank, s)
            })
            .filter(|(rem, _, _)| *rem > head_remaining)
            .collect();
        victims.sort_unstable_by(|a, b| b.cmp(a));
        let mut trial = self.nodes[vc].clone();
        for k in 0..victims.len() {
            release(&mut trial, &self.states[victims[k].2].placement);
            if consolidate_allocate(head.gpu_num, &trial).is_some() {
                for &(_, _, s) in &victims[..=k] {
                    self.preempt(s, t);
                }
                self.queues[vc].remove(&key);
                let placement = consolidate_allocate(head.gpu_num, &self.nodes[vc])
                    .expect("placement freed by preemption");
                apply(&mut self.nodes[vc], &placement);
                self.start(head.job, placement, t);
                return true;
            }
        }
        false
    }

    fn schedule(&mut self, vc: usize, t: i64) {
        loop {
            for s in schedule_vc(&mut self.queues[vc], &mut self.nodes[vc]) {
                self.start(s.job, s.placement, t);
            }
            if !self.policy.is_preemptive() || !self.try_preempt(vc, t) {
                break;
            }
        }
    }
}

/// Replays `jobs` on `cluster` under `policy`.
///
/// Only GPU jobs are replayed unless `options.include_cpu_jobs` is set. Each
/// job runs for its trace `duration`; under SRTF it may be split into several
/// run segments.
pub fn run_simulation(
    jobs: &[JobRecord],
    cluster: &ClusterSpec,
    policy: &mut Policy,
    options: &SimOptions,
) -> Result<SimResult> {
    cluster.validate()?;
    let replay: Vec<usize> = (0..jobs.len())
        .filter(|&i| options.include_cpu_jobs || jobs[i].is_gpu_job())
        .collect();
    let partition_time = options
        .partition_time
        .or_else(|| replay.iter().map(|&i| jobs[i].submit_time).min())
        .unwrap_or(0);
    let snapshot = cluster.snapshot(partition_time)?;

    let mut nodes = Vec::with_capacity(snapshot.len());
    let mut vc_index = HashMap::new();
    let mut vc_nodes = Vec::new();
    let mut next_id = 0u32;
    for (i, (vc, count)) in snapshot.iter().enumerate() {
        let list: Vec<SimNode> = (0..*count)
            .map(|k| SimNode::new(next_id + k, vc, cluster.gpus_per_node))
            .collect();
        next_id += count;
        vc_nodes.push((vc.clone(), list.iter().map(|n| n.node_id).collect()));
        nodes.push(list);
        vc_index.insert(vc.as_str(), i);
    }
    let total_gpus = u64::from(next_id) * u64::from(cluster.gpus_per_node);

    let mut by_id: Vec<usize> = replay.clone();
    by_id.sort_by(|&a, &b| jobs[a].job_id.cmp(&jobs[b].job_id));
    let mut rank_of = vec![0usize; jobs.len()];
    for (r, &i) in by_id.iter().enumerate() {
        rank_of[i] = r;
    }

    let mut unschedulable = Vec::new();
    let mut states = Vec::new();
    let mut heap = BinaryHeap::new();
    for &i in &replay {
        let j = &jobs[i];
        let vc = vc_index.get(j.vc.as_str()).copied();
        let capacity = vc.map_or(0, |v| {
            nodes[v].len() as u64 * u64::from(cluster.gpus_per_node)
        });
        let Some(vc) = vc.filter(|_| u64::from(j.gpu_num) <= capacity) else {
            unschedulable.push(j.job_id.clone());
            continue;
        };
        let s = states.len();
        states.push(JobState {
            record: i,
            vc,
            rank: rank_of[i],
            remaining: j.duration,
            service: 0,
            seg_start: 0,
            generation: 0,
            placement: Vec::new(),
            first_start: None,
            end: None,
            running: false,
            preemptions: 0,
            last_nodes: Vec::new(),
        });
        heap.push(Reverse(SimEvent {
            time: j.submit_time,
            kind: EventKind::JobSubmit,
            rank: rank_of[i],
            generation: 0,
            job: s,
        }));
    }
    let tick_period = options.tick_period.filter(|p| *p > 0);
    if let (Some(_), Some(Reverse(first))) = (tick_period, heap.peek()) {
        let time = first.time;
        heap.push(Reverse(SimEvent {
            time,
            kind: EventKind::PeriodicTick,
            rank: 0,
            generation: 0,
            job: usize::MAX,
        }));
    }

    let mut engine = Engine {
        jobs,
        policy,
        states,
        running: vec![BTreeSet::new(); nodes.len()],
        queues: snapshot.iter().map(|(vc, _)| VcQueue::new(vc)).collect(),
        nodes,
        heap,
        segments: Vec::new(),
    };
    let mut unfinished = engine.states.len();
    let mut ticks = Vec::new();

    while let Some(Reverse(first)) = engine.heap.pop() {
        let t = first.time;
        let mut batch = vec![first];
        while engine.heap.peek().is_some_and(|Reverse(e)| e.time == t) {
            batch.push(engine.heap.pop().unwrap().0);
        }
        let mut touched = BTreeSet::new();
        let mut tick = false;
        for ev in batch {
            match ev.kind {
                EventKind::JobEnd => {
                    let st = &engine.states[ev.job];
                    if !st.running || st.generation != ev.generation {
                        continue;
                    }
                    touched.insert(st.vc);
                    engine.finish(ev.job, t);
                    unfinished -= 1;
                }
                EventKind::JobSubmit => {
                    let st = &engine.states[ev.job];
                    let job = &jobs[st.record];
                    let vc = st.vc;
                    if job.gpu_num == 0 {
                        engine.start(ev.job, Vec::new(), t);
                        continue;
                    }
                    let key = QueueKey {
                        priority: engine.policy.submit_priority(job, t),
                        submit_time: job.submit_time,
                        tiebreak: st.rank,
                    };
                    engine.queues[vc].push(
                        key,
                        QueuedJob {
                            job: ev.job,
                            gpu_num: job.gpu_num,
                        },
                    );
                    touched.insert(vc);
                }
                EventKind::PeriodicTick => tick = true,
            }
        }
        for vc in touched {
            engine.schedule(vc, t);
        }
        if tick {
            let busy: u64 = engine
                .nodes
                .iter()
                .flatten()
                .map(|n| u64::from(n.total_gpus - n.free_gpus))
                .sum();
            ticks.push(TickSample {
                t,
                busy_gpus: busy,
                running_jobs: engine.running.iter().map(BTreeSet::len).sum(),
                pending_jobs: engine.queues.iter().map(VcQueue::len).sum(),
            });
            if let Some(period) = tick_period.filter(|_| unfinished > 0) {
                engine.heap.push(Reverse(SimEvent {
                    time: t + period,
                    kind: EventKind::PeriodicTick,
                    rank: 0,
                    generation: 0,
                    job: usize::MAX,
                }));
            }
        }
    }

    let outcomes = engine
        .states
        .iter()
        .map(|st| {
            let j = &jobs[st.record];
            JobOutcome {
                job_id: j.job_id.clone(),
                vc: j.vc.clone(),
                gpu_num: j.gpu_num,
                submit: j.submit_time,
                start: st.first_start.expect("every schedulable job starts"),
                end: st.end.expect("every schedulable job ends"),
                duration: j.duration,
                preemptions: st.preemptions,
                nodes: st.last_nodes.clone(),
            }
        })
        .collect();
    let kind = engine.policy.kind();
    Ok(SimResult {
        policy: kind,
        cluster: cluster.name.clone(),
        gpus_per_node: cluster.gpus_per_node,
        total_gpus,
        vc_nodes,
        jobs: outcomes,
        segments: engine.segments,
        unschedulable,
        ticks,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub jobs: usize,
    pub avg_jct: f64,
    pub avg_queuing: f64,
    pub avg_duration: f64,
    pub avg_suspended: f64,
    pub queued_job_count: usize,
    pub total_jct: i64,
    pub total_queuing: i64,
    pub total_duration: i64,
    /// `total_jct == total_queuing + total_suspended + total_duration`.
    pub total_suspended: i64,
}

impl GroupMetrics {
    fn from_jobs<'a>(jobs: impl Iterator<Item = &'a JobOutcome>, threshold: i64) -> Self {
        let mut m = Self::default();
        for j in jobs {
            m.jobs += 1;
            m.total_jct += j.jct();
            m.total_queuing += j.queuing();
            m.total_duration += j.duration;
            m.total_suspended += j.suspended();
            if j.queuing() > threshold {
                m.queued_job_count += 1;
            }
        }
        if m.jobs > 0 {
            let n = m.jobs as f64;
            m.avg_jct = m.total_jct as f64 / n;
            m.avg_queuing = m.total_queuing as f64 / n;
            m.avg_duration = m.total_duration as f64 / n;
            m.avg_suspended = m.total_suspended as f64 / n;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UtilizationSample {
    pub t: i64,
    pub busy_gpus: u64,
    pub total_gpus: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub policy: PolicyKind,
    pub queue_threshold: i64,
    pub cluster: GroupMetrics,
    pub per_vc: BTreeMap<String, GroupMetrics>,
    pub unschedulable: usize,
    #[serde(skip)]
    pub utilization: Vec<UtilizationSample>,
}

impl MetricsSummary {
    pub fn avg_jct(&self) -> f64 {
        self.cluster.avg_jct
    }
    pub fn avg_queuing(&self) -> f64 {
        self.cluster.avg_queuing
    }
    pub fn queued_job_count(&self) -> usize {
        self.cluster.queued_job_count
    }
}

/// Busy GPUs sampled at the start of every minute covered by the run.
pub fn utilization_timeline(result: &SimResult) -> Vec<UtilizationSample> {
    let (Some(lo), Some(hi)) = (
        result.segments.iter().map(|s| s.start).min(),
        result.segments.iter().map(|s| s.end).max(),
    ) else {
        return Vec::new();
    };
    let origin = lo - lo.rem_euclid(60);
    let len = ((hi - origin) / 60 + 1) as usize;
    let mut diff = vec![0i64; len + 1];
    for seg in &result.segments {
        let gpus: i64 = seg.placement.iter().map(|p| i64::from(p.1)).sum();
        // Samples t with start <= t < end.
        let first = (seg.start - origin + 59).div_euclid(60) as usize;
        let last = (seg.end - origin + 59).div_euclid(60) as usize;
        if first < last {
            diff[first] += gpus;
            diff[last.min(len)] -= gpus;
        }
    }
    let mut busy = 0i64;
    (0..len)
        .map(|k| {
            busy += diff[k];
            UtilizationSample {
                t: origin + 60 * k as i64,
                busy_gpus: busy as u64,
                total_gpus: result.total_gpus,
            }
        })
        .collect()
}

/// Aggregates a run. A job counts as queued when its wait exceeds `queue_threshold`.
pub fn compute_metrics(result: &SimResult, queue_threshold: i64) -> MetricsSummary {
    let mut per_vc: BTreeMap<String, Vec<&JobOutcome>> = BTreeMap::new();
    for j in &result.jobs {
        per_vc.entry(j.vc.clone()).or_default().push(j);
    }
    MetricsSummary {
        policy: result.policy,
        queue_threshold,
        cluster: GroupMetrics::from_jobs(result.jobs.iter(), queue_threshold),
        per_vc: per_vc
            .into_iter()
            .map(|(vc, js)| (vc, GroupMetrics::from_jobs(js.into_iter(), queue_threshold)))
            .collect(),
        unschedulable: result.unschedulable.len(),
        utilization: utilization_timeline(result),
    }
}

pub const SHORT_JOB_LIMIT: i64 = 15 * 60;
pub const LONG_JOB_LIMIT: i64 = 6 * 3600;

/// Metrics for short (< 15 min), middle and long (> 6 h) jobs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DurationGroups {
    pub short: GroupMetrics,
    pub middle: GroupMetrics,
    pub long: GroupMetrics,
}

pub fn duration_groups(result: &SimResult, queue_threshold: i64) -> DurationGroups {
    let pick = |f: &dyn Fn(i64) -> bool| {
        GroupMetrics::from_jobs(
            result.jobs.iter().filter(|j| f(j.duration)),
            queue_threshold,
        )
    };
    DurationGroups {
        short: pick(&|d| d < SHORT_JOB_LIMIT),
        middle: pick(&|d| (SHORT_JOB_LIMIT..=LONG_JOB_LIMIT).contains(&d)),
        long: pick(&|d| d > LONG_JOB_LIMIT),
    }
}

pub fn write_jobs_csv<W: Write>(result: &SimResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["job_id", "submit", "start", "end", "gpu_num", "vc"])?;
    for j in &result.jobs {
        w.write_record([
            j.job_id.as_str(),
            &j.submit.to_string(),
            &j.start.to_string(),
            &j.end.to_string(),
            &j.gpu_num.to_string(),
            j.vc.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_utilization_csv<W: Write>(samples: &[UtilizationSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "busy_gpus", "total_gpus"])?;
    for s in samples {
        w.write_record([
            s.t.to_string(),
            s.busy_gpus.to_string(),
            s.total_gpus.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{JobStatus, VcConfig};

    fn nodes(free: &[u32]) -> Vec<SimNode> {
        free.iter()
            .enumerate()
            .map(|(i, &f)| SimNode {
                node_id: i as u32,
                vc: "v".into(),
                total_gpus: 8,
                free_gpus: f,
            })
            .collect()
    }

    #[test]
    fn multi_node_job_takes_full_nodes() {
        assert_eq!(
            consolidate_allocate(16, &nodes(&[8, 8, 4])),
            Some(vec![(0, 8), (1, 8)])
        );
    }

    #[test]
    fn best_fit_single_node() {
        // Leftovers would be 2 -> none, 5 -> 1, 8 -> 4: node 1 is the tightest fit.
        assert_eq!(
            consolidate_allocate(4, &nodes(&[2, 5, 8])),
            Some(vec![(1, 4)])
        );
    }

    #[test]
    fn blocked_when_no_room() {
        assert_eq!(consolidate_allocate(1, &nodes(&[0, 0])), None);
        assert_eq!(consolidate_allocate(16, &nodes(&[8, 7, 7])), None);
        assert_eq!(consolidate_allocate(1, &[]), None);
    }

    #[test]
    fn remainder_goes_to_tightest_partial_node() {
        // 10 GPUs = one full node + 2 on the node with 3 free.
        assert_eq!(
            consolidate_allocate(10, &nodes(&[8, 3, 6, 8])),
            Some(vec![(0, 8), (1, 2)])
        );
        // Remainder may need a full node when no partial node fits.
        assert_eq!(
            consolidate_allocate(12, &nodes(&[8, 8, 2])),
            Some(vec![(0, 4), (1, 8)])
        );
    }

    fn qjob(job: usize, prio: f64, submit: i64, gpus: u32) -> (QueueKey, QueuedJob) {
        (
            QueueKey {
                priority: Priority::new(prio),
                submit_time: submit,
                tiebreak: job,
            },
            QueuedJob { job, gpu_num: gpus },
        )
    }

    #[test]
    fn head_of_line_blocking() {
        let mut q = VcQueue::new("v");
        for (k, j) in [qjob(0, 1.0, 0, 8), qjob(1, 2.0, 0, 1)] {
            q.push(k, j);
        }
        let mut ns = nodes(&[4]);
        assert!(schedule_vc(&mut q, &mut ns).is_empty());
        assert_eq!(q.len(), 2);
        assert_eq!(ns[0].free_gpus, 4);
    }

    #[test]
    fn all_fit_in_priority_order() {
        let mut q = VcQueue::new("v");
        for (k, j) in [qjob(0, 3.0, 0, 2), qjob(1, 1.0, 0, 2), qjob(2, 2.0, 0, 2)] {
            q.push(k, j);
        }
        let mut ns = nodes(&[8]);
        let started: Vec<usize> = schedule_vc(&mut q, &mut ns).iter().map(|s| s.job).collect();
        assert_eq!(started, vec![1, 2, 0]);
        assert_eq!(ns[0].free_gpus, 2);
    }

    #[test]
    fn equal_priority_earlier_submit_first() {
        let mut q = VcQueue::new("v");
        for (k, j) in [qjob(0, 5.0, 9, 8), qjob(1, 5.0, 3, 8)] {
            q.push(k, j);
        }
        let mut ns = nodes(&[8]);
        assert_eq!(schedule_vc(&mut q, &mut ns)[0].job, 1);
    }

    #[test]
    fn event_order() {
        let ev = |time, kind, rank| SimEvent {
            time,
            kind,
            rank,
            generation: 0,
            job: 0,
        };
        let mut v = [
            ev(5, EventKind::PeriodicTick, 0),
            ev(5, EventKind::JobSubmit, 1),
            ev(5, EventKind::JobEnd, 2),
            ev(5, EventKind::JobSubmit, 0),
            ev(4, EventKind::PeriodicTick, 0),
        ];
        v.sort();
        let kinds: Vec<_> = v.iter().map(|e| (e.time, e.kind, e.rank)).collect();
        assert_eq!(
            kinds,
            vec![
                (4, EventKind::PeriodicTick, 0),
                (5, EventKind::JobEnd, 2),
                (5, EventKind::JobSubmit, 0),
                (5, EventKind::JobSubmit, 1),
                (5, EventKind::PeriodicTick, 0),
            ]
        );
    }

    fn cluster(nodes: u32) -> ClusterSpec {
        ClusterSpec {
            name: "c".into(),
            nodes,
            gpus_per_node: 8,
            vcs: vec![VcConfig {
                vc: "v".into(),
                node_count: nodes,
                effective_from: 0,
            }],
        }
    }

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
    fn empty_trace() {
        let r =
            run_simulation(&[], &cluster(1), &mut Policy::Fifo, &SimOptions::default()).unwrap();
        assert!(r.jobs.is_empty());
        let m = compute_metrics(&r, 0);
        assert_eq!(m.cluster.jobs, 0);
        assert!(m.utilization.is_empty());
    }

    #[test]
    fn fifo_hand_trace_metrics() {
        let jobs = [job("A", 0, 100, 8), job("B", 0, 10, 8)];
        let r = run_simulation(
            &jobs,
            &cluster(1),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        let m = compute_metrics(&r, 0);
        assert_eq!(m.avg_jct(), 105.0);
        assert_eq!(m.avg_queuing(), 50.0);
        assert_eq!(m.queued_job_count(), 1);
        assert_eq!(m.per_vc["v"].jobs, 2);
    }

    #[test]
    fn no_wait_means_zero_queuing() {
        let jobs = [job("A", 0, 100, 4), job("B", 0, 10, 4)];
        let r = run_simulation(
            &jobs,
            &cluster(1),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        let m = compute_metrics(&r, 0);
        assert_eq!(m.avg_queuing(), 0.0);
        assert_eq!(m.queued_job_count(), 0);
    }

    #[test]
    fn unschedulable_jobs_are_reported() {
        let mut b = job("B", 0, 10, 1);
        b.vc = "missing".into();
        let jobs = [job("A", 0, 10, 16), b, job("C", 0, 10, 8)];
        let r = run_simulation(
            &jobs,
            &cluster(1),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(r.unschedulable, vec!["A".to_string(), "B".to_string()]);
        assert_eq!(r.jobs.len(), 1);
    }

    #[test]
    fn cpu_jobs_skipped_by_default() {
        let jobs = [job("A", 0, 10, 0), job("B", 0, 10, 1)];
        let r = run_simulation(
            &jobs,
            &cluster(1),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(r.jobs.len(), 1);
        let opts = SimOptions {
            include_cpu_jobs: true,
            ..Default::default()
        };
        let r = run_simulation(&jobs, &cluster(1), &mut Policy::Fifo, &opts).unwrap();
        assert_eq!(r.jobs.len(), 2);
        assert_eq!(r.jobs[0].queuing(), 0);
    }

    #[test]
    fn utilization_samples_per_minute() {
        let jobs = [job("A", 0, 3600, 8)];
        let r = run_simulation(
            &jobs,
            &cluster(2),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        let u = utilization_timeline(&r);
        assert_eq!(u.len(), 61);
        assert!(u[..60]
            .iter()
            .all(|s| s.busy_gpus == 8 && s.total_gpus == 16));
        assert_eq!(u[60].busy_gpus, 0);
    }

    #[test]
    fn ticks_sample_state() {
        let jobs = [job("A", 0, 100, 8), job("B", 0, 10, 8)];
        let opts = SimOptions {
            tick_period: Some(50),
            ..Default::default()
        };
        let r = run_simulation(&jobs, &cluster(1), &mut Policy::Fifo, &opts).unwrap();
        let t: Vec<_> = r
            .ticks
            .iter()
            .map(|s| (s.t, s.running_jobs, s.pending_jobs))
            .collect();
        assert_eq!(t, vec![(0, 1, 1), (50, 1, 1), (100, 1, 0), (150, 0, 0)]);
    }

    #[test]
    fn csv_exports() {
        let jobs = [job("A", 0, 100, 8)];
        let r = run_simulation(
            &jobs,
            &cluster(1),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        let mut out = Vec::new();
        write_jobs_csv(&r, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "job_id,submit,start,end,gpu_num,vc\nA,0,0,100,8,v\n"
        );
        let mut out = Vec::new();
        write_utilization_csv(&compute_metrics(&r, 0).utilization[..1], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "t,busy_gpus,total_gpus\n0,8,8\n"
        );
    }

    #[test]
    fn duration_group_bounds() {
        let jobs = [
            job("A", 0, 60, 1),
            job("B", 0, 3600, 1),
            job("C", 0, 30_000, 1),
        ];
        let r = run_simulation(
            &jobs,
            &cluster(1),
            &mut Policy::Fifo,
            &SimOptions::default(),
        )
        .unwrap();
        let g = duration_groups(&r, 0);
        assert_eq!((g.short.jobs, g.middle.jobs, g.long.jobs), (1, 1, 1));
    }
}
