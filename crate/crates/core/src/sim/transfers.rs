//! Queued link transfers: FIFO per request order, half-duplex actors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::fedlearn::QuantizedPayload;
use crate::kernel::ActorId;
use crate::links::{bytes_in, Transfer};

/// What a transfer carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferPurpose {
    /// Opaque scenario data.
    Data { name: String },
    /// Global model, ground to spacecraft.
    ModelUplink { round: u32, client: ActorId, attempt: u32 },
    /// Client update, spacecraft to ground.
    ModelDownlink { round: u32, client: ActorId, attempt: u32 },
}

impl TransferPurpose {
    pub fn label(&self) -> String {
        match self {
            TransferPurpose::Data { name } => name.clone(),
            TransferPurpose::ModelUplink { .. } => "model_uplink".into(),
            TransferPurpose::ModelDownlink { .. } => "model_downlink".into(),
        }
    }

    pub fn round(&self) -> Option<u32> {
        match self {
            TransferPurpose::Data { .. } => None,
            TransferPurpose::ModelUplink { round, .. } | TransferPurpose::ModelDownlink { round, .. } => Some(*round),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    since: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Job {
    pub id: u64,
    pub transfer: Transfer,
    pub payload: Option<QuantizedPayload>,
    pub purpose: TransferPurpose,
    /// Only eligible in a window whose index is above this one.
    pub after_window: Option<u64>,
    segment: Option<Segment>,
    generation: u64,
}

impl Job {
    pub fn pair(&self) -> (ActorId, ActorId) {
        ordered(self.transfer.src, self.transfer.dst)
    }

    pub fn involves(&self, actor: ActorId) -> bool {
        self.transfer.src == actor || self.transfer.dst == actor
    }

    /// Bytes moved by `now` if the current segment continued until then.
    fn sent_at(&self, now: f64) -> u64 {
        match self.segment {
            Some(seg) => {
                let moved = bytes_in(self.transfer.link.bitrate, now - seg.since);
                self.transfer.sent_bytes.saturating_add(moved).min(self.transfer.total_bytes)
            }
            None => self.transfer.sent_bytes,
        }
    }
}

pub(crate) fn ordered(a: ActorId, b: ActorId) -> (ActorId, ActorId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A transfer that has just started or resumed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Started {
    pub job: u64,
    pub dst: ActorId,
    pub completes_at: f64,
    pub generation: u64,
}

/// Progress made by a job when its segment ended.
#[derive(Debug)]
pub(crate) struct Progress {
    pub job: Job,
    pub delta: u64,
}

#[derive(Debug, Default)]
pub(crate) struct TransferLedger {
    jobs: BTreeMap<u64, Job>,
    next_id: u64,
    busy: BTreeSet<ActorId>,
}

impl TransferLedger {
    pub fn enqueue(
        &mut self,
        transfer: Transfer,
        payload: Option<QuantizedPayload>,
        purpose: TransferPurpose,
        after_window: Option<u64>,
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.jobs.insert(
            id,
            Job {
                id,
                transfer,
                payload,
                purpose,
                after_window,
                segment: None,
                generation: 0,
            },
        );
        id
    }

    pub fn pending_for(&self, actor: ActorId) -> usize {
        self.jobs.values().filter(|j| j.involves(actor)).count()
    }

    /// Starts every queued job, in request order, whose endpoints are both
    /// idle and whose pair is in view. `window` returns the index of the open
    /// window for a pair, if any.
    pub fn dispatch(&mut self, now: f64, window: impl Fn((ActorId, ActorId)) -> Option<u64>) -> Vec<Started> {
        let mut started = Vec::new();
        for job in self.jobs.values_mut() {
            if job.segment.is_some() {
                continue;
            }
            let (src, dst) = (job.transfer.src, job.transfer.dst);
            if self.busy.contains(&src) || self.busy.contains(&dst) {
                continue;
            }
            let Some(index) = window(job.pair()) else {
                continue;
            };
            if job.after_window.is_some_and(|g| index <= g) {
                continue;
            }
            job.segment = Some(Segment { since: now });
            job.generation += 1;
            self.busy.insert(src);
            self.busy.insert(dst);
            started.push(Started {
                job: job.id,
                dst,
                completes_at: now + job.transfer.time_to_complete(),
                generation: job.generation,
            });
        }
        started
    }

    fn end_segment(&mut self, id: u64, now: f64) -> u64 {
        let job = self.jobs.get_mut(&id).expect("job exists");
        let sent = job.sent_at(now);
        let delta = sent - job.transfer.sent_bytes;
        job.transfer.sent_bytes = sent;
        if job.segment.take().is_some() {
            self.busy.remove(&job.transfer.src);
            self.busy.remove(&job.transfer.dst);
        }
        delta
    }

    /// Stops active jobs on `pair`. Jobs that had finished are removed and
    /// returned in the second list.
    pub fn pause_pair(&mut self, pair: (ActorId, ActorId), now: f64) -> (Vec<(TransferPurpose, u64)>, Vec<Progress>) {
        let active: Vec<u64> = self
            .jobs
            .values()
            .filter(|j| j.segment.is_some() && j.pair() == pair)
            .map(|j| j.id)
            .collect();
        let mut paused = Vec::new();
        let mut done = Vec::new();
        for id in active {
            let delta = self.end_segment(id, now);
            if self.jobs[&id].transfer.is_complete() {
                let job = self.jobs.remove(&id).expect("job exists");
                done.push(Progress { job, delta });
            } else {
                paused.push((self.jobs[&id].purpose.clone(), delta));
            }
        }
        (paused, done)
    }

    /// Finishes a job whose completion event fired; stale generations are ignored.
    pub fn complete(&mut self, id: u64, generation: u64, now: f64) -> Option<Progress> {
        let job = self.jobs.get(&id)?;
        if job.generation != generation || job.segment.is_none() {
            return None;
        }
        let before = job.transfer.sent_bytes;
        self.end_segment(id, now);
        let mut job = self.jobs.remove(&id).expect("job exists");
        // completion time is exact by construction
        job.transfer.sent_bytes = job.transfer.total_bytes;
        Some(Progress {
            delta: job.transfer.total_bytes - before,
            job,
        })
    }

    /// Removes every job matching `pred`, crediting partial progress.
    pub fn cancel_where(&mut self, now: f64, pred: impl Fn(&Job) -> bool) -> Vec<Progress> {
        let ids: Vec<u64> = self.jobs.values().filter(|j| pred(j)).map(|j| j.id).collect();
        ids.into_iter()
            .map(|id| {
                let delta = self.end_segment(id, now);
                Progress {
                    job: self.jobs.remove(&id).expect("job exists"),
                    delta,
                }
            })
            .collect()
    }

    /// Earliest queued job sent by `actor` that carries a payload buffer.
    pub fn payload_job_mut(&mut self, actor: ActorId) -> Option<&mut Job> {
        self.jobs.values_mut().find(|j| j.transfer.src == actor && j.payload.is_some())
    }
}
