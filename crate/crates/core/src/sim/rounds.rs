//! Synchronous federated rounds with a quorum, run over the simulated links.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::transfers::{ordered, Job, TransferPurpose};
use super::{fmt_f, record, Running, SimError, SimEvent, SimState};
use crate::actors::{Activity, Actor, Admission};
use crate::fedlearn::{dequantize, fedavg, local_train, quantize, Quantized, RoundPlan, SyntheticTask, WireFormat};
use crate::kernel::{ActorId, Epoch, EventKind, EventRecord, Scheduler};
use crate::links::{LinkSpec, Transfer};
use crate::{ClientDataset, ParamVector};

/// Default cap on transmissions of one payload within a round.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct FlConfig {
    pub plan: RoundPlan,
    pub task: SyntheticTask,
    pub wire: WireFormat,
    /// Training activity template; its name is used in the activity log.
    pub training: Activity,
    /// Rounds started automatically, back to back; 0 leaves rounds to
    /// [`super::Simulation::run_round`].
    pub rounds: u32,
    /// Time of the first automatic round, s.
    pub start: f64,
    /// Horizon after which a round gives up, s.
    pub round_timeout: f64,
    pub max_attempts: u32,
    /// Starting global model; zeros when absent.
    pub initial: Option<ParamVector>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientStatus {
    AwaitingModel,
    Training,
    Uploading,
    /// Update delivered and used.
    Aggregated,
    Refused,
    Aborted,
    Failed,
    /// Still in progress when quorum closed the round.
    Excluded,
    TimedOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub actor_id: ActorId,
    /// Ground-to-spacecraft model bytes.
    pub bytes_up: u64,
    /// Spacecraft-to-ground update bytes.
    pub bytes_down: u64,
    #[serde(rename = "train_energy_J")]
    pub train_energy_j: f64,
    /// From round start to delivery of the update.
    pub latency_s: Option<f64>,
    pub status: ClientStatus,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_id: u32,
    pub status: RoundStatus,
    pub started_s: f64,
    pub ended_s: f64,
    pub clients: Vec<ClientReport>,
    pub refusals: u32,
    /// Corruption faults that hit this round's payload buffers.
    pub corruptions: u32,
    /// Payloads re-queued after failing validation.
    pub retransmissions: u32,
    pub saturations: u32,
    /// The encoded global model counted once if any uplink moved, plus every
    /// update byte sent down.
    pub wire_bytes: u64,
    /// Bytes moved over all links, each unicast uplink counted separately.
    pub link_bytes: u64,
    pub global_checksum: String,
    pub global_model: Vec<f64>,
}

#[derive(Clone, Debug)]
struct ClientProgress {
    bytes_up: u64,
    bytes_down: u64,
    energy: f64,
    status: ClientStatus,
    reason: Option<String>,
    latency: Option<f64>,
    uplink_attempts: u32,
    downlink_attempts: u32,
    /// Clean encoded update, kept for retransmission.
    update: Option<Quantized>,
}

#[derive(Clone, Debug)]
struct ActiveRound {
    id: u32,
    started: f64,
    /// Clean encoded global model, kept for retransmission.
    model: Quantized,
    clients: BTreeMap<ActorId, ClientProgress>,
    updates: BTreeMap<ActorId, (ParamVector, u64)>,
    refusals: u32,
    corruptions: u32,
    retransmissions: u32,
    saturations: u32,
}

pub(super) struct FlRuntime {
    cfg: FlConfig,
    datasets: BTreeMap<ActorId, ClientDataset>,
    links: BTreeMap<ActorId, LinkSpec>,
    global: ParamVector,
    round: Option<ActiveRound>,
    next_round: u32,
    auto_remaining: u32,
    reports: Vec<RoundReport>,
}

impl FlRuntime {
    pub(super) fn new(
        cfg: FlConfig,
        actors: &BTreeMap<ActorId, Actor>,
        pair_links: &BTreeMap<(ActorId, ActorId), LinkSpec>,
    ) -> Result<Self, SimError> {
        let err = |m: String| SimError::Config(format!("federated: {m}"));
        cfg.plan.validate().map_err(err)?;
        let server = cfg.plan.server;
        match actors.get(&server) {
            Some(a) if !a.is_spacecraft() => {}
            Some(_) => return Err(err(format!("server {server} must be a ground station"))),
            None => return Err(err(format!("server {server} is not a declared actor"))),
        }
        let mut links = BTreeMap::new();
        for &c in &cfg.plan.clients {
            match actors.get(&c) {
                Some(a) if a.is_spacecraft() => {}
                _ => return Err(err(format!("client {c} must be a declared spacecraft"))),
            }
            let link = pair_links
                .get(&ordered(server, c))
                .ok_or_else(|| err(format!("client {c} has no space-to-ground link")))?;
            links.insert(c, link.clone());
        }
        if !(cfg.round_timeout > 0.0 && cfg.round_timeout.is_finite()) {
            return Err(err("round timeout must be positive".into()));
        }
        if !(cfg.start >= 0.0 && cfg.start.is_finite()) {
            return Err(err("start must be >= 0".into()));
        }
        if cfg.max_attempts == 0 {
            return Err(err("max_attempts must be >= 1".into()));
        }
        let splits = cfg
            .task
            .client_splits(cfg.plan.clients.len())
            .map_err(|e| err(e.to_string()))?;
        let datasets = cfg.plan.clients.iter().copied().zip(splits).collect();
        let global = match &cfg.initial {
            Some(w) if w.dim() == cfg.task.dim => w.clone(),
            Some(w) => return Err(err(format!("initial model has dim {}, task dim is {}", w.dim(), cfg.task.dim))),
            None => ParamVector::zeros(cfg.task.dim),
        };
        Ok(Self {
            auto_remaining: cfg.rounds,
            cfg,
            datasets,
            links,
            global,
            round: None,
            next_round: 1,
            reports: Vec::new(),
        })
    }

    pub(super) fn auto_rounds(&self) -> u32 {
        self.cfg.rounds
    }

    pub(super) fn start_time(&self) -> f64 {
        self.cfg.start
    }

    pub(super) fn server(&self) -> ActorId {
        self.cfg.plan.server
    }

    pub(super) fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub(super) fn global(&self) -> &ParamVector {
        &self.global
    }

    pub(super) fn round_active(&self) -> bool {
        self.round.is_some()
    }

    fn active(&mut self, round: u32) -> Option<&mut ActiveRound> {
        self.round.as_mut().filter(|r| r.id == round)
    }
}

fn round_event(now: f64, server: ActorId, round: u32, phase: &str) -> EventRecord {
    record(now, server, EventKind::RoundEvent)
        .with("round", round)
        .with("phase", phase)
}

fn saturation(now: f64, actor: ActorId, round: u32, count: usize) -> EventRecord {
    record(now, actor, EventKind::Saturation)
        .with("round", round)
        .with("values", count)
}

impl SimState {
    pub(super) fn fl_start_round(
        &mut self,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        let Some(fl) = self.fl.as_mut() else { return Ok(()) };
        if fl.round.is_some() {
            return Ok(());
        }
        fl.auto_remaining = fl.auto_remaining.saturating_sub(1);
        let id = fl.next_round;
        fl.next_round += 1;
        let server = fl.cfg.plan.server;
        let model = quantize(&fl.global, id, fl.cfg.wire);
        out.push(round_event(now, server, id, "start").with("clients", fl.cfg.plan.clients.len()));
        if model.saturated > 0 {
            out.push(saturation(now, server, id, model.saturated));
        }
        let mut clients = BTreeMap::new();
        for &c in &fl.cfg.plan.clients {
            let tr = Transfer::new(server, c, model.payload.byte_size() as u64, fl.links[&c].clone());
            self.ledger.enqueue(
                tr,
                Some(model.payload.clone()),
                TransferPurpose::ModelUplink {
                    round: id,
                    client: c,
                    attempt: 1,
                },
                None,
            );
            clients.insert(
                c,
                ClientProgress {
                    bytes_up: 0,
                    bytes_down: 0,
                    energy: 0.0,
                    status: ClientStatus::AwaitingModel,
                    reason: None,
                    latency: None,
                    uplink_attempts: 1,
                    downlink_attempts: 0,
                    update: None,
                },
            );
        }
        fl.round = Some(ActiveRound {
            id,
            started: now,
            saturations: (model.saturated > 0) as u32,
            model,
            clients,
            updates: BTreeMap::new(),
            refusals: 0,
            corruptions: 0,
            retransmissions: 0,
        });
        sched.schedule(
            Epoch::new(now + fl.cfg.round_timeout).expect("finite"),
            server,
            SimEvent::RoundTimeout { round: id },
        )?;
        self.dispatch(now, sched)?;
        Ok(())
    }

    pub(super) fn fl_progress(&mut self, purpose: &TransferPurpose, delta: u64) {
        let Some(fl) = self.fl.as_mut() else { return };
        match *purpose {
            TransferPurpose::ModelUplink { round, client, .. } => {
                if let Some(c) = fl.active(round).and_then(|r| r.clients.get_mut(&client)) {
                    c.bytes_up += delta;
                }
            }
            TransferPurpose::ModelDownlink { round, client, .. } => {
                if let Some(c) = fl.active(round).and_then(|r| r.clients.get_mut(&client)) {
                    c.bytes_down += delta;
                }
            }
            TransferPurpose::Data { .. } => {}
        }
    }

    pub(super) fn fl_corruption(&mut self, round: u32) {
        if let Some(r) = self.fl.as_mut().and_then(|f| f.active(round)) {
            r.corruptions += 1;
        }
    }

    /// Re-queues a payload that failed validation, or gives up on the client.
    fn fl_retry(&mut self, job: &Job, now: f64, out: &mut Vec<EventRecord>) {
        let fl = self.fl.as_mut().expect("round payloads imply a plan");
        let max = fl.cfg.max_attempts;
        let server = fl.cfg.plan.server;
        let pair_index = self.views.get(&job.pair()).map(|v| v.index);
        let Some(round) = fl.round.as_mut() else { return };
        let (client, uplink) = match job.purpose {
            TransferPurpose::ModelUplink { client, .. } => (client, true),
            TransferPurpose::ModelDownlink { client, .. } => (client, false),
            TransferPurpose::Data { .. } => return,
        };
        let c = round.clients.get_mut(&client).expect("round client");
        let attempts = if uplink { &mut c.uplink_attempts } else { &mut c.downlink_attempts };
        if *attempts >= max {
            c.status = ClientStatus::Failed;
            c.reason = Some("payload_corrupted".into());
            out.push(round_event(now, server, round.id, "client_failed").with("client", client));
            return;
        }
        *attempts += 1;
        let attempt = *attempts;
        let payload = if uplink {
            round.model.payload.clone()
        } else {
            c.update.as_ref().expect("update kept").payload.clone()
        };
        round.retransmissions += 1;
        let purpose = if uplink {
            TransferPurpose::ModelUplink {
                round: round.id,
                client,
                attempt,
            }
        } else {
            TransferPurpose::ModelDownlink {
                round: round.id,
                client,
                attempt,
            }
        };
        out.push(
            round_event(now, server, round.id, "retransmit")
                .with("client", client)
                .with("attempt", attempt)
                .with("transfer", purpose.label()),
        );
        let mut tr = job.transfer.clone();
        tr.sent_bytes = 0;
        // next window at the earliest
        self.ledger.enqueue(tr, Some(payload), purpose, pair_index);
    }

    pub(super) fn fl_delivered(
        &mut self,
        job: Job,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        let (round_id, client, uplink) = match job.purpose {
            TransferPurpose::ModelUplink { round, client, .. } => (round, client, true),
            TransferPurpose::ModelDownlink { round, client, .. } => (round, client, false),
            TransferPurpose::Data { .. } => return Ok(()),
        };
        let Some(fl) = self.fl.as_mut() else { return Ok(()) };
        if fl.active(round_id).is_none() {
            return Ok(());
        }
        let payload = job.payload.clone().expect("model transfers carry payloads");
        let valid = match dequantize::<f64>(&payload) {
            Ok((w, r)) if r == round_id && w.dim() == fl.cfg.task.dim => Some(w),
            _ => None,
        };
        let Some(w) = valid else {
            self.fl_retry(&job, now, out);
            return Ok(());
        };
        if uplink {
            let training = fl.cfg.training.clone();
            self.crafts.get_mut(&client).expect("client craft").buffer = Some(payload);
            let decision = self.start_activity(client, &training, Some(round_id), now, sched, out)?;
            let fl = self.fl.as_mut().expect("plan");
            let round = fl.active(round_id).expect("active");
            let c = round.clients.get_mut(&client).expect("round client");
            match decision {
                Admission::Accepted => c.status = ClientStatus::Training,
                Admission::Refused(reason) => {
                    c.status = ClientStatus::Refused;
                    c.reason = Some(reason.as_str().into());
                    round.refusals += 1;
                    self.crafts.get_mut(&client).expect("client craft").buffer = None;
                }
            }
            return Ok(());
        }
        let n_k = fl.datasets[&client].len() as u64;
        let quorum = fl.cfg.plan.quorum;
        let round = fl.active(round_id).expect("active");
        let c = round.clients.get_mut(&client).expect("round client");
        c.latency = Some(now - round.started);
        c.status = ClientStatus::Aggregated;
        round.updates.insert(client, (w, n_k));
        if round.updates.len() >= quorum {
            self.fl_finish(round_id, now, false, sched, out)?;
        }
        Ok(())
    }

    pub(super) fn fl_training_done(
        &mut self,
        actor: ActorId,
        r: &Running,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        let Some(round_id) = r.training else { return Ok(()) };
        let buffer = self.crafts.get_mut(&actor).and_then(|c| c.buffer.take());
        let Some(fl) = self.fl.as_mut() else { return Ok(()) };
        let server = fl.cfg.plan.server;
        let (steps, lr, l2, wire) = (
            fl.cfg.plan.local_steps,
            fl.cfg.plan.learning_rate,
            fl.cfg.plan.l2,
            fl.cfg.wire,
        );
        let data = &fl.datasets[&actor];
        let Some(round) = fl.round.as_mut().filter(|x| x.id == round_id) else {
            return Ok(());
        };
        let c = round.clients.get_mut(&actor).expect("round client");
        c.energy += r.power * (now - r.started);
        let model = buffer.as_ref().map(dequantize::<f64>);
        let w = match model {
            Some(Ok((w, rid))) if rid == round_id && w.dim() == data.dim() => w,
            _ => {
                c.status = ClientStatus::Failed;
                c.reason = Some("model_buffer_corrupted".into());
                out.push(round_event(now, server, round_id, "client_failed").with("client", actor));
                return Ok(());
            }
        };
        let update = local_train(&w, data, steps, lr, l2).map_err(|source| SimError::Divergence {
            actor,
            round: round_id,
            source,
        })?;
        let q = quantize(&update, round_id, wire);
        if q.saturated > 0 {
            round.saturations += 1;
            out.push(saturation(now, actor, round_id, q.saturated));
        }
        c.status = ClientStatus::Uploading;
        c.downlink_attempts = 1;
        let tr = Transfer::new(actor, server, q.payload.byte_size() as u64, fl.links[&actor].clone());
        let payload = q.payload.clone();
        c.update = Some(q);
        self.ledger.enqueue(
            tr,
            Some(payload),
            TransferPurpose::ModelDownlink {
                round: round_id,
                client: actor,
                attempt: 1,
            },
            None,
        );
        self.dispatch(now, sched)?;
        Ok(())
    }

    pub(super) fn fl_training_stopped(&mut self, actor: ActorId, r: &Running, now: f64, reason: Option<&str>) {
        let Some(round_id) = r.training else { return };
        if let Some(c) = self.crafts.get_mut(&actor) {
            c.buffer = None;
        }
        let Some(round) = self.fl.as_mut().and_then(|f| f.active(round_id)) else {
            return;
        };
        let c = round.clients.get_mut(&actor).expect("round client");
        c.energy += r.power * (now - r.started);
        c.status = ClientStatus::Aborted;
        c.reason = reason.map(str::to_string);
    }

    pub(super) fn fl_timeout(
        &mut self,
        round: u32,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        if self.fl.as_mut().and_then(|f| f.active(round)).is_some() {
            self.fl_finish(round, now, true, sched, out)?;
        }
        Ok(())
    }

    /// Closes the round: aggregates on quorum, cancels leftover work, reports.
    fn fl_finish(
        &mut self,
        round_id: u32,
        now: f64,
        timed_out: bool,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        // stop leftover transfers, crediting partial bytes
        for p in self.ledger.cancel_where(now, |j| j.purpose.round() == Some(round_id)) {
            self.fl_progress(&p.job.purpose, p.delta);
        }
        let training: Vec<ActorId> = self
            .crafts
            .iter()
            .filter(|(_, c)| c.running.as_ref().is_some_and(|r| r.training == Some(round_id)))
            .map(|(&id, _)| id)
            .collect();
        let reason = if timed_out { "round_timeout" } else { "round_closed" };
        for id in training {
            self.abort_running(id, reason, now, out);
        }
        let fl = self.fl.as_mut().expect("plan");
        let server = fl.cfg.plan.server;
        let mut round = fl.round.take().expect("active round");
        let status = if timed_out {
            RoundStatus::Timeout
        } else {
            let updates: Vec<(ParamVector, u64)> = round.updates.values().cloned().collect();
            fl.global = fedavg(&updates).map_err(|e| SimError::Config(e.to_string()))?;
            RoundStatus::Completed
        };
        for c in round.clients.values_mut() {
            if matches!(
                c.status,
                ClientStatus::AwaitingModel | ClientStatus::Training | ClientStatus::Uploading
            ) || (c.status == ClientStatus::Aborted && c.reason.as_deref() == Some(reason))
            {
                c.status = if timed_out { ClientStatus::TimedOut } else { ClientStatus::Excluded };
                c.reason = None;
            }
        }
        let clients: Vec<ClientReport> = round
            .clients
            .iter()
            .map(|(&id, c)| ClientReport {
                actor_id: id,
                bytes_up: c.bytes_up,
                bytes_down: c.bytes_down,
                train_energy_j: c.energy,
                latency_s: c.latency,
                status: c.status,
                reason: c.reason.clone(),
            })
            .collect();
        let checksum = fl.global.checksum();
        let report = RoundReport {
            round_id,
            status,
            started_s: round.started,
            ended_s: now,
            wire_bytes: if clients.iter().any(|c| c.bytes_up > 0) {
                round.model.payload.byte_size() as u64
            } else {
                0
            } + clients.iter().map(|c| c.bytes_down).sum::<u64>(),
            link_bytes: clients.iter().map(|c| c.bytes_up + c.bytes_down).sum(),
            clients,
            refusals: round.refusals,
            corruptions: round.corruptions,
            retransmissions: round.retransmissions,
            saturations: round.saturations,
            global_checksum: checksum.clone(),
            global_model: fl.global.values().to_vec(),
        };
        out.push(
            round_event(now, server, round_id, if timed_out { "timeout" } else { "aggregate" })
                .with("updates", round.updates.len())
                .with("checksum", checksum)
                .with("elapsed_s", fmt_f(now - round.started)),
        );
        fl.reports.push(report);
        if fl.auto_remaining > 0 {
            sched.schedule(Epoch::new(now).expect("finite"), server, SimEvent::RoundStart)?;
        }
        Ok(())
    }
}
