//! Event-driven constellation simulation.
//!
//! [`Simulation`] couples the kernel with per-spacecraft power and thermal
//! integration, visibility and eclipse tracking, radiation faults, link
//! transfers and federated rounds.
//!
//! Continuous state is committed at multiples of the integration step, at
//! event times and at blackouts; advancing to any other time only produces a
//! tentative view. Geometry and faults are precomputed per fixed block of time
//! aligned to the scenario start. Together this makes results independent of
//! how a horizon is split across `advance_to` calls.

mod rounds;
mod transfers;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::actors::{
    admit, grid_cell, project_min_charge, Activity, ActivityStatus, Actor, ActorError, ActorKind, ActorSnapshot,
    Admission, AdmissionInput, Spacecraft,
};
use crate::astrodynamics::{elements_to_cartesian, illumination};
use crate::fedlearn::{FedError, QuantizedPayload};
use crate::kernel::{ActorId, Epoch, EventKind, EventRecord, Kernel, KernelError, Scheduler, World};
use crate::links::{elevation, find_intervals, find_windows, isl_visible, LinkKind, LinkSpec, Transfer, Window};
use crate::resources::{
    integrate_power, integrate_thermal, sample_faults, thermal_crossing, Fault, FaultKind, FaultStreams,
    ThermalViolation,
};
use crate::{BatteryState, CentralBody, KeplerianElements, ParamVector, SunModel, ThermalNode, Vec3};

pub use rounds::{ClientReport, ClientStatus, FlConfig, RoundReport, RoundStatus, DEFAULT_MAX_ATTEMPTS};
pub use transfers::TransferPurpose;

use transfers::{ordered, Progress, TransferLedger};

/// Default geometry/fault block, s.
pub const DEFAULT_BLOCK_S: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error("training diverged on actor {actor} in round {round}: {source}")]
    Divergence {
        actor: ActorId,
        round: u32,
        source: FedError,
    },
    #[error("no federated plan configured")]
    NoFederatedPlan,
    #[error("time {0} s is outside the simulated range")]
    Time(f64),
}

/// Activity requested at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledActivity {
    pub actor: ActorId,
    pub start: f64,
    pub activity: Activity,
}

/// Opaque data queued for transfer at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTransfer {
    pub name: String,
    pub src: ActorId,
    pub dst: ActorId,
    pub bytes: u64,
    pub start: f64,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub seed: u64,
    pub body: CentralBody,
    /// Body spin about +z, rad/s.
    pub rotation_rate: f64,
    pub sun: SunModel,
    /// Resource integration step, s.
    pub step: f64,
    /// Visibility sampling step, s.
    pub coarse_step: f64,
    /// Geometry and fault precomputation block, s.
    pub block: f64,
    /// Telemetry row spacing, s; a multiple of `step`.
    pub telemetry_cadence: f64,
    pub actors: Vec<Actor>,
    pub activities: Vec<ScheduledActivity>,
    pub transfers: Vec<DataTransfer>,
    pub federated: Option<FlConfig>,
}

impl SimConfig {
    pub fn new(seed: u64, actors: Vec<Actor>) -> Self {
        Self {
            seed,
            body: CentralBody::earth(),
            rotation_rate: crate::links::EARTH_ROTATION_RATE,
            sun: SunModel::default(),
            step: 1.0,
            coarse_step: crate::links::DEFAULT_COARSE_STEP,
            block: DEFAULT_BLOCK_S,
            telemetry_cadence: 60.0,
            actors,
            activities: Vec::new(),
            transfers: Vec::new(),
            federated: None,
        }
    }
}

/// One resource telemetry sample.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TelemetryRow {
    pub time: f64,
    #[serde(rename = "charge_J")]
    pub charge_j: f64,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub illuminated: bool,
}

pub const TELEMETRY_CSV_HEADER: [&str; 4] = ["time", "charge_J", "temperature_K", "illuminated"];

#[derive(Clone, Copy, Debug)]
struct Geometry {
    body: CentralBody,
    sun: SunModel,
    rotation: f64,
}

impl Geometry {
    fn sat_position(&self, orbit: &KeplerianElements, t: f64) -> Vec3 {
        elements_to_cartesian(orbit, &self.body, t).expect("orbit validated").r
    }

    fn nu(&self, orbit: &KeplerianElements, t: f64) -> f64 {
        illumination(self.sat_position(orbit, t), self.sun.direction(t), &self.body)
    }

    fn position(&self, kind: &ActorKind, t: f64) -> Vec3 {
        match kind {
            ActorKind::Spacecraft(s) => self.sat_position(&s.orbit, t),
            ActorKind::GroundStation(g) => g.position(&self.body, self.rotation, t),
        }
    }

    fn visible(&self, a: &ActorKind, b: &ActorKind, margin: f64, t: f64) -> bool {
        match (a, b) {
            (ActorKind::Spacecraft(s), ActorKind::GroundStation(g))
            | (ActorKind::GroundStation(g), ActorKind::Spacecraft(s)) => {
                elevation(self.sat_position(&s.orbit, t), g, &self.body, self.rotation, t) >= g.min_elevation
            }
            (ActorKind::Spacecraft(s1), ActorKind::Spacecraft(s2)) => isl_visible(
                self.sat_position(&s1.orbit, t),
                self.sat_position(&s2.orbit, t),
                &self.body,
                margin,
            ),
            (ActorKind::GroundStation(_), ActorKind::GroundStation(_)) => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ResourceState {
    t: f64,
    battery: BatteryState,
    thermal: ThermalNode,
}

#[derive(Clone, Debug)]
struct Running {
    token: u64,
    name: String,
    started: f64,
    power: f64,
    heat: f64,
    /// Federated round this activity trains for.
    training: Option<u32>,
}

#[derive(Clone, Debug)]
struct Craft {
    spec: Spacecraft,
    committed: ResourceState,
    view: ResourceState,
    running: Option<Running>,
    failed: bool,
    faults: FaultStreams,
    telemetry: Vec<TelemetryRow>,
    /// Model held in memory between reception and training.
    buffer: Option<QuantizedPayload>,
}

impl Craft {
    fn loads(&self) -> (f64, f64) {
        match &self.running {
            Some(r) => (self.spec.idle_load + r.power, r.heat),
            None => (self.spec.idle_load, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum TrackKey {
    Pair(ActorId, ActorId),
    Sunlight(ActorId),
}

#[derive(Clone, Copy, Debug, Default)]
struct PairView {
    open_since: Option<f64>,
    /// Count of windows opened so far.
    index: u64,
}

#[derive(Clone, Debug)]
enum SimEvent {
    ComputeBlock(u64),
    Window { pair: (ActorId, ActorId), open: bool },
    Eclipse { enter: bool },
    Fault(Fault),
    StartActivity(usize),
    StartTransfer(usize),
    ActivityEnd { token: u64 },
    TransferComplete { job: u64, generation: u64 },
    RoundStart,
    RoundTimeout { round: u32 },
    External(EventRecord),
}

struct SimState {
    geo: Geometry,
    step: f64,
    coarse_step: f64,
    block: f64,
    cadence_steps: u64,
    actors: BTreeMap<ActorId, Actor>,
    crafts: BTreeMap<ActorId, Craft>,
    pair_links: BTreeMap<(ActorId, ActorId), LinkSpec>,
    /// Per tracker: whether the last computed interval ran to the block end.
    trackers: BTreeMap<TrackKey, bool>,
    views: BTreeMap<(ActorId, ActorId), PairView>,
    windows: Vec<Window>,
    activities: Vec<ScheduledActivity>,
    data_transfers: Vec<DataTransfer>,
    ledger: TransferLedger,
    fl: Option<rounds::FlRuntime>,
    next_token: u64,
    fatal: Option<SimError>,
}

fn record(t: f64, actor: ActorId, kind: EventKind) -> EventRecord {
    EventRecord::new(Epoch::new(t).expect("simulation times are finite and non-negative"), actor, kind)
}

fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

impl SimState {
    fn pair_window_index(&self, pair: (ActorId, ActorId)) -> Option<u64> {
        self.views.get(&pair).filter(|v| v.open_since.is_some()).map(|v| v.index)
    }

    fn advance_craft(
        id: ActorId,
        craft: &mut Craft,
        geo: &Geometry,
        step: f64,
        cadence_steps: u64,
        to: f64,
        out: &mut Vec<EventRecord>,
        aborted: &mut Vec<(ActorId, Running, f64)>,
    ) {
        let mut cur = craft.committed;
        let flux = geo.sun.flux;
        while cur.t < to {
            let cell = grid_cell(cur.t, step);
            let grid_end = (cell + 1) as f64 * step;
            let piece_end = grid_end.min(to);
            let nu = geo.nu(&craft.spec.orbit, cell as f64 * step);
            let (load, heat) = craft.loads();
            let dt = piece_end - cur.t;
            let p = integrate_power(&cur.battery, &craft.spec.panel, nu, flux, load, dt);
            if let Some(after) = p.blackout_after {
                let after = after.min(dt);
                let tb = cur.t + after;
                let thermal = integrate_thermal(&cur.thermal, nu, heat, after);
                let mut battery = cur.battery;
                battery.charge = 0.0;
                let next = ResourceState { t: tb, battery, thermal };
                Self::check_thermal(id, &cur, &next, out);
                craft.committed = next;
                cur = next;
                out.push(record(tb, id, EventKind::PowerBlackout).with("load_w", fmt_f(load)));
                if let Some(r) = craft.running.take() {
                    out.push(activity_end(tb, id, &r.name, ActivityStatus::Aborted, Some("power_blackout")));
                    aborted.push((id, r, tb));
                }
                if tb == grid_end {
                    Self::push_telemetry(craft, geo, cell + 1, cadence_steps, &cur);
                }
                continue;
            }
            let thermal = integrate_thermal(&cur.thermal, nu, heat, dt);
            let next = ResourceState {
                t: piece_end,
                battery: p.battery,
                thermal,
            };
            if piece_end == grid_end {
                Self::check_thermal(id, &cur, &next, out);
                craft.committed = next;
                cur = next;
                Self::push_telemetry(craft, geo, cell + 1, cadence_steps, &cur);
            } else {
                craft.view = next;
                return;
            }
        }
        craft.view = cur;
    }

    fn push_telemetry(craft: &mut Craft, geo: &Geometry, cell: u64, cadence_steps: u64, s: &ResourceState) {
        if cell.is_multiple_of(cadence_steps) {
            craft.telemetry.push(TelemetryRow {
                time: s.t,
                charge_j: s.battery.charge,
                temperature_k: s.thermal.temperature,
                illuminated: geo.nu(&craft.spec.orbit, s.t) > 0.5,
            });
        }
    }

    fn check_thermal(id: ActorId, before: &ResourceState, after: &ResourceState, out: &mut Vec<EventRecord>) {
        let node = &after.thermal;
        if let Some(v) = thermal_crossing(node, before.thermal.temperature, node.temperature) {
            let limit = match v {
                ThermalViolation::AboveMax => "above_max",
                ThermalViolation::BelowMin => "below_min",
            };
            out.push(
                record(after.t, id, EventKind::ThermalViolation)
                    .with("limit", limit)
                    .with("temperature_k", fmt_f(node.temperature)),
            );
        }
    }

    /// Makes the tentative state at `now` permanent.
    fn promote(&mut self, now: f64) -> Vec<EventRecord> {
        let mut out = Vec::new();
        for (&id, craft) in self.crafts.iter_mut() {
            if craft.view.t == now && craft.committed.t < now {
                Self::check_thermal(id, &craft.committed, &craft.view, &mut out);
                craft.committed = craft.view;
            }
        }
        out
    }

    fn compute_block(&mut self, k: u64, sched: &mut Scheduler<SimEvent>) -> Result<(), KernelError> {
        let (t0, t1) = (k as f64 * self.block, (k + 1) as f64 * self.block);
        let keys: Vec<TrackKey> = self.trackers.keys().copied().collect();
        for key in keys {
            let geo = self.geo;
            let (intervals, actor) = match key {
                TrackKey::Pair(a, b) => {
                    let (ka, kb) = (&self.actors[&a].kind, &self.actors[&b].kind);
                    let margin = self.pair_links[&(a, b)].grazing_altitude;
                    (find_intervals(t0, t1, self.coarse_step, |t| geo.visible(ka, kb, margin, t)), a)
                }
                TrackKey::Sunlight(a) => {
                    let orbit = self.crafts[&a].spec.orbit;
                    (find_intervals(t0, t1, self.coarse_step, |t| geo.nu(&orbit, t) > 0.5), a)
                }
            };
            let continuing = self.trackers[&key];
            let mut edges: Vec<(f64, bool)> = Vec::new();
            if continuing && intervals.first().is_none_or(|iv| iv.0 != t0) {
                edges.push((t0, false));
            }
            for (i, &(o, c)) in intervals.iter().enumerate() {
                if !(i == 0 && continuing && o == t0) {
                    edges.push((o, true));
                }
                if c < t1 {
                    edges.push((c, false));
                }
            }
            self.trackers.insert(key, intervals.last().is_some_and(|iv| iv.1 == t1));
            for (t, open) in edges {
                let ev = match key {
                    TrackKey::Pair(a, b) => SimEvent::Window { pair: (a, b), open },
                    TrackKey::Sunlight(_) => SimEvent::Eclipse { enter: !open },
                };
                sched.schedule(Epoch::new(t).expect("finite"), actor, ev)?;
            }
        }
        for (&id, craft) in self.crafts.iter_mut() {
            for f in sample_faults(&craft.spec.radiation, &mut craft.faults, t0, self.block) {
                sched.schedule(Epoch::new(f.time).expect("finite"), id, SimEvent::Fault(f))?;
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, now: f64, sched: &mut Scheduler<SimEvent>) -> Result<(), KernelError> {
        let views = &self.views;
        let started = self
            .ledger
            .dispatch(now, |pair| views.get(&pair).filter(|v| v.open_since.is_some()).map(|v| v.index));
        for s in started {
            sched.schedule(
                Epoch::new(s.completes_at).expect("finite"),
                s.dst,
                SimEvent::TransferComplete {
                    job: s.job,
                    generation: s.generation,
                },
            )?;
        }
        Ok(())
    }

    fn on_transfer_done(
        &mut self,
        p: Progress,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        let tr = &p.job.transfer;
        out.push(
            record(now, tr.dst, EventKind::TransferComplete)
                .with("src", tr.src)
                .with("bytes", tr.total_bytes)
                .with("transfer", p.job.purpose.label())
                .with("job", p.job.id),
        );
        self.fl_progress(&p.job.purpose, p.delta);
        self.fl_delivered(p.job, now, sched, out)
    }

    fn start_activity(
        &mut self,
        actor: ActorId,
        activity: &Activity,
        training: Option<u32>,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<Admission, SimError> {
        let geo = self.geo;
        let step = self.step;
        let window_open = match activity.preconditions.requires_window_with {
            Some(peer) => self.pair_window_index(ordered(actor, peer)).is_some(),
            None => true,
        };
        let craft = match self.crafts.get(&actor) {
            Some(c) => c,
            None if self.actors.contains_key(&actor) => return Err(ActorError::NotSpacecraft(actor).into()),
            None => return Err(ActorError::Unknown(actor).into()),
        };
        let st = craft.view;
        let orbit = craft.spec.orbit;
        let projected = project_min_charge(
            &st.battery,
            &craft.spec.panel,
            geo.sun.flux,
            craft.spec.idle_load + activity.power,
            now,
            activity.duration,
            step,
            |t| geo.nu(&orbit, t),
        );
        let decision = admit(&AdmissionInput {
            activity,
            device_failed: craft.failed,
            busy: craft.running.is_some(),
            window_open,
            battery: st.battery,
            projected_min_charge: projected,
            thermal: st.thermal,
        });
        match decision {
            Admission::Accepted => {
                let token = self.next_token;
                self.next_token += 1;
                let craft = self.crafts.get_mut(&actor).expect("checked above");
                craft.running = Some(Running {
                    token,
                    name: activity.name.clone(),
                    started: now,
                    power: activity.power,
                    heat: activity.heat,
                    training,
                });
                sched.schedule(
                    Epoch::new(now + activity.duration).expect("finite"),
                    actor,
                    SimEvent::ActivityEnd { token },
                )?;
                out.push(
                    record(now, actor, EventKind::ActivityStart)
                        .with("activity", &activity.name)
                        .with("status", ActivityStatus::Start.as_str())
                        .with("duration_s", fmt_f(activity.duration))
                        .with("power_w", fmt_f(activity.power)),
                );
            }
            Admission::Refused(reason) => {
                out.push(
                    record(now, actor, EventKind::ActivityRefused)
                        .with("activity", &activity.name)
                        .with("status", ActivityStatus::Refused.as_str())
                        .with("reason", reason.as_str()),
                );
            }
        }
        Ok(decision)
    }

    fn abort_running(&mut self, actor: ActorId, reason: &str, now: f64, out: &mut Vec<EventRecord>) -> bool {
        let Some(craft) = self.crafts.get_mut(&actor) else {
            return false;
        };
        let Some(r) = craft.running.take() else {
            return false;
        };
        out.push(activity_end(now, actor, &r.name, ActivityStatus::Aborted, Some(reason)));
        self.fl_training_stopped(actor, &r, now, Some(reason));
        true
    }

    fn on_fault(&mut self, actor: ActorId, f: Fault, now: f64, out: &mut Vec<EventRecord>) {
        let mut effects = Vec::new();
        let out_effects = &mut effects;
        let mut rec = record(now, actor, EventKind::Fault).with("fault", f.kind.as_str());
        match f.kind {
            FaultKind::Restart => {
                let hit = self.abort_running(actor, "radiation_restart", now, out_effects);
                rec = rec.with("effect", if hit { "activity_aborted" } else { "noop" });
            }
            FaultKind::Failure => {
                let craft = self.crafts.get_mut(&actor).expect("faults only for spacecraft");
                let first = !craft.failed;
                craft.failed = true;
                self.abort_running(actor, "radiation_failure", now, out_effects);
                rec = rec.with("effect", if first { "device_failed" } else { "noop" });
            }
            FaultKind::Corruption => {
                let mut round = None;
                let target = if let Some(job) = self.ledger.payload_job_mut(actor) {
                    let buf = job.payload.as_mut().expect("payload job");
                    let bit = f.bit_index(buf.byte_size());
                    if let Some(bit) = bit {
                        buf.flip_bit(bit);
                    }
                    round = job.purpose.round();
                    bit.map(|b| (format!("transfer:{}", job.id), b))
                } else {
                    let craft = self.crafts.get_mut(&actor).expect("faults only for spacecraft");
                    let training = craft.running.as_ref().and_then(|r| r.training);
                    craft.buffer.as_mut().and_then(|buf| {
                        let bit = f.bit_index(buf.byte_size())?;
                        buf.flip_bit(bit);
                        round = training;
                        Some(("model_buffer".to_string(), bit))
                    })
                };
                match target {
                    Some((name, bit)) => {
                        rec = rec.with("effect", "bit_flip").with("target", name).with("bit", bit);
                        if let Some(r) = round {
                            self.fl_corruption(r);
                        }
                    }
                    None => rec = rec.with("effect", "noop"),
                }
            }
        }
        out.push(rec);
        out.append(&mut effects);
    }
}

fn activity_end(t: f64, actor: ActorId, name: &str, status: ActivityStatus, reason: Option<&str>) -> EventRecord {
    let mut r = record(t, actor, EventKind::ActivityEnd)
        .with("activity", name)
        .with("status", status.as_str());
    if let Some(reason) = reason {
        r = r.with("reason", reason);
    }
    r
}

impl World<SimEvent> for SimState {
    fn integrate(&mut self, to: Epoch) -> Vec<EventRecord> {
        let mut out = Vec::new();
        if self.fatal.is_some() {
            return out;
        }
        let mut aborted = Vec::new();
        for (&id, craft) in self.crafts.iter_mut() {
            Self::advance_craft(
                id,
                craft,
                &self.geo,
                self.step,
                self.cadence_steps,
                to.seconds(),
                &mut out,
                &mut aborted,
            );
        }
        for (id, r, t) in aborted {
            self.fl_training_stopped(id, &r, t, Some("power_blackout"));
        }
        out
    }

    fn handle(&mut self, actor: ActorId, event: SimEvent, sched: &mut Scheduler<SimEvent>) -> Vec<EventRecord> {
        if self.fatal.is_some() {
            return Vec::new();
        }
        let now = sched.now().seconds();
        let mut out = self.promote(now);
        if let Err(e) = self.handle_inner(actor, event, now, sched, &mut out) {
            self.fatal = Some(e);
        }
        out
    }
}

impl SimState {
    fn handle_inner(
        &mut self,
        actor: ActorId,
        event: SimEvent,
        now: f64,
        sched: &mut Scheduler<SimEvent>,
        out: &mut Vec<EventRecord>,
    ) -> Result<(), SimError> {
        match event {
            SimEvent::ComputeBlock(k) => {
                self.compute_block(k, sched)?;
                sched.schedule(Epoch::new(k as f64 * self.block).expect("finite"), ActorId::SYSTEM, SimEvent::ComputeBlock(k + 1))?;
            }
            SimEvent::Window { pair, open } => {
                let view = self.views.entry(pair).or_default();
                if open {
                    view.open_since = Some(now);
                    view.index += 1;
                    out.push(
                        record(now, pair.0, EventKind::WindowOpen)
                            .with("peer", pair.1)
                            .with("window", view.index),
                    );
                } else {
                    let since = view.open_since.take();
                    let mut rec = record(now, pair.0, EventKind::WindowClose).with("peer", pair.1);
                    if let Some(t_open) = since {
                        self.windows.push(Window {
                            peer_a: pair.0,
                            peer_b: pair.1,
                            t_open,
                            t_close: now,
                        });
                        rec = rec.with("duration_s", format!("{:.3}", now - t_open));
                    }
                    out.push(rec);
                    let (paused, done) = self.ledger.pause_pair(pair, now);
                    for (purpose, delta) in paused {
                        self.fl_progress(&purpose, delta);
                    }
                    for p in done {
                        self.on_transfer_done(p, now, sched, out)?;
                    }
                }
                self.dispatch(now, sched)?;
            }
            SimEvent::Eclipse { enter } => {
                let kind = if enter { EventKind::EclipseEnter } else { EventKind::EclipseExit };
                out.push(record(now, actor, kind));
            }
            SimEvent::Fault(f) => self.on_fault(actor, f, now, out),
            SimEvent::StartActivity(i) => {
                let activity = self.activities[i].activity.clone();
                self.start_activity(actor, &activity, None, now, sched, out)?;
            }
            SimEvent::StartTransfer(i) => {
                let d = self.data_transfers[i].clone();
                let link = self.pair_links[&ordered(d.src, d.dst)].clone();
                self.ledger.enqueue(
                    Transfer::new(d.src, d.dst, d.bytes, link),
                    None,
                    TransferPurpose::Data { name: d.name },
                    None,
                );
                self.dispatch(now, sched)?;
            }
            SimEvent::ActivityEnd { token } => {
                let craft = self.crafts.get_mut(&actor).expect("activities only on spacecraft");
                if craft.running.as_ref().is_some_and(|r| r.token == token) {
                    let r = craft.running.take().expect("checked");
                    out.push(activity_end(now, actor, &r.name, ActivityStatus::End, None));
                    self.fl_training_done(actor, &r, now, sched, out)?;
                }
            }
            SimEvent::TransferComplete { job, generation } => {
                if let Some(p) = self.ledger.complete(job, generation, now) {
                    self.on_transfer_done(p, now, sched, out)?;
                    self.dispatch(now, sched)?;
                }
            }
            SimEvent::RoundStart => self.fl_start_round(now, sched, out)?,
            SimEvent::RoundTimeout { round } => self.fl_timeout(round, now, sched, out)?,
            SimEvent::External(rec) => out.push(rec),
        }
        Ok(())
    }
}

/// A running scenario.
pub struct Simulation {
    kernel: Kernel<SimEvent>,
    state: SimState,
    log: Vec<EventRecord>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(cfg.step) || !positive(cfg.coarse_step) || !positive(cfg.block) {
            return bad("step, coarse_step and block must be positive".into());
        }
        let cadence_steps = (cfg.telemetry_cadence / cfg.step).round();
        if !(cadence_steps >= 1.0) || ((cadence_steps * cfg.step - cfg.telemetry_cadence).abs() > 1e-9 * cfg.telemetry_cadence) {
            return bad(format!(
                "telemetry cadence {} s must be a positive multiple of the step {} s",
                cfg.telemetry_cadence, cfg.step
            ));
        }
        let mut actors = BTreeMap::new();
        for a in &cfg.actors {
            if a.id == ActorId::SYSTEM {
                return bad(format!("actor {:?}: id 0 is reserved", a.name));
            }
            if actors.insert(a.id, a.clone()).is_some() {
                return bad(format!("duplicate actor id {}", a.id));
            }
        }
        let geo = Geometry {
            body: cfg.body,
            sun: cfg.sun,
            rotation: cfg.rotation_rate,
        };
        let mut crafts = BTreeMap::new();
        for a in actors.values() {
            let Some(s) = a.spacecraft() else { continue };
            s.orbit
                .validate(&cfg.body)
                .map_err(|e| SimError::Config(format!("actor {}: {e}", a.id)))?;
            s.thermal
                .validate()
                .map_err(|e| SimError::Config(format!("actor {}: {e}", a.id)))?;
            s.radiation
                .validate()
                .map_err(|e| SimError::Config(format!("actor {}: {e}", a.id)))?;
            if !(s.idle_load >= 0.0 && s.idle_load.is_finite()) {
                return bad(format!("actor {}: idle load must be non-negative", a.id));
            }
            let init = ResourceState {
                t: 0.0,
                battery: s.battery,
                thermal: s.thermal,
            };
            crafts.insert(
                a.id,
                Craft {
                    spec: s.clone(),
                    committed: init,
                    view: init,
                    running: None,
                    failed: false,
                    faults: FaultStreams::new(cfg.seed, a.id),
                    telemetry: vec![TelemetryRow {
                        time: 0.0,
                        charge_j: s.battery.charge,
                        temperature_k: s.thermal.temperature,
                        illuminated: geo.nu(&s.orbit, 0.0) > 0.5,
                    }],
                    buffer: None,
                },
            );
        }
        let pair_links = pair_links(&actors);
        let mut trackers = BTreeMap::new();
        for &(a, b) in pair_links.keys() {
            trackers.insert(TrackKey::Pair(a, b), false);
        }
        for &id in crafts.keys() {
            // lit before the start unless block 0 says otherwise
            trackers.insert(TrackKey::Sunlight(id), true);
        }
        for (i, act) in cfg.activities.iter().enumerate() {
            if !crafts.contains_key(&act.actor) {
                return bad(format!("activities[{i}]: actor {} is not a spacecraft", act.actor));
            }
            if !(act.start >= 0.0 && act.start.is_finite()) {
                return bad(format!("activities[{i}]: start must be >= 0"));
            }
            if let Some(peer) = act.activity.preconditions.requires_window_with {
                if !pair_links.contains_key(&ordered(act.actor, peer)) {
                    return bad(format!("activities[{i}]: no link between {} and {peer}", act.actor));
                }
            }
        }
        for (i, d) in cfg.transfers.iter().enumerate() {
            if !pair_links.contains_key(&ordered(d.src, d.dst)) || d.src == d.dst {
                return bad(format!("transfers[{i}]: no link between {} and {}", d.src, d.dst));
            }
            if !(d.start >= 0.0 && d.start.is_finite()) {
                return bad(format!("transfers[{i}]: start must be >= 0"));
            }
        }
        let fl = match &cfg.federated {
            Some(f) => Some(rounds::FlRuntime::new(f.clone(), &actors, &pair_links)?),
            None => None,
        };

        let mut state = SimState {
            geo,
            step: cfg.step,
            coarse_step: cfg.coarse_step,
            block: cfg.block,
            cadence_steps: cadence_steps as u64,
            actors,
            crafts,
            pair_links,
            trackers,
            views: BTreeMap::new(),
            windows: Vec::new(),
            activities: cfg.activities.clone(),
            data_transfers: cfg.transfers.clone(),
            ledger: TransferLedger::default(),
            fl,
            next_token: 0,
            fatal: None,
        };
        let mut kernel = Kernel::new();
        let sched = kernel.scheduler_mut();
        state.compute_block(0, sched)?;
        sched.schedule(Epoch::ZERO, ActorId::SYSTEM, SimEvent::ComputeBlock(1))?;
        for (i, a) in state.activities.iter().enumerate() {
            sched.schedule(Epoch::new(a.start).expect("validated"), a.actor, SimEvent::StartActivity(i))?;
        }
        for (i, d) in state.data_transfers.iter().enumerate() {
            sched.schedule(Epoch::new(d.start).expect("validated"), d.src, SimEvent::StartTransfer(i))?;
        }
        if let Some(fl) = &state.fl {
            if fl.auto_rounds() > 0 {
                sched.schedule(Epoch::new(fl.start_time()).expect("validated"), fl.server(), SimEvent::RoundStart)?;
            }
        }
        Ok(Self {
            kernel,
            state,
            log: Vec::new(),
        })
    }

    pub fn clock(&self) -> f64 {
        self.kernel.clock().seconds()
    }

    fn check_fatal(&self) -> Result<(), SimError> {
        match &self.state.fatal {
            Some(SimError::Divergence { actor, round, source }) => Err(SimError::Divergence {
                actor: *actor,
                round: *round,
                source: source.clone(),
            }),
            Some(e) => Err(SimError::Config(e.to_string())),
            None => Ok(()),
        }
    }

    /// Runs every event up to and including `t`; returns the records emitted.
    pub fn advance_to(&mut self, t: f64) -> Result<Vec<EventRecord>, SimError> {
        self.check_fatal()?;
        let t = Epoch::new(t).map_err(SimError::Kernel)?;
        let out = self.kernel.advance_with(t, &mut self.state)?;
        self.log.extend(out.iter().cloned());
        self.check_fatal()?;
        Ok(out)
    }

    pub fn advance_by(&mut self, dt: f64) -> Result<Vec<EventRecord>, SimError> {
        self.advance_to(self.clock() + dt)
    }

    /// Queues an arbitrary record to be logged at its time.
    pub fn schedule_record(&mut self, rec: EventRecord) -> Result<(), SimError> {
        let (time, actor) = (rec.time, rec.actor_id);
        self.kernel.scheduler_mut().schedule(time, actor, SimEvent::External(rec))?;
        Ok(())
    }

    /// Requests `activity` on `actor` at the current clock.
    pub fn register_activity(&mut self, actor: ActorId, activity: &Activity) -> Result<Admission, SimError> {
        self.check_fatal()?;
        let now = self.clock();
        let mut out = self.state.promote(now);
        let res = self
            .state
            .start_activity(actor, activity, None, now, self.kernel.scheduler_mut(), &mut out);
        self.log.extend(out);
        res
    }

    /// Schedules `activity` on `actor` at a future time.
    pub fn schedule_activity(&mut self, actor: ActorId, start: f64, activity: Activity) -> Result<(), SimError> {
        if !self.state.crafts.contains_key(&actor) {
            return Err(ActorError::NotSpacecraft(actor).into());
        }
        let t = Epoch::new(start)?;
        self.state.activities.push(ScheduledActivity { actor, start, activity });
        let idx = self.state.activities.len() - 1;
        self.kernel.scheduler_mut().schedule(t, actor, SimEvent::StartActivity(idx))?;
        Ok(())
    }

    fn actor(&self, id: ActorId) -> Result<&Actor, SimError> {
        self.state.actors.get(&id).ok_or(SimError::Actor(ActorError::Unknown(id)))
    }

    pub fn actor_ids(&self) -> Vec<ActorId> {
        self.state.actors.keys().copied().collect()
    }

    pub fn spacecraft_ids(&self) -> Vec<ActorId> {
        self.state.crafts.keys().copied().collect()
    }

    pub fn actors(&self) -> impl Iterator<Item = &Actor> {
        self.state.actors.values()
    }

    /// State of `actor` at the current clock.
    pub fn snapshot(&self, id: ActorId) -> Result<ActorSnapshot, SimError> {
        let actor = self.actor(id)?;
        let now = self.clock();
        let position = self.state.geo.position(&actor.kind, now).to_array();
        let pending = self.state.ledger.pending_for(id);
        Ok(match self.state.crafts.get(&id) {
            Some(c) => ActorSnapshot {
                actor_id: id,
                time: now,
                position,
                illuminated: Some(self.state.geo.nu(&c.spec.orbit, now) > 0.5),
                charge_j: Some(c.view.battery.charge),
                temperature_k: Some(c.view.thermal.temperature),
                running_activity: c.running.as_ref().map(|r| r.name.clone()),
                pending_transfers: pending,
                device_failed: c.failed,
            },
            None => ActorSnapshot {
                actor_id: id,
                time: now,
                position,
                illuminated: None,
                charge_j: None,
                temperature_k: None,
                running_activity: None,
                pending_transfers: pending,
                device_failed: false,
            },
        })
    }

    /// Resource state at the latest telemetry sample not after `t`.
    pub fn snapshot_at(&self, id: ActorId, t: f64) -> Result<ActorSnapshot, SimError> {
        if t == self.clock() {
            return self.snapshot(id);
        }
        if !(t >= 0.0 && t < self.clock()) {
            return Err(SimError::Time(t));
        }
        let actor = self.actor(id)?;
        let Some(c) = self.state.crafts.get(&id) else {
            let mut s = self.snapshot(id)?;
            s.time = t;
            s.position = self.state.geo.position(&actor.kind, t).to_array();
            s.pending_transfers = 0;
            return Ok(s);
        };
        let idx = c.telemetry.partition_point(|r| r.time <= t);
        let row = c.telemetry[idx.saturating_sub(1)];
        Ok(ActorSnapshot {
            actor_id: id,
            time: row.time,
            position: self.state.geo.position(&actor.kind, row.time).to_array(),
            illuminated: Some(row.illuminated),
            charge_j: Some(row.charge_j),
            temperature_k: Some(row.temperature_k),
            running_activity: None,
            pending_transfers: 0,
            device_failed: c.failed,
        })
    }

    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn telemetry(&self, id: ActorId) -> Option<&[TelemetryRow]> {
        self.state.crafts.get(&id).map(|c| c.telemetry.as_slice())
    }

    /// Windows seen so far; open ones are cut at the current clock.
    pub fn windows(&self) -> Vec<Window> {
        let now = self.clock();
        let mut out = self.state.windows.clone();
        for (&(a, b), v) in &self.state.views {
            if let Some(t_open) = v.open_since {
                out.push(Window {
                    peer_a: a,
                    peer_b: b,
                    t_open,
                    t_close: now,
                });
            }
        }
        out.sort_by(|x, y| {
            x.t_open
                .total_cmp(&y.t_open)
                .then(x.peer_a.cmp(&y.peer_a))
                .then(x.peer_b.cmp(&y.peer_b))
        });
        out
    }

    /// Windows between two actors over `span`, computed directly from geometry.
    pub fn pair_windows(&self, a: ActorId, b: ActorId, span: (f64, f64)) -> Result<Vec<Window>, SimError> {
        let (ka, kb) = (&self.actor(a)?.kind, &self.actor(b)?.kind);
        if a == b {
            return Err(SimError::Config(format!("pair {a},{b} names the same actor twice")));
        }
        if matches!((ka, kb), (ActorKind::GroundStation(_), ActorKind::GroundStation(_))) {
            return Err(SimError::Config(format!("pair {a},{b}: two ground stations have no link geometry")));
        }
        if !(span.0 >= 0.0 && span.1 > span.0 && span.1.is_finite()) {
            return Err(SimError::Config(format!("span {},{} must satisfy 0 <= t0 < t1", span.0, span.1)));
        }
        let margin = self.state.pair_links.get(&ordered(a, b)).map_or(0.0, |l| l.grazing_altitude);
        let geo = self.state.geo;
        Ok(find_windows((a, b), span, self.state.coarse_step, |t| geo.visible(ka, kb, margin, t)))
    }

    pub fn round_reports(&self) -> &[RoundReport] {
        self.state.fl.as_ref().map_or(&[], |f| f.reports())
    }

    pub fn global_model(&self) -> Option<&ParamVector> {
        self.state.fl.as_ref().map(|f| f.global())
    }

    /// Starts a round now (unless one is running) and advances until it ends.
    pub fn run_round(&mut self) -> Result<RoundReport, SimError> {
        self.check_fatal()?;
        let fl = self.state.fl.as_ref().ok_or(SimError::NoFederatedPlan)?;
        let before = fl.reports().len();
        if !fl.round_active() {
            let server = fl.server();
            let now = self.kernel.clock();
            self.kernel.scheduler_mut().schedule(now, server, SimEvent::RoundStart)?;
        }
        let chunk = (self.state.step * 600.0).max(1.0);
        loop {
            self.advance_by(chunk)?;
            let reports = self.round_reports();
            if reports.len() > before {
                return Ok(reports[before].clone());
            }
        }
    }
}

/// Link used between each linkable pair, keyed by `(low id, high id)`.
///
/// Spacecraft and a ground station need a space-to-ground link on the
/// spacecraft; two spacecraft both need an inter-satellite link and share
/// the slower one.
fn pair_links(actors: &BTreeMap<ActorId, Actor>) -> BTreeMap<(ActorId, ActorId), LinkSpec> {
    let mut out = BTreeMap::new();
    let list: Vec<&Actor> = actors.values().collect();
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            let link = match (a.is_spacecraft(), b.is_spacecraft()) {
                (true, true) => match (a.link(LinkKind::InterSatellite), b.link(LinkKind::InterSatellite)) {
                    (Some(la), Some(lb)) => {
                        let mut l = if la.bitrate <= lb.bitrate { la.clone() } else { lb.clone() };
                        l.grazing_altitude = la.grazing_altitude.max(lb.grazing_altitude);
                        Some(l)
                    }
                    _ => None,
                },
                (true, false) => a.link(LinkKind::SpaceToGround).cloned(),
                (false, true) => b.link(LinkKind::SpaceToGround).cloned(),
                (false, false) => None,
            };
            if let Some(l) = link {
                out.insert((a.id, b.id), l);
            }
        }
    }
    out
}
