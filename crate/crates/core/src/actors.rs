//! Actors (spacecraft and ground stations), activities and admission control.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::ActorId;
use crate::links::{LinkKind, LinkSpec};
use crate::resources::{integrate_power, RadiationModel};
use crate::{BatteryState, GroundStation, KeplerianElements, SolarPanel, ThermalNode};

/// Default baseline consumption of a spacecraft, W.
pub const DEFAULT_IDLE_LOAD_W: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActorError {
    #[error("unknown actor {0}")]
    Unknown(ActorId),
    #[error("actor {0} is not a spacecraft")]
    NotSpacecraft(ActorId),
    #[error("activity needs positive duration and non-negative power/heat")]
    InvalidActivity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacecraft {
    pub orbit: KeplerianElements,
    pub battery: BatteryState,
    pub panel: SolarPanel,
    pub thermal: ThermalNode,
    pub radiation: RadiationModel,
    /// Baseline load, W.
    pub idle_load: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActorKind {
    Spacecraft(Box<Spacecraft>),
    GroundStation(GroundStation),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: ActorId,
    pub name: String,
    pub kind: ActorKind,
    pub links: Vec<LinkSpec>,
}

impl Actor {
    pub fn spacecraft(&self) -> Option<&Spacecraft> {
        match &self.kind {
            ActorKind::Spacecraft(s) => Some(s),
            ActorKind::GroundStation(_) => None,
        }
    }

    pub fn station(&self) -> Option<&GroundStation> {
        match &self.kind {
            ActorKind::GroundStation(g) => Some(g),
            ActorKind::Spacecraft(_) => None,
        }
    }

    pub fn is_spacecraft(&self) -> bool {
        self.spacecraft().is_some()
    }

    pub fn link(&self, kind: LinkKind) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.kind == kind)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preconditions {
    /// Charge fraction required at start.
    pub min_charge_fraction: Option<f64>,
    pub temperature_in_limits: bool,
    pub requires_window_with: Option<ActorId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub name: String,
    /// s
    pub duration: f64,
    /// Electrical draw on top of the idle load, W.
    pub power: f64,
    /// Heat dissipated internally, W.
    pub heat: f64,
    pub preconditions: Preconditions,
}

impl Activity {
    pub fn new(name: &str, duration: f64, power: f64, heat: f64) -> Result<Self, ActorError> {
        if !(duration > 0.0 && duration.is_finite() && power >= 0.0 && heat >= 0.0) {
            return Err(ActorError::InvalidActivity);
        }
        Ok(Self {
            name: name.to_string(),
            duration,
            power,
            heat,
            preconditions: Preconditions::default(),
        })
    }

    /// Activity whose power is the average of a fixed energy over its duration,
    /// e.g. `count` inferences at `joules` each.
    pub fn from_energy(name: &str, duration: f64, energy_j: f64, heat: f64) -> Result<Self, ActorError> {
        if !(energy_j >= 0.0) {
            return Err(ActorError::InvalidActivity);
        }
        Self::new(name, duration, energy_j / duration, heat)
    }

    pub fn with_preconditions(mut self, p: Preconditions) -> Self {
        self.preconditions = p;
        self
    }

    pub fn energy(&self) -> f64 {
        self.power * self.duration
    }
}

/// Why an activity was not admitted. Checked in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalReason {
    DeviceFailed,
    Busy,
    RequiresWindow,
    Power,
    Thermal,
}

impl RefusalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RefusalReason::DeviceFailed => "device_failed",
            RefusalReason::Busy => "busy",
            RefusalReason::RequiresWindow => "requires_window",
            RefusalReason::Power => "power",
            RefusalReason::Thermal => "thermal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Accepted,
    Refused(RefusalReason),
}

impl Admission {
    pub fn is_accepted(self) -> bool {
        matches!(self, Admission::Accepted)
    }
}

/// State the admission check needs from the simulator.
pub struct AdmissionInput<'a> {
    pub activity: &'a Activity,
    pub device_failed: bool,
    pub busy: bool,
    pub window_open: bool,
    pub battery: BatteryState,
    /// Lowest charge over the activity horizon under the illumination forecast.
    pub projected_min_charge: f64,
    pub thermal: ThermalNode,
}

/// Fixed-order gating: device, busy, window, charge, thermal.
pub fn admit(input: &AdmissionInput<'_>) -> Admission {
    let pre = &input.activity.preconditions;
    if input.device_failed {
        return Admission::Refused(RefusalReason::DeviceFailed);
    }
    if input.busy {
        return Admission::Refused(RefusalReason::Busy);
    }
    if pre.requires_window_with.is_some() && !input.window_open {
        return Admission::Refused(RefusalReason::RequiresWindow);
    }
    let min_fraction_ok = pre
        .min_charge_fraction
        .is_none_or(|f| input.battery.charge >= f * input.battery.capacity);
    // touching the floor exactly is allowed
    if !min_fraction_ok || input.projected_min_charge < input.battery.floor_charge() {
        return Admission::Refused(RefusalReason::Power);
    }
    if pre.temperature_in_limits && !input.thermal.in_limits() {
        return Admission::Refused(RefusalReason::Thermal);
    }
    Admission::Accepted
}

/// Lowest battery charge over `[start, start + duration]`.
///
/// The horizon is cut at multiples of `step`; each piece uses the illumination
/// sampled at the start of its grid cell, as the simulator does.
pub fn project_min_charge(
    battery: &BatteryState,
    panel: &SolarPanel,
    flux: f64,
    load: f64,
    start: f64,
    duration: f64,
    step: f64,
    nu_at: impl Fn(f64) -> f64,
) -> f64 {
    let end = start + duration;
    let mut b = *battery;
    let mut t = start;
    let mut min = b.charge;
    while t < end {
        let cell = grid_cell(t, step);
        let piece_end = ((cell + 1) as f64 * step).min(end);
        let s = integrate_power(&b, panel, nu_at(cell as f64 * step), flux, load, piece_end - t);
        b = s.battery;
        min = min.min(b.charge);
        t = piece_end;
    }
    min
}

/// Index of the integration cell containing `t`.
pub fn grid_cell(t: f64, step: f64) -> u64 {
    let k = (t / step).floor() as u64;
    if ((k + 1) as f64) * step <= t {
        k + 1
    } else if k > 0 && (k as f64) * step > t {
        k - 1
    } else {
        k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityStatus {
    Start,
    End,
    Aborted,
    Refused,
}

impl ActivityStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ActivityStatus::Start => "start",
            ActivityStatus::End => "end",
            ActivityStatus::Aborted => "aborted",
            ActivityStatus::Refused => "refused",
        }
    }
}

/// Immutable copy of one actor's state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorSnapshot {
    pub actor_id: ActorId,
    pub time: f64,
    pub position: [f64; 3],
    pub illuminated: Option<bool>,
    pub charge_j: Option<f64>,
    pub temperature_k: Option<f64>,
    pub running_activity: Option<String>,
    pub pending_transfers: usize,
    pub device_failed: bool,
}
