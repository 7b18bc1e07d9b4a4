//! Battery, lumped thermal node and radiation fault process.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{ActorId, SeededRng, StreamId};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResourceError {
    #[error("battery charge {charge} J outside [0, {capacity}] J")]
    Charge { charge: f64, capacity: f64 },
    #[error("discharge floor {0} outside [0, 1]")]
    Floor(f64),
    #[error("solar panel needs positive area and efficiency in (0, 1]")]
    Panel,
    #[error("thermal node parameters invalid: {0}")]
    Thermal(&'static str),
    #[error("radiation rates must be finite and non-negative")]
    Radiation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryState<T> {
    /// J
    pub capacity: T,
    /// J
    pub charge: T,
    /// Fraction of capacity below which activities are refused.
    pub discharge_floor: T,
}

impl<T: Scalar> BatteryState<T> {
    pub fn new(capacity: T, charge: T, discharge_floor: T) -> Result<Self, ResourceError> {
        if !(capacity > T::zero() && charge >= T::zero() && charge <= capacity) {
            return Err(ResourceError::Charge {
                charge: charge.as_f64(),
                capacity: capacity.as_f64(),
            });
        }
        if !(discharge_floor >= T::zero() && discharge_floor <= T::one()) {
            return Err(ResourceError::Floor(discharge_floor.as_f64()));
        }
        Ok(Self {
            capacity,
            charge,
            discharge_floor,
        })
    }

    pub fn floor_charge(&self) -> T {
        self.discharge_floor * self.capacity
    }

    pub fn fraction(&self) -> T {
        self.charge / self.capacity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolarPanel<T> {
    /// m²
    pub area: T,
    pub efficiency: T,
}

impl<T: Scalar> SolarPanel<T> {
    pub fn new(area: T, efficiency: T) -> Result<Self, ResourceError> {
        if area > T::zero() && efficiency > T::zero() && efficiency <= T::one() {
            Ok(Self { area, efficiency })
        } else {
            Err(ResourceError::Panel)
        }
    }

    /// Electrical output under illumination `nu`, W.
    pub fn output(&self, nu: T, flux: T) -> T {
        nu * flux * self.area * self.efficiency
    }
}

/// Result of one power integration piece.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerStep<T> {
    pub battery: BatteryState<T>,
    /// Offset into the step at which the charge reached zero, if it did.
    pub blackout_after: Option<T>,
}

/// `charge' = clamp(charge + (ν·flux·area·eff − load)·dt, 0, capacity)`.
pub fn integrate_power<T: Scalar>(
    battery: &BatteryState<T>,
    panel: &SolarPanel<T>,
    nu: T,
    flux: T,
    load: T,
    dt: T,
) -> PowerStep<T> {
    let rate = panel.output(nu, flux) - load;
    let raw = battery.charge + rate * dt;
    let mut next = *battery;
    next.charge = raw.max(T::zero()).min(battery.capacity);
    let blackout_after = if raw <= T::zero() && rate < T::zero() && battery.charge > T::zero() {
        Some(battery.charge / -rate)
    } else {
        None
    };
    PowerStep {
        battery: next,
        blackout_after,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalNode<T> {
    /// J/K
    pub heat_capacity: T,
    /// K
    pub temperature: T,
    /// Effective εσA, W/K⁴.
    pub rad_coeff: T,
    /// Solar heat absorbed when lit, W.
    pub absorbed_solar: T,
    pub t_min: T,
    pub t_max: T,
}

impl<T: Scalar> ThermalNode<T> {
    pub fn validate(&self) -> Result<(), ResourceError> {
        if !(self.heat_capacity > T::zero()) {
            return Err(ResourceError::Thermal("heat capacity must be positive"));
        }
        if !(self.temperature > T::zero()) {
            return Err(ResourceError::Thermal("temperature must be positive"));
        }
        if !(self.rad_coeff > T::zero()) {
            return Err(ResourceError::Thermal("radiative coefficient must be positive"));
        }
        if !(self.absorbed_solar >= T::zero()) {
            return Err(ResourceError::Thermal("absorbed solar power must be non-negative"));
        }
        if !(self.t_min < self.t_max) {
            return Err(ResourceError::Thermal("t_min must be below t_max"));
        }
        Ok(())
    }

    pub fn in_limits(&self) -> bool {
        self.temperature >= self.t_min && self.temperature <= self.t_max
    }

    fn derivative(&self, temperature: T, heat_in: T) -> T {
        let t2 = temperature * temperature;
        (heat_in - self.rad_coeff * t2 * t2) / self.heat_capacity
    }

    /// Steady-state temperature for a constant heat input, `(Q/εσA)^(1/4)`.
    pub fn equilibrium(&self, heat_in: T) -> T {
        (heat_in / self.rad_coeff).sqrt().sqrt()
    }

    /// Linearised relaxation time around the equilibrium for `heat_in`.
    pub fn time_constant(&self, heat_in: T) -> T {
        let teq = self.equilibrium(heat_in);
        self.heat_capacity / (T::lit(4.0) * self.rad_coeff * teq * teq * teq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalViolation {
    BelowMin,
    AboveMax,
}

/// Largest temperature change allowed per RK4 substep, K.
const MAX_SUBSTEP_DELTA_K: f64 = 1.0;

/// Advances `C·dT/dt = ν·absorbed + internal − εσA·T⁴` by `dt` seconds.
///
/// `dt` is split into RK4 substeps so that no substep moves the temperature
/// by more than 1 K.
pub fn integrate_thermal<T: Scalar>(node: &ThermalNode<T>, nu: T, internal_heat: T, dt: T) -> ThermalNode<T> {
    let mut next = *node;
    if !(dt > T::zero()) {
        return next;
    }
    let heat_in = nu * node.absorbed_solar + internal_heat;
    let max_delta = T::lit(MAX_SUBSTEP_DELTA_K);
    let mut remaining = dt;
    let mut temp = node.temperature;
    while remaining > T::zero() {
        let d0 = node.derivative(temp, heat_in).abs();
        let mut h = if d0 > T::zero() { (max_delta / d0).min(remaining) } else { remaining };
        // never step further than ~1/4 of the local relaxation time
        let t3 = temp * temp * temp;
        let tau = node.heat_capacity / (T::lit(4.0) * node.rad_coeff * t3);
        h = h.min(tau / T::lit(4.0)).max(remaining.min(T::lit(1e-6)));
        if remaining - h < h * T::lit(1e-9) {
            h = remaining;
        }
        let k1 = node.derivative(temp, heat_in);
        let k2 = node.derivative(temp + k1 * h / T::lit(2.0), heat_in);
        let k3 = node.derivative(temp + k2 * h / T::lit(2.0), heat_in);
        let k4 = node.derivative(temp + k3 * h, heat_in);
        temp = temp + (k1 + T::lit(2.0) * k2 + T::lit(2.0) * k3 + k4) * h / T::lit(6.0);
        if !(temp > T::zero()) {
            temp = T::min_positive_value();
        }
        remaining = remaining - h;
    }
    next.temperature = temp;
    next
}

/// Returns the limit crossed between `before` and `after`, if any.
pub fn thermal_crossing<T: Scalar>(node: &ThermalNode<T>, before: T, after: T) -> Option<ThermalViolation> {
    if before <= node.t_max && after > node.t_max {
        Some(ThermalViolation::AboveMax)
    } else if before >= node.t_min && after < node.t_min {
        Some(ThermalViolation::BelowMin)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiationModel {
    /// events/s
    pub rate_corruption: f64,
    pub rate_restart: f64,
    pub rate_failure: f64,
}

impl Default for RadiationModel {
    fn default() -> Self {
        Self {
            rate_corruption: 0.0,
            rate_restart: 0.0,
            rate_failure: 0.0,
        }
    }
}

impl RadiationModel {
    pub fn new(rate_corruption: f64, rate_restart: f64, rate_failure: f64) -> Result<Self, ResourceError> {
        let m = Self {
            rate_corruption,
            rate_restart,
            rate_failure,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        let ok = |r: f64| r.is_finite() && r >= 0.0;
        if ok(self.rate_corruption) && ok(self.rate_restart) && ok(self.rate_failure) {
            Ok(())
        } else {
            Err(ResourceError::Radiation)
        }
    }

    pub fn rate(&self, kind: FaultKind) -> f64 {
        match kind {
            FaultKind::Corruption => self.rate_corruption,
            FaultKind::Restart => self.rate_restart,
            FaultKind::Failure => self.rate_failure,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Flips one bit of a payload buffer.
    Corruption,
    /// Aborts the running activity.
    Restart,
    /// Permanently disables the compute device.
    Failure,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::Corruption, FaultKind::Restart, FaultKind::Failure];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::Corruption => "corruption",
            FaultKind::Restart => "restart",
            FaultKind::Failure => "failure",
        }
    }

    fn stream_tag(self) -> u8 {
        match self {
            FaultKind::Corruption => 1,
            FaultKind::Restart => 2,
            FaultKind::Failure => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub time: f64,
    pub kind: FaultKind,
    /// Uniform draw used to pick the flipped bit for corruption faults.
    pub bit_selector: u64,
}

impl Fault {
    /// Bit index in a buffer of `n_bytes` bytes.
    pub fn bit_index(&self, n_bytes: usize) -> Option<usize> {
        let bits = (n_bytes as u64).checked_mul(8)?;
        if bits == 0 {
            return None;
        }
        // widening multiply keeps the choice uniform without modulo bias
        Some(((self.bit_selector as u128 * bits as u128) >> 64) as usize)
    }
}

/// One dedicated random stream per fault kind for a single actor.
#[derive(Clone, Debug)]
pub struct FaultStreams {
    streams: [SeededRng; 3],
}

impl FaultStreams {
    pub fn new(seed: u64, actor: ActorId) -> Self {
        let mk = |k: FaultKind| SeededRng::new(seed, StreamId::for_actor(actor, k.stream_tag()));
        Self {
            streams: [
                mk(FaultKind::Corruption),
                mk(FaultKind::Restart),
                mk(FaultKind::Failure),
            ],
        }
    }

    fn stream(&mut self, kind: FaultKind) -> &mut SeededRng {
        &mut self.streams[kind.stream_tag() as usize - 1]
    }
}

/// Poisson-distributed faults on `[t0, t0 + dt)`, sorted by time then kind.
pub fn sample_faults(model: &RadiationModel, streams: &mut FaultStreams, t0: f64, dt: f64) -> Vec<Fault> {
    let mut out = Vec::new();
    if !(dt > 0.0) {
        return out;
    }
    for kind in FaultKind::ALL {
        let lambda = model.rate(kind) * dt;
        if !(lambda > 0.0) {
            continue;
        }
        let rng = streams.stream(kind);
        let count = Poisson::new(lambda).expect("positive finite mean").sample(rng) as u64;
        for _ in 0..count {
            let u: f64 = rng.random();
            let bit_selector = rng.next_u64();
            out.push(Fault {
                time: t0 + u * dt,
                kind,
                bit_selector,
            });
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.cmp(&b.kind)));
    out
}
