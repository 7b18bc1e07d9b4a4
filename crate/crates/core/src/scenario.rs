//! Scenario files: TOML tables with units in field names.
//!
//! ```toml
//! [metadata]
//! name = "demo"
//! seed = 7
//!
//! [[actors]]
//! id = 1
//! name = "sat"
//! kind = "spacecraft"
//! links = ["HYPSO1_SBAND"]
//! orbit = { a_m = 6.871e6, e = 0.0, i_deg = 97.4 }
//! battery = { capacity_j = 1.0e5, charge_j = 8.0e4 }
//! panel = { area_m2 = 0.1, efficiency = 0.3 }
//! thermal = { heat_capacity_j_per_k = 5.0e3, temperature_k = 290.0, rad_coeff_w_per_k4 = 2.0e-9,
//!             absorbed_solar_w = 10.0, t_min_k = 250.0, t_max_k = 330.0 }
//! ```
//!
//! Every semantic error names the offending field path, e.g.
//! `actors[0].orbit.a_m`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{Activity, Actor, ActorKind, Preconditions, Spacecraft, DEFAULT_IDLE_LOAD_W};

use crate::compute_energy::{inference_energy_preset, model_energy};
use crate::fedlearn::{RoundPlan, SyntheticTask, WireFormat};
use crate::kernel::ActorId;
use crate::links::{LinkKind, LinkSpec, DEFAULT_COARSE_STEP, DEFAULT_MIN_ELEVATION_DEG, EARTH_ROTATION_RATE};
use crate::resources::RadiationModel;
use crate::sim::{DataTransfer, FlConfig, ScheduledActivity, SimConfig, DEFAULT_BLOCK_S, DEFAULT_MAX_ATTEMPTS};
use crate::{
    BatteryState, CentralBody, DevicePreset, GroundStation, KeplerianElements, LayerSpec, SolarPanel, SunModel, ThermalNode, Vec3,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: invalid scenario:\n  {}", .errors.join("\n  "))]
    Invalid { path: String, errors: Vec<String> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    /// Calendar epoch of t = 0; informational only.
    #[serde(default)]
    pub t0: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub mu_m3_per_s2: f64,
    pub radius_m: f64,
    #[serde(default = "default_rotation")]
    pub rotation_rad_per_s: f64,
}

fn default_rotation() -> f64 {
    EARTH_ROTATION_RATE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SunSpec {
    /// Initial Sun direction.
    pub direction: [f64; 3],
    #[serde(default = "default_sun_axis")]
    pub axis: [f64; 3],
    /// Rotation rate of the Sun direction, rad/s.
    #[serde(default)]
    pub rate_rad_per_s: Option<f64>,
    #[serde(default)]
    pub flux_w_per_m2: Option<f64>,
}

fn default_sun_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "one")]
    pub step_s: f64,
    #[serde(default = "default_coarse")]
    pub coarse_step_s: f64,
    #[serde(default = "default_block")]
    pub block_s: f64,
    #[serde(default = "default_cadence")]
    pub telemetry_cadence_s: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            step_s: 1.0,
            coarse_step_s: DEFAULT_COARSE_STEP,
            block_s: DEFAULT_BLOCK_S,
            telemetry_cadence_s: 60.0,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_coarse() -> f64 {
    DEFAULT_COARSE_STEP
}
fn default_block() -> f64 {
    DEFAULT_BLOCK_S
}
fn default_cadence() -> f64 {
    60.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkPresetSpec {
    pub bitrate_bps: f64,
    pub kind: LinkKind,
    #[serde(default = "default_grazing")]
    pub grazing_altitude_m: f64,
}

fn default_grazing() -> f64 {
    1e5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicePresetSpec {
    pub e_synop_j: f64,
    pub e_update_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub a_m: f64,
    #[serde(default)]
    pub e: f64,
    #[serde(default)]
    pub i_deg: f64,
    #[serde(default)]
    pub raan_deg: f64,
    #[serde(default)]
    pub argp_deg: f64,
    #[serde(default)]
    pub m0_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub capacity_j: f64,
    pub charge_j: f64,
    /// Fraction of capacity that activities may not draw below.
    #[serde(default)]
    pub discharge_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub area_m2: f64,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSpec {
    pub heat_capacity_j_per_k: f64,
    pub temperature_k: f64,
    pub rad_coeff_w_per_k4: f64,
    pub absorbed_solar_w: f64,
    pub t_min_k: f64,
    pub t_max_k: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiationSpec {
    #[serde(default)]
    pub corruption_per_s: f64,
    #[serde(default)]
    pub restart_per_s: f64,
    #[serde(default)]
    pub failure_per_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKindSpec {
    Spacecraft,
    GroundStation,
}

/// One actor; which fields apply depends on `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub id: u32,
    pub name: String,
    pub kind: ActorKindSpec,
    #[serde(default)]
    pub links: Vec<String>,
    pub orbit: Option<OrbitSpec>,
    pub battery: Option<BatterySpec>,
    pub panel: Option<PanelSpec>,
    pub thermal: Option<ThermalSpec>,
    pub radiation: Option<RadiationSpec>,
    pub idle_load_w: Option<f64>,
    pub lat_deg: Option<f64>,
    pub lon_deg: Option<f64>,
    pub alt_m: Option<f64>,
    pub min_elevation_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSpec {
    /// Name of a measured per-inference energy preset.
    pub preset: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpecToml {
    pub neurons: u64,
    pub synapses_per_neuron: Vec<u64>,
    /// Mean input rate; omitted for a conventional layer (1/dt).
    pub rate_hz: Option<f64>,
    #[serde(default = "one_u64")]
    pub timesteps: u64,
    pub dt_s: f64,
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEnergySpec {
    pub device: String,
    pub layers: Vec<LayerSpecToml>,
    #[serde(default = "one_u64")]
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySpec {
    pub actor: u32,
    pub name: String,
    pub start_s: f64,
    pub duration_s: f64,
    /// Exactly one of `power_w`, `energy_j`, `inference` and `model`.
    pub power_w: Option<f64>,
    pub energy_j: Option<f64>,
    pub inference: Option<InferenceSpec>,
    pub model: Option<ModelEnergySpec>,
    #[serde(default)]
    pub heat_w: f64,
    pub min_charge_fraction: Option<f64>,
    #[serde(default)]
    pub temperature_in_limits: bool,
    pub requires_window_with: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub name: String,
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
    #[serde(default)]
    pub start_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub dim: usize,
    pub samples_per_client: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    #[serde(default = "default_train_name")]
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub power_w: f64,
    #[serde(default)]
    pub heat_w: f64,
    pub min_charge_fraction: Option<f64>,
    #[serde(default)]
    pub temperature_in_limits: bool,
}

fn default_train_name() -> String {
    "train".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedSpec {
    pub server: u32,
    pub clients: Vec<u32>,
    pub quorum: usize,
    #[serde(default = "one_usize")]
    pub local_steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub rounds: u32,
    #[serde(default)]
    pub start_s: f64,
    pub round_timeout_s: f64,
    #[serde(default)]
    pub wire: WireFormat,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    pub data: DataSpec,
    pub training: TrainingSpec,
}

fn one_usize() -> usize {
    1
}
fn default_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "yes")]
    pub events_jsonl: bool,
    #[serde(default = "yes")]
    pub events_csv: bool,
    #[serde(default = "yes")]
    pub telemetry: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            events_jsonl: true,
            events_csv: true,
            telemetry: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub metadata: Metadata,
    pub body: Option<BodySpec>,
    pub sun: Option<SunSpec>,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub link_presets: BTreeMap<String, LinkPresetSpec>,
    #[serde(default)]
    pub device_presets: BTreeMap<String, DevicePresetSpec>,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub activities: Vec<ActivitySpec>,
    #[serde(default)]
    pub transfers: Vec<TransferSpec>,
    pub federated: Option<FederatedSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Collects `path: message` diagnostics.
#[derive(Default)]
struct Diag(Vec<String>);

impl Diag {
    fn err(&mut self, path: impl AsRef<str>, msg: impl AsRef<str>) {
        self.0.push(format!("{}: {}", path.as_ref(), msg.as_ref()));
    }

    fn positive(&mut self, path: impl AsRef<str>, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.err(path, format!("must be a positive finite number, got {v}"));
        }
    }

    fn non_negative(&mut self, path: impl AsRef<str>, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.err(path, format!("must be a non-negative finite number, got {v}"));
        }
    }

    fn finite(&mut self, path: impl AsRef<str>, v: f64) {
        if !v.is_finite() {
            self.err(path, format!("must be finite, got {v}"));
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        // surfaces every semantic error before anything else runs
        sc.to_config(None).map_err(|errors| ScenarioError::Invalid {
            path: origin.to_string(),
            errors,
        })?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: origin.clone(),
            source,
        })?;
        Self::from_toml_str(&text, &origin)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn link_preset(&self, name: &str) -> Option<LinkSpec> {
        if let Some(p) = self.link_presets.get(name) {
            return LinkSpec::new(name, p.bitrate_bps, p.kind, p.grazing_altitude_m).ok();
        }
        LinkSpec::preset(name).ok()
    }

    fn device_preset(&self, name: &str) -> Option<DevicePreset> {
        match self.device_presets.get(name) {
            Some(d) => DevicePreset::new(name, d.e_synop_j, d.e_update_j).ok(),
            None => DevicePreset::by_name(name).ok(),
        }
    }

    fn body(&self, d: &mut Diag) -> (CentralBody, f64) {
        match &self.body {
            None => (CentralBody::earth(), EARTH_ROTATION_RATE),
            Some(b) => {
                d.positive("body.mu_m3_per_s2", b.mu_m3_per_s2);
                d.positive("body.radius_m", b.radius_m);
                d.finite("body.rotation_rad_per_s", b.rotation_rad_per_s);
                let body = CentralBody::new(b.mu_m3_per_s2, b.radius_m).unwrap_or(CentralBody::earth());
                (body, b.rotation_rad_per_s)
            }
        }
    }

    fn sun(&self, d: &mut Diag) -> SunModel {
        let default = SunModel::default();
        let Some(s) = &self.sun else { return default };
        let rate = s.rate_rad_per_s.unwrap_or(default.omega);
        let flux = s.flux_w_per_m2.unwrap_or(default.flux);
        d.finite("sun.rate_rad_per_s", rate);
        d.non_negative("sun.flux_w_per_m2", flux);
        match SunModel::new(Vec3::from_array(s.direction), Vec3::from_array(s.axis), rate, flux) {
            Ok(m) => m,
            Err(e) => {
                d.err("sun", e.to_string());
                default
            }
        }
    }

    fn actor(&self, i: usize, a: &ActorSpec, body: &CentralBody, d: &mut Diag) -> Option<Actor> {
        let p = format!("actors[{i}]");
        if a.id == 0 {
            d.err(format!("{p}.id"), "0 is reserved; use ids >= 1");
        }
        let mut links = Vec::new();
        for (j, name) in a.links.iter().enumerate() {
            match self.link_preset(name) {
                Some(l) => links.push(l),
                None => d.err(format!("{p}.links[{j}]"), format!("unknown link preset {name:?}")),
            }
        }
        let kind = match a.kind {
            ActorKindSpec::Spacecraft => {
                for (field, set) in [
                    ("lat_deg", a.lat_deg.is_some()),
                    ("lon_deg", a.lon_deg.is_some()),
                    ("alt_m", a.alt_m.is_some()),
                    ("min_elevation_deg", a.min_elevation_deg.is_some()),
                ] {
                    if set {
                        d.err(format!("{p}.{field}"), "only applies to ground stations");
                    }
                }
                let before = d.0.len();
                let need = |d: &mut Diag, field: &str, set: bool| {
                    if !set {
                        d.err(format!("{p}.{field}"), "required for a spacecraft");
                    }
                };
                need(d, "orbit", a.orbit.is_some());
                need(d, "battery", a.battery.is_some());
                need(d, "panel", a.panel.is_some());
                need(d, "thermal", a.thermal.is_some());
                let (Some(o), Some(b), Some(pa), Some(t)) = (&a.orbit, &a.battery, &a.panel, &a.thermal) else {
                    return None;
                };
                let orbit = KeplerianElements {
                    a: o.a_m,
                    e: o.e,
                    i: o.i_deg.to_radians(),
                    raan: o.raan_deg.to_radians(),
                    argp: o.argp_deg.to_radians(),
                    m0: o.m0_deg.to_radians(),
                };
                if !(o.a_m > body.radius && o.a_m.is_finite()) {
                    d.err(format!("{p}.orbit.a_m"), format!("must exceed the body radius {} m, got {}", body.radius, o.a_m));
                }
                if !(o.e >= 0.0 && o.e < 1.0) {
                    d.err(format!("{p}.orbit.e"), format!("must be in [0, 1), got {}", o.e));
                }
                for (f, v) in [("i_deg", o.i_deg), ("raan_deg", o.raan_deg), ("argp_deg", o.argp_deg), ("m0_deg", o.m0_deg)] {
                    d.finite(format!("{p}.orbit.{f}"), v);
                }
                if o.a_m > body.radius && o.e >= 0.0 && o.e < 1.0 && o.a_m * (1.0 - o.e) <= body.radius {
                    d.err(format!("{p}.orbit.e"), "perigee lies inside the central body");
                }
                d.positive(format!("{p}.battery.capacity_j"), b.capacity_j);
                if !(b.charge_j >= 0.0 && b.charge_j <= b.capacity_j) {
                    d.err(format!("{p}.battery.charge_j"), format!("must be in [0, capacity_j], got {}", b.charge_j));
                }
                if !(b.discharge_floor >= 0.0 && b.discharge_floor < 1.0) {
                    d.err(format!("{p}.battery.discharge_floor"), "must be in [0, 1)");
                }
                d.non_negative(format!("{p}.panel.area_m2"), pa.area_m2);
                if !(pa.efficiency >= 0.0 && pa.efficiency <= 1.0) {
                    d.err(format!("{p}.panel.efficiency"), "must be in [0, 1]");
                }
                d.positive(format!("{p}.thermal.heat_capacity_j_per_k"), t.heat_capacity_j_per_k);
                d.positive(format!("{p}.thermal.temperature_k"), t.temperature_k);
                d.positive(format!("{p}.thermal.rad_coeff_w_per_k4"), t.rad_coeff_w_per_k4);
                d.non_negative(format!("{p}.thermal.absorbed_solar_w"), t.absorbed_solar_w);
                if !(t.t_min_k < t.t_max_k) {
                    d.err(format!("{p}.thermal.t_max_k"), "must exceed t_min_k");
                }
                let r = a.radiation.clone().unwrap_or_default();
                d.non_negative(format!("{p}.radiation.corruption_per_s"), r.corruption_per_s);
                d.non_negative(format!("{p}.radiation.restart_per_s"), r.restart_per_s);
                d.non_negative(format!("{p}.radiation.failure_per_s"), r.failure_per_s);
                let idle = a.idle_load_w.unwrap_or(DEFAULT_IDLE_LOAD_W);
                d.non_negative(format!("{p}.idle_load_w"), idle);
                if d.0.len() > before {
                    return None;
                }
                ActorKind::Spacecraft(Box::new(Spacecraft {
                    orbit,
                    battery: BatteryState::new(b.capacity_j, b.charge_j, b.discharge_floor).ok()?,
                    panel: SolarPanel::new(pa.area_m2, pa.efficiency).ok()?,
                    thermal: ThermalNode {
                        heat_capacity: t.heat_capacity_j_per_k,
                        temperature: t.temperature_k,
                        rad_coeff: t.rad_coeff_w_per_k4,
                        absorbed_solar: t.absorbed_solar_w,
                        t_min: t.t_min_k,
                        t_max: t.t_max_k,
                    },
                    radiation: RadiationModel {
                        rate_corruption: r.corruption_per_s,
                        rate_restart: r.restart_per_s,
                        rate_failure: r.failure_per_s,
                    },
                    idle_load: idle,
                }))
            }
            ActorKindSpec::GroundStation => {
                for (field, set) in [
                    ("orbit", a.orbit.is_some()),
                    ("battery", a.battery.is_some()),
                    ("panel", a.panel.is_some()),
                    ("thermal", a.thermal.is_some()),
                    ("radiation", a.radiation.is_some()),
                    ("idle_load_w", a.idle_load_w.is_some()),
                ] {
                    if set {
                        d.err(format!("{p}.{field}"), "only applies to spacecraft");
                    }
                }
                let (Some(lat), Some(lon)) = (a.lat_deg, a.lon_deg) else {
                    d.err(format!("{p}.lat_deg"), "lat_deg and lon_deg are required for a ground station");
                    return None;
                };
                let alt = a.alt_m.unwrap_or(0.0);
                let min_el = a.min_elevation_deg.unwrap_or(DEFAULT_MIN_ELEVATION_DEG);
                if !(lat.abs() <= 90.0) {
                    d.err(format!("{p}.lat_deg"), format!("must be in [-90, 90], got {lat}"));
                }
                d.finite(format!("{p}.lon_deg"), lon);
                d.finite(format!("{p}.alt_m"), alt);
                if !(0.0..90.0).contains(&min_el) {
                    d.err(format!("{p}.min_elevation_deg"), format!("must be in [0, 90), got {min_el}"));
                }
                let gs = GroundStation::new(lat.to_radians(), lon.to_radians(), alt, min_el.to_radians()).ok()?;
                ActorKind::GroundStation(gs)
            }
        };
        Some(Actor {
            id: ActorId(a.id),
            name: a.name.clone(),
            kind,
            links,
        })
    }

    fn activity(&self, i: usize, a: &ActivitySpec, d: &mut Diag) -> Option<ScheduledActivity> {
        let p = format!("activities[{i}]");
        d.non_negative(format!("{p}.start_s"), a.start_s);
        d.positive(format!("{p}.duration_s"), a.duration_s);
        d.non_negative(format!("{p}.heat_w"), a.heat_w);
        let given = [a.power_w.is_some(), a.energy_j.is_some(), a.inference.is_some(), a.model.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            d.err(&p, "set exactly one of power_w, energy_j, inference, model");
            return None;
        }
        let energy = if let Some(e) = a.energy_j {
            d.non_negative(format!("{p}.energy_j"), e);
            Some(e)
        } else if let Some(inf) = &a.inference {
            match inference_energy_preset(&inf.preset) {
                Some(e) => Some(e * inf.count as f64),
                None => {
                    d.err(format!("{p}.inference.preset"), format!("unknown inference preset {:?}", inf.preset));
                    None
                }
            }
        } else if let Some(m) = &a.model {
            let Some(dev) = self.device_preset(&m.device) else {
                d.err(format!("{p}.model.device"), format!("unknown device preset {:?}", m.device));
                return None;
            };
            let layers: Vec<LayerSpec> = m
                .layers
                .iter()
                .map(|l| match l.rate_hz {
                    Some(rate) => LayerSpec {
                        n_neurons: l.neurons,
                        synapses_per_neuron: l.synapses_per_neuron.clone(),
                        mean_rate: rate,
                        timesteps: l.timesteps,
                        dt: l.dt_s,
                    },
                    None => LayerSpec::ann(l.neurons, l.synapses_per_neuron.clone(), l.dt_s),
                })
                .collect();
            match model_energy(&layers, &dev) {
                Ok(e) => Some(e * m.count as f64),
                Err(e) => {
                    d.err(format!("{p}.model"), e.to_string());
                    None
                }
            }
        } else {
            None
        };
        let power = match (a.power_w, energy) {
            (Some(pw), _) => {
                d.non_negative(format!("{p}.power_w"), pw);
                pw
            }
            (None, Some(e)) => e / a.duration_s,
            (None, None) => return None,
        };
        if let Some(f) = a.min_charge_fraction {
            if !(0.0..=1.0).contains(&f) {
                d.err(format!("{p}.min_charge_fraction"), "must be in [0, 1]");
            }
        }
        let act = Activity::new(&a.name, a.duration_s, power, a.heat_w).ok()?;
        Some(ScheduledActivity {
            actor: ActorId(a.actor),
            start: a.start_s,
            activity: act.with_preconditions(Preconditions {
                min_charge_fraction: a.min_charge_fraction,
                temperature_in_limits: a.temperature_in_limits,
                requires_window_with: a.requires_window_with.map(ActorId),
            }),
        })
    }

    fn federated(&self, f: &FederatedSpec, d: &mut Diag) -> Option<FlConfig> {
        let plan = RoundPlan {
            server: ActorId(f.server),
            clients: f.clients.iter().copied().map(ActorId).collect(),
            quorum: f.quorum,
            local_steps: f.local_steps,
            learning_rate: f.learning_rate,
            l2: f.l2,
        };
        if let Err(e) = plan.validate() {
            d.err("federated", e);
        }
        d.positive("federated.round_timeout_s", f.round_timeout_s);
        d.non_negative("federated.start_s", f.start_s);
        if f.max_attempts == 0 {
            d.err("federated.max_attempts", "must be >= 1");
        }
        if f.data.dim == 0 {
            d.err("federated.data.dim", "must be >= 1");
        }
        if f.data.samples_per_client == 0 {
            d.err("federated.data.samples_per_client", "must be >= 1");
        }
        d.non_negative("federated.data.noise_std", f.data.noise_std);
        let t = &f.training;
        d.positive("federated.training.duration_s", t.duration_s);
        d.non_negative("federated.training.power_w", t.power_w);
        d.non_negative("federated.training.heat_w", t.heat_w);
        let training = Activity::new(&t.name, t.duration_s, t.power_w, t.heat_w)
            .ok()?
            .with_preconditions(Preconditions {
                min_charge_fraction: t.min_charge_fraction,
                temperature_in_limits: t.temperature_in_limits,
                requires_window_with: None,
            });
        Some(FlConfig {
            plan,
            task: SyntheticTask {
                dim: f.data.dim,
                samples_per_client: f.data.samples_per_client,
                noise_std: f.data.noise_std,
                seed: f.data.seed,
            },
            wire: f.wire,
            training,
            rounds: f.rounds,
            start: f.start_s,
            round_timeout: f.round_timeout_s,
            max_attempts: f.max_attempts,
            initial: None,
        })
    }

    /// Builds the simulator configuration, or every validation error found.
    pub fn to_config(&self, seed_override: Option<u64>) -> Result<SimConfig, Vec<String>> {
        let mut d = Diag::default();
        if self.metadata.name.trim().is_empty() {
            d.err("metadata.name", "must not be empty");
        }
        let (body, rotation) = self.body(&mut d);
        let sun = self.sun(&mut d);
        let s = &self.simulation;
        d.positive("simulation.step_s", s.step_s);
        d.positive("simulation.coarse_step_s", s.coarse_step_s);
        d.positive("simulation.block_s", s.block_s);
        d.positive("simulation.telemetry_cadence_s", s.telemetry_cadence_s);
        if s.step_s > 0.0 && s.telemetry_cadence_s > 0.0 {
            let k = (s.telemetry_cadence_s / s.step_s).round();
            if k < 1.0 || (k * s.step_s - s.telemetry_cadence_s).abs() > 1e-9 * s.telemetry_cadence_s {
                d.err("simulation.telemetry_cadence_s", "must be a whole multiple of step_s");
            }
        }
        for (name, p) in &self.link_presets {
            d.positive(format!("link_presets.{name}.bitrate_bps"), p.bitrate_bps);
            d.non_negative(format!("link_presets.{name}.grazing_altitude_m"), p.grazing_altitude_m);
        }
        for (name, p) in &self.device_presets {
            d.non_negative(format!("device_presets.{name}.e_synop_j"), p.e_synop_j);
            d.non_negative(format!("device_presets.{name}.e_update_j"), p.e_update_j);
        }
        if self.actors.is_empty() {
            d.err("actors", "at least one actor is required");
        }
        let mut kinds: BTreeMap<u32, ActorKindSpec> = BTreeMap::new();
        for (i, a) in self.actors.iter().enumerate() {
            if kinds.insert(a.id, a.kind).is_some() {
                d.err(format!("actors[{i}].id"), format!("duplicate id {}", a.id));
            }
        }
        let actors: Vec<Actor> = self
            .actors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| self.actor(i, a, &body, &mut d))
            .collect();
        let is_craft = |id: u32| kinds.get(&id) == Some(&ActorKindSpec::Spacecraft);
        let mut activities = Vec::new();
        for (i, a) in self.activities.iter().enumerate() {
            if !is_craft(a.actor) {
                d.err(format!("activities[{i}].actor"), format!("{} is not a declared spacecraft", a.actor));
            }
            if let Some(peer) = a.requires_window_with {
                if !kinds.contains_key(&peer) {
                    d.err(format!("activities[{i}].requires_window_with"), format!("unknown actor {peer}"));
                }
            }
            if let Some(x) = self.activity(i, a, &mut d) {
                activities.push(x);
            }
        }
        let mut transfers = Vec::new();
        for (i, t) in self.transfers.iter().enumerate() {
            let p = format!("transfers[{i}]");
            for (f, id) in [("src", t.src), ("dst", t.dst)] {
                if !kinds.contains_key(&id) {
                    d.err(format!("{p}.{f}"), format!("unknown actor {id}"));
                }
            }
            if t.src == t.dst {
                d.err(format!("{p}.dst"), "must differ from src");
            }
            d.non_negative(format!("{p}.start_s"), t.start_s);
            transfers.push(DataTransfer {
                name: t.name.clone(),
                src: ActorId(t.src),
                dst: ActorId(t.dst),
                bytes: t.bytes,
                start: t.start_s,
            });
        }
        let federated = match &self.federated {
            Some(f) => {
                if !kinds.contains_key(&f.server) {
                    d.err("federated.server", format!("unknown actor {}", f.server));
                } else if is_craft(f.server) {
                    d.err("federated.server", "must be a ground station");
                }
                for (j, &c) in f.clients.iter().enumerate() {
                    if !is_craft(c) {
                        d.err(format!("federated.clients[{j}]"), format!("{c} is not a declared spacecraft"));
                    }
                }
                self.federated(f, &mut d)
            }
            None => None,
        };
        if !d.0.is_empty() {
            return Err(d.0);
        }
        let cfg = SimConfig {
            seed: seed_override.unwrap_or(self.metadata.seed),
            body,
            rotation_rate: rotation,
            sun,
            step: s.step_s,
            coarse_step: s.coarse_step_s,
            block: s.block_s,
            telemetry_cadence: s.telemetry_cadence_s,
            actors,
            activities,
            transfers,
            federated,
        };
        // cross-reference checks that need the assembled actors (links etc.)
        crate::sim::Simulation::new(cfg.clone()).map_err(|e| vec![e.to_string()])?;
        Ok(cfg)
    }
}
