//! Deterministic constellation-operations simulator.
//!
//! Spacecraft and ground stations are modelled as actors carrying orbital,
//! power, thermal, radiation and communication constraints. Federated-learning
//! rounds run on top of the simulated constellation with fp16 model payloads.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix them to `f64`, which is what the simulator uses.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod actors;
pub mod astrodynamics;
pub mod compute_energy;
pub mod fedlearn;
pub mod kernel;
pub mod links;
pub mod metrics;
pub mod resources;
pub mod report;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod vector;

pub use kernel::{ActorId, Epoch, EventKind, EventRecord, Kernel, SeededRng, StreamId};
pub use metrics::{cohens_kappa, competition_loss, ConfusionMatrix};
pub use scalar::Scalar;

pub type Vec3 = vector::Vec3<f64>;
pub type CentralBody = astrodynamics::CentralBody<f64>;
pub type KeplerianElements = astrodynamics::KeplerianElements<f64>;
pub type CartesianState = astrodynamics::CartesianState<f64>;
pub type SunModel = astrodynamics::SunModel<f64>;
pub type GroundStation = links::GroundStation<f64>;
pub type BatteryState = resources::BatteryState<f64>;
pub type SolarPanel = resources::SolarPanel<f64>;
pub type ThermalNode = resources::ThermalNode<f64>;
pub type LayerSpec = compute_energy::LayerSpec<f64>;
pub type DevicePreset = compute_energy::DevicePreset<f64>;
pub type ParamVector = fedlearn::ParamVector<f64>;
pub type ClientDataset = fedlearn::ClientDataset<f64>;
