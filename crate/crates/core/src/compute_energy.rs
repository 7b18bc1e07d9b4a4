//! Inference energy accounting from synaptic-operation and neuron-update counts.
//!
//! Per layer, `E_s = E_o · Σ S_N · f_in · N_t · Δt` and `E_n = E_u · N_n · N_t`;
//! a model costs the sum of both terms over its layers. Conventional (non-spiking)
//! networks use `f_in = 1/Δt` and `N_t = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("model has no layers")]
    EmptyModel,
    #[error("layer {0}: rate must be >= 0, timesteps >= 1 and dt > 0")]
    Layer(usize),
    #[error("device preset {0:?}: energies must be non-negative")]
    Device(String),
    #[error("unknown device preset {0:?}")]
    UnknownDevice(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec<T> {
    pub n_neurons: u64,
    /// Synapse count per neuron.
    pub synapses_per_neuron: Vec<u64>,
    /// Mean input spike rate f_in, 1/s.
    pub mean_rate: T,
    /// Simulation timesteps N_t.
    pub timesteps: u64,
    /// Timestep width Δt, s.
    pub dt: T,
}

impl<T: Scalar> LayerSpec<T> {
    /// Non-spiking layer: one timestep at rate `1/dt`.
    pub fn ann(n_neurons: u64, synapses_per_neuron: Vec<u64>, dt: T) -> Self {
        Self {
            n_neurons,
            synapses_per_neuron,
            mean_rate: T::one() / dt,
            timesteps: 1,
            dt,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.mean_rate >= T::zero() && self.mean_rate.is_finite() && self.timesteps >= 1 && self.dt > T::zero() {
            Ok(())
        } else {
            Err(EnergyError::Layer(0))
        }
    }

    pub fn total_synapses(&self) -> u64 {
        self.synapses_per_neuron.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePreset<T> {
    pub name: String,
    /// Energy per synaptic operation E_o, J.
    pub e_synop: T,
    /// Energy per neuron update E_u, J.
    pub e_update: T,
}

impl<T: Scalar> DevicePreset<T> {
    pub fn new(name: &str, e_synop: T, e_update: T) -> Result<Self, EnergyError> {
        if e_synop >= T::zero() && e_update >= T::zero() {
            Ok(Self {
                name: name.to_string(),
                e_synop,
                e_update,
            })
        } else {
            Err(EnergyError::Device(name.to_string()))
        }
    }

    /// Per-operation energies commonly used for relative hardware comparisons.
    pub fn builtin() -> Vec<Self> {
        [
            ("cpu", 8.6e-9, 8.6e-9),
            ("gpu", 0.3e-9, 0.3e-9),
            ("arm", 0.9e-9, 0.9e-9),
            ("loihi", 23.6e-12, 81e-12),
            ("spinnaker", 13.3e-9, 10e-9),
            ("spinnaker2", 450e-12, 2.19e-9),
        ]
        .into_iter()
        .map(|(n, o, u)| Self::new(n, T::lit(o), T::lit(u)).expect("non-negative"))
        .collect()
    }

    pub fn by_name(name: &str) -> Result<Self, EnergyError> {
        Self::builtin()
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| EnergyError::UnknownDevice(name.to_string()))
    }
}

/// Measured whole-inference energies (J per image) for an EuroSAT classifier.
pub const INFERENCE_ENERGY_PRESETS: &[(&str, f64)] = &[
    ("ann_gpu", 0.06996),
    ("ann_loihi", 0.00636),
    ("snn_best_accuracy_loihi", 0.00444),
    ("snn_prewitt_lowest_energy_loihi", 0.00205),
    ("snn_prewitt_highest_accuracy_loihi", 0.00476),
];

pub fn inference_energy_preset(name: &str) -> Option<f64> {
    INFERENCE_ENERGY_PRESETS.iter().find(|(n, _)| *n == name).map(|(_, e)| *e)
}

/// Synaptic energy E_s of one layer.
pub fn synaptic_energy<T: Scalar>(layer: &LayerSpec<T>, dev: &DevicePreset<T>) -> T {
    dev.e_synop * T::count(layer.total_synapses()) * layer.mean_rate * T::count(layer.timesteps) * layer.dt
}

/// Neuron-update energy E_n of one layer.
pub fn neuron_energy<T: Scalar>(layer: &LayerSpec<T>, dev: &DevicePreset<T>) -> T {
    dev.e_update * T::count(layer.n_neurons) * T::count(layer.timesteps)
}

/// Σ (E_s + E_n) over the layers of a model.
pub fn model_energy<T: Scalar>(layers: &[LayerSpec<T>], dev: &DevicePreset<T>) -> Result<T, EnergyError> {
    if layers.is_empty() {
        return Err(EnergyError::EmptyModel);
    }
    layers.iter().enumerate().try_fold(T::zero(), |acc, (i, l)| {
        l.validate().map_err(|_| EnergyError::Layer(i))?;
        Ok(acc + synaptic_energy(l, dev) + neuron_energy(l, dev))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(e_o: f64, e_u: f64) -> DevicePreset<f64> {
        DevicePreset::new("test", e_o, e_u).unwrap()
    }

    fn layer(synapses: u64, rate: f64, nt: u64, dt: f64, neurons: u64) -> LayerSpec<f64> {
        LayerSpec {
            n_neurons: neurons,
            synapses_per_neuron: vec![synapses],
            mean_rate: rate,
            timesteps: nt,
            dt,
        }
    }

    #[test]
    fn synaptic_substitution() {
        let e = synaptic_energy(&layer(100_000, 10.0, 4, 0.01, 0), &dev(1e-9, 0.0));
        assert!((e - 4e-5).abs() < 1e-18);
        assert_eq!(synaptic_energy(&layer(100_000, 0.0, 4, 0.01, 0), &dev(1e-9, 0.0)), 0.0);
    }

    #[test]
    fn ann_mode() {
        let l = LayerSpec::ann(0, vec![100_000], 0.01);
        let e = synaptic_energy(&l, &dev(1e-9, 0.0));
        assert!((e - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn neuron_substitution() {
        let d = dev(0.0, 1e-10);
        assert!((neuron_energy(&layer(0, 0.0, 4, 1.0, 1000), &d) - 4e-7).abs() < 1e-20);
        let one = neuron_energy(&layer(0, 0.0, 1, 1.0, 1000), &d);
        let two = neuron_energy(&layer(0, 0.0, 2, 1.0, 1000), &d);
        assert_eq!(2.0 * one, two);
        assert_eq!(neuron_energy(&layer(0, 0.0, 4, 1.0, 0), &d), 0.0);
    }

    #[test]
    fn model_sums_layers() {
        let d = dev(1e-9, 1e-10);
        let l = layer(500, 20.0, 8, 0.005, 300);
        let single = model_energy(std::slice::from_ref(&l), &d).unwrap();
        assert_eq!(single, synaptic_energy(&l, &d) + neuron_energy(&l, &d));
        assert_eq!(model_energy::<f64>(&[], &d), Err(EnergyError::EmptyModel));
    }

    #[test]
    fn bad_layer_rejected() {
        let d = dev(1e-9, 1e-10);
        let bad = layer(1, 1.0, 0, 0.01, 1);
        assert_eq!(model_energy(&[layer(1, 1.0, 1, 0.01, 1), bad], &d), Err(EnergyError::Layer(1)));
        assert!(DevicePreset::new("neg", -1.0f64, 0.0).is_err());
    }

    #[test]
    fn presets_available() {
        assert_eq!(inference_energy_preset("ann_gpu"), Some(0.06996));
        assert_eq!(inference_energy_preset("snn_prewitt_lowest_energy_loihi"), Some(0.00205));
        assert!(DevicePreset::<f64>::by_name("loihi").is_ok());
        assert!(DevicePreset::<f32>::by_name("tpu").is_err());
    }
}
