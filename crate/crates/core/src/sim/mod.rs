//! Simulated two-arm cell: one arm holds the glass on a force-torque sensor,
//! the other takes, tilts and puts back bottles.

mod execute;
mod pour;

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use execute::{execute, ActionDurations, ActionEvent, ExecError, ExecutionFailure, ExecutionReport, MassBalance};
pub use pour::{pour_closed_loop, PourControllerConfig, PourError, PourFailure, PourOutcome, PourSample, PourTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlassArm {
    pub holding_glass: bool,
    /// Liquid mass in the glass.
    pub glass_mass_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleArm {
    pub held: Option<String>,
    pub tilt_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleState {
    pub label: String,
    pub initial_ml: f64,
    pub remaining_ml: f64,
    pub density_g_per_ml: f64,
}

impl BottleState {
    pub fn mass_lost_g(&self) -> f64 {
        (self.initial_ml - self.remaining_ml) * self.density_g_per_ml
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub glass_arm: GlassArm,
    pub bottle_arm: BottleArm,
    /// Keyed by item id.
    pub bottles: BTreeMap<String, BottleState>,
    pub clock_s: f64,
}

impl CellState {
    pub fn new(bottles: BTreeMap<String, BottleState>) -> Self {
        CellState {
            glass_arm: GlassArm { holding_glass: false, glass_mass_g: 0.0 },
            bottle_arm: BottleArm { held: None, tilt_rad: 0.0 },
            bottles,
            clock_s: 0.0,
        }
    }

    pub fn held_bottle(&self) -> Option<&BottleState> {
        self.bottle_arm.held.as_ref().and_then(|id| self.bottles.get(id))
    }

    pub fn set_tilt(&mut self, tilt_rad: f64) {
        self.bottle_arm.tilt_rad = tilt_rad.clamp(0.0, FRAC_PI_2);
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimError {
    #[error("no bottle is held")]
    NoBottleHeld,
}

/// Outflow linear in tilt above the pour threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowModel {
    pub q_max_ml_per_s: f64,
    pub theta_min_rad: f64,
}

impl Default for FlowModel {
    fn default() -> Self {
        FlowModel { q_max_ml_per_s: 30.0, theta_min_rad: 0.35 }
    }
}

impl FlowModel {
    pub fn rate_ml_per_s(&self, tilt_rad: f64) -> f64 {
        let span = FRAC_PI_2 - self.theta_min_rad;
        self.q_max_ml_per_s * ((tilt_rad - self.theta_min_rad) / span).max(0.0)
    }
}

/// Advances the held bottle's outflow by `dt`. Returns the volume moved.
pub fn step_flow(state: &mut CellState, flow: &FlowModel, dt: f64) -> Result<f64, SimError> {
    let tilt = state.bottle_arm.tilt_rad;
    let id = state.bottle_arm.held.as_ref().ok_or(SimError::NoBottleHeld)?;
    let bottle = state.bottles.get_mut(id).ok_or(SimError::NoBottleHeld)?;
    let poured_ml = (flow.rate_ml_per_s(tilt) * dt).min(bottle.remaining_ml);
    bottle.remaining_ml -= poured_ml;
    state.glass_arm.glass_mass_g += poured_ml * bottle.density_g_per_ml;
    state.clock_s += dt;
    Ok(poured_ml)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtSensorModel {
    pub tare_g: f64,
    pub noise_sigma_g: f64,
    pub sample_period_s: f64,
    pub latency_samples: usize,
}

impl Default for FtSensorModel {
    fn default() -> Self {
        FtSensorModel { tare_g: 0.0, noise_sigma_g: 0.5, sample_period_s: 0.01, latency_samples: 5 }
    }
}

impl FtSensorModel {
    pub fn noiseless() -> Self {
        FtSensorModel { noise_sigma_g: 0.0, latency_samples: 0, ..Self::default() }
    }

    /// Reading for an already delayed true mass.
    pub fn read<R: Rng + ?Sized>(&self, delayed_mass_g: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.tare_g + delayed_mass_g + self.noise_sigma_g * z
    }
}

/// Sensor with its latency line. Each call to [`FtSensor::sample`] is one sample period.
#[derive(Debug, Clone)]
pub struct FtSensor {
    model: FtSensorModel,
    line: VecDeque<f64>,
}

impl FtSensor {
    pub fn new(model: FtSensorModel, current_mass_g: f64) -> Self {
        let line = std::iter::repeat_n(current_mass_g, model.latency_samples).collect();
        FtSensor { model, line }
    }

    /// Zeroes the reading at the current true mass.
    pub fn tare(&mut self, current_mass_g: f64) {
        self.model.tare_g = -current_mass_g;
        self.line.iter_mut().for_each(|m| *m = current_mass_g);
    }

    pub fn model(&self) -> &FtSensorModel {
        &self.model
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, true_mass_g: f64, rng: &mut R) -> f64 {
        self.line.push_back(true_mass_g);
        let delayed = self.line.pop_front().expect("latency line is never empty");
        self.model.read(delayed, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimConfig {
    pub flow: FlowModel,
    pub sensor: FtSensorModel,
    pub durations: ActionDurations,
    pub controller: PourControllerConfig,
}

impl SimConfig {
    pub fn noiseless() -> Self {
        SimConfig { sensor: FtSensorModel::noiseless(), ..Self::default() }
    }
}
