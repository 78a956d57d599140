//! Closed-loop pour against the force-torque reading.
//!
//! The controller pours at full tilt until the filtered reading, plus the mass
//! still in flight through the sensor latency and filter lag, reaches
//! `fast_fraction` of the target. It then alternates settle-and-weigh (bottle
//! upright, long average of the stationary reading) with slow trims sized from
//! the weighed deficit, until the estimate sits inside the band.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{step_flow, CellState, FlowModel, FtSensor, FtSensorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PourControllerConfig {
    pub fast_fraction: f64,
    /// Slow phase tilt is `theta_min + slow_tilt_offset_rad`.
    pub slow_tilt_offset_rad: f64,
    /// Moving-average window for the fast-phase stop decision.
    pub filter_window: usize,
    /// Upright samples waited beyond the sensor latency before weighing.
    pub settle_extra_samples: usize,
    /// Weighings average enough samples that the estimate's standard error is
    /// the band half-width divided by this.
    pub weigh_sigma_multiple: f64,
    pub min_weigh_samples: usize,
    pub max_weigh_samples: usize,
    pub max_trims: usize,
    pub timeout_s: f64,
}

impl Default for PourControllerConfig {
    fn default() -> Self {
        PourControllerConfig {
            fast_fraction: 0.9,
            slow_tilt_offset_rad: 0.1,
            filter_window: 5,
            settle_extra_samples: 10,
            weigh_sigma_multiple: 4.0,
            min_weigh_samples: 20,
            max_weigh_samples: 2000,
            max_trims: 6,
            timeout_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PourSample {
    pub t_s: f64,
    /// Mass gained in the glass since the pour began.
    pub true_mass_g: f64,
    pub measured_g: f64,
    pub filtered_g: f64,
    pub tilt_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PourOutcome {
    pub final_mass_g: f64,
    pub within_tolerance: bool,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PourTrace {
    pub item_id: String,
    pub target_mass_g: f64,
    pub tolerance: f64,
    pub samples: Vec<PourSample>,
    pub outcome: PourOutcome,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PourError {
    #[error("no bottle is held")]
    NoBottleHeld,
    #[error("no glass is held")]
    NoGlassHeld,
    #[error("pour target must be positive")]
    InvalidTarget,
    #[error("bottle ran empty before the tolerance band was reachable")]
    BottleExhausted,
    #[error("pour timed out")]
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind}")]
pub struct PourFailure {
    pub kind: PourError,
    /// Samples recorded before the failure, if pouring had started.
    pub trace: Option<PourTrace>,
}

impl PourFailure {
    fn bare(kind: PourError) -> Self {
        PourFailure { kind, trace: None }
    }
}

struct Pour<'a, R: Rng + ?Sized> {
    state: &'a mut CellState,
    flow: &'a FlowModel,
    sensor: FtSensor,
    rng: &'a mut R,
    dt: f64,
    start_clock: f64,
    start_mass: f64,
    window: VecDeque<f64>,
    window_len: usize,
    samples: Vec<PourSample>,
    timeout_samples: usize,
}

impl<R: Rng + ?Sized> Pour<'_, R> {
    fn gained(&self) -> f64 {
        self.state.glass_arm.glass_mass_g - self.start_mass
    }

    fn bottle_empty(&self) -> bool {
        self.state.held_bottle().is_some_and(|b| b.remaining_ml <= 0.0)
    }

    /// One sample period at `tilt`. Returns the raw reading.
    fn tick(&mut self, tilt: f64) -> Result<f64, PourError> {
        if self.samples.len() >= self.timeout_samples {
            return Err(PourError::Timeout);
        }
        self.state.set_tilt(tilt);
        step_flow(self.state, self.flow, self.dt).map_err(|_| PourError::NoBottleHeld)?;
        let true_mass = self.state.glass_arm.glass_mass_g;
        let measured = self.sensor.sample(true_mass, self.rng);
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(measured);
        let filtered = self.window.iter().sum::<f64>() / self.window.len() as f64;
        let k = self.samples.len() + 1;
        self.samples.push(PourSample {
            t_s: self.start_clock + k as f64 * self.dt,
            true_mass_g: self.gained(),
            measured_g: measured,
            filtered_g: filtered,
            tilt_rad: self.state.bottle_arm.tilt_rad,
        });
        Ok(measured)
    }

    fn settle(&mut self, samples: usize) -> Result<(), PourError> {
        for _ in 0..samples {
            self.tick(0.0)?;
        }
        Ok(())
    }

    fn weigh(&mut self, samples: usize) -> Result<f64, PourError> {
        let mut sum = 0.0;
        for _ in 0..samples {
            sum += self.tick(0.0)?;
        }
        Ok(sum / samples as f64)
    }

    fn into_trace(self, item_id: String, target: f64, tolerance: f64) -> PourTrace {
        let final_mass_g = self.gained();
        PourTrace {
            item_id,
            target_mass_g: target,
            tolerance,
            outcome: PourOutcome {
                final_mass_g,
                within_tolerance: (final_mass_g - target).abs() <= tolerance * target,
                duration_s: self.samples.len() as f64 * self.dt,
            },
            samples: self.samples,
        }
    }
}

/// Pours `target_mass_g` from the held bottle into the held glass. The sensor
/// is tared at the start of every pour.
pub fn pour_closed_loop<R: Rng + ?Sized>(
    target_mass_g: f64,
    tolerance: f64,
    state: &mut CellState,
    sensor_model: &FtSensorModel,
    flow: &FlowModel,
    controller: &PourControllerConfig,
    rng: &mut R,
) -> Result<PourTrace, PourFailure> {
    if !(target_mass_g.is_finite() && target_mass_g > 0.0) {
        return Err(PourFailure::bare(PourError::InvalidTarget));
    }
    let Some(bottle) = state.held_bottle() else {
        return Err(PourFailure::bare(PourError::NoBottleHeld));
    };
    if !state.glass_arm.holding_glass {
        return Err(PourFailure::bare(PourError::NoGlassHeld));
    }
    let item_id = state.bottle_arm.held.clone().unwrap_or_default();
    let density = bottle.density_g_per_ml;
    let dt = sensor_model.sample_period_s;
    let latency = sensor_model.latency_samples;
    let window_len = controller.filter_window.max(1);
    let start_mass = state.glass_arm.glass_mass_g;
    let mut sensor = FtSensor::new(sensor_model.clone(), start_mass);
    sensor.tare(start_mass);

    let mut pour = Pour {
        start_clock: state.clock_s,
        state,
        flow,
        sensor,
        rng,
        dt,
        start_mass,
        window: VecDeque::with_capacity(window_len),
        window_len,
        samples: Vec::new(),
        timeout_samples: (controller.timeout_s / dt).floor() as usize,
    };

    let lower = target_mass_g * (1.0 - tolerance);
    let slow_tilt = flow.theta_min_rad + controller.slow_tilt_offset_rad;
    let fast_step_g = flow.rate_ml_per_s(FRAC_PI_2) * density * dt;
    let slow_step_g = flow.rate_ml_per_s(slow_tilt) * density * dt;
    let in_flight_g = fast_step_g * (latency as f64 + (window_len as f64 - 1.0) / 2.0);
    let fast_stop = controller.fast_fraction * target_mass_g - in_flight_g;
    let settle_samples = latency + controller.settle_extra_samples;
    let band_g = tolerance * target_mass_g;
    let weigh_samples = ((controller.weigh_sigma_multiple * sensor_model.noise_sigma_g / band_g).powi(2).ceil() as usize)
        .clamp(controller.min_weigh_samples.max(1), controller.max_weigh_samples.max(1));
    let done_margin = (0.25 * tolerance * target_mass_g).max(slow_step_g / 2.0);

    let result = (|| {
        if fast_stop > 0.0 {
            loop {
                pour.tick(FRAC_PI_2)?;
                if pour.bottle_empty() {
                    break;
                }
                let filtered = pour.samples.last().map(|s| s.filtered_g).unwrap_or(0.0);
                if filtered >= fast_stop {
                    break;
                }
            }
        }
        let mut trims = 0;
        loop {
            pour.settle(settle_samples)?;
            if pour.bottle_empty() && pour.gained() < lower {
                return Err(PourError::BottleExhausted);
            }
            let estimate = pour.weigh(weigh_samples)?;
            let deficit = target_mass_g - estimate;
            if deficit <= done_margin || trims == controller.max_trims || slow_step_g <= 0.0 {
                return Ok(());
            }
            if pour.bottle_empty() {
                return Ok(());
            }
            let steps = (deficit / slow_step_g).round().max(1.0) as usize;
            for _ in 0..steps {
                pour.tick(slow_tilt)?;
                if pour.bottle_empty() {
                    break;
                }
            }
            trims += 1;
        }
    })();

    pour.state.set_tilt(0.0);
    let trace = pour.into_trace(item_id, target_mass_g, tolerance);
    match result {
        Ok(()) => Ok(trace),
        Err(kind) => Err(PourFailure { kind, trace: Some(trace) }),
    }
}
