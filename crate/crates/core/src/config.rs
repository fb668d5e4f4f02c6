//! Vehicle configuration files.
//!
//! A configuration holds the shared vehicle, motor and battery data plus one
//! transmission section per drivetrain, each with an optional mass override:
//!
//! ```json
//! {
//!   "vehicle": { "m_tot_kg": 1341.0, ... },
//!   "motor": { ... },
//!   "battery": { "alpha_b_per_watt": 5e-8, "E_b0_J": 1.6e6, "N_laps": 1 },
//!   "sr": { "transmission": { "kind": "sr", ... } },
//!   "cvt": { "transmission": { "kind": "cvt", ... }, "m_tot_kg": 1395.0 }
//! }
//! ```

use crate::fixtures;
use crate::optimizer::AlgorithmSettings;
use crate::powertrain::{BatteryModel, MotorModel, ParamError, TransmissionKind, TransmissionSpec, VehicleParams};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read configuration: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("transmission section `{section}` declares kind `{kind}`")]
    KindMismatch { section: &'static str, kind: TransmissionKind },
    #[error("invalid algorithm settings: {0}")]
    Algorithm(String),
}

/// A complete vehicle description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub vehicle: VehicleParams,
    pub transmission: TransmissionSpec,
    pub motor: MotorModel,
    pub battery: BatteryModel,
}

impl Setup {
    pub fn with_budget(mut self, joules: f64) -> Self {
        self.battery = BatteryModel::with_lap_budget(self.battery.alpha_b, joules, self.battery.n_laps);
        self
    }

    pub fn with_eta_gb(mut self, eta: f64) -> Self {
        self.transmission.eta_gb = eta;
        self
    }

    pub fn with_mass(mut self, m_tot: f64) -> Self {
        self.vehicle.m_tot = m_tot;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.vehicle.validate()?;
        self.transmission.validate()?;
        self.motor.validate()?;
        self.battery.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionConfig {
    pub transmission: TransmissionSpec,
    /// Replaces the shared vehicle mass for this drivetrain.
    #[serde(rename = "m_tot_kg", default, skip_serializing_if = "Option::is_none")]
    pub m_tot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleConfig {
    pub vehicle: VehicleParams,
    pub motor: MotorModel,
    pub battery: BatteryModel,
    pub sr: TransmissionConfig,
    pub cvt: TransmissionConfig,
    #[serde(default)]
    pub algorithm: AlgorithmSettings,
}

impl VehicleConfig {
    /// The built-in reference vehicles.
    pub fn reference() -> Self {
        let sr = fixtures::sr_setup();
        let cvt = fixtures::cvt_setup();
        VehicleConfig {
            vehicle: sr.vehicle,
            motor: sr.motor,
            battery: sr.battery,
            sr: TransmissionConfig {
                transmission: sr.transmission,
                m_tot: None,
            },
            cvt: TransmissionConfig {
                transmission: cvt.transmission,
                m_tot: Some(cvt.vehicle.m_tot),
            },
            algorithm: AlgorithmSettings::default(),
        }
    }

    pub fn from_reader(r: impl Read) -> Result<Self, ConfigError> {
        let cfg: VehicleConfig = serde_json::from_reader(r)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, w: impl Write) -> Result<(), ConfigError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (section, t, kind) in [
            ("sr", &self.sr, TransmissionKind::Sr),
            ("cvt", &self.cvt, TransmissionKind::Cvt),
        ] {
            if t.transmission.kind != kind {
                return Err(ConfigError::KindMismatch {
                    section,
                    kind: t.transmission.kind,
                });
            }
            self.setup(kind).validate()?;
        }
        self.algorithm.validate().map_err(ConfigError::Algorithm)
    }

    /// Full description of one drivetrain.
    pub fn setup(&self, kind: TransmissionKind) -> Setup {
        let t = match kind {
            TransmissionKind::Sr => &self.sr,
            TransmissionKind::Cvt => &self.cvt,
        };
        let mut vehicle = self.vehicle;
        if let Some(m) = t.m_tot {
            vehicle.m_tot = m;
        }
        Setup {
            vehicle,
            transmission: t.transmission,
            motor: self.motor,
            battery: self.battery,
        }
    }
}
