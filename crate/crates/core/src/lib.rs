//! Minimum-lap-time control of electric race cars with single-ratio or
//! continuously variable transmissions.

pub mod config;
pub mod fitting;
pub mod fixtures;
pub mod optimizer;
pub mod powertrain;
pub mod track;
pub mod transcription;
