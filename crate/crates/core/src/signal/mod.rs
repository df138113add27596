//! Synthetic wireless signals: WiFi CSI, RFID backscatter power, and FMCW
//! radar IF cubes with range-Doppler processing.

mod csi;
mod fmcw;
mod rfid;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;

pub use csi::{synth_csi_sequence, CsiScene, CsiSequence, DelayTrajectory, DynamicPath, StaticPath};
pub use fmcw::{
    beat_frequency, fmcw_angles, fmcw_range, fmcw_velocity, range_doppler_map,
    spherical_to_cartesian, synth_fmcw_cube, synth_fmcw_features, target_position, Cartesian,
    FmcwFrame, FmcwParams, FmcwScene, FmcwTarget, RangeDopplerMap,
};
pub use rfid::{rfid_received_power, synth_rfid_sequence, RfidLink, RfidScene, RfidTag};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Real-valued per-sample features, `time x channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub sample_rate: f64,
    pub values: Matrix,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }
}

pub(crate) fn check_finite(name: &str, x: f64) -> crate::Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(crate::error::invalid(format!("{name} must be finite, got {x}")))
    }
}
