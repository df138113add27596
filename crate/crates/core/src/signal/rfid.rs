//! Backscatter link budget and tag-power sequences.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::autodiff::Matrix;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfidLink {
    /// Watts.
    pub p_tx: f64,
    pub g_tx: f64,
    pub g_rx: f64,
    pub g_tag: f64,
    /// Meters.
    pub wavelength: f64,
    /// Reader-to-tag distance, meters.
    pub distance: f64,
}

impl RfidLink {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("transmit power", self.p_tx),
            ("transmit gain", self.g_tx),
            ("receive gain", self.g_rx),
            ("tag gain", self.g_tag),
            ("wavelength", self.wavelength),
            ("distance", self.distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Power at the reader, `P_tx G_tx G_rx G_tag^2 (lambda / (4 pi d))^4`.
pub fn rfid_received_power(link: &RfidLink) -> Result<f64> {
    link.validate()?;
    let path = link.wavelength / (4.0 * PI * link.distance);
    Ok(link.p_tx * link.g_tx * link.g_rx * link.g_tag.powi(2) * path.powi(4))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfidTag {
    pub g_tag: f64,
    pub distance: f64,
}

/// A reader interrogating several tags while a person perturbs the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfidScene {
    pub p_tx: f64,
    pub g_tx: f64,
    pub g_rx: f64,
    pub wavelength: f64,
    pub tags: Vec<RfidTag>,
    /// Multiplicative power factor per tag per sample (shadowing and
    /// multipath from the person). Empty means unperturbed.
    #[serde(default)]
    pub perturbation: Vec<Vec<f64>>,
    /// Std of log-normal measurement noise, dB.
    pub noise_db: f64,
    pub sample_rate: f64,
    pub num_samples: usize,
}

/// Received power in dBm, `time x tag`.
pub fn synth_rfid_sequence(scene: &RfidScene, seed: u64) -> Result<FeatureSequence> {
    if scene.tags.is_empty() || scene.num_samples == 0 {
        return Err(invalid("need at least one tag and one sample"));
    }
    if !(scene.noise_db >= 0.0) || !(scene.sample_rate > 0.0) {
        return Err(invalid("noise must be >= 0 dB and sample rate > 0"));
    }
    if !scene.perturbation.is_empty() {
        if scene.perturbation.len() != scene.tags.len() {
            return Err(invalid("one perturbation row per tag"));
        }
        if let Some((i, _)) = scene
            .perturbation
            .iter()
            .enumerate()
            .find(|(_, row)| row.len() < scene.num_samples || row.iter().any(|v| !(*v > 0.0)))
        {
            return Err(invalid(format!(
                "perturbation for tag {i} must have {} positive factors",
                scene.num_samples
            )));
        }
    }

    let base: Vec<f64> = scene
        .tags
        .iter()
        .map(|tag| {
            rfid_received_power(&RfidLink {
                p_tx: scene.p_tx,
                g_tx: scene.g_tx,
                g_rx: scene.g_rx,
                g_tag: tag.g_tag,
                wavelength: scene.wavelength,
                distance: tag.distance,
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scene.noise_db).map_err(|e| invalid(e.to_string()))?;
    let mut values = Matrix::zeros(scene.num_samples, scene.tags.len());
    for t in 0..scene.num_samples {
        for (k, p0) in base.iter().enumerate() {
            let factor = scene.perturbation.get(k).map_or(1.0, |row| row[t]);
            let dbm = 10.0 * (p0 * factor * 1e3).log10();
            values[(t, k)] = dbm + if scene.noise_db > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        }
    }
    Ok(FeatureSequence {
        sample_rate: scene.sample_rate,
        values,
    })
}
