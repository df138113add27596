//! Path-sum WiFi channel: a few static reflectors plus one moving path.
//!
//! For subcarrier `i` at frequency `f_i`, antenna pair `(r, t)` and sample
//! `n`, the estimated channel is
//!
//! ```text
//! H = sum_p g_p exp(-j 2 pi f_i tau_p(n)) exp(j pi (r + t) sin(a_p)) + noise
//! ```
//!
//! with a unit pilot, so the estimate is the channel plus receiver noise.
//! The second factor is the half-wavelength array phase for a path arriving
//! at angle `a_p`.

use std::f64::consts::PI;

use ndarray::Array4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::autodiff::Matrix;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPath {
    pub gain: f64,
    /// Seconds.
    pub delay: f64,
    #[serde(default)]
    pub angle: f64,
}

/// Delay of the moving path as a function of the sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayTrajectory {
    Constant { delay: f64 },
    /// `initial + rate * t`, `rate` in seconds of delay per second.
    Linear { initial: f64, rate: f64 },
    /// `center + amplitude * sin(2 pi frequency t + phase)`.
    Sinusoidal {
        center: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// One delay per sample.
    Sampled { delays: Vec<f64> },
}

impl DelayTrajectory {
    pub fn delay_at(&self, n: usize, sample_rate: f64) -> f64 {
        let t = n as f64 / sample_rate;
        match self {
            DelayTrajectory::Constant { delay } => *delay,
            DelayTrajectory::Linear { initial, rate } => initial + rate * t,
            DelayTrajectory::Sinusoidal {
                center,
                amplitude,
                frequency,
                phase,
            } => center + amplitude * (2.0 * PI * frequency * t + phase).sin(),
            DelayTrajectory::Sampled { delays } => delays[n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicPath {
    pub gain: f64,
    #[serde(default)]
    pub angle: f64,
    pub trajectory: DelayTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiScene {
    pub num_tx: usize,
    pub num_rx: usize,
    pub num_subcarriers: usize,
    /// Hz, one per subcarrier.
    pub subcarrier_freqs: Vec<f64>,
    pub static_paths: Vec<StaticPath>,
    pub dynamic_path: DynamicPath,
    pub noise_std: f64,
    pub sample_rate: f64,
    /// Seconds.
    pub duration: f64,
}

impl CsiScene {
    /// Evenly spaced subcarriers centred on `center_hz`.
    pub fn subcarriers(center_hz: f64, spacing_hz: f64, count: usize) -> Vec<f64> {
        let mid = (count as f64 - 1.0) / 2.0;
        (0..count)
            .map(|i| center_hz + (i as f64 - mid) * spacing_hz)
            .collect()
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tx == 0 || self.num_rx == 0 || self.num_subcarriers == 0 {
            return Err(invalid("need at least one TX, RX and subcarrier"));
        }
        if self.subcarrier_freqs.len() != self.num_subcarriers {
            return Err(invalid(format!(
                "{} subcarrier frequencies for {} subcarriers",
                self.subcarrier_freqs.len(),
                self.num_subcarriers
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise std must be >= 0"));
        }
        if !(self.sample_rate > 0.0) || !(self.duration > 0.0) || self.num_samples() == 0 {
            return Err(invalid("sample rate and duration must give at least one sample"));
        }
        if self.static_paths.iter().any(|p| !(p.delay >= 0.0)) {
            return Err(invalid("static path delays must be >= 0"));
        }
        let n = self.num_samples();
        if let DelayTrajectory::Sampled { delays } = &self.dynamic_path.trajectory {
            if delays.len() < n {
                return Err(invalid(format!(
                    "sampled trajectory has {} delays, scene needs {n}",
                    delays.len()
                )));
            }
        }
        for i in 0..n {
            let d = self.dynamic_path.trajectory.delay_at(i, self.sample_rate);
            if !(d >= 0.0) {
                return Err(invalid(format!("dynamic path delay {d} at sample {i} is negative")));
            }
        }
        Ok(())
    }
}

/// Estimated CSI, `[time, subcarrier, rx, tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSequence {
    pub sample_rate: f64,
    pub data: Array4<Complex64>,
}

impl CsiSequence {
    /// `time x subcarrier` amplitude averaged over antenna pairs.
    pub fn amplitude_features(&self) -> FeatureSequence {
        let (t_len, sc, rx, tx) = self.data.dim();
        let pairs = (rx * tx) as f64;
        let mut values = Matrix::zeros(t_len, sc);
        for t in 0..t_len {
            for i in 0..sc {
                let mut acc = 0.0;
                for r in 0..rx {
                    for x in 0..tx {
                        acc += self.data[(t, i, r, x)].norm();
                    }
                }
                values[(t, i)] = acc / pairs;
            }
        }
        FeatureSequence {
            sample_rate: self.sample_rate,
            values,
        }
    }
}

fn array_phase(angle: f64, r: usize, t: usize) -> Complex64 {
    Complex64::from_polar(1.0, PI * (r + t) as f64 * angle.sin())
}

pub fn synth_csi_sequence(scene: &CsiScene, seed: u64) -> Result<CsiSequence> {
    scene.validate()?;
    let n = scene.num_samples();
    let (sc, rx, tx) = (scene.num_subcarriers, scene.num_rx, scene.num_tx);
    let mut data = Array4::<Complex64>::zeros((n, sc, rx, tx));

    // The static part does not depend on time.
    let mut static_part = Array4::<Complex64>::zeros((1, sc, rx, tx));
    for (i, &f) in scene.subcarrier_freqs.iter().enumerate() {
        for p in &scene.static_paths {
            let base = Complex64::from_polar(p.gain, -2.0 * PI * f * p.delay);
            for r in 0..rx {
                for t in 0..tx {
                    static_part[(0, i, r, t)] += base * array_phase(p.angle, r, t);
                }
            }
        }
    }

    let dynamic = &scene.dynamic_path;
    for step in 0..n {
        let delay = dynamic.trajectory.delay_at(step, scene.sample_rate);
        for (i, &f) in scene.subcarrier_freqs.iter().enumerate() {
            let moving = Complex64::from_polar(dynamic.gain, -2.0 * PI * f * delay);
            for r in 0..rx {
                for t in 0..tx {
                    data[(step, i, r, t)] =
                        static_part[(0, i, r, t)] + moving * array_phase(dynamic.angle, r, t);
                }
            }
        }
    }

    if scene.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scene.noise_std / 2f64.sqrt())
            .map_err(|e| invalid(e.to_string()))?;
        for v in data.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }

    Ok(CsiSequence {
        sample_rate: scene.sample_rate,
        data,
    })
}
