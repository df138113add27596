//! FMCW range, velocity and angle observables, IF-cube synthesis and
//! range-Doppler processing.
//!
//! Fast-time samples are taken uniformly across one chirp, so range bin `k`
//! corresponds to a beat frequency of `k / T_c` and a range of `k * c / (2B)`.
//! The Doppler axis of a [`RangeDopplerMap`] is centred: column `M/2` is zero
//! velocity. No window is applied.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{check_finite, FeatureSequence, SPEED_OF_LIGHT};
use crate::autodiff::Matrix;
use crate::error::{invalid, AngleKind, Error, Result};

fn default_light_speed() -> f64 {
    SPEED_OF_LIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmcwParams {
    /// Sweep bandwidth `B` (Hz).
    pub bandwidth: f64,
    /// Chirp duration `T_c` (s).
    pub chirp_duration: f64,
    /// Carrier wavelength (m).
    pub carrier_wavelength: f64,
    pub num_chirps: usize,
    pub samples_per_chirp: usize,
    #[serde(default = "default_light_speed")]
    pub light_speed: f64,
    /// Std of complex white noise added to every IF sample.
    #[serde(default)]
    pub noise_std: f64,
}

impl FmcwParams {
    pub fn new(
        bandwidth: f64,
        chirp_duration: f64,
        carrier_wavelength: f64,
        num_chirps: usize,
        samples_per_chirp: usize,
    ) -> Self {
        Self {
            bandwidth,
            chirp_duration,
            carrier_wavelength,
            num_chirps,
            samples_per_chirp,
            light_speed: SPEED_OF_LIGHT,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(invalid(format!("bandwidth must be > 0, got {}", self.bandwidth)));
        }
        if !(self.chirp_duration > 0.0 && self.chirp_duration.is_finite()) {
            return Err(invalid(format!(
                "chirp duration must be > 0, got {}",
                self.chirp_duration
            )));
        }
        if !(self.carrier_wavelength > 0.0 && self.carrier_wavelength.is_finite()) {
            return Err(invalid("carrier wavelength must be > 0"));
        }
        if self.num_chirps < 2 || self.samples_per_chirp < 2 {
            return Err(invalid("need at least 2 chirps and 2 samples per chirp"));
        }
        if !(self.light_speed > 0.0) || !(self.noise_std >= 0.0) {
            return Err(invalid("light speed must be > 0 and noise std >= 0"));
        }
        Ok(())
    }

    /// `c / (2B)`.
    pub fn range_resolution(&self) -> f64 {
        self.light_speed / (2.0 * self.bandwidth)
    }

    /// `lambda / (2 M T_c)`.
    pub fn velocity_resolution(&self) -> f64 {
        self.carrier_wavelength / (2.0 * self.num_chirps as f64 * self.chirp_duration)
    }

    /// Largest range accepted by [`synth_fmcw_cube`]: `c N / (4B)`.
    pub fn max_range(&self) -> f64 {
        self.light_speed * self.samples_per_chirp as f64 / (4.0 * self.bandwidth)
    }

    /// Largest unaliased speed: `lambda / (4 T_c)`.
    pub fn max_velocity(&self) -> f64 {
        self.carrier_wavelength / (4.0 * self.chirp_duration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmcwTarget {
    pub range: f64,
    pub radial_velocity: f64,
    #[serde(default)]
    pub elevation_phase: f64,
    #[serde(default)]
    pub azimuth_phase: f64,
    pub reflectivity: f64,
}

impl FmcwTarget {
    pub fn new(range: f64, radial_velocity: f64, reflectivity: f64) -> Self {
        Self {
            range,
            radial_velocity,
            elevation_phase: 0.0,
            azimuth_phase: 0.0,
            reflectivity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(invalid(format!("target range must be > 0, got {}", self.range)));
        }
        check_finite("radial velocity", self.radial_velocity)?;
        check_finite("reflectivity", self.reflectivity)?;
        if !(self.elevation_phase.abs() <= PI) || !(self.azimuth_phase.abs() <= PI) {
            return Err(invalid("antenna phase differences must lie in [-pi, pi]"));
        }
        Ok(())
    }
}

/// `R = c * delta_f * T_c / (2B)`.
pub fn fmcw_range(delta_f: f64, params: &FmcwParams) -> Result<f64> {
    check_finite("frequency offset", delta_f)?;
    if delta_f < 0.0 {
        return Err(invalid(format!("frequency offset must be >= 0, got {delta_f}")));
    }
    Ok(params.light_speed * delta_f * params.chirp_duration / (2.0 * params.bandwidth))
}

/// `v = lambda * omega / (4 pi T_c)`; positive omega means positive velocity.
pub fn fmcw_velocity(omega: f64, params: &FmcwParams) -> Result<f64> {
    check_finite("phase change rate", omega)?;
    Ok(params.carrier_wavelength * omega / (4.0 * PI * params.chirp_duration))
}

/// Beat frequency of a target at `range`, the inverse of [`fmcw_range`].
pub fn beat_frequency(range: f64, params: &FmcwParams) -> f64 {
    2.0 * params.bandwidth * range / (params.light_speed * params.chirp_duration)
}

/// Elevation and azimuth from the vertical and horizontal antenna phase
/// differences: `phi = asin(wz / pi)`, `theta = asin(wx / (cos(phi) pi))`.
pub fn fmcw_angles(omega_z: f64, omega_x: f64) -> Result<(f64, f64)> {
    check_finite("elevation phase", omega_z)?;
    check_finite("azimuth phase", omega_x)?;
    let arg_phi = omega_z / PI;
    if arg_phi.abs() > 1.0 {
        return Err(Error::AngleDomain {
            angle: AngleKind::Elevation,
            argument: arg_phi,
        });
    }
    let phi = arg_phi.asin();
    let arg_theta = omega_x / (phi.cos() * PI);
    if !(arg_theta.abs() <= 1.0) {
        return Err(Error::AngleDomain {
            angle: AngleKind::Azimuth,
            argument: arg_theta,
        });
    }
    Ok((phi, arg_theta.asin()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cartesian {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Slack on the `y` radicand, relative to `R^2`, absorbed as rounding.
const RADICAND_TOLERANCE: f64 = 1e-12;

/// `x = R cos(phi) sin(theta)`, `z = R sin(phi)`, `y = sqrt(R^2 - x^2 - z^2)`.
///
/// `y` is always non-negative: a target behind the array cannot be
/// represented.
pub fn spherical_to_cartesian(range: f64, phi: f64, theta: f64) -> Result<Cartesian> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(invalid(format!("range must be > 0, got {range}")));
    }
    check_finite("phi", phi)?;
    check_finite("theta", theta)?;
    let x = range * phi.cos() * theta.sin();
    let z = range * phi.sin();
    let radicand = range * range - x * x - z * z;
    if radicand < -RADICAND_TOLERANCE * range * range {
        return Err(Error::NegativeRadicand { radicand });
    }
    Ok(Cartesian {
        x,
        y: radicand.max(0.0).sqrt(),
        z,
    })
}

/// Position of a target from its range and antenna phase differences.
pub fn target_position(target: &FmcwTarget) -> Result<Cartesian> {
    let (phi, theta) = fmcw_angles(target.elevation_phase, target.azimuth_phase)?;
    spherical_to_cartesian(target.range, phi, theta)
}

/// Complex IF samples `[chirp, sample]` for a set of point targets.
///
/// Each target contributes `a * exp(j(2 pi f_b n T_c / N + m w_d + phi0))`
/// where `f_b` is the beat frequency, `w_d = 4 pi v T_c / lambda` the
/// chirp-to-chirp Doppler phase and `phi0` a per-target phase drawn from
/// `seed`.
pub fn synth_fmcw_cube(
    params: &FmcwParams,
    targets: &[FmcwTarget],
    seed: u64,
) -> Result<Array2<Complex64>> {
    params.validate()?;
    if targets.is_empty() {
        return Err(invalid("at least one target is required"));
    }
    let max_range = params.max_range();
    for t in targets {
        t.validate()?;
        if t.range >= max_range {
            return Err(invalid(format!(
                "target range {} m is beyond the unambiguous range {max_range} m",
                t.range
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_phases: Vec<f64> = targets.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let (m_chirps, n_samples) = (params.num_chirps, params.samples_per_chirp);
    let mut cube = Array2::<Complex64>::zeros((m_chirps, n_samples));
    for (t, phi0) in targets.iter().zip(&initial_phases) {
        // Cycles per fast-time sample.
        let fast = beat_frequency(t.range, params) * params.chirp_duration / n_samples as f64;
        let doppler = 4.0 * PI * t.radial_velocity * params.chirp_duration / params.carrier_wavelength;
        for m in 0..m_chirps {
            for n in 0..n_samples {
                let phase = 2.0 * PI * fast * n as f64 + doppler * m as f64 + phi0;
                cube[(m, n)] += Complex64::from_polar(t.reflectivity, phase);
            }
        }
    }

    if params.noise_std > 0.0 {
        let normal = Normal::new(0.0, params.noise_std / 2f64.sqrt())
            .map_err(|e| invalid(e.to_string()))?;
        for v in cube.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(cube)
}

/// Range-Doppler magnitudes, `[range_bin, doppler_bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub magnitudes: Array2<f64>,
    pub range_resolution: f64,
    pub velocity_resolution: f64,
}

impl RangeDopplerMap {
    pub fn range_bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn doppler_bins(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn range_of_bin(&self, k: usize) -> f64 {
        k as f64 * self.range_resolution
    }

    /// Column `M/2` is zero velocity.
    pub fn velocity_of_bin(&self, j: usize) -> f64 {
        (j as f64 - (self.doppler_bins() / 2) as f64) * self.velocity_resolution
    }

    /// `(range_bin, doppler_bin)` of the largest magnitude; first wins on ties.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for ((k, j), &v) in self.magnitudes.indexed_iter() {
            if v > best.1 {
                best = ((k, j), v);
            }
        }
        best.0
    }

    /// Range (m) and radial velocity (m/s) at the peak cell.
    pub fn peak_estimate(&self) -> (f64, f64) {
        let (k, j) = self.peak();
        (self.range_of_bin(k), self.velocity_of_bin(j))
    }

    /// Sum over Doppler bins for every range bin.
    pub fn range_profile(&self) -> Vec<f64> {
        self.magnitudes.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Sum over range bins for every Doppler bin.
    pub fn doppler_profile(&self) -> Vec<f64> {
        self.magnitudes.columns().into_iter().map(|c| c.sum()).collect()
    }
}

/// Fast-time FFT per chirp, then slow-time FFT per range bin.
pub fn range_doppler_map(cube: &Array2<Complex64>, params: &FmcwParams) -> Result<RangeDopplerMap> {
    params.validate()?;
    let (m_chirps, n_samples) = cube.dim();
    if m_chirps != params.num_chirps || n_samples != params.samples_per_chirp {
        return Err(invalid(format!(
            "cube is {m_chirps}x{n_samples}, parameters expect {}x{}",
            params.num_chirps, params.samples_per_chirp
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fast = planner.plan_fft_forward(n_samples);
    let slow = planner.plan_fft_forward(m_chirps);

    // range_fft[k][m]: range bin k of chirp m.
    let mut range_fft = vec![vec![Complex64::new(0.0, 0.0); m_chirps]; n_samples];
    let mut row = vec![Complex64::new(0.0, 0.0); n_samples];
    for (m, chirp) in cube.rows().into_iter().enumerate() {
        row.iter_mut().zip(chirp).for_each(|(d, s)| *d = *s);
        fast.process(&mut row);
        for (k, v) in row.iter().enumerate() {
            range_fft[k][m] = *v;
        }
    }

    let half = m_chirps / 2;
    let mut magnitudes = Array2::<f64>::zeros((n_samples, m_chirps));
    for (k, slow_time) in range_fft.iter_mut().enumerate() {
        slow.process(slow_time);
        for (j, v) in slow_time.iter().enumerate() {
            magnitudes[(k, (j + half) % m_chirps)] = v.norm();
        }
    }

    Ok(RangeDopplerMap {
        magnitudes,
        range_resolution: params.range_resolution(),
        velocity_resolution: params.velocity_resolution(),
    })
}

/// One radar frame: the targets visible during a burst of chirps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmcwFrame {
    pub targets: Vec<FmcwTarget>,
}

/// A sequence of radar frames at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmcwScene {
    pub params: FmcwParams,
    pub frame_rate: f64,
    pub frames: Vec<FmcwFrame>,
}

/// Per-frame `ln(1 + profile)` of the range profile followed by the Doppler
/// profile, normalised by the cube size: `frames x (N + M)`.
pub fn synth_fmcw_features(scene: &FmcwScene, seed: u64) -> Result<FeatureSequence> {
    if scene.frames.is_empty() {
        return Err(invalid("FMCW scene has no frames"));
    }
    let p = &scene.params;
    let width = p.samples_per_chirp + p.num_chirps;
    let norm = (p.samples_per_chirp * p.num_chirps) as f64;
    let mut values = Matrix::zeros(scene.frames.len(), width);
    for (f, frame) in scene.frames.iter().enumerate() {
        let frame_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(f as u64);
        let cube = synth_fmcw_cube(p, &frame.targets, frame_seed)?;
        let map = range_doppler_map(&cube, p)?;
        let row = values.row_mut(f);
        for (dst, v) in row
            .iter_mut()
            .zip(map.range_profile().into_iter().chain(map.doppler_profile()))
        {
            *dst = (v / norm).ln_1p();
        }
    }
    Ok(FeatureSequence {
        sample_rate: scene.frame_rate,
        values,
    })
}
