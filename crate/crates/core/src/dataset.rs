//! Built-in synthetic activity datasets for every modality.
//!
//! A person performs periodic motions whose rate and extent depend on the
//! activity class. The motion drives the moving CSI path, the radar target
//! trajectory, or the per-tag RFID shadowing.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array_io::{read_real, write_real, ArrayHeader, DType};
use crate::autodiff::Matrix;
use crate::error::{invalid, io_err, json_err, Error, Result};
use crate::metrics::Segment;
use crate::signal::{
    synth_csi_sequence, synth_fmcw_features, synth_rfid_sequence, CsiScene, DelayTrajectory, DynamicPath,
    FeatureSequence, FmcwFrame, FmcwParams, FmcwScene, FmcwTarget, RfidScene, RfidTag, StaticPath,
    SPEED_OF_LIGHT,
};

pub const ACTIVITY_LABELS: [&str; 8] = ["walk", "wave", "sit", "run", "jump", "squat", "clap", "kick"];

/// Motion rate (Hz) and peak displacement (m) per class, in label order.
const PROFILES: [(f64, f64); 8] = [
    (1.0, 0.100),
    (2.0, 0.020),
    (0.5, 0.025),
    (2.2, 0.080),
    (1.5, 0.100),
    (0.6, 0.120),
    (3.0, 0.010),
    (1.8, 0.060),
];
const IDLE: (f64, f64) = (0.25, 0.004);
/// Per-sample relative jitter of rate and displacement.
const JITTER: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Har,
    Tal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Csi,
    Fmcw,
    Rfid,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Har => "har",
            Task::Tal => "tal",
        })
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Csi => "csi",
            Modality::Fmcw => "fmcw",
            Modality::Rfid => "rfid",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "har" => Ok(Task::Har),
            "tal" => Ok(Task::Tal),
            other => Err(invalid(format!("unknown task {other:?}"))),
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csi" => Ok(Modality::Csi),
            "fmcw" => Ok(Modality::Fmcw),
            "rfid" => Ok(Modality::Rfid),
            other => Err(invalid(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub task: Task,
    pub modality: Modality,
    pub classes: usize,
    /// Clips (HAR) or recordings (TAL) in the training split.
    pub train: usize,
    pub test: usize,
    /// Seconds per HAR clip.
    pub clip_duration: f64,
    /// Seconds per TAL recording.
    pub recording_duration: f64,
    /// Shortest and longest TAL action, seconds.
    pub action_duration: (f64, f64),
    /// Multiplier on every modality's measurement noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            task: Task::Har,
            modality: Modality::Csi,
            classes: 3,
            train: 200,
            test: 60,
            clip_duration: 2.0,
            recording_duration: 24.0,
            action_duration: (3.0, 6.0),
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=ACTIVITY_LABELS.len()).contains(&self.classes) {
            return Err(invalid(format!(
                "classes must be in 2..={}, got {}",
                ACTIVITY_LABELS.len(),
                self.classes
            )));
        }
        if self.train == 0 || self.test == 0 {
            return Err(invalid("both splits need at least one item"));
        }
        if !(self.clip_duration > 0.0 && self.recording_duration > 0.0) {
            return Err(invalid("durations must be > 0"));
        }
        let (lo, hi) = self.action_duration;
        if !(lo > 0.0 && hi >= lo && hi < self.recording_duration) {
            return Err(invalid("action durations must satisfy 0 < min <= max < recording"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid("noise_scale must be >= 0"));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        ACTIVITY_LABELS[..self.classes].iter().map(|s| s.to_string()).collect()
    }
}

/// Activity over time: `(start, end, class)` intervals, idle elsewhere.
#[derive(Debug, Clone, PartialEq)]
struct Schedule {
    intervals: Vec<(f64, f64, usize)>,
    /// Per-interval `(rate, displacement, phase)` after jitter.
    motion: Vec<(f64, f64, f64)>,
    idle_phase: f64,
}

impl Schedule {
    fn new<R: Rng>(intervals: Vec<(f64, f64, usize)>, rng: &mut R) -> Self {
        let motion = intervals
            .iter()
            .map(|&(_, _, c)| {
                let (f, a) = PROFILES[c];
                (
                    f * rng.random_range(1.0 - JITTER..1.0 + JITTER),
                    a * rng.random_range(1.0 - JITTER..1.0 + JITTER),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self {
            intervals,
            motion,
            idle_phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    /// Displacement (m) and its rate (m/s) at time `t`.
    fn motion_at(&self, t: f64) -> (f64, f64) {
        let active = self.intervals.iter().position(|&(s, e, _)| s <= t && t < e);
        let (f, a, phase, t0) = match active {
            Some(i) => {
                let (f, a, p) = self.motion[i];
                (f, a, p, self.intervals[i].0)
            }
            None => (IDLE.0, IDLE.1, self.idle_phase, 0.0),
        };
        let w = 2.0 * PI * f;
        let arg = w * (t - t0) + phase;
        (a * arg.sin(), a * w * arg.cos())
    }
}

fn csi_sequence<R: Rng>(schedule: &Schedule, duration: f64, noise: f64, rng: &mut R) -> Result<FeatureSequence> {
    let sample_rate = 100.0;
    let n = (duration * sample_rate).round() as usize;
    let base_path = rng.random_range(3.0..5.0);
    let delays = (0..n)
        .map(|i| (base_path + 2.0 * schedule.motion_at(i as f64 / sample_rate).0) / SPEED_OF_LIGHT)
        .collect();
    let static_paths = (0..3)
        .map(|_| StaticPath {
            gain: rng.random_range(0.3..1.0),
            delay: rng.random_range(5.0..15.0) / SPEED_OF_LIGHT,
            angle: rng.random_range(-0.8..0.8),
        })
        .collect();
    let scene = CsiScene {
        num_tx: 1,
        num_rx: 3,
        num_subcarriers: 16,
        subcarrier_freqs: CsiScene::subcarriers(5.32e9, 2.5e6, 16),
        static_paths,
        dynamic_path: DynamicPath {
            gain: rng.random_range(0.25..0.5),
            angle: rng.random_range(-0.5..0.5),
            trajectory: DelayTrajectory::Sampled { delays },
        },
        noise_std: 0.05 * noise,
        sample_rate,
        duration: n as f64 / sample_rate,
    };
    Ok(synth_csi_sequence(&scene, rng.random())?.amplitude_features())
}

fn fmcw_params(noise: f64) -> FmcwParams {
    let mut p = FmcwParams::new(1.5e9, 200e-6, 3.9e-3, 32, 64);
    p.noise_std = 0.5 * noise;
    p
}

fn fmcw_sequence<R: Rng>(schedule: &Schedule, duration: f64, noise: f64, rng: &mut R) -> Result<FeatureSequence> {
    let frame_rate = 20.0;
    let params = fmcw_params(noise);
    let r0 = rng.random_range(1.2..2.0);
    let clutter = FmcwTarget::new(rng.random_range(2.4..3.0), 0.0, rng.random_range(0.2..0.5));
    let frames = (0..(duration * frame_rate).round() as usize)
        .map(|i| {
            let (x, v) = schedule.motion_at(i as f64 / frame_rate);
            FmcwFrame {
                targets: vec![FmcwTarget::new(r0 + 4.0 * x, 4.0 * v, 1.0), clutter.clone()],
            }
        })
        .collect();
    let scene = FmcwScene {
        params,
        frame_rate,
        frames,
    };
    synth_fmcw_features(&scene, rng.random())
}

fn rfid_sequence<R: Rng>(schedule: &Schedule, duration: f64, noise: f64, rng: &mut R) -> Result<FeatureSequence> {
    let sample_rate = 50.0;
    let n = (duration * sample_rate).round() as usize;
    let tags: Vec<RfidTag> = (0..6)
        .map(|_| RfidTag {
            g_tag: rng.random_range(1.0..2.0),
            distance: rng.random_range(1.0..3.0),
        })
        .collect();
    let coupling: Vec<f64> = (0..tags.len()).map(|k| 100.0 * (1.0 + k as f64) / tags.len() as f64).collect();
    let perturbation = coupling
        .iter()
        .enumerate()
        .map(|(k, c)| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / sample_rate - 0.05 * k as f64;
                    let (x, _) = schedule.motion_at(t.max(0.0));
                    10f64.powf(c * x / 10.0)
                })
                .collect()
        })
        .collect();
    let scene = RfidScene {
        p_tx: 1.0,
        g_tx: 4.0,
        g_rx: 4.0,
        wavelength: 0.328,
        tags,
        perturbation,
        noise_db: 0.5 * noise,
        sample_rate,
        num_samples: n,
    };
    synth_rfid_sequence(&scene, rng.random())
}

fn synthesize<R: Rng>(
    modality: Modality,
    schedule: &Schedule,
    duration: f64,
    noise: f64,
    rng: &mut R,
) -> Result<FeatureSequence> {
    match modality {
        Modality::Csi => csi_sequence(schedule, duration, noise, rng),
        Modality::Fmcw => fmcw_sequence(schedule, duration, noise, rng),
        Modality::Rfid => rfid_sequence(schedule, duration, noise, rng),
    }
}

/// Independent generator per item, keyed by split and index.
fn item_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split as u64) << 40) | index as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Test = 1,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarSplit {
    pub sequences: Vec<FeatureSequence>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TalRecording {
    pub sequence: FeatureSequence,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitData {
    Har(HarSplit),
    Tal(Vec<TalRecording>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub labels: Vec<String>,
    pub train: SplitData,
    pub test: SplitData,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn har_split(spec: &DatasetSpec, split: Split, count: usize) -> Result<HarSplit> {
    let mut sequences = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % spec.classes;
        let mut rng = item_rng(spec.seed, split, i);
        let schedule = Schedule::new(vec![(0.0, spec.clip_duration, class)], &mut rng);
        sequences.push(synthesize(spec.modality, &schedule, spec.clip_duration, spec.noise_scale, &mut rng)?);
        labels.push(class);
    }
    Ok(HarSplit { sequences, labels })
}

/// Non-overlapping actions separated by at least one second of idle time.
fn tal_intervals<R: Rng>(spec: &DatasetSpec, rng: &mut R) -> Vec<(f64, f64, usize)> {
    let (lo, hi) = spec.action_duration;
    let mut out = Vec::new();
    let mut t = rng.random_range(0.5..2.0);
    loop {
        let len = rng.random_range(lo..=hi);
        if t + len > spec.recording_duration - 0.5 {
            break;
        }
        out.push((t, t + len, rng.random_range(0..spec.classes)));
        t += len + rng.random_range(1.0..3.0);
    }
    out
}

fn tal_split(spec: &DatasetSpec, split: Split, count: usize) -> Result<Vec<TalRecording>> {
    (0..count)
        .map(|i| {
            let mut rng = item_rng(spec.seed, split, i);
            let intervals = tal_intervals(spec, &mut rng);
            let segments = intervals
                .iter()
                .map(|&(s, e, c)| Segment::new(s, e, c))
                .collect::<Result<Vec<_>>>()?;
            let schedule = Schedule::new(intervals, &mut rng);
            let sequence = synthesize(
                spec.modality,
                &schedule,
                spec.recording_duration,
                spec.noise_scale,
                &mut rng,
            )?;
            Ok(TalRecording { sequence, segments })
        })
        .collect()
}

/// Generates both splits. HAR classes cycle through the label list so every
/// split is balanced up to one item per class.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let make = |split, count| -> Result<SplitData> {
        Ok(match spec.task {
            Task::Har => SplitData::Har(har_split(spec, split, count)?),
            Task::Tal => SplitData::Tal(tal_split(spec, split, count)?),
        })
    };
    Ok(Dataset {
        spec: spec.clone(),
        labels: spec.labels(),
        train: make(Split::Train, spec.train)?,
        test: make(Split::Test, spec.test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    spec: DatasetSpec,
    labels: Vec<String>,
    sample_rate: f64,
    channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Annotations {
    Har(Vec<usize>),
    Tal(Vec<Vec<Segment>>),
}

fn sequences_of(data: &SplitData) -> Vec<&FeatureSequence> {
    match data {
        SplitData::Har(h) => h.sequences.iter().collect(),
        SplitData::Tal(r) => r.iter().map(|r| &r.sequence).collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Writes `manifest.json`, `labels.json`, and one array file per sequence
/// under `train/` and `test/`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let first = sequences_of(&data.train)[0];
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            spec: data.spec.clone(),
            labels: data.labels.clone(),
            sample_rate: first.sample_rate,
            channels: first.channels(),
        },
    )?;
    let mut annotations = serde_json::Map::new();
    for split in Split::ALL {
        let split_dir = dir.join(split.name());
        fs::create_dir_all(&split_dir).map_err(io_err(&split_dir))?;
        for (i, seq) in sequences_of(data.split(split)).into_iter().enumerate() {
            let header = ArrayHeader::new(&[seq.len(), seq.channels()], DType::Float64, &["time", "channel"]);
            write_real(&split_dir.join(format!("{i:05}")), &header, seq.values.data())?;
        }
        let ann = match data.split(split) {
            SplitData::Har(h) => Annotations::Har(h.labels.clone()),
            SplitData::Tal(r) => Annotations::Tal(r.iter().map(|r| r.segments.clone()).collect()),
        };
        let value = serde_json::to_value(ann).map_err(json_err(dir))?;
        annotations.insert(split.name().to_string(), value);
    }
    write_json(&dir.join("labels.json"), &annotations)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let labels_path = dir.join("labels.json");
    let mut annotations: serde_json::Map<String, serde_json::Value> = read_json(&labels_path)?;
    let mut load = |split: Split| -> Result<SplitData> {
        let value = annotations
            .remove(split.name())
            .ok_or_else(|| invalid(format!("labels.json has no {:?} split", split.name())))?;
        let ann: Annotations = serde_json::from_value(value).map_err(json_err(&labels_path))?;
        let count = match &ann {
            Annotations::Har(l) => l.len(),
            Annotations::Tal(s) => s.len(),
        };
        let split_dir = dir.join(split.name());
        let sequences = (0..count)
            .map(|i| {
                let (header, values) = read_real(&split_dir.join(format!("{i:05}")))?;
                if header.shape.len() != 2 || header.shape[1] != manifest.channels {
                    return Err(Error::Shape(format!(
                        "{}/{i:05} has shape {:?}, expected [time, {}]",
                        split.name(),
                        header.shape,
                        manifest.channels
                    )));
                }
                Ok(FeatureSequence {
                    sample_rate: manifest.sample_rate,
                    values: Matrix::from_vec(header.shape[0], header.shape[1], values),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match (manifest.spec.task, ann) {
            (Task::Har, Annotations::Har(labels)) => {
                if let Some(&bad) = labels.iter().find(|&&c| c >= manifest.labels.len()) {
                    return Err(invalid(format!("label index {bad} out of range")));
                }
                SplitData::Har(HarSplit { sequences, labels })
            }
            (Task::Tal, Annotations::Tal(segs)) => {
                let mut recordings = Vec::with_capacity(segs.len());
                for (sequence, segments) in sequences.into_iter().zip(segs) {
                    segments.iter().try_for_each(Segment::validate)?;
                    recordings.push(TalRecording { sequence, segments });
                }
                SplitData::Tal(recordings)
            }
            _ => return Err(invalid("labels.json does not match the dataset task")),
        })
    };
    let train = load(Split::Train)?;
    let test = load(Split::Test)?;
    Ok(Dataset {
        spec: manifest.spec,
        labels: manifest.labels,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task, modality: Modality) -> DatasetSpec {
        DatasetSpec {
            task,
            modality,
            classes: 3,
            train: 6,
            test: 3,
            recording_duration: 16.0,
            seed: 7,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn har_counts_and_balance() {
        for modality in [Modality::Csi, Modality::Fmcw, Modality::Rfid] {
            let d = generate(&small(Task::Har, modality)).unwrap();
            let SplitData::Har(train) = &d.train else { panic!() };
            assert_eq!(train.sequences.len(), 6);
            assert_eq!(train.labels, vec![0, 1, 2, 0, 1, 2]);
            assert!(train.sequences.iter().all(|s| s.values.is_finite()));
        }
    }

    #[test]
    fn classes_differ_in_motion() {
        let d = generate(&DatasetSpec {
            train: 2,
            test: 1,
            classes: 2,
            noise_scale: 0.0,
            ..DatasetSpec::default()
        })
        .unwrap();
        let SplitData::Har(train) = &d.train else { panic!() };
        assert_ne!(train.sequences[0].values, train.sequences[1].values);
    }

    #[test]
    fn tal_segments_inside_recording() {
        let spec = small(Task::Tal, Modality::Rfid);
        let d = generate(&spec).unwrap();
        for split in Split::ALL {
            let SplitData::Tal(recs) = d.split(split) else { panic!() };
            for r in recs {
                assert!(!r.segments.is_empty());
                for s in &r.segments {
                    assert!(s.start >= 0.0 && s.end <= r.sequence.duration());
                    assert!(s.class_id < spec.classes);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        for task in [Task::Har, Task::Tal] {
            let spec = small(task, Modality::Csi);
            let a = generate(&spec).unwrap();
            assert_eq!(a, generate(&spec).unwrap());
            let dir = tempfile::tempdir().unwrap();
            write_dataset(dir.path(), &a).unwrap();
            assert_eq!(read_dataset(dir.path()).unwrap(), a);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(DatasetSpec {
            classes: 9,
            ..DatasetSpec::default()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            test: 0,
            ..DatasetSpec::default()
        }
        .validate()
        .is_err());
        assert_eq!("FMCW".parse::<Modality>().unwrap(), Modality::Fmcw);
    }
}
