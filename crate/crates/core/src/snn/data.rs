use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::SpikeInput;
use super::train::Sample;
use super::SnnError;
use crate::events::{
    accumulate, add_background_noise, ball_footprint, ground_truth_label, read_evs, simulate_ball_events, write_evs,
    BallScene, EventSimConfig, EventStream, CLASS_GRID,
};
use crate::geometry::CameraModel;
use crate::physics::{simulate, BallState, PhysicsParams, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSettings {
    pub samples: usize,
    pub window_us: u32,
    /// Launch speed range along the table, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    pub max_spin_rps: f64,
    /// Uniform background events per pixel and second.
    pub noise_rate_hz: f64,
    pub scene: BallScene,
    pub events: EventSimConfig,
    pub seed: u64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            samples: 2000,
            window_us: 3200,
            speed_min: 3.0,
            speed_max: 12.0,
            max_spin_rps: 80.0,
            noise_rate_hz: 0.0,
            scene: BallScene::default(),
            events: EventSimConfig::default(),
            seed: 0,
        }
    }
}

/// Events of one window, with times relative to the window start, and the
/// ball's grid class at the window midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSample {
    pub events: EventStream,
    pub label: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    pub window_us: u32,
    pub samples: Vec<EventSample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    window_us: u32,
    samples: usize,
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    let mut h = (seed ^ 0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// A rally-like flight from one end of the table towards the other.
fn random_flight(rng: &mut ChaCha8Rng, s: &DatasetSettings) -> Option<Trajectory> {
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let p0 = Vector3::new(-side * 1.6, rng.gen_range(-0.6..0.6), rng.gen_range(0.15..0.45));
    let v0 = Vector3::new(side * rng.gen_range(s.speed_min..s.speed_max), rng.gen_range(-1.5..1.5), rng.gen_range(-0.5..3.0));
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let omega = axis.try_normalize(1e-6).unwrap_or(Vector3::z()) * rng.gen_range(0.0..s.max_spin_rps) * std::f64::consts::TAU;
    simulate(&BallState::new(0.0, p0, v0, omega), &PhysicsParams::default(), 0.45, 2e-4).ok()
}

fn draw_sample(camera: &CameraModel, s: &DatasetSettings, seed: u64) -> Result<EventSample, SnnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visible = |traj: &Trajectory, t_us: f64| {
        traj.position_at(t_us * 1e-6)
            .filter(|p| p.z > -0.3)
            .and_then(|p| ball_footprint(camera, &p, s.scene.ball_radius_m))
            .is_some_and(|(c, _)| camera.intrinsics.contains(&c))
    };
    loop {
        let Some(traj) = random_flight(&mut rng, s) else { continue };
        let t0_us = rng.gen_range(20_000..400_000u32);
        let t1 = t0_us as f64 + s.window_us as f64;
        if !(visible(&traj, t0_us as f64) && visible(&traj, t1)) {
            continue;
        }
        let Ok(label) = ground_truth_label(&traj, camera, t0_us, s.window_us) else { continue };
        let mut stream = simulate_ball_events(camera, &traj, t0_us, s.window_us, &s.scene, s.events)?;
        stream.events.retain(|e| e.t >= t0_us && (e.t as f64) < t1);
        stream.events.iter_mut().for_each(|e| e.t -= t0_us);
        add_background_noise(&mut stream, s.noise_rate_hz, 0, s.window_us, &mut rng);
        if stream.events.is_empty() {
            continue;
        }
        return Ok(EventSample { events: stream, label });
    }
}

/// Event windows of random ball flights seen by `camera`. Each sample is
/// seeded independently, so the set is reproducible and a prefix of a
/// larger set with the same seed.
pub fn synthesize_dataset(camera: &CameraModel, settings: &DatasetSettings) -> Result<EventDataset, SnnError> {
    if settings.samples == 0 {
        return Err(SnnError::EmptyDataset);
    }
    if !(settings.speed_min > 0.0 && settings.speed_max > settings.speed_min) {
        return Err(SnnError::InvalidConfig("speed range must satisfy 0 < min < max".into()));
    }
    let samples = (0..settings.samples)
        .into_par_iter()
        .map(|i| draw_sample(camera, settings, sample_seed(settings.seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EventDataset { window_us: settings.window_us, samples })
}

impl EventDataset {
    /// Writes `dataset.json`, `labels.csv` (`sample,x,y,events`) and one
    /// `sample_NNNNN.evs` file per sample.
    pub fn save(&self, dir: &Path) -> Result<(), SnnError> {
        let io = |e: std::io::Error| SnnError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let meta = DatasetMeta { window_us: self.window_us, samples: self.samples.len() };
        std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))
            .map_err(io)?;
        let mut wr = csv::Writer::from_path(dir.join("labels.csv")).map_err(|e| SnnError::Io(e.to_string()))?;
        wr.write_record(["sample", "x", "y", "events"]).map_err(|e| SnnError::Io(e.to_string()))?;
        for (i, s) in self.samples.iter().enumerate() {
            wr.serialize((i, s.label.0, s.label.1, s.events.len())).map_err(|e| SnnError::Io(e.to_string()))?;
            let f = File::create(dir.join(format!("sample_{i:05}.evs"))).map_err(io)?;
            write_evs(&s.events, BufWriter::new(f))?;
        }
        wr.flush().map_err(io)
    }

    pub fn load(dir: &Path) -> Result<EventDataset, SnnError> {
        let io = |e: std::io::Error| SnnError::Io(format!("{}: {e}", dir.display()));
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json")).map_err(io)?)
            .map_err(|e| SnnError::Format(e.to_string()))?;
        let mut rd = csv::Reader::from_path(dir.join("labels.csv")).map_err(|e| SnnError::Io(e.to_string()))?;
        let mut samples = Vec::with_capacity(meta.samples);
        for (k, rec) in rd.deserialize::<(usize, usize, usize, usize)>().enumerate() {
            let (i, x, y, n) = rec.map_err(|e| SnnError::Format(e.to_string()))?;
            if i != k || x >= CLASS_GRID || y >= CLASS_GRID {
                return Err(SnnError::Format(format!("bad label row {k}")));
            }
            let f = File::open(dir.join(format!("sample_{i:05}.evs"))).map_err(io)?;
            let events = read_evs(BufReader::new(f))?;
            if events.len() != n {
                return Err(SnnError::Format(format!("sample {i}: {} events, label file says {n}", events.len())));
            }
            samples.push(EventSample { events, label: (x, y) });
        }
        if samples.len() != meta.samples {
            return Err(SnnError::Format(format!("{} samples, expected {}", samples.len(), meta.samples)));
        }
        Ok(EventDataset { window_us: meta.window_us, samples })
    }
}

/// Bins every sample into `steps` spike frames on the 128 x 128 grid.
pub fn samples_from_dataset(dataset: &EventDataset, steps: usize) -> Result<Vec<Sample>, SnnError> {
    dataset
        .samples
        .par_iter()
        .map(|s| {
            let frames = accumulate(&s.events, 0, dataset.window_us, steps, CLASS_GRID, CLASS_GRID)?;
            Ok(Sample { input: SpikeInput::from_frames(&frames), label: s.label })
        })
        .collect()
}
