use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    classify_event_bursts, classify_frame_timeline, frame_timeline, BlinkModel, CalibError, MarkerDetection,
    WandGeometry, WandPose,
};
use crate::events::{render_disk, Event, EventSimConfig, EventSimulator, EventStream, Region};
use crate::geometry::{project, CameraKind, Rig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureSettings {
    /// Gaussian noise added to each detected blob center, px.
    pub noise_px: f64,
    /// Time the wand is held at each pose, s. Frame cameras classify
    /// markers over the whole dwell.
    pub dwell_s: f64,
    /// Event-camera classification window at the start of each dwell, s.
    pub event_window_s: f64,
    pub led_radius_m: f64,
    pub led_on: f32,
    pub background: f32,
    pub event_threshold: f64,
    pub blink: BlinkModel,
    /// Keep the simulated LED events in the capture.
    pub record_events: bool,
    pub seed: u64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        CaptureSettings {
            noise_px: 0.0,
            dwell_s: 1.0,
            event_window_s: 0.06,
            led_radius_m: 0.01,
            led_on: 1.0,
            background: 0.1,
            event_threshold: 0.2,
            blink: BlinkModel::default(),
            record_events: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WandCapture {
    pub detections: Vec<MarkerDetection>,
    pub truth: Vec<WandPose>,
    pub sample_times: Vec<f64>,
    /// LED events per camera (event cameras only, when recorded).
    pub event_streams: Vec<Option<EventStream>>,
    /// Visible markers whose blink frequency could not be classified.
    pub unclassified: usize,
    /// Visible markers classified as the wrong marker.
    pub misclassified: usize,
}

struct Observation {
    detection: Option<MarkerDetection>,
    events: Vec<Event>,
    wrong: bool,
}

/// Wand placements in the volume above the table center, with uniformly
/// random directions tilted at most about 27° from horizontal.
pub fn random_wand_poses(n: usize, seed: u64) -> Vec<WandPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = Vector3::new(rng.gen_range(-0.6..0.4), rng.gen_range(-0.4..0.2), rng.gen_range(0.2..0.8));
            let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
            WandPose::new(p, d)
        })
        .collect()
}

/// Simulates the wand held at each of `poses` for one dwell. Blob centers
/// are the exact projections plus Gaussian noise; marker identities come
/// from blink-frequency classification (frame timelines or LED events).
pub fn simulate_wand_capture(
    rig: &Rig,
    wand: &WandGeometry,
    poses: &[WandPose],
    settings: &CaptureSettings,
) -> Result<WandCapture, CalibError> {
    wand.validate()?;
    rig.validate()?;
    let noise = Normal::new(0.0, settings.noise_px.max(0.0)).map_err(|e| CalibError::InvalidProblem(e.to_string()))?;
    let sample_times: Vec<f64> = (0..poses.len()).map(|i| i as f64 * settings.dwell_s).collect();
    let ncam = rig.cameras.len();
    let mut visible = vec![[false; 3]; ncam];

    let jobs: Vec<(usize, usize, usize)> =
        (0..poses.len()).flat_map(|i| (0..ncam).flat_map(move |c| (0..3).map(move |m| (i, c, m)))).collect();
    let results: Vec<Option<Observation>> = jobs
        .par_iter()
        .map(|&(i, c, m)| {
            let cam = &rig.cameras[c];
            let x = poses[i].marker(wand, m);
            let px = project(&x, cam).ok().filter(|p| cam.intrinsics.contains(p))?;
            let t = sample_times[i];
            let mut rng = ChaCha8Rng::seed_from_u64(mix(settings.seed, i, c, m));
            let mut events = Vec::new();
            let class = match cam.kind {
                CameraKind::Frame { fps } => {
                    let n = (settings.dwell_s * fps).round() as usize;
                    classify_frame_timeline(&frame_timeline(&settings.blink, wand, m, t, n, fps), fps, wand)
                }
                CameraKind::Event => {
                    let depth = cam.pose.transform_point(&x).z;
                    let r_px = cam.intrinsics.fx * settings.led_radius_m / depth;
                    let t0_us = (t * 1e6).round() as u32;
                    events = simulate_led_events(
                        (cam.intrinsics.width as usize, cam.intrinsics.height as usize),
                        px,
                        r_px,
                        t0_us,
                        settings,
                        wand,
                        m,
                    );
                    classify_event_bursts(&events, t0_us, settings.event_window_s, wand)
                }
            };
            let pixel = px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            Some(match class {
                Ok(cl) => Observation {
                    detection: Some(MarkerDetection { camera: c, t, pixel, marker: cl.marker, confidence: cl.confidence }),
                    events,
                    wrong: cl.marker != m,
                },
                Err(_) => Observation { detection: None, events, wrong: false },
            })
        })
        .collect();

    let mut detections = Vec::new();
    let mut streams: Vec<Option<EventStream>> = rig
        .cameras
        .iter()
        .map(|c| {
            (settings.record_events && c.kind.is_event())
                .then(|| EventStream::new(c.intrinsics.width, c.intrinsics.height))
        })
        .collect();
    let (mut unclassified, mut misclassified) = (0, 0);
    for (&(_, c, m), obs) in jobs.iter().zip(results) {
        let Some(obs) = obs else { continue };
        visible[c][m] = true;
        match obs.detection {
            Some(d) => {
                misclassified += obs.wrong as usize;
                detections.push(d);
            }
            None => unclassified += 1,
        }
        if let Some(s) = streams[c].as_mut() {
            s.events.extend(obs.events);
        }
    }
    for (c, v) in visible.iter().enumerate() {
        if let Some(m) = v.iter().position(|&b| !b) {
            return Err(CalibError::NoVisibility { camera: c, marker: m });
        }
    }
    for s in streams.iter_mut().flatten() {
        s.events.sort_by_key(|e| (e.t, e.y, e.x));
    }
    Ok(WandCapture {
        detections,
        truth: poses.to_vec(),
        sample_times,
        event_streams: streams,
        unclassified,
        misclassified,
    })
}

fn mix(seed: u64, i: usize, c: usize, m: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [i as u64, c as u64, m as u64] {
        h = (h ^ v).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

/// Events of one LED blob centered at `center` with radius `radius_px`
/// over the event window starting at `t0_us`. Only a small patch around
/// the blob is simulated.
pub fn simulate_led_events(
    sensor: (usize, usize),
    center: Vector2<f64>,
    radius_px: f64,
    t0_us: u32,
    settings: &CaptureSettings,
    wand: &WandGeometry,
    marker: usize,
) -> Vec<Event> {
    let margin = radius_px + 3.0;
    let x0 = (center.x - margin).floor().max(0.0) as usize;
    let y0 = (center.y - margin).floor().max(0.0) as usize;
    let x1 = ((center.x + margin).ceil().max(0.0) as usize).min(sensor.0);
    let y1 = ((center.y + margin).ceil().max(0.0) as usize).min(sensor.1);
    if x1 <= x0 || y1 <= y0 {
        return Vec::new();
    }
    let local = Region { x0: 0, y0: 0, width: x1 - x0, height: y1 - y0 };
    let c_local = center - Vector2::new(x0 as f64, y0 as f64);
    let render = |on: bool| {
        render_disk(local, c_local, radius_px, settings.background, if on { settings.led_on } else { settings.background })
    };
    let t0 = t0_us as f64 * 1e-6;
    let t1 = t0 + settings.event_window_s;
    let mut on = settings.blink.is_on(wand, marker, t0);
    let cfg = EventSimConfig { threshold: settings.event_threshold, refractory_us: 0.0 };
    let Ok(mut sim) = EventSimulator::uniform(local.width, local.height, settings.background, t0_us as f64, cfg) else {
        return Vec::new();
    };
    if sim.set_region(local, &render(on)).is_err() {
        return Vec::new();
    }
    let mut edges: Vec<f64> = settings.blink.rising_edges(wand, marker, t0, t1);
    edges.extend(settings.blink.falling_edges(wand, marker, t0, t1));
    edges.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for te in edges {
        let te_us = te * 1e6;
        if te_us - 1.0 <= sim.t_us() {
            continue;
        }
        // Hold the current state until just before the edge, then switch.
        let _ = sim.push_region(te_us - 1.0, local, &render(on));
        on = !on;
        if let Ok(ev) = sim.push_region(te_us, local, &render(on)) {
            out.extend(ev.into_iter().map(|e| Event { x: e.x + x0 as u16, y: e.y + y0 as u16, ..e }));
        }
    }
    out
}

/// Centroid of the on events of a blob, in pixels.
pub fn localize_marker_events(events: &[Event]) -> Option<Vector2<f64>> {
    let on: Vec<&Event> = events.iter().filter(|e| e.polarity > 0).collect();
    if on.is_empty() {
        return None;
    }
    let n = on.len() as f64;
    Some(Vector2::new(
        on.iter().map(|e| e.x as f64).sum::<f64>() / n,
        on.iter().map(|e| e.y as f64).sum::<f64>() / n,
    ))
}
