use serde::{Deserialize, Serialize};

use super::{CalibError, WandGeometry};
use crate::events::Event;

/// Square-wave LED blinking: marker `i` is on while
/// `frac(f_i t + phase_i) < duty`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlinkModel {
    pub duty: f64,
    /// Phase offsets in cycles.
    pub phases: [f64; 3],
}

impl Default for BlinkModel {
    fn default() -> Self {
        BlinkModel { duty: 0.5, phases: [0.13, 0.41, 0.77] }
    }
}

impl BlinkModel {
    pub fn is_on(&self, wand: &WandGeometry, marker: usize, t: f64) -> bool {
        (wand.frequencies[marker] * t + self.phases[marker]).rem_euclid(1.0) < self.duty
    }

    /// Times in `[t0, t1)` at which marker `marker` switches on.
    pub fn rising_edges(&self, wand: &WandGeometry, marker: usize, t0: f64, t1: f64) -> Vec<f64> {
        self.edges(wand, marker, t0, t1, 0.0)
    }

    pub fn falling_edges(&self, wand: &WandGeometry, marker: usize, t0: f64, t1: f64) -> Vec<f64> {
        self.edges(wand, marker, t0, t1, self.duty)
    }

    fn edges(&self, wand: &WandGeometry, marker: usize, t0: f64, t1: f64, at: f64) -> Vec<f64> {
        let f = wand.frequencies[marker];
        let phase = self.phases[marker];
        // Edge n occurs at (n + at - phase) / f.
        let first = (t0 * f + phase - at).ceil() as i64;
        let mut out = Vec::new();
        let mut n = first;
        loop {
            let t = (n as f64 + at - phase) / f;
            if t >= t1 {
                break;
            }
            if t >= t0 {
                out.push(t);
            }
            n += 1;
        }
        out
    }
}

/// On/off state of a marker in each of `frames` exposures starting at `t0`.
pub fn frame_timeline(model: &BlinkModel, wand: &WandGeometry, marker: usize, t0: f64, frames: usize, fps: f64) -> Vec<bool> {
    (0..frames).map(|k| model.is_on(wand, marker, t0 + k as f64 / fps)).collect()
}

/// Apparent frequency of a blink at `f` Hz sampled at `fps`.
pub fn alias_frequency(f: f64, fps: f64) -> f64 {
    (f - fps * (f / fps).round()).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub marker: usize,
    /// `(d_second - d_best) / d_second` with `d` the distance between the
    /// measured and the expected rate.
    pub confidence: f64,
    pub measured_hz: f64,
}

/// Nearest expected rate wins when it beats the runner-up by at least two
/// bins.
pub fn classify_rate(measured: f64, expected: &[f64; 3], bin_width: f64) -> Result<Classification, CalibError> {
    let mut d: Vec<(f64, usize)> = expected.iter().enumerate().map(|(i, e)| ((measured - e).abs(), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let margin = d[1].0 - d[0].0;
    if margin < 2.0 * bin_width {
        return Err(CalibError::AmbiguousFrequency { margin, required: 2.0 * bin_width });
    }
    Ok(Classification { marker: d[0].1, confidence: margin / d[1].0, measured_hz: measured })
}

/// Classifies a per-frame on/off sequence by its transition rate, which is
/// twice the aliased blink frequency.
pub fn classify_frame_timeline(timeline: &[bool], fps: f64, wand: &WandGeometry) -> Result<Classification, CalibError> {
    let window = timeline.len() as f64 / fps;
    let expected = wand.frequencies.map(|f| alias_frequency(f, fps));
    let slowest = expected.iter().copied().fold(f64::INFINITY, f64::min);
    if !(slowest > 0.0) {
        return Err(CalibError::InvalidWand(format!("a blink frequency is a multiple of {fps} fps")));
    }
    if window < 5.0 / slowest {
        return Err(CalibError::WindowTooShort(format!("{window:.3} s < 5 periods of {slowest:.1} Hz")));
    }
    let transitions = timeline.windows(2).filter(|w| w[0] != w[1]).count();
    classify_rate(transitions as f64 / (2.0 * window), &expected, 1.0 / window)
}

/// Classifies events of one marker over `[t0_us, t0_us + window)` by the
/// rate of on-event bursts. Bursts are separated by gaps longer than a
/// quarter of the shortest blink period.
pub fn classify_event_bursts(
    events: &[Event],
    t0_us: u32,
    window_s: f64,
    wand: &WandGeometry,
) -> Result<Classification, CalibError> {
    let slowest = wand.frequencies.iter().copied().fold(f64::INFINITY, f64::min);
    let fastest = wand.frequencies.iter().copied().fold(0.0, f64::max);
    if window_s < 5.0 / slowest {
        return Err(CalibError::WindowTooShort(format!("{window_s:.3} s < 5 periods of {slowest:.1} Hz")));
    }
    let t1 = t0_us as f64 + window_s * 1e6;
    let gap = 0.25e6 / fastest;
    let mut on: Vec<u32> =
        events.iter().filter(|e| e.polarity > 0 && e.t >= t0_us && (e.t as f64) < t1).map(|e| e.t).collect();
    on.sort_unstable();
    let mut bursts = 0usize;
    let mut last: Option<u32> = None;
    for t in on {
        if last.map_or(true, |l| (t - l) as f64 > gap) {
            bursts += 1;
        }
        last = Some(t);
    }
    classify_rate(bursts as f64 / window_s, &wand.frequencies, 1.0 / window_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn burst_train(f: f64, window_s: f64, per_burst: usize) -> Vec<Event> {
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let t = (k as f64 + 0.3) / f * 1e6;
            if t >= window_s * 1e6 {
                break;
            }
            for j in 0..per_burst {
                out.push(Event { t: t as u32 + j as u32, x: 3, y: 4, polarity: 1 });
                out.push(Event { t: (t + 0.5e6 / f) as u32 + j as u32, x: 3, y: 4, polarity: -1 });
            }
            k += 1;
        }
        out.sort_by_key(|e| e.t);
        out
    }

    #[test]
    fn clean_200hz_bursts() {
        let w = WandGeometry::default();
        let c = classify_event_bursts(&burst_train(200.0, 0.2, 6), 0, 0.2, &w).unwrap();
        assert_eq!(c.marker, 1);
        assert!((c.measured_hz - 200.0).abs() < 1e-9);
        assert_eq!(c.confidence, 1.0);
    }

    #[test]
    fn midpoint_rate_is_ambiguous() {
        let e = [125.0, 200.0, 333.0];
        assert!(matches!(classify_rate(162.5, &e, 1.0), Err(CalibError::AmbiguousFrequency { .. })));
    }

    #[test]
    fn dropout_keeps_id_with_lower_confidence() {
        let w = WandGeometry::default();
        // Single-event bursts: a dropped event removes a whole burst.
        let clean = burst_train(200.0, 0.2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kept: Vec<Event> = clean.iter().copied().filter(|_| rng.gen::<f64>() >= 0.1).collect();
        assert!(kept.len() < clean.len());
        let a = classify_event_bursts(&clean, 0, 0.2, &w).unwrap();
        let b = classify_event_bursts(&kept, 0, 0.2, &w).unwrap();
        assert_eq!(b.marker, 1);
        assert!(b.confidence < a.confidence);
    }

    #[test]
    fn short_window_rejected() {
        let w = WandGeometry::default();
        assert!(matches!(classify_event_bursts(&[], 0, 0.02, &w), Err(CalibError::WindowTooShort(_))));
    }

    #[test]
    fn hundred_hz_at_140fps_on_fraction() {
        let w = WandGeometry { frequencies: [100.0, 200.0, 333.0], ..Default::default() };
        let tl = frame_timeline(&BlinkModel::default(), &w, 0, 0.0, 140, 140.0);
        let frac = tl.iter().filter(|&&b| b).count() as f64 / tl.len() as f64;
        assert!((0.4..=0.6).contains(&frac), "{frac}");
    }

    #[test]
    fn frame_cameras_identify_all_markers_by_alias() {
        let w = WandGeometry::default();
        assert_eq!(w.frequencies.map(|f| alias_frequency(f, 140.0).round()), [15.0, 60.0, 53.0]);
        for m in 0..3 {
            for t0 in [0.0, 0.37, 5.1] {
                let tl = frame_timeline(&BlinkModel::default(), &w, m, t0, 140, 140.0);
                assert_eq!(classify_frame_timeline(&tl, 140.0, &w).unwrap().marker, m);
            }
        }
    }

    #[test]
    fn edges_alternate() {
        let w = WandGeometry::default();
        let b = BlinkModel::default();
        let r = b.rising_edges(&w, 2, 0.01, 0.05);
        let f = b.falling_edges(&w, 2, 0.01, 0.05);
        assert!((r.len() as i64 - f.len() as i64).abs() <= 1);
        for t in &r {
            assert!(b.is_on(&w, 2, t + 1e-7) && !b.is_on(&w, 2, t - 1e-7));
        }
        for t in &f {
            assert!(!b.is_on(&w, 2, t + 1e-7) && b.is_on(&w, 2, t - 1e-7));
        }
    }
}
