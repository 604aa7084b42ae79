use std::io::Write;

use serde::Serialize;
use ttperc_core::spin::benchmark::{sweep, SpinRun, SpinRunConfig};
use ttperc_core::spin::DotPattern;

use super::Context;
use crate::config::require;
use crate::error::CliError;

/// Upper bound on sweep rates, rps.
const MAX_RATE: f64 = 250.0;
/// Rates closer than this to the Nyquist limit are left out of the
/// envelope check, rps.
const GUARD_RPS: f64 = 5.0;
const RATE_TOLERANCE: f64 = 0.02;
const AXIS_TOLERANCE_DEG: f64 = 5.0;

#[derive(Debug, Serialize)]
struct Summary {
    fps: f64,
    frames: usize,
    resolution: usize,
    runs: usize,
    nyquist_rps: f64,
    /// Runs at least the guard below the limit.
    below_runs: usize,
    below_accurate_fraction: f64,
    below_max_rate_error: Option<f64>,
    /// Runs at least the guard above the limit.
    above_runs: usize,
    above_flagged_fraction: f64,
    envelope_ok: bool,
}

/// Within the rate and axis tolerances, whatever the reliability flag.
fn accurate(r: &SpinRun) -> bool {
    r.rate_error().is_some_and(|e| e <= RATE_TOLERANCE) && r.axis_error_deg().is_some_and(|e| e <= AXIS_TOLERANCE_DEG)
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Writes `spin_sweep.csv` with one row per (rate, axis) run and
/// `spin_summary.json` with the envelope check.
pub fn run(ctx: &Context) -> Result<(), CliError> {
    let s = require(&ctx.config.spin, "spin")?;
    if s.rates.is_empty() {
        return Err(CliError::Config("spin.rates: empty sweep".into()));
    }
    if let Some(r) = s.rates.iter().find(|r| !(**r > 0.0 && **r <= MAX_RATE)) {
        return Err(CliError::Config(format!("spin.rates: {r} outside (0, {MAX_RATE}] rps")));
    }
    let axes = s.axes.unwrap_or(20);
    if axes == 0 {
        return Err(CliError::Config("spin.axes must be at least 1".into()));
    }
    let d = SpinRunConfig::default();
    let config = SpinRunConfig {
        fps: s.fps.unwrap_or(d.fps),
        frames: s.frames.unwrap_or(d.frames),
        resolution: s.resolution.unwrap_or(d.resolution),
        k: s.k.unwrap_or(d.k),
        orientation_noise_deg: s.orientation_noise_deg.unwrap_or(d.orientation_noise_deg),
    };
    let runs = sweep(&DotPattern::default_pattern(), &config, &s.rates, axes, ctx.config.seed_for(ctx.seed, s.seed));

    let mut w = ctx.create("spin_sweep.csv")?;
    writeln!(
        w,
        "rate_rps,axis_x,axis_y,axis_z,est_rate_rps,est_axis_x,est_axis_y,est_axis_z,est_k,rate_error,axis_error_deg,reliable"
    )?;
    for r in &runs {
        let a = r.true_axis;
        write!(w, "{},{},{},{}", r.true_rate, a.x, a.y, a.z)?;
        match r.estimate {
            Some(e) => write!(
                w,
                ",{},{},{},{},{},{},{}",
                e.rate0,
                e.axis.x,
                e.axis.y,
                e.axis.z,
                e.k,
                r.rate_error().unwrap_or(f64::NAN),
                r.axis_error_deg().unwrap_or(f64::NAN)
            )?,
            None => write!(w, ",,,,,,,")?,
        }
        writeln!(w, ",{}", r.reliable())?;
    }
    w.flush()?;

    let nyquist = config.fps / 2.0;
    let below: Vec<&SpinRun> = runs.iter().filter(|r| r.true_rate <= nyquist - GUARD_RPS).collect();
    let above: Vec<&SpinRun> = runs.iter().filter(|r| r.true_rate >= nyquist + GUARD_RPS).collect();
    let below_accurate = fraction(below.iter().filter(|r| accurate(r)).count(), below.len());
    let above_flagged = fraction(above.iter().filter(|r| !r.reliable()).count(), above.len());
    let summary = Summary {
        fps: config.fps,
        frames: config.frames,
        resolution: config.resolution,
        runs: runs.len(),
        nyquist_rps: nyquist,
        below_runs: below.len(),
        below_accurate_fraction: below_accurate,
        below_max_rate_error: below.iter().map(|r| r.rate_error().unwrap_or(f64::INFINITY)).reduce(f64::max),
        above_runs: above.len(),
        above_flagged_fraction: above_flagged,
        envelope_ok: below_accurate >= 0.95 && (above.is_empty() || above_flagged == 1.0),
    };
    ctx.log(format!(
        "{} runs: {:.1}% accurate below {:.0} rps, {:.1}% flagged above",
        runs.len(),
        100.0 * below_accurate,
        nyquist,
        100.0 * above_flagged
    ));
    ctx.write_json("spin_summary.json", &summary)
}
