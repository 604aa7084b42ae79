use ttperc_core::events::{BallScene, EventSimConfig};
use ttperc_core::geometry::Rig;
use ttperc_core::snn::{synthesize_dataset, DatasetSettings};

use super::Context;
use crate::config::require;
use crate::error::CliError;

/// Synthesizes an event dataset for the detector and saves it to the output
/// directory.
pub fn run(ctx: &Context) -> Result<(), CliError> {
    let s = require(&ctx.config.events, "events")?;
    if s.samples == 0 {
        return Err(CliError::Config("events.samples must be at least 1".into()));
    }
    let rig = Rig::table_tennis_default();
    let camera = s.camera.unwrap_or(4);
    let cam = rig
        .cameras
        .get(camera)
        .filter(|c| c.kind.is_event())
        .ok_or_else(|| CliError::Config(format!("events.camera: {camera} is not an event camera of the rig")))?;
    let d = DatasetSettings::default();
    let settings = DatasetSettings {
        samples: s.samples,
        window_us: s.window_us.unwrap_or(d.window_us),
        speed_min: s.speed_min.unwrap_or(d.speed_min),
        speed_max: s.speed_max.unwrap_or(d.speed_max),
        max_spin_rps: s.max_spin_rps.unwrap_or(d.max_spin_rps),
        noise_rate_hz: s.noise_rate_hz.unwrap_or(d.noise_rate_hz),
        scene: BallScene::default(),
        events: EventSimConfig { threshold: s.threshold.unwrap_or(d.events.threshold), ..d.events },
        seed: ctx.config.seed_for(ctx.seed, s.seed),
    };
    let dataset = synthesize_dataset(cam, &settings)?;
    dataset.save(&ctx.out)?;
    let events: usize = dataset.samples.iter().map(|s| s.events.len()).sum();
    ctx.log(format!("{} samples, {:.0} events per sample", dataset.samples.len(), events as f64 / s.samples as f64));
    Ok(())
}
