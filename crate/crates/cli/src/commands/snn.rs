use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use ttperc_core::snn::{
    compare_loss_activity, evaluate, read_weights, samples_from_dataset, summarize, train, write_weights,
    EventDataset, Evaluation, Network, NetworkConfig, Sample, TrainSettings,
};

use super::{open, Context};
use crate::error::CliError;

#[derive(Debug, clap::Subcommand)]
pub enum SnnCommand {
    /// Train one network and evaluate it on the held-out split.
    Train {
        /// Dataset directory written by `events`.
        #[arg(long)]
        data: PathBuf,
        /// Override the number of simulation steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate trained networks on the held-out split, grouped by steps.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        weights: Vec<PathBuf>,
    },
    /// Train with MSE and cross-entropy from the same start and compare activity.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

struct Resolved {
    network: NetworkConfig,
    train: TrainSettings,
    holdout: f64,
}

fn resolve(ctx: &Context, steps: Option<usize>) -> Result<Resolved, CliError> {
    let section = ctx.config.snn.clone().unwrap_or_default();
    let mut network = section.network.unwrap_or_default();
    let mut train = section.train.unwrap_or_default();
    if let Some(t) = steps {
        network.steps = t;
    }
    if ctx.seed.is_some() || ctx.config.seed.is_some() || section.seed.is_some() {
        let seed = ctx.config.seed_for(ctx.seed, section.seed);
        network.seed = seed;
        train.seed = seed;
    }
    network.validate().map_err(|e| CliError::Config(format!("snn.network: {e}")))?;
    let holdout = section.holdout.unwrap_or(0.2);
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(CliError::Config(format!("snn.holdout: {holdout} outside (0, 1)")));
    }
    if train.epochs == 0 || train.batch_size == 0 || !(train.learning_rate >= 0.0) {
        return Err(CliError::Config("snn.train: epochs and batch_size must be positive".into()));
    }
    Ok(Resolved { network, train, holdout })
}

/// Training and held-out samples; the held-out part is the tail.
fn split(dataset: &EventDataset, steps: usize, holdout: f64) -> Result<(Vec<Sample>, Vec<Sample>), CliError> {
    let mut samples = samples_from_dataset(dataset, steps)?;
    if samples.len() < 2 {
        return Err(CliError::Module("snn: dataset needs at least two samples".into()));
    }
    let n_test = ((samples.len() as f64 * holdout).round() as usize).clamp(1, samples.len() - 1);
    let test = samples.split_off(samples.len() - n_test);
    Ok((samples, test))
}

fn load(path: &Path) -> Result<EventDataset, CliError> {
    Ok(EventDataset::load(path)?)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    steps: usize,
    train_samples: usize,
    test_samples: usize,
    network: &'a NetworkConfig,
    train: &'a TrainSettings,
    evaluation: &'a Evaluation,
}

#[derive(Serialize)]
struct EvalEntry {
    weights: String,
    steps: usize,
    evaluation: Evaluation,
}

pub fn run(ctx: &Context, cmd: &SnnCommand) -> Result<(), CliError> {
    match cmd {
        SnnCommand::Train { data, steps } => {
            let r = resolve(ctx, *steps)?;
            let (train_set, test_set) = split(&load(data)?, r.network.steps, r.holdout)?;
            let mut net: Network<f32> = Network::new(&r.network)?;
            let log = train(&mut net, &train_set, &r.train)?;
            for e in &log.epochs {
                ctx.log(format!("epoch {}: loss {:.5}, train error {:.3} px", e.epoch, e.loss, e.px_error));
            }
            let eval = evaluate(&net, &test_set, r.train.centroid_decode)?;
            ctx.log(format!("held-out error {:.3} ± {:.3} px, {:.0} SynOps", eval.mean_px, eval.std_px, eval.mean_synops));
            write_weights(&net, &r.network, ctx.create("weights.snnw")?)?;
            log.write_csv(ctx.create("train_log.csv")?)?;
            ctx.write_json(
                "eval.json",
                &TrainReport {
                    steps: r.network.steps,
                    train_samples: train_set.len(),
                    test_samples: test_set.len(),
                    network: &r.network,
                    train: &r.train,
                    evaluation: &eval,
                },
            )
        }
        SnnCommand::Eval { data, weights } => {
            let r = resolve(ctx, None)?;
            let dataset = load(data)?;
            let mut cache: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
            let mut entries = Vec::new();
            for path in weights {
                let (net, config) = read_weights(open(path)?)?;
                if !cache.contains_key(&config.steps) {
                    cache.insert(config.steps, split(&dataset, config.steps, r.holdout)?.1);
                }
                let evaluation = evaluate(&net, &cache[&config.steps], r.train.centroid_decode)?;
                ctx.log(format!("{}: T={} {:.3} px", path.display(), config.steps, evaluation.mean_px));
                entries.push(EvalEntry { weights: path.display().to_string(), steps: config.steps, evaluation });
            }
            let mut w = ctx.create("table2.csv")?;
            writeln!(w, "steps,networks,mean_px,std_px,synops")?;
            for &steps in cache.keys() {
                let evals: Vec<Evaluation> =
                    entries.iter().filter(|e| e.steps == steps).map(|e| e.evaluation.clone()).collect();
                let (mean, std) = match evals.as_slice() {
                    [one] => (one.mean_px, one.std_px),
                    many => summarize(many).expect("non-empty group"),
                };
                let synops = evals.iter().map(|e| e.mean_synops).sum::<f64>() / evals.len() as f64;
                writeln!(w, "{steps},{},{mean},{std},{synops}", evals.len())?;
            }
            w.flush()?;
            ctx.write_json("eval_detail.json", &entries)
        }
        SnnCommand::Compare { data, steps } => {
            let r = resolve(ctx, *steps)?;
            let (train_set, test_set) = split(&load(data)?, r.network.steps, r.holdout)?;
            let report = compare_loss_activity(&r.network, &train_set, &test_set, &r.train)?;
            let mut w = ctx.create("loss_activity.csv")?;
            writeln!(w, "loss,mean_px,std_px,synops")?;
            for (name, e) in [("mse", &report.mse), ("cross_entropy", &report.cross_entropy)] {
                writeln!(w, "{name},{},{},{}", e.mean_px, e.std_px, e.mean_synops)?;
            }
            w.flush()?;
            let verdict = if report.reproduced { "reproduced" } else { "NOT reproduced" };
            ctx.log(format!("cross-entropy / MSE SynOps = {:.3}: {verdict}", report.synops_ratio));
            ctx.write_json("loss_activity.json", &report)
        }
    }
}
