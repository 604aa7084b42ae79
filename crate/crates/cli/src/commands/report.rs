use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use super::Context;
use crate::error::CliError;

/// Rows of a headed CSV written by this tool (no quoting).
fn read_table(path: &Path) -> Result<Option<Vec<Vec<String>>>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| super::io_error(path, e))?;
    Ok(Some(text.lines().skip(1).filter(|l| !l.is_empty()).map(|l| l.split(',').map(String::from).collect()).collect()))
}

fn read_json(path: &Path) -> Result<Option<Value>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| super::io_error(path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn num(s: &str, digits: usize) -> String {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v:.digits$}"),
        _ => "n/a".into(),
    }
}

fn field(v: &Value, key: &str, digits: usize) -> String {
    v.get(key).and_then(Value::as_f64).map_or("n/a".into(), |x| format!("{x:.digits$}"))
}

/// Collects the results found in `input` into `report.md`.
pub fn run(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let mut md = String::from("# ttperc report\n");
    let mut sections = 0;

    if let Some(rows) = read_table(&input.join("mae.csv"))? {
        sections += 1;
        md.push_str("\n## Reprojection error (MAE) in pixels\n\n| Camera | mean ± std |\n|---|---|\n");
        for r in rows.iter().filter(|r| r.len() >= 4) {
            let _ = writeln!(md, "| {} | {} ± {} |", r[1], num(&r[2], 3), num(&r[3], 3));
        }
    }
    if let Some(rows) = read_table(&input.join("table2.csv"))? {
        sections += 1;
        md.push_str("\n## Detector accuracy\n\n| Steps | Networks | Accuracy [px] | SynOps |\n|---|---|---|---|\n");
        for r in rows.iter().filter(|r| r.len() >= 5) {
            let _ = writeln!(md, "| {} | {} | {} ± {} | {} |", r[0], r[1], num(&r[2], 2), num(&r[3], 2), num(&r[4], 0));
        }
    }
    if let Some(v) = read_json(&input.join("eval.json"))? {
        sections += 1;
        let e = &v["evaluation"];
        let _ = writeln!(
            md,
            "\n## Training run\n\nT = {}, {} training / {} held-out samples: {} ± {} px, {} SynOps.",
            v["steps"],
            v["train_samples"],
            v["test_samples"],
            field(e, "mean_px", 3),
            field(e, "std_px", 3),
            field(e, "mean_synops", 0)
        );
    }
    if let Some(v) = read_json(&input.join("loss_activity.json"))? {
        sections += 1;
        let verdict = if v["reproduced"].as_bool() == Some(true) { "reproduced" } else { "not reproduced" };
        let _ = writeln!(
            md,
            "\n## Loss and activity\n\n| Loss | Accuracy [px] | SynOps |\n|---|---|---|\n| MSE | {} | {} |\n| Cross-entropy | {} | {} |\n\nSynOps ratio {}: larger activity under cross-entropy {verdict}.",
            field(&v["mse"], "mean_px", 2),
            field(&v["mse"], "mean_synops", 0),
            field(&v["cross_entropy"], "mean_px", 2),
            field(&v["cross_entropy"], "mean_synops", 0),
            field(&v, "synops_ratio", 3)
        );
    }
    if let Some(v) = read_json(&input.join("spin_summary.json"))? {
        sections += 1;
        let _ = writeln!(
            md,
            "\n## Spin envelope\n\n{} runs at {} fps. Below {} rps: {} accurate (max rate error {}). Above: {} flagged unreliable. Envelope check: {}.",
            v["runs"],
            field(&v, "fps", 0),
            field(&v, "nyquist_rps", 0),
            field(&v, "below_accurate_fraction", 3),
            field(&v, "below_max_rate_error", 4),
            field(&v, "above_flagged_fraction", 3),
            if v["envelope_ok"].as_bool() == Some(true) { "pass" } else { "fail" }
        );
    }
    if sections == 0 {
        return Err(CliError::Io(format!("{}: no results to report", input.display())));
    }
    ctx.log(format!("{sections} sections"));
    ctx.write_text("report.md", &md)
}
