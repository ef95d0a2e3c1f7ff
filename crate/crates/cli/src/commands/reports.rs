use probekit::curve::{join_curves, Curve};
use probekit::layerweights::{read_weights, report, weights_csv, Group, WeightMode, WeightReport};
use serde_json::{json, Value};

use super::{create_dir, write_json, write_text};
use crate::args::{Mode, ReportArgs, WeightsArgs};
use crate::error::{CliError, CliResult, ExitKind, Stage};
use crate::runlog::RunLog;

/// `[task:]group-spec`; the task prefix is recognized only before the `=`.
fn parse_group(spec: &str) -> probekit::Result<(Option<String>, Group)> {
    let head = spec.split_once('=').map_or(spec, |(h, _)| h);
    match head.split_once(':') {
        Some((task, _)) => Ok((Some(task.trim().to_string()), spec[task.len() + 1..].parse()?)),
        None => Ok((None, spec.parse()?)),
    }
}

fn report_json(r: &WeightReport) -> Value {
    json!({
        "task": r.task,
        "layers": r.n_layers,
        "entropy_nats": r.entropy,
        "max_entropy_nats": r.max_entropy(),
        "top": r.top.iter().map(|(l, w)| json!({"layer_id": l, "weight": w})).collect::<Vec<_>>(),
        "groups": r.groups.iter().map(|g| json!({
            "name": g.name,
            "layers": g.layers,
            "mass": g.mass,
            "threshold": g.threshold,
            "dominant": g.dominant,
        })).collect::<Vec<_>>(),
    })
}

pub fn weights(a: &WeightsArgs) -> CliResult<()> {
    const STAGE: &str = "weights";
    let file = read_weights(&a.input).stage(STAGE)?;
    let mode = a.mode.map(|m| match m {
        Mode::Softmax => WeightMode::Softmax,
        Mode::Normalized => WeightMode::AlreadyNormalized,
    });
    let tasks = file.into_weights(mode).stage(STAGE)?;
    let groups: Vec<(Option<String>, Group)> = a
        .group
        .iter()
        .map(|g| parse_group(g))
        .collect::<probekit::Result<_>>()
        .stage(STAGE)?;
    for (task, g) in &groups {
        if let Some(t) = task {
            if !tasks.iter().any(|w| &w.task == t) {
                return Err(CliError::validation(STAGE, format!("group {} names unknown task {t}", g.name)));
            }
        }
    }
    let mut log = RunLog::new(STAGE);
    log.line(format!("{} tasks from {}", tasks.len(), a.input.display()));
    let mut text = String::new();
    let mut reports = Vec::new();
    for w in &tasks {
        let applicable: Vec<Group> = groups
            .iter()
            .filter(|(t, _)| t.as_ref().is_none_or(|t| t == &w.task))
            .map(|(_, g)| g.clone())
            .collect();
        let r = report(w, &applicable, a.top_k, a.threshold).stage(&format!("{STAGE}: task {}", w.task))?;
        for g in r.dominant_groups() {
            log.line(format!(
                "{}: group {} holds {:.4} of the weight (threshold {}): dominant",
                r.task, g.name, g.mass, g.threshold
            ));
        }
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&r.to_text());
        reports.push(report_json(&r));
    }
    create_dir(&a.out, STAGE)?;
    write_text(&a.out.join("weights.csv"), &weights_csv(&tasks), STAGE)?;
    write_text(&a.out.join("report.txt"), &text, STAGE)?;
    write_json(&a.out.join("report.json"), &Value::Array(reports), STAGE)?;
    log.write(&a.out.join("weights.log"))
}

pub fn join(a: &ReportArgs) -> CliResult<()> {
    const STAGE: &str = "report";
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = a.models.iter().find(|m| !seen.insert(m.as_str())) {
        return Err(CliError::validation(STAGE, format!("model {dup} listed twice")));
    }
    let mut log = RunLog::new(STAGE);
    let mut joined = Vec::new();
    for metric in &a.metric {
        let mut curves = Vec::with_capacity(a.models.len());
        for model in &a.models {
            let path = a.root.join(model).join(format!("{metric}.csv"));
            if !path.is_file() {
                return Err(CliError::new(
                    ExitKind::Io,
                    format!("{STAGE}: model {model}"),
                    format!("missing {metric} curve {}", path.display()),
                ));
            }
            let c = Curve::read_csv(&path).stage(&format!("{STAGE}: model {model}"))?;
            curves.push((model.clone(), c));
        }
        let csv = join_curves(&curves);
        let rows = csv.lines().count() - 1;
        log.line(format!("{metric}: {} models, {rows} layers", curves.len()));
        joined.push((metric, csv));
    }
    create_dir(&a.out, STAGE)?;
    for (metric, csv) in joined {
        write_text(&a.out.join(format!("{metric}.csv")), &csv, STAGE)?;
    }
    log.write(&a.out.join("report.log"))
}
