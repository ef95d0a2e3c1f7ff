use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use probekit::cca::{cca_curve, CcaOptions, Reference};
use probekit::cluster::{kmeans, KMeansOptions, DEFAULT_K_PHONE, DEFAULT_K_WORD};
use probekit::curve::CurveRun;
use probekit::featio::{self, Manifest, SpanAnnotation, SpanKind};
use probekit::mi::{index_labels, mi_curve, permutation_baseline};
use probekit::spanpool::{pool_spans, sample_pooled, PooledSet};
use probekit::stats::{read_pairs, sts_curve};
use probekit::PooledSet64;
use rayon::prelude::*;
use serde_json::json;

use super::{load_pooled, require_dir, save_pooled, write_json, write_text};
use crate::args::{CcaArgs, Kind, MiArgs, PoolArgs, StsArgs};
use crate::error::{CliError, CliResult, Stage};
use crate::runlog::{log_path_for_file, RunLog};

fn span_kind(k: Kind) -> SpanKind {
    match k {
        Kind::Word => SpanKind::Word,
        Kind::Phone => SpanKind::Phone,
        Kind::Utterance => SpanKind::Utterance,
    }
}

/// `<dir>/<utt>/manifest.json` for every utterance directory, sorted by name.
fn find_manifests(dir: &Path, stage: &str) -> CliResult<Vec<Manifest>> {
    require_dir(dir, stage)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .stage(&format!("{stage}: listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join("manifest.json")))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::validation(
            stage,
            format!("no <utterance>/manifest.json under {}", dir.display()),
        ));
    }
    paths.iter().map(|p| Manifest::load(p).stage(stage)).collect()
}

struct LayerPool {
    set: PooledSet64,
    skipped: Vec<String>,
}

fn pool_layer(
    manifests: &[Manifest],
    spans: &BTreeMap<&str, Vec<SpanAnnotation>>,
    layer: usize,
    base_period: u32,
) -> probekit::Result<LayerPool> {
    let mut parts = Vec::new();
    let mut skipped = Vec::new();
    for m in manifests {
        let Some(us) = spans.get(m.utterance_id.as_str()) else {
            continue;
        };
        let dump = m.read_layer(&m.layers[layer])?;
        let out = pool_spans(&dump, us, base_period)?;
        skipped.extend(out.skipped.into_iter().map(|s| format!("{} span {}: {}", m.utterance_id, s.index, s.reason)));
        if !out.set.is_empty() {
            parts.push(out.set);
        }
    }
    let set = PooledSet::concat(&parts)?;
    Ok(LayerPool { set, skipped })
}

pub fn pool(a: &PoolArgs) -> CliResult<()> {
    const STAGE: &str = "pool";
    let kind = span_kind(a.kind);
    let manifests = find_manifests(&a.features, STAGE)?;
    let layer_ids: Vec<&str> = manifests[0].layer_ids().collect();
    for m in &manifests[1..] {
        if !m.layer_ids().eq(layer_ids.iter().copied()) {
            return Err(CliError::validation(
                STAGE,
                format!(
                    "utterance {} lists different layers than {}",
                    m.utterance_id, manifests[0].utterance_id
                ),
            ));
        }
    }
    let annotations = featio::read_annotations(&a.annotations).stage(STAGE)?;
    let mut spans: BTreeMap<&str, Vec<SpanAnnotation>> = BTreeMap::new();
    for s in annotations.iter().filter(|s| s.kind == kind) {
        spans.entry(s.utterance_id.as_str()).or_default().push(s.clone());
    }
    let orphan: usize = spans
        .iter()
        .filter(|(u, _)| !manifests.iter().any(|m| m.utterance_id == **u))
        .map(|(_, v)| v.len())
        .sum();
    if spans.is_empty() {
        return Err(CliError::validation(STAGE, format!("no {kind} spans in {}", a.annotations.display())));
    }

    let pooled: Vec<LayerPool> = (0..layer_ids.len())
        .into_par_iter()
        .map(|l| pool_layer(&manifests, &spans, l, a.base_period))
        .collect::<probekit::Result<_>>()
        .stage(STAGE)?;

    let sets: Vec<PooledSet64> = pooled.iter().map(|p| p.set.clone()).collect();
    save_pooled(&a.out, &sets, STAGE)?;

    let mut log = RunLog::new(STAGE);
    log.line(format!("{} utterances, {} layers, {kind} spans", manifests.len(), layer_ids.len()));
    if orphan > 0 {
        log.line(format!("{orphan} spans name utterances without features and were ignored"));
    }
    let mut layers = Vec::new();
    for p in &pooled {
        log.line(format!("{}: {} items, {} skipped", p.set.layer_id, p.set.len(), p.skipped.len()));
        log.extend(p.skipped.iter().map(|s| format!("  skipped {s}")));
        layers.push(json!({"layer_id": p.set.layer_id, "items": p.set.len(), "skipped": p.skipped.len()}));
    }
    let summary = json!({
        "kind": kind.to_string(),
        "utterances": manifests.len(),
        "ignored_spans": orphan,
        "layers": layers,
    });
    write_json(&a.out.join("pool.json"), &summary, STAGE)?;
    log.write(&a.out.join("pool.log"))
}

/// Clamp a requested sample count to what is available, noting it in the log.
fn clamp_samples(requested: Option<usize>, available: usize, log: &mut RunLog, stage: &str) -> CliResult<Option<usize>> {
    match requested {
        None => Ok(None),
        Some(0) => Err(CliError::validation(stage, "--samples must be positive")),
        Some(n) if n > available => {
            log.line(format!("requested {n} samples, only {available} available; using {available}"));
            Ok(Some(available))
        }
        Some(n) => Ok(Some(n)),
    }
}

fn write_curve(run: &CurveRun, out: &Path, mut log: RunLog, stage: &str) -> CliResult<()> {
    log.extend(run.log.iter().cloned());
    for (id, v) in &run.curve.points {
        log.line(format!("{id}\t{v:.6}"));
    }
    write_text(out, &run.curve.to_csv(), stage)?;
    log.write(&log_path_for_file(out))
}

pub fn cca(a: &CcaArgs) -> CliResult<()> {
    const STAGE: &str = "cca";
    let layers = load_pooled(&a.x, STAGE)?;
    let n = layers[0].len();
    let mut log = RunLog::new(STAGE);
    log.line(format!("{} layers, {n} items, variance {}, seed {}", layers.len(), a.variance, a.seed));
    let opts = CcaOptions {
        variance_keep: a.variance,
        standardize: a.standardize,
    };
    let run = if a.y == "onehot" {
        log.line("reference: one-hot item labels");
        let samples = clamp_samples(a.samples, n, &mut log, STAGE)?;
        cca_curve(&layers, Reference::OneHotLabels, &opts, samples, a.seed)
    } else if Path::new(&a.y).is_dir() {
        let refs = load_pooled(Path::new(&a.y), STAGE)?;
        let r = match &a.y_layer {
            Some(id) => refs.iter().find(|s| &s.layer_id == id).ok_or_else(|| {
                CliError::validation(STAGE, format!("reference {} has no layer {id}", a.y))
            })?,
            None => &refs[0],
        };
        log.line(format!("reference: pooled layer {} of {}", r.layer_id, a.y));
        let samples = clamp_samples(a.samples, n, &mut log, STAGE)?;
        cca_curve(&layers, Reference::Pooled(r), &opts, samples, a.seed)
    } else {
        let table = featio::read_embeddings(Path::new(&a.y)).stage(STAGE)?;
        log.line(format!("reference: {:?} table {} ({} labels, dim {})", table.kind(), a.y, table.len(), table.dim()));
        let available = layers[0].labels.iter().filter(|l| table.position(l).is_some()).count();
        let samples = clamp_samples(a.samples, available, &mut log, STAGE)?;
        cca_curve(&layers, Reference::Table(&table), &opts, samples, a.seed)
    }
    .stage(STAGE)?;
    write_curve(&run, &a.out, log, STAGE)
}

pub fn mi(a: &MiArgs) -> CliResult<()> {
    const STAGE: &str = "mi";
    let mut layers = load_pooled(&a.x, STAGE)?;
    let mut log = RunLog::new(STAGE);
    let n = layers[0].len();
    if let Some(s) = clamp_samples(a.samples, n, &mut log, STAGE)? {
        layers = layers
            .iter()
            .map(|l| sample_pooled(l, s, a.seed))
            .collect::<probekit::Result<_>>()
            .stage(STAGE)?;
    }
    let items = layers[0].len();
    let k = a.k.unwrap_or(match layers[0].kind {
        SpanKind::Word => DEFAULT_K_WORD,
        _ => DEFAULT_K_PHONE,
    });
    if k == 0 || k >= items {
        return Err(CliError::validation(
            STAGE,
            format!("k = {k} needs 0 < k < {items} items; pass a smaller --k"),
        ));
    }
    let labels = layers[0].labels.clone();
    let mut run = mi_curve(&layers, &labels, k, a.seed).stage(STAGE)?;
    if a.permutations > 0 {
        let (label_idx, alphabet) = index_labels(&labels);
        let baselines: Vec<(String, f64, f64)> = layers
            .par_iter()
            .map(|l| {
                let c = kmeans(&l.vectors, &KMeansOptions::new(k, a.seed))?;
                let (mean, sd) = permutation_baseline(&c.assignments, &label_idx, k, alphabet.len(), a.permutations, a.seed)?;
                Ok((l.layer_id.clone(), mean, sd))
            })
            .collect::<probekit::Result<_>>()
            .stage(STAGE)?;
        for (id, mean, sd) in baselines {
            run.log.push(format!("{id}: shuffled-label MI {mean:.6} +/- {sd:.6} nats ({} shuffles)", a.permutations));
        }
    }
    write_curve(&run, &a.out, log, STAGE)
}

pub fn sts(a: &StsArgs) -> CliResult<()> {
    const STAGE: &str = "sts";
    let layers = load_pooled(&a.x, STAGE)?;
    if layers[0].kind != SpanKind::Utterance {
        return Err(CliError::validation(
            STAGE,
            format!("{} holds {} spans; STS needs utterance spans", a.x.display(), layers[0].kind),
        ));
    }
    let pairs = read_pairs(&a.pairs).stage(STAGE)?;
    let run = sts_curve(&layers, &pairs).stage(STAGE)?;
    let mut log = RunLog::new(STAGE);
    log.line(format!("{} layers, {} utterances", layers.len(), layers[0].len()));
    write_curve(&run, &a.out, log, STAGE)
}
