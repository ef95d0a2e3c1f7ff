use std::path::Path;

use probekit::featio::{self, Dtype, FeatureDump, Manifest};
use probekit::stats::write_pairs;
use probekit::testbed::{Corpus, CorpusOptions};
use serde_json::json;

use super::{create_dir, write_json};
use crate::args::SynthArgs;
use crate::error::{CliError, CliResult, Stage};
use crate::runlog::RunLog;

/// Layer id given to the raw input frames.
pub const INPUT_LAYER: &str = "fbank";

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    const STAGE: &str = "synth";
    if a.utterances < 2 {
        return Err(CliError::validation(STAGE, "--utterances must be at least 2"));
    }
    let mut log = RunLog::new(STAGE);
    let options = CorpusOptions {
        utterances: a.utterances,
        seed: a.seed,
        ..CorpusOptions::default()
    };
    let corpus = Corpus::generate(options).stage(STAGE)?;
    create_dir(&a.out, STAGE)?;
    corpus.save(&a.out).stage(STAGE)?;
    featio::write_embeddings(&a.out.join("words.emb"), &corpus.word_table()).stage(STAGE)?;
    featio::write_embeddings(&a.out.join("phones.emb"), &corpus.phone_table()).stage(STAGE)?;
    let pairs = corpus.judged_pairs(a.pairs, a.seed).stage(STAGE)?;
    write_pairs(&a.out.join("pairs.tsv"), &pairs).stage(STAGE)?;
    write_input_features(&corpus, &a.out.join(INPUT_LAYER), STAGE)?;

    let frames: usize = corpus.utterances.iter().map(|u| u.frames.nrows()).sum();
    let spans = corpus.annotations();
    let count = |k: featio::SpanKind| spans.iter().filter(|s| s.kind == k).count();
    log.line(format!("seed {}", a.seed));
    log.line(format!("{} utterances, {frames} frames", corpus.len()));
    log.line(format!(
        "{} word spans over {} word types, {} phone spans over {} phone types",
        count(featio::SpanKind::Word),
        corpus.word_labels().len(),
        count(featio::SpanKind::Phone),
        corpus.phone_labels().len()
    ));
    log.line(format!("{} judged pairs", pairs.len()));
    let summary = json!({
        "seed": a.seed,
        "utterances": corpus.len(),
        "frames": frames,
        "word_spans": count(featio::SpanKind::Word),
        "phone_spans": count(featio::SpanKind::Phone),
        "word_types": corpus.word_labels().len(),
        "phone_types": corpus.phone_labels().len(),
        "pairs": pairs.len(),
    });
    write_json(&a.out.join("synth.json"), &summary, STAGE)?;
    log.write(&a.out.join("synth.log"))
}

/// Input frames laid out like extracted features, one manifest per utterance.
fn write_input_features(corpus: &Corpus, dir: &Path, stage: &str) -> CliResult<()> {
    for u in &corpus.utterances {
        let udir = dir.join(&u.id);
        create_dir(&udir, stage)?;
        let dump = FeatureDump::new(INPUT_LAYER, corpus.options.period_ms, u.frames.clone()).stage(stage)?;
        let mut entry = featio::write_dump(&dump, &udir.join(format!("{INPUT_LAYER}.prbf")), Dtype::F64).stage(stage)?;
        entry.path = format!("{INPUT_LAYER}.prbf").into();
        let mut m = Manifest::new(&u.id);
        m.layers.push(entry);
        m.save(&udir.join("manifest.json")).stage(stage)?;
    }
    Ok(())
}
