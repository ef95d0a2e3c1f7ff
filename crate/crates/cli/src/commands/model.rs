use nalgebra::DMatrix;
use probekit::featio::Dtype;
use probekit::testbed::{
    check_comparison, extract as extract_dumps, grad_check, load_config, resolve_config, train_toy, Corpus, Example,
    LossHistory, Model, ModelConfig, TargetStream, TrainOptions, PRESETS,
};
use probekit::{Model64, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use std::path::Path;

use super::{create_dir, load_run, require_dir, write_json, write_text};
use crate::args::{DumpType, ExtractArgs, GradcheckArgs, Precision, TrainArgs, ValidateArgs};
use crate::error::{CliError, CliResult, Stage};
use crate::runlog::{log_path_for_file, RunLog};

pub const CONFIG_FILE: &str = "config.toml";
pub const PARAMS_FILE: &str = "params.json";

fn resolve(name_or_path: &str, stage: &str) -> CliResult<ModelConfig> {
    resolve_config(name_or_path).stage(&format!("{stage}: model {name_or_path}"))
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    const STAGE: &str = "validate";
    let mut log = RunLog::new(STAGE);
    let (config, mut compare) = if PRESETS.contains(&a.config.as_str()) {
        log.line(format!("preset {}", a.config));
        (resolve(&a.config, STAGE)?, Vec::new())
    } else {
        let file = load_config(Path::new(&a.config)).stage(&format!("{STAGE}: {}", a.config))?;
        log.line(format!("config file {}", a.config));
        (file.config, file.compare)
    };
    compare.extend(a.compare.iter().cloned());
    let others: Vec<(String, ModelConfig)> = compare
        .iter()
        .map(|c| resolve(c, STAGE).map(|m| (c.clone(), m)))
        .collect::<CliResult<_>>()?;
    let mut set: Vec<(&str, &ModelConfig)> = vec![(a.config.as_str(), &config)];
    set.extend(others.iter().map(|(n, c)| (n.as_str(), c)));
    check_comparison(&set).stage(STAGE)?;
    log.line(format!(
        "{} levels, {} blocks, {} transformer layers",
        config.levels(),
        config.num_blocks(),
        config.total_layers()
    ));
    for (n, c) in &others {
        log.line(format!("compare {n}: {} transformer layers, ok", c.total_layers()));
    }
    write_text(&a.out, &config.to_toml(), STAGE)?;
    log.write(&log_path_for_file(&a.out))
}

fn corpus_examples(dir: &Path, stage: &str) -> CliResult<(Corpus, Vec<Example>)> {
    require_dir(dir, stage)?;
    let corpus = Corpus::load(dir).stage(&format!("{stage}: loading corpus"))?;
    let examples = corpus
        .utterances
        .iter()
        .map(|u| (u.frames.clone(), u.targets.clone()))
        .collect();
    Ok((corpus, examples))
}

fn run_training<T: Real>(config: ModelConfig, data: &[Example], opts: &TrainOptions) -> probekit::Result<(Model<T>, LossHistory)> {
    let mut model = Model::<T>::new(config)?;
    let history = train_toy(&mut model, data, opts)?;
    Ok((model, history))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    const STAGE: &str = "train";
    let config = resolve(&a.model, STAGE)?;
    let (corpus, data) = corpus_examples(&a.data, STAGE)?;
    if corpus.options.input_dim != config.input_dim || corpus.options.num_classes != config.num_classes {
        return Err(CliError::validation(
            STAGE,
            format!(
                "corpus has input_dim {} and {} classes, model expects {} and {}",
                corpus.options.input_dim, corpus.options.num_classes, config.input_dim, config.num_classes
            ),
        ));
    }
    let opts = TrainOptions {
        steps: a.steps,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        eval_every: a.eval_every,
        eval_examples: a.eval_examples,
    };
    let (stored, history) = match a.precision {
        Precision::F64 => run_training::<f64>(config.clone(), &data, &opts).map(|(m, h)| (m.params().to_stored(), h)),
        Precision::F32 => run_training::<f32>(config.clone(), &data, &opts).map(|(m, h)| (m.params().to_stored(), h)),
    }
    .stage(STAGE)?;

    create_dir(&a.out, STAGE)?;
    config.save(&a.out.join(CONFIG_FILE)).stage(STAGE)?;
    stored.save(&a.out.join(PARAMS_FILE)).stage(STAGE)?;
    write_text(&a.out.join("loss.csv"), &history.to_csv(), STAGE)?;
    let summary = json!({
        "model": a.model,
        "steps": a.steps,
        "lr": a.lr,
        "batch_size": a.batch_size,
        "seed": a.seed,
        "precision": format!("{:?}", a.precision).to_lowercase(),
        "initial_eval_loss": history.initial(),
        "final_eval_loss": history.last(),
        "reduction": history.reduction(),
    });
    write_json(&a.out.join("train.json"), &summary, STAGE)?;

    let mut log = RunLog::new(STAGE);
    log.line(format!("model {} ({} transformer layers)", a.model, config.total_layers()));
    log.line(format!("{} utterances from {}", data.len(), a.data.display()));
    log.line(format!(
        "{} steps, lr {}, batch {}, seed {}, precision {:?}",
        a.steps, a.lr, a.batch_size, a.seed, a.precision
    ));
    for (step, loss) in &history.eval {
        log.line(format!("step {step}: eval loss {loss:.6}"));
    }
    log.line(format!("reduction {:.2}%", 100.0 * history.reduction()));
    log.write(&a.out.join("train.log"))
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    const STAGE: &str = "gradcheck";
    let mut config = resolve(&a.model, STAGE)?;
    if let Some(d) = a.dim {
        config.dim = d;
    }
    config.validate().stage(STAGE)?;
    if a.frames == 0 {
        return Err(CliError::validation(STAGE, "--frames must be positive"));
    }
    let model = Model64::new(config.clone()).stage(STAGE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let frames = DMatrix::from_fn(a.frames, config.input_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let units = (0..a.frames).map(|_| rng.random_range(0..config.num_classes)).collect();
    let targets = TargetStream::new(units, config.resolutions_ms[0]);
    let mask = (0..1000u64)
        .find_map(|k| model.mask_for(a.frames, a.seed.wrapping_add(k)).ok())
        .ok_or_else(|| CliError::runtime(STAGE, "could not draw a mask with a masked frame"))?;
    let r = grad_check(&model, &frames, &targets, &mask, a.eps, a.samples, a.seed).stage(STAGE)?;
    let pass = r.max_rel_error < a.tolerance;
    let summary = json!({
        "model": a.model,
        "dim": config.dim,
        "frames": a.frames,
        "eps": a.eps,
        "seed": a.seed,
        "tensors": r.tensors,
        "checked": r.checked,
        "max_rel_error": r.max_rel_error,
        "worst": r.worst,
        "tolerance": a.tolerance,
        "pass": pass,
    });
    write_json(&a.out, &summary, STAGE)?;
    let mut log = RunLog::new(STAGE);
    log.line(format!("model {} dim {} frames {}", a.model, config.dim, a.frames));
    log.line(format!("{} entries over {} tensors, eps {}", r.checked, r.tensors, a.eps));
    log.line(format!(
        "max relative error {:e} at {} ({})",
        r.max_rel_error,
        r.worst,
        if pass { "pass" } else { "FAIL" }
    ));
    log.write(&log_path_for_file(&a.out))?;
    if pass {
        Ok(())
    } else {
        Err(CliError::runtime(
            STAGE,
            format!("max relative error {:e} at {} exceeds {:e}", r.max_rel_error, r.worst, a.tolerance),
        ))
    }
}

pub fn extract(a: &ExtractArgs) -> CliResult<()> {
    const STAGE: &str = "extract";
    let (model, source) = match (&a.run, &a.model) {
        (Some(run), _) => (load_run(run, STAGE)?, format!("run {}", run.display())),
        (None, Some(m)) => (Model64::new(resolve(m, STAGE)?).stage(STAGE)?, format!("untrained {m}")),
        (None, None) => return Err(CliError::validation(STAGE, "pass --run or --model")),
    };
    let (corpus, _) = corpus_examples(&a.data, STAGE)?;
    let dtype = match a.dtype {
        DumpType::F32 => Dtype::F32,
        DumpType::F64 => Dtype::F64,
    };
    create_dir(&a.out, STAGE)?;
    let mut layers: Vec<String> = Vec::new();
    for u in &corpus.utterances {
        let m = extract_dumps(&model, &u.id, &u.frames, &a.out.join(&u.id), dtype).stage(&format!("{STAGE}: {}", u.id))?;
        if layers.is_empty() {
            layers = m.layer_ids().map(String::from).collect();
        }
    }
    let summary = json!({
        "source": source,
        "utterances": corpus.len(),
        "dtype": format!("{:?}", a.dtype).to_lowercase(),
        "layers": layers,
    });
    write_json(&a.out.join("extract.json"), &summary, STAGE)?;
    let mut log = RunLog::new(STAGE);
    log.line(source);
    log.line(format!("{} utterances, {} layers each", corpus.len(), layers.len()));
    log.line(format!("layers: {}", layers.join(" ")));
    log.write(&a.out.join("extract.log"))
}
