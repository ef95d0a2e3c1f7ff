//! Acceptance suite: one check per requirement, each printed as a
//! PASS/FAIL line. Exits nonzero if any check fails. Extra arguments act as
//! substring filters on the check names.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use probekit::cca::{canonical_correlations, pwcca, CcaOptions};
use probekit::cluster::{kmeans, KMeansOptions};
use probekit::featio::read_dump;
use probekit::mi::{mutual_information, JointTable};
use probekit::stats::spearman;
use probekit::testbed::{extract, grad_check, Model, ModelConfig, ResidualMode, TargetStream, PRESETS};
use probekit::{MiResult64, Model64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    ensure(start.elapsed() < limit, || format!("took {s:.1} s, limit {} s", limit.as_secs()))?;
    Ok(s)
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cca_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let full = CcaOptions { variance_keep: 1.0, standardize: false };
    let mut worst = 0.0f64;
    for i in 0..50 {
        let n = rng.random_range(40..=500);
        let dx = rng.random_range(1..=16);
        let dy = rng.random_range(1..=16);
        let x = gaussian(&mut rng, n, dx);
        // y shares a random linear image of x so correlations span (0, 1)
        let mix = gaussian(&mut rng, dx, dy) * rng.random_range(0.0..1.5);
        let y = &x * mix + gaussian(&mut rng, n, dy);
        let ours = canonical_correlations(&x, &y, &full).map_err(|e| format!("instance {i}: {e}"))?;
        let oracle = probekit_oracles::canonical_correlations(&rows(&x), &rows(&y));
        ensure(ours.rhos.len() == oracle.len(), || {
            format!("instance {i}: {} rhos vs {} from the oracle", ours.rhos.len(), oracle.len())
        })?;
        for (a, b) in ours.rhos.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < 1e-6, || format!("max |drho| = {worst:e}"))?;
    let s = within(Duration::from_secs(30), start)?;
    Ok(format!("max |drho| = {worst:.2e} over 50 instances, {s:.1} s"))
}

fn cca_invariance() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = CcaOptions::default();
    let x = gaussian(&mut rng, 400, 10);
    let own = pwcca(&x, &x, &opts).map_err(|e| e.to_string())?.pwcca;
    ensure(own >= 1.0 - 1e-6, || format!("PWCCA(X, X) = {own}"))?;
    let mut lowest = f64::INFINITY;
    for i in 0..20 {
        let a = loop {
            let a = gaussian(&mut rng, 10, 10);
            if a.determinant().abs() > 1e-3 {
                break a;
            }
        };
        let p = pwcca(&x, &(&x * a), &opts).map_err(|e| format!("map {i}: {e}"))?.pwcca;
        lowest = lowest.min(p);
    }
    ensure(lowest >= 1.0 - 1e-4, || format!("min PWCCA(X, XA) = {lowest}"))?;
    Ok(format!("PWCCA(X, X) = {own:.12}, min over 20 maps PWCCA(X, XA) = {lowest:.12}"))
}

/// Calls `f` with every table of `cells` non-negative counts summing to `n`.
fn compositions(n: u64, cells: usize, buf: &mut Vec<u64>, f: &mut dyn FnMut(&[u64])) {
    if buf.len() + 1 == cells {
        buf.push(n);
        f(buf);
        buf.pop();
        return;
    }
    for c in 0..=n {
        buf.push(c);
        compositions(n - c, cells, buf, f);
        buf.pop();
    }
}

fn check_bounds(r: &MiResult64) -> bool {
    r.mi_nats >= 0.0 && r.mi_nats <= r.hx.min(r.hy) + 1e-12
}

fn mi_exactness() -> Result<String, String> {
    let mut tables = 0u64;
    let mut worst = 0.0f64;
    let mut failure: Option<String> = None;
    for kx in 1..=4 {
        for ky in 1..=4 {
            for n in 1..=12u64 {
                compositions(n, kx * ky, &mut Vec::with_capacity(16), &mut |flat| {
                    let rows: Vec<Vec<u64>> = flat.chunks(ky).map(<[u64]>::to_vec).collect();
                    let t = JointTable::from_counts(&rows).expect("valid table");
                    let ours: MiResult64 = mutual_information(&t);
                    let direct = probekit_oracles::mutual_information_term_by_term(&rows);
                    let d = (ours.mi_nats - direct).abs();
                    worst = worst.max(d);
                    if failure.is_none() && (d >= 1e-12 || !check_bounds(&ours)) {
                        failure = Some(format!("table {rows:?}: {} vs {direct}", ours.mi_nats));
                    }
                    tables += 1;
                });
            }
        }
    }
    if let Some(f) = failure {
        return Err(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10_000 {
        let kx = rng.random_range(1..=10);
        let ky = rng.random_range(1..=10);
        let mut rows: Vec<Vec<u64>> = (0..kx).map(|_| (0..ky).map(|_| rng.random_range(0..30)).collect()).collect();
        rows[0][0] += 1;
        let r: MiResult64 = mutual_information(&JointTable::from_counts(&rows).expect("valid table"));
        ensure(check_bounds(&r), || format!("random table {i}: I = {}, Hx = {}, Hy = {}", r.mi_nats, r.hx, r.hy))?;
    }
    Ok(format!(
        "{tables} exhaustive tables, max |dI| = {worst:.2e}; bounds hold on 10000 random tables"
    ))
}

fn kmeans_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut steps = 0;
    for run in 0..100 {
        let n = rng.random_range(10..=200);
        let d = rng.random_range(1..=6);
        let k = rng.random_range(1..=n.min(12));
        let p = gaussian(&mut rng, n, d);
        let opts = KMeansOptions {
            restarts: rng.random_range(1..=3),
            jumps: [0, 0, 4][run as usize % 3],
            ..KMeansOptions::new(k, run)
        };
        let c = kmeans(&p, &opts).map_err(|e| format!("run {run}: {e}"))?;
        steps += c.inertia_history.len();
        if let Some(w) = c.inertia_history.windows(2).position(|w| w[1] > w[0]) {
            return Err(format!("run {run}: inertia rose at iteration {}", w + 1));
        }
    }
    let (restarts, jumps) = (5, 8);
    let mut worst = 0.0f64;
    for inst in 0..100u64 {
        let p = gaussian(&mut rng, 8, 2);
        let best = probekit_oracles::kmeans_optimal_inertia(&rows(&p), 2);
        let c = kmeans(&p, &KMeansOptions { restarts, jumps, ..KMeansOptions::new(2, inst) }).map_err(|e| e.to_string())?;
        let d = c.inertia - best;
        worst = worst.max(d.abs());
        ensure(d.abs() < 1e-9, || format!("instance {inst}: inertia {} vs optimum {best}", c.inertia))?;
    }
    Ok(format!(
        "100 runs monotone ({steps} iterations); 100 N=8 k=2 instances at optimum with {restarts} restarts and {jumps} jump candidates, max dev {worst:.1e}"
    ))
}

fn spearman_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 1000 {
        let n = rng.random_range(3..=60);
        let levels = rng.random_range(2..=8);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { rng.random_range(0..levels) as f64 } else { rng.sample(StandardNormal) })
            .collect();
        let ours = match spearman(&x, &y) {
            Ok(v) => v,
            Err(_) => continue,
        };
        worst = worst.max((ours - probekit_oracles::spearman(&x, &y)).abs());
        let up: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let down: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
        let (a, b) = (spearman(&x, &up).unwrap(), spearman(&x, &down).unwrap());
        ensure((a - 1.0).abs() <= 1e-12 && (b + 1.0).abs() <= 1e-12, || format!("monotone pair gave {a}, {b}"))?;
        tested += 1;
    }
    ensure(worst < 1e-12, || format!("max |drho| = {worst:e}"))?;
    Ok(format!("1000 tied vectors, max |drho| = {worst:.1e}; monotone pairs give +/-1"))
}

fn gradient_checks() -> Result<String, String> {
    let start = Instant::now();
    ensure(PRESETS.len() == 6, || format!("{} presets", PRESETS.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut parts = Vec::new();
    for (i, name) in PRESETS.iter().enumerate() {
        let cfg = ModelConfig::preset(name).map_err(|e| e.to_string())?;
        ensure(cfg.dim == 32, || format!("{name}: dim {}", cfg.dim))?;
        let mut m = Model64::new(cfg.clone()).map_err(|e| e.to_string())?;
        m.params_mut().perturb(0.05, 100 + i as u64);
        let x = gaussian(&mut rng, 16, cfg.input_dim);
        let t = TargetStream::new((0..16).map(|_| rng.random_range(0..cfg.num_classes)).collect(), 20);
        let mask: Vec<bool> = (0..16).map(|j| j % 3 != 0).collect();
        let r = grad_check(&m, &x, &t, &mask, 1e-5, 300, i as u64).map_err(|e| format!("{name}: {e}"))?;
        ensure(r.max_rel_error < 1e-4, || format!("{name}: {:e} at {}", r.max_rel_error, r.worst))?;
        parts.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    let s = within(Duration::from_secs(120), start)?;
    Ok(format!("{} ({s:.1} s)", parts.join(", ")))
}

/// Frame-rate ratio of every layer, written out from the architecture.
fn expected_ratios(name: &str) -> BTreeMap<String, usize> {
    let spec: &[(&str, usize)] = match name {
        "mr-base-toy" => &[("T0 T1 T2 T3 T4", 1), ("D0 T5 T6 T7 T8", 2), ("U0 T9 T10 T11 T12", 1)],
        "b2-a" => &[
            ("T0 T1 T2 T3", 1),
            ("D0 T4 T5", 2),
            ("D1 T6 T7", 4),
            ("U1 T8 T9", 2),
            ("U0 T10 T11 T12", 1),
        ],
        "b5-a" => &[("T0 T1 T2 T3 T4 D0 T5 T6 T7 T8 U0 T9 T10 T11 T12", 1)],
        _ => unreachable!(),
    };
    spec.iter()
        .flat_map(|(ids, r)| ids.split(' ').map(move |id| (id.to_string(), *r)))
        .collect()
}

fn shape_laws() -> Result<String, String> {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dumps = 0;
    for name in ["mr-base-toy", "b2-a", "b5-a"] {
        let m = Model64::new(ModelConfig::preset(name).unwrap()).unwrap();
        let expected = expected_ratios(name);
        for t in [7usize, 8, 16, 33] {
            let dir = tmp.path().join(format!("{name}-{t}"));
            let x = gaussian(&mut rng, t, 16);
            let manifest = extract(&m, "u", &x, &dir, probekit::featio::Dtype::F32).map_err(|e| e.to_string())?;
            let ids: Vec<&str> = manifest.layer_ids().collect();
            ensure(ids.len() == expected.len(), || format!("{name}: layers {ids:?}"))?;
            for entry in &manifest.layers {
                let r = *expected
                    .get(&entry.layer_id)
                    .ok_or_else(|| format!("{name}: unexpected layer {}", entry.layer_id))?;
                let dump = read_dump(&dir.join(&entry.path)).map_err(|e| e.to_string())?;
                ensure(dump.frames() == t.div_ceil(r) && dump.frame_period_ms == 20 * r as u32, || {
                    format!("{name} T={t} {}: {} frames at {} ms", entry.layer_id, dump.frames(), dump.frame_period_ms)
                })?;
                dumps += 1;
            }
        }
    }
    Ok(format!("{dumps} dumps match ceil(T / ratio) for T in 7, 8, 16, 33; b5-a stays at base rate"))
}

fn ablation_semantics() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = gaussian(&mut rng, 16, 16);
    let mask: Vec<bool> = (0..16).map(|i| i % 4 == 1).collect();
    let fresh = |cfg: ModelConfig, seed: u64| {
        let mut m = Model64::new(cfg).unwrap();
        m.params_mut().perturb(0.05, seed);
        m
    };

    // auxiliary loss off: identical layers under shared parameters
    for name in ["mr-base-toy", "b2-a"] {
        let with = fresh(ModelConfig::preset(name).unwrap(), 1);
        let mut cfg = ModelConfig::preset(name).unwrap();
        cfg.aux_loss_enabled = false;
        let mut without = Model::new(cfg).unwrap();
        let shared = without.copy_shared_from(&with);
        ensure(shared == without.params().len(), || format!("{name}: {shared} shared tensors"))?;
        let a = with.forward(&x, &mask).unwrap();
        let b = without.forward(&x, &mask).unwrap();
        ensure(a.layer_ids() == b.layer_ids(), || format!("{name}: layer lists differ"))?;
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            ensure(la.data == lb.data, || format!("{name}: layer {} differs without aux loss", la.layer_id))?;
        }
    }

    // downsampling off: D0/U0 stay at the base rate
    let mr = fresh(ModelConfig::preset("mr-base-toy").unwrap(), 2).forward_unmasked(&x).unwrap();
    let b5 = fresh(ModelConfig::preset("b5-a").unwrap(), 2).forward_unmasked(&x).unwrap();
    for id in ["D0", "U0"] {
        ensure(b5.layer(id).is_some_and(|l| l.data.nrows() == 16 && l.frame_period_ms == 20), || {
            format!("b5-a {id} changes resolution")
        })?;
    }
    ensure(mr.layer("D0").unwrap().data.nrows() == 8, || "mr-base-toy D0 does not halve".into())?;
    ensure(b5.layers.iter().all(|l| l.data.nrows() == 16), || "b5-a changes a length".into())?;

    // residual placement
    let post = fresh(ModelConfig::preset("mr-base-toy").unwrap(), 3);
    let mut cfg = ModelConfig::preset("mr-base-toy").unwrap();
    cfg.residual_mode = ResidualMode::PreDecoder;
    let mut pre = Model::new(cfg).unwrap();
    pre.copy_shared_from(&post);
    let a = post.forward_unmasked(&x).unwrap();
    let b = pre.forward_unmasked(&x).unwrap();
    let gap = (&a.main_logits - &b.main_logits).amax();
    ensure(gap > 1e-6, || format!("modes agree on a random instance (gap {gap:e})"))?;
    let decoder = post.config().num_blocks() - 1;
    let (mut post, mut pre) = (post, pre);
    post.zero_block_outputs(decoder);
    pre.zero_block_outputs(decoder);
    let a = post.forward_unmasked(&x).unwrap();
    let b = pre.forward_unmasked(&x).unwrap();
    let same = (&a.main_logits - &b.main_logits).amax();
    ensure(same < 1e-12, || format!("modes differ with identity decoder ({same:e})"))?;
    Ok(format!(
        "aux-off bit-identical; b5-a keeps D0/U0 at 20 ms; residual modes differ by {gap:.2e}, identity decoder {same:.1e}"
    ))
}

fn probe(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_probe"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("probe {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr).trim())
    })
}

const MODELS: [&str; 3] = ["mr-base-toy", "b4-a", "b5-a"];
const METRICS: [&str; 6] = ["cca-word", "cca-phone", "cca-mel", "mi-word", "mi-phone", "sts"];

/// extract -> pool -> metrics -> report inside `dir`, with trained runs in `runs`.
fn analysis_pass(dir: &Path, runs: &Path, data: &Path) -> Result<(), String> {
    let data = data.to_str().unwrap();
    let ann = format!("{data}/annotations.tsv");
    probe(dir, &["pool", "--features", &format!("{data}/fbank"), "--annotations", &ann, "--kind", "word", "--out", "pooled/fbank-word"])?;
    probe(dir, &["pool", "--features", &format!("{data}/fbank"), "--annotations", &ann, "--kind", "phone", "--out", "pooled/fbank-phone"])?;
    for m in MODELS {
        let run = runs.join(m);
        let feats = format!("feats/{m}");
        probe(dir, &["extract", "--run", run.to_str().unwrap(), "--data", data, "--out", &feats])?;
        for kind in ["word", "phone", "utterance"] {
            probe(dir, &["pool", "--features", &feats, "--annotations", &ann, "--kind", kind, "--out", &format!("pooled/{m}/{kind}")])?;
        }
        let res = |metric: &str| format!("results/{m}/{metric}.csv");
        let (pw, pp, pu) = (format!("pooled/{m}/word"), format!("pooled/{m}/phone"), format!("pooled/{m}/utterance"));
        probe(dir, &["cca", "--x", &pw, "--y", &format!("{data}/words.emb"), "--samples", "7000", "--seed", "1", "--out", &res("cca-word")])?;
        probe(dir, &["cca", "--x", &pp, "--y", &format!("{data}/phones.emb"), "--samples", "7000", "--seed", "1", "--out", &res("cca-phone")])?;
        probe(dir, &["cca", "--x", &pp, "--y", "pooled/fbank-phone", "--seed", "1", "--out", &res("cca-mel")])?;
        probe(dir, &["mi", "--x", &pw, "--k", "50", "--seed", "1", "--permutations", "5", "--out", &res("mi-word")])?;
        probe(dir, &["mi", "--x", &pp, "--k", "50", "--seed", "1", "--permutations", "5", "--out", &res("mi-phone")])?;
        probe(dir, &["sts", "--x", &pu, "--pairs", &format!("{data}/pairs.tsv"), "--out", &res("sts")])?;
    }
    probe(dir, &["report", "--models", &MODELS.join(","), "--metric", &METRICS.join(","), "--root", "results", "--out", "reports"])
}

/// Every file under `dir`, relative path -> bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let root = tmp.path();
    probe(root, &["synth", "--out", "data", "--seed", "0"])?;
    let mut reductions = Vec::new();
    for m in MODELS {
        probe(root, &["train", "--model", m, "--data", "data", "--out", &format!("runs/{m}"), "--steps", "2000", "--seed", "0"])?;
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(root.join(format!("runs/{m}/train.json"))).unwrap()).unwrap();
        let r = summary["reduction"].as_f64().ok_or("train.json lacks reduction")?;
        ensure(r >= 0.2, || format!("{m}: loss reduced by only {:.1}%", 100.0 * r))?;
        reductions.push(format!("{m} -{:.0}%", 100.0 * r));
    }
    for rep in ["again-1", "again-2"] {
        probe(root, &["train", "--model", "mr-base-toy", "--data", "data", "--out", rep, "--steps", "30", "--eval-every", "10"])?;
    }
    for f in ["params.json", "loss.csv", "train.json"] {
        ensure(fs::read(root.join("again-1").join(f)).ok() == fs::read(root.join("again-2").join(f)).ok(), || {
            format!("repeated training wrote a different {f}")
        })?;
    }
    let data = root.join("data");
    let runs = root.join("runs");
    for pass in ["first", "second"] {
        let dir = root.join(pass);
        fs::create_dir_all(&dir).unwrap();
        analysis_pass(&dir, &runs, &data)?;
    }
    let a = snapshot(&root.join("first"));
    let b = snapshot(&root.join("second"));
    ensure(a.keys().eq(b.keys()), || "the two passes wrote different file sets".into())?;
    if let Some((f, _)) = a.iter().find(|(f, bytes)| b[*f] != **bytes) {
        return Err(format!("{f} differs between passes"));
    }

    let layers = fs::read_to_string(root.join("first/pooled/mr-base-toy/word/layers.txt")).unwrap();
    let layer_ids: Vec<&str> = layers.lines().collect();
    for metric in METRICS {
        let csv = fs::read_to_string(root.join(format!("first/reports/{metric}.csv"))).unwrap();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        ensure(header == format!("layer_id,{}", MODELS.join(",")), || format!("{metric}: header {header}"))?;
        let body: Vec<&str> = lines.collect();
        ensure(body.len() == layer_ids.len(), || format!("{metric}: {} rows for {} layers", body.len(), layer_ids.len()))?;
        for (row, id) in body.iter().zip(&layer_ids) {
            let cells: Vec<&str> = row.split(',').collect();
            ensure(cells[0] == *id && cells.len() == MODELS.len() + 1 && cells[1..].iter().all(|c| c.parse::<f64>().is_ok()), || {
                format!("{metric}: bad row {row}")
            })?;
        }
    }
    let s = within(Duration::from_secs(600), start)?;
    Ok(format!(
        "{}; repeated training identical; {} files byte-identical across two passes; {} report CSVs with {} layers x {} models; {s:.0} s",
        reductions.join(", "),
        a.len(),
        METRICS.len(),
        layer_ids.len(),
        MODELS.len()
    ))
}

fn layer_weight_reports() -> Result<String, String> {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let ids = ["T0", "T1", "T2", "T3", "T4", "D0", "T5", "T6", "T7", "T8", "U0", "T9", "T10", "T11", "T12"];
    // asr: 0.42 on T8 + T9; se: 0.66 on the first three layers; rest spread evenly
    let spread = |heavy: &[(&str, f64)]| -> Vec<f64> {
        let mass: f64 = heavy.iter().map(|h| h.1).sum();
        let rest = (1.0 - mass) / (ids.len() - heavy.len()) as f64;
        ids.iter()
            .map(|id| heavy.iter().find(|h| h.0 == *id).map_or(rest, |h| h.1))
            .collect()
    };
    let asr = spread(&[("T8", 0.22), ("T9", 0.20)]);
    let se = spread(&[("T0", 0.30), ("T1", 0.20), ("T2", 0.16)]);
    let flat = vec![1.0 / ids.len() as f64; ids.len()];
    let mut tsv = String::from("# mode: normalized\ntask\tlayer_id\tvalue\n");
    for (task, w) in [("asr", &asr), ("se", &se), ("ks", &flat)] {
        for (id, v) in ids.iter().zip(w.iter()) {
            tsv.push_str(&format!("{task}\t{id}\t{v}\n"));
        }
    }
    fs::write(tmp.path().join("weights.tsv"), tsv).unwrap();
    probe(
        tmp.path(),
        &[
            "weights", "--input", "weights.tsv", "--out", "rep", "--threshold", "0.4",
            "--group", "low-res=T8,T9", "--group", "early=T0,T1,T2@0.66",
        ],
    )?;
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("rep/report.json")).unwrap()).unwrap();
    let group = |task: usize, g: usize| (json[task]["groups"][g]["mass"].as_f64().unwrap(), json[task]["groups"][g]["dominant"] == true);
    let (asr_low, asr_low_dom) = group(0, 0);
    let (se_early, se_early_dom) = group(1, 1);
    ensure((asr_low - 0.42).abs() < 1e-9 && asr_low_dom, || format!("asr low-res mass {asr_low}, dominant {asr_low_dom}"))?;
    ensure((se_early - 0.66).abs() < 1e-9 && se_early_dom, || format!("se early mass {se_early}, dominant {se_early_dom}"))?;
    ensure(!group(0, 1).1 && !group(1, 0).1 && !group(2, 0).1 && !group(2, 1).1, || "unexpected dominance flag".into())?;
    Ok(format!("asr low-res {asr_low:.2} >= 0.4 dominant; se early {se_early:.2} >= 0.66 dominant; others not flagged"))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("cca oracle equivalence", cca_oracle),
        ("cca invariance", cca_invariance),
        ("mi exactness", mi_exactness),
        ("k-means monotonicity and optimum", kmeans_checks),
        ("spearman", spearman_checks),
        ("testbed gradients", gradient_checks),
        ("shape laws", shape_laws),
        ("ablation semantics", ablation_semantics),
        ("end-to-end pipeline", end_to_end),
        ("layer-weight reports", layer_weight_reports),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} checks passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
