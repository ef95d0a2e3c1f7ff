//! Layer-importance weights learned by downstream adaptors: normalization,
//! per-group mass and dominance reports, and the per-task bar CSV.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::curve::{join_curves, Curve};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How the values in a weight file should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Raw logits; normalized with a max-subtracted softmax.
    Softmax,
    /// Already a distribution; validated and renormalized.
    AlreadyNormalized,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Softmax => "softmax",
            WeightMode::AlreadyNormalized => "normalized",
        })
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "softmax" | "logits" => Ok(WeightMode::Softmax),
            "normalized" | "already_normalized" => Ok(WeightMode::AlreadyNormalized),
            other => Err(Error::Invalid(format!(
                "unknown weight mode {other:?} (expected softmax or normalized)"
            ))),
        }
    }
}

/// Tolerance on the sum of weights given as already normalized.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// Default dominance threshold for a group's mass.
pub const DEFAULT_THRESHOLD: f64 = 0.4;
/// Masses this close below a threshold still count as reaching it.
const THRESHOLD_SLACK: f64 = 1e-9;

pub fn normalize<T: Real>(raw: &[T], mode: WeightMode) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Err(Error::Invalid("no layer weights".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("layer weights".into()));
    }
    match mode {
        WeightMode::Softmax => {
            let max = raw.iter().copied().fold(raw[0], |a, b| if b > a { b } else { a });
            let exps: Vec<T> = raw.iter().map(|&v| (v - max).exp()).collect();
            let total = exps.iter().fold(T::zero(), |a, &b| a + b);
            Ok(exps.into_iter().map(|e| e / total).collect())
        }
        WeightMode::AlreadyNormalized => {
            if let Some(v) = raw.iter().find(|v| **v < T::zero()) {
                return Err(Error::Invalid(format!("negative weight {v}")));
            }
            let total = raw.iter().fold(T::zero(), |a, &b| a + b);
            if (total.to_f64_lossy() - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::Invalid(format!("weights sum to {total}, not 1")));
            }
            Ok(raw.iter().map(|&v| v / total).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Real = f64> {
    pub task: String,
    pub layer_ids: Vec<String>,
    pub raw: Vec<T>,
    pub normalized: Vec<T>,
}

impl<T: Real> LayerWeights<T> {
    pub fn new(task: impl Into<String>, layer_ids: Vec<String>, raw: Vec<T>, mode: WeightMode) -> Result<Self> {
        let task = task.into();
        if layer_ids.len() != raw.len() {
            return Err(Error::Shape(format!(
                "task {task}: {} layer ids but {} weights",
                layer_ids.len(),
                raw.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = layer_ids.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::Invalid(format!("task {task}: layer {dup} listed twice")));
        }
        let normalized = normalize(&raw, mode).map_err(|e| match e {
            Error::Invalid(m) => Error::Invalid(format!("task {task}: {m}")),
            other => other,
        })?;
        Ok(Self {
            task,
            layer_ids,
            raw,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.layer_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer_ids.is_empty()
    }

    pub fn weight(&self, layer_id: &str) -> Option<T> {
        self.layer_ids.iter().position(|l| l == layer_id).map(|i| self.normalized[i])
    }

    /// Entropy of the normalized weights in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .normalized
            .iter()
            .map(|w| w.to_f64_lossy())
            .filter(|&w| w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }

    pub fn to_curve(&self) -> Curve {
        Curve::new(
            self.layer_ids
                .iter()
                .cloned()
                .zip(self.normalized.iter().map(|w| w.to_f64_lossy()))
                .collect(),
        )
    }
}

/// A named set of layers whose combined weight is reported.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub layers: Vec<String>,
    /// Dominance threshold; the report default applies when unset.
    pub threshold: Option<f64>,
}

impl Group {
    pub fn new(name: impl Into<String>, layers: &[&str]) -> Self {
        Self {
            name: name.into(),
            layers: layers.iter().map(|s| s.to_string()).collect(),
            threshold: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }
}

/// `name=L1,L2[@threshold]`, e.g. `low-res=T8,T9@0.4`.
impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("group {s:?}: expected name=layer,layer[@threshold]")))?;
        let (list, threshold) = match rest.rsplit_once('@') {
            Some((l, t)) => {
                let t: f64 = t
                    .trim()
                    .parse()
                    .map_err(|_| Error::Invalid(format!("group {name}: bad threshold {t:?}")))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::Invalid(format!("group {name}: threshold {t} outside [0, 1]")));
                }
                (l, Some(t))
            }
            None => (rest, None),
        };
        let layers: Vec<String> = list
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if name.trim().is_empty() || layers.is_empty() {
            return Err(Error::Invalid(format!("group {s:?}: empty name or layer list")));
        }
        Ok(Self {
            name: name.trim().to_string(),
            layers,
            threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub layers: Vec<String>,
    pub mass: f64,
    pub threshold: f64,
    pub dominant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    pub task: String,
    pub n_layers: usize,
    pub entropy: f64,
    /// `(layer_id, weight)`, heaviest first, lower layer index on ties.
    pub top: Vec<(String, f64)>,
    pub groups: Vec<GroupReport>,
}

impl WeightReport {
    /// `ln L`, the entropy of uniform weights.
    pub fn max_entropy(&self) -> f64 {
        (self.n_layers as f64).ln()
    }

    pub fn dominant_groups(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| g.dominant)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task: {}", self.task);
        let _ = writeln!(s, "layers: {}", self.n_layers);
        let _ = writeln!(s, "entropy_nats: {:.6} (uniform {:.6})", self.entropy, self.max_entropy());
        let top: Vec<String> = self.top.iter().map(|(l, w)| format!("{l}={w:.6}")).collect();
        let _ = writeln!(s, "top: {}", top.join(" "));
        for g in &self.groups {
            let _ = writeln!(
                s,
                "group {}: mass {:.6} threshold {} {} [{}]",
                g.name,
                g.mass,
                g.threshold,
                if g.dominant { "DOMINANT" } else { "-" },
                g.layers.join(",")
            );
        }
        s
    }
}

pub fn report<T: Real>(
    weights: &LayerWeights<T>,
    groups: &[Group],
    top_k: usize,
    default_threshold: f64,
) -> Result<WeightReport> {
    let mut claimed: HashSet<&str> = HashSet::new();
    let mut group_reports = Vec::with_capacity(groups.len());
    for g in groups {
        let mut mass = 0.0;
        for l in &g.layers {
            let w = weights.weight(l).ok_or_else(|| {
                Error::Invalid(format!("group {}: unknown layer {l} for task {}", g.name, weights.task))
            })?;
            if !claimed.insert(l.as_str()) {
                return Err(Error::Invalid(format!("group {}: layer {l} is in more than one group", g.name)));
            }
            mass += w.to_f64_lossy();
        }
        let threshold = g.threshold.unwrap_or(default_threshold);
        group_reports.push(GroupReport {
            name: g.name.clone(),
            layers: g.layers.clone(),
            mass,
            threshold,
            dominant: mass >= threshold - THRESHOLD_SLACK,
        });
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights.normalized[b]
            .partial_cmp(&weights.normalized[a])
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    let top = order
        .into_iter()
        .take(top_k)
        .map(|i| (weights.layer_ids[i].clone(), weights.normalized[i].to_f64_lossy()))
        .collect();
    Ok(WeightReport {
        task: weights.task.clone(),
        n_layers: weights.len(),
        entropy: weights.entropy(),
        top,
        groups: group_reports,
    })
}

/// Bar-chart table: header `layer_id,<task>...`, one row per layer.
pub fn weights_csv<T: Real>(tasks: &[LayerWeights<T>]) -> String {
    let curves: Vec<(String, Curve)> = tasks.iter().map(|w| (w.task.clone(), w.to_curve())).collect();
    join_curves(&curves)
}

/// Raw rows of a weight file, grouped by task in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub mode: Option<WeightMode>,
    pub tasks: Vec<(String, Vec<String>, Vec<f64>)>,
}

impl WeightFile {
    /// Normalize every task. `mode` overrides the file's own `# mode:` line.
    pub fn into_weights(self, mode: Option<WeightMode>) -> Result<Vec<LayerWeights<f64>>> {
        let mode = mode.or(self.mode).ok_or_else(|| {
            Error::Invalid("weight mode not declared; add '# mode: softmax|normalized' or pass it explicitly".into())
        })?;
        self.tasks
            .into_iter()
            .map(|(task, ids, raw)| LayerWeights::new(task, ids, raw, mode))
            .collect()
    }
}

/// Three-column TSV `task, layer_id, value`. An optional `# mode: X` comment
/// declares how values are read; other `#` lines and a `task` header are skipped.
pub fn parse_weights(text: &str, origin: &Path) -> Result<WeightFile> {
    let mut mode = None;
    let mut tasks: Vec<(String, Vec<String>, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(comment) = t.strip_prefix('#') {
            if let Some(m) = comment.trim().strip_prefix("mode:") {
                mode = Some(m.parse().map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?);
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::parse(origin, lineno, format!("expected 3 columns, got {}", cols.len())));
        }
        if tasks.is_empty() && cols == ["task", "layer_id", "value"] {
            continue;
        }
        let value: f64 = cols[2]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad value {:?}", cols[2])))?;
        let entry = match tasks.iter_mut().find(|(t, _, _)| t == cols[0]) {
            Some(e) => e,
            None => {
                tasks.push((cols[0].to_string(), Vec::new(), Vec::new()));
                tasks.last_mut().expect("just pushed")
            }
        };
        if entry.1.iter().any(|l| l == cols[1]) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("layer {} repeated for task {}", cols[1], cols[0]),
            ));
        }
        entry.1.push(cols[1].to_string());
        entry.2.push(value);
    }
    if tasks.is_empty() {
        return Err(Error::format(origin, "no weight rows"));
    }
    Ok(WeightFile { mode, tasks })
}

pub fn read_weights(path: &Path) -> Result<WeightFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weights(&text, path)
}

pub fn write_weights<T: Real>(tasks: &[LayerWeights<T>], path: &Path) -> Result<()> {
    let mut s = String::from("# mode: normalized\ntask\tlayer_id\tvalue\n");
    for w in tasks {
        for (l, v) in w.layer_ids.iter().zip(&w.normalized) {
            let _ = writeln!(s, "{}\t{l}\t{}", w.task, v.to_f64_lossy());
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
