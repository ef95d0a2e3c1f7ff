//! Mean pooling of frame features over annotated spans.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featio::{self, Dtype, FeatureDump, SpanAnnotation, SpanKind};
use crate::scalar::Real;

/// `N x D` pooled span vectors with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSet<T: Real = f64> {
    pub vectors: DMatrix<T>,
    pub labels: Vec<String>,
    pub kind: SpanKind,
    pub layer_id: String,
}

/// A span that could not be pooled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedSpan {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PoolOutcome {
    pub set: PooledSet<f64>,
    pub skipped: Vec<SkippedSpan>,
}

/// Map a base-resolution span onto a layer whose frame period is an integer
/// multiple `r` of the base: `[floor(start / r), ceil(end / r))`.
pub fn remap_span(span: &SpanAnnotation, base_period_ms: u32, layer_period_ms: u32) -> Result<(usize, usize)> {
    if base_period_ms == 0 || layer_period_ms == 0 {
        return Err(Error::Invalid("frame periods must be positive".into()));
    }
    if !layer_period_ms.is_multiple_of(base_period_ms) {
        return Err(Error::Invalid(format!(
            "layer period {layer_period_ms} ms is not a multiple of base period {base_period_ms} ms"
        )));
    }
    let r = (layer_period_ms / base_period_ms) as usize;
    let start = span.start_frame / r;
    let end = span.end_frame.div_ceil(r);
    debug_assert!(end > start);
    Ok((start, end))
}

/// Mean-pool `dump` over every span. Spans that fall outside the dump after
/// remapping are reported in `skipped` and left out of the set; all spans must
/// share one kind.
pub fn pool_spans(dump: &FeatureDump, spans: &[SpanAnnotation], base_period_ms: u32) -> Result<PoolOutcome> {
    let kind = spans
        .first()
        .map(|s| s.kind)
        .ok_or_else(|| Error::Invalid("no spans to pool".into()))?;
    if let Some(s) = spans.iter().find(|s| s.kind != kind) {
        return Err(Error::Invalid(format!("mixed span kinds: {} and {}", kind, s.kind)));
    }
    let t = dump.frames();
    let d = dump.dims();
    let mut rows: Vec<f64> = Vec::with_capacity(spans.len() * d);
    let mut labels = Vec::with_capacity(spans.len());
    let mut skipped = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let (start, end) = remap_span(span, base_period_ms, dump.frame_period_ms)?;
        if end > t {
            skipped.push(SkippedSpan {
                index: i,
                reason: format!(
                    "span [{}, {}) of {} maps to [{start}, {end}) beyond {t} frames of layer {}",
                    span.start_frame, span.end_frame, span.utterance_id, dump.layer_id
                ),
            });
            continue;
        }
        let n = (end - start) as f64;
        for c in 0..d {
            let mut acc = 0.0;
            for r in start..end {
                acc += dump.data[(r, c)];
            }
            rows.push(acc / n);
        }
        labels.push(span.label.clone());
    }
    let vectors = DMatrix::from_row_slice(labels.len(), d, &rows);
    Ok(PoolOutcome {
        set: PooledSet {
            vectors,
            labels,
            kind,
            layer_id: dump.layer_id.clone(),
        },
        skipped,
    })
}

/// `n` distinct indices out of `len`, uniform without replacement, fixed by `seed`.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Invalid("sample size must be positive".into()));
    }
    if n > len {
        return Err(Error::Invalid(format!("cannot sample {n} of {len} items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, len, n).into_vec())
}

pub fn sample_pooled<T: Real>(set: &PooledSet<T>, n: usize, seed: u64) -> Result<PooledSet<T>> {
    let idx = sample_indices(set.len(), n, seed)?;
    Ok(set.select(&idx))
}

impl<T: Real> PooledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            vectors: self.vectors.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            kind: self.kind,
            layer_id: self.layer_id.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> PooledSet<U> {
        PooledSet {
            vectors: self.vectors.map(|v| U::lit(v.to_f64_lossy())),
            labels: self.labels.clone(),
            kind: self.kind,
            layer_id: self.layer_id.clone(),
        }
    }

    /// Stack sets of the same layer and kind (e.g. one per utterance).
    pub fn concat(parts: &[PooledSet<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        let d = first.dims();
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut vectors = DMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut at = 0;
        for p in parts {
            if p.dims() != d || p.kind != first.kind || p.layer_id != first.layer_id {
                return Err(Error::Shape(format!(
                    "cannot stack {}/{} ({} dims) onto {}/{} ({} dims)",
                    p.layer_id, p.kind, p.dims(), first.layer_id, first.kind, d
                )));
            }
            vectors.rows_mut(at, p.len()).copy_from(&p.vectors);
            labels.extend(p.labels.iter().cloned());
            at += p.len();
        }
        Ok(Self {
            vectors,
            labels,
            kind: first.kind,
            layer_id: first.layer_id.clone(),
        })
    }
}

impl PooledSet<f64> {
    /// Persist as `<stem>.prbf` (+ sidecar) and `<stem>.labels`, one label per line.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let dump = FeatureDump::new(self.layer_id.clone(), 1, self.vectors.clone())?;
        featio::write_dump(&dump, &dir.join(format!("{stem}.prbf")), Dtype::F64)?;
        let mut text = format!("# kind: {}\n", self.kind);
        for l in &self.labels {
            text.push_str(l);
            text.push('\n');
        }
        let lp = dir.join(format!("{stem}.labels"));
        fs::write(&lp, text).map_err(|e| Error::io(&lp, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let dump = featio::read_dump(&dir.join(format!("{stem}.prbf")))?;
        let lp = dir.join(format!("{stem}.labels"));
        let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
        let mut lines = text.lines();
        let kind = lines
            .next()
            .and_then(|h| h.strip_prefix("# kind: "))
            .ok_or_else(|| Error::parse(&lp, 1, "missing '# kind:' header"))?
            .parse::<SpanKind>()
            .map_err(|e| Error::parse(&lp, 1, e))?;
        let labels: Vec<String> = lines.map(str::to_string).collect();
        if labels.len() != dump.frames() {
            return Err(Error::format(
                &lp,
                format!("{} labels for {} pooled rows", labels.len(), dump.frames()),
            ));
        }
        Ok(Self {
            vectors: dump.data,
            labels,
            kind,
            layer_id: dump.layer_id,
        })
    }
}
