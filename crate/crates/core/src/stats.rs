//! Rank statistics and the spoken STS curve.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curve::{Curve, CurveRun};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spanpool::PooledSet;

/// An utterance pair with its human similarity judgment.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgedPair {
    pub utt_a: String,
    pub utt_b: String,
    pub human_score: f64,
}

pub fn cosine<T: Real>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of {}- and {}-dim vectors", u.len(), v.len())));
    }
    let (mut uv, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == T::zero() || vv == T::zero() {
        return Err(Error::Degenerate("cosine with a zero vector".into()));
    }
    Ok((uv / (uu.sqrt() * vv.sqrt())).max(-T::one()).min(T::one()))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks<T: Real>(x: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) -> mean rank (i + j)/2 + 1
        let r = T::from_count(i + j + 2) / T::lit(2.0);
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    let n = T::from_count(x.len());
    let mx = x.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = y.iter().fold(T::zero(), |a, &b| a + b) / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::Degenerate("constant input has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn row_vec<T: Real>(set: &PooledSet<T>, i: usize) -> Vec<T> {
    set.vectors.row(i).iter().copied().collect()
}

/// Cosine similarity of each judged pair in one layer, pairs in input order.
pub fn predicted_similarities<T: Real>(layer: &PooledSet<T>, pairs: &[JudgedPair]) -> Result<Vec<T>> {
    let index: HashMap<&str, usize> = layer
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let lookup = |u: &str| {
        index.get(u).copied().ok_or_else(|| {
            Error::Invalid(format!("utterance {u} is not pooled in layer {}", layer.layer_id))
        })
    };
    pairs
        .iter()
        .map(|p| {
            let a = lookup(&p.utt_a)?;
            let b = lookup(&p.utt_b)?;
            cosine(&row_vec(layer, a), &row_vec(layer, b))
        })
        .collect()
}

/// Per layer: Spearman's rho between cosine similarities of pooled utterance
/// vectors and the human scores.
pub fn sts_curve<T: Real>(layers: &[PooledSet<T>], pairs: &[JudgedPair]) -> Result<CurveRun> {
    if pairs.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 judged pairs, got {}", pairs.len())));
    }
    let human: Vec<T> = pairs.iter().map(|p| T::lit(p.human_score)).collect();
    let mut points = Vec::with_capacity(layers.len());
    for layer in layers {
        let predicted = predicted_similarities(layer, pairs)?;
        let rho = spearman(&predicted, &human)?;
        points.push((layer.layer_id.clone(), rho.to_f64_lossy()));
    }
    Ok(CurveRun {
        curve: Curve::new(points),
        log: vec![format!("{} judged pairs", pairs.len())],
    })
}

/// Spearman values of `x` against `n_perm` seeded shuffles of `y`.
pub fn permutation_distribution(x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    (0..n_perm)
        .map(|_| {
            shuffled.shuffle(&mut rng);
            spearman(x, &shuffled)
        })
        .collect()
}

/// Three-column TSV: `utt_a, utt_b, score`.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<JudgedPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') || (lineno == 1 && line.starts_with("utt_a")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(origin, lineno, format!("expected 3 columns, found {}", cols.len())));
        }
        let score: f64 = cols[2]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(origin, lineno, format!("bad score {:?}", cols[2])))?;
        out.push(JudgedPair {
            utt_a: cols[0].trim().to_string(),
            utt_b: cols[1].trim().to_string(),
            human_score: score,
        });
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<JudgedPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}

pub fn write_pairs(path: &Path, pairs: &[JudgedPair]) -> Result<()> {
    let mut text = String::from("utt_a\tutt_b\tscore\n");
    for p in pairs {
        text.push_str(&format!("{}\t{}\t{}\n", p.utt_a, p.utt_b, p.human_score));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
