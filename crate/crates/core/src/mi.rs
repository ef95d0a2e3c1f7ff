//! Plug-in mutual information between discrete variables, and its per-layer
//! curve over k-means-discretized pooled representations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cluster::{kmeans, KMeansOptions};
use crate::curve::{Curve, CurveRun};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spanpool::PooledSet;

/// `kx x ky` contingency counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointTable {
    counts: Vec<u64>,
    kx: usize,
    ky: usize,
    n: u64,
}

impl JointTable {
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let kx = rows.len();
        let ky = rows.first().map_or(0, Vec::len);
        if kx == 0 || ky == 0 || rows.iter().any(|r| r.len() != ky) {
            return Err(Error::Shape("joint table must be a non-empty rectangle".into()));
        }
        let counts: Vec<u64> = rows.iter().flatten().copied().collect();
        let n = counts.iter().sum();
        if n == 0 {
            return Err(Error::Invalid("joint table has no observations".into()));
        }
        Ok(Self { counts, kx, ky, n })
    }

    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.ky + b]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.kx, self.ky)
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks_exact(self.ky).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.ky).map(|b| (0..self.kx).map(|a| self.get(a, b)).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = Vec::with_capacity(self.counts.len());
        for b in 0..self.ky {
            for a in 0..self.kx {
                counts.push(self.get(a, b));
            }
        }
        Self {
            counts,
            kx: self.ky,
            ky: self.kx,
            n: self.n,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks_exact(self.ky).map(<[u64]>::to_vec).collect()
    }
}

/// Count co-occurrences of `x[i] in [0, kx)` and `y[i] in [0, ky)`.
pub fn joint_counts(x: &[usize], y: &[usize], kx: usize, ky: usize) -> Result<JointTable> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} x labels vs {} y labels", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Invalid("no observations".into()));
    }
    if kx == 0 || ky == 0 {
        return Err(Error::Invalid("alphabet sizes must be positive".into()));
    }
    let mut counts = vec![0u64; kx * ky];
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        if a >= kx || b >= ky {
            return Err(Error::Invalid(format!(
                "observation {i}: ({a}, {b}) outside alphabet {kx}x{ky}"
            )));
        }
        counts[a * ky + b] += 1;
    }
    Ok(JointTable {
        counts,
        kx,
        ky,
        n: x.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiResult<T: Real = f64> {
    pub mi_nats: T,
    pub hx: T,
    pub hy: T,
    pub table: JointTable,
}

impl<T: Real> MiResult<T> {
    pub fn mi_bits(&self) -> T {
        self.mi_nats / T::ln_2()
    }
}

/// Sum after sorting so the result does not depend on traversal order.
fn order_free_sum<T: Real>(mut terms: Vec<T>) -> T {
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    terms.into_iter().fold(T::zero(), |a, b| a + b)
}

fn entropy_of<T: Real>(hist: &[u64], n: T) -> T {
    let terms = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = T::lit(c as f64);
            -(c / n) * (c / n).ln()
        })
        .collect();
    order_free_sum(terms)
}

/// Plug-in estimate `sum p(x,y) ln(p(x,y) / (p(x) p(y)))` with empirical
/// frequencies; empty cells contribute nothing.
pub fn mutual_information<T: Real>(table: &JointTable) -> MiResult<T> {
    let n = T::lit(table.n as f64);
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut terms = Vec::new();
    for a in 0..table.kx {
        for b in 0..table.ky {
            let c = table.get(a, b);
            if c == 0 {
                continue;
            }
            let c = T::lit(c as f64);
            let expected = T::lit(rows[a] as f64) * T::lit(cols[b] as f64);
            terms.push((c / n) * ((c * n) / expected).ln());
        }
    }
    let hx = entropy_of(&rows, n);
    let hy = entropy_of(&cols, n);
    let mi = order_free_sum(terms).max(T::zero());
    MiResult {
        mi_nats: mi,
        hx,
        hy,
        table: table.clone(),
    }
}

/// Dense indices for string labels, in sorted label order.
pub fn index_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        map.entry(l.as_ref()).or_insert(0);
    }
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    let idx = labels.iter().map(|l| map[l.as_ref()]).collect();
    (idx, map.keys().map(|s| s.to_string()).collect())
}

/// Mean and standard deviation of MI over `n_perm` label shuffles: the
/// plug-in bias floor for this sample size and alphabet.
pub fn permutation_baseline(x: &[usize], y: &[usize], kx: usize, ky: usize, n_perm: usize, seed: u64) -> Result<(f64, f64)> {
    if n_perm < 2 {
        return Err(Error::Invalid("need at least 2 permutations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut vals = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        shuffled.shuffle(&mut rng);
        let t = joint_counts(x, &shuffled, kx, ky)?;
        vals.push(mutual_information::<f64>(&t).mi_nats);
    }
    let m = vals.iter().sum::<f64>() / n_perm as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n_perm - 1) as f64;
    Ok((m, var.sqrt()))
}

/// One MI value per layer: k-means on the pooled vectors, then plug-in MI
/// between cluster ids and label ids (label indexing shared by all layers).
pub fn mi_curve<T: Real>(layers: &[PooledSet<T>], labels: &[String], k: usize, seed: u64) -> Result<CurveRun> {
    let (label_idx, alphabet) = index_labels(labels);
    if alphabet.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 distinct labels, found {}",
            alphabet.len()
        )));
    }
    for l in layers {
        if l.len() != labels.len() {
            return Err(Error::Shape(format!(
                "layer {} has {} items, labels {}",
                l.layer_id,
                l.len(),
                labels.len()
            )));
        }
    }
    let results: Vec<Result<(String, f64, usize)>> = layers
        .par_iter()
        .map(|layer| {
            let c = kmeans(&layer.vectors, &KMeansOptions::new(k, seed))?;
            let t = joint_counts(&c.assignments, &label_idx, k, alphabet.len())?;
            let used = t.row_sums().iter().filter(|&&r| r > 0).count();
            Ok((layer.layer_id.clone(), mutual_information::<f64>(&t).mi_nats, used))
        })
        .collect();
    let mut points = Vec::new();
    let mut log = vec![format!(
        "{} items, {} distinct labels, k = {k}, seed = {seed}",
        labels.len(),
        alphabet.len()
    )];
    for r in results {
        let (id, mi, used) = r?;
        log.push(format!("{id}: {used} non-empty clusters, MI {mi:.6} nats"));
        points.push((id, mi));
    }
    Ok(CurveRun {
        curve: Curve::new(points),
        log,
    })
}
