//! Projection-weighted canonical correlation analysis (PWCCA).
//!
//! Pipeline: center each view, reduce it to the smallest SVD basis holding
//! `variance_keep` of its squared singular-value mass, take the SVD of the
//! cross product of the two orthonormal bases (its singular values are the
//! canonical correlations), then weight each correlation by how much of the
//! first view's centered columns project onto the matching canonical variate.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::curve::{Curve, CurveRun};
use crate::error::{Error, Result};
use crate::featio::{EmbeddingKind, EmbeddingTable};
use crate::scalar::Real;
use crate::spanpool::{sample_indices, PooledSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaOptions<T> {
    /// Fraction of squared singular-value mass kept per view, in (0, 1].
    pub variance_keep: T,
    /// Scale centered columns to unit variance before the SVD.
    pub standardize: bool,
}

impl<T: Real> Default for CcaOptions<T> {
    fn default() -> Self {
        Self {
            variance_keep: T::lit(0.99),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcaResult<T: Real = f64> {
    /// Canonical correlations, descending, clipped to [0, 1].
    pub rhos: Vec<T>,
    /// Projection weights (sum to 1); empty until [`pwcca_score`] runs.
    pub weights: Vec<T>,
    pub pwcca: T,
    /// Number of canonical pairs, `min(kx, ky)`.
    pub k: usize,
    /// Retained SVD rank of each view.
    pub kx: usize,
    pub ky: usize,
    /// Unit-norm canonical variates of each view, `N x k`.
    pub x_variates: DMatrix<T>,
    pub y_variates: DMatrix<T>,
    /// Set when every projection was zero and uniform weights were used.
    pub uniform_weights: bool,
    standardize: bool,
}

pub(crate) fn center<T: Real>(x: &DMatrix<T>, standardize: bool) -> DMatrix<T> {
    let n = x.nrows();
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / T::from_count(n);
        col.add_scalar_mut(-mean);
        if standardize {
            let sd = (col.norm_squared() / T::from_count(n)).sqrt();
            if sd > T::zero() {
                col.unscale_mut(sd);
            }
        }
    }
    out
}

/// Singular values sorted descending with their original positions; equal
/// values keep their original order.
fn sorted_order<T: Real>(s: &nalgebra::DVector<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Orthonormal basis of the smallest leading singular subspace of a centered
/// view whose squared singular values reach `keep` of the total.
fn truncated_basis<T: Real>(centered: &DMatrix<T>, keep: T, which: &str) -> Result<DMatrix<T>> {
    let (n, d) = centered.shape();
    let svd = centered.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s = &svd.singular_values;
    let order = sorted_order(s);
    let s_max = s[order[0]];
    if !(s_max > T::zero()) {
        return Err(Error::Degenerate(format!("view {which} is identically zero after centering")));
    }
    let tol = s_max * T::from_count(n.max(d)) * T::default_epsilon();
    let ranked: Vec<usize> = order.into_iter().take_while(|&i| s[i] > tol).collect();
    let total = ranked.iter().fold(T::zero(), |acc, &i| acc + s[i] * s[i]);
    let target = keep * total - T::lit(1e-12) * total;
    let mut cum = T::zero();
    let mut kept = Vec::new();
    for &i in &ranked {
        kept.push(i);
        cum += s[i] * s[i];
        if cum >= target {
            break;
        }
    }
    Ok(u.select_columns(&kept))
}

/// Canonical correlations of two paired views (`N x Dx`, `N x Dy`). Weights
/// and the PWCCA score are filled in by [`pwcca_score`].
pub fn canonical_correlations<T: Real>(
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    opts: &CcaOptions<T>,
) -> Result<CcaResult<T>> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("views have {n} and {} rows", y.nrows())));
    }
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 samples, got {n}")));
    }
    if x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::Shape("view with zero columns".into()));
    }
    if !(opts.variance_keep > T::zero() && opts.variance_keep <= T::one()) {
        return Err(Error::Invalid(format!(
            "variance_keep {} outside (0, 1]",
            opts.variance_keep
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CCA input".into()));
    }
    let ux = truncated_basis(&center(x, opts.standardize), opts.variance_keep, "x")?;
    let uy = truncated_basis(&center(y, opts.standardize), opts.variance_keep, "y")?;
    let cross = ux.transpose() * &uy;
    let svd = cross.svd(true, true);
    let a = svd.u.expect("u requested");
    let bt = svd.v_t.expect("v_t requested");
    let order = sorted_order(&svd.singular_values);
    let k = order.len();
    let rhos: Vec<T> = order
        .iter()
        .map(|&i| svd.singular_values[i].max(T::zero()).min(T::one()))
        .collect();
    let a = a.select_columns(&order);
    let b = bt.transpose().select_columns(&order);
    Ok(CcaResult {
        rhos,
        weights: Vec::new(),
        pwcca: T::zero(),
        k,
        kx: ux.ncols(),
        ky: uy.ncols(),
        x_variates: &ux * a,
        y_variates: &uy * b,
        uniform_weights: false,
        standardize: opts.standardize,
    })
}

/// Weight each canonical correlation by the total absolute projection of
/// `x`'s centered columns onto the matching canonical variate; returns (and
/// stores) `sum(alpha_i * rho_i)`.
pub fn pwcca_score<T: Real>(result: &mut CcaResult<T>, x: &DMatrix<T>) -> Result<T> {
    if x.nrows() != result.x_variates.nrows() {
        return Err(Error::Shape(format!(
            "x has {} rows, canonical variates {}",
            x.nrows(),
            result.x_variates.nrows()
        )));
    }
    let xc = center(x, result.standardize);
    let proj = xc.transpose() * &result.x_variates;
    let mut alpha: Vec<T> = proj.column_iter().map(|c| c.abs().sum()).collect();
    let total = alpha.iter().fold(T::zero(), |a, &b| a + b);
    if total > T::zero() && total.is_finite() {
        alpha.iter_mut().for_each(|a| *a /= total);
        result.uniform_weights = false;
    } else {
        let u = T::one() / T::from_count(alpha.len().max(1));
        alpha.iter_mut().for_each(|a| *a = u);
        result.uniform_weights = true;
    }
    let score = alpha
        .iter()
        .zip(&result.rhos)
        .fold(T::zero(), |acc, (&a, &r)| acc + a * r)
        .max(T::zero())
        .min(T::one());
    result.weights = alpha;
    result.pwcca = score;
    Ok(score)
}

/// Canonical correlations followed by projection weighting.
pub fn pwcca<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, opts: &CcaOptions<T>) -> Result<CcaResult<T>> {
    let mut r = canonical_correlations(x, y, opts)?;
    pwcca_score(&mut r, x)?;
    Ok(r)
}

/// What the layers are compared against.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a, T: Real> {
    /// Row-aligned pooled vectors (same items, same order), e.g. pooled fbanks.
    Pooled(&'a PooledSet<T>),
    /// Lookup by label: dense embeddings or a one-hot table.
    Table(&'a EmbeddingTable),
    /// One-hot identity of each item's label.
    OneHotLabels,
}

/// PWCCA of every layer against one reference on a shared item sample.
///
/// All layers must hold the same items in the same order. `n_samples` draws a
/// single seeded subset used for every layer.
pub fn cca_curve<T: Real>(
    layers: &[PooledSet<T>],
    reference: Reference<'_, T>,
    opts: &CcaOptions<T>,
    n_samples: Option<usize>,
    seed: u64,
) -> Result<CurveRun> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Invalid("no layers to score".into()))?;
    for l in &layers[1..] {
        if l.labels != first.labels {
            return Err(Error::Invalid(format!(
                "layer {} does not hold the same items as layer {}",
                l.layer_id, first.layer_id
            )));
        }
    }
    let mut log = Vec::new();
    let candidates: Vec<usize> = match reference {
        Reference::Pooled(r) => {
            if r.labels != first.labels {
                return Err(Error::Invalid(format!(
                    "reference {} is not row-aligned with the layers",
                    r.layer_id
                )));
            }
            (0..first.len()).collect()
        }
        Reference::Table(t) => (0..first.len())
            .filter(|&i| t.position(&first.labels[i]).is_some())
            .collect(),
        Reference::OneHotLabels => (0..first.len()).collect(),
    };
    if candidates.is_empty() {
        return Err(Error::Invalid("no item label is present in the reference".into()));
    }
    if candidates.len() < first.len() {
        log.push(format!(
            "{} of {} items have no reference entry and were dropped",
            first.len() - candidates.len(),
            first.len()
        ));
    }
    let rows: Vec<usize> = match n_samples {
        Some(n) => sample_indices(candidates.len(), n, seed)?
            .into_iter()
            .map(|i| candidates[i])
            .collect(),
        None => candidates,
    };
    log.push(format!("scoring {} items against the reference", rows.len()));

    let y: DMatrix<T> = match reference {
        Reference::Pooled(r) => r.vectors.select_rows(&rows),
        Reference::Table(t) => {
            let vecs = t.vectors();
            let idx: Vec<usize> = rows
                .iter()
                .map(|&i| t.position(&first.labels[i]).expect("filtered above"))
                .collect();
            let y = vecs.select_rows(&idx).map(T::lit);
            if t.kind() == EmbeddingKind::OneHot {
                drop_zero_columns(y, &mut log)
            } else {
                y
            }
        }
        Reference::OneHotLabels => {
            let labels: Vec<&str> = rows.iter().map(|&i| first.labels[i].as_str()).collect();
            let table = EmbeddingTable::one_hot(&labels);
            let idx: Vec<usize> = labels.iter().map(|l| table.position(l).unwrap()).collect();
            table.vectors().select_rows(&idx).map(T::lit)
        }
    };

    let scores: Vec<Result<(String, f64)>> = layers
        .par_iter()
        .map(|layer| {
            let x = layer.vectors.select_rows(&rows);
            let r = pwcca(&x, &y, opts)?;
            Ok((layer.layer_id.clone(), r.pwcca.to_f64_lossy()))
        })
        .collect();
    let points = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CurveRun {
        curve: Curve::new(points),
        log,
    })
}

fn drop_zero_columns<T: Real>(y: DMatrix<T>, log: &mut Vec<String>) -> DMatrix<T> {
    let keep: Vec<usize> = (0..y.ncols())
        .filter(|&c| y.column(c).iter().any(|v| *v != T::zero()))
        .collect();
    if keep.len() < y.ncols() {
        log.push(format!(
            "dropped {} one-hot reference labels absent from the sample",
            y.ncols() - keep.len()
        ));
        y.select_columns(&keep)
    } else {
        y
    }
}
