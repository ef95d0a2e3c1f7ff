//! Slow, direct reference computations used to check `probekit` in tests.
//!
//! Nothing here shares code with the library: plain `Vec<Vec<f64>>` rows,
//! textbook formulas, no external linear algebra.

pub type Rows = Vec<Vec<f64>>;

fn column_means(rows: &Rows) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            m[j] += r[j];
        }
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Cross-covariance `a^T b / (n - 1)` of centered data.
fn covariance(a: &Rows, b: &Rows) -> Rows {
    let ma = column_means(a);
    let mb = column_means(b);
    let da = ma.len();
    let db = mb.len();
    let n = a.len();
    let mut c = vec![vec![0.0; db]; da];
    for t in 0..n {
        for i in 0..da {
            let ai = a[t][i] - ma[i];
            for j in 0..db {
                c[i][j] += ai * (b[t][j] - mb[j]);
            }
        }
    }
    let s = 1.0 / (n as f64 - 1.0);
    c.iter_mut().flatten().for_each(|v| *v *= s);
    c
}

fn matmul(a: &Rows, b: &Rows) -> Rows {
    let n = a.len();
    let k = b.len();
    let m = b[0].len();
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i][p];
            for j in 0..m {
                c[i][j] += aip * b[p][j];
            }
        }
    }
    c
}

fn transpose(a: &Rows) -> Rows {
    let n = a.len();
    let m = a[0].len();
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Rows) -> Rows {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    l
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn lower_inverse(l: &Rows) -> Rows {
    let n = l.len();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for p in 0..i {
                s -= l[i][p] * inv[p][col];
            }
            inv[i][col] = s / l[i][i];
        }
    }
    inv
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Rows) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i][j] * m[i][j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Canonical correlations from the generalized eigenproblem
/// `Sxy Syy^-1 Syx w = rho^2 Sxx w`, reduced with a Cholesky factor of `Sxx`
/// and solved by Jacobi. Returns `min(dx, dy)` values, descending.
pub fn canonical_correlations(x: &Rows, y: &Rows) -> Vec<f64> {
    let sxx = covariance(x, x);
    let syy = covariance(y, y);
    let sxy = covariance(x, y);
    let lx = cholesky(&sxx);
    let lx_inv = lower_inverse(&lx);
    let ly = cholesky(&syy);
    let ly_inv = lower_inverse(&ly);
    // Syy^-1 = Ly^-T Ly^-1
    let syy_inv = matmul(&transpose(&ly_inv), &ly_inv);
    let inner = matmul(&matmul(&sxy, &syy_inv), &transpose(&sxy));
    let c = matmul(&matmul(&lx_inv, &inner), &transpose(&lx_inv));
    // symmetrize against rounding
    let n = c.len();
    let mut cs = c.clone();
    for i in 0..n {
        for j in 0..n {
            cs[i][j] = 0.5 * (c[i][j] + c[j][i]);
        }
    }
    let mut ev: Vec<f64> = jacobi_eigenvalues(&cs)
        .into_iter()
        .map(|l| l.max(0.0).sqrt().min(1.0))
        .collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev.truncate(x[0].len().min(y[0].len()));
    ev
}

/// Mutual information as the literal double sum over the joint table, in nats.
pub fn mutual_information_term_by_term(counts: &[Vec<u64>]) -> f64 {
    let n: u64 = counts.iter().flatten().sum();
    let n = n as f64;
    let kx = counts.len();
    let ky = counts[0].len();
    let px: Vec<f64> = (0..kx)
        .map(|a| counts[a].iter().sum::<u64>() as f64 / n)
        .collect();
    let py: Vec<f64> = (0..ky)
        .map(|b| (0..kx).map(|a| counts[a][b]).sum::<u64>() as f64 / n)
        .collect();
    let mut total = 0.0;
    for a in 0..kx {
        for b in 0..ky {
            let pxy = counts[a][b] as f64 / n;
            if pxy > 0.0 {
                total += pxy * (pxy / (px[a] * py[b])).ln();
            }
        }
    }
    total
}

/// Shannon entropy in nats of a histogram.
pub fn entropy(hist: &[u64]) -> f64 {
    let n: u64 = hist.iter().sum();
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

/// Average (fractional) ranks built by counting, O(n^2).
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            let less = x.iter().filter(|&&v| v < xi).count() as f64;
            let equal = x.iter().filter(|&&v| v == xi).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's rho as Pearson correlation of explicitly counted ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Minimum k-means inertia over every assignment of points to `k` non-empty
/// clusters (exhaustive, `k^N` labelings).
pub fn kmeans_optimal_inertia(points: &Rows, k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let total = k.pow(n as u32);
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..d {
                sums[l][j] += p[j];
            }
        }
        if counts.contains(&0) {
            continue;
        }
        let centroids: Rows = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
            .collect();
        let inertia: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum();
        best = best.min(inertia);
    }
    best
}

/// Nearest centroid by full distance scan, lowest index on ties.
pub fn nearest_centroid(point: &[f64], centroids: &Rows) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Central finite difference of a scalar function.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}
