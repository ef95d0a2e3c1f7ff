//! k-means (k-means++ seeding, Lloyd iterations) for discretizing pooled
//! representations before MI estimation.
//!
//! Everything runs in a fixed sequential order so a seed pins the result
//! bit-for-bit.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Starts to try; the lowest final inertia wins.
    pub restarts: usize,
    /// After Lloyd converges, try single-point moves between clusters and
    /// resume Lloyd whenever one lowers the inertia.
    pub refine: bool,
    /// Centroid relocations tried per round once local search stalls: the
    /// cheapest-to-remove centroid moves onto one of the points farthest from
    /// their own centroid. 0 disables. Needs `refine`.
    pub jumps: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            restarts: 1,
            refine: true,
            jumps: 0,
        }
    }
}

/// Desk-scale cluster counts (one tenth of the full-scale 500 / 5000).
pub const DEFAULT_K_PHONE: usize = 50;
pub const DEFAULT_K_WORD: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T: Real = f64> {
    /// `k x D`
    pub centroids: DMatrix<T>,
    pub assignments: Vec<usize>,
    pub inertia: T,
    pub iterations_run: usize,
    /// Inertia after each assignment step, in order.
    pub inertia_history: Vec<T>,
    pub converged: bool,
}

/// Row-major copy for tight distance loops.
struct Points<T> {
    data: Vec<T>,
    n: usize,
    d: usize,
}

impl<T: Real> Points<T> {
    fn new(m: &DMatrix<T>) -> Self {
        let (n, d) = m.shape();
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            data.extend(m.row(r).iter().copied());
        }
        Self { data, n, d }
    }

    fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let t = x - y;
        acc + t * t
    })
}

/// Nearest centroid, lowest index on ties.
fn nearest<T: Real>(p: &[T], centroids: &[T], d: usize) -> (usize, T) {
    let mut best = 0;
    let mut best_d = sq_dist(p, &centroids[..d]);
    for (j, c) in centroids.chunks_exact(d).enumerate().skip(1) {
        let dist = sq_dist(p, c);
        if dist < best_d {
            best = j;
            best_d = dist;
        }
    }
    (best, best_d)
}

fn validate<T: Real>(points: &DMatrix<T>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Invalid("k must be positive".into()));
    }
    if k > points.nrows() {
        return Err(Error::Invalid(format!("k = {k} exceeds {} points", points.nrows())));
    }
    if points.ncols() == 0 {
        return Err(Error::Shape("points have zero dimensions".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    Ok(())
}

/// Greedy k-means++ seeding: first centre uniform; each later centre is the
/// best of `2 + ln k` candidates drawn proportional to squared distance to
/// the nearest chosen centre, judged by the resulting potential.
fn plus_plus<T: Real>(pts: &Points<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let d = pts.d;
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..pts.n);
    centroids.extend_from_slice(pts.row(first));
    let mut dist: Vec<f64> = (0..pts.n)
        .map(|i| sq_dist(pts.row(i), pts.row(first)).to_f64_lossy())
        .collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 { weighted_pick(&dist, total, rng) } else { rng.random_range(0..pts.n) };
            let c = pts.row(pick);
            let next: Vec<f64> = dist
                .iter()
                .enumerate()
                .map(|(i, &di)| di.min(sq_dist(pts.row(i), c).to_f64_lossy()))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        dist = next;
        centroids.extend_from_slice(pts.row(pick));
    }
    centroids
}

fn weighted_pick(dist: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut chosen = dist.len() - 1;
    for (i, &w) in dist.iter().enumerate() {
        if u < w {
            chosen = i;
            break;
        }
        u -= w;
    }
    // guard against landing on a zero-weight tail through rounding
    if dist[chosen] == 0.0 {
        chosen = dist.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
    }
    chosen
}

fn lloyd<T: Real>(pts: &Points<T>, mut centroids: Vec<T>, k: usize, max_iters: usize) -> Clustering<T> {
    let (n, d) = (pts.n, pts.d);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut dists = vec![T::zero(); n];
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        let mut inertia = T::zero();
        for i in 0..n {
            let (j, dist) = nearest(pts.row(i), &centroids, d);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
            dists[i] = dist;
            inertia += dist;
        }
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev, "inertia rose from {prev} to {inertia}");
        }
        history.push(inertia);
        if !changed {
            converged = true;
            break;
        }
        // centroid update, fixed summation order
        let mut sums = vec![T::zero(); k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assignments[i];
            counts[a] += 1;
            for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(pts.row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::from_count(counts[j]);
                for (dst, &s) in centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                    *dst = s / c;
                }
            } else {
                // reseed on the point farthest from its centroid, lowest index on ties
                let mut far = None;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    match far {
                        Some(f) if dists[i] <= dists[f] => {}
                        _ => far = Some(i),
                    }
                }
                let f = far.expect("k <= n leaves a point to reseed from");
                taken[f] = true;
                centroids[j * d..(j + 1) * d].copy_from_slice(pts.row(f));
                dists[f] = T::zero();
            }
        }
    }
    // final inertia against the final centroids
    let mut inertia = T::zero();
    for i in 0..n {
        let (j, dist) = nearest(pts.row(i), &centroids, d);
        if j != assignments[i] {
            converged = false;
        }
        assignments[i] = j;
        inertia += dist;
    }
    Clustering {
        centroids: DMatrix::from_row_slice(k, d, &centroids),
        assignments,
        inertia,
        iterations_run: iterations,
        inertia_history: history,
        converged,
    }
}

fn means<T: Real>(pts: &Points<T>, assignments: &[usize], k: usize) -> (Vec<T>, Vec<usize>) {
    let d = pts.d;
    let mut sums = vec![T::zero(); k * d];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(pts.row(i)) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            let c = T::from_count(counts[j]);
            for s in &mut sums[j * d..(j + 1) * d] {
                *s /= c;
            }
        }
    }
    (sums, counts)
}

/// One pass of single-point moves (Hartigan): point `i` leaves cluster `a`
/// for `b` when `n_b/(n_b+1)|x-c_b|^2 < n_a/(n_a-1)|x-c_a|^2`. Centroids are
/// updated in place after each move. Returns whether anything moved.
fn hartigan_pass<T: Real>(pts: &Points<T>, assignments: &mut [usize], k: usize) -> bool {
    let d = pts.d;
    let (mut cents, mut counts) = means(pts, assignments, k);
    let slack = T::one() - T::default_epsilon() * T::lit(64.0);
    let mut moved = false;
    for i in 0..pts.n {
        let a = assignments[i];
        if counts[a] < 2 {
            continue;
        }
        let x = pts.row(i);
        let na = T::from_count(counts[a]);
        let leave = na / (na - T::one()) * sq_dist(x, &cents[a * d..(a + 1) * d]);
        let mut best: Option<(usize, T)> = None;
        for b in (0..k).filter(|&b| b != a) {
            let nb = T::from_count(counts[b]);
            let join = nb / (nb + T::one()) * sq_dist(x, &cents[b * d..(b + 1) * d]);
            match best {
                Some((_, c)) if join >= c => {}
                _ => best = Some((b, join)),
            }
        }
        let Some((b, join)) = best else { continue };
        if join >= leave * slack {
            continue;
        }
        let nb = T::from_count(counts[b]);
        for (c, &v) in cents[a * d..(a + 1) * d].iter_mut().zip(x) {
            *c = (*c * na - v) / (na - T::one());
        }
        for (c, &v) in cents[b * d..(b + 1) * d].iter_mut().zip(x) {
            *c = (*c * nb + v) / (nb + T::one());
        }
        counts[a] -= 1;
        counts[b] += 1;
        assignments[i] = b;
        moved = true;
    }
    moved
}

/// Alternate single-point passes and Lloyd runs until neither improves.
/// Inertia stays non-increasing across the whole history.
fn refine<T: Real>(pts: &Points<T>, mut c: Clustering<T>, max_iters: usize) -> Clustering<T> {
    let k = c.centroids.nrows();
    for _ in 0..max_iters {
        let mut assignments = c.assignments.clone();
        if !hartigan_pass(pts, &mut assignments, k) {
            break;
        }
        let (start, _) = means(pts, &assignments, k);
        let next = lloyd(pts, start, k, max_iters);
        if next.inertia >= c.inertia {
            break;
        }
        let mut history = std::mem::take(&mut c.inertia_history);
        history.extend_from_slice(&next.inertia_history);
        c = Clustering {
            iterations_run: c.iterations_run + next.iterations_run,
            inertia_history: history,
            ..next
        };
    }
    c
}

/// Centroids ordered by how little their removal raises the inertia, and
/// each point's squared distance to its own centroid.
fn removal_order<T: Real>(pts: &Points<T>, c: &Clustering<T>) -> (Vec<usize>, Vec<T>) {
    let (k, d) = (c.centroids.nrows(), pts.d);
    let cents = Points::new(&c.centroids).data;
    let mut cost = vec![T::zero(); k];
    let mut own = Vec::with_capacity(pts.n);
    for i in 0..pts.n {
        let x = pts.row(i);
        let a = c.assignments[i];
        let here = sq_dist(x, &cents[a * d..(a + 1) * d]);
        let second = (0..k)
            .filter(|&j| j != a)
            .map(|j| sq_dist(x, &cents[j * d..(j + 1) * d]))
            .reduce(|p, q| if q < p { q } else { p })
            .expect("k > 1");
        cost[a] += second - here;
        own.push(here);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| cost[a].partial_cmp(&cost[b]).expect("finite").then(a.cmp(&b)));
    (order, own)
}

/// J-means style search. Each round tries up to `candidates` relocations of
/// the cheapest centroid and keeps the first that lowers the inertia after
/// Lloyd and refinement. An accepted jump appends only its final inertia to
/// the history, which keeps it non-increasing.
fn jump_search<T: Real>(pts: &Points<T>, mut c: Clustering<T>, max_iters: usize, candidates: usize) -> Clustering<T> {
    let (k, d) = (c.centroids.nrows(), pts.d);
    for _ in 0..max_iters {
        let (drops, own) = removal_order(pts, &c);
        let mut order: Vec<usize> = (0..pts.n).collect();
        order.sort_by(|&a, &b| own[b].partial_cmp(&own[a]).expect("finite").then(a.cmp(&b)));
        let mut accepted = None;
        'search: for &drop in drops.iter().take(2) {
            for &p in order.iter().take(candidates) {
                if own[p] == T::zero() {
                    break;
                }
                let mut init = Points::new(&c.centroids).data;
                init[drop * d..(drop + 1) * d].copy_from_slice(pts.row(p));
                let next = refine(pts, lloyd(pts, init, k, max_iters), max_iters);
                if next.inertia < c.inertia {
                    accepted = Some(next);
                    break 'search;
                }
            }
        }
        let Some(next) = accepted else { break };
        let mut history = std::mem::take(&mut c.inertia_history);
        history.push(next.inertia);
        c = Clustering {
            iterations_run: c.iterations_run + next.iterations_run,
            inertia_history: history,
            ..next
        };
    }
    c
}

/// Seeded k-means. With `restarts > 1`, start `r` uses seed `seed + r` and
/// the lowest inertia wins (earliest start on ties).
pub fn kmeans<T: Real>(points: &DMatrix<T>, opts: &KMeansOptions) -> Result<Clustering<T>> {
    validate(points, opts.k)?;
    if opts.max_iters == 0 {
        return Err(Error::Invalid("max_iters must be positive".into()));
    }
    let pts = Points::new(points);
    let mut best: Option<Clustering<T>> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        let init = plus_plus(&pts, opts.k, &mut rng);
        let mut c = lloyd(&pts, init, opts.k, opts.max_iters);
        if opts.refine {
            c = refine(&pts, c, opts.max_iters);
            if opts.jumps > 0 && opts.k > 1 {
                c = jump_search(&pts, c, opts.max_iters, opts.jumps);
            }
        }
        match &best {
            Some(b) if c.inertia >= b.inertia => {}
            _ => best = Some(c),
        }
    }
    Ok(best.expect("at least one start"))
}

/// Lloyd iterations from given initial centroids (`k x D`), no seeding.
pub fn kmeans_from<T: Real>(points: &DMatrix<T>, init: &DMatrix<T>, max_iters: usize) -> Result<Clustering<T>> {
    validate(points, init.nrows())?;
    if init.ncols() != points.ncols() {
        return Err(Error::Shape(format!(
            "centroids have {} dims, points {}",
            init.ncols(),
            points.ncols()
        )));
    }
    let pts = Points::new(points);
    let k = init.nrows();
    let init = Points::new(init).data;
    Ok(lloyd(&pts, init, k, max_iters.max(1)))
}

/// Nearest-centroid labels for new points.
pub fn assign<T: Real>(points: &DMatrix<T>, clustering: &Clustering<T>) -> Result<Vec<usize>> {
    let d = clustering.centroids.ncols();
    if points.ncols() != d {
        return Err(Error::Shape(format!("points have {} dims, centroids {d}", points.ncols())));
    }
    let pts = Points::new(points);
    let cents = Points::new(&clustering.centroids);
    Ok((0..pts.n).map(|i| nearest(pts.row(i), &cents.data, d).0).collect())
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia<T: Real>(points: &DMatrix<T>, centroids: &DMatrix<T>, assignments: &[usize]) -> T {
    let pts = Points::new(points);
    let cents = Points::new(centroids);
    assignments
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &a)| acc + sq_dist(pts.row(i), cents.row(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let p = gaussian(9, 3, 1);
        let c = kmeans(&p, &KMeansOptions::new(9, 4)).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut a = c.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn k_one_is_the_mean() {
        let p = gaussian(40, 3, 2);
        let c = kmeans(&p, &KMeansOptions::new(1, 0)).unwrap();
        let mean = p.row_mean();
        assert!((c.centroids.row(0) - &mean).norm() < 1e-12);
        let total: f64 = p.row_iter().map(|r| (r - &mean).norm_squared()).sum();
        assert!((c.inertia - total).abs() < 1e-9 * total);
    }

    #[test]
    fn matches_exhaustive_optimum_on_eight_points() {
        for seed in 0..20 {
            let p = gaussian(8, 2, 100 + seed);
            let rows: Vec<Vec<f64>> = p.row_iter().map(|r| r.iter().copied().collect()).collect();
            let best = probekit_oracles::kmeans_optimal_inertia(&rows, 2);
            let c = kmeans(&p, &KMeansOptions { restarts: 5, ..KMeansOptions::new(2, seed) }).unwrap();
            assert!((c.inertia - best).abs() < 1e-9, "seed {seed}: {} vs {best}", c.inertia);
        }
    }

    #[test]
    fn jumps_escape_local_optima() {
        let mut plain_misses = 0;
        for seed in 0..200 {
            let p = gaussian(8, 2, 1000 + seed);
            let rows: Vec<Vec<f64>> = p.row_iter().map(|r| r.iter().copied().collect()).collect();
            let best = two_way_optimum(&rows);
            let plain = kmeans(&p, &KMeansOptions::new(2, seed)).unwrap();
            let jumped = kmeans(&p, &KMeansOptions { jumps: 8, ..KMeansOptions::new(2, seed) }).unwrap();
            plain_misses += usize::from(plain.inertia - best > 1e-9);
            assert!(jumped.inertia <= plain.inertia);
            assert!((jumped.inertia - best).abs() < 1e-9, "seed {seed}: {} vs {best}", jumped.inertia);
            assert!(jumped.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(plain_misses > 0, "instances too easy to show anything");
    }

    /// Best two-way split by brute force over all labelings.
    fn two_way_optimum(rows: &[Vec<f64>]) -> f64 {
        let n = rows.len();
        let sse = |idx: &[usize]| {
            let d = rows[0].len();
            let mean: Vec<f64> = (0..d).map(|j| idx.iter().map(|&i| rows[i][j]).sum::<f64>() / idx.len() as f64).collect();
            idx.iter().map(|&i| (0..d).map(|j| (rows[i][j] - mean[j]).powi(2)).sum::<f64>()).sum::<f64>()
        };
        (1..(1u32 << n) - 1)
            .map(|m| {
                let (a, b): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| m >> i & 1 == 1);
                sse(&a) + sse(&b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn refinement_never_raises_inertia() {
        for seed in 0..30 {
            let p = gaussian(60, 3, 500 + seed);
            let plain = kmeans(&p, &KMeansOptions { refine: false, ..KMeansOptions::new(5, seed) }).unwrap();
            let refined = kmeans(&p, &KMeansOptions::new(5, seed)).unwrap();
            assert!(refined.inertia <= plain.inertia);
            assert!(refined.inertia_history.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(refined.inertia_history[..plain.inertia_history.len()], plain.inertia_history[..]);
        }
    }

    #[test]
    fn inertia_is_consistent_and_monotone() {
        let p = gaussian(300, 4, 3);
        let c = kmeans(&p, &KMeansOptions::new(7, 11)).unwrap();
        let recomputed = inertia(&p, &c.centroids, &c.assignments);
        assert!((c.inertia - recomputed).abs() <= 1e-9 * recomputed);
        assert!(c.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(c.assignments.iter().all(|&a| a < 7));
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let p = gaussian(200, 3, 5);
        let a = kmeans(&p, &KMeansOptions::new(6, 9)).unwrap();
        let b = kmeans(&p, &KMeansOptions::new(6, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_k_and_non_finite() {
        let p = gaussian(5, 2, 6);
        assert!(kmeans(&p, &KMeansOptions::new(0, 0)).is_err());
        assert!(kmeans(&p, &KMeansOptions::new(6, 0)).is_err());
        let mut q = p.clone();
        q[(0, 0)] = f64::INFINITY;
        assert!(matches!(kmeans(&q, &KMeansOptions::new(2, 0)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn duplicate_points_still_cluster() {
        let mut p = DMatrix::from_element(10, 2, 1.0);
        p[(9, 0)] = 5.0;
        let c = kmeans(&p, &KMeansOptions::new(3, 2)).unwrap();
        assert_eq!(c.inertia, 0.0);
        assert!(c.assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn assignment_tie_rule_and_naive_scan() {
        let centroids = DMatrix::from_row_slice(5, 1, &[10.0, -1.0, 7.0, 3.0, 1.0]);
        let c = Clustering {
            centroids: centroids.clone(),
            assignments: vec![],
            inertia: 0.0,
            iterations_run: 0,
            inertia_history: vec![],
            converged: true,
        };
        let pts = DMatrix::from_row_slice(2, 1, &[3.0, 0.0]);
        assert_eq!(assign(&pts, &c).unwrap(), vec![3, 1]);

        let pts = gaussian(200, 3, 7);
        let cents = gaussian(6, 3, 8);
        let c = Clustering { centroids: cents.clone(), ..c };
        let rows: Vec<Vec<f64>> = cents.row_iter().map(|r| r.iter().copied().collect()).collect();
        let naive: Vec<usize> = pts
            .row_iter()
            .map(|r| probekit_oracles::nearest_centroid(&r.iter().copied().collect::<Vec<_>>(), &rows))
            .collect();
        assert_eq!(assign(&pts, &c).unwrap(), naive);
        assert!(assign(&DMatrix::<f64>::zeros(2, 2), &c).is_err());
    }

    #[test]
    fn permuting_points_permutes_assignments() {
        let p = gaussian(60, 2, 9);
        let init = p.rows(0, 4).clone_owned();
        let a = kmeans_from(&p, &init, 100).unwrap();
        let perm: Vec<usize> = (0..60).map(|i| (i * 7) % 60).collect();
        let q = p.select_rows(&perm);
        let b = kmeans_from(&q, &init, 100).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(b.assignments[i], a.assignments[src]);
        }
    }
}
