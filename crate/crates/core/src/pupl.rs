//! PU-aware 2-means pseudo-labeling, k-means++ baseline and brute-force optimal 2-means.

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix, RngStream};
use serde::{Deserialize, Serialize};

/// Result of a 2-means run. `assignments[i]` is true when row `i` belongs to the P cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub mu_p: Vec<f64>,
    pub mu_n: Vec<f64>,
    pub assignments: Vec<bool>,
    /// Sum over rows of the squared distance to the nearest centroid.
    pub potential: f64,
    pub iterations: usize,
    /// Objective at the start of each iteration, then at the final centroids. For unpinned
    /// runs this is the potential; with pinned rows, pinned rows count against the P centroid.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PuplConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PuplConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuplResult {
    pub clustering: Clustering,
    /// 1 for pseudo-positive, 0 for pseudo-negative. Labeled rows are always 1.
    pub pseudo_labels: Vec<u8>,
    /// Potential of the seeded centroids, before any centroid update.
    pub one_step_potential: f64,
    /// Expectation of `one_step_potential` over the random seeding draw.
    pub expected_one_step_potential: f64,
}

fn check_dims(z: &Matrix, c: &[f64]) -> Result<()> {
    if c.len() != z.cols() {
        return Err(Error::DimMismatch(format!("centroid of length {} for {} columns", c.len(), z.cols())));
    }
    Ok(())
}

/// Sum of squared distances to the nearer of the two centroids.
pub fn potential(z: &Matrix, mu_p: &[f64], mu_n: &[f64]) -> Result<f64> {
    check_dims(z, mu_p)?;
    check_dims(z, mu_n)?;
    Ok(z.iter_rows().map(|r| sq_dist(r, mu_p).min(sq_dist(r, mu_n))).sum())
}

/// Nearest-centroid assignment; ties go to P.
pub fn assign(z: &Matrix, mu_p: &[f64], mu_n: &[f64]) -> Vec<bool> {
    z.iter_rows().map(|r| sq_dist(r, mu_p) <= sq_dist(r, mu_n)).collect()
}

/// Seeds P at the labeled centroid and N by squared-distance sampling over unlabeled rows.
pub fn pupl_init(z: &Matrix, labeled: &[bool], rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mu_p, u_idx) = pupl_parts(z, labeled)?;
    let w: Vec<f64> = u_idx.iter().map(|&i| sq_dist(z.row(i), &mu_p)).collect();
    let pick = match rng.weighted_index(&w) {
        Some(k) => u_idx[k],
        None => u_idx[rng.below(u_idx.len())],
    };
    Ok((mu_p, z.row(pick).to_vec()))
}

fn pupl_parts(z: &Matrix, labeled: &[bool]) -> Result<(Vec<f64>, Vec<usize>)> {
    if labeled.len() != z.rows() {
        return Err(Error::LengthMismatch(labeled.len(), z.rows()));
    }
    let l_idx: Vec<usize> = (0..z.rows()).filter(|&i| labeled[i]).collect();
    let u_idx: Vec<usize> = (0..z.rows()).filter(|&i| !labeled[i]).collect();
    if l_idx.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if u_idx.is_empty() {
        return Err(Error::EmptyUnlabeled);
    }
    Ok((z.select_rows(&l_idx).column_mean()?, u_idx))
}

/// Expected seeding potential when the second centroid is drawn from `candidates` with
/// probability proportional to squared distance from `first` (uniformly if all are zero).
fn expected_d2_potential(z: &Matrix, first: &[f64], candidates: &[usize]) -> Result<f64> {
    let w: Vec<f64> = candidates.iter().map(|&i| sq_dist(z.row(i), first)).collect();
    let total: f64 = w.iter().sum();
    let mut e = 0.0;
    for (k, &i) in candidates.iter().enumerate() {
        let p = if total > 0.0 { w[k] / total } else { 1.0 / candidates.len() as f64 };
        if p > 0.0 {
            e += p * potential(z, first, z.row(i))?;
        }
    }
    Ok(e)
}

fn objective(z: &Matrix, mu_p: &[f64], mu_n: &[f64], pinned: &[bool]) -> f64 {
    z.iter_rows()
        .zip(pinned)
        .map(|(r, &pin)| {
            let dp = sq_dist(r, mu_p);
            if pin {
                dp
            } else {
                dp.min(sq_dist(r, mu_n))
            }
        })
        .sum()
}

fn lloyd_pinned(z: &Matrix, mu_p: &[f64], mu_n: &[f64], max_iter: usize, tol: f64, pinned: &[bool]) -> Result<Clustering> {
    check_dims(z, mu_p)?;
    check_dims(z, mu_n)?;
    if z.rows() == 0 {
        return Err(Error::TooFewRows("no rows".into()));
    }
    let mut mu_p = mu_p.to_vec();
    let mut mu_n = mu_n.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let assign_pinned = |mp: &[f64], mn: &[f64]| -> Vec<bool> {
        assign(z, mp, mn).into_iter().zip(pinned).map(|(a, &p)| a || p).collect()
    };
    for it in 1..=max_iter {
        iterations = it;
        let a = assign_pinned(&mu_p, &mu_n);
        trace.push(objective(z, &mu_p, &mu_n, pinned));
        let p_idx: Vec<usize> = (0..z.rows()).filter(|&i| a[i]).collect();
        let n_idx: Vec<usize> = (0..z.rows()).filter(|&i| !a[i]).collect();
        let mut new_p = if p_idx.is_empty() { None } else { Some(z.select_rows(&p_idx).column_mean()?) };
        let mut new_n = if n_idx.is_empty() { None } else { Some(z.select_rows(&n_idx).column_mean()?) };
        if new_p.is_none() {
            let other = new_n.as_ref().expect("one cluster is non-empty");
            new_p = Some(farthest_from(z, other));
        }
        if new_n.is_none() {
            let other = new_p.as_ref().expect("one cluster is non-empty");
            new_n = Some(farthest_from(z, other));
        }
        let (new_p, new_n) = (new_p.expect("set"), new_n.expect("set"));
        let shift = mu_p
            .iter()
            .zip(&new_p)
            .chain(mu_n.iter().zip(&new_n))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        mu_p = new_p;
        mu_n = new_n;
        if shift < tol {
            break;
        }
    }
    trace.push(objective(z, &mu_p, &mu_n, pinned));
    let assignments = assign_pinned(&mu_p, &mu_n);
    let potential = potential(z, &mu_p, &mu_n)?;
    Ok(Clustering { mu_p, mu_n, assignments, potential, iterations, objective_trace: trace })
}

fn farthest_from(z: &Matrix, c: &[f64]) -> Vec<f64> {
    let mut best = 0;
    let mut bd = -1.0;
    for (i, r) in z.iter_rows().enumerate() {
        let d = sq_dist(r, c);
        if d > bd {
            bd = d;
            best = i;
        }
    }
    z.row(best).to_vec()
}

/// Lloyd iterations from the given centroids. Ties go to P; an emptied cluster is reseated
/// at the row farthest from the other centroid. Stops when no centroid coordinate moves by
/// `tol` or more, or after `max_iter` iterations.
pub fn lloyd(z: &Matrix, mu_p: &[f64], mu_n: &[f64], max_iter: usize, tol: f64) -> Result<Clustering> {
    lloyd_pinned(z, mu_p, mu_n, max_iter, tol, &vec![false; z.rows()])
}

/// PU-aware 2-means: labeled rows stay in P throughout.
pub fn pupl(z: &Matrix, labeled: &[bool], cfg: &PuplConfig) -> Result<PuplResult> {
    let mut rng = RngStream::new(cfg.seed, 0x50);
    let (mu_p, mu_n) = pupl_init(z, labeled, &mut rng)?;
    let (_, u_idx) = pupl_parts(z, labeled)?;
    let one_step_potential = potential(z, &mu_p, &mu_n)?;
    let expected_one_step_potential = expected_d2_potential(z, &mu_p, &u_idx)?;
    let clustering = lloyd_pinned(z, &mu_p, &mu_n, cfg.max_iter, cfg.tol, labeled)?;
    let pseudo_labels = clustering.assignments.iter().map(|&a| a as u8).collect();
    Ok(PuplResult { clustering, pseudo_labels, one_step_potential, expected_one_step_potential })
}

/// k-means++ seeding: a uniform first center, then a squared-distance draw over all rows.
pub fn kmeanspp_seed(z: &Matrix, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.rows() < 2 {
        return Err(Error::TooFewRows(format!("{} rows", z.rows())));
    }
    let first = z.row(rng.below(z.rows())).to_vec();
    let w: Vec<f64> = z.iter_rows().map(|r| sq_dist(r, &first)).collect();
    let second = match rng.weighted_index(&w) {
        Some(i) => i,
        None => rng.below(z.rows()),
    };
    Ok((first, z.row(second).to_vec()))
}

/// k-means++ followed by Lloyd. The first seed plays the role of P.
pub fn kmeanspp(z: &Matrix, cfg: &PuplConfig) -> Result<PuplResult> {
    let mut rng = RngStream::new(cfg.seed, 0x4B);
    let (a, b) = kmeanspp_seed(z, &mut rng)?;
    let one_step_potential = potential(z, &a, &b)?;
    let all: Vec<usize> = (0..z.rows()).collect();
    let mut e = 0.0;
    for i in 0..z.rows() {
        e += expected_d2_potential(z, z.row(i), &all)?;
    }
    let expected_one_step_potential = e / z.rows() as f64;
    let clustering = lloyd(z, &a, &b, cfg.max_iter, cfg.tol)?;
    let pseudo_labels = clustering.assignments.iter().map(|&a| a as u8).collect();
    Ok(PuplResult { clustering, pseudo_labels, one_step_potential, expected_one_step_potential })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPartition {
    pub potential: f64,
    /// Side of each row; row 0 is always on the `true` side.
    pub assignments: Vec<bool>,
}

/// Exhaustive search over all bipartitions (at most 20 rows).
pub fn brute_force_optimal_2means(z: &Matrix) -> Result<OptimalPartition> {
    let n = z.rows();
    if n > 20 {
        return Err(Error::TooLarge(format!("{n} rows, at most 20 can be enumerated")));
    }
    if n == 0 {
        return Err(Error::TooFewRows("no rows".into()));
    }
    let d = z.cols();
    let sq: Vec<f64> = z.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut best = f64::INFINITY;
    let mut best_mask = 0u32;
    let mut sum_a = vec![0.0; d];
    let mut sum_b = vec![0.0; d];
    for mask in 0u32..(1u32 << (n - 1)) {
        // bit k set means row k + 1 is on the B side
        sum_a.iter_mut().for_each(|v| *v = 0.0);
        sum_b.iter_mut().for_each(|v| *v = 0.0);
        let (mut na, mut nb, mut qa, mut qb) = (0usize, 0usize, 0.0, 0.0);
        for i in 0..n {
            let on_b = i > 0 && mask & (1 << (i - 1)) != 0;
            let (s, q, c) = if on_b { (&mut sum_b, &mut qb, &mut nb) } else { (&mut sum_a, &mut qa, &mut na) };
            for (acc, v) in s.iter_mut().zip(z.row(i)) {
                *acc += v;
            }
            *q += sq[i];
            *c += 1;
        }
        let cost = |s: &[f64], q: f64, c: usize| if c == 0 { 0.0 } else { q - s.iter().map(|v| v * v).sum::<f64>() / c as f64 };
        let total = cost(&sum_a, qa, na).max(0.0) + cost(&sum_b, qb, nb).max(0.0);
        if total < best {
            best = total;
            best_mask = mask;
        }
    }
    let assignments: Vec<bool> = (0..n).map(|i| i == 0 || best_mask & (1 << (i - 1)) == 0).collect();
    // recompute the winner directly around its centroids
    let side = |flag: bool| -> Vec<usize> { (0..n).filter(|&i| assignments[i] == flag).collect() };
    let mut potential = 0.0;
    for flag in [true, false] {
        let idx = side(flag);
        if !idx.is_empty() {
            let m = z.select_rows(&idx).column_mean()?;
            potential += idx.iter().map(|&i| sq_dist(z.row(i), &m)).sum::<f64>();
        }
    }
    Ok(OptimalPartition { potential, assignments })
}
