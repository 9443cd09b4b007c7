//! Evaluators for (σ, δ)-augmentations and the downstream generalization bound.

use crate::classifier_head::nearest_centroid_classify;
use crate::contrastive::alignment_uniformity_split_embedded;
use crate::encoder::{empirical_lipschitz, estimate_lipschitz, MlpEncoder};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, sq_dist, Matrix, RngStream};
use crate::pu_data::SupervisedDataset;
use crate::pupl::Clustering;
use serde::{Deserialize, Serialize};

/// Largest class size searched exhaustively by [`SigmaSearch::Auto`].
pub const EXHAUSTIVE_LIMIT: usize = 15;
const ETA_PRIME_GRID: usize = 10_000;

/// One sample with its finite augmentation set and hidden class.
#[derive(Debug, Clone, PartialEq)]
pub struct AugSample {
    pub base: Vec<f64>,
    pub augs: Matrix,
    pub class: bool,
}

/// Samples with finite augmentation sets. Every sample carries mass `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    samples: Vec<AugSample>,
    pi_p: f64,
}

impl AugmentedDataset {
    /// `pi_p` is set to the fraction of positive samples.
    pub fn new(samples: Vec<AugSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySet)?;
        let d = first.base.len();
        for s in &samples {
            if s.augs.rows() == 0 {
                return Err(Error::EmptyAugmentationSet);
            }
            if s.base.len() != d || s.augs.cols() != d {
                return Err(Error::DimMismatch(format!("expected {d} columns")));
            }
            if !s.augs.is_finite() || s.base.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("augmented sample".into()));
            }
        }
        let n_pos = samples.iter().filter(|s| s.class).count();
        if n_pos == 0 || n_pos == samples.len() {
            return Err(Error::SingleClass);
        }
        let pi_p = n_pos as f64 / samples.len() as f64;
        let ds = Self { samples, pi_p };
        if !ds.classes_disjoint() {
            log::warn!("augmentation sets of the two classes share points");
        }
        Ok(ds)
    }

    /// `T(x)` is the base point plus `n_aug - 1` copies perturbed by `N(0, aug_sigma^2 I)`.
    pub fn gaussian(sup: &SupervisedDataset, n_aug: usize, aug_sigma: f64, seed: u64) -> Result<Self> {
        if n_aug == 0 || aug_sigma < 0.0 || !aug_sigma.is_finite() {
            return Err(Error::InvalidArgs(format!("n_aug={n_aug}, aug_sigma={aug_sigma}")));
        }
        let mut rng = RngStream::new(seed, 0xA6);
        let d = sup.features.cols();
        let samples = (0..sup.n())
            .map(|i| {
                let base = sup.features.row(i).to_vec();
                let mut data = base.clone();
                for _ in 1..n_aug {
                    data.extend(base.iter().map(|v| v + aug_sigma * rng.normal()));
                }
                Ok(AugSample { base, augs: Matrix::new(n_aug, d, data)?, class: sup.truth[i] })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn samples(&self) -> &[AugSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pi_p(&self) -> f64 {
        self.pi_p
    }

    pub fn dim(&self) -> usize {
        self.samples[0].base.len()
    }

    /// Largest augmentation set size.
    pub fn max_aug_count(&self) -> usize {
        self.samples.iter().map(|s| s.augs.rows()).max().unwrap_or(0)
    }

    pub fn aug_sets(&self) -> Vec<Matrix> {
        self.samples.iter().map(|s| s.augs.clone()).collect()
    }

    pub fn truth(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.class).collect()
    }

    /// All augmentation points stacked in sample order.
    pub fn all_aug_points(&self) -> Matrix {
        let d = self.dim();
        let data: Vec<f64> = self.samples.iter().flat_map(|s| s.augs.as_slice().iter().copied()).collect();
        Matrix::new(data.len() / d, d, data).expect("validated on construction")
    }

    /// True when no augmentation point of a positive equals one of a negative.
    pub fn classes_disjoint(&self) -> bool {
        let (pos, neg): (Vec<_>, Vec<_>) = self.samples.iter().partition(|s| s.class);
        pos.iter().all(|p| neg.iter().all(|q| p.augs.iter_rows().all(|a| q.augs.iter_rows().all(|b| a != b))))
    }
}

/// Minimum distance between a point of `a` and a point of `b`.
pub fn aug_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptySet);
    }
    if a.cols() != b.cols() {
        return Err(Error::DimMismatch(format!("{} vs {} columns", a.cols(), b.cols())));
    }
    let mut best = f64::INFINITY;
    for x in a.iter_rows() {
        for y in b.iter_rows() {
            best = best.min(sq_dist(x, y));
        }
    }
    Ok(best.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSearch {
    /// Exhaustive up to [`EXHAUSTIVE_LIMIT`] samples per class, greedy above.
    Auto,
    Exhaustive,
    /// Ball growing from every sample; a lower bound on the exhaustive value.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub sigma_p: f64,
    pub sigma_n: f64,
    /// `min(sigma_p, sigma_n)`.
    pub sigma: f64,
    /// False when any class fell back to the greedy search.
    pub exact: bool,
}

fn class_members(ds: &AugmentedDataset, class: bool) -> Vec<usize> {
    (0..ds.len()).filter(|&i| ds.samples[i].class == class).collect()
}

fn class_distances(ds: &AugmentedDataset, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut d = vec![vec![0.0; idx.len()]; idx.len()];
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let v = aug_distance(&ds.samples[idx[a]].augs, &ds.samples[idx[b]].augs)?;
            d[a][b] = v;
            d[b][a] = v;
        }
    }
    Ok(d)
}

fn max_clique_exhaustive(dist: &[Vec<f64>], delta: f64) -> usize {
    let n = dist.len();
    let adj: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && dist[i][j] <= delta).fold(0u32, |m, j| m | (1 << j)))
        .collect();
    let mut best = 0;
    for mask in 1u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let mut rest = mask;
        let mut ok = true;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            if (mask & !(1 << i)) & !adj[i] != 0 {
                ok = false;
                break;
            }
        }
        if ok {
            best = size;
        }
    }
    best
}

fn max_clique_greedy(dist: &[Vec<f64>], delta: f64) -> usize {
    let n = dist.len();
    let mut best = 0;
    for seed in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != seed && dist[seed][j] <= delta).collect();
        order.sort_by(|&a, &b| dist[seed][a].total_cmp(&dist[seed][b]));
        let mut members = vec![seed];
        for j in order {
            if members.iter().all(|&m| dist[m][j] <= delta) {
                members.push(j);
            }
        }
        best = best.max(members.len());
    }
    best
}

fn class_sigma(dist: &[Vec<f64>], delta: f64, mode: SigmaSearch) -> Result<(f64, bool)> {
    let n = dist.len();
    let exhaustive = match mode {
        SigmaSearch::Auto => n <= EXHAUSTIVE_LIMIT,
        SigmaSearch::Exhaustive if n > 24 => {
            return Err(Error::TooLarge(format!("exhaustive search over {n} samples")));
        }
        SigmaSearch::Exhaustive => true,
        SigmaSearch::Greedy => false,
    };
    let size = if exhaustive { max_clique_exhaustive(dist, delta) } else { max_clique_greedy(dist, delta) };
    Ok((size as f64 / n as f64, exhaustive))
}

/// Per-class mass of the largest subset whose pairwise augmentation distances are all `<= delta`.
pub fn measure_sigma_delta(ds: &AugmentedDataset, delta: f64) -> Result<SigmaReport> {
    measure_sigma_delta_with(ds, delta, SigmaSearch::Auto)
}

pub fn measure_sigma_delta_with(ds: &AugmentedDataset, delta: f64, mode: SigmaSearch) -> Result<SigmaReport> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgs(format!("delta = {delta}")));
    }
    let dp = class_distances(ds, &class_members(ds, true))?;
    let dn = class_distances(ds, &class_members(ds, false))?;
    sigma_from_distances(&dp, &dn, delta, mode)
}

fn sigma_from_distances(dp: &[Vec<f64>], dn: &[Vec<f64>], delta: f64, mode: SigmaSearch) -> Result<SigmaReport> {
    let (sigma_p, ep) = class_sigma(dp, delta, mode)?;
    let (sigma_n, en) = class_sigma(dn, delta, mode)?;
    Ok(SigmaReport { sigma_p, sigma_n, sigma: sigma_p.min(sigma_n), exact: ep && en })
}

fn embed_all(encoder: &MlpEncoder, ds: &AugmentedDataset) -> Result<Vec<Matrix>> {
    ds.samples.iter().map(|s| encoder.encode(&s.augs)).collect()
}

fn r_epsilon_embedded(emb: &[Matrix], epsilon: f64) -> f64 {
    let eps2 = epsilon * epsilon;
    let violators = emb
        .iter()
        .filter(|e| (0..e.rows()).any(|a| (a + 1..e.rows()).any(|b| sq_dist(e.row(a), e.row(b)) > eps2)))
        .count();
    violators as f64 / emb.len() as f64
}

/// Mass of samples with two augmentations embedded more than `epsilon` apart.
pub fn r_epsilon(encoder: &MlpEncoder, ds: &AugmentedDataset, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgs(format!("epsilon = {epsilon}")));
    }
    Ok(r_epsilon_embedded(&embed_all(encoder, ds)?, epsilon))
}

/// `2(1 - σ) + R_ε / min(π, 1 - π) + σ(Lδ + 2ε)`.
pub fn eta(sigma: f64, delta: f64, epsilon: f64, r_eps: f64, pi_p: f64, l: f64) -> Result<f64> {
    let ok = (0.0..=1.0).contains(&sigma)
        && delta >= 0.0
        && epsilon >= 0.0
        && (0.0..=1.0).contains(&r_eps)
        && pi_p > 0.0
        && pi_p < 1.0
        && l >= 0.0
        && delta.is_finite()
        && epsilon.is_finite()
        && l.is_finite();
    if !ok {
        return Err(Error::InvalidArgs(format!(
            "sigma={sigma}, delta={delta}, epsilon={epsilon}, r_eps={r_eps}, pi_p={pi_p}, L={l}"
        )));
    }
    Ok(2.0 * (1.0 - sigma) + r_eps / pi_p.min(1.0 - pi_p) + sigma * (l * delta + 2.0 * epsilon))
}

fn eta_prime_objective(h: f64, epsilon: f64, d: f64, c: f64, m: f64) -> f64 {
    4.0 * (1.0f64).max(m * m * h * h * d) / (h * h * d * (epsilon - c * h))
}

/// Infimum over `h` in `(0, ε / (2√d L M))` of `4 max(1, m²h²d) / (h²d(ε - 2√d L M h))`.
///
/// Minimized on a log-spaced grid, then refined by golden-section search inside the best cell.
pub fn eta_prime(epsilon: f64, d: usize, l: f64, big_m: f64, m: usize) -> Result<f64> {
    if d == 0 || !(epsilon > 0.0) || !(l >= 0.0) || !(big_m >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgs(format!("epsilon={epsilon}, d={d}, L={l}, M={big_m}")));
    }
    let df = d as f64;
    let c = 2.0 * df.sqrt() * l * big_m;
    let h_max = epsilon / c;
    if !(h_max > 0.0) || !h_max.is_finite() {
        return Err(Error::EmptyDomain(format!("h interval (0, {h_max})")));
    }
    let mf = m as f64;
    let f = |h: f64| eta_prime_objective(h, epsilon, df, c, mf);
    let lo = -12.0f64;
    let grid: Vec<f64> = (1..=ETA_PRIME_GRID)
        .map(|i| h_max * 10f64.powf(lo * (1.0 - i as f64 / (ETA_PRIME_GRID + 1) as f64)))
        .collect();
    let (k, _) = grid
        .iter()
        .map(|&h| f(h))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::EmptyDomain("empty grid".into()))?;
    let mut a = if k == 0 { grid[0] * 0.5 } else { grid[k - 1] };
    let mut b = if k + 1 < grid.len() { grid[k + 1] } else { 0.5 * (grid[k] + h_max) };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
        if b - a <= 1e-15 * b {
            break;
        }
    }
    Ok(f(grid[k]).min(f1).min(f2))
}

/// How the encoder's Lipschitz constant is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LipschitzSource {
    Given { value: f64 },
    /// Max ratio over all pairs of augmentation points; exact on the finite support.
    Support,
    /// Random probes via `estimate_lipschitz`; a lower bound.
    Sampled { probe_pairs: usize, scale: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    pub epsilon: f64,
    pub lipschitz: LipschitzSource,
    /// Fixed δ; when absent, δ is picked from candidate distances to minimize η.
    pub delta: Option<f64>,
    /// Lipschitz constant of the transformations.
    pub transform_lipschitz: f64,
    /// Number of discrete transformations; defaults to the largest `|T(x)|`.
    pub discrete: Option<usize>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, lipschitz: LipschitzSource::Support, delta: None, transform_lipschitz: 1.0, discrete: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct BoundReport {
    pub sigma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub R_eps: f64,
    pub eta: f64,
    pub eta_prime: f64,
    pub L: f64,
    pub M: f64,
    pub m: usize,
    pub delta_mu: f64,
    pub zeta_P: f64,
    pub zeta_N: f64,
    pub zeta_mu: f64,
    /// `μ̂_Pᵀμ̂_N`.
    pub centroid_dot: f64,
    /// `1 - η - √(2η) - Δ_μ - ζ_μ`.
    pub threshold: f64,
    /// Same threshold with `Δ_μ / 2`.
    pub threshold_half_delta: f64,
    pub condition_holds: bool,
    pub condition_holds_half_delta: bool,
    pub err: f64,
    pub bound: f64,
    pub lipschitz_is_lower_bound: bool,
    pub sigma_exact: bool,
}

impl BoundReport {
    /// False only when the condition holds and the error exceeds the bound.
    pub fn bound_respected(&self) -> bool {
        !self.condition_holds || self.err <= self.bound
    }

    pub fn bound_respected_half_delta(&self) -> bool {
        !self.condition_holds_half_delta || self.err <= self.bound
    }
}

fn mean_of_embeddings(emb: &[Matrix], members: impl Iterator<Item = usize>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for i in members {
        let e = &emb[i];
        let s = acc.get_or_insert_with(|| vec![0.0; e.cols()]);
        let w = 1.0 / e.rows() as f64;
        for r in e.iter_rows() {
            for (a, v) in s.iter_mut().zip(r) {
                *a += w * v;
            }
        }
        count += 1;
    }
    acc.map(|mut s| {
        s.iter_mut().for_each(|v| *v /= count as f64);
        s
    })
}

/// Class centroids `E_{x ∈ C} E_{x' ∈ T(x)} g(x')` for the classes given by `labels`.
pub fn augmentation_centroids(emb: &[Matrix], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if emb.len() != labels.len() {
        return Err(Error::LengthMismatch(emb.len(), labels.len()));
    }
    let p = mean_of_embeddings(emb, (0..emb.len()).filter(|&i| labels[i])).ok_or(Error::EmptyPositives)?;
    let n = mean_of_embeddings(emb, (0..emb.len()).filter(|&i| !labels[i])).ok_or(Error::EmptyUnlabeled)?;
    Ok((p, n))
}

fn resolve_lipschitz(encoder: &MlpEncoder, ds: &AugmentedDataset, src: LipschitzSource) -> Result<(f64, bool)> {
    match src {
        LipschitzSource::Given { value } => Ok((value, false)),
        LipschitzSource::Support => Ok((empirical_lipschitz(encoder, &ds.all_aug_points())?, false)),
        LipschitzSource::Sampled { probe_pairs, scale, seed } => {
            Ok((estimate_lipschitz(encoder, probe_pairs, scale, seed)?, true))
        }
    }
}

fn delta_candidates(dp: &[Vec<f64>], dn: &[Vec<f64>]) -> Vec<f64> {
    let mut all: Vec<f64> = std::iter::once(0.0)
        .chain(dp.iter().enumerate().flat_map(|(i, r)| r[i + 1..].iter().copied()))
        .chain(dn.iter().enumerate().flat_map(|(i, r)| r[i + 1..].iter().copied()))
        .collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    const MAX: usize = 64;
    if all.len() <= MAX {
        return all;
    }
    (0..MAX).map(|k| all[k * (all.len() - 1) / (MAX - 1)]).collect()
}

/// Evaluates every symbol of the centroid-separation condition and the error bound
/// `err <= (1 - σ) + R_ε` for the nearest-centroid classifier built from `clustering`.
///
/// A sample counts as misclassified when any of its augmentations is.
pub fn check_theorem3(
    encoder: &MlpEncoder,
    ds: &AugmentedDataset,
    clustering: &Clustering,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    if clustering.assignments.len() != ds.len() {
        return Err(Error::LengthMismatch(clustering.assignments.len(), ds.len()));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgs(format!("epsilon = {}", cfg.epsilon)));
    }
    let emb = embed_all(encoder, ds)?;
    let truth = ds.truth();
    let (mu_p, mu_n) = augmentation_centroids(&emb, &truth)?;
    let hat_p = mean_of_embeddings(&emb, (0..ds.len()).filter(|&i| clustering.assignments[i]))
        .unwrap_or_else(|| clustering.mu_p.clone());
    let hat_n = mean_of_embeddings(&emb, (0..ds.len()).filter(|&i| !clustering.assignments[i]))
        .unwrap_or_else(|| clustering.mu_n.clone());
    if hat_p.len() != mu_p.len() || hat_n.len() != mu_n.len() {
        return Err(Error::DimMismatch("clustering centroids".into()));
    }

    let (l, l_lower) = resolve_lipschitz(encoder, ds, cfg.lipschitz)?;
    let r_eps = r_epsilon_embedded(&emb, cfg.epsilon);
    let dp = class_distances(ds, &class_members(ds, true))?;
    let dn = class_distances(ds, &class_members(ds, false))?;
    let candidates = match cfg.delta {
        Some(d) => vec![d],
        None => delta_candidates(&dp, &dn),
    };
    let mut best: Option<(f64, f64, SigmaReport)> = None;
    for delta in candidates {
        let sig = sigma_from_distances(&dp, &dn, delta, SigmaSearch::Auto)?;
        let e = eta(sig.sigma, delta, cfg.epsilon, r_eps, ds.pi_p, l)?;
        if best.as_ref().is_none_or(|b| e < b.1) {
            best = Some((delta, e, sig));
        }
    }
    let (delta, eta_val, sig) = best.ok_or_else(|| Error::InvalidArgs("no delta".into()))?;

    let m = cfg.discrete.unwrap_or_else(|| ds.max_aug_count());
    let eta_prime_val = eta_prime(cfg.epsilon, ds.dim(), l, cfg.transform_lipschitz, m).unwrap_or(f64::INFINITY);

    let delta_mu = 0.5 - 0.5 * dot(&mu_p, &mu_p).min(dot(&mu_n, &mu_n));
    let zeta_p = norm(&hat_p.iter().zip(&mu_p).map(|(a, b)| a - b).collect::<Vec<_>>());
    let zeta_n = norm(&hat_n.iter().zip(&mu_n).map(|(a, b)| a - b).collect::<Vec<_>>());
    let zeta_mu = zeta_p + zeta_n + zeta_p * zeta_n;
    let centroid_dot = dot(&hat_p, &hat_n);
    let base = 1.0 - eta_val - (2.0 * eta_val).sqrt() - zeta_mu;
    let threshold = base - delta_mu;
    let threshold_half_delta = base - 0.5 * delta_mu;

    let mut wrong = 0usize;
    for (e, &t) in emb.iter().zip(&truth) {
        let pred = nearest_centroid_classify(e, &hat_p, &hat_n)?;
        if pred.iter().any(|&p| (p == 1) != t) {
            wrong += 1;
        }
    }
    let err = wrong as f64 / ds.len() as f64;
    let bound = ((1.0 - sig.sigma) + r_eps).min(1.0);

    Ok(BoundReport {
        sigma: sig.sigma,
        delta,
        epsilon: cfg.epsilon,
        R_eps: r_eps,
        eta: eta_val,
        eta_prime: eta_prime_val,
        L: l,
        M: cfg.transform_lipschitz,
        m,
        delta_mu,
        zeta_P: zeta_p,
        zeta_N: zeta_n,
        zeta_mu,
        centroid_dot,
        threshold,
        threshold_half_delta,
        condition_holds: centroid_dot < threshold,
        condition_holds_half_delta: centroid_dot < threshold_half_delta,
        err,
        bound,
        lipschitz_is_lower_bound: l_lower,
        sigma_exact: sig.exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    /// `R_ε`.
    pub lhs: f64,
    /// `η′ √(L^I)`.
    pub rhs: f64,
    pub eta_prime: f64,
    pub l_i: f64,
    pub holds: bool,
}

/// Both sides of `R_ε <= η′(ε, T) √(L^I)`.
pub fn lemma2_check(
    encoder: &MlpEncoder,
    ds: &AugmentedDataset,
    epsilon: f64,
    l: f64,
    big_m: f64,
    m: usize,
) -> Result<Lemma2Report> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgs(format!("epsilon = {epsilon}")));
    }
    let emb = embed_all(encoder, ds)?;
    let lhs = r_epsilon_embedded(&emb, epsilon);
    let split = alignment_uniformity_split_embedded(&emb)?;
    let ep = eta_prime(epsilon, ds.dim(), l, big_m, m)?;
    let rhs = if split.l_i == 0.0 { 0.0 } else { ep * split.l_i.sqrt() };
    Ok(Lemma2Report { lhs, rhs, eta_prime: ep, l_i: split.l_i, holds: lhs <= rhs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub holds: bool,
    /// `log(exp(L^II + c) + c′)`.
    pub lhs: f64,
    /// `1 - η - √(2η) - Δ_μ / 2 - ζ_μ`.
    pub rhs: f64,
    pub c: f64,
    pub c_prime: f64,
}

/// `(2ε + Lδ + 4(1-σ) + 8R_ε)² + 4ε + 2Lδ + 8(1-σ) + 18R_ε`.
pub fn lemma3_c(sigma: f64, delta: f64, epsilon: f64, r_eps: f64, l: f64) -> f64 {
    let s = 2.0 * epsilon + l * delta + 4.0 * (1.0 - sigma) + 8.0 * r_eps;
    s * s + 4.0 * epsilon + 2.0 * l * delta + 8.0 * (1.0 - sigma) + 18.0 * r_eps
}

/// `exp(1 / (π(1-π))) - exp(1 - ε)`.
pub fn lemma3_c_prime(epsilon: f64, pi_p: f64) -> f64 {
    (1.0 / (pi_p * (1.0 - pi_p))).exp() - (1.0 - epsilon).exp()
}

/// Sufficient condition on the uniformity term for centroid separation.
#[allow(clippy::too_many_arguments)]
pub fn lemma3_condition(
    l_ii: f64,
    sigma: f64,
    delta: f64,
    epsilon: f64,
    r_eps: f64,
    pi_p: f64,
    l: f64,
    eta_val: f64,
    delta_mu: f64,
    zeta_mu: f64,
) -> Result<Lemma3Report> {
    eta(sigma, delta, epsilon, r_eps, pi_p, l)?;
    if !l_ii.is_finite() || !(eta_val >= 0.0) || !delta_mu.is_finite() || !zeta_mu.is_finite() {
        return Err(Error::InvalidArgs(format!("L_II={l_ii}, eta={eta_val}, delta_mu={delta_mu}, zeta_mu={zeta_mu}")));
    }
    let c = lemma3_c(sigma, delta, epsilon, r_eps, l);
    let c_prime = lemma3_c_prime(epsilon, pi_p);
    let a = l_ii + c;
    let b = c_prime.ln();
    let hi = a.max(b);
    let lhs = hi + ((a - hi).exp() + (b - hi).exp()).ln();
    let rhs = 1.0 - eta_val - (2.0 * eta_val).sqrt() - 0.5 * delta_mu - zeta_mu;
    Ok(Lemma3Report { holds: lhs < rhs, lhs, rhs, c, c_prime })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Activation;
    use crate::pu_data::{gen_gmm, GmmSpec};
    use crate::pupl::{pupl, PuplConfig};
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sample(points: &[&[f64]], class: bool) -> AugSample {
        AugSample { base: points[0].to_vec(), augs: m(points), class }
    }

    fn gmm_aug(sep: f64, sigma: f64, n: usize, aug_sigma: f64, seed: u64) -> AugmentedDataset {
        let spec = GmmSpec {
            d: 2,
            mean_pos: vec![sep, 0.0],
            mean_neg: vec![-sep, 0.0],
            sigma,
            n,
            pi_p: 0.5,
            seed,
            extra_pos_means: vec![],
            extra_neg_means: vec![],
        };
        AugmentedDataset::gaussian(&gen_gmm(&spec).unwrap(), 4, aug_sigma, seed).unwrap()
    }

    #[test]
    fn aug_distance_examples() {
        let a = m(&[&[0.0, 0.0]]);
        let b = m(&[&[3.0, 4.0]]);
        assert_eq!(aug_distance(&a, &b).unwrap(), 5.0);
        let c = m(&[&[1.0, 1.0], &[3.0, 4.0]]);
        assert_eq!(aug_distance(&b, &c).unwrap(), 0.0);
        assert!(matches!(aug_distance(&Matrix::zeros(0, 2), &a), Err(Error::EmptySet)));
    }

    #[test]
    fn aug_distance_matches_double_loop() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..20 {
            let a = Matrix::new(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
            let b = Matrix::new(7, 3, (0..21).map(|_| rng.normal()).collect()).unwrap();
            let mut naive = f64::INFINITY;
            for i in 0..5 {
                for j in 0..7 {
                    let d: f64 = (0..3).map(|k| (a.get(i, k) - b.get(j, k)).powi(2)).sum::<f64>().sqrt();
                    naive = naive.min(d);
                }
            }
            assert!((aug_distance(&a, &b).unwrap() - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(AugmentedDataset::new(vec![sample(&[&[0.0]], true)]), Err(Error::SingleClass)));
        let empty = AugSample { base: vec![0.0], augs: Matrix::zeros(0, 1), class: true };
        assert!(matches!(
            AugmentedDataset::new(vec![empty, sample(&[&[1.0]], false)]),
            Err(Error::EmptyAugmentationSet)
        ));
        let ds = AugmentedDataset::new(vec![sample(&[&[0.0], &[1.0]], true), sample(&[&[1.0]], false)]).unwrap();
        assert!(!ds.classes_disjoint());
        assert_eq!(ds.pi_p(), 0.5);
    }

    #[test]
    fn sigma_examples() {
        let ds = AugmentedDataset::new(vec![
            sample(&[&[0.0]], true),
            sample(&[&[1.0]], true),
            sample(&[&[5.0]], true),
            sample(&[&[10.0]], false),
            sample(&[&[20.0]], false),
        ])
        .unwrap();
        let full = measure_sigma_delta(&ds, 100.0).unwrap();
        assert_eq!((full.sigma_p, full.sigma_n), (1.0, 1.0));
        let zero = measure_sigma_delta(&ds, 0.0).unwrap();
        assert_eq!((zero.sigma_p, zero.sigma_n), (1.0 / 3.0, 0.5));
        assert!(zero.exact);
        let one = measure_sigma_delta(&ds, 1.0).unwrap();
        assert_eq!(one.sigma_p, 2.0 / 3.0);
        assert_eq!(one.sigma, 0.5);
    }

    #[test]
    fn sigma_two_tight_triples() {
        // Triple A near 0 and triple B near 10, plus one point of A bridging toward B.
        let pts = [0.0, 0.3, 0.6, 10.0, 10.2, 10.4];
        let mut samples: Vec<AugSample> = pts.iter().map(|&p| sample(&[&[p]], true)).collect();
        samples.push(sample(&[&[-50.0]], false));
        let ds = AugmentedDataset::new(samples).unwrap();
        // By hand: within δ = 0.6 each triple is a clique and no cross pair is.
        let r = measure_sigma_delta_with(&ds, 0.6, SigmaSearch::Exhaustive).unwrap();
        assert_eq!(r.sigma_p, 0.5);
        let r = measure_sigma_delta_with(&ds, 0.35, SigmaSearch::Exhaustive).unwrap();
        assert_eq!(r.sigma_p, 2.0 / 6.0);
        let r = measure_sigma_delta_with(&ds, 10.4, SigmaSearch::Exhaustive).unwrap();
        assert_eq!(r.sigma_p, 1.0);
        let r = measure_sigma_delta_with(&ds, 10.0, SigmaSearch::Exhaustive).unwrap();
        assert_eq!(r.sigma_p, 4.0 / 6.0);
    }

    #[test]
    fn r_epsilon_examples() {
        let ds = AugmentedDataset::new(vec![
            sample(&[&[1.0, 0.0], &[0.0, 1.0]], true),
            sample(&[&[1.0, 0.0], &[1.0, 0.01]], true),
            sample(&[&[-1.0, 0.0]], false),
        ])
        .unwrap();
        let enc = MlpEncoder::identity(2, true);
        assert!((r_epsilon(&enc, &ds, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r_epsilon(&enc, &ds, 2.0).unwrap(), 0.0);
        let collapse = MlpEncoder::from_params(&[2, 1], Activation::Identity, &[0.0, 0.0, 1.0], true).unwrap();
        assert_eq!(r_epsilon(&collapse, &ds, 1e-6).unwrap(), 0.0);
        assert!(r_epsilon(&enc, &ds, 0.0).is_err());
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta(1.0, 0.0, 0.0, 0.0, 0.5, 1.0).unwrap(), 0.0);
        assert!((eta(1.0, 0.1, 0.05, 0.0, 0.5, 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((eta(1.0, 0.0, 0.0, 0.1, 0.5, 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(eta(1.2, 0.0, 0.0, 0.0, 0.5, 1.0).is_err());
        assert!(eta(1.0, 0.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    fn eta_prime_closed_form(epsilon: f64, d: usize, l: f64, big_m: f64, m: usize) -> f64 {
        let df = d as f64;
        let c = 2.0 * df.sqrt() * l * big_m;
        let h_star = 2.0 * epsilon / (3.0 * c);
        let h_kink = if m == 0 { f64::INFINITY } else { 1.0 / (m as f64 * df.sqrt()) };
        let h = h_star.min(h_kink);
        let mf = m as f64;
        4.0 * (1.0f64).max(mf * mf * h * h * df) / (h * h * df * (epsilon - c * h))
    }

    #[test]
    fn eta_prime_matches_closed_form() {
        for &(eps, d, l, bm, m) in &[
            (0.5, 2, 1.0, 1.0, 4usize),
            (0.1, 3, 0.2, 1.0, 5),
            (1.0, 1, 2.0, 1.0, 0),
            (0.3, 8, 0.01, 1.0, 20),
            (2.0, 2, 0.5, 2.0, 1),
        ] {
            let got = eta_prime(eps, d, l, bm, m).unwrap();
            let want = eta_prime_closed_form(eps, d, l, bm, m);
            assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
        }
        assert!(matches!(eta_prime(0.5, 2, 0.0, 1.0, 3), Err(Error::EmptyDomain(_))));
    }

    #[test]
    fn eta_prime_pole_structure() {
        let (eps, d, l, bm) = (0.5, 2usize, 1.0, 1.0);
        let c = 2.0 * (d as f64).sqrt() * l * bm;
        let h_max = eps / c;
        let f = |h: f64| eta_prime_objective(h, eps, d as f64, c, 3.0);
        let best = eta_prime(eps, d, l, bm, 3).unwrap();
        assert!(f(1e-9 * h_max) > 1e6 * best);
        assert!(f(h_max * (1.0 - 1e-9)) > 1e6 * best);
    }

    #[test]
    fn eta_prime_monotone_in_epsilon() {
        let mut prev = 0.0;
        for k in (1..=20).rev() {
            let eps = 0.1 * k as f64;
            let v = eta_prime(eps, 2, 0.7, 1.0, 4).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn separation_condition_constants() {
        assert_eq!(lemma3_c(1.0, 0.0, 0.0, 0.0, 1.0), 0.0);
        assert!(lemma3_c(1.0, 0.0, 1e-9, 0.0, 1.0) < 1e-8);
        let eps = 0.2;
        assert!((lemma3_c_prime(eps, 0.5) - (4f64.exp() - (1.0 - eps).exp())).abs() < 1e-12);
        let r = lemma3_condition(0.3, 1.0, 0.0, 0.1, 0.0, 0.5, 1.0, 0.2, 0.0, 0.0).unwrap();
        let direct = ((0.3 + r.c).exp() + r.c_prime).ln();
        assert!((r.lhs - direct).abs() < 1e-12);
        assert!(!r.holds);
    }

    #[test]
    fn antipodal_collapse_condition_and_zero_error() {
        let samples = vec![
            sample(&[&[1.0], &[1.1]], true),
            sample(&[&[1.2], &[1.05]], true),
            sample(&[&[-1.0], &[-1.1]], false),
            sample(&[&[-0.9], &[-1.2]], false),
        ];
        let ds = AugmentedDataset::new(samples).unwrap();
        let enc = MlpEncoder::identity(1, true);
        let clustering = Clustering {
            mu_p: vec![1.0],
            mu_n: vec![-1.0],
            assignments: vec![true, true, false, false],
            potential: 0.0,
            iterations: 0,
            objective_trace: vec![],
        };
        let r = check_theorem3(&enc, &ds, &clustering, &BoundConfig { epsilon: 0.01, ..Default::default() }).unwrap();
        assert_eq!(r.R_eps, 0.0);
        assert_eq!(r.sigma, 1.0);
        assert_eq!(r.zeta_mu, 0.0);
        assert_eq!(r.delta_mu, 0.0);
        assert!(r.condition_holds);
        assert_eq!(r.err, 0.0);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn moderate_noise_bound_never_violated() {
        let mut held = 0;
        for seed in 0..50u64 {
            let sep = 1.0 + (seed % 5) as f64;
            let ds = gmm_aug(sep, 0.5, 30, 0.1 + 0.05 * (seed % 4) as f64, seed);
            let enc = MlpEncoder::identity(2, true);
            let base = Matrix::from_rows(&ds.samples().iter().map(|s| s.base.clone()).collect::<Vec<_>>()).unwrap();
            let z = enc.encode(&base).unwrap();
            let labeled: Vec<bool> = ds.samples().iter().enumerate().map(|(i, s)| s.class && i % 3 == 0).collect();
            let res = pupl(&z, &labeled, &PuplConfig { seed, ..Default::default() }).unwrap();
            let r = check_theorem3(&enc, &ds, &res.clustering, &BoundConfig { epsilon: 0.1, ..Default::default() })
                .unwrap();
            assert!((0.0..=1.0).contains(&r.err) && (0.0..=1.0).contains(&r.bound));
            assert!(r.bound_respected(), "{r:?}");
            assert!(r.bound_respected_half_delta(), "{r:?}");
            held += r.condition_holds as usize;
            let l3 = lemma3_condition(0.5, r.sigma, r.delta, r.epsilon, r.R_eps, ds.pi_p(), r.L, r.eta, r.delta_mu, r.zeta_mu)
                .unwrap();
            assert!(!l3.holds || r.condition_holds_half_delta);
        }
        assert!(held > 0);
    }

    #[test]
    fn alignment_bound_random_encoders() {
        let ds = gmm_aug(2.0, 0.5, 20, 0.3, 1);
        for seed in 0..20 {
            let enc = MlpEncoder::new_random(&[2, 8, 3], Activation::Tanh, true, seed).unwrap();
            let l = empirical_lipschitz(&enc, &ds.all_aug_points()).unwrap();
            let r = lemma2_check(&enc, &ds, 0.2, l, 1.0, ds.max_aug_count()).unwrap();
            assert!(r.rhs.is_finite());
            assert!(r.holds, "{r:?}");
        }
        let collapse = MlpEncoder::from_params(&[2, 1], Activation::Identity, &[0.0, 0.0, 1.0], true).unwrap();
        let r = lemma2_check(&collapse, &ds, 0.2, 1.0, 1.0, 4).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn r_epsilon_non_increasing(seed in 0u64..1000, e1 in 0.01f64..1.0, e2 in 0.01f64..1.0) {
            let ds = gmm_aug(1.0, 0.7, 12, 0.4, seed);
            let enc = MlpEncoder::identity(2, true);
            let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(r_epsilon(&enc, &ds, hi).unwrap() <= r_epsilon(&enc, &ds, lo).unwrap());
        }

        #[test]
        fn greedy_never_exceeds_exhaustive(seed in 0u64..1000, delta in 0.0f64..3.0) {
            let ds = gmm_aug(1.0, 1.0, 20, 0.2, seed);
            let ex = measure_sigma_delta_with(&ds, delta, SigmaSearch::Exhaustive).unwrap();
            let gr = measure_sigma_delta_with(&ds, delta, SigmaSearch::Greedy).unwrap();
            prop_assert!(gr.sigma_p <= ex.sigma_p && gr.sigma_n <= ex.sigma_n);
        }

        #[test]
        fn eta_monotone(s1 in 0.0f64..1.0, s2 in 0.0f64..1.0, r in 0.0f64..0.5, d in 0.0f64..0.5,
                        e in 0.0f64..0.4, l in 0.0f64..2.0, pi in 0.1f64..0.9) {
            prop_assume!(l * d + 2.0 * e <= 2.0);
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(eta(hi, d, e, r, pi, l).unwrap() <= eta(lo, d, e, r, pi, l).unwrap() + 1e-12);
            let base = eta(s1, d, e, r, pi, l).unwrap();
            prop_assert!(eta(s1, d, e, (r + 0.1).min(1.0), pi, l).unwrap() >= base);
            prop_assert!(eta(s1, d + 0.1, e, r, pi, l).unwrap() >= base);
            prop_assert!(eta(s1, d, e + 0.1, r, pi, l).unwrap() >= base);
        }

        #[test]
        fn eta_prime_grid_refinement(eps in 0.05f64..2.0, d in 1usize..8, l in 0.05f64..3.0, m in 0usize..10) {
            let a = eta_prime(eps, d, l, 1.0, m).unwrap();
            let c = 2.0 * (d as f64).sqrt() * l;
            let h_max = eps / c;
            let mf = m as f64;
            let fine = (1..=2 * ETA_PRIME_GRID)
                .map(|i| h_max * 10f64.powf(-12.0 * (1.0 - i as f64 / (2 * ETA_PRIME_GRID + 1) as f64)))
                .map(|h| eta_prime_objective(h, eps, d as f64, c, mf))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(a <= fine * (1.0 + 1e-9));
            prop_assert!((fine - a) / a < 1e-3);
        }
    }
}
