//! Monte Carlo and exact checks of the bias, variance, centroid and gradient results
//! for contrastive losses on PU data.

use crate::contrastive::MultiViewBatch;
use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, dot, mean_stderr, norm, sq_dist, Matrix, RngStream};
use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Class-conditional embedding distribution: `normalize(mu_y + spread * N(0, I_k))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub k: usize,
    pub mu_pos: Vec<f64>,
    pub mu_neg: Vec<f64>,
    pub spread: f64,
    pub pi_p: f64,
    pub tau: f64,
}

impl EmbeddingModel {
    pub fn new(mu_pos: Vec<f64>, mu_neg: Vec<f64>, spread: f64, pi_p: f64, tau: f64) -> Result<Self> {
        let k = mu_pos.len();
        if k == 0 || mu_neg.len() != k {
            return Err(Error::InvalidModel("centroid dimensions differ or are zero".into()));
        }
        for m in [&mu_pos, &mu_neg] {
            if (norm(m) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel("centroids must be unit vectors".into()));
            }
        }
        if !(spread >= 0.0) || !spread.is_finite() {
            return Err(Error::InvalidModel(format!("spread = {spread}")));
        }
        if !(0.0..=1.0).contains(&pi_p) {
            return Err(Error::InvalidModel(format!("pi_p = {pi_p}")));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidModel(format!("tau = {tau}")));
        }
        Ok(Self { k, mu_pos, mu_neg, spread, pi_p, tau })
    }

    /// Centroids `e_0` and `cos(angle) e_0 + sin(angle) e_1` in `k >= 2` dimensions.
    pub fn with_angle(k: usize, angle: f64, spread: f64, pi_p: f64, tau: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidModel("k must be at least 2".into()));
        }
        let mut p = vec![0.0; k];
        p[0] = 1.0;
        let mut n = vec![0.0; k];
        n[0] = angle.cos();
        n[1] = angle.sin();
        Self::new(p, n, spread, pi_p, tau)
    }

    pub fn sample(&self, positive: bool, rng: &mut RngStream) -> Vec<f64> {
        let mu = if positive { &self.mu_pos } else { &self.mu_neg };
        if self.spread == 0.0 {
            return mu.clone();
        }
        loop {
            let v: Vec<f64> = mu.iter().map(|m| m + self.spread * rng.normal()).collect();
            let n = norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    fn sample_mixture(&self, rng: &mut RngStream) -> (bool, Vec<f64>) {
        let pos = rng.uniform() < self.pi_p;
        (pos, self.sample(pos, rng))
    }
}

/// `2 kappa (rho_intra - rho_inter)`.
pub fn predicted_bias(kappa: f64, rho_intra: f64, rho_inter: f64) -> f64 {
    2.0 * kappa * (rho_intra - rho_inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub gamma: f64,
    pub trials: usize,
    pub kappa: f64,
    /// Mean of (ideal alignment - naive PU alignment), in similarity units `z.z / tau`.
    pub bias_mc: f64,
    pub stderr: f64,
    pub rho_p: f64,
    pub rho_n: f64,
    /// `(rho_p + rho_n) / 2`.
    pub rho_intra: f64,
    pub rho_inter: f64,
    /// `2 kappa (rho_intra - rho_inter) / tau` from the estimated rho values.
    pub bias_predicted: f64,
    /// Paired per-trial difference between the bias sample and the predicted sample.
    pub discrepancy: f64,
    pub discrepancy_stderr: f64,
}

impl BiasReport {
    /// Whether the measured bias agrees with the closed form within `z` standard errors.
    pub fn agrees(&self, z: f64) -> bool {
        self.discrepancy.abs() <= z * self.discrepancy_stderr
    }
}

fn check_trials(trials: usize, batch_b: usize, gamma: f64) -> Result<()> {
    if trials < 2 {
        return Err(Error::InvalidArgs("need at least two trials".into()));
    }
    if batch_b == 0 {
        return Err(Error::InvalidArgs("batch size must be positive".into()));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgs(format!("gamma = {gamma}")));
    }
    Ok(())
}

/// Monte Carlo estimate of the alignment bias of the naive PU-supervised loss.
///
/// Each trial draws an anchor from the PU pool (labeled positive with probability
/// `gamma / (1 + gamma)`, otherwise a mixture draw), averages its similarity over
/// `batch_b` draws from what the naive loss treats as its class (labeled positives, or the
/// whole unlabeled mixture), and subtracts that from the average over `batch_b` draws of
/// its true class. Independent pairs in the same trial estimate the rho terms.
pub fn mc_bias_scl_pu(model: &EmbeddingModel, gamma: f64, batch_b: usize, trials: usize, seed: u64) -> Result<BiasReport> {
    check_trials(trials, batch_b, gamma)?;
    let kappa = crate::pu_data::kappa_pu(model.pi_p, gamma);
    let p_lab = gamma / (1.0 + gamma);
    let tau = model.tau;
    let rows: Vec<[f64; 5]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, t as u64);
            let labeled = rng.uniform() < p_lab;
            let pos = labeled || rng.uniform() < model.pi_p;
            let z = model.sample(pos, &mut rng);
            let mut naive = 0.0;
            let mut ideal = 0.0;
            for _ in 0..batch_b {
                let c = if labeled { model.sample(true, &mut rng) } else { model.sample_mixture(&mut rng).1 };
                naive += dot(&z, &c);
                ideal += dot(&z, &model.sample(pos, &mut rng));
            }
            let d = (ideal - naive) / batch_b as f64 / tau;
            let pp = dot(&model.sample(true, &mut rng), &model.sample(true, &mut rng));
            let nn = dot(&model.sample(false, &mut rng), &model.sample(false, &mut rng));
            let pn = dot(&model.sample(true, &mut rng), &model.sample(false, &mut rng));
            let r = 0.5 * (pp + nn) - pn;
            [d, pp, nn, pn, d - 2.0 * kappa * r / tau]
        })
        .collect();
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let (bias_mc, stderr) = mean_stderr(&col(0));
    let rho_p = mean_stderr(&col(1)).0;
    let rho_n = mean_stderr(&col(2)).0;
    let rho_inter = mean_stderr(&col(3)).0;
    let (discrepancy, discrepancy_stderr) = mean_stderr(&col(4));
    let rho_intra = 0.5 * (rho_p + rho_n);
    Ok(BiasReport {
        gamma,
        trials,
        kappa,
        bias_mc,
        stderr,
        rho_p,
        rho_n,
        rho_intra,
        rho_inter,
        bias_predicted: predicted_bias(kappa, rho_intra, rho_inter) / tau,
        discrepancy,
        discrepancy_stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub gamma: f64,
    pub trials: usize,
    /// Expected ideal alignment `(p rho_p + (1 - p) rho_n) / tau`, `p` the anchor positive rate.
    pub target: f64,
    pub target_stderr: f64,
    pub mean_sscl: f64,
    pub stderr_sscl: f64,
    pub mean_pucl: f64,
    pub stderr_pucl: f64,
    pub var_sscl: f64,
    pub var_pucl: f64,
    /// `var_sscl - var_pucl`.
    pub delta_sigma: f64,
    pub delta_stderr: f64,
}

/// Variance of the self-supervised and PU-aware alignment estimators over batches of
/// `batch_b` sources whose two views are independent draws from the source's class.
pub fn mc_variance_gap(model: &EmbeddingModel, gammas: &[f64], batch_b: usize, trials: usize, seed: u64) -> Result<Vec<VarianceReport>> {
    gammas
        .iter()
        .enumerate()
        .map(|(g_idx, &gamma)| {
            check_trials(trials, batch_b, gamma)?;
            let p_lab = gamma / (1.0 + gamma);
            let tau = model.tau;
            let stream_base = (g_idx as u64) << 40;
            let rows: Vec<[f64; 4]> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = RngStream::new(seed, stream_base + t as u64);
                    let mut z = Vec::with_capacity(2 * batch_b);
                    let mut lab = Vec::with_capacity(2 * batch_b);
                    let mut cls = Vec::with_capacity(batch_b);
                    for _ in 0..batch_b {
                        let l = rng.uniform() < p_lab;
                        let pos = l || rng.uniform() < model.pi_p;
                        z.push(model.sample(pos, &mut rng));
                        lab.push(l);
                        cls.push(pos);
                    }
                    for s in 0..batch_b {
                        z.push(model.sample(cls[s], &mut rng));
                        lab.push(lab[s]);
                    }
                    let n = 2 * batch_b;
                    let partner = |i: usize| if i < batch_b { i + batch_b } else { i - batch_b };
                    let mut ss = 0.0;
                    let mut pu = 0.0;
                    for i in 0..n {
                        let own = dot(&z[i], &z[partner(i)]);
                        ss += own;
                        pu += if lab[i] {
                            let others: Vec<f64> = (0..n).filter(|&j| j != i && lab[j]).map(|j| dot(&z[i], &z[j])).collect();
                            others.iter().sum::<f64>() / others.len() as f64
                        } else {
                            own
                        };
                    }
                    let ss = ss / n as f64 / tau;
                    let pu = pu / n as f64 / tau;
                    let pp = dot(&model.sample(true, &mut rng), &model.sample(true, &mut rng));
                    let nn = dot(&model.sample(false, &mut rng), &model.sample(false, &mut rng));
                    [ss, pu, pp, nn]
                })
                .collect();
            let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
            let ss = col(0);
            let pu = col(1);
            let (mean_sscl, stderr_sscl) = mean_stderr(&ss);
            let (mean_pucl, stderr_pucl) = mean_stderr(&pu);
            let p_pos = (gamma + model.pi_p) / (1.0 + gamma);
            let tgt: Vec<f64> = rows.iter().map(|r| (p_pos * r[2] + (1.0 - p_pos) * r[3]) / tau).collect();
            let (target, target_stderr) = mean_stderr(&tgt);
            let nf = trials as f64;
            let var_sscl = compensated_sum(ss.iter().map(|v| (v - mean_sscl).powi(2))) / (nf - 1.0);
            let var_pucl = compensated_sum(pu.iter().map(|v| (v - mean_pucl).powi(2))) / (nf - 1.0);
            let w: Vec<f64> = ss.iter().zip(&pu).map(|(a, b)| (a - mean_sscl).powi(2) - (b - mean_pucl).powi(2)).collect();
            let delta_stderr = mean_stderr(&w).1 * nf / (nf - 1.0);
            Ok(VarianceReport {
                gamma,
                trials,
                target,
                target_stderr,
                mean_sscl,
                stderr_sscl,
                mean_pucl,
                stderr_pucl,
                var_sscl,
                var_pucl,
                delta_sigma: var_sscl - var_pucl,
                delta_stderr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidLemmaReport {
    pub n_p: usize,
    pub n_l: usize,
    /// Mean potential of the positives around the centroid of each size-`n_l` subset.
    pub lhs: f64,
    /// `factor * phi_star`.
    pub rhs: f64,
    pub factor: f64,
    pub phi_star: f64,
    pub subsets: usize,
}

/// `1 + (n_p - n_l) / (n_l (n_p - 1))`, equal to 1 when `n_p == 1`.
pub fn centroid_factor(n_p: usize, n_l: usize) -> f64 {
    if n_p <= 1 {
        return 1.0;
    }
    1.0 + (n_p - n_l) as f64 / (n_l as f64 * (n_p - 1) as f64)
}

fn potential_around(z: &Matrix, c: &[f64]) -> f64 {
    z.iter_rows().map(|r| sq_dist(r, c)).sum()
}

/// Exact expectation, over all labeled subsets of size `n_l`, of the positive potential
/// around the labeled centroid.
pub fn exact_centroid_lemma_check(z_p: &Matrix, n_l: usize) -> Result<CentroidLemmaReport> {
    let n_p = z_p.rows();
    if n_p > 12 {
        return Err(Error::TooLarge(format!("{n_p} positives, at most 12 can be enumerated")));
    }
    if n_l == 0 || n_l > n_p {
        return Err(Error::InvalidArgs(format!("n_l = {n_l} with {n_p} positives")));
    }
    let center = z_p.column_mean()?;
    let phi_star = potential_around(z_p, &center);
    let mut vals = Vec::new();
    for subset in (0..n_p).combinations(n_l) {
        let mu = z_p.select_rows(&subset).column_mean()?;
        vals.push(potential_around(z_p, &mu));
    }
    let lhs = compensated_sum(vals.iter().copied()) / vals.len() as f64;
    let factor = centroid_factor(n_p, n_l);
    Ok(CentroidLemmaReport { n_p, n_l, lhs, rhs: factor * phi_star, factor, phi_star, subsets: vals.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBiasReport {
    /// Mean over anchors of softmax mass on same-class rows in the self-supervised repulsion set.
    pub sscl_same_class_mass: f64,
    /// Same, for the PU-aware loss.
    pub pucl_same_class_mass: f64,
}

/// Compares how much repulsion each loss applies to rows of the anchor's own true class.
pub fn gradient_bias_compare(batch: &MultiViewBatch) -> Result<GradientBiasReport> {
    let y = batch.full_labels().ok_or(Error::MissingLabels)?;
    let z = batch.embeddings();
    let n = batch.len();
    let tau = batch.tau();
    let lab = batch.labeled();
    let mut ss = 0.0;
    let mut pu = 0.0;
    for i in 0..n {
        let a = batch.partner()[i];
        let s: Vec<f64> = (0..n).map(|j| crate::contrastive::similarity(z.row(i), z.row(j), tau)).collect::<Result<_>>()?;
        let m = (0..n).filter(|&j| j != i).map(|j| s[j]).fold(f64::NEG_INFINITY, f64::max);
        let zsum: f64 = (0..n).filter(|&j| j != i).map(|j| (s[j] - m).exp()).sum();
        for j in 0..n {
            if j == i || j == a || y[j] != y[i] {
                continue;
            }
            let p = (s[j] - m).exp() / zsum;
            ss += p;
            if !(lab[i] && lab[j]) {
                pu += p;
            }
        }
    }
    Ok(GradientBiasReport { sscl_same_class_mass: ss / n as f64, pucl_same_class_mass: pu / n as f64 })
}
