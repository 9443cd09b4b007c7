//! Verification suites shared by `pucl verify` and the acceptance tests.

use crate::classifier_head::{nearest_centroid_classify, risk_nnpu, risk_pn, risk_upu, LinearHead};
use crate::contrastive::{loss, LossKind, MultiViewBatch};
use crate::encoder::{empirical_lipschitz, Activation, MlpEncoder};
use crate::error::{Error, Result};
use crate::generalization_lab::{check_theorem3, lemma2_check, lemma3_condition, AugmentedDataset, BoundConfig};
use crate::numerics::{dot, finite_diff_grad, mean_stderr, normalize_rows, Matrix, RngStream};
use crate::pu_data::{breakdown_violated, gen_gmm, noise_rates, sample_pu_case_control, GmmSpec};
use crate::pupl::{brute_force_optimal_2means, kmeanspp, pupl, PuplConfig};
use crate::theory_lab::{exact_centroid_lemma_check, gradient_bias_compare, mc_bias_scl_pu, mc_variance_gap, EmbeddingModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bias,
    Variance,
    CentroidLemma,
    PuplBound,
    Upu,
    Generalization,
    Gradients,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Bias,
        Suite::Variance,
        Suite::CentroidLemma,
        Suite::PuplBound,
        Suite::Upu,
        Suite::Generalization,
        Suite::Gradients,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Bias => "bias",
            Suite::Variance => "variance",
            Suite::CentroidLemma => "centroid_lemma",
            Suite::PuplBound => "pupl_bound",
            Suite::Upu => "upu",
            Suite::Generalization => "generalization",
            Suite::Gradients => "gradients",
        }
    }

    pub fn parse(s: &str) -> Result<Suite> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgs(format!("unknown suite '{s}'")))
    }
}

/// Overrides for a suite run. `trials` replaces the suite's main repetition count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub trials: Option<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 0, trials: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

impl Check {
    fn new(name: &str, passed: bool, detail: Value) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub seed: u64,
    pub elapsed_secs: f64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match suite {
        Suite::Bias => bias(opts)?,
        Suite::Variance => variance(opts)?,
        Suite::CentroidLemma => centroid_lemma(opts)?,
        Suite::PuplBound => pupl_bound(opts)?,
        Suite::Upu => upu(opts)?,
        Suite::Generalization => generalization(opts)?,
        Suite::Gradients => gradients(opts)?,
    };
    Ok(SuiteReport {
        suite: suite.name().to_string(),
        passed: checks.iter().all(|c| c.passed),
        seed: opts.seed,
        elapsed_secs: start.elapsed().as_secs_f64(),
        checks,
    })
}

/// (pi_p, gamma, spread) configurations for the bias check.
pub const BIAS_CONFIGS: [(f64, f64, f64); 6] =
    [(0.5, 0.1, 0.3), (0.3, 0.5, 0.5), (0.7, 0.05, 0.2), (0.4, 1.0, 0.8), (0.6, 0.2, 0.0), (0.2, 0.01, 0.4)];

fn bias(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials.unwrap_or(100_000);
    let mut rows = Vec::new();
    let mut all = true;
    for (i, &(pi, gamma, spread)) in BIAS_CONFIGS.iter().enumerate() {
        let model = EmbeddingModel::with_angle(3, 2.0, spread, pi, 0.5)?;
        let r = mc_bias_scl_pu(&model, gamma, 4, trials, opts.seed.wrapping_add(i as u64))?;
        let ok = r.agrees(3.0);
        all &= ok;
        rows.push(json!({ "pi_p": pi, "gamma": gamma, "spread": spread, "agrees": ok, "report": r }));
    }
    Ok(vec![Check::new("bias_within_3_stderr", all, json!(rows))])
}

pub const VARIANCE_GAMMAS: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 1.0];

fn variance(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials.unwrap_or(40_000);
    let model = EmbeddingModel::with_angle(3, 2.5, 0.6, 0.5, 0.5)?;
    let reps = mc_variance_gap(&model, &VARIANCE_GAMMAS, 8, trials, opts.seed)?;
    let unbiased = reps.iter().all(|r| {
        let tol_s = 3.0 * (r.stderr_sscl.powi(2) + r.target_stderr.powi(2)).sqrt();
        let tol_p = 3.0 * (r.stderr_pucl.powi(2) + r.target_stderr.powi(2)).sqrt();
        (r.mean_sscl - r.target).abs() <= tol_s && (r.mean_pucl - r.target).abs() <= tol_p
    });
    let nonneg = reps.iter().all(|r| r.delta_sigma >= -2.0 * r.delta_stderr);
    let positive: Vec<_> = reps.iter().filter(|r| r.gamma > 0.0).collect();
    let monotone = positive.windows(2).all(|w| w[1].delta_sigma >= w[0].delta_sigma);
    let zero = reps.iter().find(|r| r.gamma == 0.0).map(|r| r.delta_sigma == 0.0 && r.mean_sscl == r.mean_pucl);
    let detail = json!(reps);
    Ok(vec![
        Check::new("estimators_unbiased_3_stderr", unbiased, detail.clone()),
        Check::new("delta_sigma_nonnegative_2_stderr", nonneg, Value::Null),
        Check::new("delta_sigma_nondecreasing", monotone, Value::Null),
        Check::new("delta_sigma_zero_at_gamma_0", zero == Some(true), Value::Null),
    ])
}

fn centroid_lemma(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let sets = opts.trials.unwrap_or(20);
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for s in 0..sets {
        let mut rng = RngStream::new(opts.seed, 0xCE00 + s as u64);
        let d = 1 + s % 3;
        let z = Matrix::new(10, d, (0..10 * d).map(|_| 2.0 * rng.normal()).collect())?;
        for n_p in 1..=10 {
            let zp = z.select_rows(&(0..n_p).collect::<Vec<_>>());
            for n_l in 1..=n_p {
                let r = exact_centroid_lemma_check(&zp, n_l)?;
                worst = worst.max((r.lhs - r.rhs).abs() / r.rhs.max(1.0));
                count += 1;
            }
        }
    }
    Ok(vec![Check::new(
        "exhaustive_equals_closed_form",
        worst <= 1e-9,
        json!({ "point_sets": sets, "cases": count, "max_rel_diff": worst }),
    )])
}

/// One seeding-bound instance: 2-D two-blob data with `n <= 12` rows and at least 30% of the
/// positives labeled.
fn pupl_instance(seed: u64, idx: u64) -> Result<(Matrix, Vec<bool>)> {
    let mut rng = RngStream::new(seed, 0x7200_0000 + idx);
    let n = 6 + rng.below(7);
    let n_pos = 2 + rng.below(n - 3);
    let sep = 0.5 + 4.0 * rng.uniform();
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let c = if i < n_pos { sep } else { -sep };
        data.push(c + rng.normal());
        data.push(rng.normal());
    }
    let min_l = (0.3 * n_pos as f64).ceil() as usize;
    let n_l = min_l + rng.below(n_pos - min_l + 1);
    let mut labeled = vec![false; n];
    for k in rng.sample_indices(n_pos, n_l) {
        labeled[k] = true;
    }
    Ok((Matrix::new(n, 2, data)?, labeled))
}

fn pupl_bound(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials.unwrap_or(1000);
    let mut r_pu = Vec::with_capacity(trials);
    let mut r_km = Vec::with_capacity(trials);
    let mut r_pu_exp = Vec::with_capacity(trials);
    let mut r_km_exp = Vec::with_capacity(trials);
    for t in 0..trials {
        let (z, labeled) = pupl_instance(opts.seed, t as u64)?;
        let phi_star = brute_force_optimal_2means(&z)?.potential;
        let cfg = PuplConfig { seed: opts.seed.wrapping_mul(1_000_003).wrapping_add(t as u64), ..Default::default() };
        let pu = pupl(&z, &labeled, &cfg)?;
        let km = kmeanspp(&z, &cfg)?;
        r_pu.push(pu.one_step_potential / phi_star);
        r_km.push(km.one_step_potential / phi_star);
        r_pu_exp.push(pu.expected_one_step_potential / phi_star);
        r_km_exp.push(km.expected_one_step_potential / phi_star);
    }
    let (m_pu, se_pu) = mean_stderr(&r_pu);
    let (m_km, se_km) = mean_stderr(&r_km);
    let diff: Vec<f64> = r_pu.iter().zip(&r_km).map(|(a, b)| a - b).collect();
    let (m_diff, se_diff) = mean_stderr(&diff);
    let detail = json!({
        "instances": trials,
        "mean_ratio_pupl": m_pu,
        "stderr_ratio_pupl": se_pu,
        "mean_ratio_kmeanspp": m_km,
        "stderr_ratio_kmeanspp": se_km,
        "mean_expected_ratio_pupl": mean_stderr(&r_pu_exp).0,
        "mean_expected_ratio_kmeanspp": mean_stderr(&r_km_exp).0,
        "max_ratio_pupl": r_pu.iter().copied().fold(0.0, f64::max),
        "max_ratio_kmeanspp": r_km.iter().copied().fold(0.0, f64::max),
        "mean_paired_difference": m_diff,
        "stderr_paired_difference": se_diff,
    });
    Ok(vec![
        Check::new("pupl_mean_ratio_le_16", m_pu <= 16.0, detail),
        Check::new("kmeanspp_mean_ratio_le_21_55", m_km <= 21.55, Value::Null),
        Check::new("pupl_le_kmeanspp_2_stderr", m_diff <= 2.0 * se_diff, Value::Null),
    ])
}

fn gmm(d: usize, sep: f64, n: usize, pi_p: f64, seed: u64) -> GmmSpec {
    let mut mean_pos = vec![0.0; d];
    let mut mean_neg = vec![0.0; d];
    mean_pos[0] = sep / 2.0;
    mean_neg[0] = -sep / 2.0;
    GmmSpec { d, mean_pos, mean_neg, sigma: 1.0, n, pi_p, seed, extra_pos_means: vec![], extra_neg_means: vec![] }
}

fn upu(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let resamples = opts.trials.unwrap_or(500);
    let sup = gen_gmm(&gmm(2, 2.0, 4000, 0.4, opts.seed))?;
    let pi_hat = sup.empirical_prior();
    let head = LinearHead { w: vec![0.8, -0.3], b: 0.2 };
    let pos: Vec<usize> = sup.positive_indices();
    let neg: Vec<usize> = (0..sup.n()).filter(|&i| !sup.truth[i]).collect();
    let pn = risk_pn(&head, &sup.features.select_rows(&pos), &sup.features.select_rows(&neg), pi_hat)?;

    let mut upu_vals = Vec::with_capacity(resamples);
    let mut exact_when_unclipped = true;
    let mut floor_ok = true;
    let mut clipped = 0usize;
    let mut check_pair = |h: &LinearHead, zp: &Matrix, zu: &Matrix, pi: f64| -> Result<f64> {
        let u = risk_upu(h, zp, zu, pi)?;
        let nn = risk_nnpu(h, zp, zu, pi)?;
        if nn.clipped {
            clipped += 1;
        } else {
            exact_when_unclipped &= nn.risk == u.risk;
        }
        floor_ok &= nn.risk >= pi * nn.r_p_plus;
        Ok(u.risk)
    };
    for s in 0..resamples {
        let pu = sample_pu_case_control(&sup, 100, 400, opts.seed.wrapping_add(1 + s as u64))?;
        let lab = pu.labeled_mask();
        let p_idx: Vec<usize> = (0..pu.n()).filter(|&i| lab[i]).collect();
        let u_idx: Vec<usize> = (0..pu.n()).filter(|&i| !lab[i]).collect();
        let zp = pu.features.select_rows(&p_idx);
        let zu = pu.features.select_rows(&u_idx);
        upu_vals.push(check_pair(&head, &zp, &zu, pi_hat)?);
        // A steep head whose negative part goes below zero on small samples.
        let steep = LinearHead { w: vec![6.0, 0.0], b: -1.0 };
        let small_u = zu.select_rows(&(0..10).collect::<Vec<_>>());
        check_pair(&steep, &zp, &small_u, 0.9)?;
    }
    let (mean, se) = mean_stderr(&upu_vals);
    let unbiased = (mean - pn).abs() <= 3.0 * se;

    let mut noise = Vec::new();
    let mut noise_ok = true;
    for (k, &(pi, gamma)) in [(0.4, 0.25), (0.5, 0.05), (0.3, 1.0)].iter().enumerate() {
        let n_rows = 100_000usize;
        let n_u = (n_rows as f64 / (1.0 + gamma)).round() as usize;
        let n_p = n_rows - n_u;
        let pool = n_u.max((1.2 * n_p as f64 / pi).ceil() as usize);
        let big = gen_gmm(&gmm(1, 2.0, pool, pi, opts.seed + 100 + k as u64))?;
        let ds = sample_pu_case_control(&big, n_p, n_u, opts.seed + 200 + k as u64)?;
        let (xi, _) = ds.empirical_noise_rates()?;
        let want = noise_rates(pi, ds.gamma()).0;
        let ok = (xi - want).abs() <= 0.02;
        noise_ok &= ok;
        noise.push(json!({ "pi_p": pi, "gamma": ds.gamma(), "empirical": xi, "predicted": want, "ok": ok }));
    }

    // pi = a/16, gamma = b/8; corruption fraction pi/(gamma+1) = a/(2(b+8)) reaches 1/2 iff a >= b+8.
    let mut mismatches = 0usize;
    let mut cells = 0usize;
    for a in 0..=16u32 {
        for b in 0..=24u32 {
            let want = a >= b + 8;
            if breakdown_violated(a as f64 / 16.0, b as f64 / 8.0) != want {
                mismatches += 1;
            }
            cells += 1;
        }
    }

    Ok(vec![
        Check::new(
            "upu_unbiased_3_stderr",
            unbiased,
            json!({ "resamples": resamples, "pi_hat": pi_hat, "mean_upu": mean, "stderr": se, "pn_risk": pn }),
        ),
        Check::new("nnpu_equals_upu_when_unclipped", exact_when_unclipped, json!({ "clipped_cases": clipped })),
        Check::new("nnpu_at_least_pi_r_p_plus", floor_ok, Value::Null),
        Check::new("flip_rate_within_0_02", noise_ok, json!(noise)),
        Check::new("breakdown_truth_table", mismatches == 0, json!({ "cells": cells, "mismatches": mismatches })),
    ])
}

/// (half separation, blob sigma, augmentation sigma, epsilon) for the bound constructions.
pub const GENERALIZATION_CONFIGS: [(f64, f64, f64, f64); 5] =
    [(2.0, 0.5, 0.1, 0.1), (4.0, 0.3, 0.1, 0.1), (4.0, 0.2, 0.05, 0.05), (6.0, 0.5, 0.1, 0.2), (3.0, 0.3, 0.1, 0.2)];

fn generalization(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let instances = opts.trials.unwrap_or(50);
    let mut reports = Vec::new();
    let mut thm3_ok = true;
    let mut lemma2_ok = true;
    let mut lemma3_ok = true;
    let mut held = 0usize;
    let mut lemma3_held = 0usize;
    for t in 0..instances {
        let seed = opts.seed.wrapping_mul(7919).wrapping_add(t as u64);
        let (sep, sigma, aug_sigma, epsilon) = GENERALIZATION_CONFIGS[t % GENERALIZATION_CONFIGS.len()];
        let mut spec = gmm(2, 2.0 * sep, 30, 0.5, seed);
        spec.sigma = sigma;
        let ds = AugmentedDataset::gaussian(&gen_gmm(&spec)?, 4, aug_sigma, seed)?;
        let enc = if t % 10 == 0 {
            MlpEncoder::new_random(&[2, 8, 2], Activation::Tanh, true, seed)?
        } else {
            MlpEncoder::identity(2, true)
        };
        let base = Matrix::from_rows(&ds.samples().iter().map(|s| s.base.clone()).collect::<Vec<_>>())?;
        let z = enc.encode(&base)?;
        let mut rank = 0usize;
        let labeled: Vec<bool> = ds
            .samples()
            .iter()
            .map(|s| {
                rank += s.class as usize;
                s.class && rank % 3 == 1
            })
            .collect();
        let res = pupl(&z, &labeled, &PuplConfig { seed, ..Default::default() })?;
        let cfg = BoundConfig { epsilon, ..Default::default() };
        let r = check_theorem3(&enc, &ds, &res.clustering, &cfg)?;
        thm3_ok &= r.bound_respected();
        held += r.condition_holds as usize;
        let l = empirical_lipschitz(&enc, &ds.all_aug_points())?;
        let l2 = lemma2_check(&enc, &ds, cfg.epsilon, l, 1.0, ds.max_aug_count())?;
        lemma2_ok &= l2.holds;
        let split = crate::contrastive::alignment_uniformity_split(&enc, &ds.aug_sets())?;
        let l3 = lemma3_condition(
            split.l_ii,
            r.sigma,
            r.delta,
            r.epsilon,
            r.R_eps,
            ds.pi_p(),
            r.L,
            r.eta,
            r.delta_mu,
            r.zeta_mu,
        )?;
        lemma3_held += l3.holds as usize;
        lemma3_ok &= !l3.holds || r.condition_holds_half_delta;
        reports.push(json!({ "bound": r, "lemma2": l2, "lemma3": l3 }));
    }

    let mut rng = RngStream::new(opts.seed, 0xF1);
    let mut disagreements = 0usize;
    let inputs = 1000usize;
    let k = 5;
    let mu_p: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
    let mu_n: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
    let x = Matrix::new(inputs, k, (0..inputs * k).map(|_| 2.0 * rng.normal()).collect())?;
    let nc = nearest_centroid_classify(&x, &mu_p, &mu_n)?;
    for (i, row) in x.iter_rows().enumerate() {
        let sp = dot(&mu_p, row) - 0.5 * dot(&mu_p, &mu_p);
        let sn = dot(&mu_n, row) - 0.5 * dot(&mu_n, &mu_n);
        if (nc[i] == 1) != (sp >= sn) {
            disagreements += 1;
        }
    }

    Ok(vec![
        Check::new(
            "error_bound_when_condition_holds",
            thm3_ok,
            json!({ "instances": instances, "condition_held": held, "reports": reports }),
        ),
        Check::new("alignment_bound_every_instance", lemma2_ok, Value::Null),
        Check::new(
            "uniformity_condition_implies_separation",
            lemma3_ok,
            json!({ "lemma3_condition_held": lemma3_held }),
        ),
        Check::new(
            "nearest_centroid_equals_affine_score",
            disagreements == 0,
            json!({ "inputs": inputs, "disagreements": disagreements }),
        ),
    ])
}

/// `|a - b| / max(|a|, |b|, 1e-3)`, maximized over components.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3)).fold(0.0, f64::max)
}

fn random_batch(sources: usize, k: usize, seed: u64, labeled_frac: f64) -> Result<MultiViewBatch> {
    let mut rng = RngStream::new(seed, 0x6AD);
    let mut gen = |rows: usize| -> Result<Matrix> {
        normalize_rows(&Matrix::new(rows, k, (0..rows * k).map(|_| rng.normal()).collect())?)
    };
    let z1 = gen(sources)?;
    let z2 = gen(sources)?;
    let mut rng = RngStream::new(seed, 0x6AE);
    let mut labeled: Vec<bool> = (0..sources).map(|_| rng.uniform() < labeled_frac).collect();
    labeled[0] = true;
    let full: Vec<bool> = labeled.iter().map(|&l| l || rng.uniform() < 0.4).collect();
    MultiViewBatch::from_views_with_labels(&z1, &z2, &labeled, Some(&full), 0.5)
}

pub const GRADIENT_KINDS: [LossKind; 6] = [
    LossKind::Sscl,
    LossKind::SclPu,
    LossKind::Scl,
    LossKind::Pucl,
    LossKind::Mcl { lambda: 0.3 },
    LossKind::Dcl { lambda: 0.2 },
];

fn embedding_fd_err(batch: &MultiViewBatch, kind: LossKind) -> Result<f64> {
    let rep = loss(kind, batch)?;
    let (rows, cols) = (batch.len(), batch.embeddings().cols());
    let f = |x: &[f64]| {
        let b = batch.with_embeddings(Matrix::new(rows, cols, x.to_vec()).expect("same shape")).expect("valid");
        loss(kind, &b).expect("valid").value
    };
    let fd = finite_diff_grad(f, batch.embeddings().as_slice(), 1e-5)?;
    Ok(max_rel_err(rep.grad.as_slice(), &fd))
}

fn encoder_fd_err(sources: usize, seed: u64, kind: LossKind) -> Result<f64> {
    let act = Activation::Tanh;
    let enc = MlpEncoder::new_random(&[3, 6, 4], act, true, seed)?;
    let mut rng = RngStream::new(seed, 0x6AF);
    let mut gen = || Matrix::new(sources, 3, (0..sources * 3).map(|_| rng.normal()).collect());
    let x1 = gen()?;
    let x2 = gen()?;
    let labeled: Vec<bool> = (0..sources).map(|i| i % 2 == 0).collect();
    let (_, g, _) = enc.batch_loss_and_grad(&x1, &x2, &labeled, kind, 0.5)?;
    let f = |p: &[f64]| {
        let e = MlpEncoder::from_params(enc.widths(), act, p, true).expect("same shape");
        e.batch_loss_and_grad(&x1, &x2, &labeled, kind, 0.5).expect("valid").0
    };
    let fd = finite_diff_grad(f, &enc.params(), 1e-6)?;
    Ok(max_rel_err(&g, &fd))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradients(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let seeds = opts.trials.unwrap_or(3) as u64;
    let sizes = [3usize, 6, 12];
    let mut per_kind = serde_json::Map::new();
    let mut worst_loss: f64 = 0.0;
    for kind in GRADIENT_KINDS {
        let mut w: f64 = 0.0;
        for s in 0..seeds {
            for &b in &sizes {
                let batch = random_batch(b, 4, opts.seed.wrapping_add(s), 0.4)?;
                w = w.max(embedding_fd_err(&batch, kind)?);
            }
        }
        worst_loss = worst_loss.max(w);
        per_kind.insert(kind.name(), json!(w));
    }
    let mut worst_chain: f64 = 0.0;
    for kind in [LossKind::Sscl, LossKind::SclPu, LossKind::Pucl, LossKind::Mcl { lambda: 0.3 }, LossKind::Dcl { lambda: 0.2 }] {
        for s in 0..seeds {
            for &b in &sizes {
                worst_chain = worst_chain.max(encoder_fd_err(b, opts.seed.wrapping_add(s), kind)?);
            }
        }
    }

    let mut identity_gap: f64 = 0.0;
    let mut gap = |a: &crate::contrastive::LossReport, b: &crate::contrastive::LossReport| {
        identity_gap = identity_gap.max((a.value - b.value).abs()).max(max_abs_diff(a.grad.as_slice(), b.grad.as_slice()));
    };
    let mut mass_ok = true;
    for s in 0..seeds {
        for &b in &sizes {
            let batch = random_batch(b, 4, opts.seed.wrapping_add(100 + s), 0.5)?;
            let none = batch.with_labeled(vec![false; batch.len()])?;
            let all = batch.with_labeled(vec![true; batch.len()])?;
            let ss = loss(LossKind::Sscl, &batch)?;
            gap(&loss(LossKind::Pucl, &none)?, &loss(LossKind::Sscl, &none)?);
            gap(&loss(LossKind::Mcl { lambda: 0.0 }, &batch)?, &ss);
            gap(&loss(LossKind::Mcl { lambda: 1.0 }, &batch)?, &loss(LossKind::SclPu, &batch)?);
            gap(&loss(LossKind::SclPu, &all)?, &loss(LossKind::Pucl, &all)?);
            let gb = gradient_bias_compare(&batch)?;
            mass_ok &= gb.pucl_same_class_mass <= gb.sscl_same_class_mass + 1e-15;
        }
    }
    per_kind.insert("encoder_chain".into(), json!(worst_chain));
    Ok(vec![
        Check::new("loss_gradients_fd_1e-5", worst_loss <= 1e-5, Value::Object(per_kind)),
        Check::new("encoder_chain_fd_1e-5", worst_chain <= 1e-5, json!({ "max_rel_err": worst_chain })),
        Check::new("identity_reductions_1e-12", identity_gap <= 1e-12, json!({ "max_abs_diff": identity_gap })),
        Check::new("pucl_repels_own_class_less", mass_ok, Value::Null),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("nope").is_err());
    }

    #[test]
    fn small_runs_pass() {
        let cases = [
            (Suite::Gradients, 1),
            (Suite::CentroidLemma, 2),
            (Suite::PuplBound, 100),
            (Suite::Generalization, 10),
        ];
        for (suite, trials) in cases {
            let r = run_suite(suite, &SuiteOptions { seed: 1, trials: Some(trials) }).unwrap();
            assert!(r.passed, "{}: {:?}", r.suite, r.failed());
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let o = SuiteOptions { seed: 7, trials: Some(50) };
        let a = run_suite(Suite::PuplBound, &o).unwrap();
        let b = run_suite(Suite::PuplBound, &o).unwrap();
        assert_eq!(a.checks, b.checks);
    }
}
