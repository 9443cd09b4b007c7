//! Linear heads on embeddings: cross-entropy on pseudo-labels, unbiased and non-negative
//! PU risks, nearest-centroid classification and metrics.

use crate::error::{Error, Result};
use crate::numerics::{dot, sq_dist, Matrix};
use serde::{Deserialize, Serialize};

/// Class priors commonly assumed for the standard binarized image benchmarks.
pub const ORACLE_PRIORS: [(&str, f64); 4] =
    [("cifar-i", 0.4), ("cifar-ii", 0.6), ("fmnist-i", 0.3), ("fmnist-ii", 0.7)];

pub fn oracle_prior(name: &str) -> Option<f64> {
    let key = name.to_ascii_lowercase();
    ORACLE_PRIORS.iter().find(|(n, _)| *n == key).map(|(_, p)| *p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearHead {
    pub fn zeros(k: usize) -> Self {
        Self { w: vec![0.0; k], b: 0.0 }
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        dot(&self.w, z) + self.b
    }

    /// 1 when the score is non-negative.
    pub fn predict(&self, z: &Matrix) -> Result<Vec<u8>> {
        self.check(z)?;
        Ok(z.iter_rows().map(|r| (self.score(r) >= 0.0) as u8).collect())
    }

    fn check(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.w.len() {
            return Err(Error::DimMismatch(format!("{} columns for a head of width {}", z.cols(), self.w.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { lr: 0.5, epochs: 500, l2: 1e-4, seed: 0 }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss of `head` on rows of `z` against a fixed target sign, with its
/// gradient `(dw, db)`.
fn logistic_mean(head: &LinearHead, z: &Matrix, positive: bool) -> (f64, Vec<f64>, f64) {
    let n = z.rows() as f64;
    let sign = if positive { 1.0 } else { -1.0 };
    let mut loss = 0.0;
    let mut gw = vec![0.0; head.w.len()];
    let mut gb = 0.0;
    for r in z.iter_rows() {
        let m = sign * head.score(r);
        loss += softplus(-m);
        let d = -sign * sigmoid(-m);
        for (g, v) in gw.iter_mut().zip(r) {
            *g += d * v;
        }
        gb += d;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

fn check_cfg(cfg: &HeadConfig) -> Result<()> {
    if !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::InvalidHyper(format!("lr = {}, l2 = {}", cfg.lr, cfg.l2)));
    }
    Ok(())
}

/// Full-batch gradient descent on mean logistic loss plus `l2 / 2 |w|^2`, from a zero head.
/// Returns the head and the objective before each epoch and after the last.
pub fn train_ce(z: &Matrix, labels: &[u8], cfg: &HeadConfig) -> Result<(LinearHead, Vec<f64>)> {
    check_cfg(cfg)?;
    if labels.len() != z.rows() {
        return Err(Error::LengthMismatch(labels.len(), z.rows()));
    }
    let pos: Vec<usize> = (0..z.rows()).filter(|&i| labels[i] != 0).collect();
    let neg: Vec<usize> = (0..z.rows()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let zp = z.select_rows(&pos);
    let zn = z.select_rows(&neg);
    let (fp, fn_) = (pos.len() as f64 / z.rows() as f64, neg.len() as f64 / z.rows() as f64);
    let mut head = LinearHead::zeros(z.cols());
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let objective = |h: &LinearHead| -> (f64, Vec<f64>, f64) {
        let (lp, gwp, gbp) = logistic_mean(h, &zp, true);
        let (ln, gwn, gbn) = logistic_mean(h, &zn, false);
        let reg = 0.5 * cfg.l2 * dot(&h.w, &h.w);
        let gw = gwp.iter().zip(&gwn).zip(&h.w).map(|((a, b), w)| fp * a + fn_ * b + cfg.l2 * w).collect();
        (fp * lp + fn_ * ln + reg, gw, fp * gbp + fn_ * gbn)
    };
    for _ in 0..cfg.epochs {
        let (l, gw, gb) = objective(&head);
        history.push(l);
        for (w, g) in head.w.iter_mut().zip(&gw) {
            *w -= cfg.lr * g;
        }
        head.b -= cfg.lr * gb;
    }
    history.push(objective(&head).0);
    Ok((head, history))
}

/// Empirical risk terms with the logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    /// Mean loss of labeled positives against the positive label.
    pub r_p_plus: f64,
    /// Mean loss of labeled positives against the negative label.
    pub r_p_minus: f64,
    /// Mean loss of unlabeled rows against the negative label.
    pub r_u_minus: f64,
    /// `r_u_minus - pi * r_p_minus`.
    pub negative_part: f64,
    pub risk: f64,
    /// True when the non-negative estimator replaced a negative `negative_part` by zero.
    pub clipped: bool,
}

fn risk_terms(head: &LinearHead, z_p: &Matrix, z_u: &Matrix, pi: f64) -> Result<(f64, f64, f64)> {
    if z_p.rows() == 0 || z_u.rows() == 0 {
        return Err(Error::EmptySet);
    }
    head.check(z_p)?;
    head.check(z_u)?;
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::InvalidArgs(format!("pi = {pi}")));
    }
    Ok((logistic_mean(head, z_p, true).0, logistic_mean(head, z_p, false).0, logistic_mean(head, z_u, false).0))
}

/// Unbiased PU risk `pi R_p+ + R_u- - pi R_p-`.
pub fn risk_upu(head: &LinearHead, z_p: &Matrix, z_u: &Matrix, pi: f64) -> Result<RiskBreakdown> {
    let (pp, pm, um) = risk_terms(head, z_p, z_u, pi)?;
    let neg = um - pi * pm;
    Ok(RiskBreakdown { r_p_plus: pp, r_p_minus: pm, r_u_minus: um, negative_part: neg, risk: pi * pp + neg, clipped: false })
}

/// Non-negative PU risk `pi R_p+ + max(0, R_u- - pi R_p-)`.
pub fn risk_nnpu(head: &LinearHead, z_p: &Matrix, z_u: &Matrix, pi: f64) -> Result<RiskBreakdown> {
    let (pp, pm, um) = risk_terms(head, z_p, z_u, pi)?;
    let neg = um - pi * pm;
    let clipped = neg < 0.0;
    Ok(RiskBreakdown {
        r_p_plus: pp,
        r_p_minus: pm,
        r_u_minus: um,
        negative_part: neg,
        risk: pi * pp + neg.max(0.0),
        clipped,
    })
}

/// Supervised risk `pi R_p+ + (1 - pi) R_n-` on fully labeled rows.
pub fn risk_pn(head: &LinearHead, z_pos: &Matrix, z_neg: &Matrix, pi: f64) -> Result<f64> {
    if z_pos.rows() == 0 || z_neg.rows() == 0 {
        return Err(Error::EmptySet);
    }
    Ok(pi * logistic_mean(head, z_pos, true).0 + (1.0 - pi) * logistic_mean(head, z_neg, false).0)
}

/// Full-batch gradient descent on the non-negative PU risk plus `l2 / 2 |w|^2`. When the
/// negative part is clipped it contributes no gradient.
pub fn train_nnpu(z_p: &Matrix, z_u: &Matrix, pi: f64, cfg: &HeadConfig) -> Result<(LinearHead, Vec<f64>)> {
    check_cfg(cfg)?;
    let mut head = LinearHead::zeros(z_p.cols());
    risk_terms(&head, z_p, z_u, pi)?;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (pp, gwpp, gbpp) = logistic_mean(&head, z_p, true);
        let (pm, gwpm, gbpm) = logistic_mean(&head, z_p, false);
        let (um, gwum, gbum) = logistic_mean(&head, z_u, false);
        let neg = um - pi * pm;
        history.push(pi * pp + neg.max(0.0) + 0.5 * cfg.l2 * dot(&head.w, &head.w));
        let live = if neg >= 0.0 { 1.0 } else { 0.0 };
        for k in 0..head.w.len() {
            let g = pi * gwpp[k] + live * (gwum[k] - pi * gwpm[k]) + cfg.l2 * head.w[k];
            head.w[k] -= cfg.lr * g;
        }
        head.b -= cfg.lr * (pi * gbpp + live * (gbum - pi * gbpm));
    }
    history.push(risk_nnpu(&head, z_p, z_u, pi)?.risk + 0.5 * cfg.l2 * dot(&head.w, &head.w));
    Ok((head, history))
}

/// 1 when a row is at least as close to `mu_p` as to `mu_n`.
pub fn nearest_centroid_classify(z: &Matrix, mu_p: &[f64], mu_n: &[f64]) -> Result<Vec<u8>> {
    if mu_p.len() != z.cols() || mu_n.len() != z.cols() {
        return Err(Error::DimMismatch("centroid length".into()));
    }
    Ok(z.iter_rows().map(|r| (sq_dist(r, mu_p) <= sq_dist(r, mu_n)) as u8).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Binary metrics with the positive class as 1. Undefined ratios are reported as 0.
pub fn evaluate(pred: &[u8], truth: &[bool]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptySet);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Metrics { accuracy: ratio(tp + tn, pred.len()), precision, recall, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut r = RngStream::new(seed, 0);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 1.5 } else { -1.5 };
            rows.push(vec![c + 0.5 * r.normal(), 0.5 * r.normal()]);
            y.push(pos as u8);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn priors_match_presets() {
        assert_eq!(oracle_prior("CIFAR-I"), Some(0.4));
        assert_eq!(oracle_prior("cifar-ii"), Some(0.6));
        assert_eq!(oracle_prior("fmnist-i"), Some(0.3));
        assert_eq!(oracle_prior("fmnist-ii"), Some(0.7));
        assert_eq!(oracle_prior("stl"), None);
    }

    #[test]
    fn ce_learns_separable_blobs() {
        let (z, y) = blobs(200, 1);
        let (h, hist) = train_ce(&z, &y, &HeadConfig::default()).unwrap();
        let m = evaluate(&h.predict(&z).unwrap(), &y.iter().map(|&v| v == 1).collect::<Vec<_>>()).unwrap();
        assert!(m.accuracy > 0.98);
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn ce_single_class() {
        let (z, _) = blobs(10, 1);
        assert!(matches!(train_ce(&z, &[1; 10], &HeadConfig::default()), Err(Error::SingleClass)));
    }

    #[test]
    fn zero_head_risks() {
        let (z, _) = blobs(10, 1);
        let h = LinearHead::zeros(2);
        let r = risk_upu(&h, &z, &z, 0.5).unwrap();
        let l2 = std::f64::consts::LN_2;
        assert!((r.r_p_plus - l2).abs() < 1e-15);
        assert!((r.risk - (0.5 * l2 + l2 - 0.5 * l2)).abs() < 1e-15);
        assert!(matches!(risk_upu(&h, &Matrix::zeros(0, 2), &z, 0.5), Err(Error::EmptySet)));
    }

    #[test]
    fn nnpu_recovers_classes() {
        let (z, y) = blobs(400, 2);
        let p_idx: Vec<usize> = (0..400).filter(|&i| y[i] == 1).take(60).collect();
        let zp = z.select_rows(&p_idx);
        let (h, _) = train_nnpu(&zp, &z, 0.5, &HeadConfig::default()).unwrap();
        let m = evaluate(&h.predict(&z).unwrap(), &y.iter().map(|&v| v == 1).collect::<Vec<_>>()).unwrap();
        assert!(m.accuracy > 0.95, "{m:?}");
    }

    #[test]
    fn metrics_values() {
        let m = evaluate(&[1, 1, 0, 0], &[true, false, true, false]).unwrap();
        assert_eq!(m, Metrics { accuracy: 0.5, precision: 0.5, recall: 0.5, f1: 0.5 });
        assert!(matches!(evaluate(&[1], &[true, false]), Err(Error::LengthMismatch(1, 2))));
    }

    proptest! {
        #[test]
        fn nearest_centroid_is_affine(seed in any::<u64>()) {
            let mut r = RngStream::new(seed, 1);
            let k = 4;
            let mp: Vec<f64> = (0..k).map(|_| r.normal()).collect();
            let mn: Vec<f64> = (0..k).map(|_| r.normal()).collect();
            let z = Matrix::new(50, k, (0..50 * k).map(|_| r.normal()).collect()).unwrap();
            let a = nearest_centroid_classify(&z, &mp, &mn).unwrap();
            let w: Vec<f64> = mp.iter().zip(&mn).map(|(p, n)| p - n).collect();
            let b = 0.5 * (dot(&mn, &mn) - dot(&mp, &mp));
            let head = LinearHead { w, b };
            prop_assert_eq!(a, head.predict(&z).unwrap());
        }

        #[test]
        fn nnpu_bounds(seed in any::<u64>(), pi in 0.05f64..0.95) {
            let (z, _) = blobs(30, seed);
            let mut r = RngStream::new(seed, 2);
            let h = LinearHead { w: vec![3.0 * r.normal(), 3.0 * r.normal()], b: r.normal() };
            let zp = z.select_rows(&[0, 2, 4, 6]);
            let u = risk_upu(&h, &zp, &z, pi).unwrap();
            let nn = risk_nnpu(&h, &zp, &z, pi).unwrap();
            prop_assert!(nn.risk >= u.risk);
            prop_assert!(nn.risk >= pi * nn.r_p_plus);
            if !nn.clipped {
                prop_assert_eq!(nn.risk, u.risk);
            }
        }

        #[test]
        fn ce_is_order_invariant(seed in 0u64..50) {
            let (z, y) = blobs(40, seed);
            let mut perm: Vec<usize> = (0..40).collect();
            RngStream::new(seed, 3).shuffle(&mut perm);
            let zp = z.select_rows(&perm);
            let yp: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
            let cfg = HeadConfig { epochs: 100, ..Default::default() };
            let (a, _) = train_ce(&z, &y, &cfg).unwrap();
            let (b, _) = train_ce(&zp, &yp, &cfg).unwrap();
            for (x, y) in a.w.iter().zip(&b.w) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.b - b.b).abs() < 1e-12);
        }
    }
}
