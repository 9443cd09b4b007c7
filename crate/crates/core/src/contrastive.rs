//! Contrastive losses over two-view batches: self-supervised, naive PU-supervised,
//! PU-aware, fully supervised, mixed and debiased variants, with analytic gradients.

use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix};
use serde::{Deserialize, Serialize};

/// Two-view batch. Row `i` and `partner[i]` are the two views of one source.
/// Similarity is cosine, so row scale does not affect values.
#[derive(Debug, Clone)]
pub struct MultiViewBatch {
    embeddings: Matrix,
    partner: Vec<usize>,
    labeled: Vec<bool>,
    full_labels: Option<Vec<bool>>,
    tau: f64,
}

impl MultiViewBatch {
    pub fn new(
        embeddings: Matrix,
        partner: Vec<usize>,
        labeled: Vec<bool>,
        full_labels: Option<Vec<bool>>,
        tau: f64,
    ) -> Result<Self> {
        let n = embeddings.rows();
        if n < 2 {
            return Err(Error::InvalidBatch("need at least two rows".into()));
        }
        if partner.len() != n || labeled.len() != n {
            return Err(Error::InvalidBatch("partner/labeled length differs from row count".into()));
        }
        if let Some(f) = &full_labels {
            if f.len() != n {
                return Err(Error::InvalidBatch("full label length differs from row count".into()));
            }
        }
        for i in 0..n {
            let a = partner[i];
            if a >= n || a == i || partner[a] != i {
                return Err(Error::InvalidBatch(format!("partner map is not an involution at row {i}")));
            }
            if labeled[i] != labeled[a] {
                return Err(Error::InvalidBatch(format!("views of row {i} disagree on the labeled flag")));
            }
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidHyper(format!("tau = {tau}")));
        }
        for i in 0..n {
            if norm(embeddings.row(i)) <= 1e-12 {
                return Err(Error::ZeroVector);
            }
        }
        Ok(Self { embeddings, partner, labeled, full_labels, tau })
    }

    /// Stacks `z1` over `z2`; row `i` of `z1` is partnered with row `i` of `z2`.
    pub fn from_views(z1: &Matrix, z2: &Matrix, labeled_src: &[bool], tau: f64) -> Result<Self> {
        Self::from_views_with_labels(z1, z2, labeled_src, None, tau)
    }

    pub fn from_views_with_labels(
        z1: &Matrix,
        z2: &Matrix,
        labeled_src: &[bool],
        full_src: Option<&[bool]>,
        tau: f64,
    ) -> Result<Self> {
        let b = z1.rows();
        if z2.rows() != b || labeled_src.len() != b {
            return Err(Error::InvalidBatch("view sizes differ".into()));
        }
        let partner = (0..2 * b).map(|i| if i < b { i + b } else { i - b }).collect();
        let labeled = labeled_src.iter().chain(labeled_src).copied().collect();
        let full = full_src.map(|f| f.iter().chain(f).copied().collect());
        Self::new(z1.vstack(z2)?, partner, labeled, full, tau)
    }

    /// Same structure, different embeddings.
    pub fn with_embeddings(&self, embeddings: Matrix) -> Result<Self> {
        if embeddings.rows() != self.embeddings.rows() {
            return Err(Error::DimMismatch("row count changed".into()));
        }
        Self::new(embeddings, self.partner.clone(), self.labeled.clone(), self.full_labels.clone(), self.tau)
    }

    pub fn with_labeled(&self, labeled: Vec<bool>) -> Result<Self> {
        Self::new(self.embeddings.clone(), self.partner.clone(), labeled, self.full_labels.clone(), self.tau)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn partner(&self) -> &[usize] {
        &self.partner
    }

    pub fn labeled(&self) -> &[bool] {
        &self.labeled
    }

    pub fn full_labels(&self) -> Option<&[bool]> {
        self.full_labels.as_deref()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss value, gradient with respect to the batch embeddings and per-anchor terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub grad: Matrix,
    pub per_anchor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Sscl,
    SclPu,
    Pucl,
    /// Needs ground-truth labels for every row; not usable for PU training.
    Scl,
    Mcl { lambda: f64 },
    Dcl { lambda: f64 },
}

impl LossKind {
    pub fn name(&self) -> String {
        match self {
            LossKind::Sscl => "sscl".into(),
            LossKind::SclPu => "scl_pu".into(),
            LossKind::Pucl => "pucl".into(),
            LossKind::Scl => "scl".into(),
            LossKind::Mcl { lambda } => format!("mcl({lambda})"),
            LossKind::Dcl { lambda } => format!("dcl({lambda})"),
        }
    }

    /// Parses `sscl`, `scl_pu`, `pucl`, `scl`, `mcl:0.5`, `dcl:0.1`.
    pub fn parse(s: &str) -> Result<LossKind> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let lambda = || -> Result<f64> {
            let a = arg.ok_or_else(|| Error::Parse(format!("{s}: missing lambda")))?;
            a.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")))
        };
        match head.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "sscl" => Ok(LossKind::Sscl),
            "scl_pu" | "sclpu" => Ok(LossKind::SclPu),
            "pucl" => Ok(LossKind::Pucl),
            "scl" => Ok(LossKind::Scl),
            "mcl" => Ok(LossKind::Mcl { lambda: lambda()? }),
            "dcl" => Ok(LossKind::Dcl { lambda: lambda()? }),
            other => Err(Error::Parse(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Temperature-scaled cosine similarity.
pub fn similarity(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= 1e-12 || nb <= 1e-12 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb) / tau)
}

/// Sum of `exp(sim(z_i, z_j))` over `j != i`.
pub fn partition(batch: &MultiViewBatch, i: usize) -> f64 {
    let s = Sims::new(batch);
    (0..batch.len()).filter(|&j| j != i).map(|j| s.get(i, j).exp()).sum()
}

/// Cosine similarities divided by tau, plus what is needed to chain gradients back.
struct Sims {
    n: usize,
    tau: f64,
    unit: Matrix,
    norms: Vec<f64>,
    s: Vec<f64>,
}

impl Sims {
    fn new(batch: &MultiViewBatch) -> Self {
        let z = &batch.embeddings;
        let n = z.rows();
        let norms: Vec<f64> = z.iter_rows().map(norm).collect();
        let mut unit = z.clone();
        for i in 0..n {
            let ni = norms[i];
            unit.row_mut(i).iter_mut().for_each(|v| *v /= ni);
        }
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = dot(unit.row(i), unit.row(j)) / batch.tau;
            }
        }
        Self { n, tau: batch.tau, unit, norms, s }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }

    /// Max over `j != i`.
    fn row_max(&self, i: usize) -> f64 {
        (0..self.n).filter(|&j| j != i).map(|j| self.get(i, j)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Turns `dL/dS` into `dL/dZ` through the cosine normalization.
    fn chain(&self, ds: &[f64]) -> Matrix {
        let n = self.n;
        let k = self.unit.cols();
        let mut gu = Matrix::zeros(n, k);
        for i in 0..n {
            for j in 0..n {
                let c = ds[i * n + j];
                if c == 0.0 {
                    continue;
                }
                let c = c / self.tau;
                for t in 0..k {
                    let vj = self.unit.get(j, t);
                    let vi = self.unit.get(i, t);
                    let gi = gu.get(i, t) + c * vj;
                    gu.set(i, t, gi);
                    let gj = gu.get(j, t) + c * vi;
                    gu.set(j, t, gj);
                }
            }
        }
        let mut g = Matrix::zeros(n, k);
        for i in 0..n {
            let u = self.unit.row(i);
            let gi = gu.row(i);
            let radial = dot(u, gi);
            for t in 0..k {
                g.set(i, t, (gi[t] - u[t] * radial) / self.norms[i]);
            }
        }
        g
    }
}

/// Cross-entropy between a target distribution over `j != i` and the softmax of similarities.
fn target_loss(batch: &MultiViewBatch, targets: &[Vec<(usize, f64)>]) -> LossReport {
    let sims = Sims::new(batch);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let mut ds = vec![0.0; n * n];
    let mut per_anchor = Vec::with_capacity(n);
    for i in 0..n {
        let m = sims.row_max(i);
        let mut z = 0.0;
        for j in 0..n {
            if j != i {
                z += (sims.get(i, j) - m).exp();
            }
        }
        let lse = m + z.ln();
        let mut attract = 0.0;
        for &(j, w) in &targets[i] {
            attract += w * sims.get(i, j);
            ds[i * n + j] -= w * inv_n;
        }
        for j in 0..n {
            if j != i {
                ds[i * n + j] += (sims.get(i, j) - m).exp() / z * inv_n;
            }
        }
        per_anchor.push(lse - attract);
    }
    let value = per_anchor.iter().sum::<f64>() * inv_n;
    LossReport { value, grad: sims.chain(&ds), per_anchor }
}

fn uniform_over(idx: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
    let v: Vec<usize> = idx.collect();
    let w = 1.0 / v.len() as f64;
    v.into_iter().map(|j| (j, w)).collect()
}

fn partner_target(batch: &MultiViewBatch, i: usize) -> Vec<(usize, f64)> {
    vec![(batch.partner[i], 1.0)]
}

/// Labeled rows other than `i`, or `None` when there are none.
fn labeled_others(batch: &MultiViewBatch, i: usize) -> Option<Vec<(usize, f64)>> {
    let has = (0..batch.len()).any(|j| j != i && batch.labeled[j]);
    has.then(|| uniform_over((0..batch.len()).filter(|&j| j != i && batch.labeled[j])))
}

/// Self-supervised loss: each anchor attracts only its partner view.
pub fn sscl_loss(batch: &MultiViewBatch) -> LossReport {
    let t: Vec<_> = (0..batch.len()).map(|i| partner_target(batch, i)).collect();
    target_loss(batch, &t)
}

/// Naive supervised loss that treats unlabeled rows as one class.
pub fn scl_pu_loss(batch: &MultiViewBatch) -> LossReport {
    let n = batch.len();
    let t: Vec<_> = (0..n)
        .map(|i| {
            let lab = if batch.labeled[i] { labeled_others(batch, i) } else { None };
            lab.unwrap_or_else(|| uniform_over((0..n).filter(|&j| j != i && !batch.labeled[j])))
        })
        .collect();
    target_loss(batch, &t)
}

/// PU-aware loss: labeled anchors attract all other labeled rows, unlabeled anchors only their partner.
pub fn pucl_loss(batch: &MultiViewBatch) -> LossReport {
    let t: Vec<_> = (0..batch.len())
        .map(|i| {
            let lab = if batch.labeled[i] { labeled_others(batch, i) } else { None };
            lab.unwrap_or_else(|| partner_target(batch, i))
        })
        .collect();
    target_loss(batch, &t)
}

/// Fully supervised loss: each anchor attracts every other row of its true class.
pub fn scl_loss(batch: &MultiViewBatch) -> Result<LossReport> {
    let y = batch.full_labels.as_ref().ok_or(Error::MissingLabels)?;
    let n = batch.len();
    let t: Vec<_> = (0..n).map(|i| uniform_over((0..n).filter(|&j| j != i && y[j] == y[i]))).collect();
    Ok(target_loss(batch, &t))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda));
    }
    Ok(())
}

fn combine(a: &LossReport, wa: f64, b: &LossReport, wb: f64) -> LossReport {
    let grad_data = a.grad.as_slice().iter().zip(b.grad.as_slice()).map(|(x, y)| wa * x + wb * y).collect();
    LossReport {
        value: wa * a.value + wb * b.value,
        grad: Matrix::new(a.grad.rows(), a.grad.cols(), grad_data).expect("finite combination"),
        per_anchor: a.per_anchor.iter().zip(&b.per_anchor).map(|(x, y)| wa * x + wb * y).collect(),
    }
}

/// `lambda * sCL-PU + (1 - lambda) * ssCL`.
pub fn mcl_loss(batch: &MultiViewBatch, lambda: f64) -> Result<LossReport> {
    check_lambda(lambda)?;
    Ok(combine(&scl_pu_loss(batch), lambda, &sscl_loss(batch), 1.0 - lambda))
}

/// Self-supervised loss with a debiased negative sum. For anchor `i` with partner `a`, over
/// the `M = n - 2` candidate negatives `J`:
/// `R_u = sum_J e^{s_ij}`, `R_p = M * mean_{J ∩ labeled} e^{s_ij}` (zero if no labeled row
/// is in `J`), `N = max((R_u - lambda R_p) / (1 - lambda), M e^{-1/tau})`.
pub fn dcl_loss(batch: &MultiViewBatch, lambda: f64) -> Result<LossReport> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda));
    }
    let sims = Sims::new(batch);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let m_neg = (n - 2) as f64;
    let mut ds = vec![0.0; n * n];
    let mut per_anchor = Vec::with_capacity(n);
    for i in 0..n {
        let a = batch.partner[i];
        let m = sims.row_max(i);
        let q: Vec<usize> = (0..n).filter(|&j| j != i && j != a && batch.labeled[j]).collect();
        let pw = if q.is_empty() { 0.0 } else { lambda * m_neg / q.len() as f64 };
        let mut ru = 0.0;
        let mut rp = 0.0;
        for j in 0..n {
            if j == i || j == a {
                continue;
            }
            let e = (sims.get(i, j) - m).exp();
            ru += e;
            if batch.labeled[j] {
                rp += e;
            }
        }
        let raw = (ru - pw * rp) / (1.0 - lambda);
        let floor = m_neg * (-1.0 / batch.tau - m).exp();
        let clipped = raw < floor;
        let neg = if clipped { floor } else { raw };
        let ea = (sims.get(i, a) - m).exp();
        let d = ea + neg;
        per_anchor.push(-(sims.get(i, a) - m) + d.ln());
        ds[i * n + a] += (ea / d - 1.0) * inv_n;
        if !clipped {
            for j in 0..n {
                if j == i || j == a {
                    continue;
                }
                let e = (sims.get(i, j) - m).exp();
                let c = if batch.labeled[j] { 1.0 - pw } else { 1.0 };
                ds[i * n + j] += e * c / ((1.0 - lambda) * d) * inv_n;
            }
        }
    }
    let value = per_anchor.iter().sum::<f64>() * inv_n;
    Ok(LossReport { value, grad: sims.chain(&ds), per_anchor })
}

pub fn loss(kind: LossKind, batch: &MultiViewBatch) -> Result<LossReport> {
    match kind {
        LossKind::Sscl => Ok(sscl_loss(batch)),
        LossKind::SclPu => Ok(scl_pu_loss(batch)),
        LossKind::Pucl => Ok(pucl_loss(batch)),
        LossKind::Scl => scl_loss(batch),
        LossKind::Mcl { lambda } => mcl_loss(batch, lambda),
        LossKind::Dcl { lambda } => dcl_loss(batch, lambda),
    }
}

/// Decomposition of the asymptotic self-supervised loss at unit temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignUniformSplit {
    /// Mean squared distance between embeddings of two augmentations of one sample.
    pub l_i: f64,
    /// Mean of `log(e^{z.z_a} + e^{z.z'})` with `z'` from an independent sample.
    pub l_ii: f64,
    /// `l_i / 2 + l_ii - 1`.
    pub reconstruction: f64,
}

/// Computes the split over finite augmentation sets, one matrix of points per sample.
pub fn alignment_uniformity_split(encoder: &MlpEncoder, aug_sets: &[Matrix]) -> Result<AlignUniformSplit> {
    let emb: Vec<Matrix> = aug_sets.iter().map(|a| encoder.encode(a)).collect::<Result<_>>()?;
    alignment_uniformity_split_embedded(&emb)
}

/// Same as [`alignment_uniformity_split`] on already-embedded unit rows.
pub fn alignment_uniformity_split_embedded(emb: &[Matrix]) -> Result<AlignUniformSplit> {
    if emb.is_empty() || emb.iter().any(|e| e.rows() == 0) {
        return Err(Error::EmptyAugmentationSet);
    }
    let n = emb.len() as f64;
    let mut l_i = 0.0;
    for e in emb {
        let m = e.rows();
        let mut s = 0.0;
        for a in 0..m {
            for b in 0..m {
                s += crate::numerics::sq_dist(e.row(a), e.row(b));
            }
        }
        l_i += s / (m * m) as f64;
    }
    l_i /= n;
    let mut l_ii = 0.0;
    for e in emb {
        let m = e.rows();
        let mut sx = 0.0;
        for a in 0..m {
            for b in 0..m {
                let pos = dot(e.row(a), e.row(b));
                let mut sy = 0.0;
                for f in emb {
                    let mut sc = 0.0;
                    for c in 0..f.rows() {
                        let neg = dot(e.row(a), f.row(c));
                        let hi = pos.max(neg);
                        sc += hi + ((pos - hi).exp() + (neg - hi).exp()).ln();
                    }
                    sy += sc / f.rows() as f64;
                }
                sx += sy / n;
            }
        }
        l_ii += sx / (m * m) as f64;
    }
    l_ii /= n;
    Ok(AlignUniformSplit { l_i, l_ii, reconstruction: 0.5 * l_i + l_ii - 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, normalize_rows, RngStream};
    use proptest::prelude::*;

    fn random_batch(b: usize, k: usize, seed: u64, labeled_frac: f64) -> MultiViewBatch {
        let mut rng = RngStream::new(seed, 9);
        let mut gen = |rows| {
            let data = (0..rows * k).map(|_| rng.normal()).collect();
            normalize_rows(&Matrix::new(rows, k, data).unwrap()).unwrap()
        };
        let z1 = gen(b);
        let z2 = gen(b);
        let mut rng = RngStream::new(seed, 10);
        let labeled: Vec<bool> = (0..b).map(|_| rng.uniform() < labeled_frac).collect();
        let full: Vec<bool> = labeled.iter().map(|&l| l || rng.uniform() < 0.4).collect();
        MultiViewBatch::from_views_with_labels(&z1, &z2, &labeled, Some(&full), 0.5).unwrap()
    }

    /// Direct transcription of each loss definition, written without the shared engine.
    fn oracle_value(kind: &str, batch: &MultiViewBatch) -> f64 {
        let z = normalize_rows(batch.embeddings()).unwrap();
        let n = z.rows();
        let tau = batch.tau();
        let s = |i: usize, j: usize| dot(z.row(i), z.row(j)) / tau;
        let log_z = |i: usize| (0..n).filter(|&j| j != i).map(|j| s(i, j).exp()).sum::<f64>().ln();
        let lab = batch.labeled();
        let mut total = 0.0;
        for i in 0..n {
            let a = batch.partner()[i];
            let set: Vec<usize> = match kind {
                "sscl" => vec![a],
                "pucl" if lab[i] => (0..n).filter(|&j| j != i && lab[j]).collect(),
                "pucl" => vec![a],
                "scl_pu" => (0..n).filter(|&j| j != i && lab[j] == lab[i]).collect(),
                "scl" => {
                    let y = batch.full_labels().unwrap();
                    (0..n).filter(|&j| j != i && y[j] == y[i]).collect()
                }
                _ => unreachable!(),
            };
            let att: f64 = set.iter().map(|&j| s(i, j)).sum::<f64>() / set.len() as f64;
            total += log_z(i) - att;
        }
        total / n as f64
    }

    fn fd_check(batch: &MultiViewBatch, kind: LossKind) {
        let rep = loss(kind, batch).unwrap();
        let rows = batch.len();
        let cols = batch.embeddings().cols();
        let f = |x: &[f64]| {
            let b = batch.with_embeddings(Matrix::new(rows, cols, x.to_vec()).unwrap()).unwrap();
            loss(kind, &b).unwrap().value
        };
        let g = finite_diff_grad(f, batch.embeddings().as_slice(), 1e-5).unwrap();
        for (a, b) in rep.grad.as_slice().iter().zip(&g) {
            let err = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            assert!(err < 1e-5, "{kind:?}: analytic {a} vs fd {b}");
        }
    }

    #[test]
    fn values_match_transcription() {
        for seed in 0..5 {
            let b = random_batch(6, 4, seed, 0.4);
            assert!((sscl_loss(&b).value - oracle_value("sscl", &b)).abs() < 1e-12);
            assert!((pucl_loss(&b).value - oracle_value("pucl", &b)).abs() < 1e-12);
            assert!((scl_pu_loss(&b).value - oracle_value("scl_pu", &b)).abs() < 1e-12);
            assert!((scl_loss(&b).unwrap().value - oracle_value("scl", &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let b = random_batch(5, 3, seed, 0.5);
            for kind in [
                LossKind::Sscl,
                LossKind::SclPu,
                LossKind::Pucl,
                LossKind::Scl,
                LossKind::Mcl { lambda: 0.3 },
                LossKind::Dcl { lambda: 0.2 },
            ] {
                fd_check(&b, kind);
            }
        }
    }

    #[test]
    fn identical_pair_with_orthogonal_negatives() {
        let z1 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let z2 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = MultiViewBatch::from_views(&z1, &z2, &[false], 1.0).unwrap();
        let r = sscl_loss(&b);
        assert!(r.value.abs() < 1e-15);
        // with two orthogonal negatives the anchor term is log(e + 2) - 1
        let z1 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let z2 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = MultiViewBatch::from_views(&z1, &z2, &[false, false], 1.0).unwrap();
        let r = sscl_loss(&b);
        let want = (1f64.exp() + 2.0).ln() - 1.0;
        for v in r.per_anchor {
            assert!((v - want).abs() < 1e-14);
        }
    }

    #[test]
    fn missing_labels_and_bad_lambda() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = MultiViewBatch::from_views(&z, &z, &[true], 0.5).unwrap();
        assert!(matches!(scl_loss(&b), Err(Error::MissingLabels)));
        assert!(matches!(mcl_loss(&b, 1.5), Err(Error::InvalidLambda(_))));
        assert!(matches!(dcl_loss(&b, 1.0), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(similarity(&[0.0, 0.0], &[1.0, 0.0], 1.0), Err(Error::ZeroVector)));
        let z1 = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let z2 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(MultiViewBatch::from_views(&z1, &z2, &[false], 0.5), Err(Error::ZeroVector)));
    }

    #[test]
    fn dcl_without_labels_rescales_negatives() {
        let b = random_batch(5, 3, 4, 0.0);
        let lambda = 0.3;
        let d = dcl_loss(&b, lambda).unwrap();
        let z = b.embeddings();
        let n = b.len();
        for i in 0..n {
            let a = b.partner()[i];
            let s = |j: usize| similarity(z.row(i), z.row(j), b.tau()).unwrap();
            let neg: f64 = (0..n).filter(|&j| j != i && j != a).map(|j| s(j).exp()).sum::<f64>() / (1.0 - lambda);
            let want = -s(a) + (s(a).exp() + neg).ln();
            assert!((d.per_anchor[i] - want).abs() < 1e-12);
        }
        let d0 = dcl_loss(&b, 0.0).unwrap();
        assert!((d0.value - sscl_loss(&b).value).abs() < 1e-12);
    }

    #[test]
    fn split_collapsed_embeddings() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let s = alignment_uniformity_split_embedded(&[e.clone(), e]).unwrap();
        assert_eq!(s.l_i, 0.0);
        assert!((s.l_ii - (2f64 * 1f64.exp()).ln()).abs() < 1e-14);
        assert!(matches!(alignment_uniformity_split_embedded(&[]), Err(Error::EmptyAugmentationSet)));
    }

    #[test]
    fn split_reconstructs_enumerated_expectation() {
        let mut rng = RngStream::new(5, 0);
        let sets: Vec<Matrix> = (0..4)
            .map(|_| {
                let data = (0..3 * 3).map(|_| rng.normal()).collect();
                normalize_rows(&Matrix::new(3, 3, data).unwrap()).unwrap()
            })
            .collect();
        let s = alignment_uniformity_split_embedded(&sets).unwrap();
        // E over x, (z, z_a) from T(x), x', z' from T(x') of -z.z_a + log(e^{z.z_a} + e^{z.z'})
        let mut terms = Vec::new();
        for e in &sets {
            for a in 0..3 {
                for b in 0..3 {
                    for f in &sets {
                        for c in 0..3 {
                            let p = dot(e.row(a), e.row(b));
                            let q = dot(e.row(a), f.row(c));
                            terms.push(-p + (p.exp() + q.exp()).ln());
                        }
                    }
                }
            }
        }
        let want = terms.iter().sum::<f64>() / terms.len() as f64;
        assert!((s.reconstruction - want).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn anchor_terms_are_bounded_below(seed in any::<u64>(), b in 1usize..6, frac in 0.0f64..1.0) {
            let batch = random_batch(b, 3, seed, frac);
            let floor = ((batch.len() - 1) as f64).ln() - 2.0 / batch.tau();
            for r in [sscl_loss(&batch), pucl_loss(&batch), scl_pu_loss(&batch)] {
                for v in r.per_anchor {
                    prop_assert!(v.is_finite() && v >= floor - 1e-12);
                }
            }
        }

        #[test]
        fn anchor_permutation_equivariance(seed in any::<u64>(), b in 2usize..6) {
            let batch = random_batch(b, 3, seed, 0.5);
            let n = batch.len();
            let mut rng = RngStream::new(seed, 77);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let mut inv = vec![0; n];
            for (new, &old) in perm.iter().enumerate() {
                inv[old] = new;
            }
            let z = batch.embeddings().select_rows(&perm);
            let partner = perm.iter().map(|&old| inv[batch.partner()[old]]).collect();
            let labeled = perm.iter().map(|&old| batch.labeled()[old]).collect();
            let pb = MultiViewBatch::new(z, partner, labeled, None, batch.tau()).unwrap();
            for kind in [LossKind::Sscl, LossKind::Pucl, LossKind::SclPu, LossKind::Dcl { lambda: 0.2 }] {
                let a = loss(kind, &batch).unwrap();
                let p = loss(kind, &pb).unwrap();
                prop_assert!((a.value - p.value).abs() < 1e-12);
                for (new, &old) in perm.iter().enumerate() {
                    prop_assert!((a.per_anchor[old] - p.per_anchor[new]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn pucl_without_labels_is_sscl(seed in any::<u64>(), b in 1usize..6) {
            let batch = random_batch(b, 3, seed, 0.0);
            let a = sscl_loss(&batch);
            let p = pucl_loss(&batch);
            prop_assert_eq!(a.value, p.value);
            prop_assert_eq!(a.grad, p.grad);
        }

        #[test]
        fn scale_invariance(seed in any::<u64>(), scale in 0.1f64..10.0) {
            let batch = random_batch(3, 3, seed, 0.5);
            let scaled: Vec<f64> = batch.embeddings().as_slice().iter().map(|v| v * scale).collect();
            let sb = batch.with_embeddings(Matrix::new(6, 3, scaled).unwrap()).unwrap();
            prop_assert!((pucl_loss(&batch).value - pucl_loss(&sb).value).abs() < 1e-12);
        }
    }
}
