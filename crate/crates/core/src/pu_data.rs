//! Synthetic Gaussian mixtures and positive-unlabeled sampling.

use crate::error::{Error, Result};
use crate::numerics::{fmt_f64, parse_f64, Matrix, RngStream};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Isotropic Gaussian mixture. Each class is an equal-weight mixture of its means;
/// `mean_pos`/`mean_neg` are always components, `extra_*_means` add more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub d: usize,
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
    /// Per-coordinate standard deviation. Zero places every row exactly on its mean.
    pub sigma: f64,
    pub n: usize,
    pub pi_p: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_pos_means: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_neg_means: Vec<Vec<f64>>,
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidSpec("d must be at least 1".into()));
        }
        let all = std::iter::once(&self.mean_pos)
            .chain(std::iter::once(&self.mean_neg))
            .chain(&self.extra_pos_means)
            .chain(&self.extra_neg_means);
        for m in all {
            if m.len() != self.d {
                return Err(Error::InvalidSpec(format!("mean of length {} for d = {}", m.len(), self.d)));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec("non-finite mean".into()));
            }
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidSpec(format!("sigma = {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.pi_p) {
            return Err(Error::InvalidSpec(format!("pi_p = {}", self.pi_p)));
        }
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        Ok(())
    }

    fn pos_means(&self) -> Vec<&Vec<f64>> {
        std::iter::once(&self.mean_pos).chain(&self.extra_pos_means).collect()
    }

    fn neg_means(&self) -> Vec<&Vec<f64>> {
        std::iter::once(&self.mean_neg).chain(&self.extra_neg_means).collect()
    }
}

/// Fully labeled dataset. `truth[i]` is true for the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    pub features: Matrix,
    pub truth: Vec<bool>,
    pub pi_p: f64,
}

impl SupervisedDataset {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.truth[i]).collect()
    }

    /// Fraction of positive rows.
    pub fn empirical_prior(&self) -> f64 {
        self.truth.iter().filter(|&&t| t).count() as f64 / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observed {
    P,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuSetting {
    CaseControl,
    SingleDataset,
}

/// Positive-unlabeled dataset. Rows flagged `P` are labeled positives.
#[derive(Debug, Clone, PartialEq)]
pub struct PuDataset {
    pub features: Matrix,
    pub observed: Vec<Observed>,
    /// Hidden ground truth, only for evaluation.
    pub truth: Option<Vec<bool>>,
    pub pi_p: f64,
    pub setting: PuSetting,
}

/// What training code is allowed to see.
#[derive(Debug, Clone, Copy)]
pub struct PuView<'a> {
    pub features: &'a Matrix,
    pub observed: &'a [Observed],
}

impl PuDataset {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn n_labeled(&self) -> usize {
        self.observed.iter().filter(|&&o| o == Observed::P).count()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n() - self.n_labeled()
    }

    /// Ratio of labeled to unlabeled rows.
    pub fn gamma(&self) -> f64 {
        self.n_labeled() as f64 / self.n_unlabeled() as f64
    }

    pub fn view(&self) -> PuView<'_> {
        PuView { features: &self.features, observed: &self.observed }
    }

    pub fn labeled_mask(&self) -> Vec<bool> {
        self.observed.iter().map(|&o| o == Observed::P).collect()
    }

    /// Observed noise rates of the "unlabeled means negative" view: fraction of true
    /// positives flagged `U`, and fraction of true negatives flagged `P`.
    pub fn empirical_noise_rates(&self) -> Result<(f64, f64)> {
        let truth = self.truth.as_ref().ok_or(Error::MissingTruth)?;
        let (mut pos, mut pos_u, mut neg, mut neg_p) = (0usize, 0usize, 0usize, 0usize);
        for (o, &t) in self.observed.iter().zip(truth) {
            if t {
                pos += 1;
                pos_u += (*o == Observed::U) as usize;
            } else {
                neg += 1;
                neg_p += (*o == Observed::P) as usize;
            }
        }
        let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok((rate(pos_u, pos), rate(neg_p, neg)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.features.cols();
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("observed".into());
        if self.truth.is_some() {
            header.push("truth".into());
        }
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(match self.observed[i] {
                Observed::P => "P".into(),
                Observed::U => "U".into(),
            });
            if let Some(t) = &self.truth {
                rec.push(if t[i] { "1".into() } else { "0".into() });
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a dataset CSV. Feature columns are every column before `observed`;
    /// `truth` is optional. The stored prior and setting are not part of the file.
    pub fn read_csv<R: Read>(r: R, pi_p: f64, setting: PuSetting) -> Result<PuDataset> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let obs_col = header
            .iter()
            .position(|h| h == "observed")
            .ok_or_else(|| Error::Parse("missing `observed` column".into()))?;
        let truth_col = header.iter().position(|h| h == "truth");
        let mut data = Vec::new();
        let mut observed = Vec::new();
        let mut truth = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            for j in 0..obs_col {
                data.push(parse_f64(&rec[j])?);
            }
            observed.push(match rec[obs_col].trim() {
                "P" => Observed::P,
                "U" => Observed::U,
                o => return Err(Error::Parse(format!("observed flag {o:?}"))),
            });
            if let Some(c) = truth_col {
                truth.push(match rec[c].trim() {
                    "1" => true,
                    "0" => false,
                    t => return Err(Error::Parse(format!("truth value {t:?}"))),
                });
            }
        }
        let features = Matrix::new(observed.len(), obs_col, data)?;
        Ok(PuDataset { features, observed, truth: truth_col.map(|_| truth), pi_p, setting })
    }
}

/// Draws `spec.n` rows; each row is positive with probability `pi_p`.
pub fn gen_gmm(spec: &GmmSpec) -> Result<SupervisedDataset> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed, 0);
    let pos = spec.pos_means();
    let neg = spec.neg_means();
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut truth = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let is_pos = rng.uniform() < spec.pi_p;
        let comps = if is_pos { &pos } else { &neg };
        let mean = comps[if comps.len() > 1 { rng.below(comps.len()) } else { 0 }];
        for &m in mean.iter() {
            let z = rng.normal();
            data.push(if spec.sigma == 0.0 { m } else { m + spec.sigma * z });
        }
        truth.push(is_pos);
    }
    Ok(SupervisedDataset { features: Matrix::new(spec.n, spec.d, data)?, truth, pi_p: spec.pi_p })
}

/// Case-control sampling: `n_p` positives without replacement, then `n_u` rows drawn
/// without replacement from the whole dataset, independently of the positive draw.
pub fn sample_pu_case_control(sup: &SupervisedDataset, n_p: usize, n_u: usize, seed: u64) -> Result<PuDataset> {
    let pos = sup.positive_indices();
    if n_p > pos.len() {
        return Err(Error::InsufficientPositives { requested: n_p, available: pos.len() });
    }
    if n_u > sup.n() {
        return Err(Error::InsufficientRows { requested: n_u, available: sup.n() });
    }
    if n_u == 0 {
        return Err(Error::InvalidSpec("n_u must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, 1);
    let p_idx: Vec<usize> = rng.sample_indices(pos.len(), n_p).into_iter().map(|k| pos[k]).collect();
    let u_idx = rng.sample_indices(sup.n(), n_u);
    let mut idx = p_idx;
    idx.extend_from_slice(&u_idx);
    let observed = (0..idx.len()).map(|k| if k < n_p { Observed::P } else { Observed::U }).collect();
    Ok(PuDataset {
        features: sup.features.select_rows(&idx),
        observed,
        truth: Some(idx.iter().map(|&i| sup.truth[i]).collect()),
        pi_p: sup.pi_p,
        setting: PuSetting::CaseControl,
    })
}

/// Single-dataset sampling: `n_l` positives get flagged `P`, all other rows `U`. Row order is kept.
pub fn sample_pu_single_dataset(sup: &SupervisedDataset, n_l: usize, seed: u64) -> Result<PuDataset> {
    let pos = sup.positive_indices();
    if n_l > pos.len() {
        return Err(Error::InsufficientPositives { requested: n_l, available: pos.len() });
    }
    if n_l >= sup.n() {
        return Err(Error::InsufficientRows { requested: n_l + 1, available: sup.n() });
    }
    let mut rng = RngStream::new(seed, 2);
    let mut observed = vec![Observed::U; sup.n()];
    for k in rng.sample_indices(pos.len(), n_l) {
        observed[pos[k]] = Observed::P;
    }
    Ok(PuDataset {
        features: sup.features.clone(),
        observed,
        truth: Some(sup.truth.clone()),
        pi_p: sup.pi_p,
        setting: PuSetting::SingleDataset,
    })
}

/// Noise rates `(xi_p, xi_n)` of the "unlabeled means negative" labeling.
pub fn noise_rates(pi: f64, gamma: f64) -> (f64, f64) {
    (pi / (gamma + pi), 0.0)
}

/// True when the corruption fraction `pi / (gamma + 1)` reaches one half.
pub fn breakdown_violated(pi: f64, gamma: f64) -> bool {
    gamma <= 2.0 * pi - 1.0
}

/// Scale factor of the sCL-PU bias.
pub fn kappa_pu(pi: f64, gamma: f64) -> f64 {
    pi * (1.0 - pi) / (1.0 + gamma)
}
