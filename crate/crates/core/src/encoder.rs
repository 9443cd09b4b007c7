//! Small MLP encoder with optional unit-norm output, manual backprop and contrastive training.

use crate::contrastive::{loss, LossKind, MultiViewBatch};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, sq_dist, Matrix, RngStream};
use crate::pu_data::{Observed, PuView};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative given the pre-activation `a` and the output `h`.
    fn deriv(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

/// Feed-forward encoder. The activation is applied after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    widths: Vec<usize>,
    activation: Activation,
    /// Layer `l` maps `widths[l]` to `widths[l + 1]`; stored as `widths[l + 1] x widths[l]`.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    normalize: bool,
}

struct Forward {
    /// Layer inputs `h_0 = x, h_1, ...`.
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    out: Matrix,
    norms: Vec<f64>,
}

impl MlpEncoder {
    /// Glorot-normal weights, zero biases.
    pub fn new_random(widths: &[usize], activation: Activation, normalize: bool, seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = RngStream::new(seed, 0xE0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
            weights.push(Matrix::new(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self { widths: widths.to_vec(), activation, weights, biases, normalize })
    }

    /// Single identity layer.
    pub fn identity(d: usize, normalize: bool) -> Self {
        Self {
            widths: vec![d, d],
            activation: Activation::Identity,
            weights: vec![Matrix::identity(d)],
            biases: vec![vec![0.0; d]],
            normalize,
        }
    }

    /// Builds an encoder from a flat parameter vector in [`MlpEncoder::params`] layout.
    pub fn from_params(widths: &[usize], activation: Activation, params: &[f64], normalize: bool) -> Result<Self> {
        check_widths(widths)?;
        let mut enc = Self {
            widths: widths.to_vec(),
            activation,
            weights: widths.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect(),
            biases: widths.windows(2).map(|w| vec![0.0; w[1]]).collect(),
            normalize,
        };
        enc.set_params(params)?;
        Ok(enc)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Per layer: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w.as_slice());
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimMismatch(format!("{} parameters for an encoder with {}", p.len(), self.n_params())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder parameter".into()));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.rows() * w.cols();
            w.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = b.len();
            b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn forward(&self, x: &Matrix) -> Result<Forward> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimMismatch(format!("input has {} columns, encoder expects {}", x.cols(), self.input_dim())));
        }
        let last = self.weights.len() - 1;
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let h = inputs.last().expect("input");
            let mut a = Matrix::zeros(h.rows(), w.rows());
            for r in 0..h.rows() {
                let hr = h.row(r);
                for o in 0..w.rows() {
                    a.set(r, o, dot(w.row(o), hr) + b[o]);
                }
            }
            if l < last {
                let mut act = a.clone();
                act.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
                inputs.push(act);
            }
            pre.push(a);
        }
        let mut out = pre.last().expect("layer").clone();
        let mut norms = Vec::new();
        if self.normalize {
            for r in 0..out.rows() {
                let n = norm(out.row(r));
                if n <= 1e-12 {
                    return Err(Error::ZeroRow { row: r });
                }
                out.row_mut(r).iter_mut().for_each(|v| *v /= n);
                norms.push(n);
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(Forward { inputs, pre, out, norms })
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.out)
    }

    fn backward(&self, f: &Forward, dz: &Matrix) -> Vec<f64> {
        let mut delta = dz.clone();
        if self.normalize {
            for r in 0..delta.rows() {
                let z = f.out.row(r);
                let radial = dot(z, delta.row(r));
                let n = f.norms[r];
                for (g, zi) in delta.row_mut(r).iter_mut().zip(z) {
                    *g = (*g - zi * radial) / n;
                }
            }
        }
        let layers = self.weights.len();
        let mut grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let w = &self.weights[l];
            let h = &f.inputs[l];
            let mut gw = Matrix::zeros(w.rows(), w.cols());
            let mut gb = vec![0.0; w.rows()];
            for r in 0..h.rows() {
                let d = delta.row(r);
                let hr = h.row(r);
                for o in 0..w.rows() {
                    gb[o] += d[o];
                    let row = gw.row_mut(o);
                    for (g, hv) in row.iter_mut().zip(hr) {
                        *g += d[o] * hv;
                    }
                }
            }
            grads.push((gw, gb));
            if l > 0 {
                let mut prev = Matrix::zeros(h.rows(), w.cols());
                for r in 0..h.rows() {
                    let d = delta.row(r).to_vec();
                    let pr = prev.row_mut(r);
                    for (o, dv) in d.iter().enumerate() {
                        for (p, wv) in pr.iter_mut().zip(w.row(o)) {
                            *p += dv * wv;
                        }
                    }
                    let a = f.pre[l - 1].row(r);
                    let hh = h.row(r);
                    for c in 0..pr.len() {
                        pr[c] *= self.activation.deriv(a[c], hh[c]);
                    }
                }
                delta = prev;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(&gb);
        }
        flat
    }

    /// Gradient of a scalar loss with respect to the flat parameters, given its gradient
    /// `dz` with respect to the encoder output on input `x`.
    pub fn backprop(&self, x: &Matrix, dz: &Matrix) -> Result<Vec<f64>> {
        let f = self.forward(x)?;
        if dz.rows() != f.out.rows() || dz.cols() != f.out.cols() {
            return Err(Error::DimMismatch("output gradient shape".into()));
        }
        Ok(self.backward(&f, dz))
    }

    /// Loss and parameter gradient for a two-view batch: `x1[i]` and `x2[i]` are views of source `i`.
    pub fn batch_loss_and_grad(
        &self,
        x1: &Matrix,
        x2: &Matrix,
        labeled_src: &[bool],
        kind: LossKind,
        tau: f64,
    ) -> Result<(f64, Vec<f64>, Matrix)> {
        let x = x1.vstack(x2)?;
        let f = self.forward(&x)?;
        let b = x1.rows();
        let z1 = f.out.select_rows(&(0..b).collect::<Vec<_>>());
        let z2 = f.out.select_rows(&(b..2 * b).collect::<Vec<_>>());
        let batch = MultiViewBatch::from_views(&z1, &z2, labeled_src, tau)?;
        let rep = loss(kind, &batch)?;
        let g = self.backward(&f, &rep.grad);
        Ok((rep.value, g, f.out))
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            widths: self.widths.clone(),
            activation: self.activation,
            params: self.params(),
            normalize: self.normalize,
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        Self::from_params(&ck.widths, ck.activation, &ck.params, ck.normalize)
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidHyper(format!("encoder widths {widths:?}")));
    }
    Ok(())
}

/// Plain mini-batch gradient descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    /// Sources per batch; each contributes two views.
    pub batch_size: usize,
    pub tau: f64,
    /// Standard deviation of the Gaussian-noise augmentation.
    pub aug_sigma: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { lr: 0.05, epochs: 300, batch_size: 64, tau: 0.5, aug_sigma: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean batch loss per epoch.
    pub loss: Vec<f64>,
    /// Mean parameter-gradient norm per epoch.
    pub grad_norm: Vec<f64>,
    pub steps: usize,
}

/// Trains `enc` in place on features and observed flags only.
pub fn train_encoder(enc: &mut MlpEncoder, data: PuView<'_>, kind: LossKind, hyper: &TrainHyper) -> Result<TrainingHistory> {
    if !(hyper.lr > 0.0) || !hyper.lr.is_finite() {
        return Err(Error::InvalidHyper(format!("lr = {}", hyper.lr)));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidHyper("batch_size must be at least 1".into()));
    }
    if !(hyper.tau > 0.0) {
        return Err(Error::InvalidHyper(format!("tau = {}", hyper.tau)));
    }
    if !(hyper.aug_sigma >= 0.0) {
        return Err(Error::InvalidHyper(format!("aug_sigma = {}", hyper.aug_sigma)));
    }
    if kind == LossKind::Scl {
        return Err(Error::InvalidHyper("the fully supervised loss needs ground truth".into()));
    }
    let n = data.features.rows();
    if n == 0 || data.observed.len() != n {
        return Err(Error::InvalidHyper("empty or inconsistent training data".into()));
    }
    if data.features.cols() != enc.input_dim() {
        return Err(Error::DimMismatch(format!("data has {} columns, encoder expects {}", data.features.cols(), enc.input_dim())));
    }
    let mut rng = RngStream::new(hyper.seed, 0x7A);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainingHistory { loss: Vec::new(), grad_norm: Vec::new(), steps: 0 };
    let mut warned = false;
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut losses = Vec::new();
        let mut norms = Vec::new();
        for chunk in order.chunks(hyper.batch_size) {
            let base = data.features.select_rows(chunk);
            let mut views = [base.clone(), base];
            for v in views.iter_mut() {
                for x in v.as_mut_slice() {
                    *x += hyper.aug_sigma * rng.normal();
                }
            }
            let labeled: Vec<bool> = chunk.iter().map(|&i| data.observed[i] == Observed::P).collect();
            let (value, g, z) = enc.batch_loss_and_grad(&views[0], &views[1], &labeled, kind, hyper.tau)?;
            if !value.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            let mut p = enc.params();
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi -= hyper.lr * gi;
            }
            enc.set_params(&p)?;
            losses.push(value);
            norms.push(norm(&g));
            history.steps += 1;
            if !warned && z.rows() > 1 && collapsed(&z) {
                log::warn!("embeddings collapsed to a single point (max pairwise distance below 1e-6)");
                warned = true;
            }
        }
        history.loss.push(losses.iter().sum::<f64>() / losses.len() as f64);
        history.grad_norm.push(norms.iter().sum::<f64>() / norms.len() as f64);
    }
    Ok(history)
}

fn collapsed(z: &Matrix) -> bool {
    let first = z.row(0);
    z.iter_rows().all(|r| sq_dist(r, first) < 0.25e-12)
}

/// Lower bound on the Lipschitz constant: max ratio over `probe_pairs` random nearby input
/// pairs, with inputs drawn from `N(0, scale^2 I)`.
pub fn estimate_lipschitz(enc: &MlpEncoder, probe_pairs: usize, scale: f64, seed: u64) -> Result<f64> {
    let d = enc.input_dim();
    let mut rng = RngStream::new(seed, 0x11);
    let mut best: f64 = 0.0;
    for _ in 0..probe_pairs {
        let x: Vec<f64> = (0..d).map(|_| scale * rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.1 * scale * rng.normal()).collect();
        let dx = sq_dist(&x, &y).sqrt();
        if dx == 0.0 {
            continue;
        }
        let m = Matrix::from_rows(&[x, y])?;
        let z = match enc.encode(&m) {
            Ok(z) => z,
            Err(Error::ZeroRow { .. }) => continue,
            Err(e) => return Err(e),
        };
        best = best.max(sq_dist(z.row(0), z.row(1)).sqrt() / dx);
    }
    Ok(best)
}

/// Max of `|g(a) - g(b)| / |a - b|` over all distinct pairs of rows of `points`.
pub fn empirical_lipschitz(enc: &MlpEncoder, points: &Matrix) -> Result<f64> {
    let z = enc.encode(points)?;
    let mut best: f64 = 0.0;
    for i in 0..points.rows() {
        for j in i + 1..points.rows() {
            let dx = sq_dist(points.row(i), points.row(j)).sqrt();
            if dx > 0.0 {
                best = best.max(sq_dist(z.row(i), z.row(j)).sqrt() / dx);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::pu_data::{gen_gmm, sample_pu_case_control, GmmSpec};
    use proptest::prelude::*;

    fn rand_x(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = RngStream::new(seed, 1);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| r.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_keeps_unit_rows() {
        let enc = MlpEncoder::identity(3, true);
        let x = Matrix::from_rows(&[vec![0.0, 0.6, 0.8]]).unwrap();
        assert_eq!(enc.encode(&x).unwrap(), x);
    }

    #[test]
    fn scaled_linear_map() {
        let mut p = Matrix::identity(2).into_vec().iter().map(|v| 2.0 * v).collect::<Vec<_>>();
        p.extend([0.0, 0.0]);
        let enc = MlpEncoder::from_params(&[2, 2], Activation::Identity, &p, false).unwrap();
        assert!((estimate_lipschitz(&enc, 50, 1.0, 3).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(enc.encode(&Matrix::from_rows(&[vec![1.0, -3.0]]).unwrap()).unwrap().row(0), &[2.0, -6.0]);
    }

    #[test]
    fn encode_errors() {
        let enc = MlpEncoder::identity(2, true);
        assert!(matches!(enc.encode(&Matrix::zeros(1, 3)), Err(Error::DimMismatch(_))));
        assert!(matches!(enc.encode(&Matrix::zeros(1, 2)), Err(Error::ZeroRow { row: 0 })));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let enc = MlpEncoder::new_random(&[3, 7, 4], Activation::Tanh, true, 9).unwrap();
        let back = MlpEncoder::from_json(&enc.to_json().unwrap()).unwrap();
        assert_eq!(enc, back);
        let x = rand_x(5, 3, 2);
        assert_eq!(enc.encode(&x).unwrap(), back.encode(&x).unwrap());
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Identity, Activation::Relu] {
            let enc = MlpEncoder::new_random(&[3, 6, 4], act, true, 4).unwrap();
            let x1 = rand_x(4, 3, 5);
            let x2 = rand_x(4, 3, 6);
            let labeled = [true, false, true, false];
            let kind = LossKind::Pucl;
            let (_, g, _) = enc.batch_loss_and_grad(&x1, &x2, &labeled, kind, 0.5).unwrap();
            let f = |p: &[f64]| {
                let e = MlpEncoder::from_params(enc.widths(), act, p, true).unwrap();
                e.batch_loss_and_grad(&x1, &x2, &labeled, kind, 0.5).unwrap().0
            };
            let fd = finite_diff_grad(f, &enc.params(), 1e-6).unwrap();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / a.abs().max(b.abs()).max(1e-3) < 1e-5, "{act:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn training_reduces_loss() {
        let spec = GmmSpec {
            d: 2,
            mean_pos: vec![2.0, 0.0],
            mean_neg: vec![-2.0, 0.0],
            sigma: 0.5,
            n: 200,
            pi_p: 0.5,
            seed: 1,
            extra_pos_means: vec![],
            extra_neg_means: vec![],
        };
        let sup = gen_gmm(&spec).unwrap();
        let pu = sample_pu_case_control(&sup, 20, 150, 2).unwrap();
        let mut enc = MlpEncoder::new_random(&[2, 16, 4], Activation::Tanh, true, 3).unwrap();
        let hyper = TrainHyper { epochs: 30, batch_size: 32, ..Default::default() };
        let h = train_encoder(&mut enc, pu.view(), LossKind::Pucl, &hyper).unwrap();
        assert!(h.loss.last().unwrap() < &h.loss[0]);
        assert_eq!(h.steps, 30 * 6);
    }

    #[test]
    fn training_rejects_bad_hyper() {
        let x = rand_x(4, 2, 1);
        let obs = vec![Observed::U; 4];
        let view = PuView { features: &x, observed: &obs };
        let mut enc = MlpEncoder::identity(2, true);
        for h in [TrainHyper { lr: 0.0, ..Default::default() }, TrainHyper { batch_size: 0, ..Default::default() }] {
            assert!(matches!(train_encoder(&mut enc, view, LossKind::Sscl, &h), Err(Error::InvalidHyper(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn normalized_outputs_are_unit(seed in any::<u64>()) {
            let enc = MlpEncoder::new_random(&[3, 5, 4], Activation::Tanh, true, seed).unwrap();
            if let Ok(z) = enc.encode(&rand_x(6, 3, seed)) {
                for r in z.iter_rows() {
                    prop_assert!((norm(r) - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn training_is_deterministic(seed in 0u64..20) {
            let x = rand_x(12, 2, seed);
            let obs: Vec<Observed> = (0..12).map(|i| if i < 3 { Observed::P } else { Observed::U }).collect();
            let view = PuView { features: &x, observed: &obs };
            let hyper = TrainHyper { epochs: 3, batch_size: 4, seed, ..Default::default() };
            let mut a = MlpEncoder::new_random(&[2, 4, 3], Activation::Tanh, true, seed).unwrap();
            let mut b = a.clone();
            let ha = train_encoder(&mut a, view, LossKind::Pucl, &hyper).unwrap();
            let hb = train_encoder(&mut b, view, LossKind::Pucl, &hyper).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(ha, hb);
        }
    }
}
