use serde::{Deserialize, Serialize};

use super::linalg::{matmul, matmul_a_bt, matmul_at_b};
use super::tower::{tower_backward, tower_forward, TwoTowerModel};
use crate::datamodel::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "wBCE")]
    Wbce,
    #[serde(rename = "InfoNCE")]
    InfoNce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wbce" => Ok(LossKind::Wbce),
            "infonce" | "nce" => Ok(LossKind::InfoNce),
            _ => Err(Error::Config(format!("unknown loss type `{s}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Wbce => "wBCE",
            LossKind::InfoNce => "InfoNCE",
        })
    }
}

/// Temperatures and threshold shared by the batch losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLossSpec {
    pub kind: LossKind,
    /// wBCE logit temperature.
    pub tau: f64,
    /// wBCE positive/negative split threshold.
    pub beta_thr: f64,
    /// InfoNCE temperature.
    pub tau_c: f64,
}

impl Default for BatchLossSpec {
    fn default() -> Self {
        BatchLossSpec {
            kind: LossKind::Wbce,
            tau: 0.2,
            beta_thr: 0.5,
            tau_c: 0.07,
        }
    }
}

impl BatchLossSpec {
    pub fn with_kind(mut self, kind: LossKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.tau_c > 0.0) {
            return Err(Error::Config("loss temperatures must be positive".into()));
        }
        if !(self.beta_thr > 0.0 && self.beta_thr < 1.0) {
            return Err(Error::Config("beta_thr must lie strictly inside (0, 1)".into()));
        }
        Ok(())
    }
}

/// InfoNCE over a `b x b` similarity block; returns the loss and `dL/dS`.
pub(crate) fn infonce_core<S: Scalar>(s: &[S], b: usize, tau_c: f64) -> (S, Vec<S>) {
    let inv_t = 1.0 / tau_c;
    let logits: Vec<S> = s.iter().map(|&v| v * inv_t).collect();
    let bf = b as f64;
    let mut loss = S::zero();
    let mut grad = vec![S::zero(); b * b];

    // rows: image i against all texts
    for i in 0..b {
        let row = &logits[i * b..(i + 1) * b];
        let mx = row.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
        let mut z = S::zero();
        for &v in row {
            z += (v + (-mx)).exp();
        }
        let lse = z.ln() + mx;
        loss += (lse - row[i]) * (1.0 / bf);
        for j in 0..b {
            let p = (row[j] - lse).exp();
            let ind = if i == j { 1.0 } else { 0.0 };
            grad[i * b + j] += (p + (-ind)) * (inv_t / bf);
        }
    }
    // columns: text j against all images
    for j in 0..b {
        let mx = (0..b).map(|k| logits[k * b + j].value()).fold(f64::NEG_INFINITY, f64::max);
        let mut z = S::zero();
        for k in 0..b {
            z += (logits[k * b + j] + (-mx)).exp();
        }
        let lse = z.ln() + mx;
        loss += (lse - logits[j * b + j]) * (1.0 / bf);
        for k in 0..b {
            let p = (logits[k * b + j] - lse).exp();
            let ind = if k == j { 1.0 } else { 0.0 };
            grad[k * b + j] += (p + (-ind)) * (inv_t / bf);
        }
    }
    (loss, grad)
}

/// `-ln(sigmoid(x))` with the log floor; returns `(value, d/dx)`.
fn neg_log_sigmoid<S: Scalar>(x: S) -> (S, S) {
    let cap = -LOG_FLOOR.ln();
    let v = (-x).softplus();
    if v.value() > cap {
        (S::cst(cap), S::zero())
    } else {
        // d/dx softplus(-x) = -sigmoid(-x) = -exp(-softplus(x))
        (v, -(-(x.softplus())).exp())
    }
}

/// wBCE over a `b x b` block: mean BCE over `{target > beta_thr}` plus mean
/// BCE over the rest, with `p = sigmoid(s / tau)`. Returns the loss,
/// `dL/dS` and `dL/dtarget`.
pub(crate) fn wbce_core<S: Scalar>(s: &[S], targets: &[S], tau: f64, beta_thr: f64) -> (S, Vec<S>, Vec<S>) {
    let n_pos = targets.iter().filter(|t| t.value() > beta_thr).count();
    let n_neg = targets.len() - n_pos;
    let w_pos = if n_pos > 0 { 1.0 / n_pos as f64 } else { 0.0 };
    let w_neg = if n_neg > 0 { 1.0 / n_neg as f64 } else { 0.0 };
    let inv_t = 1.0 / tau;

    let mut loss = S::zero();
    let mut ds = vec![S::zero(); s.len()];
    let mut dt = vec![S::zero(); s.len()];
    for (k, (&sv, &y)) in s.iter().zip(targets).enumerate() {
        let w = if y.value() > beta_thr { w_pos } else { w_neg };
        let x = sv * inv_t;
        // -log p and -log(1 - p)
        let (a, da) = neg_log_sigmoid(x);
        let (c, dc) = neg_log_sigmoid(-x);
        let one_minus_y = S::cst(1.0) - y;
        loss += (y * a + one_minus_y * c) * w;
        ds[k] = (y * da - one_minus_y * dc) * (w * inv_t);
        dt[k] = (a - c) * w;
    }
    (loss, ds, dt)
}

fn check_square(s: &Matrix) -> Result<usize> {
    if s.rows() != s.cols() || s.rows() == 0 {
        return Err(Error::invalid(format!(
            "similarity must be square and non-empty, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    Ok(s.rows())
}

/// Symmetric InfoNCE over a batch similarity matrix.
pub fn infonce_loss(s_hat: &Matrix, tau_c: f64) -> Result<f64> {
    let b = check_square(s_hat)?;
    if !(tau_c > 0.0) {
        return Err(Error::invalid("tau_c must be positive"));
    }
    Ok(infonce_core(s_hat.as_slice(), b, tau_c).0)
}

/// Weighted BCE against soft similarity targets in `[0, 1]`.
pub fn wbce_loss(s_hat: &Matrix, targets: &Matrix, tau: f64, beta_thr: f64) -> Result<f64> {
    check_square(s_hat)?;
    if s_hat.rows() != targets.rows() || s_hat.cols() != targets.cols() {
        return Err(Error::invalid("target shape differs from similarity shape"));
    }
    if targets.as_slice().iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("similarity targets must lie in [0, 1]"));
    }
    if !(tau > 0.0) || !(beta_thr > 0.0 && beta_thr < 1.0) {
        return Err(Error::invalid("need tau > 0 and 0 < beta_thr < 1"));
    }
    Ok(wbce_core(s_hat.as_slice(), targets.as_slice(), tau, beta_thr).0)
}

/// Loss value and gradients of one batch.
pub(crate) struct BatchGrad<S> {
    pub loss: S,
    pub d_params: Vec<S>,
    pub d_images: Vec<S>,
    pub d_texts: Vec<S>,
    pub d_targets: Vec<S>,
}

/// Forward and backward pass over one batch of `b` aligned pairs.
///
/// `targets` is the `b x b` similarity block and must be present for wBCE.
/// Input and target gradients are only filled when `inputs_grad` is set.
pub(crate) fn batch_loss_grad<S: Scalar>(
    model: &TwoTowerModel,
    params: &[S],
    images: &[S],
    texts: &[S],
    targets: Option<&[S]>,
    spec: &BatchLossSpec,
    inputs_grad: bool,
) -> BatchGrad<S> {
    let (h, e) = (model.hidden, model.embed);
    let b = images.len() / model.d_img;
    let split = model.image_len();
    let (p_img, p_txt) = params.split_at(split);

    let ci = tower_forward(p_img, images, b, model.d_img, h, e);
    let ct = tower_forward(p_txt, texts, b, model.d_txt, h, e);
    let s_hat = matmul_a_bt(&ci.u, &ct.u, b, e, b);

    let (loss, ds, d_targets) = match spec.kind {
        LossKind::InfoNce => {
            let (l, g) = infonce_core(&s_hat, b, spec.tau_c);
            (l, g, Vec::new())
        }
        LossKind::Wbce => {
            let t = targets.expect("wBCE needs similarity targets");
            wbce_core(&s_hat, t, spec.tau, spec.beta_thr)
        }
    };

    let du = matmul(&ds, &ct.u, b, b, e);
    let dv = matmul_at_b(&ds, &ci.u, b, b, e);

    let mut d_params = vec![S::zero(); params.len()];
    let mut d_images = if inputs_grad { vec![S::zero(); images.len()] } else { Vec::new() };
    let mut d_texts = if inputs_grad { vec![S::zero(); texts.len()] } else { Vec::new() };
    {
        let (gi, gt) = d_params.split_at_mut(split);
        tower_backward(
            p_img,
            images,
            &ci,
            &du,
            (b, model.d_img, h, e),
            gi,
            inputs_grad.then_some(d_images.as_mut_slice()),
        );
        tower_backward(
            p_txt,
            texts,
            &ct,
            &dv,
            (b, model.d_txt, h, e),
            gt,
            inputs_grad.then_some(d_texts.as_mut_slice()),
        );
    }
    BatchGrad {
        loss,
        d_params,
        d_images,
        d_texts,
        d_targets: if inputs_grad { d_targets } else { Vec::new() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_matrix(n: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
        let mut r = rng_from_seed(seed);
        Matrix::from_vec(n, n, (0..n * n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
    }

    /// Element-by-element recomputation straight from the definitions.
    fn infonce_oracle(s: &Matrix, tau: f64) -> f64 {
        let b = s.rows();
        let mut total = 0.0;
        for i in 0..b {
            let row: f64 = (0..b).map(|k| (s.get(i, k) / tau).exp()).sum();
            let col: f64 = (0..b).map(|k| (s.get(k, i) / tau).exp()).sum();
            let e = (s.get(i, i) / tau).exp();
            total += (e / row).ln() + (e / col).ln();
        }
        -total / b as f64
    }

    fn wbce_oracle(s: &Matrix, y: &Matrix, tau: f64, thr: f64) -> f64 {
        let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0, 0.0, 0);
        for (sv, yv) in s.as_slice().iter().zip(y.as_slice()) {
            let p = 1.0 / (1.0 + (-sv / tau).exp());
            let l = -yv * p.max(1e-12).ln() - (1.0 - yv) * (1.0 - p).max(1e-12).ln();
            if *yv > thr {
                pos += l;
                npos += 1;
            } else {
                neg += l;
                nneg += 1;
            }
        }
        let mp = if npos > 0 { pos / npos as f64 } else { 0.0 };
        let mn = if nneg > 0 { neg / nneg as f64 } else { 0.0 };
        mp + mn
    }

    #[test]
    fn infonce_uniform_is_two_ln_b() {
        let s = Matrix::from_vec(4, 4, vec![0.3; 16]).unwrap();
        let l = infonce_loss(&s, 0.07).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infonce_dominant_diagonal_vanishes() {
        // s_ii / tau = 30, off-diagonal logits -30
        let tau = 0.1;
        let mut s = Matrix::from_vec(4, 4, vec![-3.0; 16]).unwrap();
        for i in 0..4 {
            s.set(i, i, 3.0);
        }
        assert!(infonce_loss(&s, tau).unwrap() < 1e-10);
    }

    #[test]
    fn infonce_matches_oracle() {
        let s = random_matrix(5, -1.0, 1.0, 11);
        let l = infonce_loss(&s, 0.07).unwrap();
        assert!((l - infonce_oracle(&s, 0.07)).abs() < 1e-12);
        assert!(l >= 0.0);
    }

    #[test]
    fn infonce_rejects_non_square() {
        let s = Matrix::zeros(2, 3);
        assert!(matches!(infonce_loss(&s, 0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn wbce_zero_logits_identity_targets() {
        let s = Matrix::zeros(5, 5);
        for tau in [0.05, 0.2, 3.0] {
            let l = wbce_loss(&s, &Matrix::identity(5), tau, 0.5).unwrap();
            assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn wbce_all_negative_targets() {
        let s = random_matrix(4, -1.0, 1.0, 2);
        let y = Matrix::zeros(4, 4);
        let l = wbce_loss(&s, &y, 0.2, 0.5).unwrap();
        let expect: f64 = s
            .as_slice()
            .iter()
            .map(|v| -(1.0 - 1.0 / (1.0 + (-v / 0.2).exp())).ln())
            .sum::<f64>()
            / 16.0;
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn wbce_matches_oracle() {
        let s = random_matrix(4, -1.0, 1.0, 5);
        let y = random_matrix(4, 0.0, 1.0, 6);
        let l = wbce_loss(&s, &y, 0.2, 0.5).unwrap();
        assert!((l - wbce_oracle(&s, &y, 0.2, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn wbce_rejects_out_of_range_targets() {
        let s = Matrix::zeros(2, 2);
        let y = Matrix::from_vec(2, 2, vec![1.2, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(wbce_loss(&s, &y, 0.2, 0.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn wbce_identity_partitions_diagonal() {
        let y = Matrix::identity(6);
        let n_pos = y.as_slice().iter().filter(|&&v| v > 0.5).count();
        assert_eq!(n_pos, 6);
    }

    #[test]
    fn core_gradients_match_finite_differences() {
        let s = random_matrix(4, -1.0, 1.0, 8);
        let y = random_matrix(4, 0.0, 1.0, 9);
        let (_, gs, gy) = wbce_core(s.as_slice(), y.as_slice(), 0.2, 0.5);
        let (_, gn) = infonce_core(s.as_slice(), 4, 0.3);
        let h = 1e-6;
        for k in 0..16 {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.as_mut_slice()[k] += h;
            sm.as_mut_slice()[k] -= h;
            let fd = (wbce_loss(&sp, &y, 0.2, 0.5).unwrap() - wbce_loss(&sm, &y, 0.2, 0.5).unwrap()) / (2.0 * h);
            assert!((fd - gs[k]).abs() < 1e-6, "wbce ds[{k}]");
            let fd = (infonce_loss(&sp, 0.3).unwrap() - infonce_loss(&sm, 0.3).unwrap()) / (2.0 * h);
            assert!((fd - gn[k]).abs() < 1e-6, "infonce ds[{k}]");
            // targets: keep clear of the threshold so the partition is stable
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp.as_mut_slice()[k] += h;
            ym.as_mut_slice()[k] -= h;
            if (y.as_slice()[k] - 0.5).abs() > 1e-3 {
                let fd = (wbce_loss(&s, &yp, 0.2, 0.5).unwrap() - wbce_loss(&s, &ym, 0.2, 0.5).unwrap()) / (2.0 * h);
                assert!((fd - gy[k]).abs() < 1e-6, "wbce dy[{k}]");
            }
        }
    }
}
