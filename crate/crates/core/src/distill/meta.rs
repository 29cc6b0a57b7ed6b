use super::unroll::{dense_targets, inner_unroll, InnerSpec, UnrollTape};
use crate::datamodel::{Matrix, ParamVector, SimilarityParams, SyntheticDataset};
use crate::error::{Error, Result};
use crate::model::{batch_loss_grad, TwoTowerModel};
use crate::scalar::Dual;

/// `|end - target|^2 / |start - target|^2` over the whole parameter vector.
pub fn matching_loss(end: &ParamVector, start: &ParamVector, target: &ParamVector) -> Result<f64> {
    end.ensure_compatible(target)?;
    start.ensure_compatible(target)?;
    let den = start.distance_sq(target);
    if !(den > 0.0) {
        return Err(Error::DegenerateSegment);
    }
    Ok(end.distance_sq(target) / den)
}

/// Gradient w.r.t. the similarity parameters, shaped like them.
#[derive(Clone, Debug, PartialEq)]
pub enum SimilarityGrad {
    Full(Matrix),
    LowRank { omega: f64, left: Matrix, right: Matrix },
}

impl SimilarityGrad {
    pub fn zeros_like(sim: &SimilarityParams) -> Self {
        match sim {
            SimilarityParams::Full(s) => SimilarityGrad::Full(Matrix::zeros(s.rows(), s.cols())),
            SimilarityParams::LowRank { left, right, .. } => SimilarityGrad::LowRank {
                omega: 0.0,
                left: Matrix::zeros(left.rows(), left.cols()),
                right: Matrix::zeros(right.rows(), right.cols()),
            },
        }
    }

    pub fn sum_sq(&self) -> f64 {
        let sq = |m: &Matrix| m.as_slice().iter().map(|v| v * v).sum::<f64>();
        match self {
            SimilarityGrad::Full(s) => sq(s),
            SimilarityGrad::LowRank { omega, left, right } => omega * omega + sq(left) + sq(right),
        }
    }

    pub fn scale(&mut self, c: f64) {
        match self {
            SimilarityGrad::Full(s) => s.as_mut_slice().iter_mut().for_each(|v| *v *= c),
            SimilarityGrad::LowRank { omega, left, right } => {
                *omega *= c;
                left.as_mut_slice().iter_mut().for_each(|v| *v *= c);
                right.as_mut_slice().iter_mut().for_each(|v| *v *= c);
            }
        }
    }
}

/// Derivative of the matching loss w.r.t. every learnable synthetic block.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradient {
    pub images: Matrix,
    pub texts: Matrix,
    pub sim: SimilarityGrad,
    pub lr_img: f64,
    pub lr_txt: f64,
}

impl MetaGradient {
    pub fn zeros_like(syn: &SyntheticDataset) -> Self {
        MetaGradient {
            images: Matrix::zeros(syn.images.rows(), syn.images.cols()),
            texts: Matrix::zeros(syn.texts.rows(), syn.texts.cols()),
            sim: SimilarityGrad::zeros_like(&syn.sim),
            lr_img: 0.0,
            lr_txt: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        let sq = |m: &Matrix| m.as_slice().iter().map(|v| v * v).sum::<f64>();
        (sq(&self.images) + sq(&self.texts) + self.sim.sum_sq() + self.lr_img * self.lr_img + self.lr_txt * self.lr_txt)
            .sqrt()
    }

    /// Gradient of the data blocks only, flattened as `(X, Y, S)`.
    pub fn data_vector(&self) -> Vec<f64> {
        let mut v = self.images.as_slice().to_vec();
        v.extend_from_slice(self.texts.as_slice());
        match &self.sim {
            SimilarityGrad::Full(s) => v.extend_from_slice(s.as_slice()),
            SimilarityGrad::LowRank { omega, left, right } => {
                v.push(*omega);
                v.extend_from_slice(left.as_slice());
                v.extend_from_slice(right.as_slice());
            }
        }
        v
    }

    pub fn scale(&mut self, c: f64) {
        self.images.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        self.texts.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        self.sim.scale(c);
        self.lr_img *= c;
        self.lr_txt *= c;
    }

    pub fn is_finite(&self) -> bool {
        self.norm().is_finite()
    }
}

fn duals(xs: &[f64]) -> Vec<Dual> {
    xs.iter().map(|&v| Dual::new(v, 0.0)).collect()
}

/// Matching loss after `t` inner steps and its exact derivative.
///
/// The reverse sweep keeps the adjoint `lambda = dL/dtheta_{k+1}` and, per
/// step, evaluates the batch gradient once on dual numbers seeded with
/// `w = eta * lambda`. The tangents then hold `H w` for the parameters and the
/// mixed terms for images, texts and targets.
pub fn meta_gradient(
    model: &TwoTowerModel,
    syn: &SyntheticDataset,
    start: &ParamVector,
    target: &ParamVector,
    spec: &InnerSpec,
) -> Result<(f64, MetaGradient)> {
    let tape = inner_unroll(model, syn, start, spec)?;
    meta_gradient_from_tape(model, syn, &tape, target, spec)
}

pub fn meta_gradient_from_tape(
    model: &TwoTowerModel,
    syn: &SyntheticDataset,
    tape: &UnrollTape,
    target: &ParamVector,
    spec: &InnerSpec,
) -> Result<(f64, MetaGradient)> {
    let loss = matching_loss(&tape.end, &tape.start, target)?;
    let den = tape.start.distance_sq(target);
    let mut grad = MetaGradient::zeros_like(syn);
    if tape.steps() == 0 {
        return Ok((loss, grad));
    }
    let targets = dense_targets(syn, &spec.loss)?;
    let split = model.image_len();
    let (d_img, d_txt) = (model.d_img, model.d_txt);
    let n = syn.len();
    let mut d_sim = Matrix::zeros(n, n);

    let mut lambda: Vec<f64> = tape
        .end
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(e, t)| 2.0 * (e - t) / den)
        .collect();

    for k in (0..tape.steps()).rev() {
        let batch = &tape.batches[k];
        let g = &tape.grads[k];
        let (li, lt) = lambda.split_at(split);
        let (gi, gt) = g.split_at(split);
        grad.lr_img -= li.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
        grad.lr_txt -= lt.iter().zip(gt).map(|(a, b)| a * b).sum::<f64>();

        let params: Vec<Dual> = tape.iterates[k]
            .iter()
            .zip(&lambda)
            .enumerate()
            .map(|(i, (&th, &l))| {
                let lr = if i < split { syn.lr_img } else { syn.lr_txt };
                Dual::new(th, lr * l)
            })
            .collect();
        let x = duals(syn.images.select_rows(batch).as_slice());
        let y = duals(syn.texts.select_rows(batch).as_slice());
        let s = targets.as_ref().map(|t| duals(t.select_block(batch).as_slice()));
        let bg = batch_loss_grad(model, &params, &x, &y, s.as_deref(), &spec.loss, true);

        for (a, &row) in batch.iter().enumerate() {
            for (dst, src) in grad.images.row_mut(row).iter_mut().zip(&bg.d_images[a * d_img..(a + 1) * d_img]) {
                *dst -= src.du;
            }
            for (dst, src) in grad.texts.row_mut(row).iter_mut().zip(&bg.d_texts[a * d_txt..(a + 1) * d_txt]) {
                *dst -= src.du;
            }
        }
        if !bg.d_targets.is_empty() {
            let b = batch.len();
            for (a, &ra) in batch.iter().enumerate() {
                for (c, &rc) in batch.iter().enumerate() {
                    let cur = d_sim.get(ra, rc);
                    d_sim.set(ra, rc, cur - bg.d_targets[a * b + c].du);
                }
            }
        }
        for (l, hw) in lambda.iter_mut().zip(&bg.d_params) {
            *l -= hw.du;
        }
    }

    grad.sim = match &syn.sim {
        SimilarityParams::Full(_) => SimilarityGrad::Full(d_sim),
        SimilarityParams::LowRank { left, right, scale, .. } => {
            let raw = syn.sim.lowrank_raw();
            let r = left.cols();
            let c = scale / r as f64;
            let mut masked = d_sim;
            for (g, v) in masked.as_mut_slice().iter_mut().zip(raw.as_slice()) {
                if !(0.0..=1.0).contains(v) {
                    *g = 0.0;
                }
            }
            let omega = (0..n).map(|i| masked.get(i, i)).sum();
            let mut dl = Matrix::zeros(n, r);
            let mut dr = Matrix::zeros(n, r);
            for i in 0..n {
                for j in 0..n {
                    let gij = masked.get(i, j);
                    if gij == 0.0 {
                        continue;
                    }
                    for q in 0..r {
                        dl.set(i, q, dl.get(i, q) + c * gij * right.get(j, q));
                        dr.set(j, q, dr.get(j, q) + c * gij * left.get(i, q));
                    }
                }
            }
            SimilarityGrad::LowRank {
                omega,
                left: dl,
                right: dr,
            }
        }
    };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::fixtures::fixture;
    use crate::model::BatchLossSpec;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_layers(vec![(crate::datamodel::LayerSpec::new("w", vec![v.len()]), v.to_vec())]).unwrap()
    }

    #[test]
    fn matching_loss_hand_cases() {
        let s = pv(&[0.0, 0.0]);
        let t = pv(&[1.0, 0.0]);
        assert_eq!(matching_loss(&t, &s, &t).unwrap(), 0.0);
        assert_eq!(matching_loss(&s, &s, &t).unwrap(), 1.0);
        assert_eq!(matching_loss(&pv(&[0.5, 0.0]), &s, &t).unwrap(), 0.25);
        assert!(matches!(matching_loss(&s, &t, &t), Err(Error::DegenerateSegment)));
    }

    fn spec(steps: usize, mb: usize, seed: u64) -> InnerSpec {
        InnerSpec {
            steps,
            mini_batch: mb,
            loss: BatchLossSpec::default(),
            seed,
        }
    }

    fn perturbed(p: &ParamVector, seed: u64, sd: f64) -> ParamVector {
        let mut r = rng_from_seed(seed);
        p.with_data(p.as_slice().iter().map(|v| v + sd * r.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn zero_steps_give_zero_gradient() {
        let (m, s, p) = fixture(4);
        let target = perturbed(&p, 1, 0.1);
        let (l, g) = meta_gradient(&m, &s, &p, &target, &spec(0, 2, 0)).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, MetaGradient::zeros_like(&s));
    }

    fn loss_at(m: &TwoTowerModel, s: &SyntheticDataset, p: &ParamVector, t: &ParamVector, sp: &InnerSpec) -> f64 {
        meta_gradient(m, s, p, t, sp).unwrap().0
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn finite_differences_on_every_block() {
        let (m, mut s, p) = fixture(4);
        let mut r = rng_from_seed(17);
        let mut sim = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                sim.set(i, j, if i == j { r.random_range(0.6..0.9) } else { r.random_range(0.05..0.4) });
            }
        }
        s.sim = SimilarityParams::Full(sim);
        let target = perturbed(&p, 2, 0.05);
        let sp = spec(2, 3, 5);
        let (_, g) = meta_gradient(&m, &s, &p, &target, &sp).unwrap();

        let h = 1e-5;
        for (i, exact) in [(0usize, g.images.get(1, 2)), (1, g.texts.get(3, 0))] {
            let mut a = s.clone();
            let mut b = s.clone();
            let (ma, mb) = if i == 0 { (&mut a.images, &mut b.images) } else { (&mut a.texts, &mut b.texts) };
            let (row, col) = if i == 0 { (1, 2) } else { (3, 0) };
            ma.set(row, col, ma.get(row, col) + h);
            mb.set(row, col, mb.get(row, col) - h);
            let fd = (loss_at(&m, &a, &p, &target, &sp) - loss_at(&m, &b, &p, &target, &sp)) / (2.0 * h);
            assert!(rel(fd, exact) < 1e-5, "block {i}: fd {fd} vs {exact}");
        }
        let SimilarityGrad::Full(ds) = &g.sim else { unreachable!() };
        let (mut a, mut b) = (s.clone(), s.clone());
        if let (SimilarityParams::Full(sa), SimilarityParams::Full(sb)) = (&mut a.sim, &mut b.sim) {
            sa.set(0, 2, sa.get(0, 2) + h);
            sb.set(0, 2, sb.get(0, 2) - h);
        }
        let fd = (loss_at(&m, &a, &p, &target, &sp) - loss_at(&m, &b, &p, &target, &sp)) / (2.0 * h);
        assert!(rel(fd, ds.get(0, 2)) < 1e-5, "sim: fd {fd} vs {}", ds.get(0, 2));

        let hl = 1e-7;
        let (mut a, mut b) = (s.clone(), s.clone());
        a.lr_txt += hl;
        b.lr_txt -= hl;
        let fd = (loss_at(&m, &a, &p, &target, &sp) - loss_at(&m, &b, &p, &target, &sp)) / (2.0 * hl);
        assert!(rel(fd, g.lr_txt) < 1e-5, "lr: fd {fd} vs {}", g.lr_txt);
    }

    #[test]
    fn lowrank_gradient_matches_finite_differences() {
        let (m, mut s, p) = fixture(4);
        let mut r = rng_from_seed(4);
        let mut mk = |rows: usize, cols: usize| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(0.1..0.4)).collect()).unwrap()
        };
        s.sim = SimilarityParams::LowRank {
            omega: 0.5,
            left: mk(4, 2),
            right: mk(4, 2),
            scale: 1.0,
        };
        let target = perturbed(&p, 6, 0.05);
        let sp = spec(2, 4, 8);
        let (_, g) = meta_gradient(&m, &s, &p, &target, &sp).unwrap();
        let SimilarityGrad::LowRank { omega, left, right } = &g.sim else { unreachable!() };
        let h = 1e-5;
        let nudge = |which: usize, d: f64| {
            let mut c = s.clone();
            if let SimilarityParams::LowRank { omega, left, right, .. } = &mut c.sim {
                match which {
                    0 => *omega += d,
                    1 => left.set(2, 1, left.get(2, 1) + d),
                    _ => right.set(0, 0, right.get(0, 0) + d),
                }
            }
            loss_at(&m, &c, &p, &target, &sp)
        };
        for (which, exact) in [(0, *omega), (1, left.get(2, 1)), (2, right.get(0, 0))] {
            let fd = (nudge(which, h) - nudge(which, -h)) / (2.0 * h);
            assert!(rel(fd, exact) < 1e-5, "lowrank block {which}: fd {fd} vs {exact}");
        }
    }

    #[test]
    fn duplicated_pair_gets_identical_gradients() {
        let (m, mut s, p) = fixture(4);
        let dup = |mat: &Matrix| {
            let mut out = mat.clone();
            let r0 = mat.row(0).to_vec();
            out.row_mut(1).copy_from_slice(&r0);
            out
        };
        s.images = dup(&s.images);
        s.texts = dup(&s.texts);
        let mut sim = Matrix::identity(4);
        sim.set(0, 1, 1.0);
        sim.set(1, 0, 1.0);
        s.sim = SimilarityParams::Full(sim);
        let target = perturbed(&p, 3, 0.05);
        let (_, g) = meta_gradient(&m, &s, &p, &target, &spec(2, 4, 1)).unwrap();
        for c in 0..s.images.cols() {
            assert!((g.images.get(0, c) - g.images.get(1, c)).abs() < 1e-12);
        }
        for c in 0..s.texts.cols() {
            assert!((g.texts.get(0, c) - g.texts.get(1, c)).abs() < 1e-12);
        }
    }
}
