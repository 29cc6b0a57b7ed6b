use rand::seq::index;
use rand::Rng;

use crate::datamodel::{Matrix, PairDataset, ParamVector, SyntheticDataset};
use crate::error::{Error, Result};
use crate::model::TwoTowerModel;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoresetMethod {
    Random,
    Herding,
    KCenter,
}

impl std::str::FromStr for CoresetMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CoresetMethod::Random),
            "herding" => Ok(CoresetMethod::Herding),
            "kcenter" => Ok(CoresetMethod::KCenter),
            _ => Err(Error::Config(format!("unknown coreset method `{s}`"))),
        }
    }
}

fn check_size(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("coreset size must be positive"));
    }
    if n > m {
        return Err(Error::Capacity {
            requested: n,
            available: m,
        });
    }
    Ok(())
}

/// Uniform sample of `n` rows without replacement, sorted.
pub fn coreset_random(real: &PairDataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    check_size(n, real.len())?;
    let mut idx = index::sample(&mut rng::rng_for(seed, "coreset.random", 0), real.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy herding: each step adds the row that brings the running mean of
/// the selection closest to the mean of all rows. Returned in selection order.
pub fn herding_select(features: &Matrix, n: usize) -> Result<Vec<usize>> {
    let (m, d) = (features.rows(), features.cols());
    check_size(n, m)?;
    let mut mu = vec![0.0; d];
    for i in 0..m {
        for (a, b) in mu.iter_mut().zip(features.row(i)) {
            *a += b / m as f64;
        }
    }
    let mut taken = vec![false; m];
    let mut sum = vec![0.0; d];
    let mut out = Vec::with_capacity(n);
    let mut cand = vec![0.0; d];
    for k in 1..=n {
        let mut best = (f64::INFINITY, 0);
        for i in (0..m).filter(|&i| !taken[i]) {
            for ((c, s), f) in cand.iter_mut().zip(&sum).zip(features.row(i)) {
                *c = (s + f) / k as f64;
            }
            let dd = dist_sq(&cand, &mu);
            if dd < best.0 {
                best = (dd, i);
            }
        }
        taken[best.1] = true;
        for (s, f) in sum.iter_mut().zip(features.row(best.1)) {
            *s += f;
        }
        out.push(best.1);
    }
    Ok(out)
}

/// Farthest-first traversal from `first`. Returned in selection order.
pub fn kcenter_select(features: &Matrix, n: usize, first: usize) -> Result<Vec<usize>> {
    let m = features.rows();
    check_size(n, m)?;
    if first >= m {
        return Err(Error::invalid(format!("first center {first} out of range")));
    }
    let mut nearest: Vec<f64> = (0..m).map(|i| dist_sq(features.row(i), features.row(first))).collect();
    let mut out = vec![first];
    let mut taken = vec![false; m];
    taken[first] = true;
    while out.len() < n {
        let mut best = (-1.0, 0);
        for i in (0..m).filter(|&i| !taken[i]) {
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        let c = best.1;
        taken[c] = true;
        out.push(c);
        for i in 0..m {
            nearest[i] = nearest[i].min(dist_sq(features.row(i), features.row(c)));
        }
    }
    Ok(out)
}

/// Teacher embeddings `u_i || v_i` of every real pair.
pub fn joint_embeddings(model: &TwoTowerModel, params: &ParamVector, real: &PairDataset) -> Result<Matrix> {
    let (u, v) = model.embed(params, &real.images, &real.texts)?;
    let e = u.cols() + v.cols();
    let mut out = Matrix::zeros(real.len(), e);
    for i in 0..real.len() {
        let row = out.row_mut(i);
        row[..u.cols()].copy_from_slice(u.row(i));
        row[u.cols()..].copy_from_slice(v.row(i));
    }
    Ok(out)
}

pub fn coreset_herding(real: &PairDataset, n: usize, model: &TwoTowerModel, teacher: &ParamVector) -> Result<Vec<usize>> {
    herding_select(&joint_embeddings(model, teacher, real)?, n)
}

pub fn coreset_kcenter(
    real: &PairDataset,
    n: usize,
    model: &TwoTowerModel,
    teacher: &ParamVector,
    seed: u64,
) -> Result<Vec<usize>> {
    check_size(n, real.len())?;
    let first = rng::rng_for(seed, "coreset.kcenter", 0).random_range(0..real.len());
    kcenter_select(&joint_embeddings(model, teacher, real)?, n, first)
}

/// The selected real pairs as a subset with identity similarity.
pub fn coreset_subset(real: &PairDataset, indices: &[usize], lr: f64) -> Result<SyntheticDataset> {
    SyntheticDataset::from_pairs(&real.subset(indices), indices.to_vec(), lr)
}
