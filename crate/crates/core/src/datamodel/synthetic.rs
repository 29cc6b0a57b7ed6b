use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Matrix, PairDataset, PhaseConfig, SimType};
use crate::error::{Error, Result};
use crate::rng;

/// Learnable pairwise similarity between synthetic images and texts.
#[derive(Clone, Debug, PartialEq)]
pub enum SimilarityParams {
    /// Dense `N x N` targets, kept in `[0, 1]`.
    Full(Matrix),
    /// `omega * I + (scale / r) * L R^T`, clamped to `[0, 1]` on reconstruction.
    LowRank {
        omega: f64,
        left: Matrix,
        right: Matrix,
        scale: f64,
    },
}

impl SimilarityParams {
    pub fn identity(n: usize) -> Self {
        SimilarityParams::Full(Matrix::identity(n))
    }

    /// Low-rank parameterisation equal to the identity: `omega = 1`, `R = 0`,
    /// small random `L` so that `R` receives gradient from the first step.
    pub fn lowrank_identity<R: Rng>(n: usize, rank: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if rank == 0 || rank > n {
            return Err(Error::invalid(format!("rank {rank} must lie in 1..={n}")));
        }
        let left = (0..n * rank)
            .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(SimilarityParams::LowRank {
            omega: 1.0,
            left: Matrix::from_vec(n, rank, left)?,
            right: Matrix::zeros(n, rank),
            scale,
        })
    }

    pub fn size(&self) -> usize {
        match self {
            SimilarityParams::Full(s) => s.rows(),
            SimilarityParams::LowRank { left, .. } => left.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SimilarityParams::Full(s) => {
                if s.rows() != s.cols() {
                    return Err(Error::invalid("similarity matrix must be square"));
                }
                if !s.is_finite() {
                    return Err(Error::invalid("non-finite similarity"));
                }
            }
            SimilarityParams::LowRank {
                omega,
                left,
                right,
                scale,
            } => {
                let r = left.cols();
                if r == 0 || r > left.rows() {
                    return Err(Error::invalid(format!("rank {r} must lie in 1..={}", left.rows())));
                }
                if right.rows() != left.rows() || right.cols() != r {
                    return Err(Error::invalid("low-rank factors have mismatched shapes"));
                }
                if !omega.is_finite() || !scale.is_finite() || !left.is_finite() || !right.is_finite() {
                    return Err(Error::invalid("non-finite similarity"));
                }
            }
        }
        Ok(())
    }

    /// Dense `N x N` target matrix. Full mode is a pass-through; low-rank
    /// mode builds `omega I + (scale/r) L R^T` and clamps to `[0, 1]`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        self.validate()?;
        match self {
            SimilarityParams::Full(s) => Ok(s.clone()),
            SimilarityParams::LowRank { .. } => {
                let mut s = self.lowrank_raw();
                for v in s.as_mut_slice() {
                    *v = v.clamp(0.0, 1.0);
                }
                Ok(s)
            }
        }
    }

    /// Unclamped low-rank product; panics in full mode.
    pub(crate) fn lowrank_raw(&self) -> Matrix {
        let SimilarityParams::LowRank {
            omega,
            left,
            right,
            scale,
        } = self
        else {
            panic!("lowrank_raw on full similarity");
        };
        let n = left.rows();
        let r = left.cols();
        let coef = scale / r as f64;
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = left.row(i).iter().zip(right.row(j)).map(|(a, b)| a * b).sum();
                let diag = if i == j { *omega } else { 0.0 };
                s.set(i, j, diag + coef * dot);
            }
        }
        s
    }

    pub fn clamp_unit(&mut self) {
        if let SimilarityParams::Full(s) = self {
            for v in s.as_mut_slice() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    pub fn bitwise_eq(&self, other: &SimilarityParams) -> bool {
        match (self, other) {
            (SimilarityParams::Full(a), SimilarityParams::Full(b)) => a.bitwise_eq(b),
            (
                SimilarityParams::LowRank {
                    omega: o1,
                    left: l1,
                    right: r1,
                    scale: a1,
                },
                SimilarityParams::LowRank {
                    omega: o2,
                    left: l2,
                    right: r2,
                    scale: a2,
                },
            ) => {
                o1.to_bits() == o2.to_bits()
                    && a1.to_bits() == a2.to_bits()
                    && l1.bitwise_eq(l2)
                    && r1.bitwise_eq(r2)
            }
            _ => false,
        }
    }
}

/// The learnable synthetic subset of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub images: Matrix,
    pub texts: Matrix,
    pub sim: SimilarityParams,
    pub lr_img: f64,
    pub lr_txt: f64,
    pub phase: usize,
    /// Rows of the real dataset this subset was initialised from.
    pub source_indices: Vec<usize>,
}

impl SyntheticDataset {
    /// Copies the real pairs at `indices`, with identity similarity and the
    /// given inner step sizes.
    pub fn from_real(
        real: &PairDataset,
        indices: &[usize],
        phase: usize,
        lr_img: f64,
        lr_txt: f64,
        sim: SimilarityParams,
    ) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= real.len()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        let syn = SyntheticDataset {
            images: real.images.select_rows(indices),
            texts: real.texts.select_rows(indices),
            sim,
            lr_img,
            lr_txt,
            phase,
            source_indices: indices.to_vec(),
        };
        syn.validate()?;
        Ok(syn)
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.rows();
        if n == 0 {
            return Err(Error::invalid("synthetic dataset must hold at least one pair"));
        }
        if self.texts.rows() != n || self.sim.size() != n {
            return Err(Error::invalid("synthetic components disagree on N"));
        }
        if !(self.lr_img > 0.0) || !(self.lr_txt > 0.0) || !self.lr_img.is_finite() || !self.lr_txt.is_finite() {
            return Err(Error::invalid("inner step sizes must be positive and finite"));
        }
        if !self.images.is_finite() || !self.texts.is_finite() {
            return Err(Error::invalid("non-finite synthetic features"));
        }
        self.sim.validate()
    }

    pub fn bitwise_eq(&self, other: &SyntheticDataset) -> bool {
        self.phase == other.phase
            && self.source_indices == other.source_indices
            && self.lr_img.to_bits() == other.lr_img.to_bits()
            && self.lr_txt.to_bits() == other.lr_txt.to_bits()
            && self.images.bitwise_eq(&other.images)
            && self.texts.bitwise_eq(&other.texts)
            && self.sim.bitwise_eq(&other.sim)
    }

    /// Real-pair view with identity similarity, e.g. for coresets.
    pub fn from_pairs(pairs: &PairDataset, indices: Vec<usize>, lr: f64) -> Result<Self> {
        let n = pairs.len();
        let syn = SyntheticDataset {
            images: pairs.images.clone(),
            texts: pairs.texts.clone(),
            sim: SimilarityParams::identity(n),
            lr_img: lr,
            lr_txt: lr,
            phase: 0,
            source_indices: indices,
        };
        syn.validate()?;
        Ok(syn)
    }
}

pub(crate) fn initial_similarity<R: Rng>(cfg: &PhaseConfig, n: usize, rng: &mut R) -> Result<SimilarityParams> {
    match cfg.sim_type {
        SimType::Full => Ok(SimilarityParams::identity(n)),
        SimType::LowRank => SimilarityParams::lowrank_identity(n, cfg.sim_rank.min(n), cfg.sim_scale, rng),
    }
}

/// Initialises one synthetic subset from `N_p` randomly drawn real pairs.
pub fn init_synthetic(real: &PairDataset, cfg: &PhaseConfig, seed: u64) -> Result<SyntheticDataset> {
    let n = cfg.num_queries;
    if n > real.len() {
        return Err(Error::Capacity {
            requested: n,
            available: real.len(),
        });
    }
    let mut r = rng::rng_for(seed, "init", 0);
    let mut idx = index::sample(&mut r, real.len(), n).into_vec();
    idx.sort_unstable();
    let sim = initial_similarity(cfg, n, &mut r)?;
    SyntheticDataset::from_real(real, &idx, 0, cfg.lr_teacher_img, cfg.lr_teacher_txt, sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowrank_identity_reconstructs_identity() {
        let mut r = rng::rng_from_seed(1);
        let mut s = SimilarityParams::lowrank_identity(5, 2, 1.0, &mut r).unwrap();
        if let SimilarityParams::LowRank { left, .. } = &mut s {
            for v in left.as_mut_slice() {
                *v = 0.0;
            }
        }
        assert!(s.reconstruct().unwrap().bitwise_eq(&Matrix::identity(5)));
    }

    #[test]
    fn rank_above_n_is_rejected() {
        let s = SimilarityParams::LowRank {
            omega: 1.0,
            left: Matrix::zeros(3, 4),
            right: Matrix::zeros(3, 4),
            scale: 1.0,
        };
        assert!(matches!(s.reconstruct(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lowrank_reproduces_dense_target() {
        // r = N, omega = 0, a = r, L = M, R = I  =>  S = M.
        let mut r = rng::rng_from_seed(9);
        for n in 1..=8 {
            let m: Vec<f64> = (0..n * n).map(|_| r.random::<f64>()).collect();
            let target = Matrix::from_vec(n, n, m).unwrap();
            let s = SimilarityParams::LowRank {
                omega: 0.0,
                left: target.clone(),
                right: Matrix::identity(n),
                scale: n as f64,
            };
            let rec = s.reconstruct().unwrap();
            assert!(rec.bitwise_eq(&target), "n = {n}");
        }
    }
}
