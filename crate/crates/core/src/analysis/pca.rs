use nalgebra::{DMatrix, SymmetricEigen};

use super::cosine::{probe_gradient, GradientProbe};
use crate::datamodel::SyntheticDataset;
use crate::distill::InnerSpec;
use crate::error::{Error, Result};
use crate::model::TwoTowerModel;
use crate::trajectory::TrajectorySource;

/// Low-dimensional coordinates of a set of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    /// `coords[i][c]`: sample `i` on component `c`.
    pub coords: Vec<Vec<f64>>,
    /// Variance along each returned component, descending.
    pub eigenvalues: Vec<f64>,
    /// Euclidean norm of each raw, uncentred vector.
    pub norms: Vec<f64>,
    /// Fewer components than requested were available.
    pub rank_deficient: bool,
}

/// Centres the vectors and projects them onto the top `components`
/// principal directions through the eigendecomposition of their Gram matrix.
/// Each component is signed so that its largest-magnitude coordinate is
/// positive.
pub fn pca_project(vectors: &[Vec<f64>], components: usize) -> Result<PcaProjection> {
    let s = vectors.len();
    if s < 2 {
        return Err(Error::invalid("PCA needs at least two vectors"));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::invalid("PCA vectors must share a positive length"));
    }
    if components == 0 {
        return Err(Error::invalid("at least one component required"));
    }
    let norms = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / s as f64).collect();
    let centred: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();
    let gram = DMatrix::from_fn(s, s, |i, j| centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>());
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 * s as f64;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&c| eig.eigenvalues[c] > tol && eig.eigenvalues[c] > 0.0)
        .take(components)
        .collect();
    let mut coords = vec![Vec::with_capacity(kept.len()); s];
    let mut eigenvalues = Vec::with_capacity(kept.len());
    for &c in &kept {
        let lam = eig.eigenvalues[c];
        let col: Vec<f64> = (0..s).map(|i| lam.sqrt() * eig.eigenvectors[(i, c)]).collect();
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (row, v) in coords.iter_mut().zip(col) {
            row.push(sign * v);
        }
        eigenvalues.push(lam);
    }
    Ok(PcaProjection {
        rank_deficient: kept.len() < components,
        coords,
        eigenvalues,
        norms,
    })
}

/// PCA of the probed meta-gradients at several matching starts.
#[allow(clippy::too_many_arguments)]
pub fn pca_gradients(
    model: &TwoTowerModel,
    source: &dyn TrajectorySource,
    syn: &SyntheticDataset,
    starts: &[f64],
    dt: f64,
    inner: &InnerSpec,
    probe: GradientProbe,
    components: usize,
) -> Result<PcaProjection> {
    if starts.len() < 2 {
        return Err(Error::invalid("PCA needs at least two starts"));
    }
    let grads = starts
        .iter()
        .map(|&s| probe_gradient(model, source, syn, s, dt, inner, probe))
        .collect::<Result<Vec<_>>>()?;
    pca_project(&grads, components)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antipodal_pair_is_one_dimensional() {
        let p = pca_project(&[vec![1.0, 2.0, -1.0], vec![-1.0, -2.0, 1.0]], 2).unwrap();
        assert!(p.rank_deficient);
        assert_eq!(p.eigenvalues.len(), 1);
        assert!(p.coords[0][0] * p.coords[1][0] < 0.0);
        assert!((p.coords[0][0].abs() - 6f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.norms, vec![6f64.sqrt(); 2]);
    }

    #[test]
    fn full_rank_projection_preserves_centred_gram() {
        let v = vec![
            vec![1.0, 0.0, 2.0, 0.5],
            vec![0.0, 3.0, -1.0, 0.0],
            vec![2.0, 1.0, 0.0, -1.0],
            vec![-1.0, 0.5, 0.5, 2.0],
        ];
        let p = pca_project(&v, 3).unwrap();
        assert!(!p.rank_deficient);
        let mean: Vec<f64> = (0..4).map(|j| v.iter().map(|r| r[j]).sum::<f64>() / 4.0).collect();
        for i in 0..4 {
            for j in 0..4 {
                let g: f64 = (0..4).map(|k| (v[i][k] - mean[k]) * (v[j][k] - mean[k])).sum();
                let c: f64 = p.coords[i].iter().zip(&p.coords[j]).map(|(a, b)| a * b).sum();
                assert!((g - c).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reordering_only_permutes_rows() {
        let v = vec![vec![1.0, 0.0, 2.0], vec![0.0, 3.0, -1.0], vec![2.0, 1.0, 0.0], vec![-1.0, 0.5, 0.5]];
        let mut w = v.clone();
        w.swap(0, 3);
        let a = pca_project(&v, 2).unwrap();
        let b = pca_project(&w, 2).unwrap();
        for c in 0..2 {
            for (i, j) in [(0, 3), (1, 1), (2, 2), (3, 0)] {
                assert!((a.coords[i][c].abs() - b.coords[j][c].abs()).abs() < 1e-9);
            }
        }
    }
}
