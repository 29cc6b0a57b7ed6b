//! Two-tower contrastive encoder, its losses, and retrieval metrics.

mod linalg;
mod loss;
mod retrieval;
mod tower;

pub use loss::{infonce_loss, wbce_loss, BatchLossSpec, LossKind, LOG_FLOOR};
pub use retrieval::{retrieval_from_similarity, retrieval_scores, RetrievalReport};
pub use tower::{TwoTowerModel, LAYER_NAMES};

pub(crate) use loss::batch_loss_grad;
pub(crate) use tower::tower_forward;

use crate::datamodel::{Matrix, ParamVector, SimilarityParams};
use crate::error::{Error, Result};

/// Row-normalised embeddings and their cosine matrix `S_ij = <u_i, v_j>`.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub u: Matrix,
    pub v: Matrix,
    pub sim: Matrix,
}

impl TwoTowerModel {
    fn check_inputs(&self, params: &ParamVector, images: &Matrix, texts: &Matrix) -> Result<()> {
        if params.layers() != self.schema().as_slice() {
            return Err(Error::invalid("parameters do not match the model schema"));
        }
        if images.cols() != self.d_img || texts.cols() != self.d_txt {
            return Err(Error::invalid(format!(
                "input dims ({}, {}) do not match towers ({}, {})",
                images.cols(),
                texts.cols(),
                self.d_img,
                self.d_txt
            )));
        }
        Ok(())
    }

    /// Image and text embeddings. The two inputs may have different row counts.
    pub fn embed(&self, params: &ParamVector, images: &Matrix, texts: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_inputs(params, images, texts)?;
        let (pi, pt) = params.as_slice().split_at(self.image_len());
        let ci = tower_forward(pi, images.as_slice(), images.rows(), self.d_img, self.hidden, self.embed);
        let ct = tower_forward(pt, texts.as_slice(), texts.rows(), self.d_txt, self.hidden, self.embed);
        Ok((
            Matrix::from_vec(images.rows(), self.embed, ci.u)?,
            Matrix::from_vec(texts.rows(), self.embed, ct.u)?,
        ))
    }

    pub fn forward(&self, params: &ParamVector, images: &Matrix, texts: &Matrix) -> Result<Embeddings> {
        let (u, v) = self.embed(params, images, texts)?;
        let mut sim = Matrix::zeros(u.rows(), v.rows());
        for i in 0..u.rows() {
            for j in 0..v.rows() {
                sim.set(i, j, u.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum());
            }
        }
        Ok(Embeddings { u, v, sim })
    }

    /// Batch loss and its gradient w.r.t. the parameters.
    pub fn loss_and_grad(
        &self,
        params: &ParamVector,
        images: &Matrix,
        texts: &Matrix,
        targets: Option<&Matrix>,
        spec: &BatchLossSpec,
    ) -> Result<(f64, ParamVector)> {
        self.check_inputs(params, images, texts)?;
        if images.rows() != texts.rows() || images.rows() == 0 {
            return Err(Error::invalid("batch needs equal, non-zero image and text rows"));
        }
        let b = images.rows();
        if spec.kind == LossKind::Wbce {
            match targets {
                Some(t) if t.rows() == b && t.cols() == b => {}
                _ => return Err(Error::invalid("wBCE needs a b x b target block")),
            }
        }
        let g = batch_loss_grad(
            self,
            params.as_slice(),
            images.as_slice(),
            texts.as_slice(),
            targets.map(Matrix::as_slice),
            spec,
            false,
        );
        Ok((g.loss, params.with_data(g.d_params)?))
    }
}

/// Dense similarity targets for a [`SimilarityParams`].
pub fn reconstruct_similarity(sim: &SimilarityParams) -> Result<Matrix> {
    sim.reconstruct()
}

/// Cosine-similarity forward pass for an explicit model.
pub fn forward(model: &TwoTowerModel, params: &ParamVector, images: &Matrix, texts: &Matrix) -> Result<Embeddings> {
    model.forward(params, images, texts)
}
