use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::{matmul, matmul_a_bt, matmul_at_b};
use crate::datamodel::{LayerSpec, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Guards the row normalisation against an all-zero embedding.
pub(crate) const NORM_EPS: f64 = 1e-24;

pub const LAYER_NAMES: [&str; 8] = [
    "img.w1", "img.b1", "img.w2", "img.b2", "txt.w1", "txt.b1", "txt.w2", "txt.b2",
];

/// Shape of the two-tower encoder: per modality `affine -> tanh -> affine`,
/// followed by row-wise L2 normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoTowerModel {
    pub d_img: usize,
    pub d_txt: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl TwoTowerModel {
    pub fn new(d_img: usize, d_txt: usize, hidden: usize, embed: usize) -> Result<Self> {
        if d_img == 0 || d_txt == 0 || hidden == 0 || embed == 0 {
            return Err(Error::invalid("tower dimensions must be positive"));
        }
        Ok(TwoTowerModel {
            d_img,
            d_txt,
            hidden,
            embed,
        })
    }

    /// Default desk-scale widths (`h = 32`, `e = 16`).
    pub fn for_dims(d_img: usize, d_txt: usize) -> Self {
        TwoTowerModel {
            d_img,
            d_txt,
            hidden: 32,
            embed: 16,
        }
    }

    pub fn schema(&self) -> Vec<LayerSpec> {
        let (h, e) = (self.hidden, self.embed);
        vec![
            LayerSpec::new(LAYER_NAMES[0], vec![self.d_img, h]),
            LayerSpec::new(LAYER_NAMES[1], vec![h]),
            LayerSpec::new(LAYER_NAMES[2], vec![h, e]),
            LayerSpec::new(LAYER_NAMES[3], vec![e]),
            LayerSpec::new(LAYER_NAMES[4], vec![self.d_txt, h]),
            LayerSpec::new(LAYER_NAMES[5], vec![h]),
            LayerSpec::new(LAYER_NAMES[6], vec![h, e]),
            LayerSpec::new(LAYER_NAMES[7], vec![e]),
        ]
    }

    /// Recovers the tower widths from a parameter vector's schema.
    pub fn from_params(p: &ParamVector) -> Result<Self> {
        let l = p.layers();
        if l.len() != 8 || l.iter().zip(LAYER_NAMES).any(|(s, n)| s.name != n) {
            return Err(Error::invalid("parameters are not a two-tower schema"));
        }
        if l[0].shape.len() != 2 || l[4].shape.len() != 2 || l[2].shape.len() != 2 {
            return Err(Error::invalid("two-tower weight layers must be rank 2"));
        }
        let m = TwoTowerModel::new(l[0].shape[0], l[4].shape[0], l[0].shape[1], l[2].shape[1])?;
        if m.schema() != l {
            return Err(Error::invalid("two-tower layer shapes are inconsistent"));
        }
        Ok(m)
    }

    pub fn tower_len(&self, d_in: usize) -> usize {
        d_in * self.hidden + self.hidden + self.hidden * self.embed + self.embed
    }

    /// Number of leading flat parameters that belong to the image tower.
    pub fn image_len(&self) -> usize {
        self.tower_len(self.d_img)
    }

    pub fn param_len(&self) -> usize {
        self.image_len() + self.tower_len(self.d_txt)
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::zeros(self.schema()).expect("static schema");
        for (i, fan_in) in [(0, self.d_img), (2, self.hidden), (4, self.d_txt), (6, self.hidden)] {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in p.layer_mut(i) {
                *v = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }
}

pub(crate) struct TowerCache<S> {
    pub h: Vec<S>,
    pub z: Vec<S>,
    pub norm: Vec<S>,
    pub u: Vec<S>,
}

/// Splits a tower's flat parameter slice into `(w1, b1, w2, b2)`.
fn split_tower<S>(p: &[S], d_in: usize, h: usize, e: usize) -> (&[S], &[S], &[S], &[S]) {
    let (w1, rest) = p.split_at(d_in * h);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h * e);
    (w1, b1, w2, b2)
}

pub(crate) fn tower_forward<S: Scalar>(p: &[S], x: &[S], b: usize, d_in: usize, h: usize, e: usize) -> TowerCache<S> {
    let (w1, b1, w2, b2) = split_tower(p, d_in, h, e);
    let mut a = matmul(x, w1, b, d_in, h);
    for row in a.chunks_mut(h) {
        for (v, &bias) in row.iter_mut().zip(b1) {
            *v = (*v + bias).tanh();
        }
    }
    let hid = a;
    let mut z = matmul(&hid, w2, b, h, e);
    for row in z.chunks_mut(e) {
        for (v, &bias) in row.iter_mut().zip(b2) {
            *v += bias;
        }
    }
    let mut norm = Vec::with_capacity(b);
    let mut u = Vec::with_capacity(b * e);
    for row in z.chunks(e) {
        let mut ss = S::cst(NORM_EPS);
        for &v in row {
            ss += v * v;
        }
        let n = ss.sqrt();
        norm.push(n);
        u.extend(row.iter().map(|&v| v / n));
    }
    TowerCache { h: hid, z, norm, u }
}

/// Back-propagates `du` (gradient w.r.t. the normalised embeddings) into the
/// tower parameters (accumulated into `dp`) and, when requested, the inputs.
pub(crate) fn tower_backward<S: Scalar>(
    p: &[S],
    x: &[S],
    cache: &TowerCache<S>,
    du: &[S],
    dims: (usize, usize, usize, usize),
    dp: &mut [S],
    dx: Option<&mut [S]>,
) {
    let (b, d_in, h, e) = dims;
    let (w1, _, w2, _) = split_tower(p, d_in, h, e);

    // u = z / n, n = sqrt(|z|^2 + eps):  dz = du / n - z (z . du) / n^3
    let mut dz = vec![S::zero(); b * e];
    for r in 0..b {
        let z = &cache.z[r * e..(r + 1) * e];
        let g = &du[r * e..(r + 1) * e];
        let n = cache.norm[r];
        let mut zdu = S::zero();
        for (&zi, &gi) in z.iter().zip(g) {
            zdu += zi * gi;
        }
        let n3 = n * n * n;
        for ((o, &zi), &gi) in dz[r * e..(r + 1) * e].iter_mut().zip(z).zip(g) {
            *o = gi / n - zi * zdu / n3;
        }
    }

    let (dw1, rest) = dp.split_at_mut(d_in * h);
    let (db1, rest) = rest.split_at_mut(h);
    let (dw2, db2) = rest.split_at_mut(h * e);

    for (acc, v) in dw2.iter_mut().zip(matmul_at_b(&cache.h, &dz, b, h, e)) {
        *acc += v;
    }
    for row in dz.chunks(e) {
        for (acc, &v) in db2.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut da = matmul_a_bt(&dz, w2, b, e, h);
    for (v, &hv) in da.iter_mut().zip(&cache.h) {
        *v *= S::cst(1.0) - hv * hv;
    }
    for (acc, v) in dw1.iter_mut().zip(matmul_at_b(x, &da, b, d_in, h)) {
        *acc += v;
    }
    for row in da.chunks(h) {
        for (acc, &v) in db1.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if let Some(dx) = dx {
        for (acc, v) in dx.iter_mut().zip(matmul_a_bt(&da, w1, b, h, d_in)) {
            *acc += v;
        }
    }
}
