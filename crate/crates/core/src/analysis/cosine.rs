use crate::datamodel::{Matrix, SyntheticDataset};
use crate::distill::{meta_gradient, InnerSpec, MetaGradient};
use crate::error::{Error, Result};
use crate::model::TwoTowerModel;
use crate::trajectory::TrajectorySource;

/// Which part of the meta-gradient an analysis looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientProbe {
    /// `dX` only.
    #[default]
    Images,
    /// `dX`, `dY` and the similarity gradient.
    Data,
    /// Data blocks plus both step-size derivatives.
    All,
}

impl std::str::FromStr for GradientProbe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "images" | "image" => Ok(GradientProbe::Images),
            "data" => Ok(GradientProbe::Data),
            "all" => Ok(GradientProbe::All),
            _ => Err(Error::Config(format!("unknown gradient probe `{s}`"))),
        }
    }
}

impl GradientProbe {
    pub fn flatten(self, g: &MetaGradient) -> Vec<f64> {
        match self {
            GradientProbe::Images => g.images.as_slice().to_vec(),
            GradientProbe::Data => g.data_vector(),
            GradientProbe::All => {
                let mut v = g.data_vector();
                v.push(g.lr_img);
                v.push(g.lr_txt);
                v
            }
        }
    }
}

/// Flattened meta-gradient when matching from `start` to `start + dt`.
pub fn probe_gradient(
    model: &TwoTowerModel,
    source: &dyn TrajectorySource,
    syn: &SyntheticDataset,
    start: f64,
    dt: f64,
    inner: &InnerSpec,
    probe: GradientProbe,
) -> Result<Vec<f64>> {
    let end = start + dt;
    if !(start >= 0.0) || !(dt > 0.0) || end > source.horizon() as f64 {
        return Err(Error::invalid(format!(
            "segment [{start}, {end}] outside [0, {}]",
            source.horizon()
        )));
    }
    let a = source.query(start)?;
    let b = source.query(end)?;
    let (_, g) = meta_gradient(model, syn, &a, &b, inner)?;
    Ok(probe.flatten(&g))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise cosine similarity of the probed meta-gradients at `starts`. All
/// starts share the inner batch seed in `inner`.
pub fn grad_cosine_matrix(
    model: &TwoTowerModel,
    source: &dyn TrajectorySource,
    syn: &SyntheticDataset,
    starts: &[f64],
    dt: f64,
    inner: &InnerSpec,
    probe: GradientProbe,
) -> Result<Matrix> {
    let grads = starts
        .iter()
        .map(|&s| probe_gradient(model, source, syn, s, dt, inner, probe))
        .collect::<Result<Vec<_>>>()?;
    let norms: Vec<f64> = grads.iter().map(|g| dot(g, g).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::UndefinedCosine { start: starts[i] });
    }
    let k = starts.len();
    let mut m = Matrix::identity(k);
    for i in 0..k {
        for j in i + 1..k {
            let c = (dot(&grads[i], &grads[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            m.set(i, j, c);
            m.set(j, i, c);
        }
    }
    Ok(m)
}

pub fn mean_off_diagonal(m: &Matrix) -> f64 {
    let k = m.rows();
    if k < 2 {
        return f64::NAN;
    }
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                s += m.get(i, j);
            }
        }
    }
    s / (k * (k - 1)) as f64
}
