use super::TrajectorySource;
use crate::error::{Error, Result};

/// What to do with a layer that never moves between epochs `0` and `t_p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegenerateLayer {
    /// Report [`Error::DegenerateLayer`].
    Reject,
    /// Use the uniform schedule `beta(t) = t / t_p`.
    Uniform,
}

/// Per-layer interpolation weights `beta^l(t)` for `t = 0..=t_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaTable {
    pub phase: usize,
    pub endpoint: usize,
    pub layer_names: Vec<String>,
    /// `rows[l][t]`.
    pub rows: Vec<Vec<f64>>,
}

impl BetaTable {
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    /// Piecewise-linear value of layer `l` at fractional `t`.
    pub fn at(&self, l: usize, t: f64) -> f64 {
        let row = &self.rows[l];
        let lo = (t.floor() as usize).min(self.endpoint);
        if lo == self.endpoint {
            return row[lo];
        }
        let frac = t - lo as f64;
        if frac == 0.0 {
            row[lo]
        } else {
            row[lo] + frac * (row[lo + 1] - row[lo])
        }
    }
}

/// Layer-wise accumulated-distance weights:
///
/// ```text
/// beta^l(t) = sum_{k<t} |theta^l_{k+1} - theta^l_k| / sum_{k<t_p} |theta^l_{k+1} - theta^l_k|
/// ```
pub fn compute_beta<T: TrajectorySource + ?Sized>(
    traj: &T,
    endpoint: usize,
    phase: usize,
    policy: DegenerateLayer,
) -> Result<BetaTable> {
    if endpoint == 0 || endpoint > traj.horizon() {
        return Err(Error::invalid(format!(
            "interpolation endpoint {endpoint} must lie in 1..={}",
            traj.horizon()
        )));
    }
    let first = traj.checkpoint(0);
    let n_layers = first.num_layers();
    let mut rows = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let mut acc = Vec::with_capacity(endpoint + 1);
        acc.push(0.0);
        let mut total = 0.0;
        for k in 0..endpoint {
            let a = traj.checkpoint(k).layer(l);
            let b = traj.checkpoint(k + 1).layer(l);
            let step: f64 = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt();
            total += step;
            acc.push(total);
        }
        let row = if total > 0.0 {
            let mut row: Vec<f64> = acc.iter().map(|c| c / total).collect();
            row[endpoint] = 1.0;
            row
        } else {
            match policy {
                DegenerateLayer::Reject => {
                    return Err(Error::DegenerateLayer {
                        layer: first.layers()[l].name.clone(),
                    })
                }
                DegenerateLayer::Uniform => (0..=endpoint).map(|t| t as f64 / endpoint as f64).collect(),
            }
        };
        rows.push(row);
    }
    Ok(BetaTable {
        phase,
        endpoint,
        layer_names: first.layers().iter().map(|l| l.name.clone()).collect(),
        rows,
    })
}
