use super::cosine::{probe_gradient, GradientProbe};
use crate::datamodel::SyntheticDataset;
use crate::distill::InnerSpec;
use crate::error::{Error, Result};
use crate::model::TwoTowerModel;
use crate::trajectory::TrajectorySource;

/// `|grad(T + dt) - grad(T)|` per offset and the fitted log-log slope.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope over rows with `dt > 0` and a nonzero difference.
    pub slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x` over points with `x, y > 0`.
pub fn loglog_slope(rows: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Meta-gradients at `base` and `base + dt` for every offset, each matching
/// a segment of fixed length `segment`. One inner batch seed for all starts.
#[allow(clippy::too_many_arguments)]
pub fn proposition_sweep(
    model: &TwoTowerModel,
    source: &dyn TrajectorySource,
    syn: &SyntheticDataset,
    base: f64,
    offsets: &[f64],
    segment: f64,
    inner: &InnerSpec,
    probe: GradientProbe,
) -> Result<SweepResult> {
    let horizon = source.horizon() as f64;
    if let Some(&bad) = offsets.iter().find(|&&d| !(d >= 0.0) || base + d + segment > horizon) {
        return Err(Error::invalid(format!(
            "offset {bad} moves the segment past epoch {horizon}"
        )));
    }
    let g0 = probe_gradient(model, source, syn, base, segment, inner, probe)?;
    let mut rows = Vec::with_capacity(offsets.len());
    for &d in offsets {
        let diff = if d == 0.0 {
            0.0
        } else {
            let g = probe_gradient(model, source, syn, base + d, segment, inner, probe)?;
            g.iter().zip(&g0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        rows.push((d, diff));
    }
    let slope = loglog_slope(&rows);
    Ok(SweepResult { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::build_shortcut;

    #[test]
    fn slope_of_exact_power_laws() {
        let lin: Vec<(f64, f64)> = [0.125, 0.25, 0.5, 1.0].iter().map(|&x| (x, 3.0 * x)).collect();
        assert!((loglog_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        let quad: Vec<(f64, f64)> = [0.125, 0.25, 0.5].iter().map(|&x| (x, x * x)).collect();
        assert!((loglog_slope(&quad).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(0.0, 0.0), (1.0, 1.0)]), None);
    }

    #[test]
    fn zero_offset_and_range_checks() {
        let (m, buf, syn, inner) = crate::analysis::cosine::tests::setup();
        let sc = build_shortcut(&buf.trajectories[0], 4, 0).unwrap();
        let r = proposition_sweep(&m, &sc, &syn, 1.0, &[0.0, 0.25, 0.5], 1.0, &inner, GradientProbe::Images).unwrap();
        assert_eq!(r.rows[0], (0.0, 0.0));
        assert!(r.rows[1].1 > 0.0);
        assert!(proposition_sweep(&m, &sc, &syn, 2.0, &[1.5], 1.0, &inner, GradientProbe::Images).is_err());
    }
}
