use crate::datamodel::{SimilarityParams, SyntheticDataset};
use crate::error::{Error, Result};

/// `alpha * smoothed + (1 - alpha) * current` on images, texts and the dense
/// similarity. Step sizes, phase and source rows come from `current`.
pub fn ema_update(smoothed: &SyntheticDataset, current: &SyntheticDataset, alpha: f64) -> Result<SyntheticDataset> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("EMA decay {alpha} outside [0, 1]")));
    }
    if smoothed.images.rows() != current.images.rows()
        || smoothed.images.cols() != current.images.cols()
        || smoothed.texts.cols() != current.texts.cols()
        || smoothed.sim.size() != current.sim.size()
    {
        return Err(Error::invalid("EMA operands have different shapes"));
    }
    if alpha == 0.0 {
        return Ok(current.clone());
    }
    if alpha == 1.0 {
        return Ok(smoothed.clone());
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(s, c)| alpha * s + (1.0 - alpha) * c).collect() };
    let mut out = current.clone();
    out.images.as_mut_slice().copy_from_slice(&mix(smoothed.images.as_slice(), current.images.as_slice()));
    out.texts.as_mut_slice().copy_from_slice(&mix(smoothed.texts.as_slice(), current.texts.as_slice()));
    let ss = smoothed.sim.reconstruct()?;
    let mut cs = current.sim.reconstruct()?;
    let mixed = mix(ss.as_slice(), cs.as_slice());
    cs.as_mut_slice().copy_from_slice(&mixed);
    out.sim = SimilarityParams::Full(cs);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::fixtures::fixture;

    #[test]
    fn endpoints_of_alpha() {
        let (_, a, _) = fixture(3);
        let mut b = a.clone();
        b.images.as_mut_slice()[0] += 1.0;
        b.lr_img = 0.7;
        assert!(ema_update(&a, &b, 0.0).unwrap().bitwise_eq(&b));
        assert!(ema_update(&a, &b, 1.0).unwrap().bitwise_eq(&a));
    }

    #[test]
    fn hand_value_and_step_sizes() {
        let (_, mut a, _) = fixture(2);
        let mut b = a.clone();
        a.images.as_mut_slice()[0] = 2.0;
        b.images.as_mut_slice()[0] = 1.0;
        b.lr_txt = 0.9;
        let e = ema_update(&a, &b, 0.99).unwrap();
        assert!((e.images.as_slice()[0] - 1.99).abs() < 1e-15);
        assert_eq!(e.lr_txt, 0.9);
        assert_eq!(e.lr_img, b.lr_img);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (_, a, _) = fixture(3);
        let (_, b, _) = fixture(2);
        assert!(ema_update(&a, &b, 0.5).is_err());
    }
}
