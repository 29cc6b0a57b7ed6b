use std::collections::HashSet;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        LayerSpec {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named, layered parameter container. Values live in one contiguous
/// row-major buffer; `offsets[i]..offsets[i + 1]` is layer `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", l.name)));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for l in &layers {
            acc += l.numel();
            offsets.push(acc);
        }
        Ok(ParamVector {
            layers,
            offsets,
            data: vec![0.0; acc],
        })
    }

    pub fn from_layers(layers: Vec<(LayerSpec, Vec<f64>)>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|(s, _)| s.clone()).collect();
        let mut pv = ParamVector::zeros(specs)?;
        for (i, (spec, values)) in layers.into_iter().enumerate() {
            if values.len() != spec.numel() {
                return Err(Error::invalid(format!(
                    "layer `{}` expects {} values, got {}",
                    spec.name,
                    spec.numel(),
                    values.len()
                )));
            }
            pv.layer_mut(i).copy_from_slice(&values);
        }
        pv.check_finite()?;
        Ok(pv)
    }

    /// Same schema as `self`, new flat values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::invalid(format!(
                "flat length {} does not match schema length {}",
                data.len(),
                self.data.len()
            )));
        }
        let pv = ParamVector {
            layers: self.layers.clone(),
            offsets: self.offsets.clone(),
            data,
        };
        pv.check_finite()?;
        Ok(pv)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if self.layer(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite value in layer `{}`", l.name)));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.data[self.layer_range(i)]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layer_range(i);
        &mut self.data[r]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_compatible(&self, other: &ParamVector) -> bool {
        self.layers == other.layers
    }

    pub fn ensure_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::invalid("parameter schemas differ"))
        }
    }

    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.is_compatible(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance_sq(&self, other: &ParamVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Hex SHA-256 over layer names and shapes.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update((l.name.len() as u32).to_le_bytes());
            h.update(l.name.as_bytes());
            h.update((l.shape.len() as u32).to_le_bytes());
            for &d in &l.shape {
                h.update((d as u32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv() -> ParamVector {
        ParamVector::from_layers(vec![
            (LayerSpec::new("a", vec![2, 2]), vec![1.0, 2.0, 3.0, 4.0]),
            (LayerSpec::new("b", vec![3]), vec![5.0, 6.0, 7.0]),
        ])
        .unwrap()
    }

    #[test]
    fn layers_are_addressable() {
        let p = pv();
        assert_eq!(p.layer(1), &[5.0, 6.0, 7.0]);
        assert_eq!(p.layer_index("a"), Some(0));
        assert_eq!(p.len(), 7);
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = ParamVector::zeros(vec![LayerSpec::new("a", vec![1]), LayerSpec::new("a", vec![2])]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let r = ParamVector::from_layers(vec![(LayerSpec::new("a", vec![2]), vec![1.0, f64::NAN])]);
        assert!(r.is_err());
        assert!(pv().with_data(vec![f64::INFINITY; 7]).is_err());
    }

    #[test]
    fn compatibility_is_names_and_shapes() {
        let p = pv();
        let q = ParamVector::zeros(p.layers().to_vec()).unwrap();
        assert!(p.is_compatible(&q));
        let r = ParamVector::zeros(vec![LayerSpec::new("a", vec![4]), LayerSpec::new("b", vec![3])]).unwrap();
        assert!(!p.is_compatible(&r));
        assert_ne!(p.schema_hash(), r.schema_hash());
        assert_eq!(p.schema_hash(), q.schema_hash());
    }
}
