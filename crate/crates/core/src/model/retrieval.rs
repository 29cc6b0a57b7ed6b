use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datamodel::Matrix;
use crate::error::{Error, Result};

/// Top-K recall in percent, per K, for both retrieval directions.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    /// Text-to-image recall, `(K, percent)` in ascending K.
    pub ir: Vec<(usize, f64)>,
    /// Image-to-text recall.
    pub tr: Vec<(usize, f64)>,
}

impl RetrievalReport {
    /// Mean over every IR@K and TR@K entry.
    pub fn mean(&self) -> f64 {
        let n = self.ir.len() + self.tr.len();
        self.ir.iter().chain(&self.tr).map(|(_, v)| v).sum::<f64>() / n as f64
    }

    pub fn ir_at(&self, k: usize) -> Option<f64> {
        self.ir.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }

    pub fn tr_at(&self, k: usize) -> Option<f64> {
        self.tr.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }

    /// Metric names and values in a fixed order: `IR@K..., TR@K...`.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        self.ir
            .iter()
            .map(|(k, v)| (format!("IR@{k}"), *v))
            .chain(self.tr.iter().map(|(k, v)| (format!("TR@{k}"), *v)))
            .collect()
    }
}

struct KeyedRecall<'a>(&'a [(usize, f64)]);

impl Serialize for KeyedRecall<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            m.serialize_entry(&k.to_string(), v)?;
        }
        m.end()
    }
}

impl Serialize for RetrievalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("IR", &KeyedRecall(&self.ir))?;
        m.serialize_entry("TR", &KeyedRecall(&self.tr))?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for RetrievalReport {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        let side = |key: &str| -> std::result::Result<Vec<(usize, f64)>, D::Error> {
            let obj = v
                .get(key)
                .and_then(|o| o.as_object())
                .ok_or_else(|| D::Error::custom(format!("missing `{key}` object")))?;
            let mut out = obj
                .iter()
                .map(|(k, val)| {
                    let k: usize = k.parse().map_err(|_| D::Error::custom(format!("bad K `{k}`")))?;
                    let val = val.as_f64().ok_or_else(|| D::Error::custom("recall must be a number"))?;
                    Ok((k, val))
                })
                .collect::<std::result::Result<Vec<_>, D::Error>>()?;
            out.sort_by_key(|(k, _)| *k);
            Ok(out)
        };
        Ok(RetrievalReport {
            ir: side("IR")?,
            tr: side("TR")?,
        })
    }
}

/// Rank of the matching candidate among `scores`: the number of candidates
/// scoring strictly higher, plus ties at a lower index.
fn rank_of(scores: impl Iterator<Item = f64>, target: usize, target_score: f64) -> usize {
    scores
        .enumerate()
        .filter(|&(i, s)| s > target_score || (s == target_score && i < target))
        .count()
}

/// Recall@K from a similarity matrix whose aligned rows/columns are matches.
pub fn retrieval_from_similarity(sim: &Matrix, ks: &[usize]) -> Result<RetrievalReport> {
    let m = sim.rows();
    if m == 0 || sim.cols() != m {
        return Err(Error::invalid("similarity must be square and non-empty"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= m) {
        return Err(Error::invalid(format!("K = {k} must satisfy 0 < K < m = {m}")));
    }
    let ir_ranks: Vec<usize> = (0..m)
        .map(|j| rank_of((0..m).map(|i| sim.get(i, j)), j, sim.get(j, j)))
        .collect();
    let tr_ranks: Vec<usize> = (0..m)
        .map(|i| rank_of(sim.row(i).iter().copied(), i, sim.get(i, i)))
        .collect();
    let recall = |ranks: &[usize], k: usize| 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / m as f64;
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    Ok(RetrievalReport {
        ir: ks.iter().map(|&k| (k, recall(&ir_ranks, k))).collect(),
        tr: ks.iter().map(|&k| (k, recall(&tr_ranks, k))).collect(),
    })
}

/// Recall@K from aligned image (`u`) and text (`v`) embeddings.
pub fn retrieval_scores(u: &Matrix, v: &Matrix, ks: &[usize]) -> Result<RetrievalReport> {
    if u.rows() != v.rows() || u.cols() != v.cols() {
        return Err(Error::invalid("embedding shapes differ"));
    }
    let m = u.rows();
    let mut sim = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            sim.set(i, j, u.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum());
        }
    }
    retrieval_from_similarity(&sim, ks)
}
