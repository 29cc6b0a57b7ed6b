use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TeacherConfig, TeacherTrajectory, TrainingMeta};
use crate::datamodel::io::{read_file, write_file, Decoder, Encoder, RecordKind};
use crate::datamodel::Checkpoint;
use crate::error::{Error, Result};
use crate::model::TwoTowerModel;

pub fn encode_trajectory(t: &TeacherTrajectory) -> Result<Vec<u8>> {
    t.validate()?;
    let mut e = Encoder::new(RecordKind::Trajectory);
    e.u32(t.expert_id);
    e.f64(t.meta.lr_img);
    e.f64(t.meta.lr_txt);
    e.f64(t.meta.momentum);
    e.f64(t.meta.weight_decay);
    e.u32(t.meta.batch_size);
    e.u64(t.meta.seed);
    e.u32(t.checkpoints.len());
    for c in &t.checkpoints {
        e.u32(c.epoch);
        e.params(&c.params);
    }
    Ok(e.finish())
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<TeacherTrajectory> {
    let mut d = Decoder::new(bytes, RecordKind::Trajectory)?;
    let expert_id = d.usize()?;
    let meta = TrainingMeta {
        lr_img: d.f64()?,
        lr_txt: d.f64()?,
        momentum: d.f64()?,
        weight_decay: d.f64()?,
        batch_size: d.usize()?,
        seed: d.u64()?,
    };
    let count = d.usize()?;
    if count < 2 {
        return Err(d.err(format!("trajectory holds {count} checkpoints, need at least 2")));
    }
    let mut checkpoints = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let at = d.position();
        let epoch = d.usize()?;
        if epoch != i {
            return Err(d.err_at(at, format!("checkpoint {i} has epoch {epoch}")));
        }
        let params = d.params()?;
        if let Some(first) = checkpoints.first().map(|c: &Checkpoint| &c.params) {
            if !params.is_compatible(first) {
                return Err(d.err(format!("checkpoint {i} has a different schema")));
            }
        }
        checkpoints.push(Checkpoint { epoch, params });
    }
    d.finish()?;
    TeacherTrajectory::new(expert_id, checkpoints, meta)
}

pub fn save_trajectory(path: impl AsRef<Path>, t: &TeacherTrajectory) -> Result<()> {
    write_file(path.as_ref(), &encode_trajectory(t)?)
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<TeacherTrajectory> {
    decode_trajectory(&read_file(path.as_ref())?)
}

/// `manifest.json` of a buffer directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferManifest {
    pub experts: Vec<usize>,
    pub n: usize,
    pub schema_hash: String,
    pub model: TwoTowerModel,
    pub teacher: TeacherConfig,
    /// Training data, relative to the buffer directory when possible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

/// A set of expert trajectories sharing one model schema.
#[derive(Clone, Debug)]
pub struct ExpertBuffer {
    pub model: TwoTowerModel,
    pub trajectories: Vec<TeacherTrajectory>,
}

impl ExpertBuffer {
    pub fn new(model: TwoTowerModel, trajectories: Vec<TeacherTrajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::invalid("expert buffer is empty"));
        }
        let schema = model.schema();
        let n = trajectories[0].epochs();
        for t in &trajectories {
            t.validate()?;
            if t.epochs() != n {
                return Err(Error::invalid(format!(
                    "expert {} has {} epochs, expected {n}",
                    t.expert_id,
                    t.epochs()
                )));
            }
            let p = t.params(0);
            if p.layers() != schema.as_slice() {
                return Err(Error::invalid(format!("expert {} does not match the model schema", t.expert_id)));
            }
        }
        Ok(ExpertBuffer { model, trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Epoch count `n` shared by every expert.
    pub fn epochs(&self) -> usize {
        self.trajectories[0].epochs()
    }

    pub fn schema_hash(&self) -> String {
        self.trajectories[0].params(0).schema_hash()
    }

    pub fn expert_path(dir: &Path, id: usize) -> PathBuf {
        dir.join(format!("expert_{id}.ptms"))
    }

    /// Reads `manifest.json` and every listed expert.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, BufferManifest)> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let mut trajectories = Vec::with_capacity(manifest.experts.len());
        for &id in &manifest.experts {
            let t = load_trajectory(Self::expert_path(dir, id))?;
            if t.expert_id != id {
                return Err(Error::invalid(format!("file for expert {id} holds expert {}", t.expert_id)));
            }
            trajectories.push(t);
        }
        let buf = ExpertBuffer::new(manifest.model, trajectories)?;
        if buf.epochs() != manifest.n {
            return Err(Error::invalid(format!(
                "manifest says n = {}, trajectories have {}",
                manifest.n,
                buf.epochs()
            )));
        }
        if buf.schema_hash() != manifest.schema_hash {
            return Err(Error::invalid("schema hash in manifest does not match the trajectories"));
        }
        Ok((buf, manifest))
    }
}

pub fn read_manifest(dir: &Path) -> Result<BufferManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `expert_{k}.ptms` for every trajectory plus `manifest.json`.
pub fn write_buffer(
    dir: impl AsRef<Path>,
    buffer: &ExpertBuffer,
    teacher: &TeacherConfig,
    data: Option<String>,
) -> Result<BufferManifest> {
    let dir = dir.as_ref();
    for t in &buffer.trajectories {
        save_trajectory(ExpertBuffer::expert_path(dir, t.expert_id), t)?;
    }
    let manifest = BufferManifest {
        experts: buffer.trajectories.iter().map(|t| t.expert_id).collect(),
        n: buffer.epochs(),
        schema_hash: buffer.schema_hash(),
        model: buffer.model,
        teacher: teacher.clone(),
        data,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}
