//! `PTMS` binary container.
//!
//! ```text
//! magic    "PTMS"            4 bytes
//! version  u32 LE            currently 1
//! kind     u8                RecordKind
//! payload  kind-specific
//! ```
//!
//! Arrays are `(rank u32, dims u32 x rank, f64 LE x prod(dims))`, text is
//! `(len u32, UTF-8 bytes)`. Every real read back must be finite.

use std::fs;
use std::path::Path;

use super::{Checkpoint, LayerSpec, Matrix, PairDataset, ParamVector, SimilarityParams, Split, SyntheticDataset};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PTMS";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Dataset = 1,
    Checkpoint = 2,
    Trajectory = 3,
    Synthetic = 4,
}

impl RecordKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(RecordKind::Dataset),
            2 => Some(RecordKind::Checkpoint),
            3 => Some(RecordKind::Trajectory),
            4 => Some(RecordKind::Synthetic),
            _ => None,
        }
    }
}

pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(kind: RecordKind) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind as u8);
        Encoder { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value exceeds u32 range");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn text(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn array(&mut self, dims: &[usize], data: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.u32(dims.len());
        for &d in dims {
            self.u32(d);
        }
        for &v in data {
            self.f64(v);
        }
    }

    pub fn matrix(&mut self, m: &Matrix) {
        self.array(&[m.rows(), m.cols()], m.as_slice());
    }

    pub fn params(&mut self, p: &ParamVector) {
        self.u32(p.num_layers());
        for (i, l) in p.layers().iter().enumerate() {
            self.text(&l.name);
            self.array(&l.shape, p.layer(i));
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8], expected: RecordKind) -> Result<Self> {
        let mut d = Decoder { bytes, pos: 0 };
        let magic = d.take(4)?;
        if magic != MAGIC {
            return Err(d.err_at(0, "bad magic, expected \"PTMS\""));
        }
        let version = d.u32()?;
        if version != VERSION {
            return Err(d.err_at(4, format!("unsupported version {version}")));
        }
        let kind = d.u8()?;
        match RecordKind::from_u8(kind) {
            Some(k) if k == expected => Ok(d),
            Some(k) => Err(d.err_at(8, format!("expected {expected:?} record, found {k:?}"))),
            None => Err(d.err_at(8, format!("unknown record kind {kind}"))),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn err_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }

    pub fn err(&self, message: impl Into<String>) -> Error {
        self.err_at(self.pos, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(self.err_at(at, "non-finite real"));
        }
        Ok(v)
    }

    pub fn text(&mut self) -> Result<String> {
        let n = self.usize()?;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err_at(at, "invalid UTF-8"))
    }

    pub fn array(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let rank = self.usize()?;
        if rank > 8 {
            return Err(self.err(format!("implausible array rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.usize()?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| self.err("array size overflow"))?;
        if count.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(self.err(format!("truncated: array of {count} reals")));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(self.f64()?);
        }
        Ok((dims, data))
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let at = self.pos;
        let (dims, data) = self.array()?;
        if dims.len() != 2 {
            return Err(self.err_at(at, format!("expected rank-2 array, got rank {}", dims.len())));
        }
        Matrix::from_vec(dims[0], dims[1], data)
    }

    pub fn params(&mut self) -> Result<ParamVector> {
        let n = self.usize()?;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = self.text()?;
            let (shape, values) = self.array()?;
            layers.push((LayerSpec::new(name, shape), values));
        }
        let at = self.pos;
        ParamVector::from_layers(layers).map_err(|e| self.err_at(at, e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_dataset(d: &PairDataset) -> Result<Vec<u8>> {
    d.validate()?;
    let mut e = Encoder::new(RecordKind::Dataset);
    e.u8(d.split.code());
    e.matrix(&d.images);
    e.matrix(&d.texts);
    match &d.classes {
        Some(c) => {
            e.u8(1);
            e.u32(c.len());
            for &k in c {
                e.u32(k as usize);
            }
        }
        None => e.u8(0),
    }
    Ok(e.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PairDataset> {
    let mut d = Decoder::new(bytes, RecordKind::Dataset)?;
    let split_code = d.u8()?;
    let split = Split::from_code(split_code).ok_or_else(|| d.err(format!("unknown split {split_code}")))?;
    let images = d.matrix()?;
    let texts = d.matrix()?;
    let classes = match d.u8()? {
        0 => None,
        1 => {
            let n = d.usize()?;
            let mut c = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                c.push(d.u32()?);
            }
            Some(c)
        }
        f => return Err(d.err(format!("bad class flag {f}"))),
    };
    let at = d.pos;
    d.finish()?;
    PairDataset::new(images, texts, split, classes).map_err(|e| Error::Format {
        offset: at as u64,
        message: e.to_string(),
    })
}

pub fn save_dataset(path: impl AsRef<Path>, d: &PairDataset) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(d)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PairDataset> {
    decode_dataset(&read_file(path.as_ref())?)
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut e = Encoder::new(RecordKind::Checkpoint);
    e.u32(c.epoch);
    e.params(&c.params);
    e.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut d = Decoder::new(bytes, RecordKind::Checkpoint)?;
    let epoch = d.usize()?;
    let params = d.params()?;
    d.finish()?;
    Ok(Checkpoint { epoch, params })
}

pub fn encode_synthetic(s: &SyntheticDataset) -> Result<Vec<u8>> {
    s.validate()?;
    let mut e = Encoder::new(RecordKind::Synthetic);
    e.u32(s.phase);
    e.f64(s.lr_img);
    e.f64(s.lr_txt);
    e.matrix(&s.images);
    e.matrix(&s.texts);
    match &s.sim {
        SimilarityParams::Full(m) => {
            e.u8(0);
            e.matrix(m);
        }
        SimilarityParams::LowRank {
            omega,
            left,
            right,
            scale,
        } => {
            e.u8(1);
            e.f64(*omega);
            e.f64(*scale);
            e.matrix(left);
            e.matrix(right);
        }
    }
    e.u32(s.source_indices.len());
    for &i in &s.source_indices {
        e.u32(i);
    }
    Ok(e.finish())
}

pub fn decode_synthetic(bytes: &[u8]) -> Result<SyntheticDataset> {
    let mut d = Decoder::new(bytes, RecordKind::Synthetic)?;
    let phase = d.usize()?;
    let lr_img = d.f64()?;
    let lr_txt = d.f64()?;
    let images = d.matrix()?;
    let texts = d.matrix()?;
    let sim = match d.u8()? {
        0 => SimilarityParams::Full(d.matrix()?),
        1 => {
            let omega = d.f64()?;
            let scale = d.f64()?;
            let left = d.matrix()?;
            let right = d.matrix()?;
            SimilarityParams::LowRank {
                omega,
                left,
                right,
                scale,
            }
        }
        m => return Err(d.err(format!("unknown similarity mode {m}"))),
    };
    let n = d.usize()?;
    let mut source_indices = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        source_indices.push(d.usize()?);
    }
    let at = d.pos;
    d.finish()?;
    let s = SyntheticDataset {
        images,
        texts,
        sim,
        lr_img,
        lr_txt,
        phase,
        source_indices,
    };
    s.validate().map_err(|e| Error::Format {
        offset: at as u64,
        message: e.to_string(),
    })?;
    Ok(s)
}

pub fn save_synthetic(path: impl AsRef<Path>, s: &SyntheticDataset) -> Result<()> {
    write_file(path.as_ref(), &encode_synthetic(s)?)
}

pub fn load_synthetic(path: impl AsRef<Path>) -> Result<SyntheticDataset> {
    decode_synthetic(&read_file(path.as_ref())?)
}

pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(c))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{generate_pair_dataset, GeneratorConfig};

    fn small() -> PairDataset {
        generate_pair_dataset(&GeneratorConfig {
            m: 12,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let d = small();
        let back = decode_dataset(&encode_dataset(&d).unwrap()).unwrap();
        assert!(back.bitwise_eq(&d));
    }

    #[test]
    fn header_layout_is_fixed() {
        let b = encode_dataset(&small()).unwrap();
        assert_eq!(&b[..4], b"PTMS");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], RecordKind::Dataset as u8);
        // split, then rank-2 image array header
        assert_eq!(b[9], 0);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[14..18].try_into().unwrap()), 12);
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let mut b = encode_dataset(&small()).unwrap();
        b[0] = b'X';
        match decode_dataset(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let b = encode_dataset(&small()).unwrap();
        assert!(matches!(decode_dataset(&b[..b.len() - 3]), Err(Error::Format { .. })));
        let mut longer = b.clone();
        longer.push(0);
        assert!(matches!(decode_dataset(&longer), Err(Error::Format { .. })));
    }

    #[test]
    fn nan_payload_rejected_with_offset() {
        let mut b = encode_dataset(&small()).unwrap();
        // first image value starts after header(9) + split(1) + rank(4) + dims(8)
        let at = 22;
        b[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        match decode_dataset(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, at as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_rejected_at_save() {
        let d = PairDataset {
            images: Matrix::zeros(0, 3),
            texts: Matrix::zeros(0, 3),
            split: Split::Train,
            classes: None,
        };
        assert!(encode_dataset(&d).is_err());
    }

    #[test]
    fn wrong_kind_rejected() {
        let b = encode_dataset(&small()).unwrap();
        assert!(matches!(decode_synthetic(&b), Err(Error::Format { offset: 8, .. })));
    }
}
