//! Model checkpoint format.
//!
//! ```text
//! "DTNN" | version u16 | record count u32 | records | CRC-32 u32
//! record: name length u16 | UTF-8 name | ndim u8 | dims u32 × ndim | f64 values
//! ```
//!
//! Little-endian throughout; the CRC covers every preceding byte. The first
//! record, `arch`, holds the layer widths so the file is self-describing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::model::{Architecture, ModelParams, LEARNABLE_NAMES};
use super::{NnError, Tensor};

pub const MAGIC: [u8; 4] = *b"DTNN";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a model checkpoint (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("checkpoint version mismatch: file has v{found}, this build reads v{expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn records(m: &ModelParams) -> Vec<(String, Tensor)> {
    let a = m.arch;
    let arch = [
        a.in_channels,
        a.height,
        a.width,
        a.kernel,
        a.conv1_out,
        a.conv2_out,
        a.fc1_out,
        a.fc2_out,
        a.classes,
    ];
    let mut out = vec![(
        "arch".to_string(),
        Tensor::new(&[arch.len()], arch.iter().map(|&v| v as f64).collect()).expect("9 values"),
    )];
    for (name, t) in LEARNABLE_NAMES.iter().zip(m.learnable()) {
        out.push((name.to_string(), t.clone()));
    }
    for (tag, bn) in [("bn1", &m.bn1), ("bn2", &m.bn2)] {
        out.push((format!("{tag}.running_mean"), bn.running_mean.clone()));
        out.push((format!("{tag}.running_var"), bn.running_var.clone()));
        out.push((format!("{tag}.eps"), Tensor::full(&[1], bn.eps)));
        out.push((format!("{tag}.momentum"), Tensor::full(&[1], bn.momentum)));
    }
    out
}

pub fn encode(m: &ModelParams) -> Vec<u8> {
    let recs = records(m);
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for (name, t) in &recs {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    if bytes.len() < 10 + 4 {
        return Err(CheckpointError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 6 };
    let count = r.u32()? as usize;
    let mut recs = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("record name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        recs.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} bytes after the last record",
            body.len() - r.pos
        )));
    }
    from_records(recs)
}

fn from_records(recs: Vec<(String, Tensor)>) -> Result<ModelParams> {
    let find = |name: &str| -> Result<&Tensor> {
        recs.iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing record {name}")))
    };
    let a = find("arch")?.data();
    if a.len() != 9 || a.iter().any(|&v| v < 1.0 || v.fract() != 0.0 || v > 1e9) {
        return Err(CheckpointError::Malformed("bad arch record".into()));
    }
    let u = |i: usize| a[i] as usize;
    let arch = Architecture {
        in_channels: u(0),
        height: u(1),
        width: u(2),
        kernel: u(3),
        conv1_out: u(4),
        conv2_out: u(5),
        fc1_out: u(6),
        fc2_out: u(7),
        classes: u(8),
    };
    let mut m = ModelParams::init(arch, 0);
    for (name, slot) in LEARNABLE_NAMES.iter().zip(m.learnable_mut()) {
        let t = find(name)?;
        if t.shape() != slot.shape() {
            return Err(CheckpointError::Malformed(format!(
                "{name} has shape {:?}, architecture needs {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    for (tag, bn) in [("bn1", &mut m.bn1), ("bn2", &mut m.bn2)] {
        let c = bn.channels();
        for (field, slot) in [
            ("running_mean", &mut bn.running_mean),
            ("running_var", &mut bn.running_var),
        ] {
            let t = find(&format!("{tag}.{field}"))?;
            if t.shape() != [c] {
                return Err(CheckpointError::Malformed(format!(
                    "{tag}.{field} has shape {:?}",
                    t.shape()
                )));
            }
            *slot = t.clone();
        }
        bn.eps = find(&format!("{tag}.eps"))?.data()[0];
        bn.momentum = find(&format!("{tag}.momentum"))?.data()[0];
    }
    Ok(m)
}

pub fn save_model(m: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(m)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        let mut m = ModelParams::init(Architecture::reduced(), 42);
        m.bn1.running_mean.data_mut()[1] = 0.123456789;
        m.bn2.running_var.data_mut()[2] = 3.5;
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
        let full = ModelParams::init(Architecture::tactile(), 1);
        assert_eq!(decode(&encode(&full)).unwrap(), full);
    }

    #[test]
    fn header_layout() {
        let b = encode(&model());
        assert_eq!(&b[..4], b"DTNN");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 1 + 14 + 8);
        assert_eq!(&b[10..12], &[4, 0]);
        assert_eq!(&b[12..16], b"arch");
    }

    #[test]
    fn payload_flip_is_a_checksum_error() {
        let b = encode(&model());
        for at in [10, 40, b.len() / 2, b.len() - 5] {
            let mut c = b.clone();
            c[at] ^= 0x01;
            assert!(
                matches!(decode(&c), Err(CheckpointError::Checksum { .. })),
                "byte {at}"
            );
        }
    }

    #[test]
    fn wrong_magic_and_version() {
        let b = encode(&model());
        let mut m = b.clone();
        m[..4].copy_from_slice(b"DTDS");
        assert!(matches!(decode(&m), Err(CheckpointError::BadMagic(_))));
        let mut v = b.clone();
        v[4] = 7;
        assert!(matches!(
            decode(&v),
            Err(CheckpointError::VersionMismatch {
                found: 7,
                expected: 1
            })
        ));
        assert!(matches!(decode(&b[..3]), Err(CheckpointError::Truncated)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dtnn");
        let m = model();
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }
}
