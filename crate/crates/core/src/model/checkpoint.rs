//! `FKRM` checkpoints: magic, u16 version, u64 config hash, u32 tensor count,
//! then per tensor a u32 name length, UTF-8 name, u32 rank, u32 dims and the
//! f32 little-endian payload. Normalizer statistics travel as `norm.mean` and
//! `norm.std`.

use std::path::Path;

use super::norm::Normalizer;
use super::stencil::ModelParameters;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::field::N_VARS;

pub const MODEL_MAGIC: &[u8; 4] = b"FKRM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub params: ModelParameters,
}

pub fn checkpoint_bytes(params: &ModelParameters, config_hash: u64) -> Vec<u8> {
    let specs = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    out.extend_from_slice(&((specs.len() + 2) as u32).to_le_bytes());
    let mut put = |name: &str, shape: &[usize], data: &mut dyn Iterator<Item = f64>| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for s in &specs {
        put(s.name, &s.shape, &mut params.values[s.offset..s.offset + s.len].iter().copied());
    }
    put("norm.mean", &[N_VARS], &mut params.norm.mean.iter().copied());
    put("norm.std", &[N_VARS], &mut params.norm.std.iter().copied());
    out
}

pub fn save_checkpoint(path: &Path, params: &ModelParameters, config_hash: u64) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params, config_hash)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.buf.len() as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn err(&self, offset: usize, reason: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason,
        }
    }
}

/// Parses a checkpoint. With `expected_hash` set, a different stored config
/// hash is an error.
pub fn decode_checkpoint(
    bytes: &[u8],
    path: &Path,
    cfg: &ModelConfig,
    expected_hash: Option<u64>,
) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(r.err(0, "bad magic, expected FKRM".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != MODEL_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let config_hash = u64::from_le_bytes(r.take(8, "config hash")?.try_into().expect("8 bytes"));
    if let Some(want) = expected_hash {
        if want != config_hash {
            return Err(Error::HashMismatch {
                checkpoint: format!("{config_hash:016x}"),
                expected: format!("{want:016x}"),
            });
        }
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| r.err(name_at, "tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect::<Vec<_>>();
        tensors.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes after last tensor".into()));
    }
    let mut norm = Normalizer::default();
    let mut take_norm = |name: &str, dst: &mut [f64; N_VARS]| -> Result<()> {
        let i = tensors
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| Error::MissingData(format!("tensor {name}")))?;
        let (_, shape, data) = tensors.remove(i);
        if shape != [N_VARS] {
            return Err(Error::shape(format!("{name} [{N_VARS}]"), format!("{shape:?}")));
        }
        dst.copy_from_slice(&data);
        Ok(())
    };
    take_norm("norm.mean", &mut norm.mean)?;
    take_norm("norm.std", &mut norm.std)?;
    let params = ModelParameters::from_tensors(cfg, norm, &tensors)?;
    Ok(Checkpoint { config_hash, params })
}

pub fn load_checkpoint(path: &Path, cfg: &ModelConfig, expected_hash: Option<u64>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, cfg, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitMode;

    fn cfg() -> ModelConfig {
        ModelConfig { t_in: 2, kernel: 3, hidden: 4, init_std: 0.05 }
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let mut norm = Normalizer::default();
        norm.mean = [20.0, 35.0, 1.0, -0.5];
        norm.std = [9.0, 14.0, 1.2, 1.1];
        let p = ModelParameters::new(&cfg(), norm, 11, InitMode::Normal).unwrap();
        let bytes = checkpoint_bytes(&p, 0xdead_beef);
        let ck = decode_checkpoint(&bytes, Path::new("m"), &cfg(), Some(0xdead_beef)).unwrap();
        assert_eq!(ck.config_hash, 0xdead_beef);
        for (a, b) in ck.params.values.iter().zip(&p.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(ck.params.norm.mean, norm.mean.map(|v| v as f32 as f64));
        assert_eq!(checkpoint_bytes(&ck.params, 0xdead_beef), bytes);
    }

    #[test]
    fn hash_mismatch_and_corruption() {
        let p = ModelParameters::new(&cfg(), Normalizer::default(), 1, InitMode::Normal).unwrap();
        let bytes = checkpoint_bytes(&p, 7);
        let path = Path::new("m");
        assert!(matches!(
            decode_checkpoint(&bytes, path, &cfg(), Some(8)),
            Err(Error::HashMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bad, path, &cfg(), None),
            Err(Error::Format { offset: 0, .. })
        ));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(cut, path, &cfg(), None), Err(Error::Format { .. })));
        let other = ModelConfig { hidden: 5, ..cfg() };
        assert!(decode_checkpoint(&bytes, path, &other, None).is_err());
    }
}
