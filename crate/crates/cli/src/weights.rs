//! Binary weight container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "D2C1"  u32 record_count
//! record* := u32 name_len, name bytes (UTF-8), u32 rank, u64 dims[rank], f64 data[prod(dims)]
//! u32 crc32 of every preceding byte
//! ```
//!
//! Checkpoints carry one extra leading record named [`EPOCH_RECORD`] holding
//! `[epoch, lr, best_loss, stale]`.

use std::path::Path;

use d2c_core::micrograd::{ParameterSet, TrainState};
use d2c_core::Tensor;

use crate::error::{data, CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"D2C1";
pub const EPOCH_RECORD: &str = "@epoch";

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(params: &ParameterSet, state: Option<&TrainState>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&((params.len() + state.is_some() as usize) as u32).to_le_bytes());
    if let Some(s) = state {
        let header = Tensor::vector(vec![s.epoch as f64, s.lr, s.best_loss, s.stale as f64]);
        put_record(&mut out, EPOCH_RECORD, &header);
    }
    for (name, p) in params.iter() {
        put_record(&mut out, name, &p.value);
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
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return data("weight file truncated");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> CliResult<(ParameterSet, Option<TrainState>)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return data("not a D2C1 weight file");
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return data("weight file CRC mismatch");
    }
    let mut r = Reader { buf: body, pos: 4 };
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    let mut state = None;
    for k in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CliError::Data("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (body.len() - r.pos) / 8)
            .ok_or_else(|| CliError::Data(format!("record {name:?} is larger than the file")))?;
        let values = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(&dims, values)?;
        if name == EPOCH_RECORD {
            if k != 0 || t.len() != 4 {
                return data("malformed epoch record");
            }
            let v = t.data();
            state = Some(TrainState {
                epoch: v[0] as usize,
                lr: v[1],
                best_loss: v[2],
                stale: v[3] as usize,
            });
        } else {
            params.insert(name, t)?;
        }
    }
    if r.pos != body.len() {
        return data("trailing bytes after the last record");
    }
    Ok((params, state))
}

pub fn save(path: &Path, params: &ParameterSet, state: Option<&TrainState>) -> CliResult<()> {
    let bytes = encode(params, state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> CliResult<(ParameterSet, Option<TrainState>)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Checks that `loaded` has exactly the names and shapes of `expected`.
pub fn check_compatible(expected: &ParameterSet, loaded: &ParameterSet) -> CliResult<()> {
    for (name, p) in expected.iter() {
        match loaded.get(name) {
            None => return data(format!("weights lack parameter {name:?}")),
            Some(t) if t.shape() != p.value.shape() => {
                return data(format!(
                    "parameter {name:?} has shape {:?}, config expects {:?}",
                    t.shape(),
                    p.value.shape()
                ))
            }
            _ => {}
        }
    }
    if let Some(extra) = loaded.names().find(|n| !expected.contains(n)) {
        return data(format!("weights have unexpected parameter {extra:?}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("a.w", Tensor::from_vec(&[2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, -7.25, 1e300]).unwrap())
            .unwrap();
        p.insert("a.b", Tensor::vector(vec![0.125, 2.0])).unwrap();
        p
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let p = sample();
        let bytes = encode(&p, None);
        let (q, st) = decode(&bytes).unwrap();
        assert!(st.is_none());
        assert!(p.bit_identical(&q));
        assert_eq!(encode(&q, None), bytes);
    }

    #[test]
    fn checkpoint_header_roundtrips() {
        let st = TrainState { epoch: 10, lr: 0.15, best_loss: f64::INFINITY, stale: 1 };
        let (q, back) = decode(&encode(&sample(), Some(&st))).unwrap();
        assert_eq!(back, Some(st));
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&sample(), None);
        bytes[20] ^= 1;
        assert!(matches!(decode(&bytes), Err(CliError::Data(m)) if m.contains("CRC")));
        let bytes = encode(&sample(), None);
        assert!(decode(&bytes[..bytes.len() - 5]).is_err());
        assert!(decode(b"NOPE00000000").is_err());
    }

    #[test]
    fn layout_starts_with_magic_and_count() {
        let bytes = encode(&sample(), None);
        assert_eq!(&bytes[..4], b"D2C1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        // first record: name length 3, "a.w", rank 2, dims 2 and 3
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(&bytes[12..15], b"a.w");
        assert_eq!(u32::from_le_bytes(bytes[15..19].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[19..27].try_into().unwrap()), 2);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = sample();
        let mut q = ParameterSet::new();
        q.insert("a.w", Tensor::zeros(&[3, 2])).unwrap();
        q.insert("a.b", Tensor::zeros(&[2])).unwrap();
        assert!(check_compatible(&p, &q).is_err());
        assert!(check_compatible(&p, &p).is_ok());
    }
}
